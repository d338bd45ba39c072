use crate::error::{Error, Result};
use crate::numkit::RngStream;

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f32>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f32>,
        labels: Vec<usize>,
        n_features: usize,
        n_classes: usize,
    ) -> Result<Self> {
        if n_features == 0 || n_classes == 0 {
            return Err(Error::invalid(
                "dataset needs at least one feature and one class",
            ));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::invalid(format!(
                "{} feature values do not form {} rows of {n_features}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::invalid(format!(
                "label {l} outside [0, {n_classes})"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(Dataset {
            features,
            labels,
            n_features,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    /// First `rows` rows (or all of them, if fewer exist).
    pub fn head(&self, rows: usize) -> Dataset {
        let rows = rows.min(self.len());
        Dataset {
            features: self.features[..rows * self.n_features].to_vec(),
            labels: self.labels[..rows].to_vec(),
            n_features: self.n_features,
            n_classes: self.n_classes,
        }
    }

    /// Splits off the last `test_rows` rows as a held-out set.
    pub fn split_tail(&self, test_rows: usize) -> Result<(Dataset, Dataset)> {
        if test_rows == 0 || test_rows >= self.len() {
            return Err(Error::invalid(format!(
                "cannot hold out {test_rows} of {} rows",
                self.len()
            )));
        }
        let cut = self.len() - test_rows;
        let f = cut * self.n_features;
        let part = |features: &[f32], labels: &[usize]| Dataset {
            features: features.to_vec(),
            labels: labels.to_vec(),
            n_features: self.n_features,
            n_classes: self.n_classes,
        };
        Ok((
            part(&self.features[..f], &self.labels[..cut]),
            part(&self.features[f..], &self.labels[cut..]),
        ))
    }
}

/// Gaussian blobs: class `c` is centered at `separation · u_c` for a random
/// unit direction `u_c`, with unit-variance isotropic noise. Labels cycle
/// through the classes so every class is equally represented.
pub fn synthetic_blobs(
    classes: usize,
    n: usize,
    p: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || n == 0 || p == 0 {
        return Err(Error::invalid(
            "blobs need ≥ 2 classes, ≥ 1 row and ≥ 1 feature",
        ));
    }
    let mut rng = RngStream::new(seed, crate::numkit::STREAM_INIT ^ 0x424c_4f42);
    let mut centers = vec![0.0f64; classes * p];
    for c in 0..classes {
        let dir: Vec<f64> = (0..p).map(|_| rng.next_standard_normal()).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for (j, v) in dir.iter().enumerate() {
            centers[c * p + j] = separation * v / norm;
        }
    }
    let mut features = Vec::with_capacity(n * p);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c);
        for j in 0..p {
            features.push((centers[c * p + j] + rng.next_standard_normal()) as f32);
        }
    }
    Dataset::new(features, labels, p, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_reproducible() {
        let a = synthetic_blobs(3, 30, 4, 2.0, 11).unwrap();
        let b = synthetic_blobs(3, 30, 4, 2.0, 11).unwrap();
        let bits = |d: &Dataset| d.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.labels(), b.labels());
        assert_ne!(bits(&a), bits(&synthetic_blobs(3, 30, 4, 2.0, 12).unwrap()));
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        assert!(Dataset::new(vec![0.0; 5], vec![0, 1], 3, 2).is_err());
        assert!(Dataset::new(vec![0.0; 6], vec![0, 2], 3, 2).is_err());
        assert!(Dataset::new(vec![f32::NAN; 3], vec![0], 3, 2).is_err());
    }

    #[test]
    fn split_tail_partitions_rows() {
        let d = synthetic_blobs(2, 10, 3, 1.0, 0).unwrap();
        let (train, test) = d.split_tail(4).unwrap();
        assert_eq!((train.len(), test.len()), (6, 4));
        assert_eq!(test.row(0), d.row(6));
        assert!(d.split_tail(10).is_err());
    }
}
