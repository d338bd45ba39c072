use std::sync::Arc;

use crate::numkit::{DenseVector, RngStream};

use super::{argmax, log_sum_exp, Classifier, Dataset, Objective, ObjectiveKind};

/// Multinomial logistic regression with softmax cross-entropy.
///
/// Parameter layout: weights `W` (classes × features, row-major) followed by
/// the class biases. Starts from the zero vector.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    data: Arc<Dataset>,
}

impl LogisticRegression {
    pub fn new(data: Arc<Dataset>) -> Self {
        LogisticRegression { data }
    }

    fn logits(&self, x: &[f64], row: &[f32], out: &mut [f64]) {
        let p = self.data.n_features();
        let c = self.data.n_classes();
        let bias = &x[c * p..];
        for k in 0..c {
            let w = &x[k * p..(k + 1) * p];
            out[k] = bias[k] + w.iter().zip(row).map(|(a, &b)| a * b as f64).sum::<f64>();
        }
    }
}

impl Objective for LogisticRegression {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::LogisticRegression
    }

    fn dim(&self) -> usize {
        (self.data.n_features() + 1) * self.data.n_classes()
    }

    fn n_samples(&self) -> usize {
        self.data.len()
    }

    fn loss_and_grad(&self, x: &[f64], indices: &[usize], mut grad: Option<&mut [f64]>) -> f64 {
        let p = self.data.n_features();
        let c = self.data.n_classes();
        let inv_b = 1.0 / indices.len() as f64;
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mut z = vec![0.0; c];
        let mut loss = 0.0;
        for &i in indices {
            let row = self.data.row(i);
            let label = self.data.label(i);
            self.logits(x, row, &mut z);
            let lse = log_sum_exp(&z);
            loss += lse - z[label];
            if let Some(g) = grad.as_deref_mut() {
                for k in 0..c {
                    let dz = ((z[k] - lse).exp() - if k == label { 1.0 } else { 0.0 }) * inv_b;
                    let gw = &mut g[k * p..(k + 1) * p];
                    for (gj, &xj) in gw.iter_mut().zip(row) {
                        *gj += dz * xj as f64;
                    }
                    g[c * p + k] += dz;
                }
            }
        }
        loss * inv_b
    }

    fn initial_point(&self, _rng: &mut RngStream) -> DenseVector {
        DenseVector::zeros(self.dim())
    }

    fn classifier(&self) -> Option<&dyn Classifier> {
        Some(self)
    }
}

impl Classifier for LogisticRegression {
    fn predict(&self, x: &[f64], features: &[f32]) -> usize {
        let mut z = vec![0.0; self.data.n_classes()];
        self.logits(x, features, &mut z);
        argmax(&z)
    }
}
