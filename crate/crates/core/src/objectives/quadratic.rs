use crate::error::{Error, Result};
use crate::numkit::{DenseVector, RngStream};

use super::{Objective, ObjectiveKind};

/// Separable quadratic finite sum with an optional sinusoidal perturbation:
///
/// `f(x, i) = ½ eᵀAe + (c̄ − c_i)ᵀA e + ε Σ_j sin(x_j)`, with `e = x − c̄`,
/// `A = diag(spectrum)` and `c̄` the mean of the sample centers `c_i`.
///
/// Averaged over `i` the cross term vanishes, so `f(x) = ½(x − c̄)ᵀA(x − c̄)
/// + ε Σ sin(x_j)` and `∇f(x, i) = A(x − c_i) + ε cos(x)`. With `ε = 0` the
/// minimizer is `c̄` and `inf f = 0`. With `ε > 0` the problem is non-convex
/// wherever `a_j < ε`, and the smoothness constant is exactly `max a_j + ε`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    spectrum: Vec<f64>,
    centers: Vec<f64>,
    mean_center: Vec<f64>,
    perturbation: f64,
    init_scale: f64,
    n: usize,
}

impl Quadratic {
    pub fn new(
        spectrum: Vec<f64>,
        centers: Vec<f64>,
        perturbation: f64,
        init_scale: f64,
    ) -> Result<Self> {
        let d = spectrum.len();
        if d == 0 {
            return Err(Error::invalid("quadratic needs a non-empty spectrum"));
        }
        if spectrum.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::invalid(
                "quadratic spectrum must be positive and finite",
            ));
        }
        if centers.is_empty() || !centers.len().is_multiple_of(d) {
            return Err(Error::invalid(format!(
                "centers length {} is not a positive multiple of dim {d}",
                centers.len()
            )));
        }
        if !(perturbation >= 0.0) {
            return Err(Error::invalid("perturbation must be non-negative"));
        }
        let n = centers.len() / d;
        let mut mean_center = vec![0.0; d];
        for row in centers.chunks_exact(d) {
            for (m, c) in mean_center.iter_mut().zip(row) {
                *m += c;
            }
        }
        for m in &mut mean_center {
            *m /= n as f64;
        }
        Ok(Quadratic {
            spectrum,
            centers,
            mean_center,
            perturbation,
            init_scale,
            n,
        })
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn perturbation(&self) -> f64 {
        self.perturbation
    }

    /// Stationary point of the unperturbed problem.
    pub fn minimizer(&self) -> Option<DenseVector> {
        (self.perturbation == 0.0).then(|| DenseVector::from_vec(self.mean_center.clone()))
    }

    fn center(&self, i: usize) -> &[f64] {
        let d = self.spectrum.len();
        &self.centers[i * d..(i + 1) * d]
    }
}

impl Objective for Quadratic {
    fn kind(&self) -> ObjectiveKind {
        if self.perturbation > 0.0 {
            ObjectiveKind::PerturbedQuadratic
        } else {
            ObjectiveKind::Quadratic
        }
    }

    fn dim(&self) -> usize {
        self.spectrum.len()
    }

    fn n_samples(&self) -> usize {
        self.n
    }

    fn loss_and_grad(&self, x: &[f64], indices: &[usize], grad: Option<&mut [f64]>) -> f64 {
        let d = self.dim();
        let inv_b = 1.0 / indices.len() as f64;
        // The batch enters only through the mean of its centers.
        let mut batch_center = vec![0.0; d];
        for &i in indices {
            for (m, c) in batch_center.iter_mut().zip(self.center(i)) {
                *m += c;
            }
        }
        for m in &mut batch_center {
            *m *= inv_b;
        }
        let eps = self.perturbation;
        let mut loss = 0.0;
        for j in 0..d {
            let a = self.spectrum[j];
            let e = x[j] - self.mean_center[j];
            loss += 0.5 * a * e * e + (self.mean_center[j] - batch_center[j]) * a * e;
            if eps > 0.0 {
                loss += eps * x[j].sin();
            }
        }
        if let Some(g) = grad {
            for j in 0..d {
                g[j] = self.spectrum[j] * (x[j] - batch_center[j]);
                if eps > 0.0 {
                    g[j] += eps * x[j].cos();
                }
            }
        }
        loss
    }

    fn lipschitz_exact(&self) -> Option<f64> {
        let max = self.spectrum.iter().copied().fold(0.0, f64::max);
        Some(max + self.perturbation)
    }

    fn infimum(&self) -> Option<f64> {
        if self.perturbation == 0.0 {
            return Some(0.0);
        }
        Some(
            self.spectrum
                .iter()
                .zip(&self.mean_center)
                .map(|(&a, &c)| min_1d(a, c, self.perturbation))
                .sum(),
        )
    }

    fn initial_point(&self, rng: &mut RngStream) -> DenseVector {
        DenseVector::from_vec(
            (0..self.dim())
                .map(|_| self.init_scale * rng.next_standard_normal())
                .collect(),
        )
    }
}

/// Global minimum of `h(x) = ½a(x − c)² + ε sin x`.
///
/// Any minimizer satisfies `|x − c| ≤ sqrt(4ε/a)` because outside that band
/// `h(x) > h(c)`. A fine grid over the band brackets every local minimum;
/// Newton steps then polish each candidate.
fn min_1d(a: f64, c: f64, eps: f64) -> f64 {
    let h = |x: f64| 0.5 * a * (x - c) * (x - c) + eps * x.sin();
    let dh = |x: f64| a * (x - c) + eps * x.cos();
    let d2h = |x: f64| a - eps * x.sin();
    let radius = (4.0 * eps / a).sqrt() + 1e-3;
    let steps = 20_000;
    let lo = c - radius;
    let width = 2.0 * radius / steps as f64;
    let mut best = h(c);
    for s in 0..=steps {
        let x0 = lo + s as f64 * width;
        let left = dh(x0 - width);
        let right = dh(x0 + width);
        if left <= 0.0 && right >= 0.0 {
            let mut x = x0;
            for _ in 0..50 {
                let curv = d2h(x);
                if curv <= 0.0 {
                    break;
                }
                let step = dh(x) / curv;
                x -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            best = best.min(h(x)).min(h(x0));
        }
    }
    best
}

/// Quadratic with `A = diag(spectrum)` and `n` centers drawn i.i.d. from
/// `Normal(0, spread²)`, reproducible from `seed`.
pub fn synthetic_quadratic(
    spectrum: Vec<f64>,
    n: usize,
    spread: f64,
    perturbation: f64,
    init_scale: f64,
    seed: u64,
) -> Result<Quadratic> {
    if n == 0 {
        return Err(Error::invalid("quadratic needs at least one sample"));
    }
    let d = spectrum.len();
    let mut rng = RngStream::new(seed, crate::numkit::STREAM_INIT ^ 0x5155_4144);
    let centers = (0..n * d)
        .map(|_| spread * rng.next_standard_normal())
        .collect();
    Quadratic::new(spectrum, centers, perturbation, init_scale)
}
