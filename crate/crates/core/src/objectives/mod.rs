//! Finite-sum training objectives `f(x) = (1/n) Σ f(x, i)` with exact
//! hand-written gradients, plus the data sources that back them.

mod dataset;
mod logistic;
mod mlp;
mod mnist;
mod quadratic;

use serde::{Deserialize, Serialize};

pub use dataset::{synthetic_blobs, Dataset};
pub use logistic::LogisticRegression;
pub use mlp::Mlp;
pub use mnist::{load_mnist_idx, parse_idx_images, parse_idx_labels};
pub use quadratic::{synthetic_quadratic, Quadratic};

use crate::error::{Error, Result};
use crate::numkit::{DenseVector, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Quadratic,
    PerturbedQuadratic,
    LogisticRegression,
    Mlp,
}

/// A differentiable finite-sum loss.
///
/// Implementations evaluate the mean loss over a list of sample indices and
/// optionally accumulate the mean gradient into `grad` (which is
/// overwritten). Indices may repeat.
pub trait Objective: Send + Sync {
    fn kind(&self) -> ObjectiveKind;

    fn dim(&self) -> usize;

    fn n_samples(&self) -> usize;

    fn loss_and_grad(&self, x: &[f64], indices: &[usize], grad: Option<&mut [f64]>) -> f64;

    /// Smoothness constant when it is known in closed form.
    fn lipschitz_exact(&self) -> Option<f64> {
        None
    }

    /// `inf_x f(x)` when it is computable.
    fn infimum(&self) -> Option<f64> {
        None
    }

    /// Starting iterate drawn from the initialization stream.
    fn initial_point(&self, rng: &mut RngStream) -> DenseVector;

    fn classifier(&self) -> Option<&dyn Classifier> {
        None
    }
}

/// Objectives whose parameters define a `features -> class` predictor.
pub trait Classifier {
    fn predict(&self, x: &[f64], features: &[f32]) -> usize;
}

/// Index set `ξ` of one stochastic gradient evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Minibatch {
    indices: Vec<usize>,
}

impl Minibatch {
    /// Draws `size` indices uniformly with replacement from `[0, n)`.
    /// `size == n` yields the full, ordered batch `0..n`.
    pub fn sample(n: usize, size: usize, rng: &mut RngStream) -> Result<Self> {
        if size == 0 || n == 0 || size > n {
            return Err(Error::invalid(format!(
                "batch size {size} must be in [1, n={n}]"
            )));
        }
        if size == n {
            return Ok(Self::full(n));
        }
        Ok(Minibatch {
            indices: (0..size).map(|_| rng.next_index(n)).collect(),
        })
    }

    pub fn full(n: usize) -> Self {
        Minibatch {
            indices: (0..n).collect(),
        }
    }

    pub fn from_indices(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("minibatch".into()));
        }
        Ok(Minibatch { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= n) {
            Some(&i) => Err(Error::invalid(format!(
                "sample index {i} out of range [0, {n})"
            ))),
            None => Ok(()),
        }
    }
}

/// Which samples a loss evaluation averages over.
#[derive(Debug, Clone, Copy)]
pub enum Batch<'a> {
    Full,
    Mini(&'a Minibatch),
}

/// `(1/|ξ|) Σ_{i∈ξ} ∇f(x, i)` along with the mini-batch loss.
pub fn minibatch_loss_and_gradient(
    obj: &dyn Objective,
    x: &DenseVector,
    batch: &Minibatch,
) -> Result<(f64, DenseVector)> {
    x.ensure_len(obj.dim())?;
    batch.validate(obj.n_samples())?;
    let mut g = DenseVector::zeros(obj.dim());
    let loss = obj.loss_and_grad(x.as_slice(), batch.indices(), Some(g.as_mut_slice()));
    Ok((loss, g))
}

pub fn minibatch_gradient(
    obj: &dyn Objective,
    x: &DenseVector,
    batch: &Minibatch,
) -> Result<DenseVector> {
    minibatch_loss_and_gradient(obj, x, batch).map(|(_, g)| g)
}

/// Exact gradient of the full finite sum. Shares the mini-batch code path,
/// so it is bit-identical to `minibatch_gradient` over the full batch.
pub fn full_gradient(obj: &dyn Objective, x: &DenseVector) -> Result<DenseVector> {
    minibatch_gradient(obj, x, &Minibatch::full(obj.n_samples()))
}

pub fn loss(obj: &dyn Objective, x: &DenseVector, batch: Batch<'_>) -> Result<f64> {
    x.ensure_len(obj.dim())?;
    let full;
    let mb = match batch {
        Batch::Full => {
            full = Minibatch::full(obj.n_samples());
            &full
        }
        Batch::Mini(mb) => {
            mb.validate(obj.n_samples())?;
            mb
        }
    };
    Ok(obj.loss_and_grad(x.as_slice(), mb.indices(), None))
}

/// Largest observed `‖∇f(x) − ∇f(y)‖ / ‖x − y‖` over `probes` random pairs.
/// This is a lower bound on the true smoothness constant.
pub fn probe_lipschitz(obj: &dyn Objective, probes: usize, rng: &mut RngStream) -> Result<f64> {
    if probes < 2 {
        return Err(Error::invalid(
            "lipschitz estimation needs at least 2 probes",
        ));
    }
    let d = obj.dim();
    let base = obj.initial_point(rng);
    let mut best: f64 = 0.0;
    for _ in 0..probes {
        let x = DenseVector::from_vec(
            base.iter()
                .map(|v| v + rng.next_standard_normal())
                .collect(),
        );
        let y = DenseVector::from_vec(
            x.iter()
                .map(|v| v + 0.1 * rng.next_standard_normal())
                .collect(),
        );
        debug_assert_eq!(x.len(), d);
        let gx = full_gradient(obj, &x)?;
        let gy = full_gradient(obj, &y)?;
        let num = gx.sub(&gy)?.norm();
        let den = x.sub(&y)?.norm();
        if den > 0.0 {
            best = best.max(num / den);
        }
    }
    Ok(best)
}

/// Exact constant when available, otherwise the probe estimate.
pub fn estimate_lipschitz(obj: &dyn Objective, probes: usize, rng: &mut RngStream) -> Result<f64> {
    if probes < 2 {
        return Err(Error::invalid(
            "lipschitz estimation needs at least 2 probes",
        ));
    }
    match obj.lipschitz_exact() {
        Some(l) => Ok(l),
        None => probe_lipschitz(obj, probes, rng),
    }
}

/// Monte-Carlo estimate of `E‖g(x, ξ) − ∇f(x)‖²` for batches of `batch_size`.
pub fn estimate_gradient_variance(
    obj: &dyn Objective,
    x: &DenseVector,
    batch_size: usize,
    draws: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if draws == 0 {
        return Err(Error::invalid(
            "variance estimation needs at least one draw",
        ));
    }
    let full = full_gradient(obj, x)?;
    let mut acc = 0.0;
    for _ in 0..draws {
        let mb = Minibatch::sample(obj.n_samples(), batch_size, rng)?;
        let g = minibatch_gradient(obj, x, &mb)?;
        acc += g.sub(&full)?.norm_sq();
    }
    Ok(acc / draws as f64)
}

/// Fraction of rows in `test` whose predicted class matches the label.
pub fn accuracy(obj: &dyn Objective, x: &DenseVector, test: &Dataset) -> Result<f64> {
    let clf = obj
        .classifier()
        .ok_or_else(|| Error::invalid("objective is not a classifier"))?;
    x.ensure_len(obj.dim())?;
    if test.is_empty() {
        return Err(Error::Empty("test set".into()));
    }
    let correct = (0..test.len())
        .filter(|&i| clf.predict(x.as_slice(), test.row(i)) == test.label(i))
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Uniform `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot_uniform(rng: &mut RngStream, fan_in: usize, fan_out: usize, out: &mut [f64]) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in out {
        *w = a * (2.0 * rng.next_f64() - 1.0);
    }
}

/// Numerically stable `log Σ exp(z)`.
pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}
