use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numkit::DenseVector;
use crate::optimizer::Transmission;

/// Outcome of folding one sample into a [`MuEstimate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuUpdate {
    /// `c_t` for this sample together with the updated ratio estimate.
    Recorded { cos: f64, mu_hat: f64 },
    /// The full gradient (or the update) was zero, so the sample carries no
    /// direction information.
    Skipped,
}

/// Ratio-of-means estimate of the expected cosine between the transmitted
/// update and the full gradient:
/// `μ̂ = Σ⟨u, ∇f⟩ / Σ ‖u‖·‖∇f‖` over the last `window` samples (all samples
/// when `window` is `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct MuEstimate {
    window: Option<usize>,
    terms: VecDeque<(f64, f64)>,
    num: f64,
    den: f64,
    samples: usize,
    skipped: usize,
}

impl MuEstimate {
    pub fn new(window: Option<usize>) -> Result<Self> {
        if window == Some(0) {
            return Err(Error::config("mu_window", "must be at least 1"));
        }
        Ok(MuEstimate {
            window,
            terms: VecDeque::new(),
            num: 0.0,
            den: 0.0,
            samples: 0,
            skipped: 0,
        })
    }

    pub fn update(&mut self, sent: &Transmission, full_grad: &DenseVector) -> Result<MuUpdate> {
        let num = sent.dot_dense(full_grad)?;
        let gg = full_grad.norm_sq();
        let uu = sent.norm_sq();
        if gg == 0.0 || uu == 0.0 {
            self.skipped += 1;
            return Ok(MuUpdate::Skipped);
        }
        // sqrt of the product (not product of sqrts) so that u = ∇f gives
        // num == den exactly.
        let den = (uu * gg).sqrt();
        self.samples += 1;
        match self.window {
            None => {
                self.num += num;
                self.den += den;
            }
            Some(w) => {
                self.terms.push_back((num, den));
                if self.terms.len() > w {
                    self.terms.pop_front();
                }
                self.num = self.terms.iter().map(|t| t.0).sum();
                self.den = self.terms.iter().map(|t| t.1).sum();
            }
        }
        Ok(MuUpdate::Recorded {
            cos: (num / den).clamp(-1.0, 1.0),
            mu_hat: self.value().expect("den > 0 after a recorded sample"),
        })
    }

    pub fn value(&self) -> Option<f64> {
        (self.den > 0.0).then(|| self.num / self.den)
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }
}
