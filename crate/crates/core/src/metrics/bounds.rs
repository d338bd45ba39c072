use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::LrSchedule;

use super::RunRecord;

/// Constants entering the non-convex convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub lipschitz: f64,
    /// Gradient-noise variance `σ²`.
    pub grad_variance: f64,
    pub mu: f64,
    pub rho: f64,
    /// `f(x_0) − inf f`.
    pub lambda: f64,
    /// Delayed-gradient constant.
    pub c: f64,
    pub horizon: u64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lipschitz", self.lipschitz),
            ("grad_variance", self.grad_variance),
            ("lambda", self.lambda),
            ("c", self.c),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "{name} = {v} must be finite and >= 0"
                )));
            }
        }
        if !(self.lipschitz > 0.0) {
            return Err(Error::invalid("lipschitz must be positive"));
        }
        for (name, v) in [("rho", self.rho), ("mu", self.mu)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(format!("{name} = {v} outside (0, 1]")));
            }
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        Ok(())
    }
}

/// `(Σ η_t²Lσ²/2 + Λ + C) / Σ (η_t ρμ − η_t²L/2)` over `t < T`.
pub fn theorem_bound(inputs: &BoundInputs, schedule: &LrSchedule) -> Result<f64> {
    inputs.validate()?;
    schedule.validate()?;
    let l = inputs.lipschitz;
    let rm = inputs.rho * inputs.mu;
    let mut noise = 0.0;
    let mut progress = 0.0;
    for t in 0..inputs.horizon {
        let eta = schedule.lr_at(t)?;
        noise += eta * eta * l / 2.0 * inputs.grad_variance;
        progress += eta * rm - eta * eta * l / 2.0;
    }
    if !(progress > 0.0) {
        return Err(Error::BoundInapplicable(format!(
            "denominator Σ(η ρμ − η²L/2) = {progress} is not positive"
        )));
    }
    Ok((noise + inputs.lambda + inputs.c) / progress)
}

/// Closed form under the constant step `η = ρμ / (L√T)`:
/// `(σ²/2 + (Λ+C)L/(ρμ)²) / (√T − ½)`.
pub fn corollary_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let rm = inputs.rho * inputs.mu;
    let sqrt_t = (inputs.horizon as f64).sqrt();
    Ok(
        (inputs.grad_variance / 2.0 + (inputs.lambda + inputs.c) * inputs.lipschitz / (rm * rm))
            / (sqrt_t - 0.5),
    )
}

/// Signed difference `Σ η_t²‖∇f(x_{τ_t})‖² − Σ η_t²‖∇f(x_t)‖²` over the
/// sampled updates, scaled up to the whole run.
pub fn delayed_gradient_gap(records: &[RunRecord], schedule: &LrSchedule) -> Result<f64> {
    let mut sum = 0.0;
    let mut sampled = 0usize;
    for r in records {
        if let (Some(cur), Some(stale)) = (r.full_grad_norm_sq, r.stale_full_grad_norm_sq) {
            let eta = schedule.lr_at(r.t)?;
            sum += eta * eta * (stale - cur);
            sampled += 1;
        }
    }
    if sampled == 0 {
        return Err(Error::Empty(
            "no records carry both current and stale full-gradient norms".into(),
        ));
    }
    Ok(sum * records.len() as f64 / sampled as f64)
}

/// `max(0, delayed_gradient_gap)`.
pub fn estimate_c(records: &[RunRecord], schedule: &LrSchedule) -> Result<f64> {
    Ok(delayed_gradient_gap(records, schedule)?.max(0.0))
}

/// Averages the sampled `‖∇f(x_t)‖²` across runs at each sampled `t`, then
/// takes the minimum. Every run must be sampled at the same updates.
pub fn min_grad_norm_sq(runs: &[&[RunRecord]]) -> Result<f64> {
    let series: Vec<BTreeMap<u64, f64>> = runs
        .iter()
        .map(|r| {
            r.iter()
                .filter_map(|rec| rec.full_grad_norm_sq.map(|g| (rec.t, g)))
                .collect()
        })
        .collect();
    let first = series
        .first()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Empty("no sampled full-gradient norms".into()))?;
    if series.iter().any(|s| s.keys().ne(first.keys())) {
        return Err(Error::invalid("runs are sampled at different updates"));
    }
    let n = series.len() as f64;
    Ok(first
        .keys()
        .map(|t| series.iter().map(|s| s[t]).sum::<f64>() / n)
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(t: u64) -> BoundInputs {
        BoundInputs {
            lipschitz: 1.0,
            grad_variance: 2.0,
            mu: 1.0,
            rho: 1.0,
            lambda: 0.5,
            c: 0.5,
            horizon: t,
        }
    }

    #[test]
    fn worked_example_four_thirds() {
        let s = LrSchedule::Constant { eta: 0.5 };
        assert!((theorem_bound(&inputs(4), &s).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!((corollary_bound(&inputs(4)).unwrap() - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_zero_gap_gives_zero() {
        let mut i = inputs(10);
        i.grad_variance = 0.0;
        i.lambda = 0.0;
        i.c = 0.0;
        assert_eq!(
            theorem_bound(&i, &LrSchedule::Constant { eta: 0.1 }).unwrap(),
            0.0
        );
        assert_eq!(corollary_bound(&i).unwrap(), 0.0);
    }

    #[test]
    fn theorem_matches_corollary_under_constant_schedule() {
        for t in [4u64, 100, 10_000] {
            let mut i = inputs(t);
            i.rho = 0.3;
            i.mu = 0.7;
            i.lipschitz = 2.5;
            let s = LrSchedule::ConstantHorizon {
                rho: i.rho,
                mu: i.mu,
                lipschitz: i.lipschitz,
                horizon: t,
            };
            let a = theorem_bound(&i, &s).unwrap();
            let b = corollary_bound(&i).unwrap();
            assert!(((a - b) / b).abs() < 1e-9, "T={t}: {a} vs {b}");
        }
    }

    #[test]
    fn large_step_is_inapplicable() {
        let r = theorem_bound(&inputs(4), &LrSchedule::Constant { eta: 2.0 });
        assert!(matches!(r, Err(Error::BoundInapplicable(_))));
    }

    #[test]
    fn corollary_decreases_in_horizon_and_rho_mu() {
        let a = corollary_bound(&inputs(100)).unwrap();
        assert!(corollary_bound(&inputs(1000)).unwrap() < a);
        let mut lower = inputs(100);
        lower.rho = 0.5;
        assert!(corollary_bound(&lower).unwrap() > a);
    }

    fn rec(t: u64, cur: Option<f64>, stale: Option<f64>) -> RunRecord {
        RunRecord {
            t,
            staleness: 0,
            eta: 1.0,
            train_loss: 0.0,
            mb_grad_norm_sq: 0.0,
            full_grad_norm_sq: cur,
            stale_full_grad_norm_sq: stale,
            cos_t: None,
            mu_hat: None,
            time: 0.0,
            worker: 0,
        }
    }

    #[test]
    fn c_estimate_scaling_and_clamp() {
        let s = LrSchedule::Constant { eta: 0.5 };
        let recs = vec![
            rec(0, Some(1.0), Some(3.0)),
            rec(1, None, None),
            rec(2, Some(1.0), Some(1.0)),
            rec(3, None, None),
        ];
        // 0.25 · 2 over 2 sampled of 4 records
        assert_eq!(estimate_c(&recs, &s).unwrap(), 1.0);
        let neg = vec![rec(0, Some(3.0), Some(1.0))];
        assert_eq!(estimate_c(&neg, &s).unwrap(), 0.0);
        assert!(estimate_c(&[rec(0, None, None)], &s).is_err());
    }

    #[test]
    fn min_norm_averages_before_min() {
        let a = vec![rec(0, Some(4.0), None), rec(10, Some(0.0), None)];
        let b = vec![rec(0, Some(0.0), None), rec(10, Some(3.0), None)];
        assert_eq!(min_grad_norm_sq(&[&a, &b]).unwrap(), 1.5);
        let c = vec![rec(0, Some(1.0), None)];
        assert!(min_grad_norm_sq(&[&a, &c]).is_err());
    }
}
