//! Checking the convergence bound against measured runs on a smooth
//! non-convex quadratic.

use serde::Serialize;

use crate::delay::{DelayConfig, StochasticDelays};
use crate::error::{Error, Result};
use crate::metrics::stats::{mean, percentile};
use crate::metrics::{
    corollary_bound, delayed_gradient_gap, min_grad_norm_sq, theorem_bound, BoundInputs,
};
use crate::numkit::{RngStream, STREAM_INIT, STREAM_PROBE};
use crate::objectives::{estimate_gradient_variance, loss, Batch, Objective, Quadratic};
use crate::optimizer::{LrSchedule, Variant};
use crate::simulator::{run_simulation, RunResult, SimSpec};
use crate::sparsifier::k_from_rho;

use super::geometric_spectrum;

/// `d = 50`, `n = 1000`, spectrum in `[0.5, 1]`, `sin` perturbation of
/// amplitude 1, so `L = 2` and the problem is non-convex.
pub fn verification_objective() -> Result<Quadratic> {
    crate::objectives::synthetic_quadratic(geometric_spectrum(50, 0.5, 1.0), 1000, 1.0, 1.0, 1.0, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheckConfig {
    pub variant: Variant,
    pub workers: usize,
    pub rho: f64,
    pub horizon: u64,
    pub seeds: Vec<u64>,
    pub delay_variance: f64,
    pub batch_size: usize,
    pub sample_every: u64,
    /// Length of the run whose `μ̂` series sets `μ`.
    pub pilot_horizon: u64,
    pub pilot_seed: u64,
    pub mu_percentile: f64,
    pub variance_draws: usize,
}

impl BoundCheckConfig {
    pub fn new(workers: usize, rho: f64, horizon: u64) -> Self {
        BoundCheckConfig {
            variant: Variant::PhiMemSgd,
            workers,
            rho,
            horizon,
            seeds: (0..5).collect(),
            delay_variance: 0.1,
            batch_size: 8,
            sample_every: 10,
            pilot_horizon: 1000,
            pilot_seed: 1000,
            mu_percentile: 10.0,
            variance_draws: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub config: BoundCheckConfig,
    pub inputs: BoundInputs,
    pub min_grad_norm_sq: f64,
    pub theorem_bound: f64,
    /// Closed form for comparison; it assumes a constant step, not the
    /// decaying one used in the runs.
    pub corollary_bound: f64,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.min_grad_norm_sq <= self.theorem_bound
    }
}

fn run(
    obj: &dyn Objective,
    cfg: &BoundCheckConfig,
    schedule: LrSchedule,
    horizon: u64,
    seed: u64,
    track_stale: bool,
) -> Result<RunResult> {
    let spec = SimSpec {
        variant: cfg.variant,
        k: k_from_rho(cfg.rho, obj.dim())?,
        workers: cfg.workers,
        batch_size: cfg.batch_size,
        budget: horizon,
        schedule,
        momentum: 0.0,
        seed,
        sample_every: Some(cfg.sample_every),
        track_stale,
        mu_window: None,
    };
    let delay = DelayConfig {
        delay_variance: cfg.delay_variance,
        seed,
        ..Default::default()
    };
    run_simulation(&spec, obj, &mut StochasticDelays::new(delay, cfg.workers)?)
}

/// Measures every input of the bound and the seed-averaged minimum gradient
/// norm under the step `ρμ / (L√(t+1))`.
pub fn check_bound(obj: &dyn Objective, cfg: &BoundCheckConfig) -> Result<BoundCheck> {
    let lipschitz = obj
        .lipschitz_exact()
        .ok_or_else(|| Error::invalid("bound checks need an exact smoothness constant"))?;
    let inf = obj
        .infimum()
        .ok_or_else(|| Error::invalid("bound checks need an exact infimum"))?;
    if cfg.seeds.is_empty() {
        return Err(Error::Empty("seed list".into()));
    }

    // μ: low percentile of the running estimate on a pilot run with μ = 1.
    let pilot_schedule = LrSchedule::InverseSqrt {
        rho: cfg.rho,
        mu: 1.0,
        lipschitz,
    };
    let pilot = run(
        obj,
        cfg,
        pilot_schedule,
        cfg.pilot_horizon,
        cfg.pilot_seed,
        false,
    )?;
    let mus: Vec<f64> = pilot.records.iter().filter_map(|r| r.mu_hat).collect();
    let mu = percentile(&mus, cfg.mu_percentile)?.clamp(f64::MIN_POSITIVE, 1.0);

    let schedule = LrSchedule::InverseSqrt {
        rho: cfg.rho,
        mu,
        lipschitz,
    };
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    let mut lambdas = Vec::with_capacity(cfg.seeds.len());
    let mut gaps = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let x0 = obj.initial_point(&mut RngStream::new(seed, STREAM_INIT));
        lambdas.push(loss(obj, &x0, Batch::Full)? - inf);
        let r = run(obj, cfg, schedule, cfg.horizon, seed, true)?;
        gaps.push(delayed_gradient_gap(&r.records, &schedule)?);
        runs.push(r.records);
    }
    let x_probe = obj.initial_point(&mut RngStream::new(cfg.pilot_seed, STREAM_INIT));
    let grad_variance = estimate_gradient_variance(
        obj,
        &x_probe,
        cfg.batch_size,
        cfg.variance_draws,
        &mut RngStream::new(cfg.pilot_seed, STREAM_PROBE),
    )?;
    let inputs = BoundInputs {
        lipschitz,
        grad_variance,
        mu,
        rho: cfg.rho,
        lambda: mean(&lambdas)?.max(0.0),
        c: mean(&gaps)?.max(0.0),
        horizon: cfg.horizon,
    };
    let slices: Vec<&[_]> = runs.iter().map(Vec::as_slice).collect();
    Ok(BoundCheck {
        config: cfg.clone(),
        min_grad_norm_sq: min_grad_norm_sq(&slices)?,
        theorem_bound: theorem_bound(&inputs, &schedule)?,
        corollary_bound: corollary_bound(&inputs)?,
        inputs,
    })
}
