//! Worker timing: log-normal per-worker rates, exponential communication
//! delays and uniform computation times.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{
    sample_exponential, sample_lognormal, sample_uniform, worker_stream, RngStream, STREAM_PROFILES,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayConfig {
    /// Variance of `ln λ_i` across workers.
    pub delay_variance: f64,
    pub compute_lo: f64,
    pub compute_hi: f64,
    pub seed: u64,
}

impl Default for DelayConfig {
    fn default() -> Self {
        DelayConfig {
            delay_variance: 0.1,
            compute_lo: 0.9,
            compute_hi: 1.1,
            seed: 0,
        }
    }
}

impl DelayConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delay_variance >= 0.0) {
            return Err(Error::config("delay_variance", "must be non-negative"));
        }
        if !(self.compute_lo >= 0.0 && self.compute_lo <= self.compute_hi) {
            return Err(Error::config(
                "compute_lo",
                format!(
                    "need 0 <= compute_lo <= compute_hi, got [{}, {}]",
                    self.compute_lo, self.compute_hi
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerTimingProfile {
    pub worker_id: usize,
    /// Rate of the worker's exponential communication delay; fixed per run.
    pub rate: f64,
}

/// Draws `λ_i = exp(Z_i)`, `Z_i ~ Normal(0, delay_variance)` independently.
pub fn build_profiles(cfg: &DelayConfig, n_workers: usize) -> Result<Vec<WorkerTimingProfile>> {
    cfg.validate()?;
    let mut rng = RngStream::new(cfg.seed, STREAM_PROFILES);
    (0..n_workers)
        .map(|worker_id| {
            Ok(WorkerTimingProfile {
                worker_id,
                rate: sample_lognormal(&mut rng, 0.0, cfg.delay_variance)?,
            })
        })
        .collect()
}

pub fn next_comm_delay(profile: &WorkerTimingProfile, rng: &mut RngStream) -> Result<f64> {
    sample_exponential(rng, profile.rate)
}

pub fn next_compute_time(cfg: &DelayConfig, rng: &mut RngStream) -> Result<f64> {
    sample_uniform(rng, cfg.compute_lo, cfg.compute_hi)
}

/// One worker cycle: computation time then communication delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cycle {
    pub compute: f64,
    pub comm: f64,
}

impl Cycle {
    pub fn total(&self) -> f64 {
        self.compute + self.comm
    }
}

/// Source of worker cycle durations for the event loop.
pub trait DelaySource {
    /// Next cycle for `worker`, or `None` when the source has nothing left.
    fn next_cycle(&mut self, worker: usize) -> Result<Option<Cycle>>;
}

/// The stochastic model: each worker owns one random stream.
#[derive(Debug, Clone)]
pub struct StochasticDelays {
    cfg: DelayConfig,
    profiles: Vec<WorkerTimingProfile>,
    streams: Vec<RngStream>,
}

impl StochasticDelays {
    pub fn new(cfg: DelayConfig, n_workers: usize) -> Result<Self> {
        let profiles = build_profiles(&cfg, n_workers)?;
        let streams = (0..n_workers)
            .map(|w| RngStream::new(cfg.seed, worker_stream(w)))
            .collect();
        Ok(StochasticDelays {
            cfg,
            profiles,
            streams,
        })
    }

    pub fn profiles(&self) -> &[WorkerTimingProfile] {
        &self.profiles
    }
}

impl DelaySource for StochasticDelays {
    fn next_cycle(&mut self, worker: usize) -> Result<Option<Cycle>> {
        let rng = &mut self.streams[worker];
        let compute = next_compute_time(&self.cfg, rng)?;
        let comm = next_comm_delay(&self.profiles[worker], rng)?;
        Ok(Some(Cycle { compute, comm }))
    }
}

/// Every worker takes the same constant cycle; with equal durations the
/// arrival order is round-robin by worker id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedDelays {
    pub cycle: Cycle,
}

impl DelaySource for FixedDelays {
    fn next_cycle(&mut self, _worker: usize) -> Result<Option<Cycle>> {
        Ok(Some(self.cycle))
    }
}

/// Replays fixed per-worker delay sequences (zero computation time).
#[derive(Debug, Clone, Default)]
pub struct ScriptedDelays {
    queues: Vec<VecDeque<f64>>,
}

impl ScriptedDelays {
    /// Builds from `(worker_id, delay)` pairs; each worker consumes its own
    /// delays in listed order.
    pub fn from_pairs(n_workers: usize, pairs: &[(usize, f64)]) -> Result<Self> {
        let mut queues = vec![VecDeque::new(); n_workers];
        for &(w, d) in pairs {
            if w >= n_workers {
                return Err(Error::config(
                    "delay_script",
                    format!("worker {w} out of range for {n_workers} workers"),
                ));
            }
            if !(d >= 0.0) || !d.is_finite() {
                return Err(Error::config("delay_script", format!("invalid delay {d}")));
            }
            queues[w].push_back(d);
        }
        Ok(ScriptedDelays { queues })
    }

    /// Parses one `worker_id delay` pair per line; blank lines and `#`
    /// comments are skipped. Commas are accepted as separators.
    pub fn parse(n_workers: usize, text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty());
            let bad = || {
                Error::config(
                    "delay_script",
                    format!(
                        "line {}: expected `worker_id delay`, got `{line}`",
                        lineno + 1
                    ),
                )
            };
            let w = fields
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(bad)?;
            let d = fields
                .next()
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(bad)?;
            if fields.next().is_some() {
                return Err(bad());
            }
            pairs.push((w, d));
        }
        Self::from_pairs(n_workers, &pairs)
    }

    pub fn load(n_workers: usize, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(n_workers, &text)
    }
}

impl DelaySource for ScriptedDelays {
    fn next_cycle(&mut self, worker: usize) -> Result<Option<Cycle>> {
        Ok(self
            .queues
            .get_mut(worker)
            .and_then(|q| q.pop_front())
            .map(|comm| Cycle { compute: 0.0, comm }))
    }
}
