//! Seeded random streams and the samplers used by the delay model.
//!
//! Every stream is a ChaCha8 keystream keyed by the 64-bit run seed and
//! selected by a 64-bit stream id. ChaCha output is defined bit-for-bit by
//! its reference algorithm, so a `(seed, stream_id)` pair produces the same
//! draws on every platform. The OS entropy source is never touched.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// Stream id reserved for model initialization.
pub const STREAM_INIT: u64 = 0;
/// Stream id reserved for mini-batch index sampling.
pub const STREAM_DATA: u64 = 1;
/// Stream id used to draw the per-worker delay rates.
pub const STREAM_PROFILES: u64 = 2;
/// Stream id for auxiliary Monte-Carlo estimators (variance, Lipschitz probes).
pub const STREAM_PROBE: u64 = 3;
const STREAM_WORKER_BASE: u64 = 1 << 32;

/// Stream id owned by worker `worker_id` (communication delays and compute times).
pub fn worker_stream(worker_id: usize) -> u64 {
    STREAM_WORKER_BASE + worker_id as u64
}

const TWO_POW_53: f64 = 9_007_199_254_740_992.0;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / TWO_POW_53
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) / TWO_POW_53
    }

    /// Uniform integer in `[0, n)` by rejection sampling (no modulo bias).
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index on empty range");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal draw (Box-Muller, cosine branch only).
    pub fn next_standard_normal(&mut self) -> f64 {
        let u1 = self.next_open01();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// `-ln(U) / rate` with `U` uniform on `(0, 1)`.
pub fn sample_exponential(rng: &mut RngStream, rate: f64) -> Result<f64> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::invalid(format!(
            "exponential rate must be positive and finite, got {rate}"
        )));
    }
    Ok(exponential_from_uniform(rng.next_open01(), rate))
}

/// Inverse-CDF transform of an exponential variate.
pub fn exponential_from_uniform(u: f64, rate: f64) -> f64 {
    -u.ln() / rate
}

/// `exp(Z)` with `Z ~ Normal(mean_log, var_log)`. A zero variance returns
/// exactly `exp(mean_log)` without consuming a draw.
pub fn sample_lognormal(rng: &mut RngStream, mean_log: f64, var_log: f64) -> Result<f64> {
    if !(var_log >= 0.0) {
        return Err(Error::invalid(format!(
            "log-normal variance must be non-negative, got {var_log}"
        )));
    }
    if var_log == 0.0 {
        return Ok(mean_log.exp());
    }
    Ok((mean_log + var_log.sqrt() * rng.next_standard_normal()).exp())
}

/// Uniform on `[lo, hi]`; `lo == hi` returns `lo` without consuming a draw.
pub fn sample_uniform(rng: &mut RngStream, lo: f64, hi: f64) -> Result<f64> {
    if !(lo <= hi) {
        return Err(Error::invalid(format!(
            "uniform bounds out of order: lo={lo} > hi={hi}"
        )));
    }
    if lo == hi {
        return Ok(lo);
    }
    Ok(lo + (hi - lo) * rng.next_f64())
}
