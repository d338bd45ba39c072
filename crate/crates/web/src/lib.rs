use wasm_bindgen::prelude::*;

use sparsim::delay::{DelayConfig, StochasticDelays};
use sparsim::metrics::{corollary_bound, theorem_bound, BoundInputs};
use sparsim::numkit::DenseVector;
use sparsim::optimizer::LrSchedule;
use sparsim::simulator::{avg_staleness, max_staleness, simulate_timeline, staleness_histogram};
use sparsim::sparsifier::top_k;

fn js(e: sparsim::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Sparsified {
    kept: Vec<f64>,
    residual_ratio: f64,
    bound: f64,
}

#[wasm_bindgen]
impl Sparsified {
    /// Dense copy of the input with all but the kept coordinates zeroed.
    #[wasm_bindgen(getter)]
    pub fn kept(&self) -> Vec<f64> {
        self.kept.clone()
    }

    /// `‖u − top_k(u)‖² / ‖u‖²`, or 0 for a zero vector.
    #[wasm_bindgen(getter, js_name = residualRatio)]
    pub fn residual_ratio(&self) -> f64 {
        self.residual_ratio
    }

    /// `1 − k/d`.
    #[wasm_bindgen(getter)]
    pub fn bound(&self) -> f64 {
        self.bound
    }
}

fn sparsify_inner(values: Vec<f64>, k: usize) -> sparsim::Result<Sparsified> {
    let u = DenseVector::from_vec(values);
    let kept = top_k(&u, k)?.densify();
    let total = u.norm_sq();
    let residual: f64 = u
        .iter()
        .zip(kept.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(Sparsified {
        residual_ratio: if total > 0.0 { residual / total } else { 0.0 },
        bound: 1.0 - k as f64 / u.len() as f64,
        kept: kept.into_vec(),
    })
}

#[wasm_bindgen]
pub fn sparsify(values: Vec<f64>, k: usize) -> Result<Sparsified, JsError> {
    sparsify_inner(values, k).map_err(js)
}

#[wasm_bindgen]
pub struct Staleness {
    counts: Vec<u32>,
    mean: f64,
    max: u32,
}

#[wasm_bindgen]
impl Staleness {
    /// `counts[τ]` is the number of updates with staleness `τ`.
    #[wasm_bindgen(getter)]
    pub fn counts(&self) -> Vec<u32> {
        self.counts.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mean(&self) -> f64 {
        self.mean
    }

    #[wasm_bindgen(getter)]
    pub fn max(&self) -> u32 {
        self.max
    }
}

fn staleness_inner(
    workers: usize,
    delay_variance: f64,
    updates: u64,
    seed: u64,
) -> sparsim::Result<Staleness> {
    let cfg = DelayConfig {
        delay_variance,
        seed,
        ..Default::default()
    };
    let mut delays = StochasticDelays::new(cfg, workers)?;
    let records = simulate_timeline(workers, updates, &mut delays)?;
    let max = max_staleness(&records).unwrap_or(0);
    let mut counts = vec![0u32; max as usize + 1];
    for (tau, n) in staleness_histogram(&records) {
        counts[tau as usize] = n as u32;
    }
    Ok(Staleness {
        counts,
        mean: avg_staleness(&records)?,
        max: max as u32,
    })
}

/// Staleness of `updates` arrivals from `workers` workers under the
/// stochastic delay model.
#[wasm_bindgen]
pub fn staleness(
    workers: usize,
    delay_variance: f64,
    updates: u64,
    seed: u64,
) -> Result<Staleness, JsError> {
    staleness_inner(workers, delay_variance, updates, seed).map_err(js)
}

#[wasm_bindgen]
pub struct BoundCurve {
    decaying: Vec<f64>,
    constant: Vec<f64>,
}

#[wasm_bindgen]
impl BoundCurve {
    /// Bound under `η_t = ρμ / (L√(t+1))`.
    #[wasm_bindgen(getter)]
    pub fn decaying(&self) -> Vec<f64> {
        self.decaying.clone()
    }

    /// Closed form under `η = ρμ / (L√T)`.
    #[wasm_bindgen(getter)]
    pub fn constant(&self) -> Vec<f64> {
        self.constant.clone()
    }
}

#[allow(clippy::too_many_arguments)]
fn bound_curve_inner(
    lipschitz: f64,
    grad_variance: f64,
    mu: f64,
    rho: f64,
    lambda: f64,
    c: f64,
    horizons: &[u64],
) -> sparsim::Result<BoundCurve> {
    let schedule = LrSchedule::InverseSqrt { rho, mu, lipschitz };
    let mut decaying = Vec::with_capacity(horizons.len());
    let mut constant = Vec::with_capacity(horizons.len());
    for &horizon in horizons {
        let inputs = BoundInputs {
            lipschitz,
            grad_variance,
            mu,
            rho,
            lambda,
            c,
            horizon,
        };
        // Short horizons can leave the decaying sum non-positive.
        decaying.push(theorem_bound(&inputs, &schedule).unwrap_or(f64::NAN));
        constant.push(corollary_bound(&inputs)?);
    }
    Ok(BoundCurve { decaying, constant })
}

#[wasm_bindgen(js_name = boundCurve)]
#[allow(clippy::too_many_arguments)]
pub fn bound_curve(
    lipschitz: f64,
    grad_variance: f64,
    mu: f64,
    rho: f64,
    lambda: f64,
    c: f64,
    horizons: Vec<u64>,
) -> Result<BoundCurve, JsError> {
    bound_curve_inner(lipschitz, grad_variance, mu, rho, lambda, c, &horizons).map_err(js)
}
