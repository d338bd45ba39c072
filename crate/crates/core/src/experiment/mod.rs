//! Turning configuration files into runs, grids and reports.

mod bound;
mod grid;
pub mod verify;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

pub use bound::{check_bound, verification_objective, BoundCheck, BoundCheckConfig};
pub use grid::{run_grid, BestLr, CellSummary, GridReport, WorkersRow};

use crate::config::RunConfig;
use crate::delay::{DelaySource, ScriptedDelays, StochasticDelays, WorkerTimingProfile};
use crate::error::{Error, Result};
use crate::metrics::{records_to_csv, RunMeta};
use crate::objectives::{
    accuracy, load_mnist_idx, loss, synthetic_blobs, synthetic_quadratic, Batch, Dataset,
    LogisticRegression, Mlp, Objective, ObjectiveKind,
};
use crate::simulator::{
    avg_staleness, max_staleness, run_simulation, simulate_timeline, staleness_histogram,
    RunResult, SimSpec, StalenessRecord,
};
use crate::sparsifier::k_from_rho;

/// An objective plus its held-out evaluation data, if any.
#[derive(Clone)]
pub struct Problem {
    pub objective: Arc<dyn Objective>,
    pub test: Option<Arc<Dataset>>,
}

/// `d` values from `lo` to `hi` spaced evenly in log scale.
pub fn geometric_spectrum(d: usize, lo: f64, hi: f64) -> Vec<f64> {
    if d == 1 {
        return vec![lo];
    }
    (0..d)
        .map(|j| lo * (hi / lo).powf(j as f64 / (d - 1) as f64))
        .collect()
}

fn idx_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [format!("{stem}.gz"), stem.to_string()] {
        let p = dir.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::config(
        "dataset",
        format!("{} has no {stem}[.gz]", dir.display()),
    ))
}

/// Loads the `train-*` and `t10k-*` IDX pairs from `dir`.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_mnist_idx(
        idx_file(dir, "train-images-idx3-ubyte")?,
        idx_file(dir, "train-labels-idx1-ubyte")?,
    )?;
    let test = load_mnist_idx(
        idx_file(dir, "t10k-images-idx3-ubyte")?,
        idx_file(dir, "t10k-labels-idx1-ubyte")?,
    )?;
    Ok((train, test))
}

/// The fields of a config that determine its [`Problem`].
fn problem_key(cfg: &RunConfig) -> String {
    match cfg.objective {
        ObjectiveKind::Quadratic | ObjectiveKind::PerturbedQuadratic => format!(
            "q {} {} {} {} {} {} {} {}",
            cfg.dim,
            cfg.samples,
            cfg.spectrum_min,
            cfg.spectrum_max,
            cfg.spread,
            cfg.perturbation,
            cfg.init_scale,
            cfg.data_seed
        ),
        kind => format!(
            "{kind:?} {} {} {} {} {} {} {} {}",
            cfg.dataset,
            cfg.classes,
            cfg.features,
            cfg.separation,
            cfg.samples,
            cfg.test_rows,
            cfg.hidden,
            cfg.data_seed
        ),
    }
}

pub fn build_problem(cfg: &RunConfig) -> Result<Problem> {
    cfg.validate()?;
    if matches!(
        cfg.objective,
        ObjectiveKind::Quadratic | ObjectiveKind::PerturbedQuadratic
    ) {
        let q = synthetic_quadratic(
            geometric_spectrum(cfg.dim, cfg.spectrum_min, cfg.spectrum_max),
            cfg.samples,
            cfg.spread,
            cfg.perturbation,
            cfg.init_scale,
            cfg.data_seed,
        )?;
        return Ok(Problem {
            objective: Arc::new(q),
            test: None,
        });
    }
    let (train, test) = if cfg.dataset == "blobs" {
        let all = synthetic_blobs(
            cfg.classes,
            cfg.samples + cfg.test_rows,
            cfg.features,
            cfg.separation,
            cfg.data_seed,
        )?;
        all.split_tail(cfg.test_rows)?
    } else {
        load_mnist_dir(Path::new(&cfg.dataset))?
    };
    let train = Arc::new(train);
    let objective: Arc<dyn Objective> = match cfg.objective {
        ObjectiveKind::Mlp => Arc::new(Mlp::new(train, cfg.hidden)),
        _ => Arc::new(LogisticRegression::new(train)),
    };
    Ok(Problem {
        objective,
        test: (!test.is_empty()).then(|| Arc::new(test)),
    })
}

/// Reuses problems across configs that only differ in run parameters.
#[derive(Default)]
pub struct ProblemCache {
    problems: std::sync::Mutex<BTreeMap<String, Problem>>,
}

impl ProblemCache {
    pub fn get(&self, cfg: &RunConfig) -> Result<Problem> {
        let key = problem_key(cfg);
        if let Some(p) = self.problems.lock().expect("cache lock").get(&key) {
            return Ok(p.clone());
        }
        let p = build_problem(cfg)?;
        self.problems
            .lock()
            .expect("cache lock")
            .insert(key, p.clone());
        Ok(p)
    }
}

/// Delay source for a config and, for the stochastic model, the worker
/// rates it drew.
pub fn make_delays(cfg: &RunConfig) -> Result<(Box<dyn DelaySource>, Vec<WorkerTimingProfile>)> {
    match &cfg.delay_script {
        Some(path) => Ok((
            Box::new(ScriptedDelays::load(cfg.workers, path)?),
            Vec::new(),
        )),
        None => {
            let d = StochasticDelays::new(cfg.delay_config(), cfg.workers)?;
            let profiles = d.profiles().to_vec();
            Ok((Box::new(d), profiles))
        }
    }
}

pub fn sim_spec(cfg: &RunConfig, obj: &dyn Objective) -> Result<SimSpec> {
    let budget = cfg.budget(obj.n_samples())?;
    if cfg.batch_size > obj.n_samples() {
        return Err(Error::config(
            "batch_size",
            format!(
                "{} exceeds the {} training samples",
                cfg.batch_size,
                obj.n_samples()
            ),
        ));
    }
    Ok(SimSpec {
        variant: cfg.variant,
        k: k_from_rho(cfg.rho, obj.dim())?,
        workers: cfg.workers,
        batch_size: cfg.batch_size,
        budget,
        schedule: cfg.schedule(budget, obj.lipschitz_exact())?,
        momentum: cfg.momentum,
        seed: cfg.seed,
        sample_every: cfg.sampling(),
        track_stale: cfg.track_stale,
        mu_window: cfg.mu_window,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub variant: String,
    pub rho: f64,
    pub k: usize,
    pub workers: usize,
    pub delay_variance: f64,
    pub seed: u64,
    pub updates: u64,
    pub test_accuracy: Option<f64>,
    pub final_train_loss: f64,
    pub final_full_grad_norm_sq: Option<f64>,
    pub avg_staleness: f64,
    pub max_staleness: u64,
    pub mu_hat_final: Option<f64>,
    pub mu_skipped: usize,
    pub worker_rates: Vec<f64>,
    pub sim_time: f64,
    pub runtime_secs: f64,
}

pub struct RunOutput {
    pub meta: RunMeta,
    pub result: RunResult,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn csv(&self) -> Result<String> {
        records_to_csv(&self.meta, &self.result.records)
    }

    /// Writes `records.csv` and `summary.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("records.csv"), self.csv()?.as_bytes())?;
        write_atomic(&dir.join("summary.json"), &to_json(&self.summary)?)
    }
}

pub(crate) fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v)
        .map_err(|e| Error::Simulation(format!("JSON encoding failed: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn run_with_problem(cfg: &RunConfig, problem: &Problem) -> Result<RunOutput> {
    let started = Instant::now();
    let obj = problem.objective.as_ref();
    let spec = sim_spec(cfg, obj)?;
    let (mut delays, profiles) = make_delays(cfg)?;
    let result = run_simulation(&spec, obj, delays.as_mut())?;
    let test_accuracy = match (&problem.test, obj.classifier()) {
        (Some(test), Some(_)) => Some(accuracy(obj, &result.x, test)?),
        _ => None,
    };
    let summary = RunSummary {
        run_id: cfg.run_id.clone(),
        variant: cfg.variant.name().into(),
        rho: cfg.rho,
        k: spec.k,
        workers: cfg.workers,
        delay_variance: cfg.delay_variance,
        seed: cfg.seed,
        updates: spec.budget,
        test_accuracy,
        final_train_loss: loss(obj, &result.x, Batch::Full)?,
        final_full_grad_norm_sq: result.final_full_grad_norm_sq,
        avg_staleness: result.avg_staleness()?,
        max_staleness: result.max_staleness().unwrap_or(0),
        mu_hat_final: result.mu_hat,
        mu_skipped: result.mu_skipped,
        worker_rates: profiles.iter().map(|p| p.rate).collect(),
        sim_time: result.sim_time,
        runtime_secs: started.elapsed().as_secs_f64(),
    };
    let meta = RunMeta {
        run_id: cfg.run_id.clone(),
        variant: cfg.variant,
        rho: cfg.rho,
        workers: cfg.workers,
        delay_variance: cfg.delay_variance,
        seed: cfg.seed,
    };
    Ok(RunOutput {
        meta,
        result,
        summary,
    })
}

pub fn run_config(cfg: &RunConfig) -> Result<RunOutput> {
    run_with_problem(cfg, &build_problem(cfg)?)
}

/// Update budget without building the model: quadratic sample counts come
/// from the config, dataset sizes from the files.
fn timeline_budget(cfg: &RunConfig) -> Result<u64> {
    if let Some(u) = cfg.updates {
        return Ok(u);
    }
    let n = match cfg.objective {
        ObjectiveKind::Quadratic | ObjectiveKind::PerturbedQuadratic => cfg.samples,
        _ if cfg.dataset == "blobs" => cfg.samples,
        _ => build_problem(cfg)?.objective.n_samples(),
    };
    cfg.budget(n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StalenessReport {
    pub updates: u64,
    pub workers: usize,
    pub delay_variance: f64,
    pub seed: u64,
    pub avg_staleness: f64,
    pub max_staleness: u64,
    pub histogram: BTreeMap<u64, u64>,
}

impl StalenessReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("staleness,count\n");
        for (tau, count) in &self.histogram {
            s.push_str(&format!("{tau},{count}\n"));
        }
        s
    }
}

/// Staleness statistics of the timing model alone.
pub fn staleness_report(cfg: &RunConfig) -> Result<StalenessReport> {
    cfg.validate()?;
    let budget = timeline_budget(cfg)?;
    let (mut delays, _) = make_delays(cfg)?;
    let records: Vec<StalenessRecord> = simulate_timeline(cfg.workers, budget, delays.as_mut())?;
    Ok(StalenessReport {
        updates: budget,
        workers: cfg.workers,
        delay_variance: cfg.delay_variance,
        seed: cfg.seed,
        avg_staleness: avg_staleness(&records)?,
        max_staleness: max_staleness(&records).unwrap_or(0),
        histogram: staleness_histogram(&records),
    })
}
