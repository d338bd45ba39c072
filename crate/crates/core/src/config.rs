//! Run and grid configuration files.
//!
//! A run file is a flat TOML table; every key is optional and unknown keys
//! are rejected. A grid file holds a `[base]` run table, an `[axes]` table of
//! value lists and a `seeds` count.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::delay::DelayConfig;
use crate::error::{Error, Result};
use crate::objectives::ObjectiveKind;
use crate::optimizer::{LrSchedule, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    InverseSqrt,
    ConstantHorizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run_id: String,

    pub objective: ObjectiveKind,
    /// Quadratic dimension.
    pub dim: usize,
    /// Quadratic sample count.
    pub samples: usize,
    pub spectrum_min: f64,
    pub spectrum_max: f64,
    /// Standard deviation of the per-sample centers.
    pub spread: f64,
    /// Amplitude of the `Σ sin x_j` term; only for `perturbed_quadratic`.
    pub perturbation: f64,
    pub init_scale: f64,
    /// Seed for generating synthetic data, independent of the run seed.
    pub data_seed: u64,

    /// `blobs` or a directory holding MNIST IDX files.
    pub dataset: String,
    pub classes: usize,
    pub features: usize,
    pub separation: f64,
    /// Rows held out for testing (blobs only).
    pub test_rows: usize,
    pub hidden: usize,

    pub variant: Variant,
    pub rho: f64,
    pub workers: usize,
    pub delay_variance: f64,
    pub compute_lo: f64,
    pub compute_hi: f64,
    /// `worker_id delay` lines replacing the stochastic delay model.
    pub delay_script: Option<PathBuf>,

    pub batch_size: usize,
    pub epochs: Option<f64>,
    pub updates: Option<u64>,

    pub lr: f64,
    pub lr_schedule: ScheduleKind,
    pub mu: f64,
    /// Smoothness constant for the schedule; defaults to the objective's
    /// exact value when it has one.
    pub lipschitz: Option<f64>,
    pub momentum: f64,

    pub seed: u64,
    /// Full-gradient sampling period; 0 disables sampling.
    pub sample_every: u64,
    pub track_stale: bool,
    pub mu_window: Option<usize>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "run".into(),
            objective: ObjectiveKind::Quadratic,
            dim: 50,
            samples: 1000,
            spectrum_min: 0.5,
            spectrum_max: 1.0,
            spread: 1.0,
            perturbation: 0.0,
            init_scale: 1.0,
            data_seed: 0,
            dataset: "blobs".into(),
            classes: 10,
            features: 20,
            separation: 3.0,
            test_rows: 1000,
            hidden: 128,
            variant: Variant::Asgd,
            rho: 1.0,
            workers: 1,
            delay_variance: 0.1,
            compute_lo: 0.9,
            compute_hi: 1.1,
            delay_script: None,
            batch_size: 64,
            epochs: None,
            updates: None,
            lr: 0.01,
            lr_schedule: ScheduleKind::Constant,
            mu: 1.0,
            lipschitz: None,
            momentum: 0.5,
            seed: 0,
            sample_every: 10,
            track_stale: false,
            mu_window: None,
            output: None,
        }
    }
}

const DEFAULT_EPOCHS: f64 = 5.0;

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
        let cfg = Self::from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a run file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &self.delay_script {
            if p.is_relative() {
                self.delay_script = Some(base.join(p));
            }
        }
        if self.dataset != "blobs" && Path::new(&self.dataset).is_relative() {
            self.dataset = base.join(&self.dataset).to_string_lossy().into_owned();
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<serialize>", e.to_string()))
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let known = toml::Table::try_from(RunConfig::default())
            .expect("default config serializes to a table");
        let optional = [
            "delay_script",
            "epochs",
            "updates",
            "lipschitz",
            "mu_window",
            "output",
        ];
        for key in table.keys() {
            if !known.contains_key(key) && !optional.contains(&key.as_str()) {
                return Err(Error::config(key, "unknown key"));
            }
        }
        match RunConfig::deserialize(toml::Value::Table(table.clone())) {
            Ok(cfg) => Ok(cfg),
            Err(whole) => {
                // Name the first key that fails on its own.
                for (key, value) in table {
                    let single = toml::Table::from_iter([(key.clone(), value)]);
                    if let Err(e) = RunConfig::deserialize(toml::Value::Table(single)) {
                        return Err(Error::config(key, e.message().to_string()));
                    }
                }
                Err(Error::config("<file>", whole.message().to_string()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| Err(Error::config(key, msg));
        if self.workers == 0 {
            return fail("workers", "must be at least 1".into());
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return fail("rho", format!("{} is outside (0, 1]", self.rho));
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1".into());
        }
        match (self.epochs, self.updates) {
            (Some(_), Some(_)) => {
                return fail(
                    "updates",
                    "set either `epochs` or `updates`, not both".into(),
                )
            }
            (Some(e), None) if !(e > 0.0 && e.is_finite()) => {
                return fail("epochs", format!("{e} must be positive"))
            }
            (None, Some(0)) => return fail("updates", "must be at least 1".into()),
            _ => {}
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr", format!("{} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum", format!("{} is outside [0, 1)", self.momentum));
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return fail("mu", format!("{} is outside (0, 1]", self.mu));
        }
        if let Some(l) = self.lipschitz {
            if !(l > 0.0 && l.is_finite()) {
                return fail("lipschitz", format!("{l} must be positive"));
            }
        }
        if self.mu_window == Some(0) {
            return fail("mu_window", "must be at least 1".into());
        }
        if self.run_id.is_empty() || self.run_id.contains([',', '"', '\n', '/', '\\']) {
            return fail(
                "run_id",
                "must be non-empty without commas, quotes or slashes".into(),
            );
        }
        match self.objective {
            ObjectiveKind::Quadratic | ObjectiveKind::PerturbedQuadratic => {
                if self.dim == 0 {
                    return fail("dim", "must be at least 1".into());
                }
                if self.samples == 0 {
                    return fail("samples", "must be at least 1".into());
                }
                if !(self.spectrum_min > 0.0 && self.spectrum_min <= self.spectrum_max) {
                    return fail(
                        "spectrum_min",
                        format!(
                            "need 0 < spectrum_min <= spectrum_max, got [{}, {}]",
                            self.spectrum_min, self.spectrum_max
                        ),
                    );
                }
                if self.objective == ObjectiveKind::Quadratic && self.perturbation != 0.0 {
                    return fail(
                        "perturbation",
                        "only perturbed_quadratic takes a perturbation".into(),
                    );
                }
                if !(self.perturbation >= 0.0) {
                    return fail("perturbation", "must be non-negative".into());
                }
            }
            ObjectiveKind::LogisticRegression | ObjectiveKind::Mlp => {
                if self.dataset == "blobs" && (self.classes < 2 || self.features == 0) {
                    return fail("classes", "blobs need >= 2 classes and >= 1 feature".into());
                }
                if self.objective == ObjectiveKind::Mlp && self.hidden == 0 {
                    return fail("hidden", "must be at least 1".into());
                }
            }
        }
        self.delay_config().validate()
    }

    pub fn delay_config(&self) -> DelayConfig {
        DelayConfig {
            delay_variance: self.delay_variance,
            compute_lo: self.compute_lo,
            compute_hi: self.compute_hi,
            seed: self.seed,
        }
    }

    /// Update budget: `updates`, or `⌊epochs · n / batch_size⌋`.
    pub fn budget(&self, n_samples: usize) -> Result<u64> {
        let budget = match self.updates {
            Some(u) => u,
            None => {
                let e = self.epochs.unwrap_or(DEFAULT_EPOCHS);
                (e * n_samples as f64 / self.batch_size as f64).floor() as u64
            }
        };
        if budget == 0 {
            return Err(Error::config("epochs", "update budget rounds down to zero"));
        }
        Ok(budget)
    }

    /// The step-size schedule; `lipschitz_default` is used when the file
    /// does not give one.
    pub fn schedule(&self, budget: u64, lipschitz_default: Option<f64>) -> Result<LrSchedule> {
        let lipschitz = || {
            self.lipschitz.or(lipschitz_default).ok_or_else(|| {
                Error::config("lipschitz", "required by this schedule for this objective")
            })
        };
        let s = match self.lr_schedule {
            ScheduleKind::Constant => LrSchedule::Constant { eta: self.lr },
            ScheduleKind::InverseSqrt => LrSchedule::InverseSqrt {
                rho: self.rho,
                mu: self.mu,
                lipschitz: lipschitz()?,
            },
            ScheduleKind::ConstantHorizon => LrSchedule::ConstantHorizon {
                rho: self.rho,
                mu: self.mu,
                lipschitz: lipschitz()?,
                horizon: budget,
            },
        };
        s.validate()?;
        Ok(s)
    }

    /// Full-gradient sampling period as an option.
    pub fn sampling(&self) -> Option<u64> {
        (self.sample_every > 0).then_some(self.sample_every)
    }
}

/// One cell of a grid: the overrides that define it and the resulting config.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub index: usize,
    pub label: String,
    pub overrides: Vec<(String, toml::Value)>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub base: toml::Table,
    pub axes: Vec<(String, Vec<toml::Value>)>,
    pub seeds: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    #[serde(default)]
    base: toml::Table,
    #[serde(default)]
    axes: toml::Table,
    #[serde(default = "one")]
    seeds: u64,
}

fn one() -> u64 {
    1
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl GridSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: GridFile =
            toml::from_str(text).map_err(|e| Error::config("<grid>", e.message().to_string()))?;
        if file.seeds == 0 {
            return Err(Error::config("seeds", "must be at least 1"));
        }
        let mut axes = Vec::new();
        for (name, values) in file.axes {
            let values = match values {
                toml::Value::Array(a) if !a.is_empty() => a,
                _ => {
                    return Err(Error::config(
                        format!("axes.{name}"),
                        "must be a non-empty array",
                    ))
                }
            };
            axes.push((name, values));
        }
        let spec = GridSpec {
            base: file.base,
            axes,
            seeds: file.seeds,
        };
        spec.cells()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for key in ["delay_script", "dataset"] {
            if let Some(toml::Value::String(p)) = spec.base.get(key) {
                if p != "blobs" && Path::new(p).is_relative() {
                    let joined = base.join(p).to_string_lossy().into_owned();
                    spec.base.insert(key.into(), toml::Value::String(joined));
                }
            }
        }
        Ok(spec)
    }

    /// Cartesian product of the axes; the last axis varies fastest.
    pub fn cells(&self) -> Result<Vec<GridCell>> {
        let mut combos: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
        for (name, values) in &self.axes {
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut c = prefix.clone();
                        c.push((name.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .enumerate()
            .map(|(index, overrides)| {
                let mut table = self.base.clone();
                for (k, v) in &overrides {
                    table.insert(k.clone(), v.clone());
                }
                let label = if overrides.is_empty() {
                    "base".to_string()
                } else {
                    overrides
                        .iter()
                        .map(|(k, v)| format!("{k}={}", value_label(v)))
                        .collect::<Vec<_>>()
                        .join(" ")
                };
                let config = RunConfig::from_table(table).map_err(|e| match e {
                    Error::Config { key, message } => {
                        Error::config(key, format!("{message} (grid cell {index}: {label})"))
                    }
                    other => other,
                })?;
                config.validate()?;
                Ok(GridCell {
                    index,
                    label,
                    overrides,
                    config,
                })
            })
            .collect()
    }

    /// Seed of repeat `r`. Every cell shares the same per-repeat seeds, so
    /// cells are compared under identical initializations, data orders and
    /// delay draws.
    pub fn seed_for(&self, base_seed: u64, repeat: u64) -> u64 {
        base_seed.wrapping_add(repeat)
    }
}
