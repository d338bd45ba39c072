use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::GridSpec;
use crate::error::{Error, Result};
use crate::metrics::stats::{mean, std_dev};
use crate::metrics::{write_csv_header, write_csv_rows};

use super::{run_with_problem, to_json, write_atomic, ProblemCache, RunOutput, RunSummary};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub index: usize,
    pub label: String,
    pub variant: String,
    pub rho: f64,
    pub workers: usize,
    pub lr: f64,
    pub seeds: Vec<u64>,
    /// Test accuracy per seed, when the objective is a classifier.
    pub accuracies: Option<Vec<f64>>,
    pub mean_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
    pub final_losses: Vec<f64>,
    pub mean_final_loss: f64,
    pub std_final_loss: f64,
    pub mean_avg_staleness: f64,
    pub mean_mu_hat: Option<f64>,
}

impl CellSummary {
    /// Higher is better: accuracy when available, else negated loss.
    fn score(&self) -> f64 {
        self.mean_accuracy.unwrap_or(-self.mean_final_loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestLr {
    pub variant: String,
    pub lr: f64,
    pub cell: usize,
    pub mean_accuracy: Option<f64>,
    pub mean_final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkersRow {
    pub variant: String,
    pub workers: usize,
    pub mean_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridReport {
    pub cells: Vec<CellSummary>,
    pub best_lr: Vec<BestLr>,
    pub workers_table: Option<Vec<WorkersRow>>,
}

fn summarize(index: usize, label: &str, runs: &[RunSummary], lr: f64) -> Result<CellSummary> {
    let first = &runs[0];
    let accs: Option<Vec<f64>> = runs.iter().map(|r| r.test_accuracy).collect();
    let losses: Vec<f64> = runs.iter().map(|r| r.final_train_loss).collect();
    let mus: Option<Vec<f64>> = runs.iter().map(|r| r.mu_hat_final).collect();
    let stale: Vec<f64> = runs.iter().map(|r| r.avg_staleness).collect();
    Ok(CellSummary {
        index,
        label: label.to_string(),
        variant: first.variant.clone(),
        rho: first.rho,
        workers: first.workers,
        lr,
        seeds: runs.iter().map(|r| r.seed).collect(),
        mean_accuracy: accs.as_deref().map(mean).transpose()?,
        std_accuracy: accs.as_deref().map(std_dev).transpose()?,
        accuracies: accs,
        mean_final_loss: mean(&losses)?,
        std_final_loss: std_dev(&losses)?,
        final_losses: losses,
        mean_avg_staleness: mean(&stale)?,
        mean_mu_hat: mus.as_deref().map(mean).transpose()?,
    })
}

/// Best learning rate per variant: highest score, ties to the smaller lr.
fn best_lrs(cells: &[CellSummary]) -> Vec<BestLr> {
    let mut variants: Vec<&str> = cells.iter().map(|c| c.variant.as_str()).collect();
    variants.dedup();
    variants.sort_unstable();
    variants.dedup();
    variants
        .into_iter()
        .filter_map(|v| {
            cells
                .iter()
                .filter(|c| c.variant == v)
                .max_by(|a, b| a.score().total_cmp(&b.score()).then(b.lr.total_cmp(&a.lr)))
                .map(|c| BestLr {
                    variant: v.to_string(),
                    lr: c.lr,
                    cell: c.index,
                    mean_accuracy: c.mean_accuracy,
                    mean_final_loss: c.mean_final_loss,
                })
        })
        .collect()
}

/// Runs every cell for every seed on a pool of `jobs` threads. Each run is
/// independent, so results do not depend on scheduling. With `out`, each
/// run's CSV is written to `out/cells/` as it finishes and everything is
/// merged into `out/records.csv` in cell order at the end.
pub fn run_grid(
    spec: &GridSpec,
    jobs: usize,
    seed_override: Option<u64>,
    out: Option<&Path>,
) -> Result<GridReport> {
    let cells = spec.cells()?;
    let cell_dir = out.map(|o| o.join("cells"));
    if let Some(dir) = &cell_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tasks: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..spec.seeds).map(move |r| (c, r)))
        .collect();
    let cache = ProblemCache::default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Simulation(format!("thread pool: {e}")))?;
    let outputs: Vec<RunOutput> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, r)| {
                let cell = &cells[c];
                let mut cfg = cell.config.clone();
                cfg.seed = spec.seed_for(seed_override.unwrap_or(cfg.seed), r);
                cfg.run_id = format!("{}-r{r}", file_safe(&cell.label));
                let problem = cache.get(&cfg)?;
                let output = run_with_problem(&cfg, &problem)?;
                if let Some(dir) = &cell_dir {
                    let path = dir.join(format!("{}.csv", cfg.run_id));
                    write_atomic(&path, output.csv()?.as_bytes())?;
                }
                Ok(output)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let per_cell = spec.seeds as usize;
    let summaries = cells
        .iter()
        .zip(outputs.chunks(per_cell))
        .map(|(cell, runs)| {
            let s: Vec<RunSummary> = runs.iter().map(|o| o.summary.clone()).collect();
            summarize(cell.index, &cell.label, &s, cell.config.lr)
        })
        .collect::<Result<Vec<_>>>()?;

    let workers_table = spec.axes.iter().any(|(k, _)| k == "workers").then(|| {
        summaries
            .iter()
            .map(|c| WorkersRow {
                variant: c.variant.clone(),
                workers: c.workers,
                mean_accuracy: c.mean_accuracy,
                std_accuracy: c.std_accuracy,
            })
            .collect()
    });
    let report = GridReport {
        best_lr: best_lrs(&summaries),
        cells: summaries,
        workers_table,
    };

    if let Some(out) = out {
        let mut merged = Vec::new();
        write_csv_header(&mut merged).map_err(|e| Error::io(out, e))?;
        for o in &outputs {
            write_csv_rows(&mut merged, &o.meta, &o.result.records)?;
        }
        write_atomic(&out.join("records.csv"), &merged)?;
        write_atomic(&out.join("grid_summary.json"), &to_json(&report)?)?;
        write_atomic(&out.join("grid_summary.csv"), report.to_csv().as_bytes())?;
    }
    Ok(report)
}

/// Run ids derive from the cell's axis values, not its position, so
/// reordering a grid leaves every cell's output unchanged.
fn file_safe(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "=.-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl GridReport {
    /// One row per cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "cell,label,variant,rho,workers,lr,seeds,mean_accuracy,std_accuracy,mean_final_loss,std_final_loss,mean_avg_staleness,mean_mu_hat\n",
        );
        for c in &self.cells {
            s.push_str(&format!(
                "{},\"{}\",{},{},{},{},{},{},{},{},{},{},{}\n",
                c.index,
                c.label,
                c.variant,
                c.rho,
                c.workers,
                c.lr,
                c.seeds.len(),
                opt(c.mean_accuracy),
                opt(c.std_accuracy),
                c.mean_final_loss,
                c.std_final_loss,
                c.mean_avg_staleness,
                opt(c.mean_mu_hat),
            ));
        }
        s
    }
}
