use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::Variant;

/// Per-update measurements. Full-gradient fields are filled only on
/// sampled updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Index of the update: it maps `x_t` to `x_{t+1}`.
    pub t: u64,
    pub staleness: u64,
    pub eta: f64,
    /// Mini-batch loss at the (stale) model the gradient was computed on.
    pub train_loss: f64,
    pub mb_grad_norm_sq: f64,
    /// `‖∇f(x_t)‖²` at the current PS model.
    pub full_grad_norm_sq: Option<f64>,
    /// `‖∇f(x_{τ_t})‖²` at the model version the gradient used.
    pub stale_full_grad_norm_sq: Option<f64>,
    pub cos_t: Option<f64>,
    pub mu_hat: Option<f64>,
    /// Simulated arrival time.
    pub time: f64,
    pub worker: usize,
}

/// Identifies a run in CSV output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub variant: Variant,
    pub rho: f64,
    pub workers: usize,
    pub delay_variance: f64,
    pub seed: u64,
}

pub const CSV_HEADER: &str = "run_id,variant,rho,workers,delay_variance,seed,t,staleness,eta,\
train_loss,mb_grad_norm_sq,full_grad_norm_sq,cos_t,mu_hat";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_csv_header(out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")
}

pub fn write_csv_rows(out: &mut impl Write, meta: &RunMeta, records: &[RunRecord]) -> Result<()> {
    if meta.run_id.contains([',', '\n', '"']) {
        return Err(Error::config(
            "run_id",
            "must not contain commas, quotes or newlines",
        ));
    }
    let prefix = format!(
        "{},{},{},{},{},{}",
        meta.run_id, meta.variant, meta.rho, meta.workers, meta.delay_variance, meta.seed
    );
    let io = |e| Error::Io {
        path: "<csv>".into(),
        source: e,
    };
    for r in records {
        writeln!(
            out,
            "{prefix},{},{},{},{},{},{},{},{}",
            r.t,
            r.staleness,
            r.eta,
            r.train_loss,
            r.mb_grad_norm_sq,
            opt(r.full_grad_norm_sq),
            opt(r.cos_t),
            opt(r.mu_hat),
        )
        .map_err(io)?;
    }
    Ok(())
}

/// Header plus rows as one string.
pub fn records_to_csv(meta: &RunMeta, records: &[RunRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv_header(&mut buf).expect("writing to a Vec cannot fail");
    write_csv_rows(&mut buf, meta, records)?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}
