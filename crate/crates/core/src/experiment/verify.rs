//! Self-check suites run by the `verify` command.

use std::sync::Arc;

use serde::Serialize;

use crate::config::RunConfig;
use crate::delay::{Cycle, DelayConfig, FixedDelays, ScriptedDelays, StochasticDelays};
use crate::error::{Error, Result};
use crate::metrics::stats::mean;
use crate::metrics::{corollary_bound, theorem_bound, BoundInputs};
use crate::numkit::{DenseVector, RngStream};
use crate::objectives::{
    full_gradient, loss, synthetic_blobs, Batch, LogisticRegression, Mlp, Objective,
};
use crate::optimizer::{LrSchedule, UpdateRule, Variant};
use crate::simulator::{avg_staleness, simulate_timeline};
use crate::sparsifier::{check_k_contraction, check_lower_bound, MemoryState};

use super::{check_bound, run_config, verification_objective, BoundCheckConfig};

pub const SUITES: &[&str] = &[
    "contraction",
    "lower-bound",
    "memory",
    "gradients",
    "appendix-b",
    "staleness",
    "bounds",
    "determinism",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

/// Runs one named suite, or every suite for `"all"`.
pub fn run_suites(name: &str) -> Result<Vec<SuiteReport>> {
    let names: Vec<&str> = if name == "all" {
        SUITES.to_vec()
    } else if SUITES.contains(&name) {
        vec![name]
    } else {
        return Err(Error::invalid(format!(
            "unknown suite `{name}`; expected one of {} or all",
            SUITES.join(", ")
        )));
    };
    names
        .into_iter()
        .map(|n| {
            let checks = match n {
                "contraction" => sparsifier_laws(true)?,
                "lower-bound" => sparsifier_laws(false)?,
                "memory" => memory()?,
                "gradients" => gradients()?,
                "appendix-b" => three_workers()?,
                "staleness" => staleness()?,
                "bounds" => bounds()?,
                "determinism" => determinism()?,
                _ => unreachable!("suite list checked above"),
            };
            Ok(SuiteReport {
                suite: n.to_string(),
                passed: checks.iter().all(|c| c.passed),
                checks,
            })
        })
        .collect()
}

fn random_vector(rng: &mut RngStream, d: usize) -> DenseVector {
    DenseVector::from_vec((0..d).map(|_| rng.next_standard_normal()).collect())
}

fn sparsifier_laws(contraction: bool) -> Result<Vec<Check>> {
    let mut rng = RngStream::new(7, 100);
    let mut out = Vec::new();
    for d in [1usize, 2, 7, 64, 256] {
        let mut ks = vec![1, d.div_ceil(4), d.div_ceil(2), d];
        ks.dedup();
        for k in ks {
            let mut failures = 0;
            for _ in 0..10_000 {
                let u = random_vector(&mut rng, d);
                let ok = if contraction {
                    check_k_contraction(&u, k)?
                } else {
                    check_lower_bound(&u, k)?
                };
                failures += usize::from(!ok);
            }
            out.push(check(
                format!("d={d} k={k}"),
                failures == 0,
                format!("{failures} of 10000 vectors violated the inequality"),
            ));
        }
    }
    Ok(out)
}

fn memory() -> Result<Vec<Check>> {
    let mut rng = RngStream::new(3, 101);
    let d = 32;
    let mut mem = MemoryState::zeros(d);
    let mut conserved = true;
    for step in 0..1000 {
        let g = random_vector(&mut rng, d);
        let before = mem.vector().add(&g)?;
        let sent = mem.combine(&g, 1 + step % d)?;
        let after = sent.densify().add(mem.vector())?;
        conserved &= before == after;
    }
    let mut asgd = UpdateRule::new(Variant::Asgd, d, d, 0.5)?;
    let mut phimem = UpdateRule::new(Variant::PhiMemSgd, d, d, 0.5)?;
    let mut xa = random_vector(&mut rng, d);
    let mut xb = xa.clone();
    let mut m = MemoryState::zeros(d);
    let mut identical = true;
    for _ in 0..200 {
        let g = random_vector(&mut rng, d);
        let (na, _, _) = asgd.apply_update(&xa, &g, None, 0.1)?;
        let (nb, _, nm) = phimem.apply_update(&xb, &g, Some(&m), 0.1)?;
        m = nm.expect("memory variant returns memory");
        identical &= na == nb && m.vector().iter().all(|v| *v == 0.0);
        xa = na;
        xb = nb;
    }
    Ok(vec![
        check("conservation", conserved, "1000 random steps, bitwise"),
        check("k=d equals asgd", identical, "200 momentum steps, bitwise"),
    ])
}

fn fd_check(obj: &dyn Objective, rng: &mut RngStream, points: usize, coords: usize) -> Result<f64> {
    let d = obj.dim();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let x = {
            let base = obj.initial_point(rng);
            DenseVector::from_vec(
                base.iter()
                    .map(|v| v + 0.1 * rng.next_standard_normal())
                    .collect(),
            )
        };
        let g = full_gradient(obj, &x)?;
        for _ in 0..coords {
            let j = rng.next_index(d);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (loss(obj, &xp, Batch::Full)? - loss(obj, &xm, Batch::Full)?) / (2.0 * h);
            let err = (fd - g[j]).abs() / g[j].abs().max(fd.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn gradients() -> Result<Vec<Check>> {
    let mut rng = RngStream::new(11, 102);
    let data = Arc::new(synthetic_blobs(4, 40, 6, 2.0, 1)?);
    let objectives: Vec<(&str, Box<dyn Objective>)> = vec![
        ("perturbed_quadratic", Box::new(verification_objective()?)),
        (
            "logistic_regression",
            Box::new(LogisticRegression::new(data.clone())),
        ),
        ("mlp", Box::new(Mlp::new(data, 5))),
    ];
    objectives
        .iter()
        .map(|(name, obj)| {
            let worst = fd_check(obj.as_ref(), &mut rng, 5, 20)?;
            Ok(check(
                *name,
                worst <= 1e-5,
                format!("max relative error {worst:.2e}"),
            ))
        })
        .collect()
}

fn three_workers() -> Result<Vec<Check>> {
    let mut delays = ScriptedDelays::from_pairs(
        3,
        &[(0, 1.0), (1, 2.0), (2, 3.0), (0, 2.5), (1, 2.0), (2, 5.0)],
    )?;
    let taus: Vec<u64> = simulate_timeline(3, 5, &mut delays)?
        .iter()
        .map(|r| r.staleness)
        .collect();
    Ok(vec![check(
        "three-worker script",
        taus == [0, 1, 2, 2, 2],
        format!("staleness {taus:?}"),
    )])
}

fn staleness() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for n in 2..=4usize {
        let mut fixed = FixedDelays {
            cycle: Cycle {
                compute: 1.0,
                comm: 1.0,
            },
        };
        let r = simulate_timeline(n, 40, &mut fixed)?;
        let steady = r.iter().skip(n).all(|r| r.staleness == n as u64 - 1);
        out.push(check(
            format!("homogeneous N={n}"),
            steady,
            "steady state τ = N-1",
        ));
    }
    let tau_bar = |var: f64| -> Result<f64> {
        let per_seed = (0..20)
            .map(|seed| {
                let cfg = DelayConfig {
                    delay_variance: var,
                    seed,
                    ..Default::default()
                };
                avg_staleness(&simulate_timeline(
                    8,
                    2000,
                    &mut StochasticDelays::new(cfg, 8)?,
                )?)
            })
            .collect::<Result<Vec<_>>>()?;
        mean(&per_seed)
    };
    let low = tau_bar(0.1)?;
    let mid = tau_bar(1.0)?;
    let high = tau_bar(3.0)?;
    out.push(check(
        "8 workers, σ²=0.1",
        (6.5..=7.5).contains(&low),
        format!("τ̄ = {low:.3}"),
    ));
    out.push(check(
        "8 workers, τ̄ falls as σ² grows",
        low >= mid && mid >= high,
        format!("τ̄ = {low:.3}, {mid:.3}, {high:.3} for σ² = 0.1, 1, 3"),
    ));
    Ok(out)
}

fn bounds() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for t in [4u64, 100, 10_000] {
        let inputs = BoundInputs {
            lipschitz: 2.0,
            grad_variance: 1.5,
            mu: 0.8,
            rho: 0.1,
            lambda: 3.0,
            c: 0.2,
            horizon: t,
        };
        let schedule = LrSchedule::ConstantHorizon {
            rho: inputs.rho,
            mu: inputs.mu,
            lipschitz: inputs.lipschitz,
            horizon: t,
        };
        let a = theorem_bound(&inputs, &schedule)?;
        let b = corollary_bound(&inputs)?;
        let rel = ((a - b) / b).abs();
        out.push(check(
            format!("closed form T={t}"),
            rel <= 1e-9,
            format!("relative gap {rel:.1e}"),
        ));
    }
    let q = verification_objective()?;
    for workers in [1usize, 8] {
        let mut cfg = BoundCheckConfig::new(workers, 1.0, 100);
        cfg.pilot_horizon = 200;
        let c = check_bound(&q, &cfg)?;
        out.push(check(
            format!("bound holds, {workers} workers, T=100"),
            c.holds(),
            format!(
                "min ‖∇f‖² = {:.4e} vs bound {:.4e}",
                c.min_grad_norm_sq, c.theorem_bound
            ),
        ));
    }
    Ok(out)
}

fn determinism() -> Result<Vec<Check>> {
    let cfg = RunConfig::from_toml_str(
        "objective = \"perturbed_quadratic\"\nperturbation = 0.5\nvariant = \"phi_mem_sgd\"\nrho = 0.1\n\
         workers = 4\ndelay_variance = 1.0\nupdates = 300\nbatch_size = 8\nlr = 0.05\nseed = 17\n",
    )?;
    let a = run_config(&cfg)?.csv()?;
    let b = run_config(&cfg)?.csv()?;
    Ok(vec![check(
        "repeat run",
        a == b,
        format!("{} bytes", a.len()),
    )])
}
