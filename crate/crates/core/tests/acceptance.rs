//! Acceptance checks A1–A9. Prints one PASS/FAIL line per check and exits
//! non-zero when any check fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use sparsim::config::{GridSpec, RunConfig};
use sparsim::delay::{Cycle, DelayConfig, FixedDelays, StochasticDelays};
use sparsim::experiment::{
    check_bound, run_config, run_grid, verification_objective, BoundCheckConfig,
};
use sparsim::metrics::stats::{loglog_slope, mean, spearman};
use sparsim::metrics::{corollary_bound, theorem_bound, BoundInputs};
use sparsim::numkit::{DenseVector, RngStream};
use sparsim::objectives::{
    full_gradient, load_mnist_idx, loss, synthetic_blobs, synthetic_quadratic, Batch,
    LogisticRegression, Mlp, Objective,
};
use sparsim::optimizer::{LrSchedule, UpdateRule, Variant};
use sparsim::simulator::{avg_staleness, run_simulation, simulate_timeline, SimSpec};
use sparsim::sparsifier::{memory_combine, top_k, MemoryState};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn normal_vec(rng: &mut RngStream, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.next_standard_normal()).collect()
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Indices of the k largest magnitudes by a full sort; ties go to the lower
/// index.
fn sort_oracle(u: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..u.len()).collect();
    idx.sort_by(|&a, &b| u[b].abs().partial_cmp(&u[a].abs()).unwrap().then(a.cmp(&b)));
    let mut keep: Vec<usize> = idx[..k].to_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| (i, u[i])).collect()
}

fn a1_sparsifier_laws() -> Outcome {
    let mut rng = RngStream::new(2024, 7);
    let mut worst_contraction: f64 = f64::NEG_INFINITY;
    let mut worst_lower: f64 = f64::NEG_INFINITY;
    let mut mismatches = 0usize;
    let mut total = 0usize;
    for d in [1usize, 2, 7, 64, 256] {
        let mut ks = vec![1, d.div_ceil(4), d.div_ceil(2), d];
        ks.sort_unstable();
        ks.dedup();
        for k in ks {
            for _ in 0..10_000 {
                let u = normal_vec(&mut rng, d);
                let sparse = top_k(&DenseVector::from_vec(u.clone()), k).unwrap();
                if sparse.entries() != sort_oracle(&u, k).as_slice() {
                    mismatches += 1;
                }
                let kept = sparse.densify();
                let resid: Vec<f64> = u.iter().zip(kept.iter()).map(|(a, b)| a - b).collect();
                let n2 = sq(&u);
                let ratio = k as f64 / d as f64;
                // Normalized violation; ≤ 1e-12 passes.
                worst_contraction = worst_contraction.max((sq(&resid) - (1.0 - ratio) * n2) / n2);
                worst_lower = worst_lower.max((ratio * n2 - sq(kept.as_slice())) / n2);
                total += 1;
            }
        }
    }
    let passed = mismatches == 0 && worst_contraction <= 1e-12 && worst_lower <= 1e-12;
    outcome(
        passed,
        format!(
            "{total} vectors; oracle mismatches {mismatches}; max contraction excess {worst_contraction:.2e}; max lower-bound excess {worst_lower:.2e}"
        ),
    )
}

fn a2_memory() -> Outcome {
    let mut rng = RngStream::new(77, 9);
    let d = 40;
    let mut mem = MemoryState::zeros(d);
    let mut violations = 0;
    for step in 0..1000 {
        let g = DenseVector::from_vec(normal_vec(&mut rng, d));
        let k = 1 + step % d;
        let expected: Vec<f64> = mem
            .vector()
            .iter()
            .zip(g.iter())
            .map(|(m, g)| m + g)
            .collect();
        let (update, next) = memory_combine(&mem, &g, k).unwrap();
        let got: Vec<f64> = update
            .densify()
            .iter()
            .zip(next.vector().iter())
            .map(|(u, m)| u + m)
            .collect();
        if got
            .iter()
            .zip(&expected)
            .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            violations += 1;
        }
        mem = next;
    }

    // k = d against ASGD through the whole asynchronous pipeline.
    let obj =
        synthetic_quadratic(vec![0.5, 1.0, 1.5, 2.0, 3.0, 4.0], 64, 1.0, 0.5, 1.0, 4).unwrap();
    let run = |variant| {
        let spec = SimSpec {
            variant,
            k: 6,
            workers: 4,
            batch_size: 8,
            budget: 300,
            schedule: LrSchedule::Constant { eta: 0.05 },
            momentum: 0.5,
            seed: 12,
            sample_every: None,
            track_stale: false,
            mu_window: None,
        };
        let delays = DelayConfig {
            delay_variance: 1.0,
            seed: 12,
            ..Default::default()
        };
        run_simulation(&spec, &obj, &mut StochasticDelays::new(delays, 4).unwrap()).unwrap()
    };
    let asgd = run(Variant::Asgd);
    let mem_run = run(Variant::PhiMemSgd);
    let same_x = asgd
        .x
        .iter()
        .zip(mem_run.x.iter())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let same_records = asgd.records == mem_run.records;

    // Step-level trajectory with an explicit memory that must stay zero.
    let mut ra = UpdateRule::new(Variant::Asgd, d, d, 0.0).unwrap();
    let mut rm = UpdateRule::new(Variant::PhiMemSgd, d, d, 0.0).unwrap();
    let mut xa = DenseVector::from_vec(normal_vec(&mut rng, d));
    let mut xm = xa.clone();
    let mut m = MemoryState::zeros(d);
    let mut step_ok = true;
    for _ in 0..1000 {
        let g = DenseVector::from_vec(normal_vec(&mut rng, d));
        let (na, _, _) = ra.apply_update(&xa, &g, None, 0.01).unwrap();
        let (nm, _, mm) = rm.apply_update(&xm, &g, Some(&m), 0.01).unwrap();
        m = mm.unwrap();
        step_ok &= na == nm && m.vector().iter().all(|v| *v == 0.0);
        xa = na;
        xm = nm;
    }
    outcome(
        violations == 0 && same_x && same_records && step_ok,
        format!(
            "conservation violations {violations}/1000; k=d simulation bit-identical: {}; k=d step trajectory identical with zero memory: {step_ok}",
            same_x && same_records
        ),
    )
}

fn a3_three_workers() -> Outcome {
    let path = repo_root().join("configs/three-workers.toml");
    let cfg = match RunConfig::load(&path) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("{}: {e}", path.display())),
    };
    let out = run_config(&cfg).unwrap();
    let csv = out.csv().unwrap();
    let column: Vec<String> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(7).unwrap().to_string())
        .collect();
    let passed = column == ["0", "1", "2", "2", "2"];
    outcome(passed, format!("staleness column {column:?}"))
}

/// Hand simulation for N identical workers with a constant cycle: arrivals
/// go round-robin, and the update from the j-th arrival (1-based) was
/// computed on the model version the worker last received.
fn round_robin_oracle(n: usize, updates: usize) -> Vec<u64> {
    let mut held = vec![0u64; n];
    let mut out = Vec::new();
    for u in 0..updates {
        let w = u % n;
        out.push(u as u64 - held[w]);
        held[w] = u as u64 + 1;
    }
    out
}

fn a4_staleness() -> Outcome {
    let seeds = 20;
    let tau_at = |var: f64, compute: f64, updates: u64| {
        let per: Vec<f64> = (0..seeds)
            .map(|seed| {
                let cfg = DelayConfig {
                    delay_variance: var,
                    compute_lo: compute * 0.9,
                    compute_hi: compute * 1.1,
                    seed,
                };
                let r = simulate_timeline(8, updates, &mut StochasticDelays::new(cfg, 8).unwrap())
                    .unwrap();
                avg_staleness(&r).unwrap()
            })
            .collect();
        mean(&per).unwrap()
    };
    // Five epochs of 60000 rows at batch 64, compute time U(0.9, 1.1).
    let updates = 4688;
    let tau = |var: f64| tau_at(var, 1.0, updates);
    let low = tau(0.1);
    let mid = tau(1.0);
    let high = tau(3.0);
    let mut oracle_ok = true;
    for n in 2..=4 {
        let mut fixed = FixedDelays {
            cycle: Cycle {
                compute: 1.0,
                comm: 1.0,
            },
        };
        let sim: Vec<u64> = simulate_timeline(n, 60, &mut fixed)
            .unwrap()
            .iter()
            .map(|r| r.staleness)
            .collect();
        let oracle = round_robin_oracle(n, 60);
        oracle_ok &= sim == oracle && oracle[n..].iter().all(|&t| t == n as u64 - 1);
    }
    let passed = (6.5..=7.5).contains(&low) && high < low - 1.0 && oracle_ok;
    // Not asserted: a large drop at σ² = 3 appears only when runs are short
    // enough for the slowest workers' final round trips to be cut off.
    let short_low = tau_at(0.1, 0.0, 200);
    let short_high = tau_at(3.0, 0.0, 200);
    outcome(
        passed,
        format!(
            "8 workers, {updates} updates, {seeds} seeds: τ̄(0.1) = {low:.3}, τ̄(1) = {mid:.3}, τ̄(3) = {high:.3} (gap {:.3}, need > 1); homogeneous N=2,3,4 oracle match: {oracle_ok}; not asserted, 200 updates with zero compute: τ̄(0.1) = {short_low:.3}, τ̄(3) = {short_high:.3}",
            low - high
        ),
    )
}

/// Largest relative error between analytic and central-difference partials.
fn fd_error(obj: &dyn Objective, rng: &mut RngStream) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let x0 = obj.initial_point(rng);
        let x = DenseVector::from_vec(
            x0.iter()
                .map(|v| v + 0.05 * rng.next_standard_normal())
                .collect(),
        );
        let g = full_gradient(obj, &x).unwrap();
        for _ in 0..20 {
            let j = rng.next_index(obj.dim());
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fd = (loss(obj, &xp, Batch::Full).unwrap() - loss(obj, &xm, Batch::Full).unwrap())
                / (2.0 * h);
            let scale = g[j].abs().max(fd.abs()).max(1e-4);
            worst = worst.max((fd - g[j]).abs() / scale);
        }
    }
    worst
}

fn a5_gradients() -> Outcome {
    let mut rng = RngStream::new(5, 55);
    let root = repo_root().join("data/mnist-10k");
    let mnist = load_mnist_idx(
        root.join("train-images-idx3-ubyte.gz"),
        root.join("train-labels-idx1-ubyte.gz"),
    )
    .unwrap()
    .head(200);
    let mnist = Arc::new(mnist);
    let blobs = Arc::new(synthetic_blobs(5, 200, 12, 2.0, 3).unwrap());
    let objectives: Vec<(&str, Box<dyn Objective>)> = vec![
        (
            "quadratic",
            Box::new(
                synthetic_quadratic(vec![0.5, 1.0, 2.0, 4.0, 8.0], 30, 1.0, 0.0, 1.0, 1).unwrap(),
            ),
        ),
        (
            "perturbed_quadratic",
            Box::new(verification_objective().unwrap()),
        ),
        (
            "logistic_blobs",
            Box::new(LogisticRegression::new(blobs.clone())),
        ),
        (
            "logistic_mnist",
            Box::new(LogisticRegression::new(mnist.clone())),
        ),
        ("mlp_blobs", Box::new(Mlp::new(blobs, 16))),
        ("mlp_mnist", Box::new(Mlp::new(mnist, 128))),
    ];
    let mut parts = Vec::new();
    let mut passed = true;
    for (name, obj) in &objectives {
        let e = fd_error(obj.as_ref(), &mut rng);
        passed &= e <= 1e-5;
        parts.push(format!("{name} {e:.1e}"));
    }
    outcome(passed, format!("max relative error: {}", parts.join(", ")))
}

fn a6_bounds() -> Outcome {
    let q = verification_objective().unwrap();
    let horizons = [100u64, 1000, 10_000];
    let mut all_hold = true;
    let mut details = Vec::new();
    let mut slopes_ok = true;
    for workers in [1usize, 8] {
        for rho in [0.1, 1.0] {
            let mut mins = Vec::new();
            for &t in &horizons {
                let c = check_bound(&q, &BoundCheckConfig::new(workers, rho, t)).unwrap();
                all_hold &= c.holds();
                if !c.holds() {
                    details.push(format!(
                        "VIOLATED w={workers} ρ={rho} T={t}: {:.3e} > {:.3e}",
                        c.min_grad_norm_sq, c.theorem_bound
                    ));
                }
                mins.push(c.min_grad_norm_sq);
            }
            let xs: Vec<f64> = horizons.iter().map(|&t| t as f64).collect();
            let slope = loglog_slope(&xs, &mins).unwrap();
            let ok = (slope + 0.5).abs() <= 0.15;
            slopes_ok &= ok;
            details.push(format!(
                "slope w={workers} ρ={rho}: {slope:.3}{}",
                if ok { "" } else { " (outside -0.5 ± 0.15)" }
            ));
        }
    }
    let mut max_gap: f64 = 0.0;
    for t in [4u64, 100, 10_000] {
        let inputs = BoundInputs {
            lipschitz: 2.0,
            grad_variance: 3.0,
            mu: 0.6,
            rho: 0.1,
            lambda: 45.0,
            c: 0.2,
            horizon: t,
        };
        let s = LrSchedule::ConstantHorizon {
            rho: 0.1,
            mu: 0.6,
            lipschitz: 2.0,
            horizon: t,
        };
        let a = theorem_bound(&inputs, &s).unwrap();
        let b = corollary_bound(&inputs).unwrap();
        max_gap = max_gap.max(((a - b) / b).abs());
    }
    details.push(format!("theorem/corollary max relative gap {max_gap:.1e}"));
    outcome(
        all_hold && slopes_ok && max_gap <= 1e-9,
        format!(
            "bound holds in all 12 configs: {all_hold}; all slopes within tolerance: {slopes_ok}; {}",
            details.join("; ")
        ),
    )
}

struct Sweep {
    asgd: f64,
    acc: BTreeMap<(String, u64), f64>,
    mu: BTreeMap<(String, u64), f64>,
}

const RHOS: [f64; 7] = [0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0];

fn rho_key(rho: f64) -> u64 {
    (rho * 1e6).round() as u64
}

fn mnist_sweep() -> Sweep {
    let data = repo_root().join("data/mnist-10k");
    let base = format!(
        "objective = \"mlp\"\ndataset = \"{}\"\nhidden = 128\nworkers = 8\ndelay_variance = 0.1\nepochs = 2.0\nbatch_size = 64\nlr = 0.01\nmomentum = 0.5\nsample_every = 50\n",
        data.display()
    );
    let asgd =
        GridSpec::from_toml_str(&format!("seeds = 5\n[base]\n{base}variant = \"asgd\"\n")).unwrap();
    let sweep = GridSpec::from_toml_str(&format!(
        "seeds = 5\n[base]\n{base}[axes]\nvariant = [\"phi_sgd\", \"phi_mem_sgd\"]\nrho = {RHOS:?}\n"
    ))
    .unwrap();
    let asgd_report = run_grid(&asgd, 1, None, None).unwrap();
    let report = run_grid(&sweep, 1, None, None).unwrap();
    let mut acc = BTreeMap::new();
    let mut mu = BTreeMap::new();
    for c in &report.cells {
        acc.insert(
            (c.variant.clone(), rho_key(c.rho)),
            c.mean_accuracy.unwrap(),
        );
        mu.insert((c.variant.clone(), rho_key(c.rho)), c.mean_mu_hat.unwrap());
    }
    Sweep {
        asgd: asgd_report.cells[0].mean_accuracy.unwrap(),
        acc,
        mu,
    }
}

fn a7_trends(s: &Sweep) -> Outcome {
    let mem: Vec<(u64, f64)> = s
        .acc
        .iter()
        .filter(|((v, _), _)| v == "phi_mem_sgd")
        .map(|((_, r), a)| (*r, *a))
        .collect();
    let &(best_rho, best) = mem.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let &(best_rho_sparse, best_sparse) = mem
        .iter()
        .filter(|(r, _)| *r < rho_key(1.0))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let mem1 = s.acc[&("phi_mem_sgd".to_string(), rho_key(0.01))];
    let phi1 = s.acc[&("phi_sgd".to_string(), rho_key(0.01))];
    let gap = (best - s.asgd).abs() * 100.0;
    let passed = gap <= 1.5 && mem1 > phi1;
    outcome(
        passed,
        format!(
            "ASGD {:.2}%; φMemSGD best ρ={} {:.2}% (gap {gap:.2} pts; best ρ<1: ρ={} {:.2}%); ρ=1%: φMemSGD {:.2}% vs φSGD {:.2}%",
            s.asgd * 100.0,
            best_rho as f64 / 1e6,
            best * 100.0,
            best_rho_sparse as f64 / 1e6,
            best_sparse * 100.0,
            mem1 * 100.0,
            phi1 * 100.0
        ),
    )
}

fn a8_determinism() -> Outcome {
    let cfg = RunConfig::from_toml_str(
        "objective = \"mlp\"\nclasses = 4\nfeatures = 10\nsamples = 400\ntest_rows = 100\nhidden = 16\n\
         variant = \"phi_mem_sgd\"\nrho = 0.05\nworkers = 6\ndelay_variance = 1.0\nupdates = 150\n\
         batch_size = 16\nlr = 0.05\nsample_every = 10\nseed = 99\n",
    )
    .unwrap();
    let a = run_config(&cfg).unwrap().csv().unwrap();
    let b = run_config(&cfg).unwrap().csv().unwrap();
    let repeat_ok = a == b;

    let grid = |axes: &str| {
        format!(
            "seeds = 2\n[base]\nobjective = \"perturbed_quadratic\"\nperturbation = 0.5\ndim = 12\nsamples = 100\n\
             batch_size = 4\nupdates = 80\nworkers = 4\ndelay_variance = 1.0\nlr = 0.05\n[axes]\n{axes}"
        )
    };
    let forward = GridSpec::from_toml_str(&grid(
        "rho = [0.1, 0.5]\nvariant = [\"phi_sgd\", \"phi_mem_sgd\"]\n",
    ))
    .unwrap();
    let reversed = GridSpec::from_toml_str(&grid(
        "rho = [0.5, 0.1]\nvariant = [\"phi_mem_sgd\", \"phi_sgd\"]\n",
    ))
    .unwrap();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    run_grid(&forward, 1, None, Some(d1.path())).unwrap();
    run_grid(&reversed, 3, None, Some(d2.path())).unwrap();
    let read_cells = |dir: &Path| -> BTreeMap<String, Vec<u8>> {
        std::fs::read_dir(dir.join("cells"))
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect()
    };
    let c1 = read_cells(d1.path());
    let c2 = read_cells(d2.path());
    let grid_ok = c1.len() == 8 && c1 == c2;
    outcome(
        repeat_ok && grid_ok,
        format!(
            "repeat run byte-identical: {repeat_ok} ({} bytes); {} cell files identical across cell order and thread count: {grid_ok}",
            a.len(),
            c1.len()
        ),
    )
}

fn a9_mu(s: &Sweep) -> Outcome {
    // No staleness, full batch, k = d.
    let obj = synthetic_quadratic(vec![0.5, 0.7, 1.0, 1.3], 40, 1.0, 0.8, 1.0, 8).unwrap();
    let spec = SimSpec {
        variant: Variant::PhiSgd,
        k: 4,
        workers: 1,
        batch_size: 40,
        budget: 200,
        schedule: LrSchedule::Constant { eta: 0.1 },
        momentum: 0.0,
        seed: 1,
        sample_every: Some(1),
        track_stale: false,
        mu_window: None,
    };
    let r = run_simulation(
        &spec,
        &obj,
        &mut StochasticDelays::new(DelayConfig::default(), 1).unwrap(),
    )
    .unwrap();
    let exact = r.mu_hat == Some(1.0) && r.records.iter().all(|x| x.mu_hat == Some(1.0));

    let phi = |rho: f64| s.mu[&("phi_sgd".to_string(), rho_key(rho))];
    let mu_trend = phi(0.01) < phi(0.5);
    let xs: Vec<f64> = RHOS.iter().map(|&r| (r * phi(r)).powi(2)).collect();
    let ys: Vec<f64> = RHOS
        .iter()
        .map(|&r| s.acc[&("phi_sgd".to_string(), rho_key(r))])
        .collect();
    let rho_s = spearman(&xs, &ys).unwrap();
    let mem_mu = |rho: f64| s.mu[&("phi_mem_sgd".to_string(), rho_key(rho))];
    let mem_xs: Vec<f64> = RHOS.iter().map(|&r| (r * mem_mu(r)).powi(2)).collect();
    let mem_ys: Vec<f64> = RHOS
        .iter()
        .map(|&r| s.acc[&("phi_mem_sgd".to_string(), rho_key(r))])
        .collect();
    let mem_rho_s = spearman(&mem_xs, &mem_ys).unwrap();
    outcome(
        exact && mu_trend && rho_s >= 0.8,
        format!(
            "μ̂ = 1 exactly without staleness/sparsity/noise: {exact}; φSGD μ̂(1%) = {:.3} vs μ̂(50%) = {:.3}; Spearman((ρμ̂)², acc) φSGD = {rho_s:.3} (φMemSGD {mem_rho_s:.3})",
            phi(0.01),
            phi(0.5)
        ),
    )
}

fn report(name: &str, started: Instant, o: Outcome, failures: &mut usize) {
    let elapsed: Duration = started.elapsed();
    let status = if o.passed { "PASS" } else { "FAIL" };
    if !o.passed {
        *failures += 1;
    }
    println!(
        "{name} {status} [{:.1}s] {}",
        elapsed.as_secs_f64(),
        o.detail
    );
}

type Named = (&'static str, fn() -> Outcome);

fn main() {
    let mut failures = 0;
    let checks: [Named; 6] = [
        ("A1 sparsifier laws", a1_sparsifier_laws),
        ("A2 memory conservation", a2_memory),
        ("A3 three-worker golden run", a3_three_workers),
        ("A4 staleness statistics", a4_staleness),
        ("A5 gradient correctness", a5_gradients),
        ("A6 bound validity", a6_bounds),
    ];
    for (name, f) in checks {
        let t = Instant::now();
        report(name, t, f(), &mut failures);
    }
    let t = Instant::now();
    let sweep = mnist_sweep();
    println!(
        "   MNIST sweep finished in {:.1}s",
        t.elapsed().as_secs_f64()
    );
    report(
        "A7 desk-scale accuracy trends",
        t,
        a7_trends(&sweep),
        &mut failures,
    );
    let t = Instant::now();
    report("A8 determinism", t, a8_determinism(), &mut failures);
    let t = Instant::now();
    report("A9 cosine estimate", t, a9_mu(&sweep), &mut failures);
    if failures > 0 {
        println!("{failures} acceptance check(s) failed");
        std::process::exit(1);
    }
    println!("all acceptance checks passed");
}
