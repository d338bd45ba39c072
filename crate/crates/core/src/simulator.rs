//! Discrete-event parameter-server simulation.
//!
//! At time 0 every worker holds `x_0` and starts a cycle. When a worker's
//! message arrives the server applies it, producing version `n` from
//! `n − 1` with a gradient computed on version `k`, so the staleness is
//! `n − 1 − k`. The sender immediately receives `x_n` and starts its next
//! cycle. Arrivals at equal times are processed by worker id, then by
//! scheduling order.
//!
//! Each worker's mini-batch gradient is evaluated at the moment it receives
//! its model: it depends only on that model and the batch, so evaluating it
//! early does not change the result, and it keeps per-worker state small.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::delay::DelaySource;
use crate::error::{Error, Result};
use crate::metrics::{MuEstimate, MuUpdate, RunRecord};
use crate::numkit::{DenseVector, RngStream, STREAM_DATA, STREAM_INIT};
use crate::objectives::{full_gradient, minibatch_loss_and_gradient, Minibatch, Objective};
use crate::optimizer::{worker_transmit, LrSchedule, Transmission, UpdateRule, Variant};
use crate::sparsifier::MemoryState;

/// A worker's message in flight to the server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub worker_id: usize,
    /// PS version the gradient was computed on.
    pub model_version_used: u64,
    seq: u64,
}

impl Eq for Event {}

impl Ord for Event {
    // Reversed so that `BinaryHeap` pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.worker_id.cmp(&self.worker_id))
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StalenessRecord {
    /// Version produced by this update, starting at 1.
    pub update_index: u64,
    pub staleness: u64,
    pub worker_id: usize,
    pub arrival_time: f64,
}

/// Callbacks invoked by the event loop.
trait Handler {
    /// `worker` has just received model `version` and starts computing.
    fn dispatch(&mut self, worker: usize, version: u64) -> Result<()>;
    /// The message from `rec.worker_id` is applied, producing `rec.update_index`.
    fn arrive(&mut self, rec: &StalenessRecord) -> Result<()>;
}

struct TimelineOnly;

impl Handler for TimelineOnly {
    fn dispatch(&mut self, _worker: usize, _version: u64) -> Result<()> {
        Ok(())
    }

    fn arrive(&mut self, _rec: &StalenessRecord) -> Result<()> {
        Ok(())
    }
}

fn schedule(
    queue: &mut BinaryHeap<Event>,
    delays: &mut dyn DelaySource,
    seq: &mut u64,
    now: f64,
    worker: usize,
    version: u64,
) -> Result<()> {
    if let Some(cycle) = delays.next_cycle(worker)? {
        let time = now + cycle.total();
        if !time.is_finite() {
            return Err(Error::Simulation(format!(
                "worker {worker} produced time {time}"
            )));
        }
        queue.push(Event {
            time,
            worker_id: worker,
            model_version_used: version,
            seq: *seq,
        });
        *seq += 1;
    }
    Ok(())
}

fn event_loop(
    workers: usize,
    budget: u64,
    delays: &mut dyn DelaySource,
    handler: &mut dyn Handler,
) -> Result<Vec<StalenessRecord>> {
    if workers == 0 {
        return Err(Error::config("workers", "must be at least 1"));
    }
    if budget == 0 {
        return Err(Error::config("updates", "update budget must be at least 1"));
    }
    let mut queue = BinaryHeap::with_capacity(workers);
    let mut seq = 0;
    for w in 0..workers {
        handler.dispatch(w, 0)?;
        schedule(&mut queue, delays, &mut seq, 0.0, w, 0)?;
    }
    let mut version = 0u64;
    let mut records = Vec::with_capacity(budget as usize);
    while version < budget {
        let ev = queue.pop().ok_or_else(|| {
            Error::Simulation(format!(
                "delay source exhausted after {version} of {budget} updates"
            ))
        })?;
        let rec = StalenessRecord {
            update_index: version + 1,
            staleness: version - ev.model_version_used,
            worker_id: ev.worker_id,
            arrival_time: ev.time,
        };
        handler.arrive(&rec)?;
        version += 1;
        records.push(rec);
        if version < budget {
            handler.dispatch(ev.worker_id, version)?;
            schedule(&mut queue, delays, &mut seq, ev.time, ev.worker_id, version)?;
        }
    }
    Ok(records)
}

/// Runs only the timing model: no gradients, no model.
pub fn simulate_timeline(
    workers: usize,
    budget: u64,
    delays: &mut dyn DelaySource,
) -> Result<Vec<StalenessRecord>> {
    event_loop(workers, budget, delays, &mut TimelineOnly)
}

pub fn staleness_histogram(records: &[StalenessRecord]) -> BTreeMap<u64, u64> {
    let mut h = BTreeMap::new();
    for r in records {
        *h.entry(r.staleness).or_insert(0) += 1;
    }
    h
}

pub fn avg_staleness(records: &[StalenessRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("staleness records".into()));
    }
    Ok(records.iter().map(|r| r.staleness as f64).sum::<f64>() / records.len() as f64)
}

pub fn max_staleness(records: &[StalenessRecord]) -> Option<u64> {
    records.iter().map(|r| r.staleness).max()
}

/// Everything the training loop needs besides the objective and the
/// delay source.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub variant: Variant,
    /// Coordinates kept by top-k; ignored by ASGD.
    pub k: usize,
    pub workers: usize,
    pub batch_size: usize,
    pub budget: u64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub seed: u64,
    /// Full-gradient sampling period; `None` disables sampling.
    pub sample_every: Option<u64>,
    /// Also evaluate `‖∇f‖²` at the stale model on sampled updates.
    pub track_stale: bool,
    pub mu_window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub x: DenseVector,
    pub records: Vec<RunRecord>,
    pub staleness: Vec<StalenessRecord>,
    /// `‖∇f(x_T)‖²` when sampling is enabled.
    pub final_full_grad_norm_sq: Option<f64>,
    pub mu_hat: Option<f64>,
    pub mu_skipped: usize,
    pub sim_time: f64,
}

impl RunResult {
    pub fn avg_staleness(&self) -> Result<f64> {
        avg_staleness(&self.staleness)
    }

    pub fn max_staleness(&self) -> Option<u64> {
        max_staleness(&self.staleness)
    }
}

struct Pending {
    msg: Transmission,
    loss: f64,
    mb_grad_norm_sq: f64,
    held_x: Option<DenseVector>,
}

struct Trainer<'a> {
    spec: &'a SimSpec,
    obj: &'a dyn Objective,
    data: RngStream,
    x: DenseVector,
    rule: UpdateRule,
    memories: Vec<Option<MemoryState>>,
    pending: Vec<Option<Pending>>,
    mu: MuEstimate,
    records: Vec<RunRecord>,
}

impl Handler for Trainer<'_> {
    fn dispatch(&mut self, worker: usize, _version: u64) -> Result<()> {
        let batch = Minibatch::sample(self.obj.n_samples(), self.spec.batch_size, &mut self.data)?;
        let (loss, g) = minibatch_loss_and_gradient(self.obj, &self.x, &batch)?;
        if !loss.is_finite() || !g.is_finite() {
            return Err(Error::Simulation(format!(
                "non-finite loss or gradient at worker {worker}; the learning rate is likely too large"
            )));
        }
        let mb_grad_norm_sq = g.norm_sq();
        let msg = worker_transmit(
            self.spec.variant,
            self.spec.k,
            g,
            self.memories[worker].as_mut(),
        )?;
        self.pending[worker] = Some(Pending {
            msg,
            loss,
            mb_grad_norm_sq,
            held_x: self.spec.track_stale.then(|| self.x.clone()),
        });
        Ok(())
    }

    fn arrive(&mut self, rec: &StalenessRecord) -> Result<()> {
        let p = self.pending[rec.worker_id]
            .take()
            .ok_or_else(|| Error::Simulation(format!("worker {} has no message", rec.worker_id)))?;
        let t = rec.update_index - 1;
        let mut record = RunRecord {
            t,
            staleness: rec.staleness,
            eta: self.spec.schedule.lr_at(t)?,
            train_loss: p.loss,
            mb_grad_norm_sq: p.mb_grad_norm_sq,
            full_grad_norm_sq: None,
            stale_full_grad_norm_sq: None,
            cos_t: None,
            mu_hat: None,
            time: rec.arrival_time,
            worker: rec.worker_id,
        };
        if self.spec.sample_every.is_some_and(|f| t.is_multiple_of(f)) {
            let full = full_gradient(self.obj, &self.x)?;
            record.full_grad_norm_sq = Some(full.norm_sq());
            if let MuUpdate::Recorded { cos, mu_hat } = self.mu.update(&p.msg, &full)? {
                record.cos_t = Some(cos);
                record.mu_hat = Some(mu_hat);
            }
            if let Some(held) = &p.held_x {
                record.stale_full_grad_norm_sq = Some(full_gradient(self.obj, held)?.norm_sq());
            }
        }
        self.rule
            .apply_transmission(&mut self.x, &p.msg, record.eta)?;
        self.records.push(record);
        Ok(())
    }
}

/// Trains `obj` under the asynchronous protocol. Identical inputs give a
/// bit-identical result.
pub fn run_simulation(
    spec: &SimSpec,
    obj: &dyn Objective,
    delays: &mut dyn DelaySource,
) -> Result<RunResult> {
    spec.schedule.validate()?;
    if spec.sample_every == Some(0) {
        return Err(Error::config("sample_every", "must be at least 1"));
    }
    let d = obj.dim();
    let x0 = obj.initial_point(&mut RngStream::new(spec.seed, STREAM_INIT));
    let mut trainer = Trainer {
        spec,
        obj,
        data: RngStream::new(spec.seed, STREAM_DATA),
        x: x0,
        rule: UpdateRule::new(spec.variant, d, spec.k, spec.momentum)?,
        memories: (0..spec.workers)
            .map(|_| spec.variant.uses_memory().then(|| MemoryState::zeros(d)))
            .collect(),
        pending: (0..spec.workers).map(|_| None).collect(),
        mu: MuEstimate::new(spec.mu_window)?,
        records: Vec::with_capacity(spec.budget as usize),
    };
    let staleness = event_loop(spec.workers, spec.budget, delays, &mut trainer)?;
    let final_full_grad_norm_sq = match spec.sample_every {
        Some(_) => Some(full_gradient(obj, &trainer.x)?.norm_sq()),
        None => None,
    };
    Ok(RunResult {
        sim_time: staleness.last().map_or(0.0, |r| r.arrival_time),
        final_full_grad_norm_sq,
        mu_hat: trainer.mu.value(),
        mu_skipped: trainer.mu.skipped(),
        x: trainer.x,
        records: trainer.records,
        staleness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::{Cycle, DelayConfig, FixedDelays, ScriptedDelays, StochasticDelays};
    use crate::objectives::synthetic_quadratic;

    fn fixed() -> FixedDelays {
        FixedDelays {
            cycle: Cycle {
                compute: 0.0,
                comm: 1.0,
            },
        }
    }

    fn taus(r: &[StalenessRecord]) -> Vec<u64> {
        r.iter().map(|r| r.staleness).collect()
    }

    #[test]
    fn three_worker_script() {
        let mut s = ScriptedDelays::from_pairs(
            3,
            &[(0, 1.0), (1, 2.0), (2, 3.0), (0, 2.5), (1, 2.0), (2, 5.0)],
        )
        .unwrap();
        let r = simulate_timeline(3, 5, &mut s).unwrap();
        assert_eq!(taus(&r), vec![0, 1, 2, 2, 2]);
        assert_eq!(
            r.iter().map(|r| r.worker_id).collect::<Vec<_>>(),
            vec![0, 1, 2, 0, 1]
        );
    }

    #[test]
    fn single_worker_is_sequential() {
        let mut d = StochasticDelays::new(DelayConfig::default(), 1).unwrap();
        let r = simulate_timeline(1, 50, &mut d).unwrap();
        assert!(r.iter().all(|r| r.staleness == 0));
        assert_eq!(staleness_histogram(&r), BTreeMap::from([(0, 50)]));
    }

    #[test]
    fn ties_resolve_by_worker_id() {
        let r = simulate_timeline(4, 12, &mut fixed()).unwrap();
        assert_eq!(taus(&r), vec![0, 1, 2, 3, 3, 3, 3, 3, 3, 3, 3, 3]);
    }

    #[test]
    fn exhausted_script_and_bad_sizes_error() {
        let mut s = ScriptedDelays::from_pairs(1, &[(0, 1.0)]).unwrap();
        assert!(matches!(
            simulate_timeline(1, 2, &mut s),
            Err(Error::Simulation(_))
        ));
        assert!(matches!(
            simulate_timeline(0, 2, &mut fixed()),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            simulate_timeline(2, 0, &mut fixed()),
            Err(Error::Config { .. })
        ));
        assert!(avg_staleness(&[]).is_err());
    }

    #[test]
    fn histogram_mean_matches_average() {
        let cfg = DelayConfig {
            delay_variance: 1.0,
            seed: 11,
            ..Default::default()
        };
        let r = simulate_timeline(8, 2000, &mut StochasticDelays::new(cfg, 8).unwrap()).unwrap();
        let h = staleness_histogram(&r);
        assert_eq!(h.values().sum::<u64>(), 2000);
        let hist_mean = h.iter().map(|(t, c)| (*t * *c) as f64).sum::<f64>() / 2000.0;
        assert!((hist_mean - avg_staleness(&r).unwrap()).abs() < 1e-12);
        let versions: Vec<u64> = r.iter().map(|r| r.update_index).collect();
        assert_eq!(versions, (1..=2000).collect::<Vec<_>>());
        assert!(r.windows(2).all(|w| w[0].arrival_time <= w[1].arrival_time));
    }

    fn spec(variant: Variant, workers: usize) -> SimSpec {
        SimSpec {
            variant,
            k: 3,
            workers,
            batch_size: 4,
            budget: 40,
            schedule: LrSchedule::Constant { eta: 0.1 },
            momentum: 0.0,
            seed: 5,
            sample_every: Some(10),
            track_stale: true,
            mu_window: None,
        }
    }

    #[test]
    fn training_timeline_matches_timeline_only() {
        let obj = synthetic_quadratic(vec![1.0; 6], 20, 1.0, 0.0, 1.0, 2).unwrap();
        let cfg = DelayConfig {
            delay_variance: 1.0,
            seed: 5,
            ..Default::default()
        };
        let full = run_simulation(
            &spec(Variant::PhiMemSgd, 4),
            &obj,
            &mut StochasticDelays::new(cfg, 4).unwrap(),
        )
        .unwrap();
        let timeline =
            simulate_timeline(4, 40, &mut StochasticDelays::new(cfg, 4).unwrap()).unwrap();
        assert_eq!(full.staleness, timeline);
        assert_eq!(full.records.len(), 40);
        let sampled: Vec<u64> = full
            .records
            .iter()
            .filter(|r| r.full_grad_norm_sq.is_some())
            .map(|r| r.t)
            .collect();
        assert_eq!(sampled, vec![0, 10, 20, 30]);
        assert!(full
            .records
            .iter()
            .all(|r| r.full_grad_norm_sq.is_some() == r.stale_full_grad_norm_sq.is_some()));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let obj = synthetic_quadratic(vec![1.0, 2.0, 3.0, 4.0], 16, 1.0, 0.1, 1.0, 9).unwrap();
        let run = |seed| {
            let mut s = spec(Variant::PhiSgd, 3);
            s.seed = seed;
            let cfg = DelayConfig {
                seed,
                ..Default::default()
            };
            run_simulation(&s, &obj, &mut StochasticDelays::new(cfg, 3).unwrap()).unwrap()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1).x, run(2).x);
    }

    #[test]
    fn one_worker_stale_norm_equals_current() {
        let obj = synthetic_quadratic(vec![0.5, 1.0, 2.0], 12, 1.0, 0.0, 1.0, 1).unwrap();
        let r = run_simulation(&spec(Variant::Asgd, 1), &obj, &mut fixed()).unwrap();
        for rec in r.records.iter().filter(|r| r.full_grad_norm_sq.is_some()) {
            assert_eq!(rec.full_grad_norm_sq, rec.stale_full_grad_norm_sq);
        }
    }

    #[test]
    fn full_batch_dense_mu_is_one() {
        let obj = synthetic_quadratic(vec![0.5, 1.0, 2.0], 12, 1.0, 0.3, 1.0, 1).unwrap();
        let mut s = spec(Variant::PhiMemSgd, 1);
        s.k = 3;
        s.batch_size = 12;
        s.sample_every = Some(1);
        let r = run_simulation(&s, &obj, &mut fixed()).unwrap();
        assert_eq!(r.mu_hat, Some(1.0));
        assert!(r.records.iter().all(|r| r.cos_t == Some(1.0)));
    }
}
