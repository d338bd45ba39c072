//! Parameter-server update rules for ASGD, φSGD and φMemSGD, and the
//! learning-rate schedules used for bound verification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::DenseVector;
use crate::sparsifier::{top_k, MemoryState, SparseUpdate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain asynchronous SGD: dense gradients on the wire.
    Asgd,
    /// Memory-less top-k sparsified SGD.
    PhiSgd,
    /// Top-k sparsified SGD with per-worker error feedback.
    PhiMemSgd,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Asgd => "asgd",
            Variant::PhiSgd => "phi_sgd",
            Variant::PhiMemSgd => "phi_mem_sgd",
        }
    }

    pub fn uses_memory(self) -> bool {
        matches!(self, Variant::PhiMemSgd)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// What a worker puts on the wire.
#[derive(Debug, Clone, PartialEq)]
pub enum Transmission {
    Dense(DenseVector),
    Sparse(SparseUpdate),
}

impl Transmission {
    pub fn dim(&self) -> usize {
        match self {
            Transmission::Dense(v) => v.len(),
            Transmission::Sparse(s) => s.dim(),
        }
    }

    pub fn to_dense(&self) -> DenseVector {
        match self {
            Transmission::Dense(v) => v.clone(),
            Transmission::Sparse(s) => s.densify(),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        match self {
            Transmission::Dense(v) => v.norm_sq(),
            Transmission::Sparse(s) => s.norm_sq(),
        }
    }

    pub fn dot_dense(&self, other: &DenseVector) -> Result<f64> {
        match self {
            Transmission::Dense(v) => v.dot(other),
            Transmission::Sparse(s) => s.dot_dense(other),
        }
    }

    /// Number of coordinates sent.
    pub fn payload_len(&self) -> usize {
        match self {
            Transmission::Dense(v) => v.len(),
            Transmission::Sparse(s) => s.len(),
        }
    }
}

/// Worker side of an update: turns a stochastic gradient into the message
/// sent to the parameter server. φMemSGD folds `g` into `mem` first.
pub fn worker_transmit(
    variant: Variant,
    k: usize,
    g: DenseVector,
    mem: Option<&mut MemoryState>,
) -> Result<Transmission> {
    match (variant, mem) {
        (Variant::Asgd, _) => Ok(Transmission::Dense(g)),
        (Variant::PhiSgd, _) => Ok(Transmission::Sparse(top_k(&g, k)?)),
        (Variant::PhiMemSgd, Some(mem)) => Ok(Transmission::Sparse(mem.combine(&g, k)?)),
        (Variant::PhiMemSgd, None) => Err(Error::config(
            "variant",
            "phi_mem_sgd requires a memory state",
        )),
    }
}

/// Parameter-server update state. Momentum, when non-zero, is applied after
/// sparsification: `v ← γv + u`, `x ← x − ηv`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRule {
    variant: Variant,
    k: usize,
    momentum: f64,
    velocity: DenseVector,
}

impl UpdateRule {
    pub fn new(variant: Variant, dim: usize, k: usize, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(
                "momentum",
                format!("{momentum} is not in [0, 1)"),
            ));
        }
        if variant != Variant::Asgd && (k == 0 || k > dim) {
            return Err(Error::invalid(format!("k={k} outside [1, d={dim}]")));
        }
        Ok(UpdateRule {
            variant,
            k,
            momentum,
            velocity: DenseVector::zeros(dim),
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn velocity(&self) -> &DenseVector {
        &self.velocity
    }

    /// Applies a received message to the iterate in place.
    pub fn apply_transmission(
        &mut self,
        x: &mut DenseVector,
        msg: &Transmission,
        eta: f64,
    ) -> Result<()> {
        x.ensure_len(self.velocity.len())?;
        if msg.dim() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: msg.dim(),
            });
        }
        if self.momentum == 0.0 {
            match msg {
                Transmission::Dense(u) => {
                    for (xi, ui) in x.as_mut_slice().iter_mut().zip(u.iter()) {
                        *xi -= eta * ui;
                    }
                }
                Transmission::Sparse(s) => {
                    for &(i, ui) in s.entries() {
                        x[i] -= eta * ui;
                    }
                }
            }
            return Ok(());
        }
        let gamma = self.momentum;
        for v in self.velocity.as_mut_slice() {
            *v *= gamma;
        }
        match msg {
            Transmission::Dense(u) => self.velocity.axpy(1.0, u)?,
            Transmission::Sparse(s) => s.axpy_into(1.0, &mut self.velocity)?,
        }
        for (xi, vi) in x.as_mut_slice().iter_mut().zip(self.velocity.iter()) {
            *xi -= eta * vi;
        }
        Ok(())
    }

    /// One full update: worker transmission followed by the server step.
    /// Returns the next iterate, what was sent, and the next memory.
    pub fn apply_update(
        &mut self,
        x: &DenseVector,
        g: &DenseVector,
        mem: Option<&MemoryState>,
        eta: f64,
    ) -> Result<(DenseVector, Transmission, Option<MemoryState>)> {
        g.ensure_len(x.len())?;
        let mut next_mem = match (self.variant, mem) {
            (Variant::PhiMemSgd, None) => {
                return Err(Error::config(
                    "variant",
                    "phi_mem_sgd requires a memory state",
                ))
            }
            (Variant::PhiMemSgd, Some(m)) => Some(m.clone()),
            _ => None,
        };
        let msg = worker_transmit(self.variant, self.k, g.clone(), next_mem.as_mut())?;
        let mut next = x.clone();
        self.apply_transmission(&mut next, &msg, eta)?;
        Ok((next, msg, next_mem))
    }
}

/// Learning-rate schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// Fixed step `eta`.
    Constant { eta: f64 },
    /// `ρμ / (L √(t+1))`.
    InverseSqrt { rho: f64, mu: f64, lipschitz: f64 },
    /// `ρμ / (L √T)` for a fixed horizon `T`.
    ConstantHorizon {
        rho: f64,
        mu: f64,
        lipschitz: f64,
        horizon: u64,
    },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Constant { eta } => eta > 0.0 && eta.is_finite(),
            LrSchedule::InverseSqrt { rho, mu, lipschitz } => {
                rho > 0.0 && mu > 0.0 && lipschitz > 0.0
            }
            LrSchedule::ConstantHorizon {
                rho,
                mu,
                lipschitz,
                horizon,
            } => rho > 0.0 && mu > 0.0 && lipschitz > 0.0 && horizon >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("lr", format!("invalid schedule {self:?}")))
        }
    }

    pub fn lr_at(&self, t: u64) -> Result<f64> {
        self.validate()?;
        Ok(match *self {
            LrSchedule::Constant { eta } => eta,
            LrSchedule::InverseSqrt { rho, mu, lipschitz } => {
                rho * mu / (lipschitz * ((t + 1) as f64).sqrt())
            }
            LrSchedule::ConstantHorizon {
                rho,
                mu,
                lipschitz,
                horizon,
            } => rho * mu / (lipschitz * (horizon as f64).sqrt()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DenseVector {
        DenseVector::from(x.to_vec())
    }

    #[test]
    fn schedule_plug_in_values() {
        let inv = LrSchedule::InverseSqrt {
            rho: 1.0,
            mu: 1.0,
            lipschitz: 1.0,
        };
        assert_eq!(inv.lr_at(0).unwrap(), 1.0);
        assert_eq!(inv.lr_at(3).unwrap(), 0.5);
        let cst = LrSchedule::ConstantHorizon {
            rho: 1.0,
            mu: 1.0,
            lipschitz: 1.0,
            horizon: 4,
        };
        assert_eq!(cst.lr_at(17).unwrap(), 0.5);
        assert_eq!(LrSchedule::Constant { eta: 0.01 }.lr_at(9).unwrap(), 0.01);
        assert!(LrSchedule::Constant { eta: 0.0 }.lr_at(0).is_err());
    }

    #[test]
    fn inverse_sqrt_strictly_decreasing() {
        let s = LrSchedule::InverseSqrt {
            rho: 0.3,
            mu: 0.7,
            lipschitz: 2.0,
        };
        let mut prev = f64::INFINITY;
        for t in 0..10_000 {
            let e = s.lr_at(t).unwrap();
            assert!(e > 0.0 && e < prev);
            prev = e;
        }
    }

    #[test]
    fn asgd_step() {
        let mut r = UpdateRule::new(Variant::Asgd, 2, 2, 0.0).unwrap();
        let (x, _, _) = r
            .apply_update(&v(&[1.0, 1.0]), &v(&[1.0, 0.0]), None, 0.5)
            .unwrap();
        assert_eq!(x.as_slice(), &[0.5, 1.0]);
    }

    #[test]
    fn phi_sgd_moves_only_top_coordinate() {
        let mut r = UpdateRule::new(Variant::PhiSgd, 2, 1, 0.0).unwrap();
        let (x, msg, _) = r
            .apply_update(&v(&[1.0, 1.0]), &v(&[3.0, 1.0]), None, 1.0)
            .unwrap();
        assert_eq!(x.as_slice(), &[-2.0, 1.0]);
        assert_eq!(msg.payload_len(), 1);
    }

    #[test]
    fn phi_sgd_full_k_matches_asgd_bitwise() {
        for momentum in [0.0, 0.5] {
            let mut a = UpdateRule::new(Variant::Asgd, 3, 3, momentum).unwrap();
            let mut p = UpdateRule::new(Variant::PhiSgd, 3, 3, momentum).unwrap();
            let mut xa = v(&[0.3, -1.2, 5.0]);
            let mut xp = xa.clone();
            for step in 0..20 {
                let g = v(&[
                    (step as f64).sin(),
                    0.1 * step as f64,
                    -1.0 / (step + 1) as f64,
                ]);
                xa = a.apply_update(&xa, &g, None, 0.05).unwrap().0;
                xp = p.apply_update(&xp, &g, None, 0.05).unwrap().0;
            }
            assert_eq!(xa, xp);
        }
    }

    #[test]
    fn phi_mem_sgd_trace_matches_memory_combine() {
        let mut r = UpdateRule::new(Variant::PhiMemSgd, 2, 1, 0.0).unwrap();
        let x0 = v(&[0.0, 0.0]);
        let m0 = MemoryState::zeros(2);
        let (x1, msg1, m1) = r
            .apply_update(&x0, &v(&[3.0, 1.0]), Some(&m0), 1.0)
            .unwrap();
        assert_eq!(msg1.to_dense().as_slice(), &[3.0, 0.0]);
        assert_eq!(m1.as_ref().unwrap().vector().as_slice(), &[0.0, 1.0]);
        assert_eq!(x1.as_slice(), &[-3.0, 0.0]);
        let (x2, msg2, m2) = r
            .apply_update(&x1, &v(&[0.5, 1.0]), m1.as_ref(), 1.0)
            .unwrap();
        assert_eq!(msg2.to_dense().as_slice(), &[0.0, 2.0]);
        assert_eq!(m2.unwrap().vector().as_slice(), &[0.5, 0.0]);
        assert_eq!(x2.as_slice(), &[-3.0, -2.0]);
    }

    #[test]
    fn memory_required_for_phi_mem() {
        let mut r = UpdateRule::new(Variant::PhiMemSgd, 2, 1, 0.0).unwrap();
        assert!(matches!(
            r.apply_update(&v(&[0.0, 0.0]), &v(&[1.0, 1.0]), None, 1.0),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let mut r = UpdateRule::new(Variant::Asgd, 1, 1, 0.5).unwrap();
        let (x1, _, _) = r.apply_update(&v(&[0.0]), &v(&[1.0]), None, 1.0).unwrap();
        let (x2, _, _) = r.apply_update(&x1, &v(&[1.0]), None, 1.0).unwrap();
        assert_eq!(x1.as_slice(), &[-1.0]);
        assert_eq!(x2.as_slice(), &[-2.5]);
        assert!(UpdateRule::new(Variant::Asgd, 1, 1, 1.0).is_err());
    }
}
