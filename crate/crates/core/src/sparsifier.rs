//! Top-k sparsification and the error-feedback memory accumulator.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::DenseVector;

/// Relative slack used by the contraction and lower-bound checks.
pub const CHECK_SLACK: f64 = 1e-12;

/// Coordinates kept by a top-k selection, with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseUpdate {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseUpdate {
    pub fn new(dim: usize, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.sort_by_key(|&(i, _)| i);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("duplicate index in sparse update"));
        }
        if let Some(&(i, _)) = entries.last() {
            if i >= dim {
                return Err(Error::invalid(format!("index {i} out of range [0, {dim})")));
            }
        }
        Ok(SparseUpdate { dim, entries })
    }

    /// Every coordinate of `u`, in order.
    pub fn from_dense(u: &DenseVector) -> Self {
        SparseUpdate {
            dim: u.len(),
            entries: u.iter().copied().enumerate().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn densify(&self) -> DenseVector {
        let mut out = DenseVector::zeros(self.dim);
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum()
    }

    /// `⟨self, other⟩` without densifying.
    pub fn dot_dense(&self, other: &DenseVector) -> Result<f64> {
        other.ensure_len(self.dim)?;
        Ok(self.entries.iter().map(|&(i, v)| v * other[i]).sum())
    }

    /// `x += alpha * self`.
    pub fn axpy_into(&self, alpha: f64, x: &mut DenseVector) -> Result<()> {
        x.ensure_len(self.dim)?;
        for &(i, v) in &self.entries {
            x[i] += alpha * v;
        }
        Ok(())
    }
}

/// Diagnostic `idx:val;idx:val` encoding used in logs.
impl fmt::Display for SparseUpdate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, (i, v)) in self.entries.iter().enumerate() {
            if n > 0 {
                f.write_str(";")?;
            }
            write!(f, "{i}:{v}")?;
        }
        Ok(())
    }
}

/// `k = max(1, round(ρ·d))`, capped at `d`.
pub fn k_from_rho(rho: f64, dim: usize) -> Result<usize> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::invalid(format!("rho must lie in (0, 1], got {rho}")));
    }
    Ok(((rho * dim as f64).round() as usize).clamp(1, dim))
}

/// Larger magnitude first; equal magnitudes keep the lower index first.
fn selection_order(u: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| u[b].abs().total_cmp(&u[a].abs()).then(a.cmp(&b))
}

/// Keeps the `k` largest-magnitude coordinates of `u`.
///
/// Uses expected-linear-time selection under a total order (magnitude
/// descending, then index ascending), so the result is unique even with ties.
pub fn top_k(u: &DenseVector, k: usize) -> Result<SparseUpdate> {
    let d = u.len();
    if k == 0 || k > d {
        return Err(Error::invalid(format!("k={k} outside [1, d={d}]")));
    }
    let vals = u.as_slice();
    let mut idx: Vec<usize> = (0..d).collect();
    if k < d {
        idx.select_nth_unstable_by(k - 1, selection_order(vals));
        idx.truncate(k);
        idx.sort_unstable();
    }
    Ok(SparseUpdate {
        dim: d,
        entries: idx.into_iter().map(|i| (i, vals[i])).collect(),
    })
}

/// `‖u − Φ_k(u)‖² ≤ (1 − k/d)‖u‖²`.
pub fn check_k_contraction(u: &DenseVector, k: usize) -> Result<bool> {
    let kept = top_k(u, k)?;
    let total = u.norm_sq();
    let residual = residual_norm_sq(u, &kept);
    let ratio = k as f64 / u.len() as f64;
    Ok(residual <= (1.0 - ratio) * total + CHECK_SLACK * total)
}

/// `‖Φ_k(u)‖² ≥ (k/d)‖u‖²`.
pub fn check_lower_bound(u: &DenseVector, k: usize) -> Result<bool> {
    let kept = top_k(u, k)?;
    let total = u.norm_sq();
    let ratio = k as f64 / u.len() as f64;
    Ok(kept.norm_sq() >= ratio * total - CHECK_SLACK * total)
}

fn residual_norm_sq(u: &DenseVector, kept: &SparseUpdate) -> f64 {
    let mut mask = vec![false; u.len()];
    for &(i, _) in kept.entries() {
        mask[i] = true;
    }
    u.iter()
        .zip(mask)
        .filter(|(_, kept)| !kept)
        .map(|(v, _)| v * v)
        .sum()
}

/// Per-worker error-feedback accumulator `m_t`, zero at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    m: DenseVector,
}

impl MemoryState {
    pub fn zeros(dim: usize) -> Self {
        MemoryState {
            m: DenseVector::zeros(dim),
        }
    }

    pub fn from_vector(m: DenseVector) -> Self {
        MemoryState { m }
    }

    pub fn vector(&self) -> &DenseVector {
        &self.m
    }

    /// In-place form of [`memory_combine`].
    pub fn combine(&mut self, g: &DenseVector, k: usize) -> Result<SparseUpdate> {
        g.ensure_len(self.m.len())?;
        for (m, gi) in self.m.as_mut_slice().iter_mut().zip(g.iter()) {
            *m += gi;
        }
        let update = top_k(&self.m, k)?;
        for &(i, _) in update.entries() {
            self.m[i] = 0.0;
        }
        Ok(update)
    }
}

/// `update = Φ_k(m + g)`, `m' = m + g − Φ_k(m + g)`.
///
/// Transmitted coordinates are zeroed in the memory rather than subtracted,
/// so `densify(update) + m' == m + g` holds exactly in floating point.
pub fn memory_combine(
    mem: &MemoryState,
    g: &DenseVector,
    k: usize,
) -> Result<(SparseUpdate, MemoryState)> {
    let mut next = mem.clone();
    let update = next.combine(g, k)?;
    Ok((update, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::RngStream;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DenseVector {
        DenseVector::from(x.to_vec())
    }

    /// Full-sort reference: stable sort by descending magnitude, take k, mask.
    fn sort_oracle(u: &DenseVector, k: usize) -> DenseVector {
        let mut idx: Vec<usize> = (0..u.len()).collect();
        idx.sort_by(|&a, &b| u[b].abs().partial_cmp(&u[a].abs()).unwrap());
        let mut out = DenseVector::zeros(u.len());
        for &i in &idx[..k] {
            out[i] = u[i];
        }
        out
    }

    #[test]
    fn picks_largest_magnitudes() {
        let s = top_k(&v(&[3.0, -5.0, 1.0, 0.5]), 2).unwrap();
        assert_eq!(s.entries(), &[(0, 3.0), (1, -5.0)]);
    }

    #[test]
    fn ties_keep_lower_index() {
        let s = top_k(&v(&[1.0, 1.0, 1.0]), 1).unwrap();
        assert_eq!(s.entries(), &[(0, 1.0)]);
        let s = top_k(&v(&[0.0, -2.0, 2.0, 2.0]), 2).unwrap();
        assert_eq!(s.entries(), &[(1, -2.0), (2, 2.0)]);
    }

    #[test]
    fn k_equal_d_is_identity() {
        let u = v(&[0.3, -1.0, 0.0, 7.0]);
        assert_eq!(top_k(&u, 4).unwrap().densify(), u);
    }

    #[test]
    fn k_out_of_range() {
        assert!(top_k(&v(&[1.0, 2.0]), 0).is_err());
        assert!(top_k(&v(&[1.0, 2.0]), 3).is_err());
    }

    #[test]
    fn contraction_equality_case() {
        assert!(check_k_contraction(&v(&[1.0, 1.0]), 1).unwrap());
        assert!(check_lower_bound(&v(&[1.0, 1.0]), 1).unwrap());
        let u = v(&[1.0, 1.0]);
        let kept = top_k(&u, 1).unwrap();
        assert_eq!(residual_norm_sq(&u, &kept), 1.0);
        assert_eq!(kept.norm_sq(), 1.0);
    }

    #[test]
    fn memory_worked_trace() {
        let mem = MemoryState::zeros(2);
        let (u1, m1) = memory_combine(&mem, &v(&[3.0, 1.0]), 1).unwrap();
        assert_eq!(u1.entries(), &[(0, 3.0)]);
        assert_eq!(m1.vector().as_slice(), &[0.0, 1.0]);
        let (u2, m2) = memory_combine(&m1, &v(&[0.5, 1.0]), 1).unwrap();
        assert_eq!(u2.entries(), &[(1, 2.0)]);
        assert_eq!(m2.vector().as_slice(), &[0.5, 0.0]);
    }

    #[test]
    fn memory_without_truncation_stays_zero() {
        let g = v(&[0.1, -4.0, 2.5]);
        let (u, m) = memory_combine(&MemoryState::zeros(3), &g, 3).unwrap();
        assert_eq!(u.densify(), g);
        assert_eq!(m.vector(), &DenseVector::zeros(3));
    }

    #[test]
    fn display_encoding() {
        let s = SparseUpdate::new(5, vec![(3, -0.5), (1, 2.0)]).unwrap();
        assert_eq!(s.to_string(), "1:2;3:-0.5");
        assert!(SparseUpdate::new(2, vec![(2, 1.0)]).is_err());
    }

    #[test]
    fn k_from_rho_rounds_and_clamps() {
        assert_eq!(k_from_rho(0.001, 100).unwrap(), 1);
        assert_eq!(k_from_rho(0.015, 100).unwrap(), 2);
        assert_eq!(k_from_rho(1.0, 7).unwrap(), 7);
        assert!(k_from_rho(0.0, 7).is_err());
        assert!(k_from_rho(1.5, 7).is_err());
    }

    #[test]
    fn matches_sort_oracle_on_random_vectors() {
        let mut rng = RngStream::new(17, 0);
        for d in [1usize, 2, 7, 64, 300] {
            for _ in 0..200 {
                // Coarse rounding forces plenty of magnitude ties.
                let u = DenseVector::from_vec(
                    (0..d)
                        .map(|_| (rng.next_standard_normal() * 4.0).round() / 4.0)
                        .collect(),
                );
                for k in [1, d.div_ceil(3), d] {
                    assert_eq!(top_k(&u, k).unwrap().densify(), sort_oracle(&u, k));
                }
            }
        }
    }

    fn vec_and_k() -> impl Strategy<Value = (Vec<f64>, usize)> {
        (1usize..40).prop_flat_map(|d| (prop::collection::vec(-100.0f64..100.0, d), 1..=d))
    }

    proptest! {
        #[test]
        fn scale_equivariance((u, k) in vec_and_k(), c in 0.001f64..1000.0) {
            let u = DenseVector::from(u);
            let mut cu = u.clone();
            cu.scale(c);
            let a = top_k(&u, k).unwrap();
            let b = top_k(&cu, k).unwrap();
            let support = |s: &SparseUpdate| s.entries().iter().map(|e| e.0).collect::<Vec<_>>();
            prop_assert_eq!(support(&a), support(&b));
        }

        #[test]
        fn idempotent_on_support((u, k) in vec_and_k()) {
            let u = DenseVector::from(u);
            let once = top_k(&u, k).unwrap();
            let twice = top_k(&once.densify(), k).unwrap();
            prop_assert_eq!(once.densify(), twice.densify());
        }

        #[test]
        fn conservation_is_exact((g, k) in vec_and_k(), seed in 0u64..1000) {
            let d = g.len();
            let mut rng = RngStream::new(seed, 0);
            let m0 = DenseVector::from_vec((0..d).map(|_| rng.next_standard_normal()).collect());
            let g = DenseVector::from(g);
            let (u, m1) = memory_combine(&MemoryState::from_vector(m0.clone()), &g, k).unwrap();
            let lhs = u.densify().add(m1.vector()).unwrap();
            let rhs = m0.add(&g).unwrap();
            prop_assert!(lhs.iter().zip(rhs.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert!(u.len() <= k);
        }
    }
}
