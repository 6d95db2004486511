//! The block basis factorization `K ~ P^T U C U^T P`.

mod build;
mod container;
pub mod rank;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

pub use build::{build_bbf, build_bbf_from_source, recover_inner};
pub use rank::{
    estimate_block_frobenius, estimate_frobenius, estimate_ranks, estimate_ranks_with_frobenius, memory_cost, select_k,
    RankProfile, SelectKOptions, SelectKResult, DEFAULT_R_MAX,
};

use crate::analysis::KernelApproximation;
use crate::cluster::Clustering;
use crate::error::{invalid, BbfError, Result};
use crate::kernel::KernelSpec;

/// Default refusal size for [`BBFactorization::reconstruct_dense`].
pub const DENSE_SOFT_CAP: usize = 8192;
/// Dense reconstruction is refused beyond this size whatever cap is asked for.
pub const DENSE_HARD_CAP: usize = 20_000;

/// One coupling block of the inner grid.
#[derive(Debug, Clone, PartialEq)]
pub enum InnerBlock {
    Dense(DMatrix<f64>),
    /// Dropped by the cutoff test; `envelope` bounds every entry of the
    /// true block.
    Skipped {
        envelope: f64,
    },
}

impl InnerBlock {
    pub fn is_skipped(&self) -> bool {
        matches!(self, InnerBlock::Skipped { .. })
    }

    pub fn dense(&self) -> Option<&DMatrix<f64>> {
        match self {
            InnerBlock::Dense(m) => Some(m),
            InnerBlock::Skipped { .. } => None,
        }
    }
}

/// An immutable factorization. `apply` is safe to call concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct BBFactorization {
    clustering: Clustering,
    bases: Vec<DMatrix<f64>>,
    /// Row-major `k x k` grid.
    inner: Vec<InnerBlock>,
    kernel: KernelSpec,
    epsilon: f64,
    frob_estimate: f64,
    cutoff_threshold: f64,
    /// `position[p]`: slot of original point `p` inside its cluster.
    position: Vec<usize>,
}

impl BBFactorization {
    pub(crate) fn from_parts(
        clustering: Clustering,
        bases: Vec<DMatrix<f64>>,
        inner: Vec<InnerBlock>,
        kernel: KernelSpec,
        epsilon: f64,
        frob_estimate: f64,
        cutoff_threshold: f64,
    ) -> Result<Self> {
        let k = clustering.k();
        if bases.len() != k || inner.len() != k * k {
            return Err(invalid("basis or inner-block count does not match k"));
        }
        for (i, u) in bases.iter().enumerate() {
            if u.nrows() != clustering.sizes()[i] || u.ncols() == 0 {
                return Err(invalid(format!("basis {i} has shape {:?}", u.shape())));
            }
        }
        for i in 0..k {
            for j in 0..k {
                if let InnerBlock::Dense(m) = &inner[i * k + j] {
                    if m.shape() != (bases[i].ncols(), bases[j].ncols()) {
                        return Err(invalid(format!("inner block ({i}, {j}) has shape {:?}", m.shape())));
                    }
                }
            }
        }
        let mut position = vec![0usize; clustering.n()];
        for i in 0..k {
            for (slot, &p) in clustering.members(i).iter().enumerate() {
                position[p] = slot;
            }
        }
        Ok(Self {
            clustering,
            bases,
            inner,
            kernel,
            epsilon,
            frob_estimate,
            cutoff_threshold,
            position,
        })
    }

    pub fn n(&self) -> usize {
        self.clustering.n()
    }

    pub fn k(&self) -> usize {
        self.clustering.k()
    }

    pub fn clustering(&self) -> &Clustering {
        &self.clustering
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn frob_estimate(&self) -> f64 {
        self.frob_estimate
    }

    /// Per-entry bound below which off-diagonal blocks were skipped.
    pub fn cutoff_threshold(&self) -> f64 {
        self.cutoff_threshold
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.bases.iter().map(|u| u.ncols()).collect()
    }

    pub fn basis(&self, i: usize) -> &DMatrix<f64> {
        &self.bases[i]
    }

    pub fn inner(&self, i: usize, j: usize) -> &InnerBlock {
        &self.inner[i * self.k() + j]
    }

    /// Ordered pairs `(i, j)` whose block was skipped.
    pub fn skipped_blocks(&self) -> Vec<(usize, usize)> {
        let k = self.k();
        (0..k * k)
            .filter(|&b| self.inner[b].is_skipped())
            .map(|b| (b / k, b % k))
            .collect()
    }

    /// Stored scalars: bases plus non-skipped inner blocks.
    pub fn memory_count(&self) -> usize {
        let k = self.k();
        let ranks = self.ranks();
        let bases: usize = self.clustering.sizes().iter().zip(&ranks).map(|(n, r)| n * r).sum();
        let inner: usize = (0..k * k)
            .filter(|&b| !self.inner[b].is_skipped())
            .map(|b| ranks[b / k] * ranks[b % k])
            .sum();
        bases + inner
    }

    /// `K_hat X` for an `n x m` block of vectors.
    pub fn apply_block(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.n();
        if x.nrows() != n {
            return Err(BbfError::DimensionMismatch {
                expected: n,
                found: x.nrows(),
            });
        }
        let k = self.k();
        let m = x.ncols();
        // w_j = U_j^T x_j
        let projected: Vec<DMatrix<f64>> = (0..k)
            .into_par_iter()
            .map(|j| {
                let members = self.clustering.members(j);
                let xj = DMatrix::from_fn(members.len(), m, |a, b| x[(members[a], b)]);
                self.bases[j].tr_mul(&xj)
            })
            .collect();
        // u_i = U_i sum_j C_ij w_j
        let outputs: Vec<DMatrix<f64>> = (0..k)
            .into_par_iter()
            .map(|i| {
                let mut z = DMatrix::zeros(self.bases[i].ncols(), m);
                for (j, w) in projected.iter().enumerate() {
                    if let InnerBlock::Dense(c) = &self.inner[i * k + j] {
                        z.gemm(1.0, c, w, 1.0);
                    }
                }
                &self.bases[i] * z
            })
            .collect();
        let mut out = DMatrix::zeros(n, m);
        for (i, ui) in outputs.iter().enumerate() {
            for (a, &p) in self.clustering.members(i).iter().enumerate() {
                for b in 0..m {
                    out[(p, b)] = ui[(a, b)];
                }
            }
        }
        Ok(out)
    }

    /// `K_hat v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let x = DMatrix::from_column_slice(v.len(), 1, v);
        Ok(self.apply_block(&x)?.as_slice().to_vec())
    }

    /// Single approximate entry `K_hat(a, b)`.
    pub fn entry(&self, a: usize, b: usize) -> f64 {
        let (ca, cb) = (self.clustering.assignment()[a], self.clustering.assignment()[b]);
        match &self.inner[ca * self.k() + cb] {
            InnerBlock::Skipped { .. } => 0.0,
            InnerBlock::Dense(c) => {
                let ua = self.bases[ca].row(self.position[a]);
                let ub = self.bases[cb].row(self.position[b]);
                (ua * c).dot(&ub)
            }
        }
    }

    /// The full approximate matrix, refused above [`DENSE_SOFT_CAP`].
    pub fn reconstruct_dense(&self) -> Result<DMatrix<f64>> {
        self.reconstruct_dense_with_cap(DENSE_SOFT_CAP)
    }

    pub fn reconstruct_dense_with_cap(&self, cap: usize) -> Result<DMatrix<f64>> {
        let n = self.n();
        let cap = cap.min(DENSE_HARD_CAP);
        if n > cap {
            return Err(BbfError::TooLarge { n, cap });
        }
        let k = self.k();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..k {
            for j in 0..k {
                if let InnerBlock::Dense(c) = &self.inner[i * k + j] {
                    let block = &self.bases[i] * c * self.bases[j].transpose();
                    for (b, &q) in self.clustering.members(j).iter().enumerate() {
                        for (a, &p) in self.clustering.members(i).iter().enumerate() {
                            out[(p, q)] = block[(a, b)];
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

impl KernelApproximation for BBFactorization {
    fn n(&self) -> usize {
        self.n()
    }

    fn apply_block(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.apply_block(x)
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self.entry(i, j)
    }

    fn memory_count(&self) -> usize {
        self.memory_count()
    }
}

/// Convenience: `K_hat v` as a vector type.
pub fn apply(f: &BBFactorization, v: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(f.apply(v.as_slice())?))
}

#[cfg(test)]
mod tests;
