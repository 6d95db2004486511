//! Dense linear-algebra primitives: randomized SVD, column/row pivot
//! extraction, truncated pseudo-inverse, and exact SVD/eigen oracles.
//!
//! Matrices are `nalgebra::DMatrix<f64>` (column-major, contiguous).

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{invalid, BbfError, Result};
use crate::rng::{rng_from_seed, standard_normal};

pub const DEFAULT_OVERSAMPLING: usize = 10;
pub const DEFAULT_POWER_ITERATIONS: usize = 2;
pub const DEFAULT_PINV_RTOL: f64 = 1e-10;

/// Thin SVD `A ~ U diag(S) V^T` with `S` nonincreasing.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    pub fn truncate(mut self, r: usize) -> Self {
        let r = r.min(self.s.len());
        self.s.truncate(r);
        self.u = self.u.columns(0, r).into_owned();
        self.v = self.v.columns(0, r).into_owned();
        self
    }
}

/// A linear map that can be applied to blocks of vectors from either side.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `A X`
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
    /// `A^T X`
    fn apply_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
    /// Dense copy, used when the sketch would not be smaller than the matrix.
    fn to_dense(&self) -> DMatrix<f64>;
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self * x
    }

    fn apply_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.tr_mul(x)
    }

    fn to_dense(&self) -> DMatrix<f64> {
        self.clone()
    }
}

fn orthonormal_basis(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// Exact thin SVD with singular values sorted nonincreasing.
pub fn exact_svd(a: &DMatrix<f64>) -> SvdResult {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return SvdResult {
            u: DMatrix::zeros(m, 0),
            s: vec![],
            v: DMatrix::zeros(n, 0),
        };
    }
    let svd = SVD::new(a.clone(), true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    let k = order.len();
    let mut uu = DMatrix::zeros(m, k);
    let mut vv = DMatrix::zeros(n, k);
    let mut ss = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        uu.set_column(dst, &u.column(src));
        vv.set_column(dst, &vt.row(src).transpose());
        ss.push(s[src].max(0.0));
    }
    SvdResult { u: uu, s: ss, v: vv }
}

/// Randomized SVD: Gaussian sketch of width `r + l`, `q` rounds of
/// re-orthonormalized power iteration, then an exact SVD of the projected
/// matrix truncated to rank `r`.
///
/// When `r + l` exceeds `min(m, n)` the sketch would not save anything, so
/// the width is clamped and an exact SVD is used instead.
pub fn randomized_svd<A: LinearOperator + ?Sized>(a: &A, r: usize, l: usize, q: usize, seed: u64) -> Result<SvdResult> {
    let (m, n) = (a.nrows(), a.ncols());
    let min_dim = m.min(n);
    if r < 1 || r > min_dim {
        return Err(invalid(format!("target rank {r} must lie in 1..={min_dim}")));
    }
    if r + l > min_dim {
        log::debug!(
            "sketch width {} exceeds min dimension {min_dim}; using exact SVD",
            r + l
        );
        return Ok(exact_svd(&a.to_dense()).truncate(r));
    }
    let width = r + l;
    let mut rng = rng_from_seed(seed);
    let omega = DMatrix::from_fn(n, width, |_, _| standard_normal(&mut rng));
    let mut basis = orthonormal_basis(a.apply(&omega));
    for _ in 0..q {
        let row_basis = orthonormal_basis(a.apply_transpose(&basis));
        basis = orthonormal_basis(a.apply(&row_basis));
    }
    // B = Q^T A, formed as (A^T Q)^T
    let b = a.apply_transpose(&basis).transpose();
    let small = exact_svd(&b).truncate(r);
    Ok(SvdResult {
        u: &basis * &small.u,
        s: small.s,
        v: small.v,
    })
}

/// First `r` pivots of column-pivoted Householder QR, in pivot order.
///
/// Ties in the remaining column norm are broken by the larger original
/// column norm, then by the lower index, so exactly-zero columns are never
/// chosen ahead of columns that still carry mass.
pub fn pivot_columns_qr(a: &DMatrix<f64>, r: usize) -> Result<Vec<usize>> {
    let (m, n) = a.shape();
    if r < 1 || r > n {
        return Err(invalid(format!("pivot count {r} must lie in 1..={n}")));
    }
    let mut work = a.clone();
    let original: Vec<f64> = (0..n).map(|j| work.column(j).norm_squared()).collect();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut pivots = Vec::with_capacity(r);
    let mut v = DVector::zeros(m);
    for step in 0..r {
        let norms: Vec<f64> = remaining
            .iter()
            .map(|&j| work.column(j).rows(step.min(m), m - step.min(m)).norm_squared())
            .collect();
        let best = (0..remaining.len())
            .max_by(|&x, &y| {
                norms[x]
                    .total_cmp(&norms[y])
                    .then(original[remaining[x]].total_cmp(&original[remaining[y]]))
                    .then(remaining[y].cmp(&remaining[x]))
            })
            .expect("at least one column remains");
        let col = remaining.remove(best);
        pivots.push(col);
        if step >= m || norms[best] == 0.0 {
            continue;
        }
        // Householder reflector zeroing column `col` below row `step`.
        let x = work.column(col).rows(step, m - step).into_owned();
        let alpha = -x[0].signum() * x.norm();
        let alpha = if alpha == 0.0 { -x.norm() } else { alpha };
        v.rows_mut(step, m - step).copy_from(&x);
        v[step] -= alpha;
        let vnorm2 = v.rows(step, m - step).norm_squared();
        if vnorm2 == 0.0 {
            continue;
        }
        let vs = v.rows(step, m - step).into_owned();
        for &j in &remaining {
            let mut c = work.column_mut(j);
            let mut tail = c.rows_mut(step, m - step);
            let dot = vs.dot(&tail);
            tail.axpy(-2.0 * dot / vnorm2, &vs, 1.0);
        }
    }
    Ok(pivots)
}

/// First `r` pivot rows, i.e. pivoted LQ of `A` (pivoted QR of `A^T`).
pub fn pivot_rows_lq(a: &DMatrix<f64>, r: usize) -> Result<Vec<usize>> {
    pivot_columns_qr(&a.transpose(), r)
}

/// SVD-based pseudo-inverse dropping singular values below `rel_tol * s_max`.
pub fn pinv_truncated(a: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let svd = exact_svd(a);
    let smax = svd.s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Err(BbfError::ZeroMatrix);
    }
    let cutoff = rel_tol * smax;
    let keep = svd.s.iter().take_while(|&&s| s >= cutoff).count();
    let mut v = svd.v.columns(0, keep).into_owned();
    for (j, s) in svd.s.iter().take(keep).enumerate() {
        v.column_mut(j).scale_mut(1.0 / s);
    }
    Ok(v * svd.u.columns(0, keep).transpose())
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues nonincreasing.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (order.iter().map(|&i| eig.eigenvalues[i]).collect(), vecs)
}

/// Eigenvalues of a symmetric matrix, nonincreasing.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Size above which [`top_eigenpairs`] switches from a dense eigensolver to
/// Lanczos with full reorthogonalization.
pub const DENSE_EIGEN_LIMIT: usize = 1200;

/// Largest `r` eigenpairs of a symmetric positive semidefinite matrix.
///
/// Large matrices use Lanczos with full reorthogonalization; the Krylov
/// space grows until every wanted Ritz pair has residual below
/// `1e-11 * lambda_max`.
pub fn top_eigenpairs(a: &DMatrix<f64>, r: usize, seed: u64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(BbfError::DimensionMismatch {
            expected: n,
            found: a.ncols(),
        });
    }
    if r < 1 || r > n {
        return Err(invalid(format!("eigenpair count {r} must lie in 1..={n}")));
    }
    if n <= DENSE_EIGEN_LIMIT || 4 * r >= n {
        let (vals, vecs) = symmetric_eigen(a);
        return Ok((vals[..r].to_vec(), vecs.columns(0, r).into_owned()));
    }
    lanczos_top(a, r, seed)
}

fn lanczos_top(a: &DMatrix<f64>, r: usize, seed: u64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let mut rng = rng_from_seed(seed);
    let max_steps = n;
    let mut steps_target = (2 * r + 40).min(max_steps);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();

    let random_unit = |rng: &mut crate::rng::Rng, basis: &[DVector<f64>]| -> DVector<f64> {
        loop {
            let mut v = DVector::from_fn(n, |_, _| standard_normal(rng));
            for _ in 0..2 {
                for b in basis {
                    let c = b.dot(&v);
                    v.axpy(-c, b, 1.0);
                }
            }
            let norm = v.norm();
            if norm > 1e-8 {
                return v / norm;
            }
        }
    };

    let mut next = random_unit(&mut rng, &basis);
    let mut scale = 0.0f64;
    loop {
        while basis.len() < steps_target {
            let v = next.clone();
            let mut w = a * &v;
            let alpha = v.dot(&w);
            basis.push(v);
            alphas.push(alpha);
            scale = scale.max(alpha.abs());
            // Full reorthogonalization, twice.
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dot(&w);
                    w.axpy(-c, b, 1.0);
                }
            }
            let beta = w.norm();
            if basis.len() == max_steps {
                betas.push(0.0);
                break;
            }
            if beta <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
                // Invariant subspace found: restart with a fresh direction.
                betas.push(0.0);
                next = random_unit(&mut rng, &basis);
            } else {
                betas.push(beta);
                next = w / beta;
            }
        }
        let m = basis.len();
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alphas[i];
            if i + 1 < m {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let (vals, vecs) = symmetric_eigen(&t);
        let last_beta = betas[m - 1];
        let lambda_max = vals[0].abs().max(f64::MIN_POSITIVE);
        let converged = (0..r.min(m)).all(|j| (last_beta * vecs[(m - 1, j)]).abs() <= 1e-11 * lambda_max);
        if (converged && m >= r) || m == max_steps {
            let mut v = DMatrix::zeros(n, m);
            for (j, b) in basis.iter().enumerate() {
                v.set_column(j, b);
            }
            let ritz = v * vecs.columns(0, r);
            return Ok((vals[..r].to_vec(), ritz));
        }
        steps_target = (m + m / 2).min(max_steps);
    }
}
