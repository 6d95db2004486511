//! Approximation error and spectral diagnostics of kernel matrices.

use nalgebra::DMatrix;
use rand::Rng as _;

use crate::data::DataMatrix;
use crate::error::{invalid, BbfError, Result};
use crate::kernel::{dense_kernel, KernelSource, KernelSpec};
use crate::rla::{symmetric_eigen, top_eigenpairs};
use crate::rng::rng_from_seed;

/// Default size limit for dense error evaluation and dense spectra.
pub const DEFAULT_DENSE_CAP: usize = 8192;
/// Pair samples per point in sampled error mode.
pub const SAMPLED_PAIRS_PER_POINT: usize = 100;
const COLUMN_CHUNK: usize = 256;

/// Anything that approximates an `n x n` kernel matrix.
pub trait KernelApproximation: Sync {
    fn n(&self) -> usize;

    /// `K_hat X` for an `n x m` block.
    fn apply_block(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>>;

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let x = DMatrix::from_column_slice(v.len(), 1, v);
        Ok(self.apply_block(&x)?.as_slice().to_vec())
    }

    fn entry(&self, i: usize, j: usize) -> f64;

    /// Stored scalars.
    fn memory_count(&self) -> usize;
}

/// A relative error with the standard error of its estimate (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEstimate {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMode {
    /// Exact `|K_hat - K|_F / |K|_F`, evaluated by column chunks.
    Dense { cap: usize },
    /// Uniform entry sample of the given size.
    Sampled { pairs: usize, seed: u64 },
}

fn unit_columns(n: usize, start: usize, width: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, width);
    for b in 0..width {
        e[(start + b, b)] = 1.0;
    }
    e
}

/// `|K_hat - K|_F / |K|_F`, with `K` drawn from `src`.
pub fn relative_error<A, S>(approx: &A, src: &S, mode: ErrorMode) -> Result<ErrorEstimate>
where
    A: KernelApproximation + ?Sized,
    S: KernelSource + ?Sized,
{
    let n = src.n();
    if approx.n() != n {
        return Err(BbfError::DimensionMismatch {
            expected: n,
            found: approx.n(),
        });
    }
    match mode {
        ErrorMode::Dense { cap } => {
            if n > cap {
                return Err(BbfError::TooLarge { n, cap });
            }
            let all: Vec<usize> = (0..n).collect();
            let (mut num, mut den) = (0.0, 0.0);
            for start in (0..n).step_by(COLUMN_CHUNK) {
                let width = COLUMN_CHUNK.min(n - start);
                let approx_cols = approx.apply_block(&unit_columns(n, start, width))?;
                let cols: Vec<usize> = (start..start + width).collect();
                let exact = src.block(&all, &cols)?;
                num += (approx_cols - &exact).norm_squared();
                den += exact.norm_squared();
            }
            Ok(ErrorEstimate {
                value: (num / den).sqrt(),
                std_error: 0.0,
            })
        }
        ErrorMode::Sampled { pairs, seed } => {
            if pairs < 2 {
                return Err(invalid("sampled error needs at least two pairs"));
            }
            let mut rng = rng_from_seed(seed);
            let idx: Vec<(usize, usize)> = (0..pairs).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();
            let exact = src.pairs(&idx)?;
            let diffs: Vec<f64> = idx
                .iter()
                .zip(&exact)
                .map(|(&(a, b), &k)| (approx.entry(a, b) - k).powi(2))
                .collect();
            let squares: Vec<f64> = exact.iter().map(|k| k * k).collect();
            Ok(ratio_estimate(&diffs, &squares))
        }
    }
}

/// `sqrt(mean(x) / mean(y))` with a delta-method standard error.
fn ratio_estimate(x: &[f64], y: &[f64]) -> ErrorEstimate {
    let s = x.len() as f64;
    let mx = x.iter().sum::<f64>() / s;
    let my = y.iter().sum::<f64>() / s;
    let ratio = mx / my;
    let var = x.iter().zip(y).map(|(a, b)| (a - ratio * b).powi(2)).sum::<f64>() / (s - 1.0);
    let se_ratio = (var / s).sqrt() / my;
    let value = ratio.sqrt();
    let std_error = if value > 0.0 {
        se_ratio / (2.0 * value)
    } else {
        se_ratio.sqrt()
    };
    ErrorEstimate { value, std_error }
}

/// Dense-mode error against a precomputed exact matrix.
pub fn relative_error_against<A: KernelApproximation + ?Sized>(approx: &A, k: &DMatrix<f64>) -> Result<f64> {
    let n = k.nrows();
    if approx.n() != n || k.ncols() != n {
        return Err(BbfError::DimensionMismatch {
            expected: n,
            found: approx.n(),
        });
    }
    let mut num = 0.0;
    for start in (0..n).step_by(COLUMN_CHUNK) {
        let width = COLUMN_CHUNK.min(n - start);
        let approx_cols = approx.apply_block(&unit_columns(n, start, width))?;
        num += (approx_cols - k.columns(start, width)).norm_squared();
    }
    Ok((num / k.norm_squared()).sqrt())
}

/// A dense matrix viewed as an approximation of itself; memory `n^2`.
impl KernelApproximation for DMatrix<f64> {
    fn n(&self) -> usize {
        self.nrows()
    }

    fn apply_block(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.ncols() {
            return Err(BbfError::DimensionMismatch {
                expected: self.ncols(),
                found: x.nrows(),
            });
        }
        Ok(self * x)
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self[(i, j)]
    }

    fn memory_count(&self) -> usize {
        self.len()
    }
}

/// Table-style summary of a kernel matrix's spectrum at reference rank `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralStats {
    /// `ceil(|K|_F^2 / |K|_2^2)`
    pub stable_rank: usize,
    /// `lambda_{r+1} / lambda_r`
    pub eig_ratio: f64,
    /// `100 |K_r|_F / |K|_F`
    pub frob_capture: f64,
    /// `(n / r)` times the `r`-th largest rank-`r` leverage score.
    pub scaled_leverage: f64,
    pub r: usize,
    pub inv_h2: f64,
}

/// Top-`r` leverage scores from eigenpairs sorted nonincreasing, with
/// eigenvalues tied at the rank-`r` boundary sharing the remaining mass
/// evenly so the scores do not depend on the basis chosen for a repeated
/// eigenvalue. Needs every eigenpair of the tied group in `values`/`vectors`.
pub(crate) fn leverage_from_eigenpairs(values: &[f64], vectors: &DMatrix<f64>, r: usize) -> Vec<f64> {
    let n = vectors.nrows();
    let scale = values.first().map_or(0.0, |v| v.abs()).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let boundary = values[r - 1];
    let tied: Vec<usize> = (0..values.len())
        .filter(|&j| (values[j] - boundary).abs() <= tol)
        .collect();
    let above = (0..r).filter(|&j| values[j] - boundary > tol).count();
    let share = (r - above) as f64 / tied.len() as f64;
    (0..n)
        .map(|i| {
            let strict: f64 = (0..above).map(|j| vectors[(i, j)].powi(2)).sum();
            let shared: f64 = tied.iter().map(|&j| vectors[(i, j)].powi(2)).sum();
            strict + share * shared
        })
        .collect()
}

/// Exact rank-`r` leverage scores of a dense symmetric PSD matrix.
pub fn leverage_scores_dense(k: &DMatrix<f64>, r: usize, seed: u64) -> Result<Vec<f64>> {
    let n = k.nrows();
    if r < 1 || r > n {
        return Err(invalid(format!("rank {r} must lie in 1..={n}")));
    }
    if r < n {
        let (values, vectors) = top_eigenpairs(k, r + 1, seed)?;
        let scale = values[0].abs().max(f64::MIN_POSITIVE);
        if (values[r - 1] - values[r]).abs() > 1e-12 * scale {
            return Ok(leverage_from_eigenpairs(
                &values[..r],
                &vectors.columns(0, r).into_owned(),
                r,
            ));
        }
    }
    let (values, vectors) = symmetric_eigen(k);
    Ok(leverage_from_eigenpairs(&values, &vectors, r))
}

fn stable_rank_of(frob_sq: f64, lambda_max: f64) -> usize {
    let ratio = frob_sq / (lambda_max * lambda_max);
    // Guard against a ratio like 1 + 1e-15 rounding up.
    ((ratio * (1.0 - 1e-12)).ceil() as usize).max(1)
}

/// Stable rank, eigenvalue ratio, Frobenius capture and scaled leverage of
/// the exact kernel matrix.
pub fn spectral_stats(x: &DataMatrix, spec: &KernelSpec, r: usize, cap: usize) -> Result<SpectralStats> {
    let k = dense_kernel(x, spec, cap)?;
    spectral_stats_of(&k, r, 1.0 / (spec.h() * spec.h()))
}

/// [`spectral_stats`] for a precomputed kernel matrix.
pub fn spectral_stats_of(k: &DMatrix<f64>, r: usize, inv_h2: f64) -> Result<SpectralStats> {
    let n = k.nrows();
    if r < 1 || r > n {
        return Err(invalid(format!("reference rank {r} must lie in 1..={n}")));
    }
    let frob_sq = k.norm_squared();
    let want = (r + 1).min(n);
    let (values, vectors) = top_eigenpairs(k, want, 0x5eed)?;
    let lambda_max = values[0];
    let captured: f64 = values[..r].iter().map(|v| v * v).sum();
    let eig_ratio = if r < n { values[r] / values[r - 1] } else { 0.0 };
    let scale = lambda_max.abs().max(f64::MIN_POSITIVE);
    let leverage = if r < n && (values[r - 1] - values[r]).abs() > 1e-12 * scale {
        leverage_from_eigenpairs(&values[..r], &vectors.columns(0, r).into_owned(), r)
    } else {
        leverage_scores_dense(k, r, 0x5eed)?
    };
    let mut sorted = leverage;
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(SpectralStats {
        stable_rank: stable_rank_of(frob_sq, lambda_max),
        eig_ratio,
        frob_capture: 100.0 * (captured / frob_sq).min(1.0).sqrt(),
        scaled_leverage: n as f64 / r as f64 * sorted[r - 1],
        r,
        inv_h2,
    })
}
