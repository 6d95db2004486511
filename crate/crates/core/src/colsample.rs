//! Important-column and important-row selection on a virtual kernel
//! submatrix `M(rows, cols)`, alternating pivoted QR and pivoted LQ on small
//! sampled pieces so that only `O(r (m + n))` entries are ever evaluated.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::kernel::KernelSource;
use crate::rla::{pivot_columns_qr, pivot_rows_lq};
use crate::rng::{rng_from_seed, sample_excluding, sample_without_replacement};

/// Selected indices, all local to the virtual matrix (positions in the
/// `rows` / `cols` slices handed to [`sample_columns`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleResult {
    /// `r` important columns, in pivot order.
    pub important_cols: Vec<usize>,
    /// `r + l` important rows (all rows when the matrix has fewer).
    pub important_rows: Vec<usize>,
    pub uniform_rows_used: Vec<usize>,
    pub uniform_cols_used: Vec<usize>,
}

/// Runs the three-step alternating selection on `M(rows, cols)`.
///
/// 1. `r` uniform rows, pivoted QR on them picks `r` columns.
/// 2. Those columns plus `l` uniform ones; pivoted LQ picks `r + l` rows.
/// 3. Those rows plus up to `l` rows of step 1 that were not picked; pivoted
///    QR picks the final `r` columns.
///
/// Step 3 draws its extra rows from the step-1 sample, whose entries are
/// already in hand, so the entry count stays within
/// `r n + m (r + l) + (r + l) n`.
pub fn sample_columns<S: KernelSource + ?Sized>(
    src: &S,
    rows: &[usize],
    cols: &[usize],
    r: usize,
    l: usize,
    seed: u64,
) -> Result<SampleResult> {
    let (m, n) = (rows.len(), cols.len());
    if r < 1 {
        return Err(invalid("column count r must be at least 1"));
    }
    if n < r + l {
        return Err(invalid(format!(
            "virtual matrix has {n} columns, fewer than r + l = {}",
            r + l
        )));
    }
    if m == 0 {
        return Err(invalid("virtual matrix has no rows"));
    }
    let mut rng = rng_from_seed(seed);
    let few_rows = m < r + l;

    // Step 1.
    let gamma_r: Vec<usize> = if few_rows {
        (0..m).collect()
    } else {
        sample_without_replacement(&mut rng, m, r)
    };
    let gamma_rows_global: Vec<usize> = gamma_r.iter().map(|&i| rows[i]).collect();
    let first_rows = src.block(&gamma_rows_global, cols)?;
    let pi_c = pivot_columns_qr(&first_rows, r)?;

    // Step 2.
    let gamma_c = sample_excluding(&mut rng, n, l, &pi_c);
    let mut widened = pi_c.clone();
    widened.extend_from_slice(&gamma_c);
    let important_rows: Vec<usize> = if few_rows {
        (0..m).collect()
    } else {
        let widened_global: Vec<usize> = widened.iter().map(|&j| cols[j]).collect();
        let panel = src.block(rows, &widened_global)?;
        pivot_rows_lq(&panel, r + l)?
    };

    // Step 3.
    let mut in_gamma = vec![usize::MAX; m];
    for (pos, &i) in gamma_r.iter().enumerate() {
        in_gamma[i] = pos;
    }
    let mut chosen = vec![false; m];
    for &i in &important_rows {
        chosen[i] = true;
    }
    let leftovers: Vec<usize> = gamma_r.iter().copied().filter(|&i| !chosen[i]).collect();
    let extra: Vec<usize> = if leftovers.len() > l {
        sample_without_replacement(&mut rng, leftovers.len(), l)
            .into_iter()
            .map(|p| leftovers[p])
            .collect()
    } else {
        leftovers
    };
    let final_rows: Vec<usize> = important_rows.iter().chain(&extra).copied().collect();
    let fetch: Vec<usize> = final_rows
        .iter()
        .copied()
        .filter(|&i| in_gamma[i] == usize::MAX)
        .collect();
    let fetched = if fetch.is_empty() {
        DMatrix::zeros(0, n)
    } else {
        let global: Vec<usize> = fetch.iter().map(|&i| rows[i]).collect();
        src.block(&global, cols)?
    };
    let mut fetched_pos = vec![usize::MAX; m];
    for (pos, &i) in fetch.iter().enumerate() {
        fetched_pos[i] = pos;
    }
    let stacked = DMatrix::from_fn(final_rows.len(), n, |a, j| {
        let i = final_rows[a];
        if in_gamma[i] != usize::MAX {
            first_rows[(in_gamma[i], j)]
        } else {
            fetched[(fetched_pos[i], j)]
        }
    });
    let important_cols = pivot_columns_qr(&stacked, r)?;

    Ok(SampleResult {
        important_cols,
        important_rows,
        uniform_rows_used: gamma_r,
        uniform_cols_used: gamma_c,
    })
}
