//! Shift-invariant kernels and on-demand kernel sub-blocks.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;

use crate::data::DataMatrix;
use crate::error::{invalid, BbfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    /// `exp(-|x - y|_2^2 / h^2)`
    Gaussian,
    /// `exp(-|x - y|_1 / h)`
    Laplacian,
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Laplacian => "laplacian",
        })
    }
}

impl FromStr for KernelFamily {
    type Err = BbfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "rbf" => Ok(KernelFamily::Gaussian),
            "laplacian" | "laplace" => Ok(KernelFamily::Laplacian),
            other => Err(invalid(format!("unknown kernel family {other:?}"))),
        }
    }
}

/// A kernel family with its bandwidth `h > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    h: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("bandwidth must be positive and finite, got {h}")));
        }
        Ok(Self { family, h })
    }

    pub fn gaussian(h: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, h)
    }

    pub fn laplacian(h: f64) -> Result<Self> {
        Self::new(KernelFamily::Laplacian, h)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Distance in the kernel's native metric: l2 for Gaussian, l1 for Laplacian.
    #[inline]
    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian => sq_l2(x, y).sqrt(),
            KernelFamily::Laplacian => l1(x, y),
        }
    }

    /// Kernel value without the dimension check.
    #[inline]
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian => (-sq_l2(x, y) / (self.h * self.h)).exp(),
            KernelFamily::Laplacian => (-l1(x, y) / self.h).exp(),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(BbfError::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        Ok(self.value(x, y))
    }

    /// Largest possible kernel value between two points at native-metric
    /// distance at least `distance_lower_bound`.
    pub fn envelope(&self, distance_lower_bound: f64) -> Result<f64> {
        if distance_lower_bound < 0.0 || distance_lower_bound.is_nan() {
            return Err(invalid(format!(
                "distance bound must be nonnegative, got {distance_lower_bound}"
            )));
        }
        let t = distance_lower_bound;
        Ok(match self.family {
            KernelFamily::Gaussian => (-(t * t) / (self.h * self.h)).exp(),
            KernelFamily::Laplacian => (-t / self.h).exp(),
        })
    }
}

pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.eval(x, y)
}

#[inline]
fn sq_l2(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
fn l1(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum()
}

/// Anything that can hand out dense sub-blocks `K(I, J)` of a kernel matrix.
pub trait KernelSource: Sync {
    fn data(&self) -> &DataMatrix;

    fn spec(&self) -> &KernelSpec;

    fn n(&self) -> usize {
        self.data().n()
    }

    /// Dense `|rows| x |cols|` block. Indices refer to points of [`data`](Self::data).
    fn block(&self, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>>;

    /// Individual entries `K(a, b)` for a list of index pairs.
    fn pairs(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        let (data, spec, n) = (self.data(), self.spec(), self.n());
        pairs
            .iter()
            .map(|&(a, b)| match (a < n, b < n) {
                (true, true) => Ok(spec.value(data.point(a), data.point(b))),
                _ => Err(BbfError::IndexOutOfRange {
                    index: a.max(b),
                    len: n,
                }),
            })
            .collect()
    }
}

/// Binds a point set to a kernel; never stores more than the requested block.
#[derive(Debug, Clone, Copy)]
pub struct BlockAccessor<'a> {
    data: &'a DataMatrix,
    spec: KernelSpec,
}

impl<'a> BlockAccessor<'a> {
    pub fn new(data: &'a DataMatrix, spec: KernelSpec) -> Self {
        Self { data, spec }
    }
}

fn check_indices(indices: &[usize], len: usize) -> Result<()> {
    match indices.iter().find(|&&i| i >= len) {
        Some(&index) => Err(BbfError::IndexOutOfRange { index, len }),
        None => Ok(()),
    }
}

impl KernelSource for BlockAccessor<'_> {
    fn data(&self) -> &DataMatrix {
        self.data
    }

    fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    fn block(&self, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
        let n = self.data.n();
        check_indices(rows, n)?;
        check_indices(cols, n)?;
        let mut out = DMatrix::zeros(rows.len(), cols.len());
        for (b, &j) in cols.iter().enumerate() {
            let y = self.data.point(j);
            let col = out.column_mut(b);
            for (dst, &i) in col.into_iter().zip(rows) {
                *dst = self.spec.value(self.data.point(i), y);
            }
        }
        Ok(out)
    }
}

/// Decorator counting every kernel entry evaluated through it.
#[derive(Debug)]
pub struct CountingSource<S> {
    inner: S,
    entries: AtomicU64,
}

impl<S: KernelSource> CountingSource<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            entries: AtomicU64::new(0),
        }
    }

    pub fn entries(&self) -> u64 {
        self.entries.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.entries.store(0, Ordering::Relaxed);
    }
}

impl<S: KernelSource> KernelSource for CountingSource<S> {
    fn data(&self) -> &DataMatrix {
        self.inner.data()
    }

    fn spec(&self) -> &KernelSpec {
        self.inner.spec()
    }

    fn block(&self, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
        let out = self.inner.block(rows, cols)?;
        self.entries
            .fetch_add((rows.len() * cols.len()) as u64, Ordering::Relaxed);
        Ok(out)
    }

    fn pairs(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        let out = self.inner.pairs(pairs)?;
        self.entries.fetch_add(pairs.len() as u64, Ordering::Relaxed);
        Ok(out)
    }
}

impl<S: KernelSource> KernelSource for &S {
    fn data(&self) -> &DataMatrix {
        (**self).data()
    }

    fn spec(&self) -> &KernelSpec {
        (**self).spec()
    }

    fn block(&self, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
        (**self).block(rows, cols)
    }

    fn pairs(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        (**self).pairs(pairs)
    }
}

/// The full `n x n` kernel matrix. Only for desk-scale problems.
pub fn dense_kernel(data: &DataMatrix, spec: &KernelSpec, cap: usize) -> Result<DMatrix<f64>> {
    let n = data.n();
    if n > cap {
        return Err(BbfError::TooLarge { n, cap });
    }
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = spec.value(data.point(j), data.point(j));
        for i in j + 1..n {
            let v = spec.value(data.point(i), data.point(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}
