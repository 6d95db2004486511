//! Binary container for a factorization.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic "BBFC" | version u32
//! n u64 | d u64 | k u64 | family u8 | h f64 | epsilon f64 | frob f64 | cutoff f64
//! permutation n x u64 | sizes k x u64 | ranks k x u64
//! centers k*d x f64 | radii k x f64
//! bases: for each cluster, n_i x r_i f64 row-major
//! blocks: for each (i, j) row-major, tag u8 then
//!         0 => r_i x r_j f64 row-major, 1 => envelope f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::{BBFactorization, InnerBlock};
use crate::cluster::Clustering;
use crate::error::{BbfError, Result};
use crate::kernel::{KernelFamily, KernelSpec};

const MAGIC: &[u8; 4] = b"BBFC";
const VERSION: u32 = 1;

fn io_err(path: &Path, source: std::io::Error) -> BbfError {
    BbfError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(msg: impl Into<String>) -> BbfError {
    BbfError::Format(msg.into())
}

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.inner.write_all(b)
    }

    fn u64(&mut self, v: usize) -> std::io::Result<()> {
        self.bytes(&(v as u64).to_le_bytes())
    }

    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn matrix(&mut self, m: &DMatrix<f64>) -> std::io::Result<()> {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)])?;
            }
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| format_err(format!("truncated container: {e}")))?;
        Ok(buf)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.array()?);
        usize::try_from(v).map_err(|_| format_err("count does not fit in memory"))
    }

    fn f64(&mut self) -> Result<f64> {
        let v = f64::from_le_bytes(self.array()?);
        if !v.is_finite() {
            return Err(format_err("non-finite value"));
        }
        Ok(v)
    }

    fn u64s(&mut self, count: usize) -> Result<Vec<usize>> {
        (0..count).map(|_| self.u64()).collect()
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        (0..count).map(|_| self.f64()).collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let values = self.f64s(rows * cols)?;
        Ok(DMatrix::from_row_slice(rows, cols, &values))
    }
}

/// Guards against absurd sizes in corrupted headers before allocating.
const MAX_COUNT: usize = 1 << 40;

impl BBFactorization {
    pub fn write_to<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = Writer { inner: out };
        let c = &self.clustering;
        w.bytes(MAGIC)?;
        w.bytes(&VERSION.to_le_bytes())?;
        w.u64(c.n())?;
        w.u64(c.dim())?;
        w.u64(c.k())?;
        w.bytes(&[match self.kernel.family() {
            KernelFamily::Gaussian => 0u8,
            KernelFamily::Laplacian => 1u8,
        }])?;
        w.f64(self.kernel.h())?;
        w.f64(self.epsilon)?;
        w.f64(self.frob_estimate)?;
        w.f64(self.cutoff_threshold)?;
        for &p in c.permutation() {
            w.u64(p)?;
        }
        for &s in c.sizes() {
            w.u64(s)?;
        }
        for r in self.ranks() {
            w.u64(r)?;
        }
        for &v in c.centers() {
            w.f64(v)?;
        }
        for &v in c.radii() {
            w.f64(v)?;
        }
        for u in &self.bases {
            w.matrix(u)?;
        }
        for block in &self.inner {
            match block {
                InnerBlock::Dense(m) => {
                    w.bytes(&[0])?;
                    w.matrix(m)?;
                }
                InnerBlock::Skipped { envelope } => {
                    w.bytes(&[1])?;
                    w.f64(*envelope)?;
                }
            }
        }
        w.inner.flush()
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader { inner: input };
        if &r.array::<4>()? != MAGIC {
            return Err(format_err("not a factorization container (bad magic)"));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(format_err(format!("unsupported container version {version}")));
        }
        let n = r.u64()?;
        let d = r.u64()?;
        let k = r.u64()?;
        if n == 0 || k == 0 || k > n || n > MAX_COUNT || d > MAX_COUNT {
            return Err(format_err(format!("implausible header n={n} d={d} k={k}")));
        }
        let family = match r.array::<1>()?[0] {
            0 => KernelFamily::Gaussian,
            1 => KernelFamily::Laplacian,
            other => return Err(format_err(format!("unknown kernel tag {other}"))),
        };
        let kernel = KernelSpec::new(family, r.f64()?).map_err(|e| format_err(e.to_string()))?;
        let epsilon = r.f64()?;
        let frob_estimate = r.f64()?;
        let cutoff = r.f64()?;
        let permutation = r.u64s(n)?;
        let sizes = r.u64s(k)?;
        let ranks = r.u64s(k)?;
        if sizes.iter().sum::<usize>() != n {
            return Err(format_err("cluster sizes do not sum to n"));
        }
        let mut seen = vec![false; n];
        for &p in &permutation {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(format_err("permutation is not a bijection"));
            }
        }
        let mut assignment = vec![0usize; n];
        let mut offset = 0;
        for (i, &s) in sizes.iter().enumerate() {
            for &p in &permutation[offset..offset + s] {
                assignment[p] = i;
            }
            offset += s;
        }
        let centers = r.f64s(k * d)?;
        let radii = r.f64s(k)?;
        let clustering = Clustering::from_parts(k, d, assignment, centers, radii)?;
        if clustering.permutation() != permutation.as_slice() {
            return Err(format_err("permutation does not keep members in index order"));
        }
        for (i, (&rank, &s)) in ranks.iter().zip(&sizes).enumerate() {
            if rank == 0 || rank > s {
                return Err(format_err(format!("rank {rank} invalid for cluster {i} of size {s}")));
            }
        }
        let bases = (0..k)
            .map(|i| r.matrix(sizes[i], ranks[i]))
            .collect::<Result<Vec<_>>>()?;
        let mut inner = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                inner.push(match r.array::<1>()?[0] {
                    0 => InnerBlock::Dense(r.matrix(ranks[i], ranks[j])?),
                    1 => InnerBlock::Skipped { envelope: r.f64()? },
                    other => return Err(format_err(format!("unknown block tag {other}"))),
                });
            }
        }
        if r.inner.read(&mut [0u8; 1]).map_err(|e| format_err(e.to_string()))? != 0 {
            return Err(format_err("trailing bytes after container"));
        }
        Self::from_parts(clustering, bases, inner, kernel, epsilon, frob_estimate, cutoff)
            .map_err(|e| format_err(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| io_err(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}
