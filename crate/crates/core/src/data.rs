//! Point sets: CSV loading, per-feature standardization and synthetic blobs.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{invalid, BbfError, Result};
use crate::rng::{rng_from_seed, standard_normal};
use rand::Rng as _;

/// `n` points in `d` dimensions, stored row-major (one row per point).
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    points: Vec<f64>,
    n: usize,
    d: usize,
    standardized: bool,
    feature_means: Vec<f64>,
    feature_stds: Vec<f64>,
}

impl DataMatrix {
    /// Builds a matrix from row-major values. Every entry must be finite.
    pub fn from_rows(n: usize, d: usize, points: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(BbfError::Empty);
        }
        if points.len() != n * d {
            return Err(BbfError::DimensionMismatch {
                expected: n * d,
                found: points.len(),
            });
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            return Err(BbfError::Parse {
                row: pos / d + 1,
                column: pos % d + 1,
                message: "non-finite value".into(),
            });
        }
        Ok(Self {
            points,
            n,
            d,
            standardized: false,
            feature_means: vec![0.0; d],
            feature_stds: vec![1.0; d],
        })
    }

    pub fn from_vecs(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(BbfError::RaggedRow {
                row: i + 1,
                expected: d,
                found: r.len(),
            });
        }
        Self::from_rows(rows.len(), d, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn feature_means(&self) -> &[f64] {
        &self.feature_means
    }

    pub fn feature_stds(&self) -> &[f64] {
        &self.feature_stds
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.points)
    }

    /// Rows `indices` as a new, unstandardized point set.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut pts = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(BbfError::IndexOutOfRange { index: i, len: self.n });
            }
            pts.extend_from_slice(self.point(i));
        }
        Self::from_rows(indices.len(), self.d, pts)
    }

    /// Per-feature `(x - mean) / std` with the unbiased (n-1) deviation.
    ///
    /// Constant columns (and single-point sets) record a deviation of 1 and
    /// map to zero.
    pub fn standardize(&self) -> Result<Self> {
        if self.standardized {
            return Err(invalid("data is already standardized"));
        }
        let (n, d) = (self.n, self.d);
        let mut means = vec![0.0; d];
        for i in 0..n {
            for (m, x) in means.iter_mut().zip(self.point(i)) {
                *m += x;
            }
        }
        means.iter_mut().for_each(|m| *m /= n as f64);
        let mut vars = vec![0.0; d];
        for i in 0..n {
            for ((v, x), m) in vars.iter_mut().zip(self.point(i)).zip(&means) {
                *v += (x - m) * (x - m);
            }
        }
        let stds: Vec<f64> = vars
            .iter()
            .map(|&v| {
                let s = if n > 1 { (v / (n - 1) as f64).sqrt() } else { 0.0 };
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let mut pts = self.points.clone();
        for row in pts.chunks_exact_mut(d) {
            for ((x, m), s) in row.iter_mut().zip(&means).zip(&stds) {
                *x = (*x - m) / s;
            }
        }
        // Exactly-constant columns become exact zeros.
        for (j, &v) in vars.iter().enumerate() {
            if v == 0.0 {
                for row in pts.chunks_exact_mut(d) {
                    row[j] = 0.0;
                }
            }
        }
        Ok(Self {
            points: pts,
            n,
            d,
            standardized: true,
            feature_means: means,
            feature_stds: stds,
        })
    }

    /// Undoes [`standardize`](Self::standardize) using the recorded statistics.
    pub fn destandardize(&self) -> Result<Self> {
        if !self.standardized {
            return Err(invalid("data is not standardized"));
        }
        let mut pts = self.points.clone();
        for row in pts.chunks_exact_mut(self.d) {
            for ((x, m), s) in row.iter_mut().zip(&self.feature_means).zip(&self.feature_stds) {
                *x = *x * s + m;
            }
        }
        Self::from_rows(self.n, self.d, pts)
    }
}

/// Reads a plain numeric CSV (comma separated, no quoting).
///
/// Rows and columns in errors are 1-based and refer to file lines and the
/// original column positions (before dropping).
pub fn load_csv(path: impl AsRef<Path>, has_header: bool, drop_columns: &[usize]) -> Result<DataMatrix> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| BbfError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .quoting(false)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut values = Vec::new();
    let mut width: Option<usize> = None;
    let mut kept = 0usize;
    let mut n = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| BbfError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
        })?;
        let line = record.position().map_or(n + 1, |p| p.line() as usize);
        if record.len() == 1 && record.get(0).is_some_and(str::is_empty) {
            continue;
        }
        match width {
            None => {
                if let Some(&bad) = drop_columns.iter().find(|&&c| c >= record.len()) {
                    return Err(BbfError::IndexOutOfRange {
                        index: bad,
                        len: record.len(),
                    });
                }
                width = Some(record.len());
                kept = (0..record.len()).filter(|c| !drop_columns.contains(c)).count();
            }
            Some(w) if w != record.len() => {
                return Err(BbfError::RaggedRow {
                    row: line,
                    expected: w,
                    found: record.len(),
                });
            }
            Some(_) => {}
        }
        for (c, field) in record.iter().enumerate() {
            if drop_columns.contains(&c) {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| BbfError::Parse {
                row: line,
                column: c + 1,
                message: format!("cannot parse {field:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(BbfError::Parse {
                    row: line,
                    column: c + 1,
                    message: "non-finite value".into(),
                });
            }
            values.push(v);
        }
        n += 1;
    }
    if n == 0 || kept == 0 {
        return Err(BbfError::Empty);
    }
    DataMatrix::from_rows(n, kept, values)
}

/// Isotropic Gaussian blobs around centers drawn uniformly in `[0,1]^d`,
/// together with the generating center of every point (round-robin).
pub fn synth_blobs_labeled(
    n: usize,
    d: usize,
    num_centers: usize,
    spread: f64,
    seed: u64,
) -> Result<(DataMatrix, Vec<usize>)> {
    if num_centers == 0 || n < num_centers {
        return Err(invalid(format!(
            "need n >= num_centers >= 1 (n={n}, centers={num_centers})"
        )));
    }
    if d == 0 {
        return Err(invalid("dimension must be positive"));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(invalid(format!("spread must be positive, got {spread}")));
    }
    let mut rng = rng_from_seed(seed);
    let centers: Vec<f64> = (0..num_centers * d).map(|_| rng.gen::<f64>()).collect();
    let mut pts = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % num_centers;
        labels.push(c);
        for j in 0..d {
            pts.push(centers[c * d + j] + spread * standard_normal(&mut rng));
        }
    }
    Ok((DataMatrix::from_rows(n, d, pts)?, labels))
}

pub fn synth_blobs(n: usize, d: usize, num_centers: usize, spread: f64, seed: u64) -> Result<DataMatrix> {
    synth_blobs_labeled(n, d, num_centers, spread, seed).map(|(x, _)| x)
}

/// Centers used by [`synth_blobs`] for a given seed (the first draws of the stream).
pub fn synth_centers(d: usize, num_centers: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    (0..num_centers)
        .map(|_| (0..d).map(|_| rng.gen::<f64>()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_plain_csv() {
        let f = write_tmp("1,2\n3,4\n5,6\n");
        let x = load_csv(f.path(), false, &[]).unwrap();
        assert_eq!((x.n(), x.d()), (3, 2));
        assert_eq!(x.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(!x.is_standardized());
    }

    #[test]
    fn drops_columns() {
        let f = write_tmp("1,2\n3,4\n5,6");
        let x = load_csv(f.path(), false, &[1]).unwrap();
        assert_eq!(x.d(), 1);
        assert_eq!(x.as_slice(), &[1.0, 3.0, 5.0]);
    }

    #[test]
    fn skips_header() {
        let f = write_tmp("a,b\n1,2\n");
        let x = load_csv(f.path(), true, &[]).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn parse_error_names_row_and_column() {
        let f = write_tmp("1,x\n");
        match load_csv(f.path(), false, &[]) {
            Err(BbfError::Parse { row, column, .. }) => assert_eq!((row, column), (1, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_and_empty_files_fail() {
        let f = write_tmp("1,2\n3\n");
        assert!(matches!(
            load_csv(f.path(), false, &[]),
            Err(BbfError::RaggedRow {
                row: 2,
                expected: 2,
                found: 1
            })
        ));
        let f = write_tmp("");
        assert!(matches!(load_csv(f.path(), false, &[]), Err(BbfError::Empty)));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_csv("/nonexistent/points.csv", false, &[]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/points.csv"));
    }

    #[test]
    fn standardize_two_points() {
        let x = DataMatrix::from_vecs(&[vec![0.0], vec![2.0]]).unwrap();
        let s = x.standardize().unwrap();
        // unbiased deviation of {0, 2} is sqrt(2)
        let h = 0.5f64.sqrt();
        assert!((s.as_slice()[0] + h).abs() < 1e-15 && (s.as_slice()[1] - h).abs() < 1e-15);
        assert_eq!(s.feature_means(), &[1.0]);
        assert_eq!(s.feature_stds(), &[2.0f64.sqrt()]);
    }

    #[test]
    fn standardize_constant_column() {
        let x = DataMatrix::from_vecs(&[vec![1.0, 10.0], vec![3.0, 10.0], vec![5.0, 10.0]]).unwrap();
        let s = x.standardize().unwrap();
        // mean 3, unbiased std sqrt(((-2)^2 + 0 + 2^2)/2) = 2
        let expect = [-1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        for (a, b) in s.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(s.feature_stds()[1], 1.0);
        assert!(s.standardize().is_err());
    }

    #[test]
    fn standardized_columns_have_unit_moments() {
        let x = synth_blobs(200, 4, 3, 0.3, 11).unwrap().standardize().unwrap();
        for j in 0..x.d() {
            let col: Vec<f64> = (0..x.n()).map(|i| x.point(i)[j]).collect();
            let mean = col.iter().sum::<f64>() / x.n() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.n() - 1) as f64;
            assert!(mean.abs() < 1e-8);
            assert!((var.sqrt() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn blobs_are_deterministic() {
        let a = synth_blobs(50, 3, 5, 0.1, 42).unwrap();
        let b = synth_blobs(50, 3, 5, 0.1, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_blobs(50, 3, 5, 0.1, 43).unwrap());
    }

    #[test]
    fn zero_spread_limit_hits_centers() {
        let x = synth_blobs(10, 5, 10, 1e-12, 5).unwrap();
        let centers = synth_centers(5, 10, 5);
        for (i, c) in centers.iter().enumerate() {
            for (a, b) in x.point(i).iter().zip(c) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn blob_preconditions() {
        assert!(synth_blobs(3, 2, 4, 0.1, 0).is_err());
        assert!(synth_blobs(3, 2, 0, 0.1, 0).is_err());
        assert!(synth_blobs(3, 2, 2, 0.0, 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn standardize_round_trips(rows in proptest::collection::vec(
            proptest::collection::vec(-1e3f64..1e3, 3), 2..40)) {
            let x = DataMatrix::from_vecs(&rows).unwrap();
            let back = x.standardize().unwrap().destandardize().unwrap();
            for (a, b) in x.as_slice().iter().zip(back.as_slice()) {
                proptest::prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0) * 10.0);
            }
        }
    }
}
