use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{Context, Result};

pub const HEADER: [&str; 12] = [
    "method",
    "dataset",
    "n",
    "d",
    "kernel",
    "h",
    "param",
    "memory",
    "rel_error",
    "build_s",
    "apply_s",
    "seed",
];

/// Outcome of a method that could not run at the requested size.
pub const INFEASIBLE: &str = "infeasible";

/// One CSV row per (method, configuration, seed).
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub method: String,
    pub dataset: String,
    pub n: usize,
    pub d: usize,
    pub kernel: String,
    pub h: f64,
    /// Tolerance for the factorization, rank or feature count for baselines.
    pub param: f64,
    pub memory: usize,
    pub rel_error: Option<f64>,
    pub build_s: Option<f64>,
    pub apply_s: Option<f64>,
    pub seed: u64,
}

impl ExperimentRecord {
    fn fields(&self) -> [String; 12] {
        let opt = |v: Option<f64>, missing: &str| v.map_or_else(|| missing.to_string(), |x| format!("{x:e}"));
        [
            self.method.clone(),
            self.dataset.clone(),
            self.n.to_string(),
            self.d.to_string(),
            self.kernel.clone(),
            self.h.to_string(),
            self.param.to_string(),
            self.memory.to_string(),
            opt(self.rel_error, INFEASIBLE),
            opt(self.build_s, "NA"),
            opt(self.apply_s, "NA"),
            self.seed.to_string(),
        ]
    }
}

pub struct RecordSink {
    writer: csv::Writer<Box<dyn Write>>,
}

impl RecordSink {
    /// Writes to `path`, or stdout when `None`. The header is written at once.
    pub fn open(path: Option<&Path>) -> Result<Self> {
        let out: Box<dyn Write> = match path {
            Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
            None => Box::new(io::stdout()),
        };
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(HEADER)?;
        Ok(Self { writer })
    }

    pub fn write(&mut self, record: &ExperimentRecord) -> Result<()> {
        self.writer.write_record(record.fields())?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Least-squares slope of `log y` on `log x`; `None` with fewer than two
/// distinct sizes.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if lx.len() < 2 || var == 0.0 {
        return None;
    }
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(cov / var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((loglog_slope(&x, &y).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn slope_needs_two_sizes() {
        assert_eq!(loglog_slope(&[4.0], &[1.0]), None);
        assert_eq!(loglog_slope(&[4.0, 4.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn missing_values_are_spelled_out() {
        let r = ExperimentRecord {
            method: "tsvd".into(),
            dataset: "x".into(),
            n: 10,
            d: 2,
            kernel: "gaussian".into(),
            h: 1.0,
            param: 3.0,
            memory: 30,
            rel_error: None,
            build_s: None,
            apply_s: None,
            seed: 4,
        };
        let f = r.fields();
        assert_eq!(f[8], INFEASIBLE);
        assert_eq!(f[9], "NA");
    }

    #[test]
    fn mean_std_of_one_value() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
    }
}
