use std::path::Path;

use anyhow::{bail, Context, Result};

use bbf::{load_csv, synth_blobs, DataMatrix};

use crate::args::DataArgs;

/// Parameters of `--synth n=2000,d=5,c=10,s=0.1[,seed=7]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub centers: usize,
    pub spread: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            d: 5,
            centers: 10,
            spread: 0.1,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SynthSpec::default();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let Some((key, value)) = part.split_once('=') else {
                bail!("expected key=value in synth spec, got {part:?}");
            };
            let value = value.trim();
            let bad = || format!("invalid value {value:?} for {key:?} in synth spec");
            match key.trim() {
                "n" => spec.n = value.parse().with_context(bad)?,
                "d" => spec.d = value.parse().with_context(bad)?,
                "c" => spec.centers = value.parse().with_context(bad)?,
                "s" => spec.spread = value.parse().with_context(bad)?,
                "seed" => spec.seed = value.parse().with_context(bad)?,
                other => bail!("unknown synth key {other:?} (expected n, d, c, s, seed)"),
            }
        }
        Ok(spec)
    }

    pub fn generate(&self) -> Result<DataMatrix> {
        Ok(synth_blobs(self.n, self.d, self.centers, self.spread, self.seed)?)
    }

    pub fn name(&self) -> String {
        format!("synth-n{}-d{}-c{}-s{}", self.n, self.d, self.centers, self.spread)
    }
}

pub struct Dataset {
    pub name: String,
    pub points: DataMatrix,
}

/// Loads `--data` (standardized unless `--no-standardize`) or generates
/// `--synth` blobs, which are used in their own coordinates.
pub fn load(args: &DataArgs) -> Result<Dataset> {
    match (&args.data, &args.synth) {
        (Some(path), _) => {
            let points = load_csv(path, args.header, &args.drop_columns)
                .with_context(|| format!("loading dataset {}", path.display()))?;
            let points = if args.no_standardize {
                points
            } else {
                points.standardize()?
            };
            Ok(Dataset {
                name: file_stem(path),
                points,
            })
        }
        (None, Some(text)) => {
            let spec = SynthSpec::parse(text)?;
            Ok(Dataset {
                name: spec.name(),
                points: spec.generate()?,
            })
        }
        (None, None) => bail!("no input: pass --data <csv> or --synth <spec>"),
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
