use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use bbf::analysis::SAMPLED_PAIRS_PER_POINT;
use bbf::rng::{derive_seed, rng_from_seed, sample_without_replacement, standard_normal};
use bbf::{
    build_bbf, build_bbf_from_source, dense_kernel, estimate_frobenius, estimate_ranks, nystrom_kmeans,
    nystrom_leverage, nystrom_uniform, partition, relative_error, rks_features, select_k, spectral_stats,
    truncated_svd_baseline, BBFactorization, BbfError, BlockAccessor, DataMatrix, ErrorMode, KernelApproximation,
    KernelFamily, KernelSpec, LowRankFactor, RankProfile, SelectKOptions,
};

use crate::args::{ClusterCount, GlobalArgs, Method};
use crate::dataset::{self, Dataset, SynthSpec};
use crate::record::{loglog_slope, mean_std, ExperimentRecord, RecordSink};

/// Cluster count for `scaling` when `--k auto` is left in place.
const SCALING_DEFAULT_K: usize = 15;

fn kernel_spec(g: &GlobalArgs) -> Result<KernelSpec> {
    Ok(KernelSpec::new(g.kernel, g.h)?)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn trial_seeds(g: &GlobalArgs) -> Vec<u64> {
    (0..g.trials as u64).map(|t| g.seed + t).collect()
}

/// Runs `f` once per trial seed, in order, or concurrently with
/// `--parallel-trials`. Results come back in seed order either way.
fn run_trials<T: Send>(g: &GlobalArgs, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let seeds = trial_seeds(g);
    if g.parallel_trials {
        seeds.par_iter().map(|&s| f(s)).collect()
    } else {
        seeds.iter().map(|&s| f(s)).collect()
    }
}

fn random_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| standard_normal(&mut rng)).collect()
}

/// Exact relative error up to the dense cap, a sampled estimate beyond it.
fn measure_error<A: KernelApproximation + ?Sized>(
    approx: &A,
    x: &DataMatrix,
    spec: KernelSpec,
    cap: usize,
    seed: u64,
) -> Result<f64> {
    let n = x.n();
    let mode = if n <= cap {
        ErrorMode::Dense { cap }
    } else {
        ErrorMode::Sampled {
            pairs: SAMPLED_PAIRS_PER_POINT * n,
            seed: derive_seed(seed, &[0xe7]),
        }
    };
    Ok(relative_error(approx, &BlockAccessor::new(x, spec), mode)?.value)
}

fn time_apply<A: KernelApproximation + ?Sized>(approx: &A, seed: u64) -> Result<f64> {
    let v = random_vector(approx.n(), seed);
    let start = Instant::now();
    approx.apply(&v)?;
    Ok(start.elapsed().as_secs_f64())
}

struct Built {
    factorization: BBFactorization,
    seconds: f64,
}

/// Cluster, pick ranks and build: the timed part of a BBF run.
fn build(x: &DataMatrix, g: &GlobalArgs, spec: KernelSpec, seed: u64) -> Result<Built> {
    let start = Instant::now();
    let (clustering, profile) = match g.k {
        ClusterCount::Auto => {
            let k_max = (x.n() as f64).sqrt().ceil() as usize;
            let options = SelectKOptions {
                r_max: g.rmax,
                partitioner: g.partitioner,
            };
            let s = select_k(x, spec, g.eps, 1, k_max, seed, options)?;
            log::info!("seed {seed}: selected k = {}", s.k);
            (s.clustering, s.profile)
        }
        ClusterCount::Fixed(k) => {
            let c = partition(x, k, g.partitioner, seed)?;
            let p = estimate_ranks(x, &c, spec, g.eps, g.rmax, seed)?;
            (c, p)
        }
    };
    let factorization = build_bbf(x, spec, &clustering, &profile, g.oversample, seed)?;
    Ok(Built {
        factorization,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn base_record(data: &Dataset, g: &GlobalArgs, method: &str, param: f64, seed: u64) -> ExperimentRecord {
    ExperimentRecord {
        method: method.to_string(),
        dataset: data.name.clone(),
        n: data.points.n(),
        d: data.points.d(),
        kernel: g.kernel.to_string(),
        h: g.h,
        param,
        memory: 0,
        rel_error: None,
        build_s: None,
        apply_s: None,
        seed,
    }
}

fn bbf_record(
    data: &Dataset,
    g: &GlobalArgs,
    spec: KernelSpec,
    seed: u64,
) -> Result<(ExperimentRecord, BBFactorization)> {
    let built = build(&data.points, g, spec, seed)?;
    let f = built.factorization;
    let apply_s = time_apply(&f, derive_seed(seed, &[0xa9]))?;
    let rel_error = measure_error(&f, &data.points, spec, g.dense_cap, seed)?;
    let record = ExperimentRecord {
        memory: f.memory_count(),
        rel_error: Some(rel_error),
        build_s: Some(built.seconds),
        apply_s: Some(apply_s),
        ..base_record(data, g, "bbf", g.eps, seed)
    };
    Ok((record, f))
}

fn summarize(method: &str, records: &[ExperimentRecord]) {
    let errors: Vec<f64> = records.iter().filter_map(|r| r.rel_error).collect();
    if errors.len() > 1 {
        let (mean, std) = mean_std(&errors);
        eprintln!(
            "{method}: mean relative error {mean:.3e}, std {std:.3e} over {} trials",
            errors.len()
        );
    }
}

pub fn approx(g: &GlobalArgs, save: Option<&Path>) -> Result<()> {
    let data = dataset::load(&g.data)?;
    let spec = kernel_spec(g)?;
    let last = g.seed + g.trials as u64 - 1;
    let runs = run_trials(g, |seed| {
        let (record, f) = bbf_record(&data, g, spec, seed)?;
        Ok((record, (seed == last).then_some(f)))
    })?;
    let mut sink = RecordSink::open(g.out.as_deref())?;
    let mut records = Vec::new();
    let mut kept = None;
    for (record, f) in runs {
        sink.write(&record)?;
        records.push(record);
        kept = f.or(kept);
    }
    summarize("bbf", &records);
    if let (Some(path), Some(f)) = (save, kept) {
        f.save(path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// The baseline factor, or `None` when it cannot be formed at this size.
fn baseline(
    method: Method,
    x: &DataMatrix,
    spec: KernelSpec,
    r: usize,
    seed: u64,
    cap: usize,
) -> Result<Option<LowRankFactor>> {
    if 2 * r > x.n() {
        return Ok(None);
    }
    let factor = match method {
        Method::Bbf => unreachable!("BBF is not a low-rank baseline"),
        Method::Nys => nystrom_uniform(x, &spec, r, seed),
        Method::KNys => nystrom_kmeans(x, &spec, r, seed),
        Method::LsNys => nystrom_leverage(x, &spec, r, seed, cap),
        Method::Rks => rks_features(x, &spec, r, seed),
        Method::Svd => dense_kernel(x, &spec, cap).and_then(|k| truncated_svd_baseline(&k, r)),
    };
    match factor {
        Ok(f) => Ok(Some(f)),
        Err(BbfError::TooLarge { n, cap }) => {
            log::warn!("{}: n = {n} exceeds the dense cap {cap}", method.name());
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

pub fn compare(g: &GlobalArgs, methods: &[Method]) -> Result<()> {
    if methods.is_empty() {
        bail!("no methods to compare");
    }
    if methods.contains(&Method::Rks) && g.kernel != KernelFamily::Gaussian {
        bail!("rks is available for the Gaussian kernel only");
    }
    let data = dataset::load(&g.data)?;
    let spec = kernel_spec(g)?;
    let x = &data.points;
    let n = x.n();
    let runs = run_trials(g, |seed| {
        let (bbf_row, f) = bbf_record(&data, g, spec, seed)?;
        let r = ((f.memory_count() as f64 / n as f64).round() as usize).max(1);
        let mut rows = Vec::new();
        for &method in methods {
            if method == Method::Bbf {
                rows.push(bbf_row.clone());
                continue;
            }
            let mut row = ExperimentRecord {
                memory: n * r,
                ..base_record(&data, g, method.name(), r as f64, seed)
            };
            let start = Instant::now();
            if let Some(factor) = baseline(method, x, spec, r, seed, g.dense_cap)? {
                row.build_s = Some(start.elapsed().as_secs_f64());
                row.memory = factor.memory_count;
                row.apply_s = Some(time_apply(&factor, derive_seed(seed, &[0xa9]))?);
                row.rel_error = Some(measure_error(&factor, x, spec, g.dense_cap, seed)?);
            }
            rows.push(row);
        }
        Ok(rows)
    })?;
    let mut sink = RecordSink::open(g.out.as_deref())?;
    for row in runs.iter().flatten() {
        sink.write(row)?;
    }
    for &method in methods {
        let rows: Vec<ExperimentRecord> = runs
            .iter()
            .flatten()
            .filter(|r| r.method == method.name())
            .cloned()
            .collect();
        summarize(method.name(), &rows);
    }
    Ok(())
}

pub fn stats(g: &GlobalArgs, inv_h2: &[f64], rank: usize) -> Result<()> {
    let data = dataset::load(&g.data)?;
    let mut out = csv::Writer::from_writer(output(g.out.as_deref())?);
    out.write_record([
        "dataset",
        "n",
        "kernel",
        "inv_h2",
        "r",
        "stable_rank",
        "eig_ratio",
        "frob_capture",
        "scaled_leverage",
    ])?;
    for &v in inv_h2 {
        if !(v > 0.0 && v.is_finite()) {
            bail!("1/h^2 must be positive, got {v}");
        }
        let spec = KernelSpec::new(g.kernel, 1.0 / v.sqrt())?;
        let s = spectral_stats(&data.points, &spec, rank, g.dense_cap)?;
        out.write_record([
            data.name.clone(),
            data.points.n().to_string(),
            g.kernel.to_string(),
            v.to_string(),
            s.r.to_string(),
            s.stable_rank.to_string(),
            format!("{:e}", s.eig_ratio),
            format!("{:.4}", s.frob_capture),
            format!("{:.4}", s.scaled_leverage),
        ])?;
        out.flush()?;
    }
    Ok(())
}

/// Points for one size of the scaling schedule: fresh blobs, or a seeded
/// subsample of the loaded dataset.
fn scaling_points(g: &GlobalArgs, loaded: Option<&Dataset>, n: usize) -> Result<(String, DataMatrix)> {
    match loaded {
        Some(data) => {
            if n > data.points.n() {
                bail!("size {n} exceeds the {} points of {}", data.points.n(), data.name);
            }
            let mut rng = rng_from_seed(derive_seed(g.seed, &[0x5c, n as u64]));
            let mut idx = sample_without_replacement(&mut rng, data.points.n(), n);
            idx.sort_unstable();
            Ok((data.name.clone(), data.points.select(&idx)?))
        }
        None => {
            let spec = SynthSpec {
                n,
                ..SynthSpec::parse(g.data.synth.as_deref().unwrap_or(""))?
            };
            Ok((spec.name(), spec.generate()?))
        }
    }
}

pub fn scaling(g: &GlobalArgs, sizes: &[usize], rank: usize) -> Result<()> {
    if sizes.is_empty() {
        bail!("no sizes given");
    }
    let spec = kernel_spec(g)?;
    let k = match g.k {
        ClusterCount::Fixed(k) => k,
        ClusterCount::Auto => SCALING_DEFAULT_K,
    };
    let loaded = match g.data.data {
        Some(_) => Some(dataset::load(&g.data)?),
        None => None,
    };
    let mut sink = RecordSink::open(g.out.as_deref())?;
    let (mut ns, mut build_times, mut apply_times) = (Vec::new(), Vec::new(), Vec::new());
    for &n in sizes {
        let (name, x) = scaling_points(g, loaded.as_ref(), n)?;
        let seed = g.seed;
        let start = Instant::now();
        let c = partition(&x, k, g.partitioner, seed)?;
        let acc = BlockAccessor::new(&x, spec);
        let frob = estimate_frobenius(&acc, SAMPLED_PAIRS_PER_POINT * n, derive_seed(seed, &[0]))?;
        let ranks = c.sizes().iter().map(|&s| rank.min(s)).collect();
        let profile = RankProfile::fixed(&c, ranks, g.eps, frob)?;
        let f = build_bbf_from_source(&acc, &c, &profile, g.oversample, seed)?;
        let build_s = start.elapsed().as_secs_f64();
        let apply_s = time_apply(&f, derive_seed(seed, &[0xa9]))?;
        let rel_error = measure_error(&f, &x, spec, g.dense_cap, seed)?;
        sink.write(&ExperimentRecord {
            method: "bbf".into(),
            dataset: name,
            n,
            d: x.d(),
            kernel: g.kernel.to_string(),
            h: g.h,
            param: rank as f64,
            memory: f.memory_count(),
            rel_error: Some(rel_error),
            build_s: Some(build_s),
            apply_s: Some(apply_s),
            seed,
        })?;
        ns.push(n as f64);
        build_times.push(build_s);
        apply_times.push(apply_s);
    }
    let show = |s: Option<f64>| s.map_or_else(|| "NA".to_string(), |v| format!("{v:.3}"));
    eprintln!("build-time log-log slope: {}", show(loglog_slope(&ns, &build_times)));
    eprintln!("apply-time log-log slope: {}", show(loglog_slope(&ns, &apply_times)));
    Ok(())
}

pub fn synth(g: &GlobalArgs) -> Result<()> {
    if g.data.data.is_some() {
        bail!("synth generates data; pass --synth <spec> instead of --data");
    }
    let spec = SynthSpec::parse(g.data.synth.as_deref().unwrap_or(""))?;
    let x = spec.generate()?;
    let mut out = csv::Writer::from_writer(output(g.out.as_deref())?);
    out.write_record((0..x.d()).map(|j| format!("x{j}")))?;
    for i in 0..x.n() {
        out.write_record(x.point(i).iter().map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn save(g: &GlobalArgs, path: &Path) -> Result<()> {
    let data = dataset::load(&g.data)?;
    let spec = kernel_spec(g)?;
    let (record, f) = bbf_record(&data, g, spec, g.seed)?;
    f.save(path).with_context(|| format!("writing {}", path.display()))?;
    RecordSink::open(g.out.as_deref())?.write(&record)
}

fn load_factorization(path: &Path) -> Result<BBFactorization> {
    BBFactorization::load(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load(g: &GlobalArgs, path: &Path) -> Result<()> {
    let f = load_factorization(path)?;
    let ranks = f.ranks();
    let mut out = output(g.out.as_deref())?;
    writeln!(out, "n: {}", f.n())?;
    writeln!(out, "k: {}", f.k())?;
    writeln!(out, "kernel: {} h={}", f.kernel().family(), f.kernel().h())?;
    writeln!(out, "epsilon: {}", f.epsilon())?;
    writeln!(
        out,
        "ranks: {}",
        ranks.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(",")
    )?;
    writeln!(out, "skipped blocks: {} of {}", f.skipped_blocks().len(), f.k() * f.k())?;
    writeln!(
        out,
        "memory: {} ({:.3}% of n^2)",
        f.memory_count(),
        100.0 * f.memory_count() as f64 / (f.n() as f64).powi(2)
    )?;
    Ok(())
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut v = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let value = text
            .parse()
            .with_context(|| format!("{}:{}: not a number: {text:?}", path.display(), lineno + 1))?;
        v.push(value);
    }
    Ok(v)
}

pub fn matvec(g: &GlobalArgs, path: &Path, input: Option<&Path>) -> Result<()> {
    let f = load_factorization(path)?;
    let v = match input {
        Some(p) => read_vector(p)?,
        None => random_vector(f.n(), g.seed),
    };
    if v.len() != f.n() {
        bail!(
            "input has {} values but the factorization is {} x {}",
            v.len(),
            f.n(),
            f.n()
        );
    }
    let y = f.apply(&v)?;
    let mut out = io::BufWriter::new(output(g.out.as_deref())?);
    for value in y {
        writeln!(out, "{value:e}")?;
    }
    out.flush()?;
    Ok(())
}
