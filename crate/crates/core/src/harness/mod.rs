//! Synthetic problems, recovery error and batch experiments.

pub mod assignment;
pub mod kruskal;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{get_initializer, normalize_columns, random_init};
use crate::linalg::polar_decompose;
use crate::matrix::{dot, Matrix};
use crate::model::{objective_g, FactorSet};
use crate::solver::{run, SolverConfig, Status};
use crate::tensor::{cp_reconstruct, DenseTensor};

pub use kruskal::{kruskal_rank, uniqueness_check, UniquenessReport, Verdict};

/// Environment variable capping the experiment worker pool; `0` runs serially.
pub const THREADS_ENV: &str = "OTAP_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Procedure,
    Random,
    /// Starts from the generating factors.
    Truth,
}

impl InitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InitKind::Procedure => "procedure",
            InitKind::Random => "random",
            InitKind::Truth => "truth",
        }
    }
}

/// Entry law for noise and test tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryDist {
    /// Uniform on `[−1, 1]`.
    #[default]
    Uniform,
    /// Standard normal.
    Normal,
}

impl EntryDist {
    fn sample(self, rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        match self {
            EntryDist::Uniform => (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            EntryDist::Normal => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        }
    }
}

/// Seed for the random initializer of the instance drawn with `seed`,
/// decorrelated from the data stream.
pub fn init_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(29) ^ 0xD1B5_4A32_D192_ED03
}

/// Draws `A = ℬ/‖ℬ‖ + β·𝒩/‖𝒩‖` with `ℬ = Σ σ_i u_{1,i} ⊗ … ⊗ u_{d,i}`.
///
/// Factors and `σ` are uniform on `[−1, 1]`; the first `d − t` factors are
/// column-normalized and the last `t` replaced by their polar factors. The
/// returned truth carries `σ/‖ℬ‖`, so that it reproduces `ℬ/‖ℬ‖`.
pub fn gen_synthetic(
    dims: &[usize],
    rank: usize,
    t: usize,
    beta: f64,
    seed: u64,
) -> Result<(DenseTensor, FactorSet)> {
    gen_synthetic_with(dims, rank, t, beta, seed, EntryDist::Uniform)
}

/// [`gen_synthetic`] with a choice of noise law.
pub fn gen_synthetic_with(
    dims: &[usize],
    rank: usize,
    t: usize,
    beta: f64,
    seed: u64,
    noise: EntryDist,
) -> Result<(DenseTensor, FactorSet)> {
    let d = dims.len();
    if d == 0 {
        return Err(Error::InvalidOrder(0));
    }
    if t == 0 || t > d || rank == 0 {
        return Err(Error::InvalidConfig(format!(
            "need 1 ≤ t ≤ {d} and R ≥ 1, got t = {t}, R = {rank}"
        )));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidConfig("beta must be finite and nonnegative".into()));
    }
    for (mode, &extent) in dims.iter().enumerate().skip(d - t) {
        if extent < rank {
            return Err(Error::RankTooLarge { rank, mode, extent });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factors = Vec::with_capacity(d);
    for (mode, &n) in dims.iter().enumerate() {
        let mut u = Matrix::new(n, rank, EntryDist::Uniform.sample(&mut rng, n * rank))?;
        if mode < d - t {
            normalize_columns(&mut u);
        } else {
            u = polar_decompose(&u)?.u;
        }
        factors.push(u);
    }
    let sigma = EntryDist::Uniform.sample(&mut rng, rank);
    let total: usize = dims.iter().product();
    let noise_values = noise.sample(&mut rng, total);

    let b = cp_reconstruct(&sigma, &factors)?;
    let b_norm = b.frobenius_norm();
    if b_norm == 0.0 {
        return Err(Error::ZeroTensor);
    }
    let mut a = b.scaled(1.0 / b_norm);
    if beta > 0.0 {
        let n = DenseTensor::from_vec(dims.to_vec(), noise_values)?;
        let n_norm = n.frobenius_norm();
        if n_norm > 0.0 {
            a = a.add_scaled(beta / n_norm, &n)?;
        }
    }
    let sigma = sigma.iter().map(|s| s / b_norm).collect();
    Ok((a, FactorSet::with_sigma(factors, t, sigma)?))
}

/// Factor recovery error modulo column permutation and per-(mode, column)
/// sign:
/// `min_Π ‖(U_j) − (Û_j Π)‖_F / ‖(U_j)‖_F`.
pub fn rel_err(truth: &FactorSet, recovered: &FactorSet) -> Result<f64> {
    if truth.shape() != recovered.shape() || truth.rank() != recovered.rank() || truth.t != recovered.t {
        return Err(Error::ShapeMismatch(format!(
            "truth {:?} R = {} t = {} vs recovered {:?} R = {} t = {}",
            truth.shape(),
            truth.rank(),
            truth.t,
            recovered.shape(),
            recovered.rank(),
            recovered.t
        )));
    }
    let (total, _) = assignment::solve(&matching_costs(truth, recovered));
    let base: f64 = truth.factors.iter().map(|u| u.frobenius_norm().powi(2)).sum();
    Ok(total.max(0.0).sqrt() / base.sqrt())
}

/// `cost[i][p] = Σ_j min_s ‖u_{j,i} − s·û_{j,p}‖²`.
pub fn matching_costs(truth: &FactorSet, recovered: &FactorSet) -> Vec<Vec<f64>> {
    let rank = truth.rank();
    (0..rank)
        .map(|i| {
            (0..rank)
                .map(|p| {
                    truth
                        .factors
                        .iter()
                        .zip(&recovered.factors)
                        .map(|(u, w)| {
                            let (x, y) = (u.col(i), w.col(p));
                            (dot(x, x) + dot(y, y) - 2.0 * dot(x, y).abs()).max(0.0)
                        })
                        .sum()
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dims: Vec<usize>,
    #[serde(rename = "R")]
    pub rank: usize,
    pub t: usize,
    pub beta: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub n_instances: usize,
    pub seed_base: u64,
    pub init: InitKind,
    pub noise: EntryDist,
    pub tol: f64,
    pub max_iter: usize,
}

impl ExperimentSpec {
    /// Defaults matching the reference protocol: `β = 0.1`, `ε = 1e−8`,
    /// `tol = 1e−4`, 2000 iterations, 50 instances.
    pub fn new(dims: &[usize], rank: usize, t: usize) -> Self {
        Self {
            dims: dims.to_vec(),
            rank,
            t,
            beta: 0.1,
            eps1: 1e-8,
            eps2: 1e-8,
            n_instances: 50,
            seed_base: 0,
            init: InitKind::Procedure,
            noise: EntryDist::Uniform,
            tol: 1e-4,
            max_iter: 2000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims.len();
        if d == 0 || self.dims.contains(&0) {
            return Err(Error::InvalidConfig("dims must be nonempty and positive".into()));
        }
        if self.t == 0 || self.t > d || self.rank == 0 {
            return Err(Error::InvalidConfig(format!(
                "need 1 ≤ t ≤ {d} and R ≥ 1, got t = {}, R = {}",
                self.t, self.rank
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig("beta must be finite and nonnegative".into()));
        }
        if self.n_instances == 0 {
            return Err(Error::InvalidConfig("at least one instance is required".into()));
        }
        for (mode, &extent) in self.dims.iter().enumerate().skip(d - self.t) {
            if extent < self.rank {
                return Err(Error::RankTooLarge {
                    rank: self.rank,
                    mode,
                    extent,
                });
            }
        }
        self.solver_config().validate()
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            eps1: self.eps1,
            eps2: self.eps2,
            tol: self.tol,
            max_iter: self.max_iter,
            ..SolverConfig::default()
        }
    }

    pub fn seed(&self, index: usize) -> u64 {
        self.seed_base.wrapping_add(index as u64)
    }

    pub fn dims_label(&self) -> String {
        self.dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }
}

/// Outcome of one experiment instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub index: usize,
    pub seed: u64,
    pub iterations: usize,
    pub time_s: f64,
    pub rel_err: f64,
    pub status: Option<Status>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub spec: ExperimentSpec,
    pub mean_iter: f64,
    pub median_iter: f64,
    pub mean_time_s: f64,
    pub mean_rel_err: f64,
    pub n_converged: usize,
    pub n_maxiter: usize,
    pub n_degenerate: usize,
    /// Instances that raised an error; excluded from the means.
    pub n_failed: usize,
}

pub const CSV_HEADER: &str = "t,dims,R,eps1,eps2,init,instances,mean_iter,median_iter,mean_time_s,mean_rel_err,n_converged,n_maxiter,n_degenerate";

impl ResultRow {
    pub fn csv_line(&self) -> String {
        let s = &self.spec;
        format!(
            "{},{},{},{:e},{:e},{},{},{},{},{:e},{:e},{},{},{}",
            s.t,
            s.dims_label(),
            s.rank,
            s.eps1,
            s.eps2,
            s.init.as_str(),
            s.n_instances,
            self.mean_iter,
            self.median_iter,
            self.mean_time_s,
            self.mean_rel_err,
            self.n_converged,
            self.n_maxiter,
            self.n_degenerate
        )
    }
}

/// Runs a single instance: generate, initialize, solve, score.
pub fn run_instance(spec: &ExperimentSpec, index: usize) -> InstanceResult {
    let seed = spec.seed(index);
    let mut result = InstanceResult {
        index,
        seed,
        iterations: 0,
        time_s: 0.0,
        rel_err: f64::NAN,
        status: None,
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let (a, truth) = gen_synthetic_with(&spec.dims, spec.rank, spec.t, spec.beta, seed, spec.noise)?;
        let clock = Instant::now();
        let init = match spec.init {
            InitKind::Procedure => get_initializer(&a, spec.rank, spec.t)?,
            InitKind::Random => random_init(&a, spec.rank, spec.t, init_seed(seed))?,
            InitKind::Truth => truth.clone(),
        };
        let (out, trace) = run(&a, &init, &spec.solver_config())?;
        result.time_s = clock.elapsed().as_secs_f64();
        result.iterations = trace.iterations();
        result.status = Some(trace.status);
        result.rel_err = if out.rank() == truth.rank() {
            rel_err(&truth, &out)?
        } else {
            f64::NAN
        };
        Ok(())
    })();
    if let Err(e) = outcome {
        warn!("instance {index} (seed {seed}) failed: {e}");
        result.error = Some(e.to_string());
    }
    result
}

/// Worker count from [`THREADS_ENV`]; `None` leaves the choice to rayon.
pub fn configured_threads() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok()
}

/// Runs every instance of `spec`, in parallel unless [`THREADS_ENV`] is `0`.
/// Results come back in instance order regardless of scheduling.
pub fn run_instances(spec: &ExperimentSpec) -> Result<Vec<InstanceResult>> {
    spec.validate()?;
    let indices: Vec<usize> = (0..spec.n_instances).collect();
    match configured_threads() {
        Some(0) => Ok(indices.iter().map(|&i| run_instance(spec, i)).collect()),
        threads => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.unwrap_or(0))
                .build()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            Ok(pool.install(|| indices.par_iter().map(|&i| run_instance(spec, i)).collect()))
        }
    }
}

/// Aggregates instance results; the outcome does not depend on their order.
pub fn aggregate(spec: &ExperimentSpec, results: &[InstanceResult]) -> ResultRow {
    let mut sorted: Vec<&InstanceResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.index);
    let ok: Vec<&InstanceResult> = sorted.iter().copied().filter(|r| r.error.is_none()).collect();
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            f64::NAN
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let iters: Vec<f64> = ok.iter().map(|r| r.iterations as f64).collect();
    let times: Vec<f64> = ok.iter().map(|r| r.time_s).collect();
    let errs: Vec<f64> = ok.iter().map(|r| r.rel_err).filter(|e| e.is_finite()).collect();
    let count = |s: Status| ok.iter().filter(|r| r.status == Some(s)).count();
    ResultRow {
        spec: spec.clone(),
        mean_iter: mean(&iters),
        median_iter: median(&iters),
        mean_time_s: mean(&times),
        mean_rel_err: mean(&errs),
        n_converged: count(Status::Converged),
        n_maxiter: count(Status::MaxIter),
        n_degenerate: count(Status::Degenerate),
        n_failed: sorted.len() - ok.len(),
    }
}

fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs all instances and aggregates them into one table row.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultRow> {
    let results = run_instances(spec)?;
    Ok(aggregate(spec, &results))
}

/// Appends `row` to the CSV at `path`, writing the header first when the
/// file is new or empty.
pub fn append_csv(path: &Path, row: &ResultRow) -> Result<()> {
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    if fresh {
        writeln!(file, "{CSV_HEADER}").map_err(io)?;
    }
    writeln!(file, "{}", row.csv_line()).map_err(io)
}

/// Sidecar manifest path `<csv>.manifest.jsonl`.
pub fn manifest_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".manifest.jsonl");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub spec: ExperimentSpec,
    pub seeds: Vec<u64>,
    /// Seeds fed to the random initializer, when used.
    pub init_seeds: Vec<u64>,
    pub instances: Vec<InstanceResult>,
}

/// Appends one JSON line describing the seeds behind a result row.
pub fn append_manifest(csv: &Path, spec: &ExperimentSpec, results: &[InstanceResult]) -> Result<()> {
    let path = manifest_path(csv);
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
    let seeds: Vec<u64> = (0..spec.n_instances).map(|i| spec.seed(i)).collect();
    let entry = ManifestEntry {
        spec: spec.clone(),
        init_seeds: match spec.init {
            InitKind::Random => seeds.iter().map(|&s| init_seed(s)).collect(),
            InitKind::Procedure | InitKind::Truth => Vec::new(),
        },
        seeds,
        instances: results.to_vec(),
    };
    let line = serde_json::to_string(&entry).map_err(|e| Error::Io(e.to_string()))?;
    let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
    writeln!(file, "{line}").map_err(io)
}

/// Per-instance initializer quality `G(procedure)/G(random)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitRatio {
    pub mean: f64,
    pub ratios: Vec<f64>,
}

/// Draws `n_instances` tensors with i.i.d. entries from `dist` (seeds
/// `seed, seed+1, …`) and compares the objective `G` of the two initializers.
pub fn init_ratio_experiment(
    dims: &[usize],
    rank: usize,
    t: usize,
    n_instances: usize,
    seed: u64,
    dist: EntryDist,
) -> Result<InitRatio> {
    if n_instances == 0 {
        return Err(Error::InvalidConfig("at least one instance is required".into()));
    }
    let total: usize = dims.iter().product();
    let ratio = |index: usize| -> Result<f64> {
        let s = seed.wrapping_add(index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let a = DenseTensor::from_vec(dims.to_vec(), dist.sample(&mut rng, total))?;
        let gp = objective_g(&a, &get_initializer(&a, rank, t)?)?;
        let gr = objective_g(&a, &random_init(&a, rank, t, init_seed(s))?)?;
        Ok(gp / gr)
    };
    let indices: Vec<usize> = (0..n_instances).collect();
    let ratios: Vec<f64> = match configured_threads() {
        Some(0) => indices.iter().map(|&i| ratio(i)).collect::<Result<_>>()?,
        _ => indices.par_iter().map(|&i| ratio(i)).collect::<Result<_>>()?,
    };
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    Ok(InitRatio { mean, ratios })
}
