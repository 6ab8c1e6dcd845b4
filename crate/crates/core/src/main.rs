use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use otap::harness::{
    aggregate, append_csv, append_manifest, init_ratio_experiment, run_instances, uniqueness_check,
    EntryDist, ExperimentSpec, InitKind,
};
use otap::init::{get_initializer, random_init};
use otap::model::{feasibility_check, kkt_residual, objective_g, objective_h};
use otap::solver::{run, SolverConfig, Status};
use otap::{DenseTensor, FactorSet, Result};

const EXIT_ERROR: u8 = 1;
const EXIT_MAX_ITER: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

#[derive(Parser)]
#[command(name = "otap", version, about = "CP approximation with columnwise-orthonormal factors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Procedure,
    Random,
}

impl From<InitArg> for InitKind {
    fn from(v: InitArg) -> Self {
        match v {
            InitArg::Procedure => InitKind::Procedure,
            InitArg::Random => InitKind::Random,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Normal,
    Uniform,
}

impl From<DistArg> for EntryDist {
    fn from(v: DistArg) -> Self {
        match v {
            DistArg::Normal => EntryDist::Normal,
            DistArg::Uniform => EntryDist::Uniform,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Decompose a tensor read from the text format.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        t: usize,
        #[arg(long, default_value_t = 1e-8)]
        eps1: f64,
        #[arg(long, default_value_t = 1e-8)]
        eps2: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 2000)]
        max_iter: usize,
        #[arg(long, value_enum, default_value = "procedure")]
        init: InitArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        auto_reduce_rank: bool,
        /// Factor set JSON output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Iteration trace CSV output.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a batch of synthetic instances and append one CSV row.
    Experiment {
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        t: usize,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-8)]
        eps1: f64,
        #[arg(long, default_value_t = 1e-8)]
        eps2: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 2000)]
        max_iter: usize,
        #[arg(long, value_enum, default_value = "procedure")]
        init: InitArg,
        #[arg(long, value_enum, default_value = "uniform")]
        noise: DistArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean ratio of the objective at the two initializers.
    InitRatio {
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        t: usize,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "normal")]
        dist: DistArg,
    },
    /// Feasibility, KKT residual and uniqueness diagnostics for a factor set.
    Check {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        factors: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Decompose {
            input,
            rank,
            t,
            eps1,
            eps2,
            tol,
            max_iter,
            init,
            seed,
            auto_reduce_rank,
            out,
            trace,
        } => {
            let config = SolverConfig {
                eps1,
                eps2,
                tol,
                max_iter,
                auto_reduce_rank,
                ..SolverConfig::default()
            };
            println!(
                "{}",
                json!({
                    "command": "decompose",
                    "input": input,
                    "rank": rank,
                    "t": t,
                    "init": InitKind::from(init),
                    "seed": seed,
                    "solver": config,
                    "out": out,
                    "trace": trace,
                })
            );
            config.validate()?;
            let a = DenseTensor::read(&input)?;
            let start = match init {
                InitArg::Procedure => get_initializer(&a, rank, t)?,
                InitArg::Random => random_init(&a, rank, t, seed)?,
            };
            let (result, history) = run(&a, &start, &config)?;
            if let Some(path) = &out {
                result.write(path)?;
            }
            if let Some(path) = &trace {
                history.save_csv(path)?;
            }
            let kkt = kkt_residual(&a, &result)?;
            println!("iterations: {}", history.iterations());
            println!("G: {:.16e}", objective_g(&a, &result)?);
            println!("H: {:.16e}", objective_h(&a, &result)?);
            println!("kkt_total: {:.6e}", kkt.total);
            println!("status: {}", history.status);
            Ok(match history.status {
                Status::Converged => ExitCode::SUCCESS,
                Status::MaxIter => ExitCode::from(EXIT_MAX_ITER),
                Status::Degenerate => ExitCode::from(EXIT_DEGENERATE),
            })
        }
        Command::Experiment {
            dims,
            rank,
            t,
            beta,
            instances,
            seed,
            eps1,
            eps2,
            tol,
            max_iter,
            init,
            noise,
            out,
        } => {
            let spec = ExperimentSpec {
                dims,
                rank,
                t,
                beta,
                eps1,
                eps2,
                n_instances: instances,
                seed_base: seed,
                init: init.into(),
                noise: noise.into(),
                tol,
                max_iter,
            };
            println!(
                "{}",
                json!({ "command": "experiment", "spec": spec, "out": out })
            );
            let results = run_instances(&spec)?;
            let row = aggregate(&spec, &results);
            append_csv(&out, &row)?;
            append_manifest(&out, &spec, &results)?;
            println!(
                "mean_iter: {} median_iter: {} mean_time_s: {:.4e} mean_rel_err: {:.4e} converged: {} maxiter: {} degenerate: {}",
                row.mean_iter,
                row.median_iter,
                row.mean_time_s,
                row.mean_rel_err,
                row.n_converged,
                row.n_maxiter,
                row.n_degenerate
            );
            if row.n_failed > 0 {
                eprintln!("error: {} of {} instances failed", row.n_failed, instances);
                return Ok(ExitCode::from(EXIT_ERROR));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::InitRatio {
            dims,
            rank,
            t,
            instances,
            seed,
            dist,
        } => {
            let dist: EntryDist = dist.into();
            println!(
                "{}",
                json!({
                    "command": "init-ratio",
                    "dims": dims,
                    "rank": rank,
                    "t": t,
                    "instances": instances,
                    "seed": seed,
                    "dist": dist,
                })
            );
            let ratio = init_ratio_experiment(&dims, rank, t, instances, seed, dist)?;
            println!("mean_ratio: {:.6e}", ratio.mean);
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { input, factors } => {
            println!(
                "{}",
                json!({ "command": "check", "input": input, "factors": factors })
            );
            let a = DenseTensor::read(&input)?;
            let f = FactorSet::read(&factors)?;
            let report = feasibility_check(&f);
            if report.is_feasible() {
                println!("feasibility: feasible");
            } else {
                println!("feasibility: infeasible");
                for v in &report.violations {
                    println!("  {v}");
                }
            }
            let kkt = kkt_residual(&a, &f)?;
            println!("kkt_total: {:.6e}", kkt.total);
            match uniqueness_check(&f) {
                Ok(u) => println!("uniqueness: {} ({})", u.verdict, u.reason),
                Err(e) => println!("uniqueness: not evaluated ({e})"),
            }
            Ok(if report.is_feasible() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_INFEASIBLE)
            })
        }
    }
}
