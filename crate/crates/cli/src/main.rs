//! `cta`: generate datasets, run policies, calibrate, query oracles and
//! build reports.

use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cta_cli::commands::{self, DEFAULT_ECE_BINS};
use cta_cli::{CliError, DatasetKind, GenOptions, RunConfig, SolveQuery};
use cta_core::filereading::GeneratorConfig;
use cta_core::pandora::{DEFAULT_ALPHA, DEFAULT_GAMMA_GRID, DEFAULT_K};
use cta_core::qa::sim::{Distortion, QaSimConfig};

#[derive(Parser)]
#[command(name = "cta", version, about = "Cost-aware exploration: simulators, oracles and reports")]
struct Cli {
    /// Seed for generation; for `run`, a single replicate seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config file: a run config for `run`, generator settings for `gen`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Run the policies of a config file and write traces.jsonl.
    Run,
    /// Aggregate trace files into report.json and CSV plot data.
    Report(ReportArgs),
    /// Fit calibration (QA) or the prior estimator (FileReading).
    #[command(subcommand)]
    Calibrate(CalibrateCommand),
    /// One-off oracle queries.
    #[command(subcommand)]
    Solve(SolveCommand),
}

#[derive(Subcommand)]
enum GenCommand {
    Pandora {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        /// Comma-separated discount grid.
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
    },
    Qa {
        /// Test population size.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// Validation population size; defaults to `n`.
        #[arg(long)]
        n_val: Option<usize>,
        /// Exponent of the confidence distortion g(k) = k^e.
        #[arg(long)]
        exponent: Option<f64>,
    },
    Filereading {
        #[arg(long)]
        n: Option<usize>,
    },
}

#[derive(Args)]
struct ReportArgs {
    /// Trace files (JSON lines) from one environment.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    /// Baseline policy for code-env reward deltas.
    #[arg(long)]
    reference: Option<String>,
}

#[derive(Subcommand)]
enum CalibrateCommand {
    Qa {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ECE_BINS)]
        bins: usize,
    },
    Filereading {
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Subcommand)]
enum SolveCommand {
    Pandora {
        /// Comma-separated priors, one per box.
        #[arg(long, value_delimiter = ',', required = true)]
        priors: Vec<f64>,
        #[arg(long)]
        gamma: f64,
    },
    Qa {
        /// Direct-answer accuracy.
        #[arg(long, required_unless_present = "population")]
        k: Option<f64>,
        #[arg(long, default_value_t = 0.578)]
        p_ret: f64,
        #[arg(long, required_unless_present = "population")]
        gamma: Option<f64>,
        /// Exact expected rewards of the reference policies over the
        /// default simulator population instead.
        #[arg(long)]
        population: bool,
    },
    Code {
        #[arg(long)]
        filename: String,
        #[arg(long)]
        d_u: f64,
        #[arg(long)]
        rho: f64,
        /// Oracle format weights (JSON); defaults to the built-in model.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn gen(cli: &Cli, cmd: &GenCommand) -> Result<(), CliError> {
    let seed = cli.seed.unwrap_or(0);
    let (kind, default_out) = match cmd {
        GenCommand::Pandora { n, k, alpha, gammas } => (
            DatasetKind::Pandora {
                n: *n,
                k: *k,
                alpha: *alpha,
                gammas: gammas.clone().unwrap_or_else(|| DEFAULT_GAMMA_GRID.to_vec()),
            },
            "data/pandora",
        ),
        GenCommand::Qa { n, n_val, exponent } => {
            let mut sim: QaSimConfig = match &cli.config {
                Some(p) => read_toml(p)?,
                None => QaSimConfig::default(),
            };
            if let Some(e) = exponent {
                sim.distortion = Distortion::Power { exponent: *e };
            }
            (DatasetKind::Qa { n_val: n_val.unwrap_or(*n), n_test: *n, sim }, "data/qa")
        }
        GenCommand::Filereading { n } => {
            let mut generator: GeneratorConfig = match &cli.config {
                Some(p) => read_toml(p)?,
                None => GeneratorConfig::default(),
            };
            if let Some(n) = n {
                generator.n = *n;
            }
            (DatasetKind::FileReading { generator }, "data/filereading")
        }
    };
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(default_out));
    print_paths(&commands::generate(&GenOptions { kind, seed, out })?);
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Argument("run needs --config".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("runs"));
    let summary = commands::run(&cfg, &out, None)?;
    println!("{} traces -> {}", summary.n_traces, summary.traces.display());
    Ok(())
}

fn report(cli: &Cli, args: &ReportArgs) -> Result<(), CliError> {
    let traces = cta_cli::load_traces(&args.traces)?;
    let bundle = cta_cli::build_report(&traces, args.reference.as_deref())?;
    let out = match &cli.out {
        Some(o) => o.clone(),
        None => args.traces[0].parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    print_paths(&cta_cli::write_report(&traces, &bundle, &out)?);
    Ok(())
}

fn calibrate(cli: &Cli, cmd: &CalibrateCommand) -> Result<(), CliError> {
    match cmd {
        CalibrateCommand::Qa { data, bins } => {
            if *bins == 0 {
                return Err(CliError::Argument("--bins must be positive".into()));
            }
            let out = cli.out.clone().unwrap_or_else(|| data.clone());
            print_json(&commands::calibrate_qa(data, &out, *bins)?);
        }
        CalibrateCommand::Filereading { data } => {
            let out = cli.out.clone().unwrap_or_else(|| data.clone());
            print_json(&commands::calibrate_filereading(data, &out)?);
        }
    }
    Ok(())
}

fn solve(cmd: &SolveCommand) -> Result<(), CliError> {
    let value = match cmd {
        SolveCommand::Pandora { priors, gamma } => {
            commands::solve(&SolveQuery::Pandora { priors: priors.clone(), gamma: *gamma })?
        }
        SolveCommand::Qa { population: true, p_ret, .. } => {
            commands::solve_qa_population(&QaSimConfig { p_ret: *p_ret, ..QaSimConfig::default() })?
        }
        SolveCommand::Qa { k, p_ret, gamma, .. } => commands::solve(&SolveQuery::Qa {
            k_da: k.expect("required by clap"),
            p_ret: *p_ret,
            gamma: gamma.expect("required by clap"),
        })?,
        SolveCommand::Code { filename, d_u, rho, weights } => commands::solve(&SolveQuery::Code {
            filename: filename.clone(),
            d_u: *d_u,
            rho: *rho,
            weights: weights.clone(),
        })?,
    };
    print_json(&value);
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Gen(cmd) => gen(cli, cmd),
        Command::Run => run(cli),
        Command::Report(args) => report(cli, args),
        Command::Calibrate(cmd) => calibrate(cli, cmd),
        Command::Solve(cmd) => solve(cmd),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
