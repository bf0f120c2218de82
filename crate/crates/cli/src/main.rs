//! Batch front end: simulate, estimate sampling probabilities, fit flow
//! models and summarize posteriors. Every command writes `manifest.json` and
//! `warnings.json` into its output directory.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 runtime failure.

mod error;
mod estimate;
mod fit;
mod run;
mod simulate;
mod summarize;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use odflow::inference::Functional;
use odflow::strata::DEFAULT_ZETA;

use error::{CliError, CliResult};
use fit::{CountsSource, FitArgs, FitModel};
use simulate::Simulator;

#[derive(Debug, Parser)]
#[command(name = "odflow", version, about = "Transmission-flow simulation, estimation and summaries")]
struct Cli {
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for chains, folds and replicates.
    #[arg(long, global = true, env = "ODFLOW_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate true flows, thinned counts and census stage counts.
    Simulate {
        #[arg(value_enum)]
        simulator: Simulator,
        /// Scenario JSON.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-stratum sampling-probability draws from cascade stage counts.
    EstimateSampling {
        /// Stage counts CSV; may be repeated.
        #[arg(long = "stages", required = true)]
        stages: Vec<PathBuf>,
        /// Strata CSV, needed for regression covariates.
        #[arg(long)]
        strata: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a flow model.
    Fit {
        #[arg(value_enum)]
        model: FitModel,
        #[arg(long)]
        strata: PathBuf,
        /// Observed counts CSV.
        #[arg(long, required_unless_present = "scores", conflicts_with = "scores")]
        counts: Option<PathBuf>,
        /// Pairwise linkage scores; counts are pairs above `--zeta`.
        #[arg(long, requires = "individuals")]
        scores: Option<PathBuf>,
        #[arg(long)]
        individuals: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_ZETA)]
        zeta: f64,
        /// Source (or shared) sampling-probability draws.
        #[arg(long)]
        xi_source: Option<PathBuf>,
        #[arg(long)]
        xi_recipient: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantile tables of flows, sources, recipients, ratios and age gaps.
    Summarize {
        #[arg(long)]
        draws: PathBuf,
        #[arg(long)]
        strata: PathBuf,
        /// Aggregation mapping CSV (stratum, coarse).
        #[arg(long)]
        mapping: Option<PathBuf>,
        /// Functionals to tabulate; all when omitted.
        #[arg(long = "functional", value_parser = summarize::parse_functional)]
        functionals: Vec<Functional>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(CliError::runtime)?;
    }
    match cli.command {
        Command::Simulate { simulator, config, out } => simulate::cmd_simulate(simulator, &config, cli.seed, &out),
        Command::EstimateSampling { stages, strata, config, out } => {
            estimate::cmd_estimate_sampling(&stages, strata.as_deref(), config.as_deref(), cli.seed, &out)
        }
        Command::Fit { model, strata, counts, scores, individuals, zeta, xi_source, xi_recipient, config, out } => {
            let counts = match (&counts, &scores, &individuals) {
                (Some(c), _, _) => CountsSource::Table(c),
                (None, Some(s), Some(i)) => CountsSource::Scores { individuals: i, scores: s, zeta },
                _ => return Err(CliError::Input("pass --counts, or --scores with --individuals".into())),
            };
            fit::cmd_fit(FitArgs {
                model,
                counts,
                strata: &strata,
                xi_source: xi_source.as_deref(),
                xi_recipient: xi_recipient.as_deref(),
                config: config.as_deref(),
                seed: cli.seed,
                out: &out,
            })
        }
        Command::Summarize { draws, strata, mapping, functionals, out } => {
            summarize::cmd_summarize(&draws, &strata, mapping.as_deref(), &functionals, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("odflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
