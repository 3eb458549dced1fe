//! `swaplab` — run disclosure-avoidance simulations from a config file.
//!
//! Exit codes: 0 success, 2 config error, 3 partial mechanism failure,
//! 4 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use swaplab_core::error::Error;
use swaplab_core::pipeline::{
    delta_replicates_csv, delta_summary_csv, estimate_delta, load_config, run_pipeline,
    variance_sweep, write_atomic, RunConfig,
};
use swaplab_core::seed::derive_seed;
use swaplab_core::toydown::REFERENCE_EPSILON;

#[derive(Parser)]
#[command(name = "swaplab", version, about = "Record-swapping and hierarchical-noise disclosure avoidance simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Bound the number of mechanism-by-replicate cells run in parallel.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured mechanism and write the selected metric reports.
    Run {
        /// Run-configuration TOML file.
        config: PathBuf,
    },
    /// Estimate the bias and variance a mechanism induces in a statistic.
    Delta {
        config: PathBuf,
        /// Statistic name, e.g. tract_entropy_mean or county_race_count:2:w.
        #[arg(long)]
        statistic: String,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
    },
    /// Variance of swapping across swap rates, with a reference line for
    /// the hierarchical mechanism.
    Sweep {
        config: PathBuf,
        /// Comma-separated swap rates, e.g. 0.02,0.05,0.1.
        #[arg(long, value_delimiter = ',', required = true)]
        rates: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        runs_per_point: usize,
        #[arg(long, default_value_t = REFERENCE_EPSILON)]
        toydown_epsilon: f64,
    },
    /// Generate the config's synthetic microdata and write it as CSV.
    Gen {
        /// Config file with an [input.synthetic] section.
        config: PathBuf,
        /// Directory to write households.csv and geography.csv into.
        #[arg(short = 'o', long = "output", value_name = "DIR")]
        out_dir: PathBuf,
    },
}

fn exit_for(err: &Error) -> ExitCode {
    match err {
        Error::Io { .. } => ExitCode::from(4),
        _ => ExitCode::from(2),
    }
}

fn load(path: &std::path::Path, seed_override: Option<u64>) -> Result<RunConfig, Error> {
    let mut config = load_config(path)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    Ok(config)
}

fn out_dir_for(cli_out: &Option<PathBuf>, config: &RunConfig) -> Result<PathBuf, Error> {
    cli_out.clone().or_else(|| config.output_dir.clone()).ok_or_else(|| {
        Error::Config("no output directory: set output_dir in the config or pass --out".into())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_for(&err)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run { config } => {
            let config = load(&config, cli.seed)?;
            config.require_mechanisms()?;
            let outcome = run_pipeline(&config, cli.out.as_deref(), cli.jobs)?;
            println!(
                "wrote {} cell(s) under {}",
                outcome.cells.len(),
                outcome.out_dir.display()
            );
            if outcome.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                for (mech, err) in &outcome.failures {
                    eprintln!("mechanism {mech}: {err}");
                }
                Ok(ExitCode::from(3))
            }
        }
        Command::Delta { config, statistic, replicates } => {
            let config = load(&config, cli.seed)?;
            let out = out_dir_for(&cli.out, &config)?;
            let reports = estimate_delta(&config, &statistic, replicates)?;
            write_atomic(&out.join("delta_summary.csv"), &delta_summary_csv(&reports))?;
            for r in &reports {
                write_atomic(
                    &out.join(format!("delta_{}.csv", r.mechanism)),
                    &delta_replicates_csv(r),
                )?;
                println!(
                    "{} under {}: bias {:.6}, variance {:.6} ({} replicates)",
                    r.statistic,
                    r.mechanism,
                    r.mean,
                    r.variance,
                    r.deltas.len()
                );
            }
            println!("wrote delta reports under {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, rates, runs_per_point, toydown_epsilon } => {
            let config = load(&config, cli.seed)?;
            let out = out_dir_for(&cli.out, &config)?;
            let table = variance_sweep(&config, &rates, toydown_epsilon, runs_per_point)?;
            write_atomic(&out.join("sweep.csv"), &table.to_csv())?;
            for row in &table.rows {
                println!(
                    "{} {}: vhat median {:.6} [{:.6}, {:.6}]",
                    row.kind, row.param, row.vhat_median, row.vhat_min, row.vhat_max
                );
            }
            println!("wrote sweep.csv under {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Gen { config, out_dir } => {
            let config = load(&config, cli.seed)?;
            let Some(synth) = &config.input.synthetic else {
                return Err(Error::Config("gen requires an [input.synthetic] section".into()));
            };
            let params = synth.to_params()?;
            let md = swaplab_core::geodata::generate_synthetic(
                &params,
                derive_seed(config.seed, "input", 0),
            )?;
            swaplab_core::geodata::write_microdata(&md, &out_dir)?;
            println!(
                "wrote {} households over {} blocks to {}",
                md.households.len(),
                md.geo.blocks.len(),
                out_dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
