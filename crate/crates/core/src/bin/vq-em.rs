use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vq_em::harness::{self, commands, RunConfig};
use vq_em::Error;

/// Vector-quantized bottlenecks trained by hard or soft EM.
#[derive(Parser)]
#[command(name = "vq-em", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// K-means on a dataset; writes a codebook and a JSON summary.
    Cluster(Common),
    /// Train the autoencoder; metrics go to stdout or DIR/metrics.jsonl.
    Train(Common),
    /// Bits per dimension of a checkpoint on held-out data.
    Eval(Common),
    /// Compare codebook collapse across training modes.
    Stability(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory [default: vq-em-out].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

const DEFAULT_OUT: &str = "vq-em-out";

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let (Command::Cluster(common)
    | Command::Train(common)
    | Command::Eval(common)
    | Command::Stability(common)) = &cli.command;
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let out: &Path = &out;

    match cli.command {
        Command::Cluster(_) => {
            let (_, summary) = harness::cmd_cluster(&cfg, out)?;
            print_json(&summary)
        }
        Command::Train(ref c) => {
            let outcome = if c.out.is_some() {
                harness::cmd_train(&cfg, out, commands::metrics_file(out)?)?
            } else {
                harness::cmd_train(&cfg, out, io::stdout().lock())?
            };
            match outcome.diverged {
                Some(e) => Err(e),
                None => Ok(()),
            }
        }
        Command::Eval(_) => {
            let report = harness::cmd_eval(&cfg, out)?;
            print_json(&report)
        }
        Command::Stability(_) => {
            let (report, paths) = harness::cmd_stability(&cfg, out)?;
            for m in &report.modes {
                let collapse = m
                    .steps_to_collapse
                    .map_or("none".to_string(), |s| s.to_string());
                println!(
                    "{:<14} final_usage_perplexity={:.3} steps_to_collapse={collapse}",
                    m.mode, m.final_usage_perplexity
                );
            }
            println!("report: {}", paths.report.display());
            println!("csv: {}", paths.csv.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let stderr = io::stderr();
            let mut err = stderr.lock();
            match &e {
                Error::Config(items) => {
                    let _ = writeln!(err, "error: invalid configuration");
                    for item in items {
                        let _ = writeln!(err, "  {item}");
                    }
                }
                other => {
                    let _ = writeln!(err, "error: {other}");
                }
            }
            ExitCode::from(e.exit_code())
        }
    }
}
