use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use clover::benchmarks::{problem, PROBLEM_NAMES};
use clover::experiment::{run_experiment, summarize_files, write_summary, CheckpointAxis, ExperimentConfig, SummarySettings};

#[derive(Parser)]
#[command(name = "clover", version, about = "Contour location with multiple information sources")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every replication of an experiment.
    Run {
        /// TOML experiment file.
        #[arg(short, long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Overrides the master seed; replication i uses seed + i.
        #[arg(short, long)]
        seed: Option<u64>,
    },
    /// Median and quartiles of trace files at common checkpoints.
    Summarize {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Axis::Cost)]
        axis: Axis,
        /// Comma-separated checkpoints; every axis value in the traces when omitted.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Vec<f64>,
        /// Written to standard output when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Built-in benchmark problems.
    ListProblems,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Cost,
    Evaluations,
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run { config, output, seed } => {
            let mut cfg = ExperimentConfig::load(&config).map_err(|e| e.to_string())?;
            if let Some(s) = seed {
                cfg.clover.seed = s;
            }
            let dir = output
                .or_else(|| cfg.output_dir.clone())
                .ok_or("no output directory: pass --output or set output_dir")?;
            let report = run_experiment(&cfg, Some(&dir)).map_err(|e| e.to_string())?;
            for r in &report.replications {
                let last = r.trace.rows.last();
                eprintln!(
                    "replication {} seed {}: {:?}, {} evaluations, cost {}{}",
                    r.index,
                    r.seed,
                    r.output.stop,
                    r.trace.rows.len(),
                    last.map_or(0.0, |l| l.cum_cost),
                    r.output.error.as_ref().map(|e| format!(", error: {e}")).unwrap_or_default()
                );
            }
            Ok(if report.all_succeeded() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Summarize {
            traces,
            axis,
            checkpoints,
            output,
        } => {
            let settings = SummarySettings {
                axis: match axis {
                    Axis::Cost => CheckpointAxis::Cost,
                    Axis::Evaluations => CheckpointAxis::Evaluations,
                },
                checkpoints,
            };
            let rows = summarize_files(&traces, &settings).map_err(|e| e.to_string())?;
            match output {
                Some(p) => {
                    let mut f = std::fs::File::create(&p).map_err(|e| format!("{}: {e}", p.display()))?;
                    write_summary(&rows, &mut f).map_err(|e| e.to_string())?;
                }
                None => write_summary(&rows, &mut io::stdout().lock()).map_err(|e| e.to_string())?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ListProblems => {
            for name in PROBLEM_NAMES {
                let p = problem::<f64>(name).map_err(|e| e.to_string())?;
                println!("{name}\t{} sources\t{}", p.num_sources(), p.description);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
