//! Argument parsing and verb dispatch.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::ablate::{ablate, sweep_exit_code, AblateArgs};
use crate::diagnose::{diagnose, DiagnoseArgs};
use crate::error::{CliError, CliResult, EXIT_NUMERIC, EXIT_OK};
use crate::eval::{evaluate, EvalArgs};
use crate::selftest;
use crate::train::{train, TrainArgs};

#[derive(Debug, Parser)]
#[command(name = "csf", version, about = "Contrastive successor-feature skill discovery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Verb,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Train from a config and write a run directory.
    Train {
        /// TOML config; defaults apply to anything it leaves out.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory, created if absent.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        total_steps: Option<u64>,
        /// Overwrite an existing metrics.csv.
        #[arg(long)]
        force: bool,
        /// Continue from a checkpoint, appending to metrics.csv.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// No per-evaluation progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Coverage and zero-shot goal reaching for a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the run's config.resolved.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where eval.json goes; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON list of goals, `[x, y]` or `{"goal": [x, y], "radius": r}`.
        #[arg(long)]
        goals_file: Option<PathBuf>,
    },
    /// Representation diagnostics over a trajectory dump.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        /// trajectories.jsonl written by `train`.
        #[arg(long)]
        buffer: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a sweep of config variants over seeds.
    Ablate {
        /// Sweep file (TOML).
        sweep: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace the sweep's seed list, e.g. `--seeds 1,2,3`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Concurrent child processes.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Gradient, hypersphere, successor-feature and diagnostics checks.
    Selftest,
}

pub fn run(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Verb::Train {
            config,
            out,
            seed,
            total_steps,
            force,
            resume,
            quiet,
        } => {
            let outcome = train(&TrainArgs {
                config,
                out: out.clone(),
                seed,
                total_steps,
                force,
                resume,
                quiet,
            })?;
            let coverage = outcome.report.final_eval.as_ref().map(|e| e.coverage.to_string());
            println!(
                "{} iterations, {} env steps, final coverage {}; run directory {}",
                outcome.report.iterations,
                outcome.report.env_steps,
                coverage.as_deref().unwrap_or("-"),
                out.display()
            );
            Ok(EXIT_OK)
        }
        Verb::Eval {
            checkpoint,
            config,
            out,
            seed,
            goals_file,
        } => {
            let (report, path) = evaluate(&EvalArgs {
                checkpoint,
                config,
                out,
                seed,
                goals_file,
            })?;
            println!(
                "coverage {}, mean staying fraction {:.3} over {} goals; wrote {}",
                report.coverage,
                report.staying.mean,
                report.goals.len(),
                path.display()
            );
            Ok(EXIT_OK)
        }
        Verb::Diagnose {
            checkpoint,
            buffer,
            config,
            out,
        } => {
            let (report, path) = diagnose(&DiagnoseArgs {
                checkpoint,
                buffer,
                config,
                out,
            })?;
            println!(
                "log-partition slope {:.4} (intercept {:.4}); E|dphi|^2 {:.4}; R {:.4}; wrote {}",
                report.log_partition_fit.slope,
                report.log_partition_fit.intercept,
                report.record.sq_norm_mean,
                report.record.mean_resultant_length,
                path.display()
            );
            Ok(EXIT_OK)
        }
        Verb::Ablate {
            sweep,
            out,
            seeds,
            parallel,
        } => {
            let exe = std::env::current_exe().map_err(|e| CliError::usage(format!("cannot locate own binary: {e}")))?;
            let outcome = ablate(&AblateArgs {
                sweep,
                out,
                parallel,
                exe,
                seeds,
            })?;
            for s in &outcome.summaries {
                println!("{:<24} {:>10.1} ± {:<8.1} (n={})", s.variant, s.mean, s.std, s.runs);
            }
            for r in outcome.runs.iter().filter(|r| r.failure.is_some()) {
                eprintln!("{} seed {}: {}", r.variant, r.seed, r.failure.as_deref().unwrap_or_default());
            }
            println!("wrote {}", outcome.summary_path.display());
            Ok(sweep_exit_code(&outcome))
        }
        Verb::Selftest => {
            let checks = selftest::run_all();
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} of {} checks passed", checks.len() - failed, checks.len());
            Ok(if failed == 0 { EXIT_OK } else { EXIT_NUMERIC })
        }
    }
}

/// Parse the process arguments, run, and return the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
