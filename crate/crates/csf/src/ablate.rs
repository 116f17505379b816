//! The `ablate` verb: config variants × seeds, one child process per run.
//!
//! A sweep file is TOML:
//!
//! ```toml
//! base = "point_mass.toml"   # optional, relative to the sweep file
//! seeds = [1, 2, 3, 4, 5]
//! total_steps = 200000       # optional
//!
//! [[variant]]
//! name = "csf"
//!
//! [[variant]]
//! name = "mi_only"
//! overrides = { reward = { mode = "mi_only" } }
//! ```

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::Duration;

use serde::Deserialize;

use crate::config::{merge_toml, parse_config};
use crate::error::{CliError, CliResult, EXIT_USAGE};
use crate::metrics::final_coverage;
use crate::train::METRICS_NAME;

pub const SUMMARY_NAME: &str = "ablation_summary.csv";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub base: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub total_steps: Option<u64>,
    #[serde(rename = "variant")]
    pub variants: Vec<Variant>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub overrides: toml::Table,
}

#[derive(Debug, Clone)]
pub struct AblateArgs {
    pub sweep: PathBuf,
    pub out: PathBuf,
    pub parallel: usize,
    /// Binary providing the `train` verb.
    pub exe: PathBuf,
    /// Override the sweep's seed list.
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub variant: String,
    pub seed: u64,
    pub final_coverage: Option<f64>,
    /// `None` on success, otherwise what went wrong.
    pub failure: Option<String>,
    pub exit_code: Option<i32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub runs: Vec<RunResult>,
    pub summaries: Vec<VariantSummary>,
    pub summary_path: PathBuf,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.failure.is_some()).count()
    }

    pub fn summary(&self, variant: &str) -> Option<&VariantSummary> {
        self.summaries.iter().find(|s| s.variant == variant)
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn load_sweep(path: &Path) -> CliResult<Sweep> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut sweep: Sweep =
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {}", path.display(), e.message().trim())))?;
    if let Some(base) = &sweep.base {
        if base.is_relative() {
            sweep.base = Some(path.parent().unwrap_or(Path::new(".")).join(base));
        }
    }
    if sweep.variants.is_empty() || sweep.seeds.is_empty() {
        return Err(CliError::usage(format!("{}: need at least one variant and one seed", path.display())));
    }
    let mut names: Vec<&str> = sweep.variants.iter().map(|v| v.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::usage(format!("{}: variant names must be unique", path.display())));
    }
    Ok(sweep)
}

/// Each variant's full config text, checked before anything is launched.
fn variant_configs(sweep: &Sweep) -> CliResult<Vec<String>> {
    let base = match &sweep.base {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            toml::from_str::<toml::Value>(&text)
                .map_err(|e| CliError::usage(format!("{}: {}", path.display(), e.message().trim())))?
        }
        None => toml::Value::Table(toml::Table::new()),
    };
    sweep
        .variants
        .iter()
        .map(|v| {
            let mut merged = base.clone();
            merge_toml(&mut merged, &toml::Value::Table(v.overrides.clone()));
            let text = toml::to_string_pretty(&merged).expect("tables serialize");
            parse_config(&text, &format!("variant {}", v.name))?;
            Ok(text)
        })
        .collect()
}

struct Job {
    variant: String,
    seed: u64,
    dir: PathBuf,
}

fn spawn(job: &Job, sweep: &Sweep, exe: &Path) -> std::io::Result<Child> {
    let log = File::create(job.dir.join("train.log"))?;
    let mut cmd = Command::new(exe);
    cmd.arg("train")
        .arg("--config")
        .arg(job.dir.join("config.toml"))
        .arg("--out")
        .arg(&job.dir)
        .arg("--seed")
        .arg(job.seed.to_string())
        .arg("--force")
        .arg("--quiet");
    if let Some(steps) = sweep.total_steps {
        cmd.arg("--total-steps").arg(steps.to_string());
    }
    cmd.stdout(Stdio::null()).stderr(log).spawn()
}

fn finish(job: &Job, status: std::io::Result<std::process::ExitStatus>) -> RunResult {
    let mut result = RunResult {
        variant: job.variant.clone(),
        seed: job.seed,
        final_coverage: None,
        failure: None,
        exit_code: None,
    };
    match status {
        Ok(s) if s.success() => match final_coverage(&job.dir.join(METRICS_NAME)) {
            Ok(c) => result.final_coverage = Some(c),
            Err(e) => result.failure = Some(e.message),
        },
        Ok(s) => {
            result.exit_code = s.code();
            result.failure = Some(format!("exit status {s}; see {}", job.dir.join("train.log").display()));
        }
        Err(e) => result.failure = Some(e.to_string()),
    }
    result
}

pub fn ablate(args: &AblateArgs) -> CliResult<SweepOutcome> {
    let mut sweep = load_sweep(&args.sweep)?;
    if let Some(seeds) = &args.seeds {
        sweep.seeds = seeds.clone();
    }
    let configs = variant_configs(&sweep)?;
    let mut jobs = Vec::new();
    for (v, text) in sweep.variants.iter().zip(&configs) {
        for &seed in &sweep.seeds {
            let dir = args.out.join(&v.name).join(format!("seed_{seed}"));
            fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            fs::write(dir.join("config.toml"), text).map_err(|e| CliError::io(&dir, e))?;
            jobs.push(Job {
                variant: v.name.clone(),
                seed,
                dir,
            });
        }
    }

    let parallel = args.parallel.max(1);
    let mut results: Vec<Option<RunResult>> = vec![None; jobs.len()];
    let mut running: Vec<(usize, Child)> = Vec::new();
    let mut next = 0;
    while next < jobs.len() || !running.is_empty() {
        while running.len() < parallel && next < jobs.len() {
            match spawn(&jobs[next], &sweep, &args.exe) {
                Ok(child) => running.push((next, child)),
                Err(e) => results[next] = Some(finish(&jobs[next], Err(e))),
            }
            next += 1;
        }
        let mut i = 0;
        while i < running.len() {
            match running[i].1.try_wait() {
                Ok(Some(status)) => {
                    let (j, _) = running.remove(i);
                    results[j] = Some(finish(&jobs[j], Ok(status)));
                }
                Ok(None) => i += 1,
                Err(e) => {
                    let (j, _) = running.remove(i);
                    results[j] = Some(finish(&jobs[j], Err(e)));
                }
            }
        }
        if !running.is_empty() {
            thread::sleep(Duration::from_millis(50));
        }
    }
    let runs: Vec<RunResult> = results.into_iter().map(|r| r.expect("every job finishes")).collect();

    let summaries: Vec<VariantSummary> = sweep
        .variants
        .iter()
        .map(|v| {
            let covs: Vec<f64> = runs.iter().filter(|r| r.variant == v.name).filter_map(|r| r.final_coverage).collect();
            let (mean, std) = mean_std(&covs);
            VariantSummary {
                variant: v.name.clone(),
                mean,
                std,
                runs: covs.len(),
            }
        })
        .collect();

    let summary_path = args.out.join(SUMMARY_NAME);
    write_summary(&summary_path, &runs, &summaries)?;
    Ok(SweepOutcome {
        runs,
        summaries,
        summary_path,
    })
}

/// One row per run, then one `mean` row per variant whose `std` column is
/// filled.
fn write_summary(path: &Path, runs: &[RunResult], summaries: &[VariantSummary]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    let io = |e: csv::Error| CliError::io(path, e);
    w.write_record(["variant", "seed", "final_coverage", "std", "status"]).map_err(io)?;
    for r in runs {
        let status = match &r.failure {
            None => "ok".to_string(),
            Some(_) => format!("failed({})", r.exit_code.map(|c| c.to_string()).unwrap_or("-".into())),
        };
        let cov = r.final_coverage.map(|c| c.to_string()).unwrap_or_default();
        w.write_record([r.variant.as_str(), &r.seed.to_string(), &cov, "", &status]).map_err(io)?;
    }
    for s in summaries {
        w.write_record([
            s.variant.as_str(),
            "mean",
            &s.mean.to_string(),
            &s.std.to_string(),
            &format!("n={}", s.runs),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Exit code for a finished sweep: the first failing child's code when it
/// is a known one, otherwise usage.
pub fn sweep_exit_code(outcome: &SweepOutcome) -> i32 {
    match outcome.runs.iter().find(|r| r.failure.is_some()) {
        None => 0,
        Some(r) => match r.exit_code {
            Some(c @ (2 | 3)) => c,
            _ => EXIT_USAGE,
        },
    }
}
