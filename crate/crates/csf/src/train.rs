//! The `train` verb and the run-directory layout.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use csf_core::trainer::{run_from, IterationMetrics, RunObserver, RunReport, TrainConfig, TrainState};
use serde::Serialize;

use crate::checkpoint;
use crate::config::{self, RESOLVED_NAME};
use crate::error::{CliError, CliResult};
use crate::metrics::MetricsWriter;

pub const METRICS_NAME: &str = "metrics.csv";
pub const TRAJECTORIES_NAME: &str = "trajectories.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.skf";
pub const LATEST_CHECKPOINT: &str = "latest.skf";
pub const DIVERGENCE_NAME: &str = "divergence.json";
/// Transitions kept in the trajectory dump.
pub const TRAJECTORY_DUMP_LEN: usize = 10_000;

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub total_steps: Option<u64>,
    pub force: bool,
    /// Continue from this checkpoint, appending to the existing metrics.
    pub resume: Option<PathBuf>,
    pub quiet: bool,
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub report: RunReport,
    pub final_checkpoint: PathBuf,
}

/// The config a train invocation would run with.
pub fn resolve_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => config::load_config(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = args.total_steps {
        cfg.total_steps = steps;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct FileObserver {
    start: Instant,
    metrics: MetricsWriter,
    latest: PathBuf,
    quiet: bool,
    failure: Option<CliError>,
}

impl RunObserver for FileObserver {
    fn elapsed_s(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn on_iteration(&mut self, m: &IterationMetrics, state: &TrainState) -> csf_core::Result<()> {
        let mut step = || -> CliResult<()> {
            self.metrics.push(m)?;
            if m.coverage.is_some() {
                checkpoint::save_state(&self.latest, state)?;
                if !self.quiet {
                    eprintln!(
                        "iter {:>5}  steps {:>8}  coverage {}  staying {:.3}  {:.1}s",
                        m.iteration,
                        m.env_steps,
                        m.coverage.unwrap_or_default(),
                        m.goal_staying_frac.unwrap_or_default(),
                        m.wall_s
                    );
                }
            }
            Ok(())
        };
        step().map_err(|e| {
            let msg = e.message.clone();
            self.failure = Some(e);
            csf_core::Error::State(msg)
        })
    }
}

pub fn train(args: &TrainArgs) -> CliResult<TrainOutcome> {
    let cfg = resolve_config(args)?;
    fs::create_dir_all(args.out.join(CHECKPOINT_DIR)).map_err(|e| CliError::io(&args.out, e))?;
    let metrics_path = args.out.join(METRICS_NAME);
    let (mut state, metrics) = match &args.resume {
        Some(ckpt) => (checkpoint::load_state(ckpt, cfg.clone())?, MetricsWriter::append(&metrics_path)?),
        None => (TrainState::new(cfg.clone())?, MetricsWriter::create(&metrics_path, args.force)?),
    };
    config::save_config(&cfg, &args.out.join(RESOLVED_NAME))?;

    let mut observer = FileObserver {
        start: Instant::now(),
        metrics,
        latest: args.out.join(CHECKPOINT_DIR).join(LATEST_CHECKPOINT),
        quiet: args.quiet,
        failure: None,
    };
    let report = match run_from(&mut state, &mut observer) {
        Ok(report) => report,
        Err(err) => {
            if let Some(failure) = observer.failure {
                return Err(failure);
            }
            if let Some(dump) = &state.divergence {
                let path = args.out.join(DIVERGENCE_NAME);
                write_divergence(&path, dump)?;
                return Err(CliError::numeric(format!("{err}; batch dumped to {}", path.display())));
            }
            return Err(err.into());
        }
    };

    let final_checkpoint = args.out.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT);
    checkpoint::save_state(&final_checkpoint, &state)?;
    let _ = fs::remove_file(&observer.latest);
    write_trajectories(&args.out.join(TRAJECTORIES_NAME), &state, TRAJECTORY_DUMP_LEN)?;
    Ok(TrainOutcome {
        state,
        report,
        final_checkpoint,
    })
}

#[derive(Serialize)]
struct DivergenceRecord<'a> {
    stage: &'a str,
    iteration: u64,
    indices: &'a [usize],
    obs: Vec<&'a [f64]>,
    actions: Vec<&'a [f64]>,
    next_obs: Vec<&'a [f64]>,
    z: Vec<&'a [f64]>,
}

fn rows(a: &csf_core::DenseArray) -> Vec<&[f64]> {
    (0..a.rows()).map(|i| a.row(i)).collect()
}

fn write_divergence(path: &Path, dump: &csf_core::trainer::DivergenceDump) -> CliResult<()> {
    let b = &dump.batch;
    let rec = DivergenceRecord {
        stage: &dump.stage,
        iteration: dump.iteration,
        indices: &b.indices,
        obs: rows(&b.s),
        actions: rows(&b.a),
        next_obs: rows(&b.s_next),
        z: rows(&b.z),
    };
    // NaN is not JSON; serde_json writes it as null.
    let text = serde_json::to_string_pretty(&rec).map_err(|e| CliError::io(path, e))?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct TransitionRecord {
    pub t: usize,
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub z: Vec<f64>,
    pub episode_id: u64,
}

/// The most recent `limit` transitions in collection order. Episodes always
/// run the full horizon, so the time step and episode follow from the
/// running transition count.
pub fn recent_transitions(state: &TrainState, limit: usize) -> CliResult<Vec<TransitionRecord>> {
    let buffer = &state.buffer;
    let n = limit.min(buffer.len());
    let total = state.env_steps;
    let horizon = state.config.env.horizon as u64;
    let first = total - n as u64;
    let slots: Vec<usize> = (first..total).map(|k| (k % buffer.capacity() as u64) as usize).collect();
    let batch = buffer.gather(&slots)?;
    Ok((0..n)
        .map(|i| {
            let k = first + i as u64;
            TransitionRecord {
                t: (k % horizon) as usize,
                obs: batch.s.row(i).to_vec(),
                action: batch.a.row(i).to_vec(),
                next_obs: batch.s_next.row(i).to_vec(),
                z: batch.z.row(i).to_vec(),
                episode_id: k / horizon,
            }
        })
        .collect())
}

pub fn write_trajectories(path: &Path, state: &TrainState, limit: usize) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in recent_transitions(state, limit)? {
        serde_json::to_writer(&mut w, &rec).map_err(|e| CliError::io(path, e))?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_trajectories(path: &Path) -> CliResult<Vec<TransitionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::usage(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
