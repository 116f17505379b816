//! The `eval` verb: coverage and zero-shot goal reaching for a checkpoint.

use std::fs;
use std::path::{Path, PathBuf};

use csf_core::evalsuite::{eval_rng, measure_coverage, CoverageGrid, GoalTask, RandomController};
use csf_core::trainer::{evaluate_policy, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{self, RESOLVED_NAME};
use crate::error::{CliError, CliResult};

pub const EVAL_NAME: &str = "eval.json";

/// Mean coverage of [`random_policy_coverage`] over seeds 0..5 with the
/// default config: 118, 106, 130, 108 and 115 cells.
pub const RANDOM_POLICY_COVERAGE: f64 = 115.4;

/// Coverage of uniformly random actions under the evaluation protocol
/// (same number of episodes and horizon as a policy evaluation).
pub fn random_policy_coverage(cfg: &TrainConfig, seed: u64) -> csf_core::Result<usize> {
    let mut controller = RandomController {
        rng: ChaCha8Rng::seed_from_u64(seed),
        action_dim: cfg.env.action_dim(),
    };
    let mut grid = CoverageGrid::new(cfg.eval.cell_size);
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    measure_coverage(
        &mut controller,
        &cfg.env,
        cfg.eval.coverage_skills,
        cfg.skill.dim,
        cfg.skill.mode,
        &mut grid,
        &mut rng,
    )
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub goals_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalReport {
    pub goal: [f64; 2],
    pub radius: f64,
    pub staying_frac: f64,
    pub final_distance: f64,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StayingSummary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub reached: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub iteration: u64,
    pub env_steps: u64,
    pub coverage: usize,
    pub staying: StayingSummary,
    pub goals: Vec<GoalReport>,
}

/// A goal given either as `[x, y]` or with its own radius.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum GoalEntry {
    Point([f64; 2]),
    Full { goal: [f64; 2], radius: Option<f64> },
}

pub fn read_goals(path: &Path, cfg: &TrainConfig) -> CliResult<Vec<GoalTask>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let entries: Vec<GoalEntry> =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    if entries.is_empty() {
        return Err(CliError::usage(format!("{}: no goals listed", path.display())));
    }
    entries
        .into_iter()
        .map(|e| {
            let (goal, radius) = match e {
                GoalEntry::Point(g) => (g, None),
                GoalEntry::Full { goal, radius } => (goal, radius),
            };
            Ok(GoalTask::new(&cfg.env, goal, radius.unwrap_or(cfg.eval.goal_radius))?)
        })
        .collect()
}

/// `<run>/checkpoints/x.skf` belongs to `<run>`; anything else to its own
/// directory.
pub fn run_dir_of(checkpoint: &Path) -> PathBuf {
    let parent = checkpoint.parent().unwrap_or(Path::new("."));
    if parent.file_name().is_some_and(|n| n == crate::train::CHECKPOINT_DIR) {
        parent.parent().unwrap_or(Path::new(".")).to_path_buf()
    } else {
        parent.to_path_buf()
    }
}

/// The config stored next to a checkpoint unless one is given.
pub fn checkpoint_config(checkpoint: &Path, explicit: Option<&Path>) -> CliResult<TrainConfig> {
    match explicit {
        Some(path) => config::load_config(path),
        None => {
            let path = run_dir_of(checkpoint).join(RESOLVED_NAME);
            if !path.exists() {
                return Err(CliError::usage(format!(
                    "no --config given and {} does not exist",
                    path.display()
                )));
            }
            config::load_config(&path)
        }
    }
}

pub fn evaluate(args: &EvalArgs) -> CliResult<(EvalReport, PathBuf)> {
    if !args.checkpoint.exists() {
        return Err(CliError::usage(format!("checkpoint {} does not exist", args.checkpoint.display())));
    }
    let mut cfg = checkpoint_config(&args.checkpoint, args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let goals = args.goals_file.as_deref().map(|p| read_goals(p, &cfg)).transpose()?;
    let state = checkpoint::load_state(&args.checkpoint, cfg.clone())?;
    let mut rng = eval_rng(cfg.seed, state.iteration);
    let summary = evaluate_policy(&state.repr, &state.pi, &state.normalizer, &cfg, goals.as_deref(), &mut rng)?;

    let fractions: Vec<f64> = summary.outcomes.iter().map(|o| o.fraction).collect();
    let n = fractions.len().max(1) as f64;
    let mean = fractions.iter().sum::<f64>() / n;
    let var = fractions.iter().map(|f| (f - mean) * (f - mean)).sum::<f64>() / n;
    let report = EvalReport {
        seed: cfg.seed,
        iteration: state.iteration,
        env_steps: state.env_steps,
        coverage: summary.coverage,
        staying: StayingSummary {
            mean: summary.mean_staying_frac,
            std: var.sqrt(),
            min: fractions.iter().copied().fold(f64::INFINITY, f64::min),
            max: fractions.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            reached: fractions.iter().filter(|&&f| f > 0.0).count(),
        },
        goals: summary
            .goals
            .iter()
            .zip(&summary.outcomes)
            .map(|(g, o)| GoalReport {
                goal: g.goal,
                radius: g.radius,
                staying_frac: o.fraction,
                final_distance: o.final_distance,
                fallbacks: o.fallbacks,
            })
            .collect(),
    };
    let out_dir = args.out.clone().unwrap_or_else(|| run_dir_of(&args.checkpoint));
    fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    let path = out_dir.join(EVAL_NAME);
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::io(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok((report, path))
}
