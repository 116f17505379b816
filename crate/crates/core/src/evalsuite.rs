//! Evaluation protocols: state coverage, zero-shot goal reaching,
//! representation diagnostics and oracle cross-checks.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::autodiff::{adam_step, Activation, AdamConfig, AdamState};
use crate::envs::{self, chain_sf_oracle, EnvKind, EnvSpec, EnvState, StateNormalizer};
use crate::error::{Error, Result};
use crate::repr::{self, ReprNet};
use crate::sf_policy::{ema_update, sf_td_loss, PolicyNet, SuccessorNet, TdBatch};
use crate::sphere::{self, SkillMode, SkillVector};

/// Chooses actions from the true environment state and a skill.
pub trait Controller {
    fn act(&mut self, state: &EnvState, z: &[f64]) -> Result<Vec<f64>>;
}

/// Deterministic `tanh(μ)` actions of a trained policy on normalized
/// observations. The normalizer is read-only here.
#[derive(Debug, Clone, Copy)]
pub struct PolicyController<'a> {
    pub policy: &'a PolicyNet,
    pub normalizer: &'a StateNormalizer,
}

impl Controller for PolicyController<'_> {
    fn act(&mut self, state: &EnvState, z: &[f64]) -> Result<Vec<f64>> {
        let s = DenseArray::row_vector(&self.normalizer.normalize(&state.observation));
        let a = self.policy.act_batch(&s, &DenseArray::row_vector(z), None)?;
        Ok(a.into_vec())
    }
}

/// Uniform random actions in `[−1, 1]^k`, ignoring the skill.
#[derive(Debug, Clone)]
pub struct RandomController {
    pub rng: ChaCha8Rng,
    pub action_dim: usize,
}

impl Controller for RandomController {
    fn act(&mut self, _state: &EnvState, _z: &[f64]) -> Result<Vec<f64>> {
        Ok((0..self.action_dim).map(|_| self.rng.random_range(-1.0..=1.0)).collect())
    }
}

/// Any closure `(state, z) -> action`.
pub struct FnController<F>(pub F);

impl<F: FnMut(&EnvState, &[f64]) -> Vec<f64>> Controller for FnController<F> {
    fn act(&mut self, state: &EnvState, z: &[f64]) -> Result<Vec<f64>> {
        Ok((self.0)(state, z))
    }
}

/// Set of visited planar cells of side `cell_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageGrid {
    pub cell_size: f64,
    cells: BTreeSet<(i64, i64)>,
}

impl CoverageGrid {
    pub fn new(cell_size: f64) -> Self {
        Self {
            cell_size,
            cells: BTreeSet::new(),
        }
    }

    pub fn visit(&mut self, pos: [f64; 2]) {
        let cell = |v: f64| (v / self.cell_size).floor() as i64;
        self.cells.insert((cell(pos[0]), cell(pos[1])));
    }

    pub fn count(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> impl Iterator<Item = &(i64, i64)> {
        self.cells.iter()
    }
}

/// Roll one full episode under skill `z`, calling `visit` on every state
/// (including the initial one).
pub fn rollout<C: Controller + ?Sized, R: Rng + ?Sized>(
    controller: &mut C,
    spec: &EnvSpec,
    z: &[f64],
    rng: &mut R,
    mut visit: impl FnMut(&EnvState),
) -> Result<EnvState> {
    let mut state = envs::reset(spec, rng);
    visit(&state);
    loop {
        let action = controller.act(&state, z)?;
        let (next, done) = envs::step(spec, &state, &action)?;
        visit(&next);
        state = next;
        if done {
            return Ok(state);
        }
    }
}

/// One episode per skill drawn from the prior; returns the number of
/// distinct cells visited across all of them.
pub fn measure_coverage<C: Controller + ?Sized, R: Rng + ?Sized>(
    controller: &mut C,
    spec: &EnvSpec,
    n_skills: usize,
    skill_dim: usize,
    mode: SkillMode,
    grid: &mut CoverageGrid,
    rng: &mut R,
) -> Result<usize> {
    for _ in 0..n_skills {
        let z = sphere::sample_skill(skill_dim, mode, rng)?;
        rollout(controller, spec, z.values(), rng, |s| grid.visit(s.position))?;
    }
    Ok(grid.count())
}

/// Zero-shot goal: a target position and the observation rendered there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalTask {
    pub goal: [f64; 2],
    pub goal_obs: Vec<f64>,
    pub radius: f64,
    pub horizon: usize,
}

impl GoalTask {
    pub fn new(spec: &EnvSpec, goal: [f64; 2], radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Config("goal radius must be positive".into()));
        }
        Ok(Self {
            goal,
            goal_obs: envs::goal_observation(spec, goal),
            radius,
            horizon: spec.horizon,
        })
    }
}

/// Unit skill along `delta`, or `None` when `‖delta‖ ≤ 1e-8`. Exactly
/// invariant to positive rescaling of `delta`.
pub fn skill_towards(delta: &[f64]) -> Option<Vec<f64>> {
    let n = sphere::norm(delta);
    (n > 1e-8).then(|| delta.iter().map(|v| v / n).collect())
}

/// Result of goal-skill inference.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalSkill {
    pub z: SkillVector,
    /// The representation difference was degenerate and `z` is a uniform
    /// random skill instead.
    pub fallback: bool,
}

/// `z = (φ(g) − φ(s)) / ‖φ(g) − φ(s)‖`, the skill maximizing the critic
/// towards the goal.
pub fn infer_goal_skill<R: Rng + ?Sized>(
    net: &ReprNet,
    normalizer: &StateNormalizer,
    obs: &[f64],
    goal_obs: &[f64],
    rng: &mut R,
) -> Result<GoalSkill> {
    let rows = DenseArray::from_rows(
        obs.len(),
        [normalizer.normalize(obs), normalizer.normalize(goal_obs)].iter().map(Vec::as_slice),
    )?;
    let phi = net.embed(&rows)?;
    let delta: Vec<f64> = phi.row(1).iter().zip(phi.row(0)).map(|(g, s)| g - s).collect();
    match skill_towards(&delta) {
        Some(z) => Ok(GoalSkill {
            z: SkillVector::new(z, SkillMode::ContinuousVmfUniform)?,
            fallback: false,
        }),
        None => Ok(GoalSkill {
            z: sphere::sample_uniform_sphere(delta.len(), rng)?,
            fallback: true,
        }),
    }
}

/// Outcome of one goal episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalOutcome {
    pub fraction: f64,
    pub final_distance: f64,
    pub fallbacks: usize,
}

/// Fraction of the horizon's steps spent within `radius` of the goal, with
/// the skill re-inferred from the current state every `period` steps.
pub fn staying_time_fraction<C: Controller + ?Sized, R: Rng + ?Sized>(
    controller: &mut C,
    net: &ReprNet,
    normalizer: &StateNormalizer,
    spec: &EnvSpec,
    task: &GoalTask,
    period: usize,
    rng: &mut R,
) -> Result<GoalOutcome> {
    let period = period.max(1);
    let mut state = envs::reset(spec, rng);
    let mut inside = 0usize;
    let mut fallbacks = 0usize;
    let mut z = Vec::new();
    let dist = |s: &EnvState| {
        let dx = s.position[0] - task.goal[0];
        let dy = s.position[1] - task.goal[1];
        (dx * dx + dy * dy).sqrt()
    };
    for t in 0..task.horizon {
        if t % period == 0 {
            let inferred = infer_goal_skill(net, normalizer, &state.observation, &task.goal_obs, rng)?;
            fallbacks += usize::from(inferred.fallback);
            z = inferred.z.into_vec();
        }
        let action = controller.act(&state, &z)?;
        let (next, _) = envs::step(spec, &state, &action)?;
        state = next;
        inside += usize::from(dist(&state) <= task.radius);
    }
    Ok(GoalOutcome {
        fraction: inside as f64 / task.horizon as f64,
        final_distance: dist(&state),
        fallbacks,
    })
}

/// `n` goals uniform in `[−range, range]²`.
pub fn sample_goals<R: Rng + ?Sized>(
    spec: &EnvSpec,
    n: usize,
    range: f64,
    radius: f64,
    rng: &mut R,
) -> Result<Vec<GoalTask>> {
    (0..n)
        .map(|_| {
            let g = [rng.random_range(-range..=range), rng.random_range(-range..=range)];
            GoalTask::new(spec, g, radius)
        })
        .collect()
}

/// Goal-reaching outcomes over a task list, reduced in task order.
pub fn evaluate_goals<C: Controller + ?Sized, R: Rng + ?Sized>(
    controller: &mut C,
    net: &ReprNet,
    normalizer: &StateNormalizer,
    spec: &EnvSpec,
    tasks: &[GoalTask],
    period: usize,
    rng: &mut R,
) -> Result<Vec<GoalOutcome>> {
    tasks
        .iter()
        .map(|t| staying_time_fraction(controller, net, normalizer, spec, t, period, rng))
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Equal-width histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn from_samples(xs: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0u64; bins];
        let width = (hi - lo) / bins as f64;
        for &x in xs {
            if x >= lo && x <= hi {
                let b = (((x - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
        }
        Self { lo, hi, counts }
    }
}

pub const MIN_DIAGNOSTIC_SAMPLES: usize = 100;
pub const ISOTROPY_TOLERANCE: f64 = 0.02;
pub const UNIFORMITY_THRESHOLD: f64 = 0.2;

/// Summary statistics of `Δφ` against the episode skills.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub samples: usize,
    pub skill_dim: usize,
    pub sq_norm_mean: f64,
    pub sq_norm_histogram: Histogram,
    /// Per-coordinate variances of `Δφ − z`.
    pub residual_variances: Vec<f64>,
    /// Largest `|cov|` between distinct residual coordinates.
    pub residual_max_offdiag: f64,
    /// Largest `|var_i − var_j|` of the residual coordinates.
    pub residual_variance_spread: f64,
    /// `‖E[Δφ/‖Δφ‖]‖`.
    pub mean_resultant_length: f64,
    /// `d·n·R̄²`, asymptotically χ²_d under uniform directions.
    pub rayleigh_statistic: f64,
    pub entropy_estimate: f64,
    pub isotropic: bool,
    pub uniform: bool,
}

/// Raw per-sample values behind a [`DiagnosticRecord`], for histogram dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticSamples {
    pub sq_norms: Vec<f64>,
    pub residuals: DenseArray,
    pub directions: DenseArray,
}

/// Diagnostics of `deltas` (`n × d`) against row-aligned skills `z`.
pub fn repr_diagnostics(deltas: &DenseArray, z: &DenseArray) -> Result<(DiagnosticRecord, DiagnosticSamples)> {
    let (n, d) = deltas.shape();
    if n < MIN_DIAGNOSTIC_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_DIAGNOSTIC_SAMPLES,
            found: n,
        });
    }
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    deltas.same_shape(z, "diagnostic skills")?;

    let sq_norms: Vec<f64> = (0..n).map(|i| deltas.row(i).iter().map(|v| v * v).sum()).collect();
    let sq_norm_mean = mean(&sq_norms);

    let residuals = deltas.zip_map(z, |a, b| a - b);
    let mut res_mean = vec![0.0; d];
    for i in 0..n {
        for (k, m) in res_mean.iter_mut().enumerate() {
            *m += residuals.get(i, k) / n as f64;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..n {
        let r = residuals.row(i);
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += (r[a] - res_mean[a]) * (r[b] - res_mean[b]) / n as f64;
            }
        }
    }
    let residual_variances: Vec<f64> = (0..d).map(|k| cov[k][k]).collect();
    let mut residual_max_offdiag = 0.0f64;
    let mut residual_variance_spread = 0.0f64;
    for a in 0..d {
        for b in 0..d {
            if a != b {
                residual_max_offdiag = residual_max_offdiag.max(cov[a][b].abs());
                residual_variance_spread = residual_variance_spread.max((cov[a][a] - cov[b][b]).abs());
            }
        }
    }

    let mut directions = DenseArray::zeros(n, d);
    let mut resultant = vec![0.0; d];
    for i in 0..n {
        let r = sphere::norm(deltas.row(i));
        if r > 0.0 {
            for k in 0..d {
                let u = deltas.get(i, k) / r;
                directions.set(i, k, u);
                resultant[k] += u / n as f64;
            }
        }
    }
    let mean_resultant_length = sphere::norm(&resultant);
    let rayleigh_statistic = d as f64 * n as f64 * mean_resultant_length * mean_resultant_length;
    let entropy_estimate = repr::resubstitution_entropy(deltas)?;

    let hist_hi = sq_norms.iter().cloned().fold(2.0, f64::max);
    let record = DiagnosticRecord {
        samples: n,
        skill_dim: d,
        sq_norm_mean,
        sq_norm_histogram: Histogram::from_samples(&sq_norms, 0.0, hist_hi, 50),
        residual_max_offdiag,
        residual_variance_spread,
        isotropic: residual_max_offdiag < ISOTROPY_TOLERANCE && residual_variance_spread < ISOTROPY_TOLERANCE,
        uniform: mean_resultant_length < UNIFORMITY_THRESHOLD,
        residual_variances,
        mean_resultant_length,
        rayleigh_statistic,
        entropy_estimate,
    };
    Ok((
        record,
        DiagnosticSamples {
            sq_norms,
            residuals,
            directions,
        },
    ))
}

/// Least-squares line `y ≈ slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub samples: usize,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(Error::InsufficientData { needed: 2, found: n.min(ys.len()) });
    }
    let (mx, my) = (mean(xs), mean(ys));
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Range("regression abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        samples: n,
    })
}

/// Regress the exact log-partition on `‖w‖²` over the given vectors.
pub fn log_partition_slope(ws: &DenseArray) -> Result<LinearFit> {
    let mut xs = Vec::with_capacity(ws.rows());
    let mut ys = Vec::with_capacity(ws.rows());
    for i in 0..ws.rows() {
        let w = ws.row(i);
        let r = sphere::norm(w);
        if r <= sphere::MAX_ARGUMENT {
            xs.push(r * r);
            ys.push(sphere::log_partition(w)?);
        }
    }
    fit_line(&xs, &ys)
}

/// `n` vectors uniform in the `d`-ball of radius `r_max`.
pub fn sample_ball<R: Rng + ?Sized>(n: usize, d: usize, r_max: f64, rng: &mut R) -> Result<DenseArray> {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let u = sphere::sample_uniform_sphere(d, rng)?;
        let r = r_max * rng.random::<f64>().powf(1.0 / d as f64);
        data.extend(u.values().iter().map(|v| v * r));
    }
    DenseArray::from_vec(n, d, data)
}

/// Continuous action encoding of chain moves: `−1` left, `+1` right.
pub fn chain_action_value(action: usize) -> f64 {
    if action == 1 {
        1.0
    } else {
        -1.0
    }
}

fn one_hot(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

/// Greedy chain policy table of a trained actor under skill `z`.
pub fn chain_policy_table(pi: &PolicyNet, spec: &EnvSpec, z: &[f64]) -> Result<Vec<usize>> {
    (0..spec.chain_len)
        .map(|s| {
            let a = pi.act_batch(
                &DenseArray::row_vector(&one_hot(spec.chain_len, s)),
                &DenseArray::row_vector(z),
                None,
            )?;
            Ok(envs::chain_action_index(a.row(0)))
        })
        .collect()
}

/// Largest `|ψ(s, a, z) − ψ_oracle(s, a)|` over every chain state-action
/// pair, with states one-hot encoded and actions as `±1`.
pub fn sf_oracle_check(
    psi: &SuccessorNet,
    spec: &EnvSpec,
    policy: &[usize],
    features: &[[Vec<f64>; 2]],
    z: &[f64],
    gamma: f64,
) -> Result<f64> {
    let oracle = chain_sf_oracle(spec, policy, features, gamma)?;
    let (s, a, zz) = chain_inputs(spec.chain_len, z);
    let fit = psi.eval(&s, &a, &zz, false)?;
    let mut worst = 0.0f64;
    for st in 0..spec.chain_len {
        for act in 0..2 {
            for (k, o) in oracle[st][act].iter().enumerate() {
                worst = worst.max((fit.get(2 * st + act, k) - o).abs());
            }
        }
    }
    Ok(worst)
}

/// All `(state, action)` rows of a chain: row `2s + a`.
fn chain_inputs(n: usize, z: &[f64]) -> (DenseArray, DenseArray, DenseArray) {
    let mut s = Vec::with_capacity(2 * n * n);
    let mut a = Vec::with_capacity(2 * n);
    let mut zz = Vec::with_capacity(2 * n * z.len());
    for st in 0..n {
        for act in 0..2 {
            s.extend(one_hot(n, st));
            a.push(chain_action_value(act));
            zz.extend_from_slice(z);
        }
    }
    (
        DenseArray::from_vec(2 * n, n, s).expect("sized"),
        DenseArray::from_vec(2 * n, 1, a).expect("sized"),
        DenseArray::from_vec(2 * n, z.len(), zz).expect("sized"),
    )
}

/// Settings for [`fit_chain_successor_features`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChainFitConfig {
    pub gamma: f64,
    pub updates: usize,
    pub lr: f64,
    pub tau: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for ChainFitConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            updates: 20_000,
            lr: 1e-3,
            tau: 0.05,
            hidden: vec![32],
            seed: 0,
        }
    }
}

/// TD-train a successor network on every chain state-action pair at once,
/// bootstrapping through the fixed policy table.
pub fn fit_chain_successor_features(
    spec: &EnvSpec,
    policy: &[usize],
    features: &[[Vec<f64>; 2]],
    z: &[f64],
    config: &ChainFitConfig,
) -> Result<SuccessorNet> {
    if spec.kind != EnvKind::ChainMdp {
        return Err(Error::Config("successor fit needs a chain environment".into()));
    }
    let n = spec.chain_len;
    let d = z.len();
    let mut psi = SuccessorNet::new(n, 1, d, &config.hidden, Activation::Tanh, config.seed);
    let mut adam = AdamState::new(
        psi.online.params(),
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let (s, a, zz) = chain_inputs(n, z);
    let mut s_next = Vec::with_capacity(2 * n * n);
    let mut a_next = Vec::with_capacity(2 * n);
    let mut f = Vec::with_capacity(2 * n * d);
    for st in 0..n {
        for act in 0..2 {
            let nx = envs::chain_next(n, st, act);
            s_next.extend(one_hot(n, nx));
            a_next.push(chain_action_value(policy[nx]));
            f.extend_from_slice(&features[st][act]);
        }
    }
    let batch = TdBatch {
        s,
        a,
        s_next: DenseArray::from_vec(2 * n, n, s_next)?,
        next_actions: DenseArray::from_vec(2 * n, 1, a_next)?,
        z: zz,
        features: DenseArray::from_vec(2 * n, d, f)?,
    };
    for _ in 0..config.updates {
        let mut tape = sf_td_loss(&psi, &batch, config.gamma)?;
        let grads = tape.backward(&DenseArray::scalar(1.0))?.for_params(psi.online.params());
        adam_step(psi.online.params_mut(), &grads, &mut adam)?;
        let online = psi.online.params().clone();
        ema_update(&online, psi.target.params_mut(), config.tau)?;
    }
    Ok(psi)
}

/// Per-transition features of a chain from a state embedding table:
/// `features[s][a] = φ(next(s, a)) − φ(s)`.
pub fn chain_delta_features(embedding: &[Vec<f64>]) -> Vec<[Vec<f64>; 2]> {
    let n = embedding.len();
    (0..n)
        .map(|s| {
            [0, 1].map(|a| {
                let nx = envs::chain_next(n, s, a);
                embedding[nx].iter().zip(&embedding[s]).map(|(x, y)| x - y).collect()
            })
        })
        .collect()
}

/// Seeded rng for an evaluation pass, independent of the training stream.
pub fn eval_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7a1_0000_0000);
    rng.set_stream(iteration);
    rng
}

#[cfg(test)]
mod tests;
