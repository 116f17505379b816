//! Training loop: collection rounds into a replay buffer, interleaved
//! representation / successor-feature / actor / entropy updates, periodic
//! evaluation, and full-state export for checkpoints.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::autodiff::{adam_step, Activation, AdamConfig, AdamState, ParamSet, Tape};
use crate::envs::{self, EnvSpec, StateNormalizer};
use crate::error::{Error, Result};
use crate::evalsuite::{self, CoverageGrid, GoalOutcome, GoalTask, PolicyController};
use crate::repr::{
    self, CriticKind, DualVariable, Negatives, PairBatch, ReprNet, ReprObjective, RewardMode,
};
use crate::sf_policy::{
    actor_loss, ema_update, entropy_coef_update, sample_action, sf_td_loss, EntropyTuner, PolicyNet,
    SuccessorNet, TdBatch,
};
use crate::sphere::{self, SkillMode};

pub const CONFIG_VERSION: u32 = 1;

/// Columns of the metrics CSV, in order.
pub const METRICS_HEADER: [&str; 11] = [
    "iteration",
    "env_steps",
    "loss_repr",
    "loss_sf",
    "loss_actor",
    "alpha",
    "mean_reward",
    "e_sq_norm_dphi",
    "coverage",
    "goal_staying_frac",
    "wall_s",
];

// ---------------------------------------------------------------------------
// Replay buffer

/// Ring buffer of raw transitions, each tagged with its episode's skill.
/// Rewards are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    action_dim: usize,
    skill_dim: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    next_obs: Vec<f64>,
    skills: Vec<f64>,
    size: usize,
    cursor: usize,
}

/// Transitions gathered from the buffer by index.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch {
    pub indices: Vec<usize>,
    pub s: DenseArray,
    pub a: DenseArray,
    pub s_next: DenseArray,
    pub z: DenseArray,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, action_dim: usize, skill_dim: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            obs_dim,
            action_dim,
            skill_dim,
            obs: Vec::new(),
            actions: Vec::new(),
            next_obs: Vec::new(),
            skills: Vec::new(),
            size: 0,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, obs: &[f64], action: &[f64], next_obs: &[f64], z: &[f64]) -> Result<()> {
        if obs.len() != self.obs_dim
            || next_obs.len() != self.obs_dim
            || action.len() != self.action_dim
            || z.len() != self.skill_dim
        {
            return Err(Error::Config(format!(
                "transition dims ({}, {}, {}, {}) do not match buffer ({}, {}, {})",
                obs.len(),
                action.len(),
                next_obs.len(),
                z.len(),
                self.obs_dim,
                self.action_dim,
                self.skill_dim
            )));
        }
        if self.size < self.capacity {
            self.obs.extend_from_slice(obs);
            self.actions.extend_from_slice(action);
            self.next_obs.extend_from_slice(next_obs);
            self.skills.extend_from_slice(z);
            self.size += 1;
        } else {
            let c = self.cursor;
            self.obs[c * self.obs_dim..(c + 1) * self.obs_dim].copy_from_slice(obs);
            self.actions[c * self.action_dim..(c + 1) * self.action_dim].copy_from_slice(action);
            self.next_obs[c * self.obs_dim..(c + 1) * self.obs_dim].copy_from_slice(next_obs);
            self.skills[c * self.skill_dim..(c + 1) * self.skill_dim].copy_from_slice(z);
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.size == 0 {
            return Err(Error::InsufficientData { needed: 1, found: 0 });
        }
        Ok((0..n).map(|_| rng.random_range(0..self.size)).collect())
    }

    pub fn gather(&self, indices: &[usize]) -> Result<TransitionBatch> {
        let pick = |data: &[f64], w: usize| -> Result<DenseArray> {
            let mut out = Vec::with_capacity(indices.len() * w);
            for &i in indices {
                out.extend_from_slice(&data[i * w..(i + 1) * w]);
            }
            DenseArray::from_vec(indices.len(), w, out)
        };
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.size) {
            return Err(Error::Range(format!("buffer index {bad} >= size {}", self.size)));
        }
        Ok(TransitionBatch {
            indices: indices.to_vec(),
            s: pick(&self.obs, self.obs_dim)?,
            a: pick(&self.actions, self.action_dim)?,
            s_next: pick(&self.next_obs, self.obs_dim)?,
            z: pick(&self.skills, self.skill_dim)?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<TransitionBatch> {
        let idx = self.sample_indices(n, rng)?;
        self.gather(&idx)
    }

    /// FNV-1a over the bit patterns of every stored value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            for b in x.to_le_bytes() {
                h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        feed(self.size as u64);
        feed(self.cursor as u64);
        for part in [&self.obs, &self.actions, &self.next_obs, &self.skills] {
            for v in part.iter() {
                feed(v.to_bits());
            }
        }
        h
    }

    fn export(&self, out: &mut Vec<(String, DenseArray)>) {
        let n = self.size;
        let arr = |data: &[f64], w: usize| DenseArray::from_vec(n, w, data.to_vec()).expect("sized");
        out.push(("buffer/obs".into(), arr(&self.obs, self.obs_dim)));
        out.push(("buffer/actions".into(), arr(&self.actions, self.action_dim)));
        out.push(("buffer/next_obs".into(), arr(&self.next_obs, self.obs_dim)));
        out.push(("buffer/skills".into(), arr(&self.skills, self.skill_dim)));
        out.push((
            "buffer/meta".into(),
            DenseArray::row_vector(&[self.capacity as f64, n as f64, self.cursor as f64]),
        ));
    }

    fn import(&mut self, arrays: &NamedArrays<'_>) -> Result<()> {
        let meta = arrays.get("buffer/meta", 1, 3)?;
        let capacity = meta.get(0, 0) as usize;
        let size = meta.get(0, 1) as usize;
        let cursor = meta.get(0, 2) as usize;
        if capacity != self.capacity || size > capacity || cursor >= capacity.max(1) {
            return Err(Error::State(format!(
                "buffer meta (capacity {capacity}, size {size}, cursor {cursor}) does not fit capacity {}",
                self.capacity
            )));
        }
        self.obs = arrays.get("buffer/obs", size, self.obs_dim)?.data().to_vec();
        self.actions = arrays.get("buffer/actions", size, self.action_dim)?.data().to_vec();
        self.next_obs = arrays.get("buffer/next_obs", size, self.obs_dim)?.data().to_vec();
        self.skills = arrays.get("buffer/skills", size, self.skill_dim)?.data().to_vec();
        self.size = size;
        self.cursor = cursor;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkillConfig {
    pub dim: usize,
    pub mode: SkillMode,
}

impl Default for SkillConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            mode: SkillMode::ContinuousVmfUniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReprConfig {
    pub objective: ReprObjective,
    pub critic: CriticKind,
    pub xi: f64,
    /// Number of fresh prior samples per batch.
    pub negatives: usize,
    /// Contrast against the other skills in the batch instead of fresh
    /// prior samples.
    pub in_batch_negatives: bool,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dual_lambda: f64,
    pub dual_lr: f64,
    pub dual_slack: f64,
}

impl Default for ReprConfig {
    fn default() -> Self {
        let dual = DualVariable::default();
        Self {
            objective: ReprObjective::Csf,
            critic: CriticKind::InnerProduct,
            xi: 5.0,
            negatives: 256,
            in_batch_negatives: false,
            hidden: vec![64],
            activation: Activation::Relu,
            dual_lambda: dual.lambda,
            dual_lr: dual.lr,
            dual_slack: dual.slack,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub mode: RewardMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfConfig {
    pub gamma: f64,
    pub tau: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for SfConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 5e-3,
            hidden: vec![64],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub initial_alpha: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            activation: Activation::Tanh,
            initial_alpha: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub updates_per_round: usize,
    pub trajectories_per_round: usize,
    pub warmup_rounds: usize,
    pub buffer_capacity: usize,
    /// Global-norm gradient clip; 0 disables clipping.
    pub max_grad_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 256,
            updates_per_round: 50,
            trajectories_per_round: 8,
            warmup_rounds: 10,
            buffer_capacity: 1_000_000,
            max_grad_norm: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate every this many iterations (and at the last one); 0 turns
    /// periodic evaluation off.
    pub every: u64,
    pub coverage_skills: usize,
    pub cell_size: f64,
    pub goals: usize,
    pub goal_range: f64,
    pub goal_radius: f64,
    pub reinference_period: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            every: 25,
            coverage_skills: 48,
            cell_size: 1.0,
            goals: 50,
            goal_range: 10.0,
            goal_radius: 1.0,
            reinference_period: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub config_version: u32,
    pub seed: u64,
    pub total_steps: u64,
    pub env: EnvSpec,
    pub skill: SkillConfig,
    pub repr: ReprConfig,
    pub reward: RewardConfig,
    pub sf: SfConfig,
    pub policy: PolicyConfig,
    pub optim: OptimConfig,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            seed: 0,
            total_steps: 200_000,
            env: EnvSpec::point_mass_2d(),
            skill: SkillConfig::default(),
            repr: ReprConfig::default(),
            reward: RewardConfig::default(),
            sf: SfConfig::default(),
            policy: PolicyConfig::default(),
            optim: OptimConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("{key}: {why}")));
        if self.config_version != CONFIG_VERSION {
            return bad("config_version", "unsupported version");
        }
        self.env.validate()?;
        if self.skill.dim == 0 {
            return bad("skill.dim", "must be positive");
        }
        if self.skill.mode == SkillMode::ContinuousVmfUniform && self.skill.dim < 2 {
            return bad("skill.dim", "must be at least 2 for continuous skills");
        }
        if !(self.repr.xi > 0.0) {
            return bad("repr.xi", "must be positive");
        }
        if self.repr.negatives < 2 {
            return bad("repr.negatives", "need at least 2");
        }
        if self.repr.dual_lambda < 0.0 || self.repr.dual_lr < 0.0 || self.repr.dual_slack < 0.0 {
            return bad("repr.dual_*", "must be non-negative");
        }
        if !(0.0..1.0).contains(&self.sf.gamma) {
            return bad("sf.gamma", "must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.sf.tau) {
            return bad("sf.tau", "must be in [0, 1]");
        }
        if !(self.policy.initial_alpha > 0.0) {
            return bad("policy.initial_alpha", "must be positive");
        }
        if !(self.optim.lr >= 0.0) {
            return bad("optim.lr", "must be non-negative");
        }
        if self.optim.batch_size < 2 {
            return bad("optim.batch_size", "need at least 2");
        }
        if self.optim.trajectories_per_round == 0 {
            return bad("optim.trajectories_per_round", "must be positive");
        }
        if !(self.optim.max_grad_norm >= 0.0) {
            return bad("optim.max_grad_norm", "must be non-negative (0 disables clipping)");
        }
        if self.optim.buffer_capacity < self.optim.batch_size {
            return bad("optim.buffer_capacity", "smaller than the batch size");
        }
        if !(self.eval.cell_size > 0.0) || !(self.eval.goal_radius > 0.0) {
            return bad("eval", "cell_size and goal_radius must be positive");
        }
        Ok(())
    }

    pub fn steps_per_round(&self) -> u64 {
        (self.optim.trajectories_per_round * self.env.horizon) as u64
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.optim.lr,
            max_grad_norm: (self.optim.max_grad_norm > 0.0).then_some(self.optim.max_grad_norm),
            ..AdamConfig::default()
        }
    }
}

// ---------------------------------------------------------------------------
// Training state

/// Batch that produced a non-finite loss, kept for post-mortem dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceDump {
    pub stage: String,
    pub iteration: u64,
    pub batch: TransitionBatch,
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub repr: ReprNet,
    pub repr_adam: AdamState,
    pub psi: SuccessorNet,
    pub psi_adam: AdamState,
    pub pi: PolicyNet,
    pub pi_adam: AdamState,
    pub tuner: EntropyTuner,
    pub dual: DualVariable,
    pub normalizer: StateNormalizer,
    pub buffer: ReplayBuffer,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
    pub env_steps: u64,
    pub updates: u64,
    pub divergence: Option<DivergenceDump>,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let spec = &config.env;
        let (obs, act, d) = (spec.obs_dim(), spec.action_dim(), config.skill.dim);
        let seed = config.seed;
        let repr = ReprNet::new(obs, &config.repr.hidden, d, config.repr.critic, config.repr.activation, seed);
        let psi = SuccessorNet::new(obs, act, d, &config.sf.hidden, config.sf.activation, seed);
        let pi = PolicyNet::new(obs, d, act, &config.policy.hidden, config.policy.activation, seed);
        let adam = config.adam();
        Ok(Self {
            repr_adam: AdamState::new(repr.params(), adam),
            psi_adam: AdamState::new(psi.online.params(), adam),
            pi_adam: AdamState::new(pi.params(), adam),
            tuner: EntropyTuner::new(act, config.policy.initial_alpha, adam),
            dual: DualVariable {
                lambda: config.repr.dual_lambda,
                lr: config.repr.dual_lr,
                slack: config.repr.dual_slack,
            },
            normalizer: StateNormalizer::new(obs),
            buffer: ReplayBuffer::new(config.optim.buffer_capacity, obs, act, d),
            rng: ChaCha8Rng::seed_from_u64(seed),
            iteration: 0,
            env_steps: 0,
            updates: 0,
            divergence: None,
            repr,
            psi,
            pi,
            config,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.env_steps >= self.config.total_steps
    }
}

// ---------------------------------------------------------------------------
// Collection

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RoundStats {
    pub episodes: usize,
    pub transitions: usize,
    /// Mean distance from the start at the end of each episode.
    pub mean_displacement: f64,
}

/// Roll `n_traj` full episodes with the frozen stochastic policy, one fresh
/// skill each. Episodes are appended whole; an environment fault aborts the
/// round before the failing episode touches the buffer. Normalizer
/// statistics of the round are merged in afterwards.
pub fn collect_round<R: Rng + ?Sized>(
    pi: &PolicyNet,
    spec: &EnvSpec,
    skill: &SkillConfig,
    normalizer: &mut StateNormalizer,
    buffer: &mut ReplayBuffer,
    n_traj: usize,
    rng: &mut R,
) -> Result<RoundStats> {
    let mut round_stats = StateNormalizer::new(spec.obs_dim());
    let mut stats = RoundStats::default();
    let mut displacement = 0.0;
    for _ in 0..n_traj {
        let z = sphere::sample_skill(skill.dim, skill.mode, rng)?.into_vec();
        let mut state = envs::reset(spec, rng);
        let start = state.position;
        let mut episode = Vec::with_capacity(spec.horizon);
        let mut episode_stats = round_stats.clone();
        loop {
            let obs = normalizer.normalize(&state.observation);
            let action = sample_action(pi, &obs, &z, rng, false)?.action;
            let (next, done) = envs::step(spec, &state, &action)?;
            episode_stats.update(&state.observation);
            episode.push((state.observation, action, next.observation.clone()));
            state = next;
            if done {
                break;
            }
        }
        for (o, a, o2) in &episode {
            buffer.push(o, a, o2, &z)?;
        }
        round_stats = episode_stats;
        stats.episodes += 1;
        stats.transitions += episode.len();
        let dx = state.position[0] - start[0];
        let dy = state.position[1] - start[1];
        displacement += (dx * dx + dy * dy).sqrt();
    }
    normalizer.merge(&round_stats);
    stats.mean_displacement = displacement / n_traj.max(1) as f64;
    Ok(stats)
}

// ---------------------------------------------------------------------------
// Updates

/// Scalars from one gradient update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateMetrics {
    pub loss_repr: f64,
    pub loss_sf: f64,
    pub loss_actor: f64,
    pub alpha: f64,
    pub mean_reward: f64,
    pub e_sq_norm: f64,
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseArray {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    DenseArray::from_vec(rows, cols, data).expect("sized")
}

fn prior_samples(skill: &SkillConfig, m: usize, rng: &mut ChaCha8Rng) -> Result<DenseArray> {
    let mut data = Vec::with_capacity(m * skill.dim);
    for _ in 0..m {
        data.extend(sphere::sample_skill(skill.dim, skill.mode, rng)?.into_vec());
    }
    DenseArray::from_vec(m, skill.dim, data)
}

fn apply(tape: &mut Tape, params: &mut ParamSet, adam: &mut AdamState) -> Result<()> {
    let grads = tape.backward(&DenseArray::scalar(1.0))?.for_params(params);
    adam_step(params, &grads, adam)
}

/// One interleaved update: φ, then ψ, then π, then α, then the target EMA.
/// On a non-finite loss the offending batch is kept in
/// `state.divergence` and a divergence error is returned.
pub fn update_step(state: &mut TrainState) -> Result<UpdateMetrics> {
    let cfg = &state.config;
    let raw = state.buffer.sample(cfg.optim.batch_size, &mut state.rng)?;
    let s = state.normalizer.normalize_batch(&raw.s);
    let s_next = state.normalizer.normalize_batch(&raw.s_next);
    let z = raw.z.clone();
    let pairs = PairBatch {
        s: s.clone(),
        s_next: s_next.clone(),
        z: z.clone(),
    };
    let negs = if cfg.repr.in_batch_negatives {
        z.clone()
    } else {
        prior_samples(&cfg.skill, cfg.repr.negatives, &mut state.rng)?
    };
    let negatives = if cfg.repr.in_batch_negatives {
        Negatives::InBatch
    } else {
        Negatives::Fresh(&negs)
    };

    let diverged = |state: &mut TrainState, stage: &str, raw: TransitionBatch| {
        state.divergence = Some(DivergenceDump {
            stage: stage.into(),
            iteration: state.iteration,
            batch: raw,
        });
        Err(Error::Divergence(format!("non-finite {stage} loss at iteration {}", state.iteration)))
    };

    // Representation.
    let (mut tape, next_lambda) = match cfg.repr.objective {
        ReprObjective::Csf => (
            repr::csf_repr_loss(&state.repr, &pairs, negatives, cfg.repr.xi)?,
            None,
        ),
        ReprObjective::MetraDual => {
            let step = repr::metra_repr_loss(&state.repr, &state.dual, &pairs)?;
            (step.tape, Some(step.next_lambda))
        }
    };
    let loss_repr = tape.output_scalar();
    if !loss_repr.is_finite() {
        return diverged(state, "representation", raw);
    }
    apply(&mut tape, state.repr.params_mut(), &mut state.repr_adam)?;
    if let Some(l) = next_lambda {
        state.dual.lambda = l;
    }

    // Rewards from the freshly updated φ.
    let cfg = &state.config;
    let g = state.repr.pair_features(&s, &s_next)?;
    let e_sq_norm = g.sum_sq() / g.rows() as f64;
    let features = repr::reward_features_from(state.repr.critic(), &g, &z, cfg.reward.mode, &negs)?;
    let mean_reward = features.zip_map(&z, |a, b| a * b).sum() / z.rows() as f64;

    // Successor features.
    let noise = gaussian(s.rows(), state.pi.action_dim(), &mut state.rng);
    let next_actions = state.pi.act_batch(&s_next, &z, Some(&noise))?;
    let td = TdBatch {
        s: s.clone(),
        a: raw.a.clone(),
        s_next,
        next_actions,
        z: z.clone(),
        features,
    };
    let mut tape = sf_td_loss(&state.psi, &td, cfg.sf.gamma)?;
    let loss_sf = tape.output_scalar();
    if !loss_sf.is_finite() {
        return diverged(state, "successor feature", raw);
    }
    apply(&mut tape, state.psi.online.params_mut(), &mut state.psi_adam)?;

    // Actor and entropy coefficient.
    let noise = gaussian(s.rows(), state.pi.action_dim(), &mut state.rng);
    let mut step = actor_loss(&state.pi, &state.psi, &s, &z, &noise, state.tuner.alpha())?;
    let loss_actor = step.tape.output_scalar();
    if !loss_actor.is_finite() {
        return diverged(state, "actor", raw);
    }
    apply(&mut step.tape, state.pi.params_mut(), &mut state.pi_adam)?;
    let alpha = entropy_coef_update(&mut state.tuner, &step.log_probs)?;

    let tau = state.config.sf.tau;
    let online = state.psi.online.params().clone();
    ema_update(&online, state.psi.target.params_mut(), tau)?;
    state.updates += 1;
    Ok(UpdateMetrics {
        loss_repr,
        loss_sf,
        loss_actor,
        alpha,
        mean_reward,
        e_sq_norm,
    })
}

// ---------------------------------------------------------------------------
// Iterations and evaluation

/// One row of the metrics CSV. Loss columns are empty during warmup and
/// evaluation columns are empty between evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub env_steps: u64,
    pub loss_repr: Option<f64>,
    pub loss_sf: Option<f64>,
    pub loss_actor: Option<f64>,
    pub alpha: f64,
    pub mean_reward: Option<f64>,
    pub e_sq_norm_dphi: Option<f64>,
    pub coverage: Option<f64>,
    pub goal_staying_frac: Option<f64>,
    pub wall_s: f64,
}

/// One collection round followed by the configured number of updates
/// (none during warmup). Returns metrics averaged over the updates.
pub fn train_iteration(state: &mut TrainState) -> Result<IterationMetrics> {
    let n_traj = state.config.optim.trajectories_per_round;
    let stats = collect_round(
        &state.pi,
        &state.config.env,
        &state.config.skill,
        &mut state.normalizer,
        &mut state.buffer,
        n_traj,
        &mut state.rng,
    )?;
    state.iteration += 1;
    state.env_steps += stats.transitions as u64;

    let warm = state.iteration > state.config.optim.warmup_rounds as u64;
    let k = if warm && state.buffer.len() >= state.config.optim.batch_size {
        state.config.optim.updates_per_round
    } else {
        0
    };
    let mut sums = [0.0; 5];
    for _ in 0..k {
        let m = update_step(state)?;
        for (acc, v) in sums.iter_mut().zip([m.loss_repr, m.loss_sf, m.loss_actor, m.mean_reward, m.e_sq_norm]) {
            *acc += v;
        }
    }
    let avg = |i: usize| (k > 0).then(|| sums[i] / k as f64);
    Ok(IterationMetrics {
        iteration: state.iteration,
        env_steps: state.env_steps,
        loss_repr: avg(0),
        loss_sf: avg(1),
        loss_actor: avg(2),
        alpha: state.tuner.alpha(),
        mean_reward: avg(3),
        e_sq_norm_dphi: avg(4),
        coverage: None,
        goal_staying_frac: None,
        wall_s: 0.0,
    })
}

/// Coverage and goal-reaching results for one parameter snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub coverage: usize,
    pub mean_staying_frac: f64,
    pub goals: Vec<GoalTask>,
    pub outcomes: Vec<GoalOutcome>,
}

/// Deterministic-policy evaluation. Goals are sampled from `rng` unless
/// given explicitly.
pub fn evaluate_policy<R: Rng + ?Sized>(
    repr: &ReprNet,
    pi: &PolicyNet,
    normalizer: &StateNormalizer,
    config: &TrainConfig,
    goals: Option<&[GoalTask]>,
    rng: &mut R,
) -> Result<EvalSummary> {
    let spec = &config.env;
    let ev = &config.eval;
    let mut controller = PolicyController { policy: pi, normalizer };
    let mut grid = CoverageGrid::new(ev.cell_size);
    let coverage = evalsuite::measure_coverage(
        &mut controller,
        spec,
        ev.coverage_skills,
        config.skill.dim,
        config.skill.mode,
        &mut grid,
        rng,
    )?;
    let goals = match goals {
        Some(g) => g.to_vec(),
        None if ev.goals > 0 => evalsuite::sample_goals(spec, ev.goals, ev.goal_range, ev.goal_radius, rng)?,
        None => Vec::new(),
    };
    let outcomes = evalsuite::evaluate_goals(&mut controller, repr, normalizer, spec, &goals, ev.reinference_period, rng)?;
    let fractions: Vec<f64> = outcomes.iter().map(|o| o.fraction).collect();
    Ok(EvalSummary {
        coverage,
        mean_staying_frac: evalsuite::mean(&fractions),
        goals,
        outcomes,
    })
}

/// [`evaluate_policy`] on the current state with the evaluation stream for
/// its iteration.
pub fn evaluate_state(state: &TrainState) -> Result<EvalSummary> {
    let mut rng = evalsuite::eval_rng(state.config.seed, state.iteration);
    evaluate_policy(&state.repr, &state.pi, &state.normalizer, &state.config, None, &mut rng)
}

/// Hooks for the driver: a clock and a sink for each metrics row.
pub trait RunObserver {
    /// Seconds since the run started.
    fn elapsed_s(&mut self) -> f64 {
        0.0
    }

    fn on_iteration(&mut self, _metrics: &IterationMetrics, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NoopObserver;

impl RunObserver for NoopObserver {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub iterations: u64,
    pub env_steps: u64,
    pub metrics: Vec<IterationMetrics>,
    pub final_eval: Option<EvalSummary>,
}

fn should_evaluate(state: &TrainState) -> bool {
    let every = state.config.eval.every;
    every > 0 && (state.iteration % every == 0 || state.is_finished())
}

/// Continue `state` until the step budget is spent.
pub fn run_from(state: &mut TrainState, observer: &mut dyn RunObserver) -> Result<RunReport> {
    let mut metrics = Vec::new();
    let mut final_eval = None;
    while !state.is_finished() {
        let mut m = train_iteration(state)?;
        if should_evaluate(state) {
            let ev = evaluate_state(state)?;
            m.coverage = Some(ev.coverage as f64);
            m.goal_staying_frac = Some(ev.mean_staying_frac);
            final_eval = Some(ev);
        }
        m.wall_s = observer.elapsed_s();
        observer.on_iteration(&m, state)?;
        metrics.push(m);
    }
    Ok(RunReport {
        iterations: metrics.len() as u64,
        env_steps: state.env_steps,
        metrics,
        final_eval,
    })
}

/// Fresh state from `config`, trained to completion.
pub fn run_experiment(config: TrainConfig, observer: &mut dyn RunObserver) -> Result<(TrainState, RunReport)> {
    let mut state = TrainState::new(config)?;
    let report = run_from(&mut state, observer)?;
    Ok((state, report))
}

// ---------------------------------------------------------------------------
// State export

struct NamedArrays<'a>(&'a [(String, DenseArray)]);

impl NamedArrays<'_> {
    fn get(&self, name: &str, rows: usize, cols: usize) -> Result<&DenseArray> {
        let found = self
            .0
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::State(format!("missing entry {name}")))?;
        if found.shape() != (rows, cols) {
            return Err(Error::State(format!(
                "entry {name} is {}x{}, expected {rows}x{cols}",
                found.rows(),
                found.cols()
            )));
        }
        Ok(found)
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        Ok(self.get(name, 1, 1)?.item())
    }

    fn u32s(&self, name: &str, n: usize) -> Result<Vec<u32>> {
        self.get(name, 1, n)?
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v <= f64::from(u32::MAX) && v == (v as u32) as f64 {
                    Ok(v as u32)
                } else {
                    Err(Error::State(format!("entry {name} holds {v}, not a u32")))
                }
            })
            .collect()
    }
}

fn export_params(out: &mut Vec<(String, DenseArray)>, group: &str, params: &ParamSet) {
    for (name, v) in params.iter() {
        out.push((format!("{group}/{name}"), v.clone()));
    }
}

fn import_params(arrays: &NamedArrays<'_>, group: &str, params: &mut ParamSet) -> Result<()> {
    for i in 0..params.len() {
        let (r, c) = params.value(i).shape();
        let name = format!("{group}/{}", params.name(i));
        *params.value_mut(i) = arrays.get(&name, r, c)?.clone();
    }
    Ok(())
}

fn export_adam(out: &mut Vec<(String, DenseArray)>, group: &str, adam: &AdamState) {
    out.push((format!("{group}/step"), DenseArray::scalar(adam.step as f64)));
    for (i, (m, v)) in adam.m.iter().zip(&adam.v).enumerate() {
        out.push((format!("{group}/m{i}"), m.clone()));
        out.push((format!("{group}/v{i}"), v.clone()));
    }
}

fn import_adam(arrays: &NamedArrays<'_>, group: &str, adam: &mut AdamState) -> Result<()> {
    adam.step = arrays.scalar(&format!("{group}/step"))? as u64;
    for i in 0..adam.m.len() {
        let (r, c) = adam.m[i].shape();
        adam.m[i] = arrays.get(&format!("{group}/m{i}"), r, c)?.clone();
        adam.v[i] = arrays.get(&format!("{group}/v{i}"), r, c)?.clone();
    }
    Ok(())
}

fn u32_row(words: &[u32]) -> DenseArray {
    let v: Vec<f64> = words.iter().map(|&w| f64::from(w)).collect();
    DenseArray::row_vector(&v)
}

impl TrainState {
    /// Every piece of mutable state as named arrays. Integers are stored
    /// exactly (counters below 2⁵³, rng words as u32 pieces).
    pub fn export_state(&self) -> Vec<(String, DenseArray)> {
        let mut out = Vec::new();
        export_params(&mut out, "phi", self.repr.params());
        export_adam(&mut out, "phi_adam", &self.repr_adam);
        export_params(&mut out, "psi", self.psi.online.params());
        export_params(&mut out, "psi_target", self.psi.target.params());
        export_adam(&mut out, "psi_adam", &self.psi_adam);
        export_params(&mut out, "pi", self.pi.params());
        export_adam(&mut out, "pi_adam", &self.pi_adam);
        export_params(&mut out, "alpha", &self.tuner.log_alpha);
        export_adam(&mut out, "alpha_adam", &self.tuner.adam);
        out.push(("dual/lambda".into(), DenseArray::scalar(self.dual.lambda)));
        out.push(("norm/count".into(), DenseArray::scalar(self.normalizer.count)));
        out.push(("norm/mean".into(), DenseArray::row_vector(&self.normalizer.mean)));
        out.push(("norm/m2".into(), DenseArray::row_vector(&self.normalizer.m2)));
        self.buffer.export(&mut out);

        let seed = self.rng.get_seed();
        let seed_words: Vec<u32> = seed
            .chunks(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(("rng/seed".into(), u32_row(&seed_words)));
        let stream = self.rng.get_stream();
        out.push(("rng/stream".into(), u32_row(&[stream as u32, (stream >> 32) as u32])));
        let pos = self.rng.get_word_pos();
        out.push((
            "rng/word_pos".into(),
            u32_row(&[pos as u32, (pos >> 32) as u32, (pos >> 64) as u32, (pos >> 96) as u32]),
        ));
        out.push((
            "counters".into(),
            DenseArray::row_vector(&[self.iteration as f64, self.env_steps as f64, self.updates as f64]),
        ));
        out
    }

    /// Rebuild a state for `config` from [`TrainState::export_state`]
    /// output. Nothing is returned unless every entry is present and fits.
    pub fn import_state(config: TrainConfig, arrays: &[(String, DenseArray)]) -> Result<Self> {
        let mut state = TrainState::new(config)?;
        let a = NamedArrays(arrays);
        import_params(&a, "phi", state.repr.params_mut())?;
        import_adam(&a, "phi_adam", &mut state.repr_adam)?;
        import_params(&a, "psi", state.psi.online.params_mut())?;
        import_params(&a, "psi_target", state.psi.target.params_mut())?;
        import_adam(&a, "psi_adam", &mut state.psi_adam)?;
        import_params(&a, "pi", state.pi.params_mut())?;
        import_adam(&a, "pi_adam", &mut state.pi_adam)?;
        import_params(&a, "alpha", &mut state.tuner.log_alpha)?;
        import_adam(&a, "alpha_adam", &mut state.tuner.adam)?;
        state.dual.lambda = a.scalar("dual/lambda")?;
        let dim = state.normalizer.dim();
        state.normalizer.count = a.scalar("norm/count")?;
        state.normalizer.mean = a.get("norm/mean", 1, dim)?.data().to_vec();
        state.normalizer.m2 = a.get("norm/m2", 1, dim)?.data().to_vec();
        state.buffer.import(&a)?;

        let words = a.u32s("rng/seed", 8)?;
        let mut seed = [0u8; 32];
        for (chunk, w) in seed.chunks_mut(4).zip(&words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        let st = a.u32s("rng/stream", 2)?;
        rng.set_stream(u64::from(st[0]) | (u64::from(st[1]) << 32));
        let wp = a.u32s("rng/word_pos", 4)?;
        rng.set_word_pos(wp.iter().rev().fold(0u128, |acc, &w| (acc << 32) | u128::from(w)));
        state.rng = rng;

        let counters = a.get("counters", 1, 3)?;
        state.iteration = counters.get(0, 0) as u64;
        state.env_steps = counters.get(0, 1) as u64;
        state.updates = counters.get(0, 2) as u64;
        Ok(state)
    }
}
