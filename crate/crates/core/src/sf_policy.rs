//! Successor-feature critic and skill-conditioned tanh-Gaussian actor.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::array::DenseArray;
use crate::autodiff::{adam_step, Activation, AdamConfig, AdamState, Mlp, ParamSet, Tape, Var};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// `ψ(s, a, z) ∈ ℝ^d` with an EMA target copy `ψ̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessorNet {
    pub online: Mlp,
    /// Only ever changed by [`ema_update`].
    pub target: Mlp,
    obs_dim: usize,
    action_dim: usize,
}

impl SuccessorNet {
    pub fn new(
        obs_dim: usize,
        action_dim: usize,
        skill_dim: usize,
        hidden: &[usize],
        activation: Activation,
        seed: u64,
    ) -> Self {
        let mut dims = vec![obs_dim + action_dim + skill_dim];
        dims.extend_from_slice(hidden);
        dims.push(skill_dim);
        let online = Mlp::new("psi", &dims, activation, seed);
        Self {
            target: online.clone(),
            online,
            obs_dim,
            action_dim,
        }
    }

    pub fn from_parts(online: Mlp, target: Mlp, obs_dim: usize, action_dim: usize) -> Result<Self> {
        let ok = online.input_dim() == obs_dim + action_dim + online.output_dim()
            && target.input_dim() == online.input_dim()
            && target.output_dim() == online.output_dim();
        if !ok {
            return Err(Error::Config("successor network dimensions disagree".into()));
        }
        Ok(Self {
            online,
            target,
            obs_dim,
            action_dim,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn skill_dim(&self) -> usize {
        self.online.output_dim()
    }

    /// `ψ(s, a, z)` for a batch, online (`use_target = false`) or target.
    pub fn eval(&self, s: &DenseArray, a: &DenseArray, z: &DenseArray, use_target: bool) -> Result<DenseArray> {
        let x = DenseArray::hstack(&[s, a, z])?;
        if use_target {
            self.target.forward(&x)
        } else {
            self.online.forward(&x)
        }
    }
}

/// Anything that scores actions for the actor: `n × 1` values of
/// `ψ(s, a, z)ᵀz` with gradient flowing only through `a`.
pub trait SkillCritic {
    fn score_on(&self, tape: &mut Tape, s: &DenseArray, a: Var, z: &DenseArray) -> Result<Var>;
}

impl SkillCritic for SuccessorNet {
    fn score_on(&self, tape: &mut Tape, s: &DenseArray, a: Var, z: &DenseArray) -> Result<Var> {
        let sc = tape.constant(s.clone());
        let zc = tape.constant(z.clone());
        let x = tape.concat_cols(&[sc, a, zc])?;
        let psi = self.online.bind(tape, false).forward(tape, x)?;
        let prod = tape.mul(psi, zc)?;
        Ok(tape.sum_cols(prod))
    }
}

/// Batch for the successor-feature TD regression. `features` are the
/// per-transition vector rewards (already detached), `next_actions` are
/// fresh draws `a′ ∼ π(·|s′, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdBatch {
    pub s: DenseArray,
    pub a: DenseArray,
    pub s_next: DenseArray,
    pub next_actions: DenseArray,
    pub z: DenseArray,
    pub features: DenseArray,
}

/// `mean_i ‖ψ(s,a,z) − (f + γ ψ̄(s′,a′,z))‖²`. The target side is computed
/// outside the tape so no gradient reaches `ψ̄` or the features.
pub fn sf_td_loss(psi: &SuccessorNet, batch: &TdBatch, gamma: f64) -> Result<Tape> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config(format!("discount must lie in [0, 1), got {gamma}")));
    }
    let next = psi.eval(&batch.s_next, &batch.next_actions, &batch.z, true)?;
    batch.features.same_shape(&next, "successor features")?;
    let target = batch.features.zip_map(&next, |f, p| f + gamma * p);

    let mut tape = Tape::new();
    let x = tape.constant(DenseArray::hstack(&[&batch.s, &batch.a, &batch.z])?);
    let pred = psi.online.bind(&mut tape, true).forward(&mut tape, x)?;
    let t = tape.constant(target);
    let err = tape.sub(pred, t)?;
    let sq = tape.square(err);
    let per_row = tape.sum_cols(sq);
    let loss = tape.mean(per_row);
    tape.set_output(loss);
    Ok(tape)
}

/// Skill-conditioned policy producing `(mean, log_std)` per action dim.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub net: Mlp,
    action_dim: usize,
}

impl PolicyNet {
    pub fn new(
        obs_dim: usize,
        skill_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        seed: u64,
    ) -> Self {
        let mut dims = vec![obs_dim + skill_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * action_dim);
        Self {
            net: Mlp::new("pi", &dims, activation, seed),
            action_dim,
        }
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.output_dim() % 2 != 0 {
            return Err(Error::Config("policy head must have an even width".into()));
        }
        let action_dim = net.output_dim() / 2;
        Ok(Self { net, action_dim })
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn params(&self) -> &ParamSet {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.net.params_mut()
    }

    /// Tape-free batch of actions `tanh(μ + σ·ε)`; `noise = None` gives
    /// the deterministic `tanh(μ)`.
    pub fn act_batch(&self, s: &DenseArray, z: &DenseArray, noise: Option<&DenseArray>) -> Result<DenseArray> {
        let out = self.net.forward(&DenseArray::hstack(&[s, z])?)?;
        let k = self.action_dim;
        let mut actions = DenseArray::zeros(s.rows(), k);
        for i in 0..s.rows() {
            let row = out.row(i);
            for j in 0..k {
                let mut u = row[j];
                if let Some(eps) = noise {
                    u += row[k + j].clamp(LOG_STD_MIN, LOG_STD_MAX).exp() * eps.get(i, j);
                }
                actions.set(i, j, u.tanh());
            }
        }
        Ok(actions)
    }

    /// Reparameterized actions `tanh(μ + σ·ε)` and their log-probabilities
    /// (`n × 1`) on a tape, for fixed standard-normal `noise`.
    pub fn act_on(
        &self,
        tape: &mut Tape,
        s: &DenseArray,
        z: &DenseArray,
        noise: &DenseArray,
        trainable: bool,
    ) -> Result<(Var, Var)> {
        let k = self.action_dim;
        if noise.shape() != (s.rows(), k) {
            return Err(Error::Shape {
                context: "policy noise",
                expected: (s.rows(), k),
                found: noise.shape(),
            });
        }
        let x = tape.constant(DenseArray::hstack(&[s, z])?);
        let out = self.net.bind(tape, trainable).forward(tape, x)?;
        let mean = tape.slice_cols(out, 0, k)?;
        let raw_log_std = tape.slice_cols(out, k, 2 * k)?;
        let log_std = tape.clamp(raw_log_std, LOG_STD_MIN, LOG_STD_MAX);
        let std = tape.exp(log_std);
        let eps = tape.constant(noise.clone());
        let spread = tape.mul(std, eps)?;
        let u = tape.add(mean, spread)?;
        let action = tape.tanh(u);

        // log N(u; μ, σ) = −½ε² − log σ − ½ log 2π, then subtract
        // log(1 − tanh²u) = 2(log 2 − u − softplus(−2u)).
        let half_sq = noise.map(|e| -0.5 * e * e - HALF_LN_2PI);
        let gauss_const = tape.constant(half_sq);
        let gauss = tape.sub(gauss_const, log_std)?;
        let neg2u = tape.scale(u, -2.0);
        let sp = tape.softplus(neg2u);
        let u_sp = tape.add(u, sp)?;
        let shifted = tape.add_scalar(u_sp, -core::f64::consts::LN_2);
        // −log(1 − tanh²u) = 2(u + softplus(−2u) − log 2)
        let correction = tape.scale(shifted, 2.0);
        let per_dim = tape.add(gauss, correction)?;
        let log_prob = tape.sum_cols(per_dim);
        Ok((action, log_prob))
    }
}

/// An action and its log-probability under the squashed Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
}

/// `log π(a)` of a squashed Gaussian at pre-squash point `u`.
pub fn squashed_log_prob(u: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    let mut lp = 0.0;
    for k in 0..u.len() {
        let std = log_std[k].exp();
        let e = (u[k] - mean[k]) / std;
        let softplus = |x: f64| if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
        lp += -0.5 * e * e - log_std[k] - HALF_LN_2PI;
        lp -= 2.0 * (core::f64::consts::LN_2 - u[k] - softplus(-2.0 * u[k]));
    }
    lp
}

/// Draw one action for observation `s` and skill `z`. Deterministic mode
/// returns `tanh(μ)` (its log-probability is reported at `ε = 0`).
pub fn sample_action<R: Rng + ?Sized>(
    pi: &PolicyNet,
    s: &[f64],
    z: &[f64],
    rng: &mut R,
    deterministic: bool,
) -> Result<ActionSample> {
    let mut x = s.to_vec();
    x.extend_from_slice(z);
    let out = pi.net.forward(&DenseArray::row_vector(&x))?;
    let k = pi.action_dim();
    let mean = &out.row(0)[..k];
    let log_std: Vec<f64> = out.row(0)[k..].iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
    let u: Vec<f64> = if deterministic {
        mean.to_vec()
    } else {
        (0..k)
            .map(|i| {
                let e: f64 = rng.sample(StandardNormal);
                mean[i] + log_std[i].exp() * e
            })
            .collect()
    };
    Ok(ActionSample {
        log_prob: squashed_log_prob(&u, mean, &log_std),
        action: u.iter().map(|v| v.tanh()).collect(),
    })
}

/// Output of [`actor_loss`].
#[derive(Debug)]
pub struct ActorStep {
    /// Output node: `mean_i [α·log π(a_i) − ψ(s_i, a_i, z_i)ᵀz_i]`.
    pub tape: Tape,
    pub log_probs: Vec<f64>,
}

/// Actor objective with reparameterized actions. Gradients reach only the
/// policy parameters; the critic is bound as constants.
pub fn actor_loss<C: SkillCritic + ?Sized>(
    pi: &PolicyNet,
    critic: &C,
    s: &DenseArray,
    z: &DenseArray,
    noise: &DenseArray,
    alpha: f64,
) -> Result<ActorStep> {
    let mut tape = Tape::new();
    let (action, log_prob) = pi.act_on(&mut tape, s, z, noise, true)?;
    let value = critic.score_on(&mut tape, s, action, z)?;
    let ent = tape.scale(log_prob, alpha);
    let per_row = tape.sub(ent, value)?;
    let loss = tape.mean(per_row);
    tape.set_output(loss);
    let log_probs = tape.value(log_prob).data().to_vec();
    Ok(ActorStep { tape, log_probs })
}

/// Automatic entropy tuning on `log α` with Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTuner {
    pub log_alpha: ParamSet,
    pub adam: AdamState,
    pub target_entropy: f64,
}

impl EntropyTuner {
    /// Target entropy `−|A|`.
    pub fn new(action_dim: usize, initial_alpha: f64, config: AdamConfig) -> Self {
        let mut log_alpha = ParamSet::new();
        log_alpha.push("log_alpha", DenseArray::scalar(initial_alpha.ln()));
        let adam = AdamState::new(&log_alpha, config);
        Self {
            log_alpha,
            adam,
            target_entropy: -(action_dim as f64),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.value(0).item().exp()
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha.value(0).item()
    }
}

/// One step on `E[−α(log π + target)]` w.r.t. `log α`; returns the new α.
pub fn entropy_coef_update(tuner: &mut EntropyTuner, log_probs: &[f64]) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    let mean_lp = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
    let grad = -tuner.alpha() * (mean_lp + tuner.target_entropy);
    adam_step(&mut tuner.log_alpha, &[DenseArray::scalar(grad)], &mut tuner.adam)?;
    Ok(tuner.alpha())
}

/// `ψ̄ ← (1 − τ)ψ̄ + τψ`.
pub fn ema_update(online: &ParamSet, target: &mut ParamSet, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("EMA rate must lie in [0, 1], got {tau}")));
    }
    if online.len() != target.len() {
        return Err(Error::Config("EMA parameter sets differ in length".into()));
    }
    for (i, (_, p)) in online.iter().enumerate() {
        target.value(i).same_shape(p, "EMA update")?;
    }
    target.lerp_towards(online, tau);
    Ok(())
}

#[cfg(test)]
mod tests;
