//! Representation learning: the contrastive skill objective, the
//! dual-gradient baseline, critic variants, and intrinsic rewards.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::autodiff::{logsumexp, Activation, Mlp, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::sphere::{self, MAX_ARGUMENT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    /// `(φ(s′) − φ(s))ᵀz`
    #[default]
    InnerProduct,
    /// `MLP(s, s′)ᵀz` with a joint network over the concatenated pair.
    MonolithicMlp,
    /// `−½‖φ(s′) − φ(s)‖²`
    GaussianKernel,
    /// `−‖φ(s′) − φ(s)‖₁`
    LaplacianKernel,
}

impl CriticKind {
    fn uses_skill(self) -> bool {
        matches!(self, CriticKind::InnerProduct | CriticKind::MonolithicMlp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReprObjective {
    #[default]
    Csf,
    MetraDual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Plain inner product reward.
    #[default]
    Csf,
    /// Inner product minus a sampled log-partition (the full contrastive
    /// bound used as reward).
    MiOnly,
}

/// State representation `φ: S → ℝ^d`, or a joint pair network in
/// monolithic mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprNet {
    net: Mlp,
    critic: CriticKind,
    skill_dim: usize,
}

impl ReprNet {
    /// `hidden` lists hidden layer widths. In monolithic mode the network
    /// reads `[s, s′]` and has input width `2·obs_dim`.
    pub fn new(
        obs_dim: usize,
        hidden: &[usize],
        skill_dim: usize,
        critic: CriticKind,
        activation: Activation,
        seed: u64,
    ) -> Self {
        let input = if critic == CriticKind::MonolithicMlp {
            2 * obs_dim
        } else {
            obs_dim
        };
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(skill_dim);
        Self {
            net: Mlp::new("phi", &dims, activation, seed),
            critic,
            skill_dim,
        }
    }

    pub fn from_mlp(net: Mlp, critic: CriticKind) -> Self {
        let skill_dim = net.output_dim();
        Self {
            net,
            critic,
            skill_dim,
        }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.net
    }

    pub fn critic(&self) -> CriticKind {
        self.critic
    }

    pub fn skill_dim(&self) -> usize {
        self.skill_dim
    }

    pub fn obs_dim(&self) -> usize {
        match self.critic {
            CriticKind::MonolithicMlp => self.net.input_dim() / 2,
            _ => self.net.input_dim(),
        }
    }

    pub fn params(&self) -> &ParamSet {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.net.params_mut()
    }

    /// `φ(s)` for a batch of (normalized) observations. Not defined for the
    /// monolithic critic, which has no per-state embedding.
    pub fn embed(&self, obs: &DenseArray) -> Result<DenseArray> {
        if self.critic == CriticKind::MonolithicMlp {
            return Err(Error::Config("monolithic critic has no state embedding".into()));
        }
        self.net.forward(obs)
    }

    /// Per-pair feature `Δφ = φ(s′) − φ(s)` (or `MLP(s, s′)`), `n × d`.
    pub fn pair_features(&self, s: &DenseArray, s_next: &DenseArray) -> Result<DenseArray> {
        check_pair(s, s_next, self.obs_dim())?;
        if self.critic == CriticKind::MonolithicMlp {
            return self.net.forward(&DenseArray::hstack(&[s, s_next])?);
        }
        let a = self.net.forward(s)?;
        let b = self.net.forward(s_next)?;
        Ok(b.zip_map(&a, |x, y| x - y))
    }

    /// Tape version of [`ReprNet::pair_features`].
    pub fn pair_features_on(
        &self,
        tape: &mut Tape,
        s: &DenseArray,
        s_next: &DenseArray,
        trainable: bool,
    ) -> Result<Var> {
        check_pair(s, s_next, self.obs_dim())?;
        let bound = self.net.bind(tape, trainable);
        if self.critic == CriticKind::MonolithicMlp {
            let x = tape.constant(DenseArray::hstack(&[s, s_next])?);
            return bound.forward(tape, x);
        }
        // One pass over the stacked batch halves the matmul count.
        let n = s.rows();
        let mut stacked = s.clone().into_vec();
        stacked.extend_from_slice(s_next.data());
        let x = tape.constant(DenseArray::from_vec(2 * n, s.cols(), stacked)?);
        let phi = bound.forward(tape, x)?;
        let phi_s = tape.slice_rows(phi, 0, n)?;
        let phi_next = tape.slice_rows(phi, n, 2 * n)?;
        tape.sub(phi_next, phi_s)
    }
}

fn check_pair(s: &DenseArray, s_next: &DenseArray, obs_dim: usize) -> Result<()> {
    if s.shape() != s_next.shape() || s.cols() != obs_dim {
        return Err(Error::Shape {
            context: "transition pair",
            expected: (s.rows(), obs_dim),
            found: s_next.shape(),
        });
    }
    Ok(())
}

/// `n × 1` critic scores of pair features `g` against the row-matched
/// skills `z`.
fn positive_scores(tape: &mut Tape, critic: CriticKind, g: Var, z: &DenseArray) -> Result<Var> {
    match critic {
        CriticKind::InnerProduct | CriticKind::MonolithicMlp => {
            let zc = tape.constant(z.clone());
            let prod = tape.mul(g, zc)?;
            Ok(tape.sum_cols(prod))
        }
        CriticKind::GaussianKernel => {
            let sq = tape.square(g);
            let s = tape.sum_cols(sq);
            Ok(tape.scale(s, -0.5))
        }
        CriticKind::LaplacianKernel => {
            let ab = tape.abs(g);
            let s = tape.sum_cols(ab);
            Ok(tape.scale(s, -1.0))
        }
    }
}

/// `n × m` scores against each of `m` negatives.
fn negative_scores(tape: &mut Tape, critic: CriticKind, g: Var, negatives: &DenseArray) -> Result<Var> {
    if critic.uses_skill() {
        let zn = tape.constant(negatives.clone());
        tape.matmul_t(g, zn)
    } else {
        let s = positive_scores(tape, critic, g, negatives)?;
        tape.broadcast_cols(s, negatives.rows())
    }
}

/// Scalar critic score `f(s, s′, z)` for a single transition.
pub fn critic_score(net: &ReprNet, s: &[f64], s_next: &[f64], z: &[f64]) -> Result<f64> {
    if z.len() != net.skill_dim() {
        return Err(Error::Config(format!(
            "skill has dimension {}, critic expects {}",
            z.len(),
            net.skill_dim()
        )));
    }
    let g = net.pair_features(&DenseArray::row_vector(s), &DenseArray::row_vector(s_next))?;
    Ok(score_row(net.critic(), g.row(0), z))
}

fn score_row(critic: CriticKind, g: &[f64], z: &[f64]) -> f64 {
    match critic {
        CriticKind::InnerProduct | CriticKind::MonolithicMlp => sphere::dot(g, z),
        CriticKind::GaussianKernel => -0.5 * g.iter().map(|v| v * v).sum::<f64>(),
        CriticKind::LaplacianKernel => -g.iter().map(|v| v.abs()).sum::<f64>(),
    }
}

/// A batch of transitions with their episode skills (rows aligned).
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub s: DenseArray,
    pub s_next: DenseArray,
    pub z: DenseArray,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.s.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.s.rows() == 0
    }
}

/// Where the contrastive denominator's skills come from.
#[derive(Debug, Clone, Copy)]
pub enum Negatives<'a> {
    /// `m × d` skills drawn fresh from the prior, shared by the whole batch.
    Fresh(&'a DenseArray),
    /// The other rows' skills; each row's own skill is masked out.
    InBatch,
}

/// Large negative used to mask the positive pair out of the in-batch
/// denominator; `exp` of it underflows to exactly zero.
const MASK: f64 = -1e30;

/// Contrastive representation loss
/// `−E[f(s,s′,z)] + ξ·E[log (1/m) Σ_j exp f(s,s′,z′_j)]`.
/// Returns a tape whose output node is the scalar loss and whose trainable
/// parameters are the representation's.
pub fn csf_repr_loss(net: &ReprNet, batch: &PairBatch, negatives: Negatives<'_>, xi: f64) -> Result<Tape> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, found: n });
    }
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::Config(format!("contrastive coefficient must be positive, got {xi}")));
    }
    let d = net.skill_dim();
    if batch.z.shape() != (n, d) {
        return Err(Error::Shape {
            context: "batch skills",
            expected: (n, d),
            found: batch.z.shape(),
        });
    }
    let mut tape = Tape::new();
    let g = net.pair_features_on(&mut tape, &batch.s, &batch.s_next, true)?;
    let pos = positive_scores(&mut tape, net.critic(), g, &batch.z)?;
    let pos_mean = tape.mean(pos);

    let (scores, m) = match negatives {
        Negatives::Fresh(zn) => {
            if zn.rows() < 2 {
                return Err(Error::DegenerateNegatives(zn.rows()));
            }
            if zn.cols() != d {
                return Err(Error::Shape {
                    context: "negative skills",
                    expected: (zn.rows(), d),
                    found: zn.shape(),
                });
            }
            (negative_scores(&mut tape, net.critic(), g, zn)?, zn.rows())
        }
        Negatives::InBatch => {
            if n < 3 {
                return Err(Error::DegenerateNegatives(n - 1));
            }
            let all = negative_scores(&mut tape, net.critic(), g, &batch.z)?;
            let mut mask = DenseArray::zeros(n, n);
            for i in 0..n {
                mask.set(i, i, MASK);
            }
            let mask = tape.constant(mask);
            (tape.add(all, mask)?, n - 1)
        }
    };
    let lse = tape.logsumexp_rows(scores);
    let neg_mean = tape.mean(lse);
    let neg_term = tape.add_scalar(neg_mean, -(m as f64).ln());
    let a = tape.scale(pos_mean, -1.0);
    let b = tape.scale(neg_term, xi);
    let loss = tape.add(a, b)?;
    tape.set_output(loss);
    Ok(tape)
}

/// Dual variable of the expected-distance constraint `E‖Δφ‖² ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualVariable {
    pub lambda: f64,
    pub lr: f64,
    pub slack: f64,
}

impl Default for DualVariable {
    fn default() -> Self {
        Self {
            lambda: 30.0,
            lr: 1e-4,
            slack: 1e-3,
        }
    }
}

impl DualVariable {
    /// Projected step `λ ← max(0, λ − η(1 + ε − E‖Δφ‖²))`.
    pub fn next_lambda(&self, e_sq_norm: f64) -> f64 {
        (self.lambda - self.lr * (1.0 + self.slack - e_sq_norm)).max(0.0)
    }
}

/// Output of [`metra_repr_loss`].
#[derive(Debug)]
pub struct MetraStep {
    /// Tape whose output is the loss to *minimize*,
    /// `−(E[f] + λ(1 − E‖Δφ‖²))`.
    pub tape: Tape,
    pub e_sq_norm: f64,
    /// λ after the projected dual step, to be stored by the caller.
    pub next_lambda: f64,
}

/// Dual-gradient objective `E[f(s,s′,z)] + λ(1 − E‖Δφ‖²)`, ascended in φ.
pub fn metra_repr_loss(net: &ReprNet, dual: &DualVariable, batch: &PairBatch) -> Result<MetraStep> {
    if dual.lambda < 0.0 {
        return Err(Error::State(format!("dual variable is negative: {}", dual.lambda)));
    }
    let mut tape = Tape::new();
    let g = net.pair_features_on(&mut tape, &batch.s, &batch.s_next, true)?;
    let pos = positive_scores(&mut tape, net.critic(), g, &batch.z)?;
    let pos_mean = tape.mean(pos);
    let sq = tape.square(g);
    let norms = tape.sum_cols(sq);
    let e_sq = tape.mean(norms);
    let e_sq_norm = tape.value(e_sq).item();
    // −E[f] − λ + λ E‖Δφ‖²
    let a = tape.scale(pos_mean, -1.0);
    let b = tape.scale(e_sq, dual.lambda);
    let ab = tape.add(a, b)?;
    let loss = tape.add_scalar(ab, -dual.lambda);
    tape.set_output(loss);
    Ok(MetraStep {
        tape,
        e_sq_norm,
        next_lambda: dual.next_lambda(e_sq_norm),
    })
}

/// Per-row `log (1/m) Σ_j exp f(g_i, z′_j)`.
fn log_mean_exp_scores(critic: CriticKind, g: &DenseArray, negatives: &DenseArray) -> Vec<f64> {
    let m = negatives.rows() as f64;
    (0..g.rows())
        .map(|i| {
            let scores: Vec<f64> = (0..negatives.rows())
                .map(|j| score_row(critic, g.row(i), negatives.row(j)))
                .collect();
            logsumexp(&scores) - m.ln()
        })
        .collect()
}

/// Vector features whose inner product with the episode skill is the
/// intrinsic reward, so successor features can be learned for them:
/// - inner product / monolithic, csf: `Δφ`
/// - mi_only: `Δφ − ĉ·z` with `ĉ` the sampled log-partition (`zᵀz = 1`)
/// - kernel critics: `r·z`, since their score does not depend on `z`
pub fn reward_features(
    net: &ReprNet,
    batch: &PairBatch,
    mode: RewardMode,
    negatives: &DenseArray,
) -> Result<DenseArray> {
    let g = net.pair_features(&batch.s, &batch.s_next)?;
    reward_features_from(net.critic(), &g, &batch.z, mode, negatives)
}

/// [`reward_features`] given precomputed pair features.
pub fn reward_features_from(
    critic: CriticKind,
    g: &DenseArray,
    z: &DenseArray,
    mode: RewardMode,
    negatives: &DenseArray,
) -> Result<DenseArray> {
    g.same_shape(z, "reward features")?;
    let c = match mode {
        RewardMode::Csf => vec![0.0; g.rows()],
        RewardMode::MiOnly => {
            if negatives.rows() < 2 {
                return Err(Error::DegenerateNegatives(negatives.rows()));
            }
            log_mean_exp_scores(critic, g, negatives)
        }
    };
    let mut out = DenseArray::zeros(g.rows(), g.cols());
    for i in 0..g.rows() {
        let zi = z.row(i);
        if critic.uses_skill() {
            for (k, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = g.get(i, k) - c[i] * zi[k];
            }
        } else {
            let r = score_row(critic, g.row(i), zi) - c[i];
            for (k, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = r * zi[k];
            }
        }
    }
    Ok(out)
}

/// Intrinsic reward of a single transition under the current φ.
pub fn intrinsic_reward(
    net: &ReprNet,
    s: &[f64],
    s_next: &[f64],
    z: &[f64],
    mode: RewardMode,
    negatives: &DenseArray,
) -> Result<f64> {
    let batch = PairBatch {
        s: DenseArray::row_vector(s),
        s_next: DenseArray::row_vector(s_next),
        z: DenseArray::row_vector(z),
    };
    let f = reward_features(net, &batch, mode, negatives)?;
    Ok(sphere::dot(f.row(0), z))
}

/// Resubstitution entropy estimate (nats) of a batch of `Δφ` vectors using
/// von Mises–Fisher kernels: sample `j` contributes a kernel at direction
/// `u_j` with concentration `‖Δφ_j‖`, and the estimate is
/// `log|S^{d−1}| − (1/N) Σ_i log p̂(u_i)`, `p̂` a density relative to the
/// uniform measure. Concentrations are capped at the Bessel series range.
pub fn resubstitution_entropy(deltas: &DenseArray) -> Result<f64> {
    let (n, d) = deltas.shape();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, found: n });
    }
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    let mut dirs = Vec::with_capacity(n);
    let mut kappas = Vec::with_capacity(n);
    let mut log_norm = Vec::with_capacity(n);
    for i in 0..n {
        let row = deltas.row(i);
        let r = sphere::norm(row);
        let u: Vec<f64> = if r > 0.0 {
            row.iter().map(|v| v / r).collect()
        } else {
            let mut e = vec![0.0; d];
            e[0] = 1.0;
            e
        };
        let k = r.min(MAX_ARGUMENT);
        log_norm.push(sphere::log_partition_norm(d, k)?);
        kappas.push(k);
        dirs.push(u);
    }
    let ln_n = (n as f64).ln();
    let mut terms = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            terms[j] = kappas[j] * sphere::dot(&dirs[j], &dirs[i]) - log_norm[j];
        }
        total += logsumexp(&terms) - ln_n;
    }
    Ok(log_sphere_area(d) - total / n as f64)
}

/// `log(2π^{d/2} / Γ(d/2))`, the log surface area of `S^{d−1}`.
pub fn log_sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    core::f64::consts::LN_2 + h * core::f64::consts::PI.ln() - libm::lgamma(h)
}

/// Resubstitution entropy of the network's `Δφ` over a transition batch.
pub fn entropy_diagnostic(net: &ReprNet, s: &DenseArray, s_next: &DenseArray) -> Result<f64> {
    resubstitution_entropy(&net.pair_features(s, s_next)?)
}
