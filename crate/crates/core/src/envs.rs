//! Reward-free toy environments and exact tabular oracles.
//!
//! The step interface has no reward channel at all: intrinsic rewards are
//! always recomputed from the current representation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    /// Damped double integrator on the unbounded plane.
    #[serde(rename = "point_mass_2d")]
    PointMass2d,
    /// Deterministic left/right chain with an absorbing right end.
    ChainMdp,
    /// The point mass confined to a square room.
    GridRoom,
}

/// Missing keys in a serialized spec take the point-mass values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub horizon: usize,
    pub dt: f64,
    pub damping: f64,
    pub action_clamp: f64,
    /// Standard deviation of the initial position jitter.
    pub reset_noise: f64,
    /// Half-width of the room (grid_room only).
    pub room_half_width: f64,
    /// Number of states (chain_mdp only).
    pub chain_len: usize,
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self::point_mass_2d()
    }
}

impl EnvSpec {
    pub fn point_mass_2d() -> Self {
        Self {
            kind: EnvKind::PointMass2d,
            horizon: 200,
            dt: 0.1,
            damping: 0.98,
            action_clamp: 1.0,
            reset_noise: 0.01,
            room_half_width: 10.0,
            chain_len: 5,
        }
    }

    pub fn grid_room() -> Self {
        Self {
            kind: EnvKind::GridRoom,
            ..Self::point_mass_2d()
        }
    }

    pub fn chain_mdp(len: usize) -> Self {
        Self {
            kind: EnvKind::ChainMdp,
            horizon: 2 * len.max(1),
            chain_len: len,
            ..Self::point_mass_2d()
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self.kind {
            EnvKind::PointMass2d | EnvKind::GridRoom => 4,
            EnvKind::ChainMdp => self.chain_len,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.kind {
            EnvKind::PointMass2d | EnvKind::GridRoom => 2,
            EnvKind::ChainMdp => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("env horizon must be >= 1".into()));
        }
        let positive = [
            ("dt", self.dt),
            ("action_clamp", self.action_clamp),
            ("room_half_width", self.room_half_width),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("env {name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.damping) || self.reset_noise < 0.0 {
            return Err(Error::Config("env damping must lie in [0, 1]".into()));
        }
        if self.kind == EnvKind::ChainMdp && self.chain_len < 2 {
            return Err(Error::Config("chain_mdp needs at least 2 states".into()));
        }
        Ok(())
    }
}

/// Full environment state. `position` is the ground-truth planar location
/// used by coverage metrics; for the chain it is `(index, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub step: usize,
}

impl EnvState {
    fn planar(position: [f64; 2], velocity: [f64; 2], step: usize) -> Self {
        Self {
            observation: vec![position[0], position[1], velocity[0], velocity[1]],
            position,
            velocity,
            step,
        }
    }

    fn chain(len: usize, index: usize, step: usize) -> Self {
        let mut observation = vec![0.0; len];
        observation[index] = 1.0;
        Self {
            observation,
            position: [index as f64, 0.0],
            velocity: [0.0; 2],
            step,
        }
    }

    /// Chain index (chain_mdp only).
    pub fn chain_index(&self) -> usize {
        self.position[0] as usize
    }
}

pub fn reset<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> EnvState {
    match spec.kind {
        EnvKind::PointMass2d | EnvKind::GridRoom => {
            let jx: f64 = rng.sample(StandardNormal);
            let jy: f64 = rng.sample(StandardNormal);
            EnvState::planar(
                [spec.reset_noise * jx, spec.reset_noise * jy],
                [0.0, 0.0],
                0,
            )
        }
        EnvKind::ChainMdp => EnvState::chain(spec.chain_len, 0, 0),
    }
}

/// Observation of the environment resting at planar position `pos`
/// (zero velocity); for the chain, the one-hot of the nearest index.
pub fn goal_observation(spec: &EnvSpec, pos: [f64; 2]) -> Vec<f64> {
    match spec.kind {
        EnvKind::PointMass2d | EnvKind::GridRoom => vec![pos[0], pos[1], 0.0, 0.0],
        EnvKind::ChainMdp => {
            let idx = pos[0].round().clamp(0.0, (spec.chain_len - 1) as f64) as usize;
            EnvState::chain(spec.chain_len, idx, 0).observation
        }
    }
}

/// Chain successor: action index 1 moves right, 0 moves left.
pub fn chain_next(len: usize, index: usize, action: usize) -> usize {
    if action == 1 {
        (index + 1).min(len - 1)
    } else {
        index.saturating_sub(1)
    }
}

/// Discrete chain action encoded by a continuous action vector.
pub fn chain_action_index(action: &[f64]) -> usize {
    usize::from(action[0] >= 0.0)
}

/// Advance one step. Returns the next state and whether the horizon is hit.
pub fn step(spec: &EnvSpec, state: &EnvState, action: &[f64]) -> Result<(EnvState, bool)> {
    if action.len() != spec.action_dim() {
        return Err(Error::Config(format!(
            "action has {} entries, env expects {}",
            action.len(),
            spec.action_dim()
        )));
    }
    if action.iter().any(|a| a.is_nan()) {
        return Err(Error::InvalidAction);
    }
    let t = state.step + 1;
    let next = match spec.kind {
        EnvKind::PointMass2d | EnvKind::GridRoom => {
            let c = spec.action_clamp;
            let mut vel = state.velocity;
            let mut pos = state.position;
            for k in 0..2 {
                vel[k] += spec.dt * action[k].clamp(-c, c);
                pos[k] += spec.dt * vel[k];
                vel[k] *= spec.damping;
                if spec.kind == EnvKind::GridRoom {
                    let h = spec.room_half_width;
                    if pos[k].abs() > h {
                        pos[k] = pos[k].clamp(-h, h);
                        vel[k] = 0.0;
                    }
                }
            }
            EnvState::planar(pos, vel, t)
        }
        EnvKind::ChainMdp => {
            let idx = chain_next(spec.chain_len, state.chain_index(), chain_action_index(action));
            EnvState::chain(spec.chain_len, idx, t)
        }
    };
    Ok((next, t >= spec.horizon))
}

/// Running per-coordinate mean and variance (Welford), mergeable across
/// workers with Chan's parallel update.
#[derive(Debug, Clone, PartialEq)]
pub struct StateNormalizer {
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

pub const VARIANCE_FLOOR: f64 = 1e-8;

impl StateNormalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, obs: &[f64]) {
        debug_assert_eq!(obs.len(), self.dim());
        self.count += 1.0;
        for (k, &x) in obs.iter().enumerate() {
            let delta = x - self.mean[k];
            self.mean[k] += delta / self.count;
            self.m2[k] += delta * (x - self.mean[k]);
        }
    }

    /// Population variance per coordinate.
    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0.0 {
            return vec![1.0; self.dim()];
        }
        self.m2.iter().map(|m| (m / self.count).max(0.0)).collect()
    }

    /// Normalize every row of a batch.
    pub fn normalize_batch(&self, obs: &DenseArray) -> DenseArray {
        let mut out = obs.clone();
        if self.count == 0.0 {
            return out;
        }
        let scale: Vec<f64> = self
            .variance()
            .iter()
            .map(|v| 1.0 / (v + VARIANCE_FLOOR).sqrt())
            .collect();
        for r in 0..out.rows() {
            for (k, x) in out.row_mut(r).iter_mut().enumerate() {
                *x = (*x - self.mean[k]) * scale[k];
            }
        }
        out
    }

    /// `(obs − mean) / √(var + 1e-8)`; the identity before any update.
    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        if self.count == 0.0 {
            return obs.to_vec();
        }
        let var = self.variance();
        obs.iter()
            .zip(&self.mean)
            .zip(&var)
            .map(|((x, m), v)| (x - m) / (v + VARIANCE_FLOOR).sqrt())
            .collect()
    }

    pub fn merge(&mut self, other: &StateNormalizer) {
        if other.count == 0.0 {
            return;
        }
        if self.count == 0.0 {
            *self = other.clone();
            return;
        }
        let n = self.count + other.count;
        for k in 0..self.dim() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * other.count / n;
            self.m2[k] += other.m2[k] + delta * delta * self.count * other.count / n;
        }
        self.count = n;
    }
}

/// Exact successor features `ψ(s, a)` of a deterministic chain under a
/// fixed policy, where `features[s][a]` is the vector feature earned by
/// taking `a` in `s`. Solves `(I − γP_π) Ψ_π = F_π` directly, then
/// `ψ(s, a) = f(s, a) + γ Ψ_π(next(s, a))`.
pub fn chain_sf_oracle(
    spec: &EnvSpec,
    policy: &[usize],
    features: &[[Vec<f64>; 2]],
    gamma: f64,
) -> Result<Vec<[Vec<f64>; 2]>> {
    let n = spec.chain_len;
    if spec.kind != EnvKind::ChainMdp || policy.len() != n || features.len() != n {
        return Err(Error::Config("chain oracle needs a chain spec with per-state tables".into()));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Divergence(format!(
            "successor features diverge for discount {gamma} on a cyclic chain"
        )));
    }
    let d = features[0][0].len();
    // Augmented system [I − γP | F].
    let mut a = vec![vec![0.0; n + d]; n];
    for s in 0..n {
        let next = chain_next(n, s, policy[s]);
        a[s][s] += 1.0;
        a[s][next] -= gamma;
        a[s][n..].copy_from_slice(&features[s][policy[s]]);
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        a.swap(col, pivot);
        let p = a[col][col];
        for k in col..n + d {
            a[col][k] /= p;
        }
        for r in 0..n {
            if r != col && a[r][col] != 0.0 {
                let f = a[r][col];
                for k in col..n + d {
                    a[r][k] -= f * a[col][k];
                }
            }
        }
    }
    let on_policy: Vec<&[f64]> = a.iter().map(|row| &row[n..]).collect();
    Ok((0..n)
        .map(|s| {
            let q = |act: usize| -> Vec<f64> {
                let next = chain_next(n, s, act);
                features[s][act]
                    .iter()
                    .zip(on_policy[next])
                    .map(|(f, psi)| f + gamma * psi)
                    .collect()
            };
            [q(0), q(1)]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chain_reset_and_moves() {
        let spec = EnvSpec::chain_mdp(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s0 = reset(&spec, &mut rng);
        assert_eq!(s0.chain_index(), 0);
        let (s1, _) = step(&spec, &s0, &[1.0]).unwrap();
        assert_eq!(s1.chain_index(), 1);
        let (s_left, _) = step(&spec, &s0, &[-1.0]).unwrap();
        assert_eq!(s_left.chain_index(), 0);
        for k in 0..5 {
            assert_eq!(chain_next(5, k, 1), (k + 1).min(4));
        }
    }

    #[test]
    fn point_mass_reset_is_near_origin_and_seeded() {
        let spec = EnvSpec::point_mass_2d();
        let a = reset(&spec, &mut ChaCha8Rng::seed_from_u64(9));
        let b = reset(&spec, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!((a.position[0].powi(2) + a.position[1].powi(2)).sqrt() < 0.05);
        assert_eq!(a.velocity, [0.0, 0.0]);
    }

    #[test]
    fn zero_action_from_rest_stays_put() {
        let spec = EnvSpec::point_mass_2d();
        let s = EnvState::planar([0.3, -0.2], [0.0, 0.0], 0);
        let (n, done) = step(&spec, &s, &[0.0, 0.0]).unwrap();
        assert_eq!(n.position, s.position);
        assert!(!done);
    }

    #[test]
    fn constant_push_matches_closed_form_recurrence() {
        // v_{t+1} = ρ (v_t + dt a), x_{t+1} = x_t + dt (v_t + dt a):
        // x_T = dt² a Σ_{t<T} Σ_{k≤t} ρ^{t−k}... evaluated directly.
        let spec = EnvSpec::point_mass_2d();
        let (dt, rho) = (spec.dt, spec.damping);
        let mut expected = 0.0;
        for t in 0..200 {
            // velocity before damping at step t: dt·Σ_{k=0}^{t} ρ^{t−k}
            let v: f64 = dt * (1.0 - rho.powi(t + 1)) / (1.0 - rho);
            expected += dt * v;
        }
        let mut s = EnvState::planar([0.0, 0.0], [0.0, 0.0], 0);
        let mut done = false;
        for _ in 0..200 {
            (s, done) = step(&spec, &s, &[1.0, 0.0]).unwrap();
        }
        assert!(done);
        assert!((s.position[0] - expected).abs() < 1e-9);
        assert!(s.position[0] > 10.0);
        assert_eq!(s.position[1], 0.0);
    }

    #[test]
    fn actions_are_clamped_and_validated() {
        let spec = EnvSpec::point_mass_2d();
        let s = EnvState::planar([0.0, 0.0], [0.0, 0.0], 0);
        let (a, _) = step(&spec, &s, &[5.0, 0.0]).unwrap();
        let (b, _) = step(&spec, &s, &[1.0, 0.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(step(&spec, &s, &[f64::NAN, 0.0]).unwrap_err(), Error::InvalidAction);
        assert!(step(&spec, &s, &[0.0]).is_err());
    }

    #[test]
    fn grid_room_walls_hold() {
        let mut spec = EnvSpec::grid_room();
        spec.room_half_width = 1.0;
        let mut s = EnvState::planar([0.0, 0.0], [0.0, 0.0], 0);
        for _ in 0..100 {
            (s, _) = step(&spec, &s, &[1.0, 1.0]).unwrap();
        }
        assert_eq!(s.position, [1.0, 1.0]);
    }

    #[test]
    fn normalizer_constant_stream() {
        let mut n = StateNormalizer::new(2);
        for _ in 0..10 {
            n.update(&[3.0, -1.0]);
        }
        assert_eq!(n.normalize(&[3.0, -1.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn normalizer_symmetric_stream() {
        let mut n = StateNormalizer::new(1);
        for i in 0..1000 {
            n.update(&[if i % 2 == 0 { -1.0 } else { 1.0 }]);
        }
        assert!(n.mean[0].abs() < 1e-12);
        assert!((n.variance()[0] - 1.0).abs() < 1e-12);
        assert!((n.normalize(&[1.0])[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn oracle_gamma_zero_is_feature_table() {
        let spec = EnvSpec::chain_mdp(3);
        let features: Vec<[Vec<f64>; 2]> = (0..3)
            .map(|s| [vec![s as f64, -1.0], vec![1.0, s as f64 * 0.5]])
            .collect();
        let psi = chain_sf_oracle(&spec, &[1, 0, 1], &features, 0.0).unwrap();
        assert_eq!(psi, features);
    }

    #[test]
    fn oracle_absorbing_geometric_series() {
        let spec = EnvSpec::chain_mdp(2);
        let features = vec![[vec![0.0], vec![0.0]], [vec![0.0], vec![1.0]]];
        let psi = chain_sf_oracle(&spec, &[1, 1], &features, 0.5).unwrap();
        assert!((psi[1][1][0] - 2.0).abs() < 1e-12);
        assert!((psi[0][1][0] - 1.0).abs() < 1e-12);
        assert!(matches!(
            chain_sf_oracle(&spec, &[1, 1], &features, 1.0),
            Err(Error::Divergence(_))
        ));
    }
}
