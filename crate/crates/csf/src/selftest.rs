//! Property and oracle checks behind the `selftest` verb.

use std::fmt;
use std::time::Instant;

use csf_core::autodiff::{grad_check, Activation, Mlp, Tape};
use csf_core::envs::{chain_next, chain_sf_oracle, EnvSpec};
use csf_core::evalsuite::{
    chain_delta_features, fit_chain_successor_features, log_partition_slope, repr_diagnostics, sample_ball,
    sf_oracle_check, ChainFitConfig,
};
use csf_core::linegraph::{fit_line_graph, line_graph_dataset, LineFitConfig};
use csf_core::repr::{csf_repr_loss, metra_repr_loss, CriticKind, DualVariable, Negatives, PairBatch, ReprNet};
use csf_core::sf_policy::{actor_loss, sf_td_loss, PolicyNet, SuccessorNet, TdBatch};
use csf_core::sphere::{self, log_partition, log_partition_mc};
use csf_core::{DenseArray, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {:<34} {}  {} ({:.1}s)",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail,
            self.seconds
        )
    }
}

fn timed(id: u32, name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let start = Instant::now();
    let (passed, detail) = body().unwrap_or_else(|e| (false, format!("error: {e}")));
    Check {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn uniform(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DenseArray {
    DenseArray::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized")
}

fn gaussian(r: usize, c: usize, sigma: f64, rng: &mut ChaCha8Rng) -> DenseArray {
    let data = (0..r * c).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    DenseArray::from_vec(r, c, data).expect("sized")
}

fn unit_rows(r: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<DenseArray> {
    let mut data = Vec::with_capacity(r * d);
    for _ in 0..r {
        data.extend(sphere::sample_uniform_sphere(d, rng)?.into_vec());
    }
    DenseArray::from_vec(r, d, data)
}

/// Number of loss families cycled through by the gradient check.
const GRAD_KINDS: usize = 10;

fn grad_case(case: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(case);
    let obs = rng.random_range(1..5);
    let d = rng.random_range(2..5);
    let act = rng.random_range(1..4);
    let batch = rng.random_range(3..7);
    let hidden: Vec<usize> = (0..rng.random_range(0..3)).map(|_| rng.random_range(1..7)).collect();
    let kind = case as usize % GRAD_KINDS;
    let act_fn = if kind == 9 { Activation::Relu } else { Activation::Tanh };
    let tol = 1e-4;
    let report = match kind {
        0 | 9 => {
            let sizes = [&[obs][..], &hidden, &[d]].concat();
            let mlp = Mlp::new("net", &sizes, act_fn, case);
            let x = uniform(batch, obs, &mut rng);
            grad_check(
                mlp.params(),
                |p| {
                    let probe = Mlp::from_params("net", p.clone(), act_fn)?;
                    let mut tape = Tape::new();
                    let bound = probe.bind(&mut tape, true);
                    let xv = tape.constant(x.clone());
                    let y = bound.forward(&mut tape, xv)?;
                    let sq = tape.square(y);
                    let out = tape.mean(sq);
                    tape.set_output(out);
                    Ok(tape)
                },
                tol,
            )?
        }
        1..=6 => {
            let critic = match kind {
                3 => CriticKind::MonolithicMlp,
                4 => CriticKind::GaussianKernel,
                5 => CriticKind::LaplacianKernel,
                _ => CriticKind::InnerProduct,
            };
            let net = ReprNet::new(obs, &hidden, d, critic, act_fn, case);
            let pairs = PairBatch {
                s: uniform(batch, obs, &mut rng),
                s_next: uniform(batch, obs, &mut rng),
                z: unit_rows(batch, d, &mut rng)?,
            };
            let negs = unit_rows(9, d, &mut rng)?;
            let dual = DualVariable {
                lambda: rng.random_range(0.0..5.0),
                ..DualVariable::default()
            };
            grad_check(
                net.params(),
                |p| {
                    let mut probe = net.clone();
                    *probe.params_mut() = p.clone();
                    match kind {
                        2 => csf_repr_loss(&probe, &pairs, Negatives::InBatch, 5.0),
                        6 => Ok(metra_repr_loss(&probe, &dual, &pairs)?.tape),
                        _ => csf_repr_loss(&probe, &pairs, Negatives::Fresh(&negs), 5.0),
                    }
                },
                tol,
            )?
        }
        7 => {
            let psi = SuccessorNet::new(obs, act, d, &hidden, act_fn, case);
            let td = TdBatch {
                s: uniform(batch, obs, &mut rng),
                a: uniform(batch, act, &mut rng),
                s_next: uniform(batch, obs, &mut rng),
                next_actions: uniform(batch, act, &mut rng),
                z: unit_rows(batch, d, &mut rng)?,
                features: uniform(batch, d, &mut rng),
            };
            grad_check(
                psi.online.params(),
                |p| {
                    let mut probe = psi.clone();
                    *probe.online.params_mut() = p.clone();
                    sf_td_loss(&probe, &td, 0.99)
                },
                tol,
            )?
        }
        _ => {
            let pi = PolicyNet::new(obs, d, act, &hidden, act_fn, case);
            let psi = SuccessorNet::new(obs, act, d, &[4], Activation::Tanh, case ^ 0xff);
            let s = uniform(batch, obs, &mut rng);
            let z = unit_rows(batch, d, &mut rng)?;
            let noise = gaussian(batch, act, 1.0, &mut rng);
            grad_check(
                pi.params(),
                |p| {
                    let mut probe = pi.clone();
                    *probe.params_mut() = p.clone();
                    Ok(actor_loss(&probe, &psi, &s, &z, &noise, 0.2)?.tape)
                },
                tol,
            )?
        }
    };
    Ok(report.max_rel_error)
}

/// Backward pass against central differences over 120 random networks
/// and losses (plain MLP, contrastive with every critic and both negative
/// schemes, dual, TD, actor).
pub fn check_gradients() -> Check {
    timed(1, "gradients vs finite differences", || {
        let mut worst = 0.0f64;
        let cases = 12 * GRAD_KINDS as u64;
        for case in 0..cases {
            worst = worst.max(grad_case(case)?);
        }
        Ok((worst < 1e-4, format!("{cases} configs, max rel error {worst:.2e}")))
    })
}

/// Closed-form `log Z` against Monte Carlo in 16 cells, plus a spot value.
pub fn check_log_partition() -> Check {
    timed(2, "log-partition vs Monte Carlo", || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst_z = 0.0f64;
        let mut ok = true;
        for d in [2usize, 4, 8, 16] {
            for r in [0.1, 0.5, 1.0, 2.0] {
                let dir = sphere::sample_uniform_sphere(d, &mut rng)?;
                let w: Vec<f64> = dir.values().iter().map(|v| r * v).collect();
                let exact = log_partition(&w)?;
                let mc = log_partition_mc(&w, 1_000_000, &mut rng)?;
                let z = (mc.estimate - exact).abs() / mc.standard_error;
                worst_z = worst_z.max(z);
                ok &= z <= 3.0;
            }
        }
        let spot = log_partition(&[1.0, 0.0])?;
        ok &= (spot - 0.235914).abs() <= 1e-6;
        Ok((ok, format!("max |z| {worst_z:.2} over 16 cells, log Z(d=2, |w|=1) = {spot:.7}")))
    })
}

/// Slope of `log Z` against `‖w‖²` for `‖w‖ ≤ 1.2`, `d = 2`.
pub fn check_quadratic_slope() -> Check {
    timed(3, "log-partition quadratic slope", || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ws = sample_ball(5000, 2, 1.2, &mut rng)?;
        let fit = log_partition_slope(&ws)?;
        Ok(((0.21..=0.26).contains(&fit.slope), format!("slope {:.4}", fit.slope)))
    })
}

/// Dual-gradient fits on the 9-node line graph meet `E‖Δφ‖² ≈ 1`.
pub fn check_expected_constraint() -> Check {
    timed(4, "dual objective constraint", || {
        let mut values = Vec::new();
        for seed in 0..5 {
            let data = line_graph_dataset(9, 500, seed)?;
            let report = fit_line_graph(
                &data,
                &LineFitConfig {
                    seed,
                    ..LineFitConfig::default()
                },
            )?;
            values.push(report.e_sq_norm);
        }
        let ok = values.iter().all(|v| (0.9..=1.1).contains(v));
        let shown: Vec<String> = values.iter().map(|v| format!("{v:.4}")).collect();
        Ok((ok, format!("E|dphi|^2 = [{}]", shown.join(", "))))
    })
}

/// Policy evaluation by repeated Bellman backups of a scalar reward.
fn chain_q_by_iteration(n: usize, policy: &[usize], reward: &[[f64; 2]], gamma: f64) -> Vec<[f64; 2]> {
    let mut q = vec![[0.0; 2]; n];
    loop {
        let mut next = q.clone();
        for s in 0..n {
            for a in 0..2 {
                let s2 = chain_next(n, s, a);
                next[s][a] = reward[s][a] + gamma * q[s2][policy[s2]];
            }
        }
        let delta = next
            .iter()
            .zip(&q)
            .flat_map(|(x, y)| [(x[0] - y[0]).abs(), (x[1] - y[1]).abs()])
            .fold(0.0, f64::max);
        q = next;
        if delta < 1e-15 {
            return q;
        }
    }
}

/// TD-trained ψ against exact successor features on the 5-state chain, and
/// the tabular identity `ψᵀz = Q` for the reward `Δφᵀz`.
pub fn check_successor_features() -> Check {
    timed(5, "successor-feature oracle", || {
        let n = 5;
        let gamma = 0.9;
        let spec = EnvSpec::chain_mdp(n);
        let embedding: Vec<Vec<f64>> = (0..n).map(|k| vec![0.1 * k as f64, 0.05 * (k as f64 - 2.0).abs()]).collect();
        let features = chain_delta_features(&embedding);
        let policy = [1, 1, 0, 1, 1];
        let z = [0.6, 0.8];
        let psi = fit_chain_successor_features(&spec, &policy, &features, &z, &ChainFitConfig::default())?;
        let td_err = sf_oracle_check(&psi, &spec, &policy, &features, &z, gamma)?;

        let oracle = chain_sf_oracle(&spec, &policy, &features, gamma)?;
        let reward: Vec<[f64; 2]> = features.iter().map(|f| [0, 1].map(|a| sphere::dot(&f[a], &z))).collect();
        let q = chain_q_by_iteration(n, &policy, &reward, gamma);
        let mut identity_err = 0.0f64;
        for s in 0..n {
            for a in 0..2 {
                identity_err = identity_err.max((sphere::dot(&oracle[s][a], &z) - q[s][a]).abs());
            }
        }
        Ok((
            td_err < 0.05 && identity_err < 1e-9,
            format!("TD max abs error {td_err:.4}, tabular identity error {identity_err:.1e}"),
        ))
    })
}

/// Chi-square statistic and degrees of freedom after pooling adjacent bins
/// until each expects at least five draws.
pub fn pooled_chi_square(counts: &[f64], probs: &[f64], n: f64) -> (f64, usize) {
    let (mut obs, mut exp) = (Vec::new(), Vec::new());
    let (mut o, mut e) = (0.0, 0.0);
    for (c, p) in counts.iter().zip(probs) {
        o += c;
        e += p * n;
        if e >= 5.0 {
            obs.push(o);
            exp.push(e);
            (o, e) = (0.0, 0.0);
        }
    }
    if let (Some(lo), Some(le)) = (obs.last_mut(), exp.last_mut()) {
        *lo += o;
        *le += e;
    }
    let chi2 = obs.iter().zip(&exp).map(|(o, e)| (o - e) * (o - e) / e).sum();
    (chi2, obs.len().saturating_sub(1))
}

/// A Gaussian conditioned on the sphere through its mean is von
/// Mises–Fisher with `κ = ‖μ‖/σ²`.
pub fn check_shell_gaussian() -> Check {
    timed(6, "shell-conditioned Gaussian is vMF", || {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let (sigma, mu) = (0.5, [0.0, 0.0, 1.0]);
        let (cos, attempts) = sphere::shell_conditioned_cosines(&mu, sigma, 0.02, n, &mut rng)?;
        let bins = 20;
        let edges: Vec<f64> = (0..=bins).map(|i| -1.0 + 2.0 * i as f64 / bins as f64).collect();
        let probs = sphere::vmf_cosine_bin_probs(3, 1.0 / (sigma * sigma), &edges)?;
        let mut counts = vec![0.0; bins];
        for t in cos {
            counts[(((t + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1)] += 1.0;
        }
        let (chi2, df) = pooled_chi_square(&counts, &probs, n as f64);
        let p = ChiSquared::new(df as f64).map_err(|e| csf_core::Error::Range(e.to_string()))?.sf(chi2);
        Ok((p > 0.01, format!("chi2 {chi2:.2} on {df} dof, p = {p:.3}, {attempts} draws")))
    })
}

/// Isotropy and uniformity accept `Δφ = z + N(0, 0.1²I)` and reject
/// vMF(κ = 8) directions.
pub fn check_diagnostics() -> Check {
    timed(7, "diagnostics on constructed data", || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let z = unit_rows(n, 2, &mut rng)?;
        let noise = gaussian(n, 2, 0.1, &mut rng);
        let (good, _) = repr_diagnostics(&z.zip_map(&noise, |a, b| a + b), &z)?;

        let mut data = Vec::with_capacity(2 * n);
        while data.len() < 2 * n {
            let t = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            if rng.random::<f64>() < (8.0 * (t.cos() - 1.0)).exp() {
                data.extend([t.cos(), t.sin()]);
            }
        }
        let (bad, _) = repr_diagnostics(&DenseArray::from_vec(n, 2, data)?, &unit_rows(n, 2, &mut rng)?)?;
        let ok = good.isotropic && good.uniform && !bad.uniform && bad.mean_resultant_length > 0.3;
        Ok((
            ok,
            format!(
                "noisy skills: isotropic {} uniform {} (R {:.3}); vMF(8): uniform {} (R {:.3})",
                good.isotropic, good.uniform, good.mean_resultant_length, bad.uniform, bad.mean_resultant_length
            ),
        ))
    })
}

pub fn run_all() -> Vec<Check> {
    [
        check_gradients as fn() -> Check,
        check_log_partition,
        check_quadratic_slope,
        check_expected_constraint,
        check_successor_features,
        check_shell_gaussian,
        check_diagnostics,
    ]
    .iter()
    .map(|f| f())
    .collect()
}
