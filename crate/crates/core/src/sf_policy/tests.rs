use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{adam_step, grad_check};
use crate::envs::{chain_next, chain_sf_oracle, EnvSpec};

fn random_array(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DenseArray {
    DenseArray::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn gaussian_array(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DenseArray {
    DenseArray::from_vec(r, c, (0..r * c).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn td_batch(psi: &SuccessorNet, n: usize, seed: u64) -> TdBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (o, a, d) = (psi.obs_dim(), psi.action_dim(), psi.skill_dim());
    TdBatch {
        s: random_array(n, o, &mut rng),
        a: random_array(n, a, &mut rng),
        s_next: random_array(n, o, &mut rng),
        next_actions: random_array(n, a, &mut rng),
        z: random_array(n, d, &mut rng),
        features: random_array(n, d, &mut rng),
    }
}

#[test]
fn td_loss_vanishes_at_one_step_fixed_point() {
    let psi = SuccessorNet::new(3, 2, 2, &[8], Activation::Tanh, 0);
    let mut batch = td_batch(&psi, 10, 1);
    batch.features = psi.eval(&batch.s, &batch.a, &batch.z, false).unwrap();
    let loss = sf_td_loss(&psi, &batch, 0.0).unwrap().output_scalar();
    assert!(loss.abs() < 1e-24);
}

#[test]
fn td_loss_rejects_bad_discount() {
    let psi = SuccessorNet::new(3, 2, 2, &[8], Activation::Tanh, 0);
    let batch = td_batch(&psi, 4, 1);
    assert!(sf_td_loss(&psi, &batch, 1.0).is_err());
    assert!(sf_td_loss(&psi, &batch, -0.1).is_err());
}

#[test]
fn td_loss_gradients_match_finite_differences() {
    let psi = SuccessorNet::new(3, 2, 2, &[7], Activation::Tanh, 3);
    let mut perturbed = psi.clone();
    perturbed.target.params_mut().values_mut().for_each(|v| {
        v.data_mut().iter_mut().for_each(|x| *x *= 0.7);
    });
    let batch = td_batch(&psi, 9, 2);
    let report = grad_check(
        psi.online.params(),
        |p| {
            let mut probe = perturbed.clone();
            *probe.online.params_mut() = p.clone();
            sf_td_loss(&probe, &batch, 0.9)
        },
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn td_learning_recovers_absorbing_chain_fixed_point() {
    // Two-state chain, always move right, feature 1 only on the absorbing
    // self-loop: ψ(1, right) = 1/(1 − γ) = 2 at γ = 0.5.
    let spec = EnvSpec::chain_mdp(2);
    let features = vec![[vec![0.0], vec![0.0]], [vec![0.0], vec![1.0]]];
    let oracle = chain_sf_oracle(&spec, &[1, 1], &features, 0.5).unwrap();

    let mut psi = SuccessorNet::new(2, 1, 1, &[], Activation::Tanh, 5);
    let mut adam = AdamState::new(psi.online.params(), AdamConfig { lr: 1e-2, ..AdamConfig::default() });
    let onehot = |k: usize| if k == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
    let rows: Vec<([f64; 2], f64, [f64; 2], f64)> = (0..2)
        .map(|s| (onehot(s), 1.0, onehot(chain_next(2, s, 1)), features[s][1][0]))
        .collect();
    let build = |f: &dyn Fn(&([f64; 2], f64, [f64; 2], f64)) -> Vec<f64>, c: usize| {
        DenseArray::from_vec(2, c, rows.iter().flat_map(f).collect()).unwrap()
    };
    let batch = TdBatch {
        s: build(&|r| r.0.to_vec(), 2),
        a: build(&|r| vec![r.1], 1),
        s_next: build(&|r| r.2.to_vec(), 2),
        next_actions: build(&|r| vec![r.1], 1),
        z: build(&|_| vec![1.0], 1),
        features: build(&|r| vec![r.3], 1),
    };
    for _ in 0..6000 {
        let mut tape = sf_td_loss(&psi, &batch, 0.5).unwrap();
        let grads = tape.backward(&DenseArray::scalar(1.0)).unwrap().for_params(psi.online.params());
        adam_step(psi.online.params_mut(), &grads, &mut adam).unwrap();
        ema_update(&psi.online.params().clone(), psi.target.params_mut(), 0.05).unwrap();
    }
    let fit = psi.eval(&batch.s, &batch.a, &batch.z, false).unwrap();
    for s in 0..2 {
        assert!((fit.get(s, 0) - oracle[s][1][0]).abs() < 0.05, "{s}: {}", fit.get(s, 0));
    }
    assert!((oracle[1][1][0] - 2.0).abs() < 1e-12);
}

/// Scalar Q of a deterministic chain policy by value iteration.
fn value_iteration_q(n: usize, policy: &[usize], reward: &[[f64; 2]], gamma: f64) -> Vec<[f64; 2]> {
    let mut v = vec![0.0; n];
    for _ in 0..5000 {
        v = (0..n)
            .map(|s| reward[s][policy[s]] + gamma * v[chain_next(n, s, policy[s])])
            .collect();
    }
    (0..n)
        .map(|s| [0, 1].map(|a| reward[s][a] + gamma * v[chain_next(n, s, a)]))
        .collect()
}

#[test]
fn successor_features_give_q_values_of_linear_rewards() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..10 {
        let n = 3 + trial % 4;
        let spec = EnvSpec::chain_mdp(n);
        let policy: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let features: Vec<[Vec<f64>; 2]> = (0..n)
            .map(|_| [0, 1].map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let z: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gamma = 0.9;
        let psi = chain_sf_oracle(&spec, &policy, &features, gamma).unwrap();
        let reward: Vec<[f64; 2]> = features
            .iter()
            .map(|f| [0, 1].map(|a| crate::sphere::dot(&f[a], &z)))
            .collect();
        let q = value_iteration_q(n, &policy, &reward, gamma);
        for s in 0..n {
            for a in 0..2 {
                let lin = crate::sphere::dot(&psi[s][a], &z);
                assert!((lin - q[s][a]).abs() < 1e-9);
                // Greedy action is unchanged by positive rescaling of z.
                let scaled: Vec<f64> = z.iter().map(|v| 3.5 * v).collect();
                let best = |w: &[f64]| {
                    let q0 = crate::sphere::dot(&psi[s][0], w);
                    let q1 = crate::sphere::dot(&psi[s][1], w);
                    usize::from(q1 > q0)
                };
                assert_eq!(best(&z), best(&scaled));
            }
        }
    }
}

struct ConstantCritic;

impl SkillCritic for ConstantCritic {
    fn score_on(&self, tape: &mut Tape, s: &DenseArray, a: Var, _z: &DenseArray) -> Result<Var> {
        // Depends on the action only through a zero multiple.
        let zeroed = tape.scale(a, 0.0);
        let summed = tape.sum_cols(zeroed);
        let c = tape.constant(DenseArray::filled(s.rows(), 1, 1.5));
        tape.add(summed, c)
    }
}

/// `−(a − 0.5)²` for a 1-D action.
struct QuadraticCritic;

impl SkillCritic for QuadraticCritic {
    fn score_on(&self, tape: &mut Tape, _s: &DenseArray, a: Var, _z: &DenseArray) -> Result<Var> {
        let shifted = tape.add_scalar(a, -0.5);
        let sq = tape.square(shifted);
        Ok(tape.scale(sq, -1.0))
    }
}

#[test]
fn action_independent_critic_gives_no_actor_signal() {
    let pi = PolicyNet::new(3, 2, 2, &[8], Activation::Tanh, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = random_array(16, 3, &mut rng);
    let z = random_array(16, 2, &mut rng);
    let noise = gaussian_array(16, 2, &mut rng);
    let mut step = actor_loss(&pi, &ConstantCritic, &s, &z, &noise, 0.0).unwrap();
    let grads = step.tape.backward(&DenseArray::scalar(1.0)).unwrap().for_params(pi.params());
    let norm: f64 = grads.iter().map(DenseArray::sum_sq).sum::<f64>().sqrt();
    assert!(norm < 1e-12);
}

#[test]
fn actor_climbs_quadratic_critic() {
    let mut pi = PolicyNet::new(1, 1, 1, &[], Activation::Tanh, 2);
    let mut adam = AdamState::new(pi.params(), AdamConfig { lr: 1e-2, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = DenseArray::filled(32, 1, 0.3);
    let z = DenseArray::filled(32, 1, 1.0);
    for _ in 0..2000 {
        let noise = gaussian_array(32, 1, &mut rng);
        let mut step = actor_loss(&pi, &QuadraticCritic, &s, &z, &noise, 0.0).unwrap();
        let grads = step.tape.backward(&DenseArray::scalar(1.0)).unwrap().for_params(pi.params());
        adam_step(pi.params_mut(), &grads, &mut adam).unwrap();
    }
    let a = sample_action(&pi, &[0.3], &[1.0], &mut rng, true).unwrap().action[0];
    assert!((a - 0.5).abs() < 0.05, "{a}");
}

#[test]
fn actor_gradients_match_finite_differences_at_fixed_noise() {
    let pi = PolicyNet::new(3, 2, 2, &[6], Activation::Tanh, 9);
    let psi = SuccessorNet::new(3, 2, 2, &[6], Activation::Tanh, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = random_array(8, 3, &mut rng);
    let z = random_array(8, 2, &mut rng);
    let noise = gaussian_array(8, 2, &mut rng);
    let report = grad_check(
        pi.params(),
        |p| {
            let mut probe = pi.clone();
            *probe.params_mut() = p.clone();
            Ok(actor_loss(&probe, &psi, &s, &z, &noise, 0.2)?.tape)
        },
        1e-3,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn entropy_tuning_directions() {
    let cfg = AdamConfig {
        lr: 1e-3,
        max_grad_norm: None,
        ..AdamConfig::default()
    };
    let mut at_target = EntropyTuner::new(2, 0.5, cfg);
    let before = at_target.alpha();
    entropy_coef_update(&mut at_target, &[2.0, 2.0]).unwrap();
    assert!((at_target.alpha() - before).abs() < 1e-12);

    // log π far above −target means entropy far below target.
    let mut low = EntropyTuner::new(2, 0.5, cfg);
    entropy_coef_update(&mut low, &[8.0, 9.0]).unwrap();
    assert!(low.alpha() > 0.5);
    let mut high = EntropyTuner::new(2, 0.5, cfg);
    entropy_coef_update(&mut high, &[-8.0, -9.0]).unwrap();
    assert!(high.alpha() < 0.5);
}

#[test]
fn two_small_entropy_steps_match_one_double_step() {
    let lr = 1e-4;
    let cfg = |lr| AdamConfig {
        lr,
        max_grad_norm: None,
        ..AdamConfig::default()
    };
    let lp = [3.0, 4.5, 2.0];
    let mut twice = EntropyTuner::new(2, 0.3, cfg(lr));
    entropy_coef_update(&mut twice, &lp).unwrap();
    entropy_coef_update(&mut twice, &lp).unwrap();
    let mut once = EntropyTuner::new(2, 0.3, cfg(2.0 * lr));
    entropy_coef_update(&mut once, &lp).unwrap();
    assert!((twice.log_alpha() - once.log_alpha()).abs() < 10.0 * lr * lr);
}

#[test]
fn ema_update_examples() {
    let psi = SuccessorNet::new(2, 1, 2, &[4], Activation::Tanh, 0);
    let other = SuccessorNet::new(2, 1, 2, &[4], Activation::Tanh, 99);
    let mut target = other.online.params().clone();
    ema_update(psi.online.params(), &mut target, 1.0).unwrap();
    assert_eq!(&target, psi.online.params());

    let mut target = other.online.params().clone();
    ema_update(psi.online.params(), &mut target, 0.0).unwrap();
    assert_eq!(&target, other.online.params());

    let dist = |a: &ParamSet, b: &ParamSet| -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|((_, x), (_, y))| x.zip_map(y, |p, q| p - q).sum_sq())
            .sum::<f64>()
            .sqrt()
    };
    let tau = 0.1;
    let mut target = other.online.params().clone();
    let mut prev = dist(&target, psi.online.params());
    for _ in 0..10 {
        ema_update(psi.online.params(), &mut target, tau).unwrap();
        let now = dist(&target, psi.online.params());
        assert!((now / prev - (1.0 - tau)).abs() < 1e-9);
        prev = now;
    }
    let mismatched = SuccessorNet::new(2, 1, 2, &[5], Activation::Tanh, 0);
    assert!(ema_update(psi.online.params(), &mut mismatched.online.params().clone(), 0.5).is_err());
}

#[test]
fn zero_policy_acts_deterministically_at_zero() {
    let mut pi = PolicyNet::new(3, 2, 2, &[4], Activation::Tanh, 0);
    pi.params_mut().values_mut().for_each(|v| v.data_mut().fill(0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = sample_action(&pi, &[1.0, 2.0, 3.0], &[0.6, 0.8], &mut rng, true).unwrap();
    assert_eq!(a.action, vec![0.0, 0.0]);
}

#[test]
fn sampling_is_seeded_and_bounded() {
    let pi = PolicyNet::new(3, 2, 2, &[4], Activation::Tanh, 3);
    let s = [0.1, 0.2, 0.3];
    let z = [1.0, 0.0];
    let a = sample_action(&pi, &s, &z, &mut ChaCha8Rng::seed_from_u64(5), false).unwrap();
    let b = sample_action(&pi, &s, &z, &mut ChaCha8Rng::seed_from_u64(5), false).unwrap();
    assert_eq!(a, b);
    assert!(a.action.iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn squashed_log_prob_matches_numeric_density() {
    // 1-D squashed Gaussian: P(A ≤ a) = Φ((atanh a − μ)/σ); compare the
    // log-density with a finite-difference derivative of the CDF, and check
    // that the density integrates to one.
    let (mean, log_std) = (0.3, -0.4_f64);
    let std = log_std.exp();
    let cdf = |a: f64| 0.5 * (1.0 + libm::erf((a.atanh() - mean) / (std * core::f64::consts::SQRT_2)));
    for a in [-0.9, -0.5, 0.0, 0.25, 0.7, 0.95] {
        let h = 1e-6;
        let numeric = (cdf(a + h) - cdf(a - h)) / (2.0 * h);
        let analytic = squashed_log_prob(&[a.atanh()], &[mean], &[log_std]).exp();
        assert!((numeric - analytic).abs() < 1e-6 * analytic.max(1.0), "{a}");
    }
    let n = 200_000;
    let mut integral = 0.0;
    for i in 0..n {
        let a = -1.0 + (i as f64 + 0.5) * 2.0 / n as f64;
        integral += squashed_log_prob(&[a.atanh()], &[mean], &[log_std]).exp() * 2.0 / n as f64;
    }
    assert!((integral - 1.0).abs() < 1e-4);
}

#[test]
fn tape_log_prob_matches_scalar_formula() {
    let pi = PolicyNet::new(3, 2, 2, &[4], Activation::Tanh, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random_array(5, 3, &mut rng);
    let z = random_array(5, 2, &mut rng);
    let noise = gaussian_array(5, 2, &mut rng);
    let mut tape = Tape::new();
    let (action, lp) = pi.act_on(&mut tape, &s, &z, &noise, false).unwrap();
    let out = pi.net.forward(&DenseArray::hstack(&[&s, &z]).unwrap()).unwrap();
    for i in 0..5 {
        let mean = &out.row(i)[..2];
        let log_std: Vec<f64> = out.row(i)[2..].iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        let u: Vec<f64> = (0..2).map(|k| mean[k] + log_std[k].exp() * noise.get(i, k)).collect();
        let expected = squashed_log_prob(&u, mean, &log_std);
        assert!((tape.value(lp).get(i, 0) - expected).abs() < 1e-10);
        for k in 0..2 {
            assert!((tape.value(action).get(i, k) - u[k].tanh()).abs() < 1e-15);
        }
    }
}
