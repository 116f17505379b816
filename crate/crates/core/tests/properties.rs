use csf_core::autodiff::{grad_check, Activation, Mlp, Tape};
use csf_core::envs::{chain_next, chain_sf_oracle, EnvSpec, StateNormalizer};
use csf_core::repr::{csf_repr_loss, metra_repr_loss, CriticKind, DualVariable, Negatives, PairBatch, ReprNet};
use csf_core::sf_policy::{actor_loss, sf_td_loss, PolicyNet, SuccessorNet, TdBatch};
use csf_core::sphere::{self, log_partition, log_partition_mc};
use csf_core::DenseArray;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn uniform(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DenseArray {
    DenseArray::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn normal(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DenseArray {
    DenseArray::from_vec(r, c, (0..r * c).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn unit_rows(r: usize, d: usize, rng: &mut ChaCha8Rng) -> DenseArray {
    let mut data = Vec::with_capacity(r * d);
    for _ in 0..r {
        data.extend(sphere::sample_uniform_sphere(d, rng).unwrap().into_vec());
    }
    DenseArray::from_vec(r, d, data).unwrap()
}

/// Rotation by Householder reflections built from random vectors.
fn random_rotation(w: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = w.to_vec();
    for _ in 0..3 {
        let v: Vec<f64> = (0..w.len()).map(|_| rng.sample(StandardNormal)).collect();
        let vv = sphere::dot(&v, &v);
        let c = 2.0 * sphere::dot(&v, &out) / vv;
        for (o, vi) in out.iter_mut().zip(&v) {
            *o -= c * vi;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    // Smooth activations only: finite differences straddling a ReLU kink
    // are not a gradient error.
    #[test]
    fn random_networks_and_losses_match_finite_differences(
        seed in any::<u64>(),
        width in 1usize..6,
        depth in 0usize..3,
        batch in 2usize..6,
        loss_kind in 0usize..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = vec![width; depth];
        let (obs, d, act) = (3, 2, 2);
        let report = match loss_kind {
            0 => {
                let mlp = Mlp::new("net", &[&[obs][..], &hidden, &[d]].concat(), Activation::Tanh, seed);
                let x = uniform(batch, obs, &mut rng);
                grad_check(mlp.params(), |p| {
                    let probe = Mlp::from_params("net", p.clone(), Activation::Tanh)?;
                    let mut tape = Tape::new();
                    let bound = probe.bind(&mut tape, true);
                    let xv = tape.constant(x.clone());
                    let y = bound.forward(&mut tape, xv)?;
                    let sq = tape.square(y);
                    let out = tape.mean(sq);
                    tape.set_output(out);
                    Ok(tape)
                }, 1e-4).unwrap()
            }
            1 | 2 => {
                let critic = if loss_kind == 1 { CriticKind::InnerProduct } else { CriticKind::MonolithicMlp };
                let net = ReprNet::new(obs, &hidden, d, critic, Activation::Tanh, seed);
                let batch = PairBatch { s: uniform(batch, obs, &mut rng), s_next: uniform(batch, obs, &mut rng), z: unit_rows(batch, d, &mut rng) };
                let negs = unit_rows(7, d, &mut rng);
                grad_check(net.params(), |p| {
                    let mut probe = net.clone();
                    *probe.params_mut() = p.clone();
                    csf_repr_loss(&probe, &batch, Negatives::Fresh(&negs), 5.0)
                }, 1e-4).unwrap()
            }
            3 => {
                let psi = SuccessorNet::new(obs, act, d, &hidden, Activation::Tanh, seed);
                let td = TdBatch {
                    s: uniform(batch, obs, &mut rng), a: uniform(batch, act, &mut rng),
                    s_next: uniform(batch, obs, &mut rng), next_actions: uniform(batch, act, &mut rng),
                    z: unit_rows(batch, d, &mut rng), features: uniform(batch, d, &mut rng),
                };
                grad_check(psi.online.params(), |p| {
                    let mut probe = psi.clone();
                    *probe.online.params_mut() = p.clone();
                    sf_td_loss(&probe, &td, 0.9)
                }, 1e-4).unwrap()
            }
            _ => {
                let pi = PolicyNet::new(obs, d, act, &hidden, Activation::Tanh, seed);
                let psi = SuccessorNet::new(obs, act, d, &[4], Activation::Tanh, seed ^ 1);
                let s = uniform(batch, obs, &mut rng);
                let z = unit_rows(batch, d, &mut rng);
                let noise = normal(batch, act, &mut rng);
                grad_check(pi.params(), |p| {
                    let mut probe = pi.clone();
                    *probe.params_mut() = p.clone();
                    Ok(actor_loss(&probe, &psi, &s, &z, &noise, 0.3)?.tape)
                }, 1e-4).unwrap()
            }
        };
        prop_assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn log_partition_depends_only_on_norm(seed in any::<u64>(), d in 2usize..10, r in 0.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = sphere::sample_uniform_sphere(d, &mut rng).unwrap().values().iter().map(|v| r * v).collect();
        let rotated = random_rotation(&w, &mut rng);
        let a = log_partition(&w).unwrap();
        let b = log_partition(&rotated).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn repr_loss_ignores_constant_shift_of_phi(seed in any::<u64>(), shift in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = ReprNet::new(4, &[5], 2, CriticKind::InnerProduct, Activation::Relu, seed);
        let batch = PairBatch { s: uniform(6, 4, &mut rng), s_next: uniform(6, 4, &mut rng), z: unit_rows(6, 2, &mut rng) };
        let negs = unit_rows(16, 2, &mut rng);
        let base = csf_repr_loss(&net, &batch, Negatives::Fresh(&negs), 5.0).unwrap().output_scalar();
        let mut shifted = net.clone();
        let last = shifted.params().len() - 1;
        shifted.params_mut().value_mut(last).data_mut().iter_mut().for_each(|b| *b += shift);
        let moved = csf_repr_loss(&shifted, &batch, Negatives::Fresh(&negs), 5.0).unwrap().output_scalar();
        prop_assert!((base - moved).abs() < 1e-9);
        let dual = DualVariable::default();
        let m0 = metra_repr_loss(&net, &dual, &batch).unwrap().tape.output_scalar();
        let m1 = metra_repr_loss(&shifted, &dual, &batch).unwrap().tape.output_scalar();
        prop_assert!((m0 - m1).abs() < 1e-9);
    }

    #[test]
    fn critic_is_linear_in_the_skill(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = ReprNet::new(3, &[4], 3, CriticKind::InnerProduct, Activation::Tanh, seed);
        let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s2: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z1: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z2: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mix: Vec<f64> = z1.iter().zip(&z2).map(|(x, y)| a * x + b * y).collect();
        let f = |z: &[f64]| csf_core::repr::critic_score(&net, &s, &s2, z).unwrap();
        prop_assert!((f(&mix) - (a * f(&z1) + b * f(&z2))).abs() < 1e-12);
    }

    #[test]
    fn welford_matches_two_pass_in_any_order(seed in any::<u64>(), n in 2usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<[f64; 3]> = (0..n).map(|_| [rng.random_range(-50.0..50.0), rng.sample(StandardNormal), 7.0]).collect();
        let mut norm = StateNormalizer::new(3);
        xs.iter().for_each(|x| norm.update(x));
        for k in 0..3 {
            let mean = xs.iter().map(|x| x[k]).sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x[k] - mean).powi(2)).sum::<f64>() / n as f64;
            prop_assert!((norm.mean[k] - mean).abs() < 1e-9);
            prop_assert!((norm.variance()[k] - var).abs() < 1e-9 * (1.0 + var));
        }
        let mut shuffled = xs.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let mut other = StateNormalizer::new(3);
        shuffled.iter().for_each(|x| other.update(x));
        for k in 0..3 {
            prop_assert!((norm.mean[k] - other.mean[k]).abs() < 1e-9);
        }
        // Merging two halves equals one pass.
        let (left, right) = xs.split_at(n / 2);
        let mut a = StateNormalizer::new(3);
        let mut b = StateNormalizer::new(3);
        left.iter().for_each(|x| a.update(x));
        right.iter().for_each(|x| b.update(x));
        a.merge(&b);
        for k in 0..3 {
            prop_assert!((a.mean[k] - norm.mean[k]).abs() < 1e-9);
            prop_assert!((a.variance()[k] - norm.variance()[k]).abs() < 1e-9 * (1.0 + norm.variance()[k]));
        }
    }

    #[test]
    fn chain_oracle_satisfies_bellman_identity(seed in any::<u64>(), n in 2usize..8, gamma in 0.0f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = EnvSpec::chain_mdp(n);
        let policy: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let features: Vec<[Vec<f64>; 2]> = (0..n)
            .map(|_| [0, 1].map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let psi = chain_sf_oracle(&spec, &policy, &features, gamma).unwrap();
        for s in 0..n {
            for a in 0..2 {
                let next = chain_next(n, s, a);
                for k in 0..2 {
                    let rhs = features[s][a][k] + gamma * psi[next][policy[next]][k];
                    prop_assert!((psi[s][a][k] - rhs).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn sampled_log_partition_agrees_with_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for d in [2usize, 4, 8, 16] {
        for r in [0.1, 0.5, 1.0, 2.0] {
            let mut w = vec![0.0; d];
            w[0] = r;
            let w = random_rotation(&w, &mut rng);
            let exact = log_partition(&w).unwrap();
            let mc = log_partition_mc(&w, 200_000, &mut rng).unwrap();
            assert!((mc.estimate - exact).abs() < 3.0 * mc.standard_error, "d={d} r={r}: {mc:?} vs {exact}");
        }
    }
}

#[test]
fn shell_conditioned_gaussian_is_von_mises_fisher() {
    // N(μ, σ²I) restricted to the sphere of radius ‖μ‖ has directions
    // distributed vMF(μ/‖μ‖, ‖μ‖/σ²); here κ = 4.
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mu = [0.0, 0.0, 1.0];
    let n = 100_000;
    let (cos, _) = sphere::shell_conditioned_cosines(&mu, 0.5, 0.02, n, &mut rng).unwrap();
    let edges: Vec<f64> = (0..=20).map(|i| -1.0 + 0.1 * i as f64).collect();
    let probs = sphere::vmf_cosine_bin_probs(3, 4.0, &edges).unwrap();
    let mut counts = vec![0f64; 20];
    for t in cos {
        counts[(((t + 1.0) / 0.1) as usize).min(19)] += 1.0;
    }
    // Pool sparse low-cosine bins until each expects at least 5 draws.
    let (mut obs, mut exp) = (Vec::new(), Vec::new());
    let (mut o, mut e) = (0.0, 0.0);
    for (c, p) in counts.iter().zip(&probs) {
        o += c;
        e += p * n as f64;
        if e >= 5.0 {
            obs.push(o);
            exp.push(e);
            (o, e) = (0.0, 0.0);
        }
    }
    *obs.last_mut().unwrap() += o;
    *exp.last_mut().unwrap() += e;
    let chi2: f64 = obs.iter().zip(&exp).map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = obs.len() - 1;
    // Upper 1% points of chi-square for the degrees of freedom that can occur.
    let critical = [0.0, 6.63, 9.21, 11.34, 13.28, 15.09, 16.81, 18.48, 20.09, 21.67, 23.21, 24.72, 26.22, 27.69, 29.14, 30.58, 32.0, 33.41, 34.81, 36.19][df];
    assert!(chi2 < critical, "chi2 {chi2} on {df} dof");
}
