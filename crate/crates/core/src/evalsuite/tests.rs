use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_distr::StandardNormal;

use super::*;
use crate::autodiff::{Mlp, ParamSet};
use crate::repr::CriticKind;

fn identity_repr() -> ReprNet {
    let mut p = ParamSet::new();
    p.push("phi.0.w", DenseArray::from_vec(4, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
    p.push("phi.0.b", DenseArray::zeros(1, 2));
    ReprNet::from_mlp(Mlp::from_params("phi", p, Activation::Tanh).unwrap(), CriticKind::InnerProduct)
}

fn still() -> FnController<impl FnMut(&EnvState, &[f64]) -> Vec<f64>> {
    FnController(|_: &EnvState, _: &[f64]| vec![0.0, 0.0])
}

fn uniform_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DenseArray {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        data.extend(sphere::sample_uniform_sphere(d, rng).unwrap().into_vec());
    }
    DenseArray::from_vec(n, d, data).unwrap()
}

fn gaussian_rows(n: usize, d: usize, sigma: f64, rng: &mut ChaCha8Rng) -> DenseArray {
    DenseArray::from_vec(n, d, (0..n * d).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

#[test]
fn immobile_agent_covers_one_cell() {
    let spec = EnvSpec::point_mass_2d();
    let mut grid = CoverageGrid::new(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = measure_coverage(&mut still(), &spec, 1, 2, SkillMode::ContinuousVmfUniform, &mut grid, &mut rng).unwrap();
    assert_eq!(n, 1);
}

#[test]
fn straight_line_covers_expected_cells() {
    let mut grid = CoverageGrid::new(1.0);
    for i in 0..=19 {
        grid.visit([0.5 * i as f64, 0.0]);
    }
    assert_eq!(grid.count(), 10);
    // Revisiting the same path changes nothing.
    for i in 0..=19 {
        grid.visit([0.5 * i as f64, 0.0]);
    }
    assert_eq!(grid.count(), 10);
}

#[test]
fn pushing_rollout_covers_more_than_one_cell() {
    let spec = EnvSpec::point_mass_2d();
    let mut grid = CoverageGrid::new(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut push = FnController(|_: &EnvState, z: &[f64]| z.to_vec());
    let n = measure_coverage(&mut push, &spec, 4, 2, SkillMode::ContinuousVmfUniform, &mut grid, &mut rng).unwrap();
    assert!(n > 40);
}

#[test]
fn goal_skill_is_unit_and_scale_invariant() {
    assert_eq!(skill_towards(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
    assert!(skill_towards(&[1e-10, 0.0]).is_none());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let delta: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let z = skill_towards(&delta).unwrap();
        assert!((sphere::norm(&z) - 1.0).abs() < 1e-12);
        for c in [0.001, 0.5, 7.0, 1e6] {
            let scaled: Vec<f64> = delta.iter().map(|v| c * v).collect();
            let zs = skill_towards(&scaled).unwrap();
            for (a, b) in z.iter().zip(&zs) {
                assert!((a - b).abs() <= 2.0 * f64::EPSILON);
            }
        }
    }
}

#[test]
fn goal_skill_maximizes_critic_over_random_skills() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let delta = [1.3, -0.4, 2.2];
    let z = skill_towards(&delta).unwrap();
    let best = sphere::dot(&delta, &z);
    for _ in 0..10_000 {
        let cand = sphere::sample_uniform_sphere(3, &mut rng).unwrap();
        assert!(sphere::dot(&delta, cand.values()) <= best + 1e-12);
    }
}

#[test]
fn goal_inference_points_at_the_goal_and_falls_back() {
    let net = identity_repr();
    let norm = StateNormalizer::new(4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = infer_goal_skill(&net, &norm, &[0.0, 0.0, 0.0, 0.0], &[3.0, 4.0, 0.0, 0.0], &mut rng).unwrap();
    assert!(!g.fallback);
    assert_eq!(g.z.values(), &[0.6, 0.8]);
    let g = infer_goal_skill(&net, &norm, &[1.0, 1.0, 0.0, 0.0], &[1.0, 1.0, 0.0, 0.0], &mut rng).unwrap();
    assert!(g.fallback);
    assert!((sphere::norm(g.z.values()) - 1.0).abs() < 1e-12);
}

#[test]
fn staying_fraction_extremes() {
    let spec = EnvSpec::point_mass_2d();
    let net = identity_repr();
    let norm = StateNormalizer::new(4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let home = GoalTask::new(&spec, [0.0, 0.0], 1.0).unwrap();
    let out = staying_time_fraction(&mut still(), &net, &norm, &spec, &home, 25, &mut rng).unwrap();
    assert_eq!(out.fraction, 1.0);
    let far = GoalTask::new(&spec, [1e6, 0.0], 0.1).unwrap();
    let out = staying_time_fraction(&mut still(), &net, &norm, &spec, &far, 25, &mut rng).unwrap();
    assert_eq!(out.fraction, 0.0);
    assert!(GoalTask::new(&spec, [0.0, 0.0], 0.0).is_err());
}

#[test]
fn goal_sampling_respects_range() {
    let spec = EnvSpec::point_mass_2d();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let goals = sample_goals(&spec, 50, 10.0, 1.0, &mut rng).unwrap();
    assert_eq!(goals.len(), 50);
    for g in &goals {
        assert!(g.goal.iter().all(|v| v.abs() <= 10.0));
        assert_eq!(g.goal_obs, vec![g.goal[0], g.goal[1], 0.0, 0.0]);
    }
}

#[test]
fn diagnostics_accept_isotropic_uniform_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z = uniform_rows(10_000, 2, &mut rng);
    let noise = gaussian_rows(10_000, 2, 0.1, &mut rng);
    let deltas = z.zip_map(&noise, |a, b| a + b);
    let (rec, samples) = repr_diagnostics(&deltas, &z).unwrap();
    assert!(rec.residual_variance_spread < 0.02);
    assert!(rec.residual_max_offdiag < 0.02);
    assert!(rec.isotropic);
    assert!(rec.mean_resultant_length < 0.05);
    assert!(rec.uniform);
    assert!((rec.sq_norm_mean - 1.02).abs() < 0.02);
    assert_eq!(samples.sq_norms.len(), 10_000);
    assert_eq!(rec.sq_norm_histogram.counts.iter().sum::<u64>(), 10_000);
}

#[test]
fn diagnostics_flag_concentrated_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // vMF(κ = 8) on the circle by rejection on the angle.
    let mut data = Vec::new();
    while data.len() < 2 * 10_000 {
        let t = rng.random_range(-core::f64::consts::PI..core::f64::consts::PI);
        if rng.random::<f64>() < (8.0 * (t.cos() - 1.0)).exp() {
            data.extend([t.cos(), t.sin()]);
        }
    }
    let deltas = DenseArray::from_vec(10_000, 2, data).unwrap();
    let z = uniform_rows(10_000, 2, &mut rng);
    let (rec, _) = repr_diagnostics(&deltas, &z).unwrap();
    assert!(rec.mean_resultant_length > 0.3);
    assert!(!rec.uniform);
}

#[test]
fn diagnostics_resultant_length_edge_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let z = uniform_rows(500, 2, &mut rng);
    let fixed = DenseArray::from_vec(500, 2, [0.6, 0.8].repeat(500)).unwrap();
    let (rec, _) = repr_diagnostics(&fixed, &z).unwrap();
    assert!((rec.mean_resultant_length - 1.0).abs() < 1e-12);

    let g = gaussian_rows(10_000, 2, 1.0, &mut rng);
    let z = uniform_rows(10_000, 2, &mut rng);
    let (rec, _) = repr_diagnostics(&g, &z).unwrap();
    assert!(rec.mean_resultant_length < 0.05);

    let few = gaussian_rows(99, 2, 1.0, &mut rng);
    assert!(matches!(
        repr_diagnostics(&few, &few),
        Err(Error::InsufficientData { needed: 100, found: 99 })
    ));
}

#[test]
fn log_partition_slope_brackets_quadratic_coefficient() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ws = sample_ball(2000, 2, 1.2, &mut rng).unwrap();
    let fit = log_partition_slope(&ws).unwrap();
    assert!((0.21..=0.26).contains(&fit.slope), "{fit:?}");
    assert!(fit.intercept.abs() < 0.02);
}

#[test]
fn line_fit_recovers_exact_line() {
    let xs = [0.0, 1.0, 2.0, 3.0];
    let ys = [1.0, 3.0, 5.0, 7.0];
    let fit = fit_line(&xs, &ys).unwrap();
    assert!((fit.slope - 2.0).abs() < 1e-12 && (fit.intercept - 1.0).abs() < 1e-12);
    assert!(fit_line(&[1.0, 1.0], &[0.0, 2.0]).is_err());
}

#[test]
fn oracle_check_is_zero_for_exact_match() {
    let spec = EnvSpec::chain_mdp(4);
    let mut psi = SuccessorNet::new(4, 1, 2, &[3], Activation::Tanh, 0);
    psi.online.params_mut().values_mut().for_each(|v| v.data_mut().fill(0.0));
    let features: Vec<[Vec<f64>; 2]> = (0..4).map(|_| [vec![0.0, 0.0], vec![0.0, 0.0]]).collect();
    let err = sf_oracle_check(&psi, &spec, &[1, 1, 0, 1], &features, &[1.0, 0.0], 0.9).unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn td_fit_matches_chain_oracle() {
    let spec = EnvSpec::chain_mdp(5);
    let embedding: Vec<Vec<f64>> = (0..5).map(|k| vec![0.1 * k as f64, 0.05 * (k as f64 - 2.0).abs()]).collect();
    let features = chain_delta_features(&embedding);
    let policy = [1, 1, 0, 1, 1];
    let z = [0.6, 0.8];
    let untrained = SuccessorNet::new(5, 1, 2, &[32], Activation::Tanh, 0);
    assert!(sf_oracle_check(&untrained, &spec, &policy, &features, &z, 0.9).unwrap() > 0.0);
    let psi = fit_chain_successor_features(&spec, &policy, &features, &z, &ChainFitConfig::default()).unwrap();
    let err = sf_oracle_check(&psi, &spec, &policy, &features, &z, 0.9).unwrap();
    assert!(err < 0.05, "{err}");
}

#[test]
fn histogram_bins_every_sample_in_range() {
    let h = Histogram::from_samples(&[0.0, 0.5, 1.0, 1.0, 2.5], 0.0, 1.0, 2);
    assert_eq!(h.counts, vec![1, 3]);
}

#[test]
fn eval_streams_differ_by_iteration() {
    let a: u64 = eval_rng(1, 0).random();
    let b: u64 = eval_rng(1, 1).random();
    let c: u64 = eval_rng(1, 0).random();
    assert_ne!(a, b);
    assert_eq!(a, c);
}
