//! Representation fits on a fixed line-graph dataset with a tabular φ.
//!
//! Nodes `0..n` sit on a line. Each transition draws a node and a skill
//! uniform on the circle and moves right when `z₁ > 0`, left otherwise;
//! moves off either end stay put. Both representation objectives have
//! closed-form optima here, which makes them checkable.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::DenseArray;
use crate::autodiff::{adam_step, Activation, AdamConfig, AdamState, Mlp, ParamSet};
use crate::error::Result;
use crate::repr::{csf_repr_loss, metra_repr_loss, CriticKind, DualVariable, Negatives, PairBatch, ReprNet, ReprObjective};
use crate::sphere;

/// `samples` transitions on a line of `nodes` nodes, skills in `d = 2`.
pub fn line_graph_dataset(nodes: usize, samples: usize, seed: u64) -> Result<PairBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Vec::with_capacity(samples * nodes);
    let mut s_next = Vec::with_capacity(samples * nodes);
    let mut z = Vec::with_capacity(samples * 2);
    for _ in 0..samples {
        let node = rng.random_range(0..nodes);
        let skill = sphere::sample_uniform_sphere(2, &mut rng)?;
        let next = if skill.values()[0] > 0.0 {
            (node + 1).min(nodes - 1)
        } else {
            node.saturating_sub(1)
        };
        let mut a = vec![0.0; nodes];
        a[node] = 1.0;
        let mut b = vec![0.0; nodes];
        b[next] = 1.0;
        s.extend(a);
        s_next.extend(b);
        z.extend_from_slice(skill.values());
    }
    Ok(PairBatch {
        s: DenseArray::from_vec(samples, nodes, s)?,
        s_next: DenseArray::from_vec(samples, nodes, s_next)?,
        z: DenseArray::from_vec(samples, 2, z)?,
    })
}

/// A linear map on one-hot inputs: one free embedding per node.
pub fn tabular_repr(nodes: usize, skill_dim: usize, seed: u64) -> ReprNet {
    let mut params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = (0..nodes * skill_dim).map(|_| rng.random_range(-0.1..0.1)).collect();
    params.push("phi.0.w", DenseArray::from_vec(nodes, skill_dim, w).expect("sized"));
    params.push("phi.0.b", DenseArray::zeros(1, skill_dim));
    let mlp = Mlp::from_params("phi", params, Activation::Tanh).expect("single layer");
    ReprNet::from_mlp(mlp, CriticKind::InnerProduct)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineFitConfig {
    pub objective: ReprObjective,
    pub steps: usize,
    pub lr: f64,
    pub dual: DualVariable,
    pub xi: f64,
    pub negatives: usize,
    pub seed: u64,
}

impl Default for LineFitConfig {
    fn default() -> Self {
        Self {
            objective: ReprObjective::MetraDual,
            steps: 2500,
            lr: 1e-2,
            dual: DualVariable {
                lambda: 1.0,
                lr: 1e-2,
                slack: 1e-3,
            },
            xi: 5.0,
            negatives: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineFitReport {
    pub net: ReprNet,
    /// `E‖Δφ‖²` over the dataset.
    pub e_sq_norm: f64,
    /// `E[Δφᵀz]` over the dataset.
    pub mean_score: f64,
    /// `E[Δφᵀz] / √E‖Δφ‖²`, comparable across objectives whose optimal
    /// representations differ only in scale.
    pub normalized_score: f64,
    pub lambda: f64,
}

/// Full-batch optimization of the chosen objective.
pub fn fit_line_graph(data: &PairBatch, config: &LineFitConfig) -> Result<LineFitReport> {
    let nodes = data.s.cols();
    let mut net = tabular_repr(nodes, 2, config.seed);
    let mut adam = AdamState::new(
        net.params(),
        AdamConfig {
            lr: config.lr,
            max_grad_norm: None,
            ..AdamConfig::default()
        },
    );
    let mut dual = config.dual;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xa5a5);
    for _ in 0..config.steps {
        let mut tape = match config.objective {
            ReprObjective::MetraDual => {
                let step = metra_repr_loss(&net, &dual, data)?;
                dual.lambda = step.next_lambda;
                step.tape
            }
            ReprObjective::Csf => {
                let mut zs = Vec::with_capacity(config.negatives * 2);
                for _ in 0..config.negatives {
                    zs.extend(sphere::sample_uniform_sphere(2, &mut rng)?.into_vec());
                }
                let negs = DenseArray::from_vec(config.negatives, 2, zs)?;
                csf_repr_loss(&net, data, Negatives::Fresh(&negs), config.xi)?
            }
        };
        let grads = tape.backward(&DenseArray::scalar(1.0))?.for_params(net.params());
        adam_step(net.params_mut(), &grads, &mut adam)?;
    }
    let g = net.pair_features(&data.s, &data.s_next)?;
    let n = data.len() as f64;
    let e_sq_norm = g.sum_sq() / n;
    let mean_score = g.zip_map(&data.z, |a, b| a * b).sum() / n;
    Ok(LineFitReport {
        net,
        e_sq_norm,
        mean_score,
        normalized_score: mean_score / e_sq_norm.sqrt(),
        lambda: dual.lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_moves_follow_the_skill() {
        let data = line_graph_dataset(9, 500, 1).unwrap();
        for i in 0..data.len() {
            let from = data.s.row(i).iter().position(|&v| v == 1.0).unwrap();
            let to = data.s_next.row(i).iter().position(|&v| v == 1.0).unwrap();
            let expected = if data.z.get(i, 0) > 0.0 {
                (from + 1).min(8)
            } else {
                from.saturating_sub(1)
            };
            assert_eq!(to, expected);
        }
    }

    #[test]
    fn dual_objective_meets_its_constraint() {
        let data = line_graph_dataset(9, 500, 3).unwrap();
        let report = fit_line_graph(&data, &LineFitConfig::default()).unwrap();
        assert!((0.9..=1.1).contains(&report.e_sq_norm), "{}", report.e_sq_norm);
        assert!(report.lambda >= 0.0);
    }

    #[test]
    fn both_objectives_agree_up_to_scale() {
        let data = line_graph_dataset(9, 500, 4).unwrap();
        let metra = fit_line_graph(&data, &LineFitConfig::default()).unwrap();
        let csf = fit_line_graph(
            &data,
            &LineFitConfig {
                objective: ReprObjective::Csf,
                ..LineFitConfig::default()
            },
        )
        .unwrap();
        let rel = (csf.normalized_score - metra.normalized_score).abs() / metra.normalized_score;
        assert!(rel < 0.15, "csf {} metra {}", csf.normalized_score, metra.normalized_score);
    }
}
