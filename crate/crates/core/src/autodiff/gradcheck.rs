use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamSet, Tape};
use crate::array::DenseArray;
use crate::error::Result;

const STEP: f64 = 1e-5;
const MAX_ENTRIES: usize = 10_000;
/// Relative errors use `max(|analytic|, |numeric|, FLOOR)` as denominator so
/// that near-zero gradients are compared on an absolute scale.
const FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub entries_checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compare backward-pass gradients of a scalar loss against central finite
/// differences. Above 10k entries a seeded random subsample is checked.
pub fn grad_check<F>(params: &ParamSet, loss_fn: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<Tape>,
{
    let mut tape = loss_fn(params)?;
    let grads = tape.backward(&DenseArray::scalar(1.0))?.for_params(params);

    let mut coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(i, (_, v))| (0..v.len()).map(move |k| (i, k)))
        .collect();
    if coords.len() > MAX_ENTRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(coords.len() as u64);
        let picked = sample(&mut rng, coords.len(), MAX_ENTRIES);
        coords = picked.iter().map(|j| coords[j]).collect();
    }

    let mut probe = params.clone();
    let mut max_rel_error = 0.0f64;
    for &(i, k) in &coords {
        let orig = probe.value(i).data()[k];
        probe.value_mut(i).data_mut()[k] = orig + STEP;
        let plus = loss_fn(&probe)?.output_scalar();
        probe.value_mut(i).data_mut()[k] = orig - STEP;
        let minus = loss_fn(&probe)?.output_scalar();
        probe.value_mut(i).data_mut()[k] = orig;

        let numeric = (plus - minus) / (2.0 * STEP);
        let analytic = grads[i].data()[k];
        let denom = analytic.abs().max(numeric.abs()).max(FLOOR);
        max_rel_error = max_rel_error.max((analytic - numeric).abs() / denom);
    }
    Ok(GradCheckReport {
        max_rel_error,
        entries_checked: coords.len(),
        tolerance,
    })
}
