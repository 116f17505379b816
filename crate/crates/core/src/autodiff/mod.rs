//! Minimal reverse-mode automatic differentiation over [`DenseArray`]s.
//!
//! Enough machinery for small MLPs, their losses, and Adam: a [`Tape`]
//! recording primitive ops, named parameter collections, and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod mlp;
mod tape;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use mlp::{forward_mlp, Activation, BoundMlp, Mlp};
pub use tape::{logsumexp, logsumexp_rows, Gradients, Tape, Var};

use alloc::string::String;
use alloc::vec::Vec;

use crate::array::DenseArray;

/// Ordered, named collection of parameter arrays for one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, DenseArray)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: DenseArray) {
        self.entries.push((name.into(), value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseArray)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut DenseArray> {
        self.entries.iter_mut().map(|(_, v)| v)
    }

    pub fn get(&self, name: &str) -> Option<&DenseArray> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DenseArray> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
    }

    pub fn value(&self, i: usize) -> &DenseArray {
        &self.entries[i].1
    }

    pub fn value_mut(&mut self, i: usize) -> &mut DenseArray {
        &mut self.entries[i].1
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }

    /// `self ← (1 − τ)·self + τ·source`, entrywise.
    pub fn lerp_towards(&mut self, source: &ParamSet, tau: f64) {
        for ((_, t), (_, s)) in self.entries.iter_mut().zip(&source.entries) {
            for (a, b) in t.data_mut().iter_mut().zip(s.data()) {
                *a = (1.0 - tau) * *a + tau * b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, v)| v.is_finite())
    }
}
