//! Contrastive successor features for unsupervised skill discovery.
//!
//! `no_std` (with `alloc`) core: a small reverse-mode autodiff engine,
//! hypersphere analytics, reward-free toy environments, the contrastive
//! and dual-gradient representation objectives, the successor-feature
//! actor-critic, the training loop, and evaluation protocols. File formats,
//! configuration parsing and the command line live in the `csf` crate.
#![no_std]

extern crate alloc;

pub mod array;
pub mod autodiff;
pub mod envs;
pub mod error;
pub mod evalsuite;
pub mod linegraph;
pub mod repr;
pub mod sf_policy;
pub mod sphere;
pub mod trainer;

pub use array::DenseArray;
pub use error::{Error, Result};
