//! Graph contrastive learning with mixture-model guided negative selection.
//!
//! The crate trains GNN encoders with InfoNCE-style objectives whose
//! negatives are reweighted or synthesized from the posterior of a
//! two-component Beta mixture fitted to similarity values.

pub mod augment;
pub mod cli;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod mixture;
pub mod nn;
pub mod objectives;
pub mod probe;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
