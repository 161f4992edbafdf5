//! Temporal-graph learning with learnable neighbor sampling.
//!
//! The crate implements an event-stream graph store, neighbor-sampling
//! strategies (most-recent, uniform, fixed-rate expanded, and a learned
//! per-node expansion rate), fractional-index message interpolation with
//! hand-written adjoints, mean-aggregation embedding layers with an
//! explicit backward pass, an Adam optimizer with per-group learning
//! rates, and a training/evaluation harness for temporal edge prediction
//! and node classification.

pub mod commands;
pub mod config;
pub mod error;
pub mod graph_store;
pub mod interp;
pub mod linalg;
pub mod model;
pub mod numerics;
pub mod sampler;
pub mod training;

pub use error::{Error, Result};
