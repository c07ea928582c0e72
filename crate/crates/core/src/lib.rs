//! Hierarchical spatial proximity reasoning for graph-based navigation.
//!
//! The crate builds region/object proximity knowledge bases from scene
//! graphs, generates synthetic indoor scenes, and runs navigation agents that
//! reason over chains of region types on an incrementally built topological
//! map. Metrics and ablation helpers evaluate batches of episodes.

pub mod error;
pub mod experiment;
pub mod fusion;
pub mod graph;
pub mod kb;
pub mod metrics;
pub mod par;
pub mod perception;
pub mod pipeline;
pub mod reasoner;
pub mod scene;
pub mod seed;
pub mod sim;
pub mod synth;
pub mod topo;

pub use error::{HsprError, Result};
