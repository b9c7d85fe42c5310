//! Soft-label training objectives and their effect on out-of-distribution
//! detection, on a self-contained CPU training stack.
//!
//! The crate provides:
//! - a dense-tensor reverse-mode autodiff core ([`graph::Graph`]),
//! - a small CNN classifier ([`nn`]),
//! - the soft-target loss family: label smoothing, knowledge distillation and
//!   outlier exposure ([`soft_targets`]),
//! - byte-exact IDX / CIFAR-10 loaders plus deterministic synthetic datasets
//!   ([`data`]),
//! - an SGD training loop with checkpoint persistence ([`train`]),
//! - OOD scoring and evaluation measures: accuracy, ECE, AUROC ([`metrics`]),
//! - experiment pipelines and machine-readable reports ([`experiments`]),
//! - a JSON-configured CLI ([`cli`]).

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod soft_targets;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use tensor::{Scalar, Tensor};
