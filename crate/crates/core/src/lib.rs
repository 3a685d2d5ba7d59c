//! Joint search over graph neural network structures and accelerator
//! configurations.
//!
//! * [`graph`]: sparse matrices, dataset loaders and synthetic graphs.
//! * [`supernet`]: the weight-sharing GNN supernet and its training.
//! * [`parser`]: subnetworks lowered to matrix-product workloads.
//! * [`accel`]: the accelerator template, its search space and validation.
//! * [`sim`]: the analytic cycle and traffic model.
//! * [`search`]: evolutionary search and Pareto reporting.

pub mod accel;
pub mod error;
pub mod graph;
pub mod parser;
pub mod search;
pub mod sim;
pub mod supernet;

pub use error::{Error, Result};
