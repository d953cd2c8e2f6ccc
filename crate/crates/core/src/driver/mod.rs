//! The outer maxflow driver: binary search on the flow value, the
//! interior-point routing loop, rounding, the augmenting-path finish, and
//! the reference solvers used as correctness oracles.

pub mod dinic;
pub mod rounding;

pub use dinic::{augmenting_paths, flow_value, reference_maxflow, residual_cut};
pub use rounding::round_to_integral;
