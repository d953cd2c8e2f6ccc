//! Divergence-maximization interior-point maxflow.
//!
//! The solver advances a weighted central path by augmenting with flows
//! that minimize a quadratically-extended Bregman divergence of the
//! logarithmic barrier, computes budgeted weight changes from the
//! minimizer, and finishes combinatorially. Subproblems reduce through
//! iterative refinement to smoothed quadratic-plus-power flow instances
//! solved with Laplacian systems. A Dinic implementation and brute-force
//! convex oracles validate every stage.

pub mod barrier;
pub mod driver;
pub mod error;
pub mod graph;
pub mod ipm;
pub mod laplacian;
pub mod refinement;
pub mod testkit;

pub use error::{Error, Result};
pub use graph::{parse_dimacs, random_instance, reduce_directed_to_undirected, write_dimacs, Graph};
