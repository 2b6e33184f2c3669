//! Online min-cost perfect matching with delays (MPMD) and its bipartite
//! variant (MBPMD).
//!
//! The crate contains:
//!
//! * [`metric`]: finite metrics, rooted weighted trees, instances and schedules.
//! * [`embed`]: randomized embedding of finite metrics into low-height trees.
//! * [`online_mpmd`] / [`online_mbpmd`]: the deterministic counter-based tree
//!   algorithms, driven by an exact continuous-time event loop, with the
//!   analysis quantities available as live checks and post-run diagnostics.
//! * [`offline_opt`]: exact and heuristic offline solvers.
//! * [`lowerbound_gen`]: the phased adversarial instance families on the line.
//! * [`harness`]: experiment driver and reports.

pub mod embed;
pub mod harness;
pub mod lowerbound_gen;
pub mod metric;
pub mod offline_opt;
pub mod online_mbpmd;
pub mod online_mpmd;
mod seeds;
mod sim;

pub use metric::{
    CostSemantics, FiniteMetric, Instance, MatchedPair, Polarity, ProblemKind, Request,
    RootedTree, Schedule,
};

/// Absolute tolerance used for distance and time comparisons.
pub const EPS: f64 = 1e-9;
