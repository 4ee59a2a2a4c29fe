//! Risk-directed generative N-k contingency screening.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`] and [`matpower`]: network cases, operating states and the bus-branch graph.
//! - [`powerflow`]: Newton-Raphson AC power flow and the post-contingency severity index.
//! - [`contingency`]: outage-pattern algebra, enumeration, sampling and projection.
//! - [`surrogate`]: the edge-varying GNN risk estimator trained on N-1 labels.
//! - [`diffusion`]: the state-conditioned denoising generator with risk guidance.
//! - [`coverage`]: capture-probability bounds, budget sizing and the coverage theorem.
//! - [`pipeline`]: offline/online orchestration, baselines and evaluation tables.

pub mod cases;
pub mod contingency;
pub mod coverage;
pub mod diffusion;
pub mod error;
pub mod grid;
pub mod matpower;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod powerflow;
pub mod rng;
pub mod surrogate;

pub use contingency::{ContingencyVector, FeasibleSetSpec};
pub use error::{Error, Result};
pub use grid::{BusBranchGraph, NetworkCase, OperatingState};
pub use powerflow::{PowerFlowSolution, SeverityConfig, SolverOptions};
