//! Sparse distributed estimation over heterogeneous diffusion networks.
//!
//! A subset of nodes runs zero-attracting LMS while the rest run plain LMS;
//! all nodes combine their neighbors' intermediate estimates after every
//! local update. The crate simulates such networks, evaluates the
//! closed-form steady-state network MSD, and sweeps the number of
//! sparsity-aware nodes against the attraction coefficient.

// `!(x > 0.0)` deliberately rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod network;
pub mod rng;
pub mod theory;

pub use diffusion::{SimulationConfig, SystemModel};
pub use error::{Error, Result};
pub use experiment::{EnsembleResult, MsdTrace, SweepResult};
pub use network::{CombinationMatrix, CombinerRule, SparsityProfile, Topology};
pub use theory::{MomentEstimates, TheoryContext, TheoryReport};
