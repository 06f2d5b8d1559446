//! Tabular hierarchical imitation learning by option-occupancy matching.
//!
//! Everything here is exact and finite: policies are probability tables,
//! occupancy measures come from dense linear solves, and option inference is
//! dynamic programming over a hidden Markov chain of options.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adversarial;
pub mod algorithms;
pub mod envs;
pub mod error;
pub mod hrl;
pub mod inference;
pub mod linalg;
pub mod math;
pub mod model;
pub mod occupancy;
pub mod rng;

pub use error::{Error, Result};
pub use model::{
    full_from_one_step, marginal_trajectory_log_prob, one_step_from_full, sample_trajectory,
    trajectory_log_prob, FlatPolicy, FullOptionModel, HierPolicy, OptionSpace, OptionTrajectory,
    TabularMdp, Trajectory,
};
pub use occupancy::{
    compute_occupancy, expert_option_occupancy, js_divergence, marginalize, recover_policy,
    FlatOccupancy, OptionOccupancy,
};
