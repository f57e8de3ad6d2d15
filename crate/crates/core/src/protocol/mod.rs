//! The collaborative estimation loop: configuration, scheduling, per-peer tests,
//! estimate combination and seeded runs.

mod config;
mod decision;
mod run;
mod world;

pub use config::{ClassAssignment, ClassMode, NoisePlan, Schedule, SimConfig, ThetaSchedule, VarianceMode};
pub use decision::{
    combine_estimate, decide_known, decide_known_with_z, decide_unknown, decide_unknown_with_z, welch_dof, Combination, PeerCursor,
};
pub use run::{run, run_seeds, RunResult, Trajectory};
pub use world::{ChannelBudget, World};
