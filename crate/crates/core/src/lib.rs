//! Planning, admission control and EDF simulation for periodic real-time
//! containers that share CPU slices.
//!
//! * [`model`]: task timing contracts, utilization, hyperperiod.
//! * [`admission`]: EDF feasibility, first-fit-decreasing slice
//!   partitioning, run-time fitting and risk-bounded admission.
//! * [`noise`]: firing-latency and run-time noise models with machine presets.
//! * [`sim`]: deterministic discrete-event EDF simulator.
//! * [`stats`]: report statistics, latency threshold rule, table rendering.
//! * [`config`], [`joblog`], [`testcase`]: experiment files, job logs and the
//!   four built-in workloads.

pub mod admission;
pub mod config;
pub mod exact;
pub mod joblog;
pub mod model;
pub mod noise;
pub mod sim;
pub mod stats;
pub mod testcase;

pub use admission::{
    admit_with_risk, edf_feasible, fit_runtime_distribution, miss_probability, partition,
    ResourceSlice, RiskPolicy, RuntimeDistribution, SliceAssignment,
};
pub use model::{hyperperiod, utilization, validate, Micros, TaskSet, TaskSpec};
pub use noise::{calibrate_profile, NoiseModel, ProfileName, SystemProfile};
pub use sim::{count_misses, pick_next, simulate, JobRecord, SimConfig, Trace};
pub use stats::{group_report, render_table, summarize, threshold_check, GroupReport, SummaryStats};

/// Stable 64-bit FNV-1a hash, used to derive per-slice and per-task random
/// streams from names.
pub(crate) fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
