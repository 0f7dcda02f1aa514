//! The four built-in container workloads.
//!
//! | case | containers                              | scale |
//! |------|-----------------------------------------|-------|
//! | 1    | n × 900 µs every 10 ms                  | 4–10  |
//! | 2    | n × 2.5 ms every 5 ms                   | 1–2   |
//! | 3    | 2.5/5 ms, 3/9 ms, 0.9/10 ms (first n)   | 1–3   |
//! | 4    | n × 10 ms every 100 ms                  | 4–10  |
//!
//! Run-time equals WCET and deadlines equal periods throughout. All
//! containers share one full CPU slice.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;

use log::warn;
use thiserror::Error;

use crate::admission::{edf_feasible, partition, AdmissionError, Feasibility, ResourceSlice, SliceAssignment};
use crate::config::{ConfigError, ExperimentConfig, ProfileSpec};
use crate::model::{Micros, TaskSet, TaskSpec};
use crate::noise::{ProfileName, SystemProfile};
use crate::sim::{count_misses, simulate, MissCounts, SimConfig, SimError, Trace};
use crate::stats::{group_report, GroupReport, TaskRuntimes};

/// 60 simulated seconds.
pub const DEFAULT_DURATION: Micros = 60_000_000;

/// Dispatch granularity used by the built-in workloads.
pub const BUILTIN_DISPATCH_GRANULARITY: Micros = 0;

#[derive(Debug, Error)]
pub enum TestCaseError {
    #[error("unknown test case {0} (expected 1-4)")]
    UnknownCase(u8),
    #[error("unknown system profile `{0}`")]
    UnknownProfile(String),
    #[error("test case {case} is defined for {} to {} containers, got {scale}", .range.start(), .range.end())]
    ScaleOutOfRange {
        case: TestCase,
        scale: usize,
        range: RangeInclusive<usize>,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Admission(#[from] AdmissionError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TestCase {
    /// Many short jobs, homogeneous, U = 0.09 per container.
    LowerBound,
    /// Two containers at half a CPU each.
    UpperBound,
    /// Mixed periods.
    Diversity,
    /// Flow-control application: 10 ms every 100 ms.
    Application,
}

impl TestCase {
    pub const ALL: [TestCase; 4] = [
        TestCase::LowerBound,
        TestCase::UpperBound,
        TestCase::Diversity,
        TestCase::Application,
    ];

    pub fn from_number(n: u8) -> Result<Self, TestCaseError> {
        match n {
            1 => Ok(TestCase::LowerBound),
            2 => Ok(TestCase::UpperBound),
            3 => Ok(TestCase::Diversity),
            4 => Ok(TestCase::Application),
            other => Err(TestCaseError::UnknownCase(other)),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            TestCase::LowerBound => 1,
            TestCase::UpperBound => 2,
            TestCase::Diversity => 3,
            TestCase::Application => 4,
        }
    }

    pub fn scales(self) -> RangeInclusive<usize> {
        match self {
            TestCase::LowerBound | TestCase::Application => 4..=10,
            TestCase::UpperBound => 1..=2,
            TestCase::Diversity => 1..=3,
        }
    }

    pub fn max_scale(self) -> usize {
        *self.scales().end()
    }

    /// `(period, wcet)` of the i-th container.
    fn container(self, i: usize) -> (Micros, Micros) {
        match self {
            TestCase::LowerBound => (10_000, 900),
            TestCase::UpperBound => (5000, 2500),
            // Adding the 3/9 ms container before the 0.9/10 ms one keeps
            // two units below 90 % load.
            TestCase::Diversity => [(5000, 2500), (9000, 3000), (10_000, 900)][i],
            TestCase::Application => (100_000, 10_000),
        }
    }

    pub fn tasks(self, scale: usize) -> Result<TaskSet, TestCaseError> {
        let range = self.scales();
        if !range.contains(&scale) {
            return Err(TestCaseError::ScaleOutOfRange {
                case: self,
                scale,
                range,
            });
        }
        let tasks = (0..scale)
            .map(|i| {
                let (period, wcet) = self.container(i);
                TaskSpec::implicit(format!("c{i}"), period, wcet, wcet).expect("built-in task is valid")
            })
            .collect();
        Ok(TaskSet::new(tasks).expect("built-in set is valid"))
    }

    pub fn label(scale: usize) -> String {
        if scale == 1 {
            "1 unit".to_string()
        } else {
            format!("{scale} units")
        }
    }
}

impl fmt::Display for TestCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// `case1` … `case4` at full scale on the C5 profile.
pub fn builtin_config(name: &str) -> Option<ExperimentConfig> {
    let n: u8 = name.strip_prefix("case")?.parse().ok()?;
    let case = TestCase::from_number(n).ok()?;
    Some(experiment_config(case, case.max_scale(), ProfileName::C5, DEFAULT_DURATION, 0).expect("in range"))
}

pub fn experiment_config(
    case: TestCase,
    scale: usize,
    system: ProfileName,
    duration: Micros,
    seed: u64,
) -> Result<ExperimentConfig, TestCaseError> {
    if SystemProfile::preset(&system).is_none() {
        return Err(TestCaseError::UnknownProfile(system.to_string()));
    }
    Ok(ExperimentConfig {
        tasks: case.tasks(scale)?,
        slices: vec![ResourceSlice::full("s0")],
        profile: ProfileSpec::Preset(system),
        duration,
        seed,
        risk: None,
        release_offsets: BTreeMap::new(),
        dispatch_granularity: BUILTIN_DISPATCH_GRANULARITY,
    })
}

/// Observed run-times per container, in task-set order.
pub fn task_runtimes(trace: &Trace, tasks: &TaskSet) -> Vec<TaskRuntimes> {
    tasks
        .iter()
        .map(|t| match trace.task(&t.id) {
            Some(tt) => TaskRuntimes {
                task_id: t.id.clone(),
                runtimes: tt.records.iter().map(|r| r.observed_runtime()).collect(),
                misses: tt.misses(),
            },
            None => TaskRuntimes {
                task_id: t.id.clone(),
                runtimes: Vec::new(),
                misses: 0,
            },
        })
        .collect()
}

pub fn report_trace(label: &str, system: &str, trace: &Trace, tasks: &TaskSet) -> GroupReport {
    group_report(label, system, &task_runtimes(trace, tasks))
}

#[derive(Debug, Clone)]
pub struct PlannedRun {
    pub assignment: SliceAssignment,
    pub feasibility: Vec<Feasibility>,
    /// Partitioning failed and every task was put on the first slice.
    pub bypassed: bool,
}

/// Partitions the configuration's tasks, falling back to a single
/// overloaded slice when they do not fit.
pub fn plan(config: &ExperimentConfig) -> Result<PlannedRun, AdmissionError> {
    let (assignment, bypassed) = match partition(&config.tasks, &config.slices) {
        Ok(a) => (a, false),
        Err(AdmissionError::Infeasible { unplaced }) => {
            warn!(
                "admission rejects {}; simulating every task on slice `{}`",
                unplaced.join(", "),
                config.slices[0].id
            );
            (SliceAssignment::single(config.slices[0].clone(), &config.tasks), true)
        }
        Err(e) => return Err(e),
    };
    let feasibility = assignment
        .slices()
        .iter()
        .filter_map(|load| {
            config
                .tasks
                .subset(load.tasks.iter().map(String::as_str))
                .map(|set| edf_feasible(&set, &load.slice))
        })
        .collect();
    Ok(PlannedRun {
        assignment,
        feasibility,
        bypassed,
    })
}

pub fn sim_config(config: &ExperimentConfig, assignment: SliceAssignment) -> Result<SimConfig, ConfigError> {
    let profile = config.profile.build()?;
    let mut sim = SimConfig::new(assignment, profile, config.duration, config.seed);
    sim.release_offsets = config.release_offsets.clone().into_iter().collect();
    sim.dispatch_granularity = config.dispatch_granularity;
    Ok(sim)
}

#[derive(Debug, Clone)]
pub struct TestCaseRun {
    pub case: TestCase,
    pub scale: usize,
    pub config: ExperimentConfig,
    pub plan: PlannedRun,
    pub trace: Trace,
    pub misses: MissCounts,
    pub report: GroupReport,
}

pub fn run_testcase(
    case: TestCase,
    system: ProfileName,
    scale: usize,
    duration: Micros,
    seed: u64,
) -> Result<TestCaseRun, TestCaseError> {
    let config = experiment_config(case, scale, system.clone(), duration, seed)?;
    run_experiment(case, scale, config)
}

/// Runs a built-in workload from an already built configuration, e.g. one
/// with a different noise profile.
pub fn run_experiment(case: TestCase, scale: usize, config: ExperimentConfig) -> Result<TestCaseRun, TestCaseError> {
    let plan = plan(&config)?;
    let sim = sim_config(&config, plan.assignment.clone())?;
    let trace = simulate(&sim, &config.tasks)?;
    let misses = count_misses(&trace);
    let report = report_trace(&TestCase::label(scale), &config.profile.name(), &trace, &config.tasks);
    Ok(TestCaseRun {
        case,
        scale,
        config,
        plan,
        trace,
        misses,
        report,
    })
}

/// One report per (scale, system), scales ascending.
pub fn run_batch(
    case: TestCase,
    systems: &[ProfileName],
    duration: Micros,
    seed: u64,
) -> Result<Vec<GroupReport>, TestCaseError> {
    let mut reports = Vec::new();
    for scale in case.scales() {
        for system in systems {
            reports.push(run_testcase(case, system.clone(), scale, duration, seed)?.report);
        }
    }
    Ok(reports)
}
