//! Static EDF admission, slice partitioning and risk-bounded admission.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::model::{density, utilization, Micros, TaskSet, TaskSpec};
use crate::noise::{NoiseDist, NoiseModel};
use crate::stats::summarize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdmissionError {
    #[error("slice `{id}`: capacity {capacity} outside (0, 1]")]
    InvalidCapacity { id: String, capacity: f64 },
    #[error("no resource slices given")]
    NoSlices,
    #[error("infeasible: cannot place {}", .unplaced.join(", "))]
    Infeasible { unplaced: Vec<String> },
    #[error("need at least 2 run-time samples, got {0}")]
    InsufficientSamples(usize),
    #[error("no run-time distribution for task `{0}`")]
    MissingDistribution(String),
    #[error("invalid risk policy: {0} outside [0, 1]")]
    InvalidPolicy(f64),
    #[error("invalid run-time distribution: {0}")]
    InvalidDistribution(String),
}

/// A fixed share of one CPU reserved for a group of containers.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceSlice {
    pub id: String,
    pub capacity: f64,
}

impl ResourceSlice {
    pub fn new(id: impl Into<String>, capacity: f64) -> Result<Self, AdmissionError> {
        let id = id.into();
        if !(capacity > 0.0 && capacity <= 1.0) {
            return Err(AdmissionError::InvalidCapacity { id, capacity });
        }
        Ok(ResourceSlice { id, capacity })
    }

    pub fn full(id: impl Into<String>) -> Self {
        ResourceSlice {
            id: id.into(),
            capacity: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject,
    /// The sufficient density test failed although utilization fits; the
    /// set may still be schedulable.
    InconclusiveReject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeasibilityTest {
    /// Exact for implicit deadlines.
    Utilization,
    /// Sufficient only, used when some deadline is shorter than its period.
    Density,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub verdict: Verdict,
    pub test: FeasibilityTest,
    pub utilization: f64,
    pub density: f64,
    pub capacity: f64,
}

impl Feasibility {
    pub fn accepted(&self) -> bool {
        self.verdict == Verdict::Accept
    }
}

impl fmt::Display for Feasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (name, load) = match self.test {
            FeasibilityTest::Utilization => ("utilization", self.utilization),
            FeasibilityTest::Density => ("density", self.density),
        };
        match self.verdict {
            Verdict::Accept => write!(f, "accept: {name} {load:.6} <= capacity {}", self.capacity),
            Verdict::Reject => write!(f, "reject: {name} {load:.6} > capacity {}", self.capacity),
            Verdict::InconclusiveReject => write!(
                f,
                "inconclusive-reject: density {:.6} > capacity {} but utilization {:.6} fits",
                self.density, self.capacity, self.utilization
            ),
        }
    }
}

/// Uniprocessor EDF feasibility of `set` on `slice`.
pub fn edf_feasible(set: &TaskSet, slice: &ResourceSlice) -> Feasibility {
    let u = utilization(set);
    let dens = density(set);
    let implicit = set.iter().all(TaskSpec::has_implicit_deadline);
    let (test, verdict) = if implicit {
        let v = if u <= slice.capacity { Verdict::Accept } else { Verdict::Reject };
        (FeasibilityTest::Utilization, v)
    } else if dens <= slice.capacity {
        (FeasibilityTest::Density, Verdict::Accept)
    } else if u <= slice.capacity {
        (FeasibilityTest::Density, Verdict::InconclusiveReject)
    } else {
        (FeasibilityTest::Density, Verdict::Reject)
    };
    Feasibility {
        verdict,
        test,
        utilization: u,
        density: dens,
        capacity: slice.capacity,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceLoad {
    pub slice: ResourceSlice,
    pub tasks: Vec<String>,
    pub utilization: f64,
}

/// Containers mapped onto CPU slices.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceAssignment {
    slices: Vec<SliceLoad>,
}

impl SliceAssignment {
    /// Builds an assignment without admission checks, e.g. to simulate a
    /// deliberately overloaded slice. Every task in `set` must appear exactly
    /// once; unknown ids are kept and reported by the simulator.
    pub fn unchecked(slices: Vec<(ResourceSlice, Vec<String>)>, set: &TaskSet) -> Self {
        let slices = slices
            .into_iter()
            .map(|(slice, tasks)| {
                let utilization = set
                    .subset(tasks.iter().map(String::as_str))
                    .map(|s| utilization(&s))
                    .unwrap_or(0.0);
                SliceLoad {
                    slice,
                    tasks,
                    utilization,
                }
            })
            .collect();
        SliceAssignment { slices }
    }

    /// All tasks of `set` on one slice.
    pub fn single(slice: ResourceSlice, set: &TaskSet) -> Self {
        let ids = set.iter().map(|t| t.id.clone()).collect();
        Self::unchecked(vec![(slice, ids)], set)
    }

    pub fn slices(&self) -> &[SliceLoad] {
        &self.slices
    }

    pub fn slice_of(&self, task_id: &str) -> Option<&ResourceSlice> {
        self.slices
            .iter()
            .find(|s| s.tasks.iter().any(|t| t == task_id))
            .map(|s| &s.slice)
    }

    /// True if no slice is loaded beyond its capacity.
    pub fn within_capacity(&self) -> bool {
        self.slices.iter().all(|s| s.utilization <= s.slice.capacity)
    }
}

/// Orders by utilization, descending, then by id. Compares `w_a * p_b`
/// against `w_b * p_a` so equal ratios tie exactly.
fn by_decreasing_utilization(a: &TaskSpec, b: &TaskSpec) -> Ordering {
    let lhs = a.wcet as u128 * b.period as u128;
    let rhs = b.wcet as u128 * a.period as u128;
    rhs.cmp(&lhs).then_with(|| a.id.cmp(&b.id))
}

/// First-fit decreasing: tasks in decreasing utilization (ties by id), each
/// onto the first slice that still passes [`edf_feasible`].
pub fn partition(set: &TaskSet, slices: &[ResourceSlice]) -> Result<SliceAssignment, AdmissionError> {
    if slices.is_empty() {
        return Err(AdmissionError::NoSlices);
    }
    let mut order: Vec<&TaskSpec> = set.iter().collect();
    order.sort_by(|a, b| by_decreasing_utilization(a, b));

    let mut bins: Vec<Vec<TaskSpec>> = vec![Vec::new(); slices.len()];
    let mut unplaced = Vec::new();
    for task in order {
        let target = slices.iter().zip(&bins).position(|(slice, bin)| {
            let mut candidate = bin.clone();
            candidate.push(task.clone());
            let candidate = TaskSet::new(candidate).expect("subset of a valid set");
            edf_feasible(&candidate, slice).accepted()
        });
        match target {
            Some(i) => bins[i].push(task.clone()),
            None => unplaced.push(task.id.clone()),
        }
    }
    if !unplaced.is_empty() {
        return Err(AdmissionError::Infeasible { unplaced });
    }

    let loads = slices
        .iter()
        .zip(bins)
        .map(|(slice, bin)| {
            let u = if bin.is_empty() {
                0.0
            } else {
                utilization(&TaskSet::new(bin.clone()).expect("valid"))
            };
            SliceLoad {
                slice: slice.clone(),
                tasks: bin.into_iter().map(|t| t.id).collect(),
                utilization: u,
            }
        })
        .collect();
    Ok(SliceAssignment { slices: loads })
}

/// Run-time model of one container.
#[derive(Debug, Clone, PartialEq)]
pub enum RuntimeDistribution {
    Normal { mean: f64, sd: f64 },
    /// Sorted observed run-times.
    Empirical(Vec<Micros>),
}

impl RuntimeDistribution {
    pub fn normal(mean: f64, sd: f64) -> Result<Self, AdmissionError> {
        if !mean.is_finite() || !sd.is_finite() || sd < 0.0 {
            return Err(AdmissionError::InvalidDistribution(format!(
                "normal(mean={mean}, sd={sd})"
            )));
        }
        Ok(RuntimeDistribution::Normal { mean, sd })
    }

    pub fn constant(value: Micros) -> Self {
        RuntimeDistribution::Normal {
            mean: value as f64,
            sd: 0.0,
        }
    }

    pub fn empirical(mut samples: Vec<Micros>) -> Result<Self, AdmissionError> {
        if samples.is_empty() {
            return Err(AdmissionError::InvalidDistribution("empty sample set".into()));
        }
        samples.sort_unstable();
        Ok(RuntimeDistribution::Empirical(samples))
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            RuntimeDistribution::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            RuntimeDistribution::Empirical(s) => s[rng.random_range(0..s.len())] as f64,
        }
    }
}

/// Both models fitted to the same samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeFit {
    pub sample_count: usize,
    pub normal: RuntimeDistribution,
    pub empirical: RuntimeDistribution,
}

/// Normal fit (mean, n − 1 standard deviation) plus the empirical model.
pub fn fit_runtime_distribution(samples: &[Micros]) -> Result<RuntimeFit, AdmissionError> {
    if samples.len() < 2 {
        return Err(AdmissionError::InsufficientSamples(samples.len()));
    }
    let s = summarize(samples).expect("non-empty");
    Ok(RuntimeFit {
        sample_count: samples.len(),
        normal: RuntimeDistribution::Normal {
            mean: s.mean,
            sd: s.sd,
        },
        empirical: RuntimeDistribution::empirical(samples.to_vec())?,
    })
}

/// Monte Carlo settings for the non-analytic cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonteCarlo {
    pub draws: u64,
    pub seed: u64,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        MonteCarlo {
            draws: 100_000,
            seed: 0x5eed,
        }
    }
}

/// `P(Q > x)` for a standard normal `Q`.
fn normal_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Firing latency when it is deterministic.
fn fixed_firing(firing: &NoiseModel) -> Option<f64> {
    let spike_active = firing
        .spike
        .is_some_and(|s| s.probability > 0.0 && s.latency as i64 != firing.firing.upper_bound());
    let lo = firing.firing.lower_bound();
    (!spike_active && lo == firing.firing.upper_bound()).then_some(lo as f64)
}

/// `P(f + c > d)` with the default Monte Carlo settings.
pub fn miss_probability(task: &TaskSpec, dist: &RuntimeDistribution, firing: &NoiseModel) -> f64 {
    miss_probability_with(task, dist, firing, MonteCarlo::default())
}

/// `P(f + c > d)`: `c` from `dist`, `f` from the firing part of `firing`.
///
/// Closed form when firing is deterministic (a degenerate normal) and the
/// run-time is normal; exact counting for an empirical run-time with
/// deterministic firing; seeded Monte Carlo otherwise.
pub fn miss_probability_with(
    task: &TaskSpec,
    dist: &RuntimeDistribution,
    firing: &NoiseModel,
    mc: MonteCarlo,
) -> f64 {
    let deadline = task.deadline as f64;
    if let Some(f) = fixed_firing(firing) {
        return match dist {
            RuntimeDistribution::Normal { mean, sd } => {
                let slack = deadline - f - mean;
                if *sd == 0.0 {
                    if slack < 0.0 { 1.0 } else { 0.0 }
                } else {
                    normal_tail(slack / sd)
                }
            }
            RuntimeDistribution::Empirical(samples) => {
                let over = samples.iter().filter(|&&c| c as f64 + f > deadline).count();
                over as f64 / samples.len() as f64
            }
        };
    }

    let firing_only = NoiseModel {
        firing: firing.firing.clone(),
        env_runtime: NoiseDist::zero(),
        spike: firing.spike,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
    let draws = mc.draws.max(1);
    let mut misses = 0u64;
    for _ in 0..draws {
        let c = dist.draw(&mut rng);
        let f = firing_only.sample(&mut rng).firing as f64;
        if f + c > deadline {
            misses += 1;
        }
    }
    misses as f64 / draws as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskPolicy {
    max_miss_probability: f64,
}

impl RiskPolicy {
    pub fn new(max_miss_probability: f64) -> Result<Self, AdmissionError> {
        if !(0.0..=1.0).contains(&max_miss_probability) {
            return Err(AdmissionError::InvalidPolicy(max_miss_probability));
        }
        Ok(RiskPolicy {
            max_miss_probability,
        })
    }

    pub fn max_miss_probability(&self) -> f64 {
        self.max_miss_probability
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskVerdict {
    pub per_task: Vec<(String, f64)>,
    /// Probability that at least one container misses in a given job round,
    /// assuming independent misses.
    pub combined: f64,
    pub accepted: bool,
}

/// `1 − Π(1 − p_i)`, evaluated in log space so tiny probabilities survive.
pub fn combined_miss_probability(per_task: impl IntoIterator<Item = f64>) -> f64 {
    let log_survival: f64 = per_task.into_iter().map(|p| (-p).ln_1p()).sum();
    (-log_survival.exp_m1()).clamp(0.0, 1.0)
}

pub fn admit_with_risk(
    set: &TaskSet,
    dists: &HashMap<String, RuntimeDistribution>,
    firing: &NoiseModel,
    policy: RiskPolicy,
) -> Result<RiskVerdict, AdmissionError> {
    admit_with_risk_mc(set, dists, firing, policy, MonteCarlo::default())
}

pub fn admit_with_risk_mc(
    set: &TaskSet,
    dists: &HashMap<String, RuntimeDistribution>,
    firing: &NoiseModel,
    policy: RiskPolicy,
    mc: MonteCarlo,
) -> Result<RiskVerdict, AdmissionError> {
    let mut per_task = Vec::with_capacity(set.len());
    for task in set {
        let dist = dists
            .get(&task.id)
            .ok_or_else(|| AdmissionError::MissingDistribution(task.id.clone()))?;
        let task_mc = MonteCarlo {
            seed: mc.seed ^ crate::stream_id(&task.id),
            ..mc
        };
        per_task.push((task.id.clone(), miss_probability_with(task, dist, firing, task_mc)));
    }
    let combined = combined_miss_probability(per_task.iter().map(|(_, p)| *p));
    Ok(RiskVerdict {
        accepted: combined <= policy.max_miss_probability,
        per_task,
        combined,
    })
}
