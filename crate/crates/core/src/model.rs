//! Timing vocabulary for periodic container workloads.
//!
//! A job's end-to-end computation time decomposes as
//!
//! ```text
//! c = f + n_env + n_task + t   with   c <= d <= p
//! ```
//!
//! where `f` is the firing (wake-up) latency, `n_env` the aggregate
//! environment noise, `n_task` the aggregate task-induced noise and `t` the
//! programmed run-time. All times are integer microseconds.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::exact;

/// Microseconds.
pub type Micros = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("task `{task}`: constraint violated: {constraint}")]
    ConstraintViolation { task: String, constraint: String },
    #[error("duplicate task id `{0}`")]
    DuplicateId(String),
    #[error("task set is empty")]
    EmptySet,
    #[error("hyperperiod overflows u64")]
    HyperperiodOverflow,
}

/// One container's periodic timing contract.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaskSpec {
    pub id: String,
    pub period: Micros,
    /// Relative deadline.
    pub deadline: Micros,
    pub wcet: Micros,
    /// Programmed busy-loop time.
    pub runtime: Micros,
}

impl TaskSpec {
    /// Builds and validates a task.
    pub fn new(
        id: impl Into<String>,
        period: Micros,
        deadline: Micros,
        wcet: Micros,
        runtime: Micros,
    ) -> Result<Self, ModelError> {
        validate(TaskSpec {
            id: id.into(),
            period,
            deadline,
            wcet,
            runtime,
        })
    }

    /// Task with an implicit deadline (`deadline == period`).
    pub fn implicit(
        id: impl Into<String>,
        period: Micros,
        wcet: Micros,
        runtime: Micros,
    ) -> Result<Self, ModelError> {
        Self::new(id, period, period, wcet, runtime)
    }

    pub fn utilization(&self) -> f64 {
        self.wcet as f64 / self.period as f64
    }

    pub fn has_implicit_deadline(&self) -> bool {
        self.deadline == self.period
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (t={} w={} d={} p={})",
            self.id, self.runtime, self.wcet, self.deadline, self.period
        )
    }
}

/// Checks `0 < runtime <= wcet <= deadline <= period`.
pub fn validate(task: TaskSpec) -> Result<TaskSpec, ModelError> {
    let violation = |constraint: &str| ModelError::ConstraintViolation {
        task: task.id.clone(),
        constraint: constraint.to_string(),
    };
    if task.id.is_empty() {
        return Err(violation("id must not be empty"));
    }
    for (name, value) in [
        ("runtime", task.runtime),
        ("wcet", task.wcet),
        ("deadline", task.deadline),
        ("period", task.period),
    ] {
        if value == 0 {
            return Err(violation(&format!("{name} must be positive")));
        }
    }
    if task.runtime > task.wcet {
        return Err(violation("runtime > wcet"));
    }
    if task.wcet > task.deadline {
        return Err(violation("wcet > deadline"));
    }
    if task.deadline > task.period {
        return Err(violation("deadline > period"));
    }
    Ok(task)
}

/// Non-empty ordered collection of tasks with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSet {
    tasks: Vec<TaskSpec>,
}

impl TaskSet {
    pub fn new(tasks: Vec<TaskSpec>) -> Result<Self, ModelError> {
        if tasks.is_empty() {
            return Err(ModelError::EmptySet);
        }
        let mut seen = HashSet::new();
        let mut validated = Vec::with_capacity(tasks.len());
        for task in tasks {
            if !seen.insert(task.id.clone()) {
                return Err(ModelError::DuplicateId(task.id));
            }
            validated.push(validate(task)?);
        }
        Ok(TaskSet { tasks: validated })
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TaskSpec> {
        self.tasks.iter()
    }

    /// Subset holding the given ids, in this set's order.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Option<TaskSet> {
        let wanted: HashSet<&str> = ids.into_iter().collect();
        let tasks: Vec<TaskSpec> = self
            .tasks
            .iter()
            .filter(|t| wanted.contains(t.id.as_str()))
            .cloned()
            .collect();
        if tasks.is_empty() || tasks.len() != wanted.len() {
            return None;
        }
        Some(TaskSet { tasks })
    }
}

impl<'a> IntoIterator for &'a TaskSet {
    type Item = &'a TaskSpec;
    type IntoIter = std::slice::Iter<'a, TaskSpec>;

    fn into_iter(self) -> Self::IntoIter {
        self.tasks.iter()
    }
}

/// `Σ w_i / p_i`.
pub fn utilization(set: &TaskSet) -> f64 {
    ratio_sum(set.iter().map(|t| (t.wcet, t.period)))
}

/// `Σ w_i / d_i`.
pub fn density(set: &TaskSet) -> f64 {
    ratio_sum(set.iter().map(|t| (t.wcet, t.deadline)))
}

/// Least common multiple of all periods.
pub fn hyperperiod(set: &TaskSet) -> Result<Micros, ModelError> {
    checked_lcm_all(set.iter().map(|t| t.period)).ok_or(ModelError::HyperperiodOverflow)
}

pub(crate) fn checked_lcm_all(values: impl IntoIterator<Item = u64>) -> Option<u64> {
    values.into_iter().try_fold(1u64, |acc, v| {
        let g = num_integer::gcd(acc, v);
        (acc / g).checked_mul(v)
    })
}

/// Sum of `num/den` fractions.
///
/// When the denominators share a representable common multiple the sum is
/// formed exactly over it and rounded once, so the result does not depend
/// on summation order and an exact total of 1 comes out as exactly `1.0`.
fn ratio_sum(pairs: impl Iterator<Item = (u64, u64)> + Clone) -> f64 {
    if let Some(common) = checked_lcm_all(pairs.clone().map(|(_, d)| d)) {
        let total = pairs.clone().try_fold(0u128, |acc, (n, d)| {
            acc.checked_add(n as u128 * (common / d) as u128)
        });
        if let Some(total) = total {
            return exact::ratio_to_f64(total, common as u128);
        }
    }
    let mut terms: Vec<f64> = pairs.map(|(n, d)| n as f64 / d as f64).collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}
