//! Discrete-event simulation of preemptive EDF on CPU slices.
//!
//! Each slice is simulated on its own, single threaded, with a random
//! stream derived from `(seed, slice id)`. Time advances from event to
//! event (release, wake-up, completion, and the next dispatch tick when a
//! coarse dispatch granularity is configured).
//!
//! A released job first sleeps for its sampled firing latency and only then
//! becomes ready. When the CPU is busy with earlier-deadline work the
//! queueing delay covers the latency, so the recorded firing time
//! `start - release` is never the sum of both. Preemptions show up as task
//! noise: `task_noise = (finish - start) - service`.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::admission::SliceAssignment;
use crate::model::{Micros, TaskSet, TaskSpec};
use crate::noise::SystemProfile;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("assignment references unknown task `{0}`")]
    UnknownTask(String),
    #[error("task `{0}` is assigned to more than one slice")]
    DuplicateAssignment(String),
    #[error("simulation duration must be positive")]
    ZeroDuration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub assignment: SliceAssignment,
    pub profile: SystemProfile,
    /// Jobs are released in `[offset, duration)`; all of them run to completion.
    pub duration: Micros,
    pub seed: u64,
    /// First release per task; absent means 0.
    pub release_offsets: HashMap<String, Micros>,
    /// Preemptions only take effect on multiples of this quantum. 0 means
    /// immediate preemption.
    pub dispatch_granularity: Micros,
}

impl SimConfig {
    pub fn new(assignment: SliceAssignment, profile: SystemProfile, duration: Micros, seed: u64) -> Self {
        SimConfig {
            assignment,
            profile,
            duration,
            seed,
            release_offsets: HashMap::new(),
            dispatch_granularity: 0,
        }
    }
}

/// One executed job. `total = firing_latency + env_noise + task_noise + runtime`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JobRecord {
    pub task_id: String,
    pub job_index: u64,
    pub release: Micros,
    pub start: Micros,
    pub finish: Micros,
    /// `start - release`.
    pub firing_latency: Micros,
    pub env_noise: i64,
    pub task_noise: Micros,
    /// Programmed run-time consumed (for ingested logs: `finish - start`).
    pub runtime: Micros,
    /// `finish - release`.
    pub total: Micros,
    pub deadline_abs: Micros,
    pub missed: bool,
    /// Wake-up latency drawn for the job, whether or not queueing hid it.
    /// `None` for records that did not come from the simulator.
    pub sampled_firing: Option<Micros>,
}

impl JobRecord {
    /// Run-time as a log would report it: first dispatch to completion.
    pub fn observed_runtime(&self) -> Micros {
        self.finish - self.start
    }

    pub fn identity_holds(&self) -> bool {
        let sum = self.firing_latency as i128
            + self.env_noise as i128
            + self.task_noise as i128
            + self.runtime as i128;
        sum == self.total as i128
            && self.total == self.finish - self.release
            && self.firing_latency == self.start - self.release
            && self.missed == (self.finish > self.deadline_abs)
            && self.release <= self.start
            && self.start <= self.finish
    }

    pub fn is_external(&self) -> bool {
        self.sampled_firing.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskTrace {
    pub task_id: String,
    /// Dense job indices from 0, in release order.
    pub records: Vec<JobRecord>,
}

impl TaskTrace {
    pub fn misses(&self) -> usize {
        self.records.iter().filter(|r| r.missed).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub tasks: Vec<TaskTrace>,
    /// Last completion, or the configured duration if later.
    pub horizon: Micros,
}

impl Trace {
    pub fn task(&self, id: &str) -> Option<&TaskTrace> {
        self.tasks.iter().find(|t| t.task_id == id)
    }

    pub fn records(&self) -> impl Iterator<Item = &JobRecord> {
        self.tasks.iter().flat_map(|t| t.records.iter())
    }

    pub fn job_count(&self) -> usize {
        self.tasks.iter().map(|t| t.records.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissCounts {
    pub per_task: Vec<(String, usize)>,
    pub total: usize,
}

pub fn count_misses(trace: &Trace) -> MissCounts {
    let per_task: Vec<(String, usize)> = trace
        .tasks
        .iter()
        .map(|t| (t.task_id.clone(), t.misses()))
        .collect();
    let total = per_task.iter().map(|(_, m)| m).sum();
    MissCounts { per_task, total }
}

/// A job competing for the CPU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadyJob {
    pub task_id: String,
    pub release: Micros,
    pub deadline_abs: Micros,
}

/// Earliest absolute deadline; ties by earlier release, then task id.
pub fn pick_next(ready: &[ReadyJob]) -> Option<&ReadyJob> {
    ready
        .iter()
        .min_by(|a, b| {
            (a.deadline_abs, a.release, &a.task_id).cmp(&(b.deadline_abs, b.release, &b.task_id))
        })
}

/// A contiguous stretch of execution on one slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub slice_id: String,
    pub task_id: String,
    pub job_index: u64,
    pub start: Micros,
    pub end: Micros,
}

pub fn simulate(config: &SimConfig, tasks: &TaskSet) -> Result<Trace, SimError> {
    simulate_inner(config, tasks, false).map(|(trace, _)| trace)
}

/// Like [`simulate`], also returning every execution segment.
pub fn simulate_with_timeline(
    config: &SimConfig,
    tasks: &TaskSet,
) -> Result<(Trace, Vec<Segment>), SimError> {
    simulate_inner(config, tasks, true)
}

fn simulate_inner(
    config: &SimConfig,
    tasks: &TaskSet,
    timeline: bool,
) -> Result<(Trace, Vec<Segment>), SimError> {
    if config.duration == 0 {
        return Err(SimError::ZeroDuration);
    }
    let mut seen = HashSet::new();
    let mut plan: Vec<(&str, Vec<&TaskSpec>)> = Vec::new();
    for load in config.assignment.slices() {
        let mut specs = Vec::with_capacity(load.tasks.len());
        for id in &load.tasks {
            let spec = tasks.get(id).ok_or_else(|| SimError::UnknownTask(id.clone()))?;
            if !seen.insert(id.as_str()) {
                return Err(SimError::DuplicateAssignment(id.clone()));
            }
            specs.push(spec);
        }
        plan.push((load.slice.id.as_str(), specs));
    }

    let results: Vec<SliceRun> = plan
        .par_iter()
        .map(|(slice_id, specs)| simulate_slice(config, slice_id, specs, timeline))
        .collect();

    let mut by_task: HashMap<String, Vec<JobRecord>> = HashMap::new();
    let mut horizon = config.duration;
    let mut segments = Vec::new();
    for run in results {
        horizon = horizon.max(run.last_finish);
        by_task.extend(run.records);
        segments.extend(run.segments);
    }
    let tasks_out = tasks
        .iter()
        .filter_map(|t| {
            by_task.remove(&t.id).map(|records| TaskTrace {
                task_id: t.id.clone(),
                records,
            })
        })
        .collect();
    Ok((
        Trace {
            tasks: tasks_out,
            horizon,
        },
        segments,
    ))
}

struct SliceRun {
    records: HashMap<String, Vec<JobRecord>>,
    segments: Vec<Segment>,
    last_finish: Micros,
}

struct Job {
    rank: usize,
    index: u64,
    release: Micros,
    deadline_abs: Micros,
    sampled_firing: Micros,
    service: Micros,
    remaining: Micros,
    start: Option<Micros>,
}

/// FNV-1a over the slice id selects the ChaCha stream.
fn slice_rng(seed: u64, slice_id: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(crate::stream_id(slice_id));
    rng
}

fn simulate_slice(config: &SimConfig, slice_id: &str, specs: &[&TaskSpec], timeline: bool) -> SliceRun {
    // rank = position in lexicographic id order, the final EDF tie-break
    let mut specs: Vec<&TaskSpec> = specs.to_vec();
    specs.sort_by(|a, b| a.id.cmp(&b.id));

    let noise = &config.profile.noise;
    let quantum = config.dispatch_granularity;
    let mut rng = slice_rng(config.seed, slice_id);

    let mut next_release: Vec<Option<Micros>> = specs
        .iter()
        .map(|t| {
            let offset = config.release_offsets.get(&t.id).copied().unwrap_or(0);
            (offset < config.duration).then_some(offset)
        })
        .collect();
    let mut next_index = vec![0u64; specs.len()];

    let mut jobs: Vec<Job> = Vec::new();
    // (eligible, job)
    let mut sleeping: BinaryHeap<Reverse<(Micros, usize)>> = BinaryHeap::new();
    // (deadline, release, rank, job)
    let mut ready: BinaryHeap<Reverse<(Micros, Micros, usize, usize)>> = BinaryHeap::new();
    let mut running: Option<usize> = None;
    let mut segment_start: Micros = 0;

    let mut records: HashMap<String, Vec<JobRecord>> = HashMap::new();
    let mut segments = Vec::new();
    let mut last_finish = 0;
    let mut now: Micros = 0;

    let key = |jobs: &[Job], j: usize| {
        let job = &jobs[j];
        Reverse((job.deadline_abs, job.release, job.rank, j))
    };

    loop {
        let wants_preempt = match (running, ready.peek()) {
            (Some(r), Some(Reverse((deadline, ..)))) => *deadline < jobs[r].deadline_abs,
            _ => false,
        };
        let candidates = [
            next_release.iter().flatten().min().copied(),
            sleeping.peek().map(|Reverse((t, _))| *t),
            running.map(|r| now + jobs[r].remaining),
            (wants_preempt && quantum > 0).then(|| (now / quantum + 1) * quantum),
        ];
        let Some(t) = candidates.into_iter().flatten().min() else {
            break;
        };

        if let Some(r) = running {
            jobs[r].remaining -= t - now;
        }
        now = t;

        if let Some(r) = running.filter(|&r| jobs[r].remaining == 0) {
            let job = &jobs[r];
            let spec = specs[job.rank];
            let start = job.start.expect("running job has started");
            if timeline {
                segments.push(Segment {
                    slice_id: slice_id.to_string(),
                    task_id: spec.id.clone(),
                    job_index: job.index,
                    start: segment_start,
                    end: now,
                });
            }
            records.entry(spec.id.clone()).or_default().push(JobRecord {
                task_id: spec.id.clone(),
                job_index: job.index,
                release: job.release,
                start,
                finish: now,
                firing_latency: start - job.release,
                env_noise: job.service as i64 - spec.runtime as i64,
                task_noise: (now - start) - job.service,
                runtime: spec.runtime,
                total: now - job.release,
                deadline_abs: job.deadline_abs,
                missed: now > job.deadline_abs,
                sampled_firing: Some(job.sampled_firing),
            });
            last_finish = last_finish.max(now);
            running = None;
        }

        for (rank, spec) in specs.iter().enumerate() {
            if next_release[rank] != Some(now) {
                continue;
            }
            let draw = noise.sample(&mut rng);
            let service = (spec.runtime as i64 + draw.env_runtime).max(1) as Micros;
            let j = jobs.len();
            jobs.push(Job {
                rank,
                index: next_index[rank],
                release: now,
                deadline_abs: now + spec.deadline,
                sampled_firing: draw.firing,
                service,
                remaining: service,
                start: None,
            });
            sleeping.push(Reverse((now + draw.firing, j)));
            next_index[rank] += 1;
            let following = now + spec.period;
            next_release[rank] = (following < config.duration).then_some(following);
        }

        while let Some(&Reverse((eligible, j))) = sleeping.peek() {
            if eligible > now {
                break;
            }
            sleeping.pop();
            ready.push(key(&jobs, j));
        }

        let preempt_now = match (running, ready.peek()) {
            (Some(r), Some(Reverse((deadline, ..)))) => {
                *deadline < jobs[r].deadline_abs && (quantum == 0 || now.is_multiple_of(quantum))
            }
            _ => false,
        };
        if preempt_now {
            let r = running.take().expect("checked");
            if timeline && now > segment_start {
                segments.push(Segment {
                    slice_id: slice_id.to_string(),
                    task_id: specs[jobs[r].rank].id.clone(),
                    job_index: jobs[r].index,
                    start: segment_start,
                    end: now,
                });
            }
            ready.push(key(&jobs, r));
        }
        if running.is_none() {
            if let Some(Reverse((_, _, _, j))) = ready.pop() {
                jobs[j].start.get_or_insert(now);
                running = Some(j);
                segment_start = now;
            }
        }
    }

    for list in records.values_mut() {
        list.sort_by_key(|r| r.job_index);
    }
    SliceRun {
        records,
        segments,
        last_finish,
    }
}
