//! Job log files: one CSV line per executed job.
//!
//! ```text
//! container,job,release_us,start_us,end_us,deadline_us,miss
//! c0,0,0,12,926,10000,0
//! ```
//!
//! Job indices must increase per container. Records read back carry no
//! noise decomposition: env and task noise are 0, the observed
//! `end - start` is booked as run-time, and the record is marked external.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::model::Micros;
use crate::sim::{JobRecord, TaskTrace, Trace};

pub const JOBLOG_HEADER: &str = "container,job,release_us,start_us,end_us,deadline_us,miss";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{file}:{line}: {message}")]
    Format {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}:{line}: inconsistent record: {message}")]
    InconsistentRecord {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

/// Writes every record of `trace`, container by container.
pub fn export_trace(trace: &Trace) -> String {
    let mut out = String::with_capacity(64 * (trace.job_count() + 1));
    out.push_str(JOBLOG_HEADER);
    out.push('\n');
    for r in trace.records() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.task_id,
            r.job_index,
            r.release,
            r.start,
            r.finish,
            r.deadline_abs,
            u8::from(r.missed)
        );
    }
    out
}

/// Parses one log. `file` only labels errors.
pub fn parse_job_log(file: &str, text: &str) -> Result<Vec<JobRecord>, LogError> {
    let format = |line: usize, message: String| LogError::Format {
        file: file.to_string(),
        line,
        message,
    };
    let inconsistent = |line: usize, message: String| LogError::InconsistentRecord {
        file: file.to_string(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, header)) if header == JOBLOG_HEADER => {}
        Some((n, other)) => return Err(format(n, format!("expected header `{JOBLOG_HEADER}`, found `{other}`"))),
        None => return Err(format(1, "missing header".into())),
    }

    let mut records = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(format(n, format!("expected 7 fields, found {}", fields.len())));
        }
        if fields[0].is_empty() {
            return Err(format(n, "empty container name".into()));
        }
        let num = |i: usize, name: &str| -> Result<u64, LogError> {
            fields[i]
                .parse::<u64>()
                .map_err(|_| format(n, format!("field `{name}`: `{}` is not a non-negative integer", fields[i])))
        };
        let job = num(1, "job")?;
        let release = num(2, "release_us")?;
        let start = num(3, "start_us")?;
        let end = num(4, "end_us")?;
        let deadline = num(5, "deadline_us")?;
        let missed = match fields[6] {
            "0" => false,
            "1" => true,
            other => return Err(format(n, format!("field `miss`: expected 0 or 1, found `{other}`"))),
        };
        if end < start {
            return Err(inconsistent(n, format!("end {end} < start {start}")));
        }
        if start < release {
            return Err(inconsistent(n, format!("start {start} < release {release}")));
        }
        if missed != (end > deadline) {
            return Err(inconsistent(
                n,
                format!("miss flag {} disagrees with end {end} vs deadline {deadline}", u8::from(missed)),
            ));
        }
        records.push((
            n,
            JobRecord {
                task_id: fields[0].to_string(),
                job_index: job,
                release,
                start,
                finish: end,
                firing_latency: start - release,
                env_noise: 0,
                task_noise: 0,
                runtime: end - start,
                total: end - release,
                deadline_abs: deadline,
                missed,
                sampled_firing: None,
            },
        ));
    }

    let mut last: HashMap<&str, u64> = HashMap::new();
    for (n, r) in &records {
        if let Some(&prev) = last.get(r.task_id.as_str()) {
            if r.job_index <= prev {
                return Err(format(
                    *n,
                    format!("job index {} of `{}` does not increase (previous {prev})", r.job_index, r.task_id),
                ));
            }
        }
        last.insert(&r.task_id, r.job_index);
    }
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

/// Merges logs into one trace; containers keep first-appearance order.
pub fn ingest_logs<'a>(logs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Trace, LogError> {
    let mut tasks: Vec<TaskTrace> = Vec::new();
    let mut horizon: Micros = 0;
    for (file, text) in logs {
        for record in parse_job_log(file, text)? {
            horizon = horizon.max(record.finish);
            let slot = match tasks.iter().position(|t| t.task_id == record.task_id) {
                Some(i) => i,
                None => {
                    tasks.push(TaskTrace {
                        task_id: record.task_id.clone(),
                        records: Vec::new(),
                    });
                    tasks.len() - 1
                }
            };
            let list = &mut tasks[slot].records;
            if let Some(prev) = list.last() {
                if record.job_index <= prev.job_index {
                    return Err(LogError::Format {
                        file: file.to_string(),
                        line: 0,
                        message: format!(
                            "job index {} of `{}` repeats an earlier file",
                            record.job_index, record.task_id
                        ),
                    });
                }
            }
            list.push(record);
        }
    }
    Ok(Trace { tasks, horizon })
}

pub fn ingest_files<P: AsRef<Path>>(paths: &[P]) -> Result<Trace, LogError> {
    let mut contents = Vec::with_capacity(paths.len());
    for p in paths {
        let name = p.as_ref().display().to_string();
        let text = std::fs::read_to_string(p).map_err(|source| LogError::Io {
            file: name.clone(),
            source,
        })?;
        contents.push((name, text));
    }
    ingest_logs(contents.iter().map(|(n, t)| (n.as_str(), t.as_str())))
}
