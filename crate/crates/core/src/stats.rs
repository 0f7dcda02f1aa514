//! Report statistics for groups of containers.
//!
//! Per configuration the tables carry three numbers:
//!
//! * `AVG`: mean run-time pooled over every record of every container;
//! * `SKW`: per container `|mean - median|`, reported as the (min, max) pair
//!   across containers;
//! * `SD_MX`: standard deviation of the container with the largest skew,
//!   ties broken towards the larger deviation.
//!
//! All inputs are integer microseconds. Sums are carried exactly in 128-bit
//! integers and every derived float is rounded once.

use std::cmp::Ordering;
use std::fmt::Write as _;

use thiserror::Error;

use crate::exact::{ratio_to_f64, signed_ratio_to_f64};
use crate::model::Micros;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("no samples")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub count: usize,
    pub min: Micros,
    pub max: Micros,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation (n − 1 divisor); 0 for a single sample.
    pub sd: f64,
}

/// Exact sufficient statistics of one sample set.
#[derive(Debug, Clone, Copy)]
struct Moments {
    n: u128,
    sum: u128,
    /// `n Σx² − (Σx)²`, i.e. `n` times the sum of squared deviations.
    /// `None` if it does not fit in 128 bits.
    scaled_m2: Option<u128>,
    /// Twice the median.
    median2: u128,
    min: u64,
    max: u64,
}

impl Moments {
    fn of(samples: &[Micros]) -> Result<Self, StatsError> {
        if samples.is_empty() {
            return Err(StatsError::EmptyInput);
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let min = sorted[0];
        let max = sorted[n - 1];
        let median2 = if n % 2 == 1 {
            2 * sorted[n / 2] as u128
        } else {
            sorted[n / 2 - 1] as u128 + sorted[n / 2] as u128
        };
        let sum: u128 = sorted.iter().map(|&x| x as u128).sum();

        // Shift by the minimum; the spread is unchanged and the squares stay small.
        let mut shifted_sum = 0u128;
        let mut shifted_sq = Some(0u128);
        for &x in &sorted {
            let y = (x - min) as u128;
            shifted_sum += y;
            shifted_sq = shifted_sq.and_then(|acc| y.checked_mul(y).and_then(|sq| acc.checked_add(sq)));
        }
        let scaled_m2 = shifted_sq
            .and_then(|sq| sq.checked_mul(n as u128))
            .and_then(|nq| shifted_sum.checked_mul(shifted_sum).map(|s2| nq - s2));

        Ok(Moments {
            n: n as u128,
            sum,
            scaled_m2,
            median2,
            min,
            max,
        })
    }

    fn mean(&self) -> f64 {
        ratio_to_f64(self.sum, self.n)
    }

    fn sd(&self, samples: &[Micros]) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        match self.scaled_m2 {
            Some(m2) => ratio_to_f64(m2, self.n * (self.n - 1)).sqrt(),
            None => {
                let mean = self.mean();
                let ss: f64 = samples.iter().map(|&x| (x as f64 - mean).powi(2)).sum();
                (ss / (self.n - 1) as f64).sqrt()
            }
        }
    }

    /// `|mean − median|` as an exact fraction `(num, den)`.
    fn skew(&self) -> (u128, u128) {
        let twice_sum = 2 * self.sum;
        let scaled_median = self.n * self.median2;
        (twice_sum.abs_diff(scaled_median), 2 * self.n)
    }
}

pub fn summarize(samples: &[Micros]) -> Result<SummaryStats, StatsError> {
    let m = Moments::of(samples)?;
    Ok(SummaryStats {
        count: samples.len(),
        min: m.min,
        max: m.max,
        mean: m.mean(),
        median: ratio_to_f64(m.median2, 2),
        sd: m.sd(samples),
    })
}

/// Observed run-times and misses for one container of a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRuntimes {
    pub task_id: String,
    pub runtimes: Vec<Micros>,
    pub misses: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub label: String,
    pub system: String,
    pub avg: f64,
    pub skw_min: f64,
    pub skw_max: f64,
    pub sd_mx: f64,
    pub misses: Vec<(String, usize)>,
    /// Number of containers that produced at least one record.
    pub reporting_tasks: usize,
    /// Some container produced no records.
    pub incomplete_log: bool,
}

impl GroupReport {
    pub fn total_misses(&self) -> usize {
        self.misses.iter().map(|(_, m)| m).sum()
    }
}

pub fn group_report(
    label: impl Into<String>,
    system: impl Into<String>,
    tasks: &[TaskRuntimes],
) -> GroupReport {
    let misses = tasks.iter().map(|t| (t.task_id.clone(), t.misses)).collect();
    let incomplete_log = tasks.is_empty() || tasks.iter().any(|t| t.runtimes.is_empty());

    let mut pooled_sum = 0u128;
    let mut pooled_n = 0u128;
    // (skew numerator, skew denominator, sd) per reporting container
    let mut per_task: Vec<(u128, u128, f64)> = Vec::new();
    for t in tasks {
        let Ok(m) = Moments::of(&t.runtimes) else {
            continue;
        };
        pooled_sum += m.sum;
        pooled_n += m.n;
        let (num, den) = m.skew();
        per_task.push((num, den, m.sd(&t.runtimes)));
    }

    let mut report = GroupReport {
        label: label.into(),
        system: system.into(),
        avg: 0.0,
        skw_min: 0.0,
        skw_max: 0.0,
        sd_mx: 0.0,
        misses,
        reporting_tasks: per_task.len(),
        incomplete_log,
    };
    if per_task.is_empty() {
        return report;
    }

    let cmp_skew = |a: &(u128, u128, f64), b: &(u128, u128, f64)| (a.0 * b.1).cmp(&(b.0 * a.1));
    let lowest = per_task.iter().min_by(|a, b| cmp_skew(a, b)).expect("non-empty");
    let highest = per_task
        .iter()
        .reduce(|best, cand| match cmp_skew(cand, best) {
            Ordering::Greater => cand,
            Ordering::Equal if cand.2 > best.2 => cand,
            _ => best,
        })
        .expect("non-empty");

    report.avg = ratio_to_f64(pooled_sum, pooled_n);
    report.skw_min = ratio_to_f64(lowest.0, lowest.1);
    report.skw_max = ratio_to_f64(highest.0, highest.1);
    report.sd_mx = highest.2;
    report
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdReport {
    pub threshold_us: f64,
    pub overshoots: usize,
    pub ratio: f64,
}

/// Counts firing latencies strictly above a tenth of the cycle time.
///
/// Panics if `cycle` is zero.
pub fn threshold_check(latencies: &[Micros], cycle: Micros) -> ThresholdReport {
    assert!(cycle > 0, "cycle time must be positive");
    let overshoots = latencies
        .iter()
        .filter(|&&l| l as u128 * 10 > cycle as u128)
        .count();
    let ratio = if latencies.is_empty() {
        0.0
    } else {
        ratio_to_f64(overshoots as u128, latencies.len() as u128)
    };
    ThresholdReport {
        threshold_us: ratio_to_f64(cycle as u128, 10),
        overshoots,
        ratio,
    }
}

fn skw_cell(r: &GroupReport) -> String {
    let star = if r.incomplete_log { "*" } else { "" };
    if r.reporting_tasks <= 1 {
        format!("{:.0}{star}", r.skw_max)
    } else {
        format!("{:.0}/{:.0}{star}", r.skw_min, r.skw_max)
    }
}

/// Plain-text table: one row per configuration label, `AVG & SKW & SD_MX`
/// per system. Rows with missing logs carry a star on their SKW cell.
pub fn render_table(reports: &[GroupReport], systems: &[&str]) -> String {
    let mut labels: Vec<&str> = Vec::new();
    for r in reports {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["Configuration".to_string()];
    for s in systems {
        header.extend([format!("{s} AVG"), format!("{s} SKW"), format!("{s} SD_MX")]);
    }
    rows.push(header);
    for label in labels {
        let mut row = vec![label.to_string()];
        for system in systems {
            match reports.iter().find(|r| r.label == label && r.system == *system) {
                Some(r) => row.extend([
                    format!("{:.0}", r.avg),
                    skw_cell(r),
                    format!("{:.2}", r.sd_mx),
                ]),
                None => row.extend(["-".to_string(), "-".to_string(), "-".to_string()]),
            }
        }
        rows.push(row);
    }

    let columns = rows[0].len();
    let widths: Vec<usize> = (0..columns)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| {
                if i == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        out.push_str(cells.join(" & ").trim_end());
        out.push('\n');
    }
    out
}

pub const DELIMITED_HEADER: &str = "label,avg_us,skw_min_us,skw_max_us,sd_mx_us,misses,starred";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Machine-readable rows under [`DELIMITED_HEADER`]. The label column is
/// `system/label` when a system is set.
pub fn render_delimited(reports: &[GroupReport]) -> String {
    let mut out = String::from(DELIMITED_HEADER);
    out.push('\n');
    for r in reports {
        let label = if r.system.is_empty() {
            r.label.clone()
        } else {
            format!("{}/{}", r.system, r.label)
        };
        let _ = writeln!(
            out,
            "{},{:.2},{:.2},{:.2},{:.2},{},{}",
            csv_field(&label),
            r.avg,
            r.skw_min,
            r.skw_max,
            r.sd_mx,
            r.total_misses(),
            u8::from(r.incomplete_log)
        );
    }
    out
}

/// Signed mean of a set of integers; used where noise terms can be negative.
pub fn signed_mean(samples: &[i64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let sum: i128 = samples.iter().map(|&x| x as i128).sum();
    Some(signed_ratio_to_f64(sum, samples.len() as u128))
}
