//! Metrics JSON, schedule CSV and the comparison table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use defersched::simenv::{Metrics, RewardWeights};
use defersched::workload::{CapacitySeries, WorkloadTrace};
use serde::Serialize;

/// Outcome of one job in an episode or plan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobOutcome {
    pub id: u64,
    pub cores: u32,
    pub duration: u32,
    pub earliest: u32,
    pub latest: u32,
    /// `None` when the job was never started.
    pub start: Option<u32>,
    pub delay: Option<u32>,
    pub revenue: f64,
    pub delay_penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub utilization: f64,
    pub time_delay: f64,
    pub violation_penalty: f64,
    pub total_reward: f64,
    pub per_job: Vec<JobOutcome>,
}

pub fn run_report(trace: &WorkloadTrace, metrics: Metrics, starts: &BTreeMap<u64, u32>, weights: RewardWeights) -> RunReport {
    let per_job = trace
        .jobs()
        .iter()
        .map(|j| {
            let start = starts.get(&j.id).copied();
            let delay = start.map(|s| s - j.earliest);
            JobOutcome {
                id: j.id,
                cores: j.cores,
                duration: j.duration,
                earliest: j.earliest,
                latest: j.latest,
                start,
                delay,
                revenue: if start.is_some() { j.revenue() } else { 0.0 },
                delay_penalty: delay.map_or(0.0, |d| weights.omega1 * f64::from(d)),
            }
        })
        .collect();
    RunReport {
        utilization: metrics.utilization,
        time_delay: metrics.time_delay,
        violation_penalty: metrics.violation_penalty,
        total_reward: metrics.total_reward,
        per_job,
    }
}

/// Table columns for an offline plan; occupancy past the horizon is dropped.
pub fn plan_metrics(
    trace: &WorkloadTrace,
    capacity: &CapacitySeries,
    weights: RewardWeights,
    starts: &BTreeMap<u64, u32>,
) -> Metrics {
    let horizon = trace.horizon() as usize;
    let mut occupancy = vec![0u64; horizon];
    let mut m = Metrics::default();
    for j in trace.jobs() {
        if let Some(&s) = starts.get(&j.id) {
            m.utilization += j.revenue();
            m.time_delay -= weights.omega1 * f64::from(s - j.earliest);
            let end = ((s + j.duration) as usize).min(horizon);
            for occ in occupancy.iter_mut().take(end).skip(s as usize) {
                *occ += u64::from(j.cores);
            }
        }
    }
    let violation: u64 =
        occupancy.iter().enumerate().map(|(t, &o)| o.saturating_sub(u64::from(capacity.at(t as u32)))).sum();
    m.violation_penalty = weights.omega2 * violation as f64;
    m.total_reward = m.utilization + m.time_delay - m.violation_penalty;
    m
}

/// `job_id,start_t`, ordered by start then id.
pub fn schedule_csv(starts: &BTreeMap<u64, u32>) -> String {
    let mut rows: Vec<(u32, u64)> = starts.iter().map(|(&id, &t)| (t, id)).collect();
    rows.sort_unstable();
    let mut out = String::from("job_id,start_t\n");
    for (t, id) in rows {
        writeln!(out, "{id},{t}").expect("string write");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: String,
    pub metrics: Metrics,
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max("Method".len());
    let mut out = format!("{:<width$}  {:>12}  {:>12}  {:>12}\n", "Method", "Utilization", "TimeDelay", "TotalReward");
    for r in rows {
        let m = r.metrics;
        writeln!(out, "{:<width$}  {:>12.2}  {:>12.2}  {:>12.2}", r.method, m.utilization, m.time_delay, m.total_reward)
            .expect("string write");
    }
    out
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("method,utilization,time_delay,violation_penalty,total_reward\n");
    for r in rows {
        let m = r.metrics;
        writeln!(out, "{},{},{},{},{}", r.method, m.utilization, m.time_delay, m.violation_penalty, m.total_reward)
            .expect("string write");
    }
    out
}
