//! Discrete-time environment for deferrable jobs.
//!
//! At step `t` the submitted jobs are partitioned into three disjoint sets:
//! jobs still running (`historical`), jobs whose window contains `t`
//! (`current`) and jobs waiting for their window to open (`future`). A
//! scheduler picks a subset of `current` to start now; the step then pays
//!
//! ```text
//! reward = Σ_selected (cores·duration − ω1·(t − earliest)) − ω2·violation
//! ```
//!
//! where `violation = max(0, occupied − capacity)` after the deployments.
//! A job started at `s` occupies the half-open interval `[s, s + duration)`.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::{CapacitySeries, JobRequest, WorkloadTrace};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("capacity series has {capacity} steps but the trace horizon is {horizon}")]
    CapacityTooShort { capacity: usize, horizon: u32 },
    #[error("job {0} is not eligible for deployment at this step")]
    NotEligible(u64),
    #[error("job {0} selected twice")]
    Duplicate(u64),
    #[error("selection needs {needed} cores but only {budget} are free")]
    OverCapacity { needed: u64, budget: u64 },
    #[error("episode already finished")]
    Finished,
}

/// Penalty coefficients: `omega1` per step of delay, `omega2` per violating core-step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub omega1: f64,
    pub omega2: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { omega1: 2.0, omega2: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningJob {
    pub job: JobRequest,
    pub started_at: u32,
    /// Exclusive.
    pub ends_at: u32,
}

impl RunningJob {
    pub fn delay(&self) -> u32 {
        self.started_at - self.job.earliest
    }

    pub fn occupies(&self, t: u32) -> bool {
        self.started_at <= t && t < self.ends_at
    }
}

/// Ordered ids of current jobs to deploy at this step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selection {
    pub job_ids: Vec<u64>,
}

impl Selection {
    pub fn empty() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub t: u32,
    pub historical: Vec<RunningJob>,
    pub current: Vec<JobRequest>,
    pub future: Vec<JobRequest>,
    pub capacity_now: u32,
    pub expired: BTreeSet<u64>,
    pub deployed_log: BTreeMap<u64, u32>,
}

impl EnvState {
    pub fn occupied_cores(&self) -> u64 {
        self.historical
            .iter()
            .filter(|r| r.occupies(self.t))
            .map(|r| u64::from(r.job.cores))
            .sum()
    }

    /// May be negative when capacity dropped below the running occupancy.
    pub fn free_capacity(&self) -> i64 {
        i64::from(self.capacity_now) - self.occupied_cores() as i64
    }

    pub fn violation(&self) -> u64 {
        self.occupied_cores().saturating_sub(u64::from(self.capacity_now))
    }

    /// Core budget available to new deployments.
    pub fn budget(&self) -> u64 {
        self.free_capacity().max(0) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub revenue: f64,
    pub delay_penalty: f64,
    pub violation_penalty: f64,
    pub violation: u64,
    pub expired_this_step: Vec<u64>,
    /// `(job id, start)` for each deployment of this step.
    pub deployed: Vec<(u64, u32)>,
}

impl StepOutcome {
    fn new(revenue: f64, delay_penalty: f64, violation: u64, omega2: f64) -> Self {
        let violation_penalty = omega2 * violation as f64;
        Self {
            reward: revenue - delay_penalty - violation_penalty,
            revenue,
            delay_penalty,
            violation_penalty,
            violation,
            expired_this_step: Vec::new(),
            deployed: Vec::new(),
        }
    }
}

/// Episode totals in the layout of the comparison tables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub utilization: f64,
    /// Reported as a non-positive number.
    pub time_delay: f64,
    pub violation_penalty: f64,
    pub total_reward: f64,
}

pub fn episode_metrics(outcomes: &[StepOutcome]) -> Metrics {
    outcomes.iter().fold(Metrics::default(), |m, o| Metrics {
        utilization: m.utilization + o.revenue,
        time_delay: m.time_delay - o.delay_penalty,
        violation_penalty: m.violation_penalty + o.violation_penalty,
        total_reward: m.total_reward + o.reward,
    })
}

/// One episode over a borrowed trace and capacity series.
#[derive(Debug, Clone)]
pub struct Environment<'a> {
    trace: &'a WorkloadTrace,
    capacity: &'a CapacitySeries,
    weights: RewardWeights,
    state: EnvState,
    next_job: usize,
}

impl<'a> Environment<'a> {
    pub fn reset(
        trace: &'a WorkloadTrace,
        capacity: &'a CapacitySeries,
        weights: RewardWeights,
    ) -> Result<Self, EnvError> {
        if capacity.len() < trace.horizon() as usize {
            return Err(EnvError::CapacityTooShort { capacity: capacity.len(), horizon: trace.horizon() });
        }
        let mut env = Self {
            trace,
            capacity,
            weights,
            state: EnvState {
                t: 0,
                historical: Vec::new(),
                current: Vec::new(),
                future: Vec::new(),
                capacity_now: capacity.at(0),
                expired: BTreeSet::new(),
                deployed_log: BTreeMap::new(),
            },
            next_job: 0,
        };
        env.reveal_and_partition();
        Ok(env)
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn trace(&self) -> &'a WorkloadTrace {
        self.trace
    }

    pub fn capacity(&self) -> &'a CapacitySeries {
        self.capacity
    }

    pub fn weights(&self) -> RewardWeights {
        self.weights
    }

    pub fn horizon(&self) -> u32 {
        self.trace.horizon()
    }

    pub fn is_done(&self) -> bool {
        self.state.t >= self.trace.horizon()
    }

    pub fn step(&mut self, selection: &Selection) -> Result<StepOutcome, EnvError> {
        if self.is_done() {
            return Err(EnvError::Finished);
        }
        let t = self.state.t;
        let mut chosen = Vec::with_capacity(selection.job_ids.len());
        let mut seen = HashSet::with_capacity(selection.job_ids.len());
        for &id in &selection.job_ids {
            if !seen.insert(id) {
                return Err(EnvError::Duplicate(id));
            }
            let pos = self
                .state
                .current
                .iter()
                .position(|j| j.id == id)
                .ok_or(EnvError::NotEligible(id))?;
            chosen.push(pos);
        }
        let needed: u64 = chosen.iter().map(|&p| u64::from(self.state.current[p].cores)).sum();
        let budget = self.state.budget();
        if needed > budget {
            return Err(EnvError::OverCapacity { needed, budget });
        }

        let mut revenue = 0.0;
        let mut delay = 0.0;
        let mut deployed = Vec::with_capacity(chosen.len());
        for &pos in &chosen {
            let job = self.state.current[pos];
            revenue += job.revenue();
            delay += self.weights.omega1 * f64::from(t - job.earliest);
            self.state.historical.push(RunningJob { job, started_at: t, ends_at: t + job.duration });
            self.state.deployed_log.insert(job.id, t);
            deployed.push((job.id, t));
        }
        let deployed_ids: HashSet<u64> = deployed.iter().map(|d| d.0).collect();
        self.state.current.retain(|j| !deployed_ids.contains(&j.id));

        let violation = self.state.violation();
        let mut outcome = StepOutcome::new(revenue, delay, violation, self.weights.omega2);
        outcome.deployed = deployed;

        let mut expired = Vec::new();
        self.state.current.retain(|j| {
            if j.latest <= t {
                expired.push(j.id);
                false
            } else {
                true
            }
        });
        self.state.expired.extend(expired.iter().copied());
        outcome.expired_this_step = expired;

        self.state.t = t + 1;
        self.state.capacity_now = self.capacity.at(t + 1);
        self.reveal_and_partition();
        Ok(outcome)
    }

    fn reveal_and_partition(&mut self) {
        let t = self.state.t;
        let jobs = self.trace.jobs();
        while self.next_job < jobs.len() && jobs[self.next_job].submit <= t {
            self.state.future.push(jobs[self.next_job]);
            self.next_job += 1;
        }
        self.state.historical.retain(|r| r.ends_at > t);
        let mut opened = Vec::new();
        self.state.future.retain(|j| {
            if j.earliest <= t {
                opened.push(*j);
                false
            } else {
                true
            }
        });
        if !opened.is_empty() {
            self.state.current.extend(opened);
            self.state.current.sort_by_key(|j| j.id);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job(id: u64, cores: u32, duration: u32, earliest: u32, latest: u32) -> JobRequest {
        JobRequest { id, cores, duration, earliest, latest, submit: 0 }
    }

    fn sel(ids: &[u64]) -> Selection {
        Selection { job_ids: ids.to_vec() }
    }

    #[test]
    fn reset_partitions_by_earliest() {
        let cap = CapacitySeries::constant(4, 10);
        let t1 = WorkloadTrace::new(vec![job(0, 1, 1, 0, 2)], 10).unwrap();
        let env = Environment::reset(&t1, &cap, RewardWeights::default()).unwrap();
        assert_eq!(env.state().current.len(), 1);
        assert!(env.state().future.is_empty());

        let t2 = WorkloadTrace::new(vec![job(0, 1, 1, 3, 4)], 10).unwrap();
        let env = Environment::reset(&t2, &cap, RewardWeights::default()).unwrap();
        assert!(env.state().current.is_empty());
        assert_eq!(env.state().future.len(), 1);

        let empty = WorkloadTrace::new(vec![], 10).unwrap();
        let env = Environment::reset(&empty, &cap, RewardWeights::default()).unwrap();
        assert!(env.state().current.is_empty() && env.state().future.is_empty());
        assert_eq!(env.state().capacity_now, 4);
    }

    #[test]
    fn short_capacity_is_configuration_error() {
        let cap = CapacitySeries::constant(4, 3);
        let trace = WorkloadTrace::new(vec![], 10).unwrap();
        assert_eq!(
            Environment::reset(&trace, &cap, RewardWeights::default()).unwrap_err(),
            EnvError::CapacityTooShort { capacity: 3, horizon: 10 }
        );
    }

    fn state_with(running: &[(u32, u32, u32)], t: u32, capacity: u32) -> EnvState {
        EnvState {
            t,
            historical: running
                .iter()
                .enumerate()
                .map(|(i, &(cores, start, dur))| RunningJob {
                    job: job(i as u64, cores, dur, start, start),
                    started_at: start,
                    ends_at: start + dur,
                })
                .collect(),
            current: vec![],
            future: vec![],
            capacity_now: capacity,
            expired: BTreeSet::new(),
            deployed_log: BTreeMap::new(),
        }
    }

    #[test]
    fn occupancy_free_and_violation() {
        let s = state_with(&[(4, 0, 5), (6, 1, 5)], 2, 16);
        assert_eq!(s.occupied_cores(), 10);
        assert_eq!(s.free_capacity(), 6);
        assert_eq!(state_with(&[], 2, 8).occupied_cores(), 0);
        assert_eq!(state_with(&[], 2, 8).free_capacity(), 8);
        // ends_at == t is excluded
        assert_eq!(state_with(&[(4, 0, 2)], 2, 8).occupied_cores(), 0);

        let s = state_with(&[(4, 0, 5), (6, 1, 5)], 2, 8);
        assert_eq!(s.free_capacity(), -2);
        assert_eq!(s.violation(), 2);
        assert_eq!(s.budget(), 0);
        assert_eq!(state_with(&[(5, 0, 5)], 2, 8).violation(), 0);
        assert_eq!(state_with(&[(8, 0, 5)], 2, 8).violation(), 0);
    }

    #[test]
    fn reward_pays_revenue_minus_delay() {
        // r = (20, 12): cores×duration 4×5 and 3×4, delays 0 and 3
        let jobs = vec![
            JobRequest { id: 0, cores: 4, duration: 5, earliest: 3, latest: 5, submit: 0 },
            JobRequest { id: 1, cores: 3, duration: 4, earliest: 0, latest: 5, submit: 0 },
        ];
        let trace = WorkloadTrace::new(jobs, 10).unwrap();
        let cap = CapacitySeries::constant(16, 10);
        let mut env = Environment::reset(&trace, &cap, RewardWeights::default()).unwrap();
        for _ in 0..3 {
            env.step(&Selection::empty()).unwrap();
        }
        let out = env.step(&sel(&[0, 1])).unwrap();
        assert_eq!(out.reward, 26.0);
        assert_eq!(out.revenue, 32.0);
        assert_eq!(out.delay_penalty, 6.0);
        assert_eq!(out.violation, 0);
    }

    #[test]
    fn empty_selection_expires_jobs_at_latest() {
        let trace = WorkloadTrace::new(vec![job(0, 1, 1, 0, 0), job(1, 1, 1, 0, 1)], 5).unwrap();
        let cap = CapacitySeries::constant(4, 5);
        let mut env = Environment::reset(&trace, &cap, RewardWeights::default()).unwrap();
        let out = env.step(&Selection::empty()).unwrap();
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.expired_this_step, vec![0]);
        assert_eq!(env.state().current.len(), 1);
        assert!(env.state().expired.contains(&0));
    }

    #[test]
    fn capacity_drop_is_penalized() {
        // r = 4 (2 cores × 2 steps), capacity drops from 4 to 0 on the second occupied step
        let trace = WorkloadTrace::new(vec![job(0, 2, 2, 0, 0)], 2).unwrap();
        let cap = CapacitySeries::new(vec![4, 0]);
        let mut env = Environment::reset(&trace, &cap, RewardWeights::default()).unwrap();
        let first = env.step(&sel(&[0])).unwrap();
        assert_eq!(first.reward, 4.0);
        let second = env.step(&Selection::empty()).unwrap();
        assert_eq!(second.violation, 2);
        assert_eq!(second.reward, -20.0);
        let m = episode_metrics(&[first, second]);
        assert_eq!(m.total_reward, -16.0);
        assert_eq!(m.total_reward, m.utilization + m.time_delay - m.violation_penalty);
        assert!(env.is_done());
        assert_eq!(env.step(&Selection::empty()), Err(EnvError::Finished));
    }

    #[test]
    fn contract_errors() {
        let trace = WorkloadTrace::new(vec![job(0, 3, 1, 0, 1), job(1, 3, 1, 1, 1)], 4).unwrap();
        let cap = CapacitySeries::constant(4, 4);
        let mut env = Environment::reset(&trace, &cap, RewardWeights::default()).unwrap();
        assert_eq!(env.step(&sel(&[1])), Err(EnvError::NotEligible(1)));
        assert_eq!(env.step(&sel(&[0, 0])), Err(EnvError::Duplicate(0)));
        env.step(&Selection::empty()).unwrap();
        assert_eq!(env.step(&sel(&[0, 1])), Err(EnvError::OverCapacity { needed: 6, budget: 4 }));
    }

    #[test]
    fn metrics_identity_examples() {
        assert_eq!(episode_metrics(&[]), Metrics::default());
        let o = StepOutcome::new(32.0, 6.0, 0, 10.0);
        assert_eq!(episode_metrics(&[o]).total_reward, 26.0);
        // utilization 3602.45 and delay 193.64 give 3408.81
        let o = StepOutcome::new(3602.45, 193.64, 0, 10.0);
        let m = episode_metrics(&[o]);
        assert!((m.total_reward - 3408.81).abs() < 1e-9);
        assert!((m.total_reward - (m.utilization + m.time_delay - m.violation_penalty)).abs() < 1e-9);
    }
}
