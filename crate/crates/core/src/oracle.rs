//! Exact offline solver for small deferrable-scheduling instances.
//!
//! With full knowledge of every job and of the capacity series, the offline
//! problem is
//!
//! ```text
//! maximize  Σ_i scheduled_i · (r_i − ω1·p_i) − ω2 Σ_{t<T} v_t
//! ```
//!
//! over one start time per job inside `[earliest, min(latest, T−1)]`, or no
//! start at all. The solver is a depth-first branch and bound over jobs in
//! descending revenue order. Adding a job never lowers any `v_t`, so the
//! violation accumulated by a partial plan is a valid lower bound on the final
//! one and `partial value + Σ remaining r_i` bounds every completion.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simenv::RewardWeights;
use crate::workload::{to_realtime, CapacitySeries, JobRequest, WorkloadTrace};

/// Default cap on the number of candidate assignments.
pub const DEFAULT_BUDGET: u128 = 2_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error(
        "instance has {candidates} candidate assignments, above the budget of {budget}; \
         shrink windows or job count, or raise the branch-and-bound budget"
    )]
    TooLarge { candidates: u128, budget: u128 },
    #[error("job {id} starts at {start}, outside its window [{earliest}, {latest}] within horizon {horizon}")]
    OutsideWindow { id: u64, start: u32, earliest: u32, latest: u32, horizon: u32 },
    #[error("plan references unknown job {0}")]
    UnknownJob(u64),
    #[error("capacity series has {capacity} steps but the horizon is {horizon}")]
    CapacityTooShort { capacity: usize, horizon: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineInstance {
    pub jobs: Vec<JobRequest>,
    pub capacity: CapacitySeries,
    pub weights: RewardWeights,
    pub horizon: u32,
}

impl OfflineInstance {
    pub fn new(trace: &WorkloadTrace, capacity: &CapacitySeries, weights: RewardWeights) -> Self {
        Self { jobs: trace.jobs().to_vec(), capacity: capacity.clone(), weights, horizon: trace.horizon() }
    }

    /// Start times a job may take within the horizon.
    fn starts(&self, job: &JobRequest) -> std::ops::RangeInclusive<u32> {
        let last = job.latest.min(self.horizon.saturating_sub(1));
        if self.horizon == 0 || job.earliest > last {
            #[allow(clippy::reversed_empty_ranges)]
            return 1..=0;
        }
        job.earliest..=last
    }

    /// Π over jobs of (number of start options + 1).
    pub fn candidate_count(&self) -> u128 {
        self.jobs
            .iter()
            .map(|j| self.starts(j).count() as u128 + 1)
            .fold(1u128, |acc, n| acc.saturating_mul(n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflinePlan {
    /// Job id → start time; absent jobs are never scheduled.
    pub start_times: BTreeMap<u64, u32>,
    pub objective: f64,
}

/// Evaluates a plan against the offline objective.
pub fn objective(instance: &OfflineInstance, start_times: &BTreeMap<u64, u32>) -> Result<f64, OracleError> {
    if instance.capacity.len() < instance.horizon as usize {
        return Err(OracleError::CapacityTooShort { capacity: instance.capacity.len(), horizon: instance.horizon });
    }
    let by_id: BTreeMap<u64, &JobRequest> = instance.jobs.iter().map(|j| (j.id, j)).collect();
    let horizon = instance.horizon as usize;
    let mut occupancy = vec![0u64; horizon];
    let mut value = 0.0;
    for (&id, &start) in start_times {
        let job = by_id.get(&id).ok_or(OracleError::UnknownJob(id))?;
        if !instance.starts(job).contains(&start) {
            return Err(OracleError::OutsideWindow {
                id,
                start,
                earliest: job.earliest,
                latest: job.latest,
                horizon: instance.horizon,
            });
        }
        value += job.revenue() - instance.weights.omega1 * f64::from(start - job.earliest);
        let end = (start + job.duration) as usize;
        for occ in &mut occupancy[start as usize..end.min(horizon)] {
            *occ += u64::from(job.cores);
        }
    }
    let violation: f64 = occupancy
        .iter()
        .zip(instance.capacity.values())
        .map(|(&occ, &cap)| occ.saturating_sub(u64::from(cap)) as f64)
        .sum();
    Ok(value - instance.weights.omega2 * violation)
}

pub fn solve_exact(instance: &OfflineInstance) -> Result<OfflinePlan, OracleError> {
    solve_exact_with_budget(instance, DEFAULT_BUDGET)
}

pub fn solve_exact_with_budget(instance: &OfflineInstance, budget: u128) -> Result<OfflinePlan, OracleError> {
    let candidates = instance.candidate_count();
    if candidates > budget {
        return Err(OracleError::TooLarge { candidates, budget });
    }
    if instance.capacity.len() < instance.horizon as usize {
        return Err(OracleError::CapacityTooShort { capacity: instance.capacity.len(), horizon: instance.horizon });
    }

    let mut order: Vec<usize> = (0..instance.jobs.len()).collect();
    order.sort_by(|&a, &b| {
        let (ja, jb) = (&instance.jobs[a], &instance.jobs[b]);
        jb.revenue().total_cmp(&ja.revenue()).then(ja.id.cmp(&jb.id))
    });
    let mut rest_revenue = vec![0.0; order.len() + 1];
    for k in (0..order.len()).rev() {
        rest_revenue[k] = rest_revenue[k + 1] + instance.jobs[order[k]].revenue();
    }
    // lexicographic tie-break runs over ascending job id
    let mut id_rank: Vec<(u64, usize)> = instance.jobs.iter().enumerate().map(|(i, j)| (j.id, i)).collect();
    id_rank.sort_unstable();

    let mut search = Search {
        instance,
        order: &order,
        rest_revenue: &rest_revenue,
        id_rank: id_rank.iter().map(|&(_, i)| i).collect(),
        occupancy: vec![0; instance.horizon as usize],
        starts: vec![None; instance.jobs.len()],
        best_value: f64::NEG_INFINITY,
        best: vec![None; instance.jobs.len()],
    };
    search.descend(0, 0.0);

    let start_times: BTreeMap<u64, u32> = search
        .best
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|t| (instance.jobs[i].id, t)))
        .collect();
    let objective = objective(instance, &start_times)?;
    Ok(OfflinePlan { start_times, objective })
}

struct Search<'a> {
    instance: &'a OfflineInstance,
    order: &'a [usize],
    rest_revenue: &'a [f64],
    id_rank: Vec<usize>,
    occupancy: Vec<u64>,
    starts: Vec<Option<u32>>,
    best_value: f64,
    best: Vec<Option<u32>>,
}

impl Search<'_> {
    fn descend(&mut self, depth: usize, value: f64) {
        if depth == self.order.len() {
            if value > self.best_value || (value == self.best_value && self.lex_smaller()) {
                self.best_value = value;
                self.best.clone_from(&self.starts);
            }
            return;
        }
        if value + self.rest_revenue[depth] < self.best_value {
            return;
        }
        let idx = self.order[depth];
        let job = self.instance.jobs[idx];
        for start in self.instance.starts(&job) {
            let delta = self.place(&job, start, true);
            self.starts[idx] = Some(start);
            let gain = job.revenue() - self.instance.weights.omega1 * f64::from(start - job.earliest)
                - self.instance.weights.omega2 * delta;
            self.descend(depth + 1, value + gain);
            self.place(&job, start, false);
        }
        self.starts[idx] = None;
        self.descend(depth + 1, value);
    }

    /// Adds or removes the job's occupancy and returns the violation increase
    /// (core-steps) caused by adding it.
    fn place(&mut self, job: &JobRequest, start: u32, add: bool) -> f64 {
        let horizon = self.occupancy.len();
        let end = ((start + job.duration) as usize).min(horizon);
        let cores = u64::from(job.cores);
        let mut delta = 0u64;
        for t in start as usize..end {
            let cap = u64::from(self.instance.capacity.values()[t]);
            if add {
                let before = self.occupancy[t].saturating_sub(cap);
                self.occupancy[t] += cores;
                delta += self.occupancy[t].saturating_sub(cap) - before;
            } else {
                self.occupancy[t] -= cores;
            }
        }
        delta as f64
    }

    /// Unscheduled compares as +∞.
    fn lex_smaller(&self) -> bool {
        for &i in &self.id_rank {
            let a = self.starts[i].map_or(u64::MAX, u64::from);
            let b = self.best[i].map_or(u64::MAX, u64::from);
            if a != b {
                return a < b;
            }
        }
        false
    }
}

/// Oracle optimum with `ω1 = 0` on the original windows and on windows
/// collapsed to submission time, in that order.
pub fn compare_deferrable_realtime(
    trace: &WorkloadTrace,
    capacity: &CapacitySeries,
    weights: RewardWeights,
) -> Result<(f64, f64), OracleError> {
    let weights = RewardWeights { omega1: 0.0, ..weights };
    let deferrable = solve_exact(&OfflineInstance::new(trace, capacity, weights))?;
    let realtime = solve_exact(&OfflineInstance::new(&to_realtime(trace), capacity, weights))?;
    Ok((deferrable.objective, realtime.objective))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job(id: u64, cores: u32, duration: u32, earliest: u32, latest: u32) -> JobRequest {
        JobRequest { id, cores, duration, earliest, latest, submit: 0 }
    }

    fn instance(jobs: Vec<JobRequest>, cap: Vec<u32>) -> OfflineInstance {
        let horizon = cap.len() as u32;
        OfflineInstance { jobs, capacity: CapacitySeries::new(cap), weights: RewardWeights::default(), horizon }
    }

    #[test]
    fn objective_examples() {
        let inst = instance(vec![job(0, 2, 2, 1, 2)], vec![2, 2, 2, 0]);
        assert_eq!(objective(&inst, &BTreeMap::new()).unwrap(), 0.0);
        assert_eq!(objective(&inst, &BTreeMap::from([(0, 1)])).unwrap(), 4.0);
        // one step late; second occupied step has C = 0: 4 − 2 − 10·2
        assert_eq!(objective(&inst, &BTreeMap::from([(0, 2)])).unwrap(), -18.0);
        assert!(matches!(objective(&inst, &BTreeMap::from([(0, 0)])), Err(OracleError::OutsideWindow { .. })));
        assert_eq!(objective(&inst, &BTreeMap::from([(9, 0)])), Err(OracleError::UnknownJob(9)));
    }

    #[test]
    fn solve_single_job() {
        let inst = instance(vec![job(0, 2, 2, 1, 2)], vec![2, 2, 2, 0]);
        let plan = solve_exact(&inst).unwrap();
        assert_eq!(plan.start_times, BTreeMap::from([(0, 1)]));
        assert_eq!(plan.objective, 4.0);
    }

    #[test]
    fn only_one_of_two_full_jobs() {
        let inst = instance(vec![job(0, 4, 1, 1, 1), job(1, 4, 1, 1, 1)], vec![4, 4, 4]);
        let plan = solve_exact(&inst).unwrap();
        assert_eq!(plan.start_times, BTreeMap::from([(0, 1)]));
        assert_eq!(plan.objective, 4.0);
    }

    #[test]
    fn empty_instance() {
        let plan = solve_exact(&instance(vec![], vec![1, 1])).unwrap();
        assert!(plan.start_times.is_empty());
        assert_eq!(plan.objective, 0.0);
    }

    #[test]
    fn ties_prefer_earlier_starts() {
        // omega1 = 0 makes every start of the single job equally good
        let mut inst = instance(vec![job(3, 1, 1, 0, 3)], vec![1, 1, 1, 1]);
        inst.weights.omega1 = 0.0;
        let plan = solve_exact(&inst).unwrap();
        assert_eq!(plan.start_times, BTreeMap::from([(3, 0)]));
    }

    #[test]
    fn over_budget_is_refused() {
        let jobs = (0..20).map(|i| job(i, 1, 1, 0, 9)).collect();
        let inst = instance(jobs, vec![1; 10]);
        assert!(matches!(solve_exact(&inst), Err(OracleError::TooLarge { .. })));
    }

    #[test]
    fn windows_clip_at_horizon() {
        let inst = instance(vec![job(0, 1, 2, 2, 8)], vec![1, 1, 1, 1]);
        assert_eq!(inst.candidate_count(), 3);
        let plan = solve_exact(&inst).unwrap();
        assert_eq!(plan.start_times, BTreeMap::from([(0, 2)]));
        assert_eq!(plan.objective, 2.0);
    }

    #[test]
    fn deferrable_beats_realtime_on_late_capacity() {
        let j = JobRequest { id: 0, cores: 2, duration: 1, earliest: 2, latest: 4, submit: 0 };
        let trace = WorkloadTrace::new(vec![j], 5).unwrap();
        let cap = CapacitySeries::new(vec![0, 0, 0, 2, 2]);
        assert_eq!(compare_deferrable_realtime(&trace, &cap, RewardWeights::default()).unwrap(), (2.0, 0.0));
        let empty = WorkloadTrace::new(vec![], 5).unwrap();
        assert_eq!(compare_deferrable_realtime(&empty, &cap, RewardWeights::default()).unwrap(), (0.0, 0.0));
    }
}
