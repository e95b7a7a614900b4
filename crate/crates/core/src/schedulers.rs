//! Heuristic baselines and the shared score-ordering prefix rule.
//!
//! Every policy, learned or not, ranks the current jobs by a score (highest
//! first) and deploys the longest prefix of that ranking whose cores fit the
//! free capacity.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seeding::{stream_rng, Purpose};
use crate::simenv::{episode_metrics, EnvError, EnvState, Environment, Metrics, RewardWeights, Selection, StepOutcome};
use crate::workload::{CapacitySeries, JobRequest, WorkloadTrace};

/// How the ranked list is cut against the core budget.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixRule {
    /// Stop at the first job that overflows the budget.
    #[default]
    Strict,
    /// Skip overflowing jobs and keep filling (ablation only).
    SkipOverflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Fifo,
    Sjf,
    Hrrn,
    Tetris,
    Random { seed: u64 },
}

impl SchedulerKind {
    pub const DETERMINISTIC: [SchedulerKind; 4] =
        [SchedulerKind::Fifo, SchedulerKind::Sjf, SchedulerKind::Hrrn, SchedulerKind::Tetris];

    pub fn name(&self) -> &'static str {
        match self {
            SchedulerKind::Fifo => "FIFO",
            SchedulerKind::Sjf => "SJF",
            SchedulerKind::Hrrn => "HRRN",
            SchedulerKind::Tetris => "Tetris",
            SchedulerKind::Random { .. } => "Random",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fifo" => Ok(SchedulerKind::Fifo),
            "sjf" => Ok(SchedulerKind::Sjf),
            "hrrn" => Ok(SchedulerKind::Hrrn),
            "tetris" => Ok(SchedulerKind::Tetris),
            other => match other.strip_prefix("random:") {
                Some(seed) => seed
                    .parse()
                    .map(|seed| SchedulerKind::Random { seed })
                    .map_err(|_| format!("invalid random seed `{seed}`")),
                None => Err(format!("unknown scheduler kind `{s}` (expected fifo, sjf, hrrn, tetris or random:<seed>)")),
            },
        }
    }
}

/// Longest prefix of `ordered` whose core sum stays within `max(0, budget)`.
pub fn select_prefix(ordered: &[JobRequest], budget: i64) -> Selection {
    select_prefix_with(ordered, budget, PrefixRule::Strict)
}

pub fn select_prefix_with(ordered: &[JobRequest], budget: i64, rule: PrefixRule) -> Selection {
    let mut left = budget.max(0) as u64;
    let mut job_ids = Vec::new();
    for job in ordered {
        let cores = u64::from(job.cores);
        if cores <= left {
            left -= cores;
            job_ids.push(job.id);
        } else if rule == PrefixRule::Strict {
            break;
        }
    }
    Selection { job_ids }
}

/// Heuristic score of `job` at `state` (higher ranks first).
///
/// `Random` has no closed-form score; it returns 0 here and is drawn by
/// [`HeuristicScheduler`] instead.
pub fn score(kind: SchedulerKind, state: &EnvState, job: &JobRequest) -> f64 {
    match kind {
        SchedulerKind::Fifo => -f64::from(job.earliest),
        SchedulerKind::Sjf => -f64::from(job.duration),
        SchedulerKind::Hrrn => {
            let waited = f64::from(state.t.saturating_sub(job.earliest));
            (waited + f64::from(job.duration)) / f64::from(job.duration)
        }
        SchedulerKind::Tetris => {
            f64::from(job.cores) * state.free_capacity().max(0) as f64 + 1.0 / f64::from(job.duration)
        }
        SchedulerKind::Random { .. } => 0.0,
    }
}

/// Descending score, then kind-specific tie-breaks.
fn rank(kind: SchedulerKind, a: (&JobRequest, f64), b: (&JobRequest, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| match kind {
        SchedulerKind::Fifo => a.0.submit.cmp(&b.0.submit).then(a.0.id.cmp(&b.0.id)),
        _ => a.0.id.cmp(&b.0.id),
    })
}

/// Anything that turns an environment state into a deployment decision.
pub trait Scheduler {
    fn name(&self) -> String;

    /// Called once before the first step of each episode.
    fn begin_episode(&mut self) {}

    fn select(&mut self, state: &EnvState) -> Selection;

    /// Sees the outcome of the step that followed the last `select`.
    fn observe(&mut self, _outcome: &StepOutcome, _next: &EnvState) {}
}

pub struct HeuristicScheduler {
    kind: SchedulerKind,
    rule: PrefixRule,
    rng: Option<ChaCha8Rng>,
}

impl HeuristicScheduler {
    pub fn new(kind: SchedulerKind) -> Self {
        Self::with_rule(kind, PrefixRule::Strict)
    }

    pub fn with_rule(kind: SchedulerKind, rule: PrefixRule) -> Self {
        let rng = match kind {
            SchedulerKind::Random { seed } => Some(stream_rng(seed, Purpose::Heuristic, 0)),
            _ => None,
        };
        Self { kind, rule, rng }
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    /// Current jobs in descending score order.
    pub fn order(&mut self, state: &EnvState) -> Vec<JobRequest> {
        let mut scored: Vec<(JobRequest, f64)> = match self.rng.as_mut() {
            Some(rng) => state.current.iter().map(|j| (*j, rng.random::<f64>())).collect(),
            None => state.current.iter().map(|j| (*j, score(self.kind, state, j))).collect(),
        };
        let kind = self.kind;
        scored.sort_by(|a, b| rank(kind, (&a.0, a.1), (&b.0, b.1)));
        scored.into_iter().map(|(j, _)| j).collect()
    }
}

impl Scheduler for HeuristicScheduler {
    fn name(&self) -> String {
        self.kind.name().to_string()
    }

    fn select(&mut self, state: &EnvState) -> Selection {
        let ordered = self.order(state);
        select_prefix_with(&ordered, state.free_capacity(), self.rule)
    }
}

/// Start time of every deployed job, ordered by `(start, id)`.
pub type ScheduleLog = Vec<(u64, u32)>;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub metrics: Metrics,
    pub schedule: ScheduleLog,
    pub outcomes: Vec<StepOutcome>,
}

/// Drives `scheduler` through one full episode.
pub fn run_episode(
    scheduler: &mut dyn Scheduler,
    trace: &WorkloadTrace,
    capacity: &CapacitySeries,
    weights: RewardWeights,
) -> Result<EpisodeResult, EnvError> {
    let mut env = Environment::reset(trace, capacity, weights)?;
    scheduler.begin_episode();
    let mut outcomes = Vec::with_capacity(trace.horizon() as usize);
    while !env.is_done() {
        let selection = scheduler.select(env.state());
        let outcome = env.step(&selection)?;
        scheduler.observe(&outcome, env.state());
        outcomes.push(outcome);
    }
    let mut schedule: ScheduleLog = env.state().deployed_log.iter().map(|(&id, &t)| (id, t)).collect();
    schedule.sort_by_key(|&(id, t)| (t, id));
    Ok(EpisodeResult { metrics: episode_metrics(&outcomes), schedule, outcomes })
}

pub fn run_heuristic(
    kind: SchedulerKind,
    trace: &WorkloadTrace,
    capacity: &CapacitySeries,
    weights: RewardWeights,
) -> Result<EpisodeResult, EnvError> {
    run_episode(&mut HeuristicScheduler::new(kind), trace, capacity, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::{BTreeMap, BTreeSet};

    fn job(id: u64, cores: u32, duration: u32, earliest: u32) -> JobRequest {
        JobRequest { id, cores, duration, earliest, latest: earliest + 10, submit: 0 }
    }

    fn ids(sel: &Selection) -> Vec<u64> {
        sel.job_ids.clone()
    }

    #[test]
    fn prefix_examples() {
        let a = [job(0, 2, 1, 0), job(1, 4, 1, 0), job(2, 6, 1, 0)];
        assert_eq!(ids(&select_prefix(&a, 8)), vec![0, 1]);
        let b = [job(0, 6, 1, 0), job(1, 4, 1, 0), job(2, 2, 1, 0)];
        assert_eq!(ids(&select_prefix(&b, 8)), vec![0]);
        assert_eq!(ids(&select_prefix_with(&b, 8, PrefixRule::SkipOverflow)), vec![0, 2]);
        assert!(select_prefix(&a, 0).job_ids.is_empty());
        assert!(select_prefix(&a, -3).job_ids.is_empty());
    }

    fn state(t: u32, current: Vec<JobRequest>, capacity: u32) -> EnvState {
        EnvState {
            t,
            historical: vec![],
            current,
            future: vec![],
            capacity_now: capacity,
            expired: BTreeSet::new(),
            deployed_log: BTreeMap::new(),
        }
    }

    #[test]
    fn hrrn_ratio() {
        let a = job(0, 1, 2, 1);
        let b = job(1, 1, 4, 3);
        let s = state(5, vec![a, b], 8);
        assert_eq!(score(SchedulerKind::Hrrn, &s, &a), 3.0);
        assert_eq!(score(SchedulerKind::Hrrn, &s, &b), 1.5);
        let order = HeuristicScheduler::new(SchedulerKind::Hrrn).order(&s);
        assert_eq!(order[0].id, 0);
    }

    #[test]
    fn sjf_orders_by_duration() {
        let s = state(0, vec![job(0, 1, 3, 0), job(1, 1, 1, 0), job(2, 1, 2, 0)], 8);
        let order: Vec<u32> = HeuristicScheduler::new(SchedulerKind::Sjf).order(&s).iter().map(|j| j.duration).collect();
        assert_eq!(order, vec![1, 2, 3]);
    }

    #[test]
    fn tetris_prefers_aligned_jobs() {
        let s = state(0, vec![job(0, 2, 2, 0), job(1, 8, 2, 0), job(2, 4, 2, 0)], 8);
        let order: Vec<u32> = HeuristicScheduler::new(SchedulerKind::Tetris).order(&s).iter().map(|j| j.cores).collect();
        assert_eq!(order, vec![8, 4, 2]);
    }

    #[test]
    fn fifo_ties_break_on_submit_then_id() {
        let mut a = job(5, 1, 1, 2);
        a.submit = 1;
        let mut b = job(3, 1, 1, 2);
        b.submit = 2;
        let c = job(9, 1, 1, 1);
        let s = state(3, vec![a, b, c], 8);
        let order: Vec<u64> = HeuristicScheduler::new(SchedulerKind::Fifo).order(&s).iter().map(|j| j.id).collect();
        assert_eq!(order, vec![9, 5, 3]);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("FIFO".parse::<SchedulerKind>(), Ok(SchedulerKind::Fifo));
        assert_eq!("random:4".parse::<SchedulerKind>(), Ok(SchedulerKind::Random { seed: 4 }));
        assert!("lifo".parse::<SchedulerKind>().is_err());
    }

    #[test]
    fn empty_trace_zero_metrics() {
        let trace = WorkloadTrace::new(vec![], 5).unwrap();
        let cap = CapacitySeries::constant(4, 5);
        let r = run_heuristic(SchedulerKind::Fifo, &trace, &cap, RewardWeights::default()).unwrap();
        assert_eq!(r.metrics, Metrics::default());
    }

    #[test]
    fn single_job_fifo() {
        let j = JobRequest { id: 0, cores: 2, duration: 2, earliest: 1, latest: 2, submit: 0 };
        let trace = WorkloadTrace::new(vec![j], 4).unwrap();
        let cap = CapacitySeries::constant(2, 4);
        let r = run_heuristic(SchedulerKind::Fifo, &trace, &cap, RewardWeights::default()).unwrap();
        assert_eq!(r.schedule, vec![(0, 1)]);
        assert_eq!(r.metrics.utilization, 4.0);
        assert_eq!(r.metrics.time_delay, 0.0);
    }

    fn arb_jobs() -> impl Strategy<Value = (Vec<JobRequest>, i64)> {
        (prop::collection::vec((1u32..9, 1u32..5), 0..12), -5i64..30).prop_map(|(v, budget)| {
            (v.into_iter().enumerate().map(|(i, (c, d))| job(i as u64, c, d, 0)).collect(), budget)
        })
    }

    proptest! {
        #[test]
        fn prefix_fits_budget_and_is_prefix((jobs, budget) in arb_jobs()) {
            let sel = select_prefix(&jobs, budget);
            let total: i64 = sel.job_ids.iter().map(|&id| i64::from(jobs[id as usize].cores)).sum();
            prop_assert!(total <= budget.max(0));
            let prefix: Vec<u64> = jobs.iter().take(sel.job_ids.len()).map(|j| j.id).collect();
            prop_assert_eq!(&sel.job_ids, &prefix);
            let all: i64 = jobs.iter().map(|j| i64::from(j.cores)).sum();
            if all <= budget {
                prop_assert_eq!(sel.job_ids.len(), jobs.len());
            }
        }
    }
}
