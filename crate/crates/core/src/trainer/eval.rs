use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::osdec::{OsdecAgent, OsdecModel, ScoreMode};
use crate::schedulers::run_episode;
use crate::simenv::{Metrics, RewardWeights};

use super::{TracePool, TrainError};

/// Deterministic-policy statistics over a set of evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_reward: f64,
    /// Population standard deviation of episode total reward.
    pub std_reward: f64,
    pub utilization: f64,
    pub time_delay: f64,
    pub violation_penalty: f64,
}

impl EvalReport {
    pub fn from_metrics(metrics: &[Metrics]) -> Self {
        let n = metrics.len().max(1) as f64;
        let mean = metrics.iter().map(|m| m.total_reward).sum::<f64>() / n;
        let var = metrics.iter().map(|m| (m.total_reward - mean).powi(2)).sum::<f64>() / n;
        Self {
            episodes: metrics.len(),
            mean_reward: mean,
            std_reward: var.sqrt(),
            utilization: metrics.iter().map(|m| m.utilization).sum::<f64>() / n,
            time_delay: metrics.iter().map(|m| m.time_delay).sum::<f64>() / n,
            violation_penalty: metrics.iter().map(|m| m.violation_penalty).sum::<f64>() / n,
        }
    }
}

/// Runs `n` episodes with scores fixed at μ; episode `i` uses trace `i mod |pool|`.
pub fn evaluate(
    model: &OsdecModel,
    pool: &TracePool,
    n: usize,
    weights: RewardWeights,
    workers: &rayon::ThreadPool,
) -> Result<EvalReport, TrainError> {
    let distinct = n.min(pool.len());
    // the policy is deterministic, so repeated traces give repeated results
    let per_trace: Vec<Metrics> = workers.install(|| {
        (0..distinct)
            .into_par_iter()
            .map(|i| {
                let (trace, capacity) = pool.get(i);
                let mut agent = OsdecAgent::new(model, ScoreMode::Deterministic);
                run_episode(&mut agent, trace, capacity, weights).map(|r| r.metrics)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let all: Vec<Metrics> = (0..n).map(|i| per_trace[i % pool.len()]).collect();
    Ok(EvalReport::from_metrics(&all))
}
