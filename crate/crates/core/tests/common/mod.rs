//! Shared generators and independent reference computations.
#![allow(dead_code)]

use std::collections::BTreeMap;

use defersched::simenv::RewardWeights;
use defersched::workload::{CapacitySeries, JobRequest, WorkloadTrace};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const CORES: [u32; 4] = [1, 2, 4, 8];

/// Shape of a random small instance.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub max_jobs: usize,
    pub max_horizon: u32,
    /// Windows hold at most `max_window + 1` start times.
    pub max_window: u32,
    /// Largest gap between submission and earliest start.
    pub max_lead: u32,
}

/// A small random instance with a jagged capacity series in `0..=10`.
pub fn small_instance(rng: &mut ChaCha8Rng, shape: Shape) -> (WorkloadTrace, CapacitySeries) {
    let Shape { max_jobs, max_horizon, max_window, max_lead } = shape;
    let horizon = rng.random_range(4..=max_horizon);
    let n = rng.random_range(1..=max_jobs);
    let jobs = (0..n as u64)
        .map(|id| {
            let earliest = rng.random_range(0..horizon);
            let lead = rng.random_range(0..=max_lead).min(earliest);
            JobRequest {
                id,
                cores: CORES[rng.random_range(0..CORES.len())],
                duration: rng.random_range(1..=4),
                earliest,
                latest: earliest + rng.random_range(0..=max_window),
                submit: earliest - lead,
            }
        })
        .collect();
    let capacity = (0..horizon).map(|_| rng.random_range(0..=10)).collect();
    (WorkloadTrace::new(jobs, horizon).unwrap(), CapacitySeries::new(capacity))
}

/// Offline objective computed directly from occupancy, independent of the solver.
pub fn reference_objective(
    jobs: &[JobRequest],
    capacity: &[u32],
    horizon: u32,
    weights: RewardWeights,
    starts: &BTreeMap<u64, u32>,
) -> f64 {
    let mut occupancy = vec![0i64; horizon as usize];
    let mut value = 0.0;
    for job in jobs {
        if let Some(&s) = starts.get(&job.id) {
            value += f64::from(job.cores * job.duration) - weights.omega1 * f64::from(s - job.earliest);
            for t in s..(s + job.duration).min(horizon) {
                occupancy[t as usize] += i64::from(job.cores);
            }
        }
    }
    let violation: i64 = occupancy.iter().zip(capacity).map(|(&o, &c)| (o - i64::from(c)).max(0)).sum();
    value - weights.omega2 * violation as f64
}

/// Best objective over every assignment of a start time (or none) to each job.
pub fn enumerate_best(jobs: &[JobRequest], capacity: &[u32], horizon: u32, weights: RewardWeights) -> f64 {
    fn go(
        k: usize,
        jobs: &[JobRequest],
        capacity: &[u32],
        horizon: u32,
        weights: RewardWeights,
        starts: &mut BTreeMap<u64, u32>,
        best: &mut f64,
    ) {
        if k == jobs.len() {
            *best = best.max(reference_objective(jobs, capacity, horizon, weights, starts));
            return;
        }
        go(k + 1, jobs, capacity, horizon, weights, starts, best);
        let j = jobs[k];
        let last = j.latest.min(horizon - 1);
        for s in j.earliest..=last {
            starts.insert(j.id, s);
            go(k + 1, jobs, capacity, horizon, weights, starts, best);
            starts.remove(&j.id);
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(0, jobs, capacity, horizon, weights, &mut BTreeMap::new(), &mut best);
    best
}

/// `A_t = Σ_l (γλ)^l δ_{t+l}` summed term by term.
pub fn explicit_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| {
            let next = if t + 1 < n { values[t + 1] } else { 0.0 };
            rewards[t] + gamma * next - values[t]
        })
        .collect();
    (0..n).map(|t| (t..n).map(|l| (gamma * lambda).powi((l - t) as i32) * delta[l]).sum()).collect()
}
