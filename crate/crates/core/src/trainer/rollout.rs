use rand::Rng;
use rayon::prelude::*;

use crate::osdec::{aux_targets, AuxSample, JobFeatures, OsdecAgent, OsdecModel, ScoreMode};
use crate::seeding::{pair_index, stream_rng, Purpose};
use crate::simenv::{episode_metrics, Environment, Metrics, RewardWeights};
use crate::workload::{generate_workload, CapacitySeries, SyntheticSpec, WorkloadTrace};

use super::{PpoConfig, TrainError};

/// Traces an episode can be drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePool {
    items: Vec<(WorkloadTrace, CapacitySeries)>,
}

impl TracePool {
    pub fn new(items: Vec<(WorkloadTrace, CapacitySeries)>) -> Result<Self, TrainError> {
        if items.is_empty() {
            return Err(TrainError::Config("trace pool is empty".into()));
        }
        if let Some((i, _)) = items.iter().enumerate().find(|(_, (t, c))| c.len() < t.horizon() as usize) {
            return Err(TrainError::Config(format!("trace {i}: capacity series shorter than the horizon")));
        }
        Ok(Self { items })
    }

    /// `count` synthetic traces with seeds `spec.seed, spec.seed + 1, …`.
    pub fn synthetic(spec: &SyntheticSpec, count: usize) -> Result<Self, TrainError> {
        let items = (0..count as u64)
            .map(|k| generate_workload(&SyntheticSpec { seed: spec.seed + k, ..spec.clone() }))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        Self::new(items)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> (&WorkloadTrace, &CapacitySeries) {
        let (t, c) = &self.items[i];
        (t, c)
    }

    pub fn items(&self) -> &[(WorkloadTrace, CapacitySeries)] {
        &self.items
    }
}

/// One decision of the behaviour policy.
#[derive(Debug, Clone)]
pub struct Transition {
    pub episode: usize,
    pub t: u32,
    pub features: JobFeatures,
    pub scores: Vec<f64>,
    pub log_prob_old: f64,
    /// Scaled reward.
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    pub advantage: f64,
    pub value_target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub trace_index: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Default)]
pub struct TrajectoryBatch {
    pub transitions: Vec<Transition>,
    pub aux_samples: Vec<AuxSample>,
    pub episodes: Vec<EpisodeSummary>,
}

struct EpisodePlan {
    trace_index: usize,
    stream: u64,
}

fn plan_episodes(pool: &TracePool, cfg: &PpoConfig, iteration: usize) -> Vec<EpisodePlan> {
    let mut plans = Vec::new();
    let mut steps = 0usize;
    while steps < cfg.batch_size {
        let stream = pair_index(iteration as u64, plans.len() as u64);
        let trace_index = stream_rng(cfg.seed, Purpose::TracePool, stream).random_range(0..pool.len());
        steps += (pool.get(trace_index).0.horizon() as usize).max(1);
        plans.push(EpisodePlan { trace_index, stream });
    }
    plans
}

/// Builds a thread pool with `workers` threads.
pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool, TrainError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| TrainError::Config(format!("cannot start workers: {e}")))
}

/// Runs stochastic episodes until at least `batch_size` transitions exist.
///
/// Episode `e` of iteration `i` draws its trace and its score noise from
/// streams keyed by `(seed, i, e)`, so the batch does not depend on how many
/// workers execute it.
pub fn collect_rollouts(
    model: &OsdecModel,
    pool: &TracePool,
    cfg: &PpoConfig,
    weights: RewardWeights,
    iteration: usize,
    workers: &rayon::ThreadPool,
) -> Result<TrajectoryBatch, TrainError> {
    let plans = plan_episodes(pool, cfg, iteration);
    let episodes: Vec<_> = workers.install(|| {
        plans
            .par_iter()
            .map(|p| {
                let (trace, capacity) = pool.get(p.trace_index);
                let rng = stream_rng(cfg.seed, Purpose::Rollout, p.stream);
                run_stochastic_episode(model, trace, capacity, weights, rng, cfg.reward_scale)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut batch = TrajectoryBatch::default();
    for (e, ((mut transitions, aux, metrics), plan)) in episodes.into_iter().zip(&plans).enumerate() {
        for tr in &mut transitions {
            tr.episode = e;
        }
        batch.transitions.extend(transitions);
        batch.aux_samples.extend(aux);
        batch.episodes.push(EpisodeSummary { trace_index: plan.trace_index, metrics });
    }
    Ok(batch)
}

type EpisodeRollout = (Vec<Transition>, Vec<AuxSample>, Metrics);

fn run_stochastic_episode(
    model: &OsdecModel,
    trace: &WorkloadTrace,
    capacity: &CapacitySeries,
    weights: RewardWeights,
    rng: rand_chacha::ChaCha8Rng,
    reward_scale: f64,
) -> Result<EpisodeRollout, TrainError> {
    let mut env = Environment::reset(trace, capacity, weights)?;
    let mut agent = OsdecAgent::new(model, ScoreMode::Stochastic(rng));
    let horizon = trace.horizon() as usize;
    let mut transitions = Vec::with_capacity(horizon);
    let mut aux = Vec::with_capacity(horizon);
    let mut outcomes = Vec::with_capacity(horizon);
    while !env.is_done() {
        let t = env.state().t;
        let d = agent.decide(env.state())?;
        let outcome = env.step(&d.selection)?;
        agent.observe(&outcome);
        let done = env.is_done();
        if !done {
            aux.push(AuxSample { window: d.aux_window, targets: aux_targets(env.state(), model.config()) });
        }
        transitions.push(Transition {
            episode: 0,
            t,
            features: d.features,
            scores: d.scores,
            log_prob_old: d.log_prob,
            reward: outcome.reward * reward_scale,
            value: d.value,
            done,
            advantage: 0.0,
            value_target: 0.0,
        });
        outcomes.push(outcome);
    }
    Ok((transitions, aux, episode_metrics(&outcomes)))
}
