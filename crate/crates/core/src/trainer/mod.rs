//! PPO training of the learned scheduler.
//!
//! Every iteration collects stochastic episodes in parallel from one frozen
//! parameter snapshot, computes GAE advantages, fits the aux module on the
//! realized next-step targets, runs clipped-surrogate and value updates, and
//! evaluates the deterministic policy. Learning rates decay linearly.

mod config;
mod eval;
mod gae;
mod rollout;
mod update;

pub use config::{LrSchedule, PpoConfig};
pub use eval::{evaluate, EvalReport};
pub use gae::{compute_gae, normalize_advantages};
pub use rollout::{collect_rollouts, worker_pool, EpisodeSummary, TracePool, TrajectoryBatch, Transition};
pub use update::{aux_epoch, aux_errors, minibatch_report, ppo_update, LossReport, PpoOptimizers};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neuro::NeuroError;
use crate::osdec::{OsdecError, OsdecModel, AUX_TASKS, AUX_TASK_NAMES};
use crate::simenv::{EnvError, RewardWeights};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] OsdecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<NeuroError> for TrainError {
    fn from(e: NeuroError) -> Self {
        match e {
            NeuroError::NonFinite(p) => TrainError::NonFinite(format!("gradient for parameter `{p}`")),
            other => TrainError::Model(OsdecError::Neuro(other)),
        }
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub transitions: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    /// Summed per-task aux error of the pre-update aux module on this batch.
    pub aux_loss: f64,
    pub aux_task_mse: [f64; AUX_TASKS],
    pub eval: EvalReport,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub lr_aux: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: OsdecModel,
    /// Evaluation of the parameters training started from.
    pub initial_eval: EvalReport,
    pub log: Vec<IterationRecord>,
}

/// Where to write checkpoints and failure dumps.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub out_dir: Option<PathBuf>,
}

pub const LOG_HEADER: &str =
    "iter,policy_loss,value_loss,aux_loss,eval_mean,eval_std,utilization,time_delay,violation,lr_policy,lr_value";

/// The iteration log as CSV with [`LOG_HEADER`].
pub fn log_csv(log: &[IterationRecord]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in log {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.iter,
            r.policy_loss,
            r.value_loss,
            r.aux_loss,
            r.eval.mean_reward,
            r.eval.std_reward,
            r.eval.utilization,
            r.eval.time_delay,
            r.eval.violation_penalty,
            r.lr_policy,
            r.lr_value
        )
        .expect("string write");
    }
    out
}

/// Per-task aux errors, one row per iteration.
pub fn aux_log_csv(log: &[IterationRecord]) -> String {
    let mut out = format!("iter,{},lr_aux\n", AUX_TASK_NAMES.join(","));
    for r in log {
        let tasks: Vec<String> = r.aux_task_mse.iter().map(f64::to_string).collect();
        writeln!(out, "{},{},{}", r.iter, tasks.join(","), r.lr_aux).expect("string write");
    }
    out
}

fn dump_params(model: &OsdecModel, out: Option<&Path>) -> Option<PathBuf> {
    let dir = out?.join("nonfinite_dump");
    model.save(&dir).ok().map(|_| dir)
}

/// Trains `model` for `cfg.iterations` iterations.
///
/// Each iteration: collect rollouts, compute advantages, one aux epoch,
/// `epochs_per_update` PPO epochs, deterministic evaluation on `eval_pool`.
pub fn train(
    mut model: OsdecModel,
    train_pool: &TracePool,
    eval_pool: &TracePool,
    cfg: &PpoConfig,
    weights: RewardWeights,
    options: &TrainOptions,
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    let workers = worker_pool(cfg.workers)?;
    let initial_eval = evaluate(&model, eval_pool, cfg.eval_trajectories, weights, &workers)?;
    let mut opt = PpoOptimizers::new(&model);
    let mut log = Vec::with_capacity(cfg.iterations);
    let out_dir = options.out_dir.as_deref();
    for iter in 0..cfg.iterations {
        let lr_policy = cfg.policy_lr.at(iter, cfg.iterations);
        let lr_value = cfg.value_lr.at(iter, cfg.iterations);
        let lr_aux = cfg.aux_lr.at(iter, cfg.iterations);

        let mut batch = collect_rollouts(&model, train_pool, cfg, weights, iter, &workers)?;
        compute_gae(&mut batch.transitions, cfg.gamma, cfg.lambda, cfg.normalize_advantages)?;

        let aux = aux_errors(&model, &batch.aux_samples, &workers)?;
        aux_epoch(&mut model, &mut opt.aux, &batch.aux_samples, cfg, iter, lr_aux)?;

        let report = match ppo_update(&mut model, &mut opt, &batch.transitions, cfg, iter, lr_policy, lr_value, &workers) {
            Ok(r) => r,
            Err(TrainError::NonFinite(what)) => {
                let dump = dump_params(&model, out_dir);
                let at = dump.map_or(String::new(), |p| format!("; parameters saved to {}", p.display()));
                return Err(TrainError::NonFinite(format!("{what}{at}")));
            }
            Err(e) => return Err(e),
        };
        let eval = evaluate(&model, eval_pool, cfg.eval_trajectories, weights, &workers)?;
        log::info!(
            "iter {iter}: eval {:.2} ± {:.2}, policy {:.4}, value {:.4}, aux {:.5}",
            eval.mean_reward,
            eval.std_reward,
            report.policy_loss,
            report.value_loss,
            aux.total
        );
        log.push(IterationRecord {
            iter,
            transitions: batch.transitions.len(),
            policy_loss: report.policy_loss,
            value_loss: report.value_loss,
            mean_ratio: report.mean_ratio,
            clip_fraction: report.clip_fraction,
            aux_loss: aux.total,
            aux_task_mse: aux.per_task,
            eval,
            lr_policy,
            lr_value,
            lr_aux,
        });
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 {
                model.save(&dir.join("checkpoints").join(format!("iter_{:04}", iter + 1)))?;
            }
        }
    }
    Ok(TrainOutput { model, initial_eval, log })
}
