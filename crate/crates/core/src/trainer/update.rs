use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::neuro::{Adam, Gradients, Tape};
use crate::osdec::{aux_train_step, sample_loss, AuxLoss, AuxSample, OsdecModel, AUX_TASKS};
use crate::seeding::{pair_index, stream_rng, Purpose};

use super::{PpoConfig, TrainError, Transition};

/// Samples per gradient chunk; chunk sums are reduced in a fixed order so the
/// result does not depend on the number of threads.
const CHUNK: usize = 8;
/// Shuffle stream used for the aux epoch, past any PPO epoch index.
const AUX_SHUFFLE_EPOCH: u64 = 1 << 16;

/// Adam state for the policy (embedding, encoder, μ/σ heads) and for the
/// value path (embedding, encoder, value head). The encoder receives both.
#[derive(Debug, Clone)]
pub struct PpoOptimizers {
    pub policy: Adam,
    pub value: Adam,
    pub aux: Adam,
}

impl PpoOptimizers {
    pub fn new(model: &OsdecModel) -> Self {
        let policy_ids = model.policy_param_ids();
        let mut value_ids: Vec<_> = policy_ids
            .iter()
            .copied()
            .filter(|&id| {
                let n = model.store().name(id);
                !n.starts_with("mu.") && !n.starts_with("sigma.")
            })
            .collect();
        value_ids.extend(model.value_param_ids());
        Self {
            policy: Adam::new(model.store(), policy_ids),
            value: Adam::new(model.store(), value_ids),
            aux: Adam::new(model.store(), model.aux_param_ids()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    /// Mean of the negated clipped surrogate.
    pub policy_loss: f64,
    pub value_loss: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    /// Mean unclipped surrogate `ρA`, for comparison with the clipped one.
    pub unclipped_objective: f64,
}

struct ChunkResult {
    policy: Gradients,
    value: Gradients,
    report: LossReport,
}

fn chunk_gradients(
    model: &OsdecModel,
    samples: &[&Transition],
    epsilon: f64,
    scale: f64,
) -> Result<ChunkResult, TrainError> {
    let mut pg = Gradients::zeros_like(model.store());
    let mut vg = Gradients::zeros_like(model.store());
    let mut r = LossReport::default();
    for tr in samples {
        let mut tape = Tape::new(model.store());
        let loss = sample_loss(
            &mut tape,
            model,
            &tr.features,
            &tr.scores,
            tr.log_prob_old,
            tr.advantage,
            epsilon,
            tr.value_target,
        )?;
        if let (Some(lp), Some(surr)) = (loss.log_prob, loss.surrogate) {
            let ratio = (tape.value(lp).item() - tr.log_prob_old).exp();
            r.policy_loss -= tape.value(surr).item();
            r.mean_ratio += ratio;
            r.unclipped_objective += ratio * tr.advantage;
            if (ratio - 1.0).abs() > epsilon {
                r.clip_fraction += 1.0;
            }
            let neg = tape.scale(surr, -1.0);
            tape.backward_into(neg, &mut pg, scale)?;
        } else {
            // no visible job: the action is forced, the ratio is 1 and the
            // surrogate is the constant A
            r.policy_loss -= tr.advantage;
            r.mean_ratio += 1.0;
            r.unclipped_objective += tr.advantage;
        }
        r.value_loss += tape.value(loss.value_error).item();
        tape.backward_into(loss.value_error, &mut vg, scale)?;
    }
    Ok(ChunkResult { policy: pg, value: vg, report: r })
}

fn add_report(acc: &mut LossReport, r: &LossReport) {
    acc.policy_loss += r.policy_loss;
    acc.value_loss += r.value_loss;
    acc.mean_ratio += r.mean_ratio;
    acc.clip_fraction += r.clip_fraction;
    acc.unclipped_objective += r.unclipped_objective;
}

/// Minibatch gradients of the mean negated clipped surrogate and of the mean
/// squared value error, plus the raw sums behind the loss report.
fn minibatch_gradients(
    model: &OsdecModel,
    batch: &[&Transition],
    epsilon: f64,
    workers: &rayon::ThreadPool,
) -> Result<(Gradients, Gradients, LossReport), TrainError> {
    let scale = 1.0 / batch.len() as f64;
    let chunks: Vec<ChunkResult> = workers.install(|| {
        batch.par_chunks(CHUNK).map(|c| chunk_gradients(model, c, epsilon, scale)).collect::<Result<Vec<_>, _>>()
    })?;
    let mut pg = Gradients::zeros_like(model.store());
    let mut vg = Gradients::zeros_like(model.store());
    let mut report = LossReport::default();
    for c in chunks {
        pg.add_scaled(&c.policy, 1.0);
        vg.add_scaled(&c.value, 1.0);
        add_report(&mut report, &c.report);
    }
    Ok((pg, vg, report))
}

/// The per-minibatch check behind the clip bound: mean clipped surrogate never
/// exceeds the mean unclipped one.
pub fn minibatch_report(model: &OsdecModel, batch: &[&Transition], epsilon: f64) -> Result<LossReport, TrainError> {
    let mut r = chunk_gradients(model, batch, epsilon, 0.0)?.report;
    let n = batch.len().max(1) as f64;
    r.policy_loss /= n;
    r.value_loss /= n;
    r.mean_ratio /= n;
    r.clip_fraction /= n;
    r.unclipped_objective /= n;
    Ok(r)
}

/// `epochs_per_update` passes of shuffled minibatches. Each minibatch takes one
/// policy step and one value step.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    model: &mut OsdecModel,
    opt: &mut PpoOptimizers,
    transitions: &[Transition],
    cfg: &PpoConfig,
    iteration: usize,
    policy_lr: f64,
    value_lr: f64,
    workers: &rayon::ThreadPool,
) -> Result<LossReport, TrainError> {
    let mut total = LossReport::default();
    let mut seen = 0usize;
    for epoch in 0..cfg.epochs_per_update {
        let mut order: Vec<usize> = (0..transitions.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, Purpose::Shuffle, pair_index(iteration as u64, epoch as u64)));
        for idx in order.chunks(cfg.minibatch_size) {
            let batch: Vec<&Transition> = idx.iter().map(|&i| &transitions[i]).collect();
            let (pg, vg, report) = minibatch_gradients(model, &batch, cfg.epsilon, workers)?;
            if !(report.policy_loss.is_finite() && report.value_loss.is_finite()) {
                return Err(TrainError::NonFinite(format!(
                    "loss at iteration {iteration}, epoch {epoch} (policy {}, value {})",
                    report.policy_loss, report.value_loss
                )));
            }
            opt.policy.step(model.store_mut(), &pg, policy_lr)?;
            opt.value.step(model.store_mut(), &vg, value_lr)?;
            add_report(&mut total, &report);
            seen += batch.len();
        }
    }
    let n = seen.max(1) as f64;
    Ok(LossReport {
        policy_loss: total.policy_loss / n,
        value_loss: total.value_loss / n,
        mean_ratio: total.mean_ratio / n,
        clip_fraction: total.clip_fraction / n,
        unclipped_objective: total.unclipped_objective / n,
    })
}

/// Per-task mean squared error of the current aux module on `samples`.
pub fn aux_errors(model: &OsdecModel, samples: &[AuxSample], workers: &rayon::ThreadPool) -> Result<AuxLoss, TrainError> {
    if samples.is_empty() {
        return Ok(AuxLoss::default());
    }
    let preds: Vec<[f64; AUX_TASKS]> = workers.install(|| {
        samples
            .par_iter()
            .map(|s| crate::osdec::aux_forward(model, &s.window).map(|o| o.predictions))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut loss = AuxLoss::default();
    for (p, s) in preds.iter().zip(samples) {
        for ((acc, pk), tk) in loss.per_task.iter_mut().zip(p).zip(&s.targets) {
            *acc += (pk - tk).powi(2);
        }
    }
    for v in &mut loss.per_task {
        *v /= samples.len() as f64;
    }
    loss.total = loss.per_task.iter().sum();
    Ok(loss)
}

/// One shuffled pass over the aux samples in minibatches.
pub fn aux_epoch(
    model: &mut OsdecModel,
    adam: &mut Adam,
    samples: &[AuxSample],
    cfg: &PpoConfig,
    iteration: usize,
    lr: f64,
) -> Result<(), TrainError> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut stream_rng(cfg.seed, Purpose::Shuffle, pair_index(iteration as u64, AUX_SHUFFLE_EPOCH)));
    for idx in order.chunks(cfg.minibatch_size) {
        let batch: Vec<AuxSample> = idx.iter().map(|&i| samples[i].clone()).collect();
        aux_train_step(model, adam, &batch, lr)?;
    }
    Ok(())
}
