use std::collections::VecDeque;

use crate::neuro::{gru_cell, Adam, Gradients, GruParams, Tape, Tensor, Var};
use crate::simenv::EnvState;

use super::{ModelConfig, OsdecError, OsdecModel};

/// Width of one per-step summary row fed to the GRU.
pub const SUMMARY_DIM: usize = 9;
/// Next-step prediction tasks: capacity, mean cores, mean duration, violation.
pub const AUX_TASKS: usize = 4;
pub const AUX_TASK_NAMES: [&str; AUX_TASKS] = ["capacity", "avg_cores", "avg_duration", "violation"];

/// Recurrent context carried across the steps of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxState {
    history_len: usize,
    history: VecDeque<[f64; SUMMARY_DIM]>,
    last_action: [f64; 3],
    hidden: Vec<f64>,
    low: Vec<f64>,
    high: Vec<f64>,
    predictions: [f64; AUX_TASKS],
}

/// Values produced by one pass of the aux module.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxOutput {
    pub hidden: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub predictions: [f64; AUX_TASKS],
}

/// A zero-padded history window and the realized next-step targets.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxSample {
    pub window: Vec<f64>,
    pub targets: [f64; AUX_TASKS],
}

/// Mean squared errors over a batch, observed before the update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AuxLoss {
    pub total: f64,
    pub per_task: [f64; AUX_TASKS],
}

fn mean_of(jobs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = jobs.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Normalized summary of `state` plus the statistics of the previous action.
pub fn summary_row(state: &EnvState, last_action: [f64; 3], cfg: &ModelConfig) -> [f64; SUMMARY_DIM] {
    let sc = cfg.scales;
    [
        f64::from(state.capacity_now) / sc.capacity,
        state.occupied_cores() as f64 / sc.capacity,
        state.current.len() as f64 / sc.count,
        mean_of(state.current.iter().map(|j| f64::from(j.cores))) / sc.cores,
        mean_of(state.current.iter().map(|j| f64::from(j.duration))) / sc.duration,
        state.future.len() as f64 / sc.count,
        last_action[0],
        last_action[1],
        last_action[2],
    ]
}

/// Prediction targets read off the state reached after a step. An empty
/// current set has mean cores and duration 0.
pub fn aux_targets(next: &EnvState, cfg: &ModelConfig) -> [f64; AUX_TASKS] {
    let sc = cfg.scales;
    [
        f64::from(next.capacity_now) / sc.capacity,
        mean_of(next.current.iter().map(|j| f64::from(j.cores))) / sc.cores,
        mean_of(next.current.iter().map(|j| f64::from(j.duration))) / sc.duration,
        next.violation() as f64 / sc.capacity,
    ]
}

impl AuxState {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            history_len: cfg.aux_history_len,
            history: VecDeque::with_capacity(cfg.aux_history_len),
            last_action: [0.0; 3],
            hidden: vec![0.0; cfg.aux_hidden_dim],
            low: vec![0.0; cfg.low_dim],
            high: vec![0.0; cfg.high_dim],
            predictions: [0.0; AUX_TASKS],
        }
    }

    pub fn reset(&mut self) {
        self.history.clear();
        self.last_action = [0.0; 3];
        self.hidden.fill(0.0);
        self.low.fill(0.0);
        self.high.fill(0.0);
        self.predictions = [0.0; AUX_TASKS];
    }

    pub fn low_vec(&self) -> &[f64] {
        &self.low
    }

    pub fn high_vec(&self) -> &[f64] {
        &self.high
    }

    pub fn predictions(&self) -> [f64; AUX_TASKS] {
        self.predictions
    }

    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Appends the summary of `state`, dropping the oldest row when full.
    pub fn push(&mut self, state: &EnvState, cfg: &ModelConfig) {
        if self.history.len() == self.history_len {
            self.history.pop_front();
        }
        self.history.push_back(summary_row(state, self.last_action, cfg));
    }

    /// Records what the last step deployed and the violation it produced.
    pub fn record_action(&mut self, deployed: usize, cores: u64, violation: u64, cfg: &ModelConfig) {
        let sc = cfg.scales;
        self.last_action = [deployed as f64 / sc.count, cores as f64 / sc.capacity, violation as f64 / sc.capacity];
    }

    /// `history_len × SUMMARY_DIM` window, zero rows first when the history is short.
    pub fn window(&self) -> Vec<f64> {
        let mut w = vec![0.0; (self.history_len - self.history.len()) * SUMMARY_DIM];
        for row in &self.history {
            w.extend_from_slice(row);
        }
        w
    }

    pub fn set_output(&mut self, out: AuxOutput) {
        self.hidden = out.hidden;
        self.low = out.low;
        self.high = out.high;
        self.predictions = out.predictions;
    }

    /// Refreshes the aux vectors from the current history.
    pub fn update(&mut self, model: &OsdecModel) -> Result<(), OsdecError> {
        let out = aux_forward(model, &self.window())?;
        self.set_output(out);
        Ok(())
    }
}

/// Tape handles of the aux module outputs.
pub struct AuxVars {
    pub hidden: Var,
    pub low: Var,
    pub high: Var,
    pub predictions: [Var; AUX_TASKS],
}

/// Records the aux module over a padded window on `tape`.
pub fn aux_on_tape(tape: &mut Tape<'_>, model: &OsdecModel, window: &[f64]) -> Result<AuxVars, OsdecError> {
    let cfg = model.config();
    let steps = cfg.aux_history_len;
    if window.len() != steps * SUMMARY_DIM {
        return Err(OsdecError::Features(format!(
            "aux window has {} values, expected {}",
            window.len(),
            steps * SUMMARY_DIM
        )));
    }
    let ids = &model.ids().aux;
    let g = ids.gru;
    let p = GruParams {
        wz: tape.param(g[0]),
        uz: tape.param(g[1]),
        bz: tape.param(g[2]),
        wr: tape.param(g[3]),
        ur: tape.param(g[4]),
        br: tape.param(g[5]),
        wh: tape.param(g[6]),
        uh: tape.param(g[7]),
        bh: tape.param(g[8]),
    };
    let mut h = tape.constant(Tensor::zeros(&[1, cfg.aux_hidden_dim]));
    for row in window.chunks(SUMMARY_DIM) {
        let x = tape.constant(Tensor::matrix(1, SUMMARY_DIM, row.to_vec())?);
        h = gru_cell(tape, x, h, &p)?;
    }
    let low = ids.shared.apply(tape, h)?;
    let low = tape.tanh(low);
    let mut tasks = Vec::with_capacity(AUX_TASKS);
    let mut predictions = Vec::with_capacity(AUX_TASKS);
    for k in 0..AUX_TASKS {
        let task = ids.tasks[k].apply(tape, low)?;
        let task = tape.tanh(task);
        predictions.push(ids.preds[k].apply(tape, task)?);
        tasks.push(task);
    }
    let mut high = tasks[0];
    for &t in &tasks[1..] {
        high = tape.add(high, t)?;
    }
    let high = tape.scale(high, 1.0 / AUX_TASKS as f64);
    let predictions = [predictions[0], predictions[1], predictions[2], predictions[3]];
    Ok(AuxVars { hidden: h, low, high, predictions })
}

/// Runs the GRU over a padded history window and reads off the aux vectors.
pub fn aux_forward(model: &OsdecModel, window: &[f64]) -> Result<AuxOutput, OsdecError> {
    let mut tape = Tape::new(model.store());
    let v = aux_on_tape(&mut tape, model, window)?;
    let mut predictions = [0.0; AUX_TASKS];
    for (p, var) in predictions.iter_mut().zip(v.predictions) {
        *p = tape.value(var).item();
    }
    Ok(AuxOutput {
        hidden: tape.value(v.hidden).data().to_vec(),
        low: tape.value(v.low).data().to_vec(),
        high: tape.value(v.high).data().to_vec(),
        predictions,
    })
}

/// One Adam step on the aux parameters over `samples`, minimizing the mean of
/// the summed per-task squared errors. Returns the errors seen before the step.
pub fn aux_train_step(
    model: &mut OsdecModel,
    adam: &mut Adam,
    samples: &[AuxSample],
    lr: f64,
) -> Result<AuxLoss, OsdecError> {
    if samples.is_empty() {
        return Ok(AuxLoss::default());
    }
    let weight = model.config().aux_loss_weight();
    let n = samples.len() as f64;
    let mut grads = Gradients::zeros_like(model.store());
    let mut loss = AuxLoss::default();
    for s in samples {
        let mut tape = Tape::new(model.store());
        let v = aux_on_tape(&mut tape, model, &s.window)?;
        let mut terms = Vec::with_capacity(AUX_TASKS);
        for k in 0..AUX_TASKS {
            let e = tape.squared_error(v.predictions[k], &[s.targets[k]])?;
            loss.per_task[k] += tape.value(e).item() / n;
            terms.push(e);
        }
        let mut total = terms[0];
        for &e in &terms[1..] {
            total = tape.add(total, e)?;
        }
        tape.backward_into(total, &mut grads, weight / n)?;
    }
    loss.total = loss.per_task.iter().sum();
    if !loss.total.is_finite() {
        return Err(OsdecError::NonFinite("aux loss".into()));
    }
    adam.step(model.store_mut(), &grads, lr)?;
    Ok(loss)
}
