use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::neuro::{gaussian_log_density, NeuroError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::schedulers::select_prefix;
use crate::seeding::{stream_rng, Purpose};
use crate::simenv::Selection;
use crate::workload::JobRequest;

use super::{JobFeatures, ModelConfig, OsdecError, SUMMARY_DIM};

pub const PARAMS_FILE: &str = "params.json";
pub const CONFIG_FILE: &str = "model_config.json";

/// Affine layer `x·W + b`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var, NeuroError> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        tape.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderLayer {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub ln1: (ParamId, ParamId),
    pub ffn1: Dense,
    pub ffn2: Dense,
    pub ln2: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
pub(crate) struct AuxIds {
    /// `W_z, U_z, b_z, W_r, U_r, b_r, W_h, U_h, b_h`.
    pub gru: [ParamId; 9],
    pub shared: Dense,
    pub tasks: [Dense; 4],
    pub preds: [Dense; 4],
}

#[derive(Debug, Clone)]
pub(crate) struct ModelIds {
    pub embed: Dense,
    pub layers: Vec<EncoderLayer>,
    pub mu: (Dense, Dense),
    pub sigma: (Dense, Dense),
    pub value: Dense,
    pub aux: AuxIds,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn matrix(&mut self, name: &str, rows: usize, cols: usize, gain: f64) -> ParamId {
        let limit = gain * (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.random_range(-limit..=limit)).collect();
        self.store.insert(name, Tensor::matrix(rows, cols, data).expect("sized"))
    }

    fn vector(&mut self, name: &str, len: usize, value: f64) -> ParamId {
        self.store.insert(name, Tensor::filled(&[len], value))
    }

    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Dense {
        let w = self.matrix(&format!("{name}.w"), fan_in, fan_out, gain);
        let b = self.vector(&format!("{name}.b"), fan_out, 0.0);
        Dense { w, b }
    }
}

/// Policy network, value head and aux module with their parameters.
#[derive(Debug, Clone)]
pub struct OsdecModel {
    config: ModelConfig,
    store: ParamStore,
    ids: ModelIds,
}

/// Network outputs over the `k_max` current-job slots.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub value: f64,
    pub mask: Vec<bool>,
}

pub(crate) struct HeadVars {
    /// `m×1` over the active slots, absent when no current job is visible.
    pub mu: Option<Var>,
    pub sigma: Option<Var>,
    pub value: Var,
    pub slots: Vec<usize>,
}

impl OsdecModel {
    /// Xavier-initialized weights, zero biases and unit layer-norm gains. The
    /// μ output layer starts scaled by 0.01 and the aux prediction heads at zero.
    pub fn new(config: ModelConfig) -> Result<Self, OsdecError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let ids = {
            let mut init = Init { store: &mut store, rng: stream_rng(config.init_seed, Purpose::Init, 0) };
            let (d, f) = (config.d_model, config.ffn_hidden);
            let embed = init.dense("embed", config.feature_dim(), d, 1.0);
            let layers = (0..config.encoder_layers)
                .map(|l| EncoderLayer {
                    wq: init.matrix(&format!("enc{l}.wq"), d, d, 1.0),
                    wk: init.matrix(&format!("enc{l}.wk"), d, d, 1.0),
                    wv: init.matrix(&format!("enc{l}.wv"), d, d, 1.0),
                    ln1: (init.vector(&format!("enc{l}.ln1.g"), d, 1.0), init.vector(&format!("enc{l}.ln1.b"), d, 0.0)),
                    ffn1: init.dense(&format!("enc{l}.ffn1"), d, f, 1.0),
                    ffn2: init.dense(&format!("enc{l}.ffn2"), f, d, 1.0),
                    ln2: (init.vector(&format!("enc{l}.ln2.g"), d, 1.0), init.vector(&format!("enc{l}.ln2.b"), d, 0.0)),
                })
                .collect();
            let mu = (init.dense("mu.1", d, f, 1.0), init.dense("mu.2", f, 1, 0.01));
            let sigma = (init.dense("sigma.1", d, f, 1.0), init.dense("sigma.2", f, 1, 1.0));
            let value = init.dense("value", d, 1, 1.0);
            let (h, lo, hi) = (config.aux_hidden_dim, config.low_dim, config.high_dim);
            let mut gru = Vec::with_capacity(9);
            for gate in ["z", "r", "h"] {
                gru.push(init.matrix(&format!("aux.gru.w{gate}"), SUMMARY_DIM, h, 1.0));
                gru.push(init.matrix(&format!("aux.gru.u{gate}"), h, h, 1.0));
                gru.push(init.vector(&format!("aux.gru.b{gate}"), h, 0.0));
            }
            let shared = init.dense("aux.shared", h, lo, 1.0);
            let tasks = std::array::from_fn(|k| init.dense(&format!("aux.task{k}"), lo, hi, 1.0));
            let preds = std::array::from_fn(|k| init.dense(&format!("aux.pred{k}"), hi, 1, 0.0));
            let aux = AuxIds { gru: gru.try_into().expect("nine gates"), shared, tasks, preds };
            ModelIds { embed, layers, mu, sigma, value, aux }
        };
        Ok(Self { config, store, ids })
    }

    /// Adopts the values of `loaded`, which must hold exactly this configuration's tensors.
    pub fn from_store(config: ModelConfig, loaded: &ParamStore) -> Result<Self, OsdecError> {
        let mut model = Self::new(config)?;
        if loaded.len() != model.store.len() {
            return Err(OsdecError::Checkpoint(format!(
                "checkpoint has {} tensors, configuration needs {}",
                loaded.len(),
                model.store.len()
            )));
        }
        for id in model.store.ids().collect::<Vec<_>>() {
            let name = model.store.name(id).to_string();
            let src = loaded.get(loaded.id(&name).map_err(|_| OsdecError::Checkpoint(format!("missing tensor `{name}`")))?);
            if src.shape() != model.store.get(id).shape() {
                return Err(OsdecError::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    src.shape(),
                    model.store.get(id).shape()
                )));
            }
            *model.store.get_mut(id) = src.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub(crate) fn ids(&self) -> &ModelIds {
        &self.ids
    }

    /// Embedding, encoder and μ/σ heads.
    pub fn policy_param_ids(&self) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&id| {
                let n = self.store.name(id);
                !n.starts_with("value.") && !n.starts_with("aux.")
            })
            .collect()
    }

    pub fn value_param_ids(&self) -> Vec<ParamId> {
        self.store.ids_with_prefix("value.").collect()
    }

    pub fn aux_param_ids(&self) -> Vec<ParamId> {
        self.store.ids_with_prefix("aux.").collect()
    }

    /// Writes the parameter file and the configuration sidecar into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), OsdecError> {
        std::fs::create_dir_all(dir)?;
        self.store.save(&dir.join(PARAMS_FILE))?;
        let cfg = serde_json::to_string_pretty(&self.config).map_err(|e| OsdecError::Checkpoint(e.to_string()))?;
        std::fs::write(dir.join(CONFIG_FILE), cfg)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, OsdecError> {
        let text = std::fs::read_to_string(dir.join(CONFIG_FILE))?;
        let config: ModelConfig = serde_json::from_str(&text).map_err(|e| OsdecError::Checkpoint(e.to_string()))?;
        let store = ParamStore::load(&dir.join(PARAMS_FILE))?;
        Self::from_store(config, &store)
    }
}

pub(crate) fn forward_on_tape(tape: &mut Tape<'_>, model: &OsdecModel, features: &JobFeatures) -> Result<HeadVars, OsdecError> {
    let cfg = model.config();
    if features.dim() != cfg.feature_dim() || features.k_max() != cfg.k_max {
        return Err(OsdecError::Features(format!(
            "features are {}×{} for k_max {}, model expects width {} and k_max {}",
            features.rows(),
            features.dim(),
            features.k_max(),
            cfg.feature_dim(),
            cfg.k_max
        )));
    }
    // masked rows never reach the network, so only the live rows are encoded
    let (packed, n, current) = features.compact();
    let ids = model.ids();
    let x = tape.constant(Tensor::matrix(n, features.dim(), packed)?);
    let mut h = ids.embed.apply(tape, x)?;
    let all = vec![true; n];
    for layer in &ids.layers {
        let (wq, wk, wv) = (tape.param(layer.wq), tape.param(layer.wk), tape.param(layer.wv));
        let att = tape.self_attention(h, wq, wk, wv, &all)?;
        let res = tape.add(h, att)?;
        let (g, b) = (tape.param(layer.ln1.0), tape.param(layer.ln1.1));
        h = tape.layer_norm(res, g, b)?;
        let hidden = layer.ffn1.apply(tape, h)?;
        let hidden = tape.relu(hidden);
        let ff = layer.ffn2.apply(tape, hidden)?;
        let res = tape.add(h, ff)?;
        let (g, b) = (tape.param(layer.ln2.0), tape.param(layer.ln2.1));
        h = tape.layer_norm(res, g, b)?;
    }
    let (mu, sigma) = if current.is_empty() {
        (None, None)
    } else {
        let cur = tape.gather_rows(h, &current)?;
        let m = ids.mu.0.apply(tape, cur)?;
        let m = tape.relu(m);
        let m = ids.mu.1.apply(tape, m)?;
        let mu = tape.tanh(m);
        let s = ids.sigma.0.apply(tape, cur)?;
        let s = tape.relu(s);
        let s = ids.sigma.1.apply(tape, s)?;
        let s = tape.softplus(s);
        let floor = tape.constant(Tensor::filled(&[current.len(), 1], cfg.sigma_min));
        (Some(mu), Some(tape.add(s, floor)?))
    };
    let v = ids.value.apply(tape, h)?;
    let value = tape.mean_rows(v)?;
    Ok(HeadVars { mu, sigma, value, slots: features.active_slots() })
}

/// Loss terms of one stored decision on a tape.
#[derive(Debug, Clone, Copy)]
pub struct SampleLoss {
    /// Log-density of the stored scores under the current parameters.
    pub log_prob: Option<Var>,
    /// Clipped surrogate; absent when no current job was visible.
    pub surrogate: Option<Var>,
    /// `(V(s) − target)²`.
    pub value_error: Var,
}

/// Records the PPO terms for one decision: the clipped surrogate of `scores`
/// against `old_log_prob` and `advantage`, and the squared value error.
#[allow(clippy::too_many_arguments)]
pub fn sample_loss(
    tape: &mut Tape<'_>,
    model: &OsdecModel,
    features: &JobFeatures,
    scores: &[f64],
    old_log_prob: f64,
    advantage: f64,
    epsilon: f64,
    value_target: f64,
) -> Result<SampleLoss, OsdecError> {
    let heads = forward_on_tape(tape, model, features)?;
    let (log_prob, surrogate) = match (heads.mu, heads.sigma) {
        (Some(mu), Some(sigma)) => {
            let cs: Vec<f64> = heads.slots.iter().map(|&s| scores[s]).collect();
            let lp = tape.gaussian_log_prob(mu, sigma, &cs)?;
            (Some(lp), Some(tape.ppo_surrogate(lp, old_log_prob, advantage, epsilon)?))
        }
        _ => (None, None),
    };
    let value_error = tape.squared_error(heads.value, &[value_target])?;
    Ok(SampleLoss { log_prob, surrogate, value_error })
}

/// μ, σ over the current-job slots and the state value.
pub fn forward(model: &OsdecModel, features: &JobFeatures) -> Result<PolicyOutput, OsdecError> {
    let mut tape = Tape::new(model.store());
    let heads = forward_on_tape(&mut tape, model, features)?;
    let k = features.k_max();
    let mut mu = vec![0.0; k];
    let mut sigma = vec![model.config().sigma_min; k];
    let mut mask = vec![false; k];
    if let (Some(m), Some(s)) = (heads.mu, heads.sigma) {
        for (i, &slot) in heads.slots.iter().enumerate() {
            mu[slot] = tape.value(m).data()[i];
            sigma[slot] = tape.value(s).data()[i];
            mask[slot] = true;
        }
    }
    Ok(PolicyOutput { mu, sigma, value: tape.value(heads.value).item(), mask })
}

fn active(out: &PolicyOutput, v: &[f64]) -> Vec<f64> {
    v.iter().zip(&out.mask).filter(|(_, &m)| m).map(|(x, _)| *x).collect()
}

/// Log-density of `scores` under the diagonal Gaussian of `out`, over unmasked slots.
pub fn log_prob(out: &PolicyOutput, scores: &[f64]) -> f64 {
    gaussian_log_density(&active(out, &out.mu), &active(out, &out.sigma), &active(out, scores))
}

/// Draws a score per unmasked slot (`μ + σ·ε`), or returns `μ` when
/// `deterministic`. Masked slots get score 0.
pub fn sample_scores<R: Rng + ?Sized>(out: &PolicyOutput, rng: &mut R, deterministic: bool) -> (Vec<f64>, f64) {
    let scores: Vec<f64> = (0..out.mu.len())
        .map(|i| match (out.mask[i], deterministic) {
            (false, _) => 0.0,
            (true, true) => out.mu[i],
            (true, false) => {
                let eps: f64 = rng.sample(StandardNormal);
                out.mu[i] + out.sigma[i] * eps
            }
        })
        .collect();
    let lp = log_prob(out, &scores);
    (scores, lp)
}

/// Orders the current jobs by score (descending, ties by ascending id) and
/// takes the strict prefix that fits `free`. Jobs outside the network view
/// score −∞.
pub fn scores_to_action(scores: &[f64], slot_ids: &[Option<u64>], current: &[JobRequest], free: i64) -> Selection {
    let mut scored: Vec<(f64, JobRequest)> = current
        .iter()
        .map(|job| {
            let s = slot_ids.iter().position(|&id| id == Some(job.id)).map_or(f64::NEG_INFINITY, |slot| scores[slot]);
            (s, *job)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
    let ordered: Vec<JobRequest> = scored.into_iter().map(|(_, j)| j).collect();
    select_prefix(&ordered, free)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::osdec::{featurize, AuxState};
    use crate::simenv::EnvState;
    use std::collections::{BTreeMap, BTreeSet};

    fn small() -> ModelConfig {
        ModelConfig { k_max: 4, d_model: 8, ffn_hidden: 8, aux_hidden_dim: 4, aux_history_len: 3, ..ModelConfig::default() }
    }

    fn job(id: u64, cores: u32) -> JobRequest {
        JobRequest { id, cores, duration: 2, earliest: 0, latest: 3, submit: 0 }
    }

    fn state(current: Vec<JobRequest>) -> EnvState {
        EnvState {
            t: 0,
            historical: vec![],
            current,
            future: vec![],
            capacity_now: 8,
            expired: BTreeSet::new(),
            deployed_log: BTreeMap::new(),
        }
    }

    #[test]
    fn output_ranges() {
        let m = OsdecModel::new(small()).unwrap();
        let s = state(vec![job(1, 2), job(2, 4), job(3, 1)]);
        let f = featurize(&s, &AuxState::new(m.config()), m.config());
        let out = forward(&m, &f).unwrap();
        assert_eq!(out.mask, vec![true, true, true, false]);
        assert!(out.sigma.iter().all(|&s| s >= 1e-3));
        assert!(out.mu.iter().all(|&v| v > -1.0 && v < 1.0));
        assert!(out.value.is_finite());
    }

    #[test]
    fn deterministic_scores_are_mu() {
        let out = PolicyOutput { mu: vec![0.3, -0.2], sigma: vec![1.0, 1.0], value: 0.0, mask: vec![true, true] };
        let mut rng = stream_rng(0, Purpose::Rollout, 0);
        let (cs, _) = sample_scores(&out, &mut rng, true);
        assert_eq!(cs, vec![0.3, -0.2]);
    }

    #[test]
    fn standard_normal_density_at_mean() {
        let out = PolicyOutput { mu: vec![0.0], sigma: vec![1.0], value: 0.0, mask: vec![true] };
        assert!((log_prob(&out, &[0.0]) + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn sample_mean_is_close_to_mu() {
        let out = PolicyOutput { mu: vec![0.4, -0.7], sigma: vec![0.5, 2.0], value: 0.0, mask: vec![true, true] };
        let mut rng = stream_rng(3, Purpose::Rollout, 0);
        let n = 10_000;
        let mut sums = [0.0; 2];
        for _ in 0..n {
            let (cs, _) = sample_scores(&out, &mut rng, false);
            sums[0] += cs[0];
            sums[1] += cs[1];
        }
        for (i, sum) in sums.iter().enumerate() {
            let mean = sum / n as f64;
            assert!((mean - out.mu[i]).abs() <= 4.0 * out.sigma[i] / (n as f64).sqrt(), "slot {i}: {mean}");
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let out = PolicyOutput { mu: vec![0.2], sigma: vec![0.7], value: 0.0, mask: vec![true] };
        let (lo, hi, steps) = (-10.0, 10.0, 200_000);
        let h = (hi - lo) / steps as f64;
        let total: f64 = (0..=steps)
            .map(|i| {
                let x = lo + i as f64 * h;
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                w * log_prob(&out, &[x]).exp()
            })
            .sum::<f64>()
            * h;
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn action_examples() {
        let jobs = vec![job(1, 2), job(2, 4), job(3, 6)];
        let slots = vec![Some(1), Some(2), Some(3)];
        let sel = scores_to_action(&[0.9, 0.5, 0.1], &slots, &jobs, 8);
        assert_eq!(sel.job_ids, vec![1, 2]);
        assert!(scores_to_action(&[0.9, 0.5, 0.1], &slots, &jobs, 0).job_ids.is_empty());
        assert!(scores_to_action(&[0.9, 0.5, 0.1], &slots, &jobs, -3).job_ids.is_empty());
        let tied = scores_to_action(&[0.2, 0.2, 0.2], &[Some(3), Some(1), Some(2)], &jobs, 100);
        assert_eq!(tied.job_ids, vec![1, 2, 3]);
    }

    #[test]
    fn unseen_jobs_come_last() {
        let jobs = vec![job(1, 2), job(2, 4)];
        let sel = scores_to_action(&[-0.9], &[Some(2)], &jobs, 100);
        assert_eq!(sel.job_ids, vec![2, 1]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = OsdecModel::new(small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = OsdecModel::load(dir.path()).unwrap();
        assert_eq!(back.store(), m.store());
        assert_eq!(back.config(), m.config());
        let other = ModelConfig { d_model: 6, ..small() };
        assert!(OsdecModel::from_store(other, m.store()).is_err());
    }

    #[test]
    fn parameter_groups_partition_the_store() {
        let m = OsdecModel::new(small()).unwrap();
        let total = m.policy_param_ids().len() + m.value_param_ids().len() + m.aux_param_ids().len();
        assert_eq!(total, m.store().len());
        assert_eq!(m.value_param_ids().len(), 2);
    }
}
