use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NeuroError, Tensor};

pub const CHECKPOINT_FORMAT: &str = "defersched-params";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter; replaces the value if the name already exists.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        if let Some(&id) = self.index.get(&name) {
            self.tensors[id.0] = tensor;
            return id;
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        id
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NeuroError> {
        self.index.get(name).copied().ok_or_else(|| NeuroError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Ids whose name starts with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |id| self.names[id.0].starts_with(prefix))
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            tensors: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(name, t)| NamedTensor { name: name.clone(), shape: t.shape().to_vec(), values: t.data().to_vec() })
                .collect(),
        };
        serde_json::to_string(&file).expect("tensors serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, NeuroError> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| NeuroError::Checkpoint(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(NeuroError::Checkpoint(format!("unexpected format `{}`", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(NeuroError::Checkpoint(format!("unsupported version {}", file.version)));
        }
        let mut store = ParamStore::new();
        for t in file.tensors {
            if store.index.contains_key(&t.name) {
                return Err(NeuroError::Checkpoint(format!("duplicate tensor `{}`", t.name)));
            }
            store.insert(t.name, Tensor::new(t.shape, t.values)?);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuroError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NeuroError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Gradient buffers aligned with a [`ParamStore`]; untouched parameters stay `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { grads: vec![None; store.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub(crate) fn slot(&mut self, id: ParamId, len: usize) -> &mut [f64] {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn set(&mut self, id: ParamId, values: Vec<f64>) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0] = Some(values);
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                let dst = self.slot(ParamId(i), g.len());
                for (d, s) in dst.iter_mut().zip(g) {
                    *d += scale * s;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn clear(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            g.fill(0.0);
        }
    }

    pub fn norm(&self) -> f64 {
        self.grads.iter().flatten().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Bias-corrected Adam over a fixed subset of a store's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    params: Vec<ParamId>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, params: Vec<ParamId>) -> Self {
        Self::with_betas(store, params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(store: &ParamStore, params: Vec<ParamId>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let first = params.iter().map(|&id| vec![0.0; store.get(id).len()]).collect::<Vec<_>>();
        let second = first.clone();
        Self { beta1, beta2, eps, step: 0, params, first, second }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    /// One update at learning rate `lr`. Parameters without a gradient are
    /// treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<(), NeuroError> {
        for &id in &self.params {
            if let Some(g) = grads.get(id) {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(NeuroError::NonFinite(store.name(id).to_string()));
                }
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, &id) in self.params.iter().enumerate() {
            let g = grads.get(id);
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            let values = store.get_mut(id).data_mut();
            for i in 0..values.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(value: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("w", Tensor::vector(vec![value; 3]));
        (s, id)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = store_with(0.5);
        let mut g = Gradients::zeros_like(&s);
        g.set(id, vec![1.0; 3]);
        let mut adam = Adam::new(&s, vec![id]);
        adam.step(&mut s, &g, 1e-3).unwrap();
        for v in s.get(id).data() {
            assert!((v - (0.5 - 1e-3)).abs() < 1e-9);
        }
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, id) = store_with(0.5);
        let mut g = Gradients::zeros_like(&s);
        g.set(id, vec![0.0; 3]);
        let mut adam = Adam::new(&s, vec![id]);
        adam.step(&mut s, &g, 1e-3).unwrap();
        assert_eq!(s.get(id).data(), &[0.5; 3]);
    }

    #[test]
    fn constant_gradient_steps_match() {
        // m̂ = v̂ = g² after bias correction for every step of a constant gradient,
        // so each update is lr·g/(|g| + eps)
        let (mut s, id) = store_with(0.0);
        let mut g = Gradients::zeros_like(&s);
        g.set(id, vec![2.0; 3]);
        let mut adam = Adam::new(&s, vec![id]);
        adam.step(&mut s, &g, 1e-2).unwrap();
        let first = s.get(id).data()[0];
        adam.step(&mut s, &g, 1e-2).unwrap();
        let second = s.get(id).data()[0] - first;
        let expected = -1e-2 * 2.0 / (2.0 + 1e-8);
        assert!((first - expected).abs() < 1e-15);
        assert!((second - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_param() {
        let (mut s, id) = store_with(0.0);
        let mut g = Gradients::zeros_like(&s);
        g.set(id, vec![f64::NAN, 0.0, 0.0]);
        let err = Adam::new(&s, vec![id]).step(&mut s, &g, 1e-3).unwrap_err();
        assert_eq!(err.to_string(), "non-finite gradient for parameter `w`");
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut s = ParamStore::new();
        s.insert("a.w", Tensor::matrix(2, 2, vec![0.1, -1.0 / 3.0, 1e-300, 12345.678901234567]).unwrap());
        s.insert("a.b", Tensor::vector(vec![std::f64::consts::PI]));
        let back = ParamStore::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        s.save(&path).unwrap();
        assert_eq!(ParamStore::load(&path).unwrap(), s);
        assert!(ParamStore::from_json(r#"{"format":"other","version":1,"tensors":[]}"#).is_err());
    }
}
