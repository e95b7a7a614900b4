use super::{shape_err, Gradients, NeuroError, ParamId, ParamStore, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var },
    Add(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Attention { x: Var, wq: Var, wk: Var, wv: Var, mask: Vec<bool>, q: Vec<f64>, k: Vec<f64>, v: Vec<f64>, probs: Vec<f64> },
    GatherRows { a: Var, rows: Vec<usize> },
    MeanRows(Var),
    Sum(Var),
    WeightedSum { a: Var, weights: Vec<f64> },
    GaussianLogProb { mu: Var, sigma: Var, x: Vec<f64> },
    PpoSurrogate { logp: Var, old: f64, adv: f64, eps: f64 },
    SquaredError { a: Var, target: Vec<f64> },
}

impl Op {
    fn for_each_input(&self, mut f: impl FnMut(Var)) {
        match self {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                f(*x);
                f(*w);
                if let Some(b) = b {
                    f(*b);
                }
            }
            Op::MatMul { a, b } | Op::Add(a, b) | Op::Mul(a, b) => {
                f(*a);
                f(*b);
            }
            Op::OneMinus(a)
            | Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Relu(a)
            | Op::MeanRows(a)
            | Op::Sum(a)
            | Op::GatherRows { a, .. }
            | Op::WeightedSum { a, .. }
            | Op::SquaredError { a, .. } => f(*a),
            Op::LayerNorm { x, gain, bias, .. } => {
                f(*x);
                f(*gain);
                f(*bias);
            }
            Op::Attention { x, wq, wk, wv, .. } => {
                for v in [x, wq, wk, wv] {
                    f(*v);
                }
            }
            Op::GaussianLogProb { mu, sigma, .. } => {
                f(*mu);
                f(*sigma);
            }
            Op::PpoSurrogate { logp, .. } => f(*logp),
        }
    }
}

struct Node {
    value: Value,
    op: Op,
    /// Some parameter feeds into this node.
    grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// Records a forward pass over parameters borrowed from a [`ParamStore`].
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

// c[n×m] = a[n×k] · b[k×m]
fn matmul(a: &[f64], n: usize, k: usize, b: &[f64], m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for j in 0..m {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

// c[k×m] += aᵀ · b, a[n×k], b[n×m]
fn matmul_tn_acc(c: &mut [f64], a: &[f64], n: usize, k: usize, b: &[f64], m: usize) {
    for p in 0..k {
        let crow = &mut c[p * m..(p + 1) * m];
        for i in 0..n {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[i * m..(i + 1) * m];
            for j in 0..m {
                crow[j] += aip * brow[j];
            }
        }
    }
}

// c[n×k] += a · bᵀ, a[n×m], b[k×m]
fn matmul_nt_acc(c: &mut [f64], a: &[f64], n: usize, m: usize, b: &[f64], k: usize) {
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            let mut s = 0.0;
            for j in 0..m {
                s += arow[j] * brow[j];
            }
            c[i * k + p] += s;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)`, returning `x` itself above 30.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self { store, nodes: Vec::with_capacity(256), param_vars: vec![None; store.len()] }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let mut grad = false;
        op.for_each_input(|v| grad |= self.nodes[v.0].grad);
        self.nodes.push(Node { value: Value::Owned(value), op, grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id), grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<Var, NeuroError> {
        let id = self.store.id(name)?;
        Ok(self.param(id))
    }

    /// Row-wise affine map `x·W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NeuroError> {
        let (n, din) = self.value(x).dims();
        let (wr, dout) = self.value(w).dims();
        if din != wr {
            return Err(shape_err("linear", format!("x is {n}×{din} but W is {wr}×{dout}")));
        }
        let mut out = matmul(self.value(x).data(), n, din, self.value(w).data(), dout);
        if let Some(b) = b {
            let bias = self.value(b).data();
            if bias.len() != dout {
                return Err(shape_err("linear", format!("bias has {} entries, expected {dout}", bias.len())));
            }
            for row in out.chunks_mut(dout) {
                for (o, bi) in row.iter_mut().zip(bias) {
                    *o += bi;
                }
            }
        }
        Ok(self.push(Tensor::matrix(n, dout, out)?, Op::Linear { x, w, b }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NeuroError> {
        let (n, k) = self.value(a).dims();
        let (kb, m) = self.value(b).dims();
        if k != kb {
            return Err(shape_err("matmul", format!("{n}×{k} by {kb}×{m}")));
        }
        let out = matmul(self.value(a).data(), n, k, self.value(b).data(), m);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMul { a, b }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NeuroError> {
        let (sa, sb) = (self.value(a).dims(), self.value(b).dims());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NeuroError> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NeuroError> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, |v| 1.0 - v, Op::OneMinus(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.map(a, |v| v * factor, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |v| v.max(0.0), Op::Relu(a))
    }

    /// Per-row standardization scaled by `gain` and shifted by `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NeuroError> {
        let (n, d) = self.value(x).dims();
        if d == 0 {
            return Err(shape_err("layer_norm", "zero-width rows"));
        }
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(shape_err("layer_norm", format!("gain/bias must have {d} entries")));
        }
        let xs = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut out = vec![0.0; n * d];
        let mut xhat = vec![0.0; n * d];
        let mut rstd = vec![0.0; n];
        for r in 0..n {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let value = Tensor::matrix(n, d, out)?;
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, xhat, rstd }))
    }

    /// Single-head scaled dot-product self-attention. Masked rows are excluded
    /// as keys and produce zero output rows.
    pub fn self_attention(&mut self, x: Var, wq: Var, wk: Var, wv: Var, mask: &[bool]) -> Result<Var, NeuroError> {
        let (n, din) = self.value(x).dims();
        if mask.len() != n {
            return Err(shape_err("self_attention", format!("mask has {} entries for {n} rows", mask.len())));
        }
        if !mask.iter().any(|&m| m) {
            return Err(NeuroError::Contract("self_attention: every position is masked".into()));
        }
        let (qr, dk) = self.value(wq).dims();
        let (kr, dk2) = self.value(wk).dims();
        let (vr, dv) = self.value(wv).dims();
        if qr != din || kr != din || vr != din || dk != dk2 {
            return Err(shape_err("self_attention", format!("x is {n}×{din}; Wq {qr}×{dk}, Wk {kr}×{dk2}, Wv {vr}×{dv}")));
        }
        let xs = self.value(x).data();
        let q = matmul(xs, n, din, self.value(wq).data(), dk);
        let k = matmul(xs, n, din, self.value(wk).data(), dk);
        let v = matmul(xs, n, din, self.value(wv).data(), dv);
        let scale = 1.0 / (dk as f64).sqrt();
        let mut probs = vec![0.0; n * n];
        let mut out = vec![0.0; n * dv];
        for i in (0..n).filter(|&i| mask[i]) {
            let qi = &q[i * dk..(i + 1) * dk];
            let prow = &mut probs[i * n..(i + 1) * n];
            let mut max = f64::NEG_INFINITY;
            for j in (0..n).filter(|&j| mask[j]) {
                let kj = &k[j * dk..(j + 1) * dk];
                let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                prow[j] = s;
                max = max.max(s);
            }
            let mut total = 0.0;
            for j in 0..n {
                if mask[j] {
                    prow[j] = (prow[j] - max).exp();
                    total += prow[j];
                }
            }
            for p in prow.iter_mut() {
                *p /= total;
            }
            let orow = &mut out[i * dv..(i + 1) * dv];
            for j in (0..n).filter(|&j| mask[j]) {
                let p = prow[j];
                for c in 0..dv {
                    orow[c] += p * v[j * dv + c];
                }
            }
        }
        let value = Tensor::matrix(n, dv, out)?;
        Ok(self.push(value, Op::Attention { x, wq, wk, wv, mask: mask.to_vec(), q, k, v, probs }))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, NeuroError> {
        let t = self.value(a);
        let (n, c) = t.dims();
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(shape_err("gather_rows", format!("row {bad} of {n}")));
        }
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(t.row(r));
        }
        let value = Tensor::matrix(rows.len(), c, data)?;
        Ok(self.push(value, Op::GatherRows { a, rows: rows.to_vec() }))
    }

    /// Mean over rows: `n×c → 1×c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, NeuroError> {
        let t = self.value(a);
        let (n, c) = t.dims();
        if n == 0 {
            return Err(shape_err("mean_rows", "no rows"));
        }
        let mut data = vec![0.0; c];
        for r in 0..n {
            for (d, v) in data.iter_mut().zip(t.row(r)) {
                *d += v;
            }
        }
        for d in &mut data {
            *d /= n as f64;
        }
        let value = Tensor::matrix(1, c, data)?;
        Ok(self.push(value, Op::MeanRows(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn weighted_sum(&mut self, a: Var, weights: &[f64]) -> Result<Var, NeuroError> {
        let t = self.value(a);
        if t.len() != weights.len() {
            return Err(shape_err("weighted_sum", format!("{} values, {} weights", t.len(), weights.len())));
        }
        let s = t.data().iter().zip(weights).map(|(a, w)| a * w).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { a, weights: weights.to_vec() }))
    }

    /// Σ log N(x_j; μ_j, σ_j²) for a diagonal Gaussian.
    pub fn gaussian_log_prob(&mut self, mu: Var, sigma: Var, x: &[f64]) -> Result<Var, NeuroError> {
        let (m, s) = (self.value(mu).data(), self.value(sigma).data());
        if m.len() != x.len() || s.len() != x.len() {
            return Err(shape_err("gaussian_log_prob", format!("mu {}, sigma {}, x {}", m.len(), s.len(), x.len())));
        }
        let lp = gaussian_log_density(m, s, x);
        Ok(self.push(Tensor::scalar(lp), Op::GaussianLogProb { mu, sigma, x: x.to_vec() }))
    }

    /// Clipped surrogate `min(ρA, clip(ρ, 1−ε, 1+ε)A)` with `ρ = exp(logp − old)`.
    pub fn ppo_surrogate(&mut self, logp: Var, old: f64, adv: f64, eps: f64) -> Result<Var, NeuroError> {
        if self.value(logp).len() != 1 {
            return Err(shape_err("ppo_surrogate", "log-probability must be a scalar"));
        }
        let ratio = (self.value(logp).item() - old).exp();
        let value = clipped_surrogate(ratio, adv, eps);
        Ok(self.push(Tensor::scalar(value), Op::PpoSurrogate { logp, old, adv, eps }))
    }

    /// Σ (a − target)².
    pub fn squared_error(&mut self, a: Var, target: &[f64]) -> Result<Var, NeuroError> {
        let t = self.value(a);
        if t.len() != target.len() {
            return Err(shape_err("squared_error", format!("{} values, {} targets", t.len(), target.len())));
        }
        let s = t.data().iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(self.push(Tensor::scalar(s), Op::SquaredError { a, target: target.to_vec() }))
    }

    /// Gradients of the scalar `loss` with respect to every parameter used.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NeuroError> {
        let mut grads = Gradients::zeros_like(self.store);
        self.backward_into(loss, &mut grads, 1.0)?;
        Ok(grads)
    }

    /// Accumulates `scale · ∂loss/∂θ` into `grads`.
    pub fn backward_into(&self, loss: Var, grads: &mut Gradients, scale: f64) -> Result<(), NeuroError> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", "loss must be a scalar"));
        }
        let mut node_grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        node_grads.resize_with(loss.0 + 1, || None);
        if let Op::Param(id) = self.nodes[loss.0].op {
            grads.slot(id, 1)[0] += scale;
            return Ok(());
        }
        node_grads[loss.0] = Some(vec![scale]);

        for i in (0..=loss.0).rev() {
            let Some(g) = node_grads[i].take() else { continue };
            let out = self.value(Var(i));
            let mut sink = Sink { nodes: &self.nodes, node_grads: &mut node_grads, grads: &mut *grads };
            match &self.nodes[i].op {
                Op::Leaf | Op::Param(_) => {}
                Op::Linear { x, w, b } => {
                    let (n, din) = self.value(*x).dims();
                    let dout = out.dims().1;
                    if let Some(db) = b.and_then(|b| sink.get(b, dout)) {
                        for row in g.chunks(dout) {
                            add_into(db, row);
                        }
                    }
                    if let Some(dw) = sink.get(*w, din * dout) {
                        matmul_tn_acc(dw, self.value(*x).data(), n, din, &g, dout);
                    }
                    if let Some(dx) = sink.get(*x, n * din) {
                        matmul_nt_acc(dx, &g, n, dout, self.value(*w).data(), din);
                    }
                }
                Op::MatMul { a, b } => {
                    let (n, k) = self.value(*a).dims();
                    let m = out.dims().1;
                    if let Some(db) = sink.get(*b, k * m) {
                        matmul_tn_acc(db, self.value(*a).data(), n, k, &g, m);
                    }
                    if let Some(da) = sink.get(*a, n * k) {
                        matmul_nt_acc(da, &g, n, m, self.value(*b).data(), k);
                    }
                }
                Op::Add(a, b) => {
                    if let Some(da) = sink.get(*a, g.len()) {
                        add_into(da, &g);
                    }
                    if let Some(db) = sink.get(*b, g.len()) {
                        add_into(db, &g);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    if let Some(da) = sink.get(*a, g.len()) {
                        for k in 0..g.len() {
                            da[k] += g[k] * bv[k];
                        }
                    }
                    if let Some(db) = sink.get(*b, g.len()) {
                        for k in 0..g.len() {
                            db[k] += g[k] * av[k];
                        }
                    }
                }
                Op::OneMinus(a) => {
                    if let Some(da) = sink.get(*a, g.len()) {
                        for k in 0..g.len() {
                            da[k] -= g[k];
                        }
                    }
                }
                Op::Scale(a, f) => {
                    if let Some(da) = sink.get(*a, g.len()) {
                        for k in 0..g.len() {
                            da[k] += g[k] * f;
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = out.data();
                    if let Some(da) = sink.get(*a, g.len()) {
                        for k in 0..g.len() {
                            da[k] += g[k] * (1.0 - y[k] * y[k]);
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = out.data();
                    if let Some(da) = sink.get(*a, g.len()) {
                        for k in 0..g.len() {
                            da[k] += g[k] * y[k] * (1.0 - y[k]);
                        }
                    }
                }
                Op::Softplus(a) => {
                    let x = self.value(*a).data();
                    if let Some(da) = sink.get(*a, g.len()) {
                        for k in 0..g.len() {
                            da[k] += g[k] * sigmoid(x[k]);
                        }
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    if let Some(da) = sink.get(*a, g.len()) {
                        for k in 0..g.len() {
                            if x[k] > 0.0 {
                                da[k] += g[k];
                            }
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                    let (n, d) = out.dims();
                    let gv = self.value(*gain).data();
                    if let Some(dg) = sink.get(*gain, d) {
                        for r in 0..n {
                            for c in 0..d {
                                dg[c] += g[r * d + c] * xhat[r * d + c];
                            }
                        }
                    }
                    if let Some(db) = sink.get(*bias, d) {
                        for row in g.chunks(d) {
                            add_into(db, row);
                        }
                    }
                    if let Some(dx) = sink.get(*x, n * d) {
                        let mut dxhat = vec![0.0; d];
                        for r in 0..n {
                            let mut mean_d = 0.0;
                            let mut mean_dx = 0.0;
                            for c in 0..d {
                                dxhat[c] = g[r * d + c] * gv[c];
                                mean_d += dxhat[c];
                                mean_dx += dxhat[c] * xhat[r * d + c];
                            }
                            mean_d /= d as f64;
                            mean_dx /= d as f64;
                            for c in 0..d {
                                dx[r * d + c] += rstd[r] * (dxhat[c] - mean_d - xhat[r * d + c] * mean_dx);
                            }
                        }
                    }
                }
                Op::Attention { x, wq, wk, wv, mask, q, k, v, probs } => {
                    let (n, din) = self.value(*x).dims();
                    let dk = self.value(*wq).dims().1;
                    let dv = self.value(*wv).dims().1;
                    let scale = 1.0 / (dk as f64).sqrt();
                    // dV = Pᵀ dO
                    let mut d_v = vec![0.0; n * dv];
                    matmul_tn_acc(&mut d_v, probs, n, n, &g, dv);
                    // dP = dO Vᵀ, then softmax backward into dS
                    let mut d_s = vec![0.0; n * n];
                    matmul_nt_acc(&mut d_s, &g, n, dv, v, n);
                    for i in (0..n).filter(|&i| mask[i]) {
                        let prow = &probs[i * n..(i + 1) * n];
                        let srow = &mut d_s[i * n..(i + 1) * n];
                        let dot: f64 = prow.iter().zip(srow.iter()).map(|(p, s)| p * s).sum();
                        for j in 0..n {
                            srow[j] = prow[j] * (srow[j] - dot) * scale;
                        }
                    }
                    for i in (0..n).filter(|&i| !mask[i]) {
                        d_s[i * n..(i + 1) * n].fill(0.0);
                    }
                    // dQ = dS K, dK = dSᵀ Q
                    let d_q = matmul(&d_s, n, n, k, dk);
                    let mut d_k = vec![0.0; n * dk];
                    matmul_tn_acc(&mut d_k, &d_s, n, n, q, dk);
                    let xv = self.value(*x).data();
                    for (w, d, width) in [(*wq, &d_q, dk), (*wk, &d_k, dk), (*wv, &d_v, dv)] {
                        if let Some(dw) = sink.get(w, din * width) {
                            matmul_tn_acc(dw, xv, n, din, d, width);
                        }
                    }
                    if let Some(dx) = sink.get(*x, n * din) {
                        matmul_nt_acc(dx, &d_q, n, dk, self.value(*wq).data(), din);
                        matmul_nt_acc(dx, &d_k, n, dk, self.value(*wk).data(), din);
                        matmul_nt_acc(dx, &d_v, n, dv, self.value(*wv).data(), din);
                    }
                }
                Op::GatherRows { a, rows } => {
                    let (n, c) = self.value(*a).dims();
                    if let Some(da) = sink.get(*a, n * c) {
                        for (k, &r) in rows.iter().enumerate() {
                            add_into(&mut da[r * c..(r + 1) * c], &g[k * c..(k + 1) * c]);
                        }
                    }
                }
                Op::MeanRows(a) => {
                    let (n, c) = self.value(*a).dims();
                    if let Some(da) = sink.get(*a, n * c) {
                        for r in 0..n {
                            for j in 0..c {
                                da[r * c + j] += g[j] / n as f64;
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    if let Some(da) = sink.get(*a, len) {
                        for d in da {
                            *d += g[0];
                        }
                    }
                }
                Op::WeightedSum { a, weights } => {
                    if let Some(da) = sink.get(*a, weights.len()) {
                        for (d, w) in da.iter_mut().zip(weights) {
                            *d += g[0] * w;
                        }
                    }
                }
                Op::GaussianLogProb { mu, sigma, x } => {
                    let (m, s) = (self.value(*mu).data(), self.value(*sigma).data());
                    if let Some(dmu) = sink.get(*mu, x.len()) {
                        for j in 0..x.len() {
                            dmu[j] += g[0] * (x[j] - m[j]) / (s[j] * s[j]);
                        }
                    }
                    if let Some(dsigma) = sink.get(*sigma, x.len()) {
                        for j in 0..x.len() {
                            let diff = x[j] - m[j];
                            let s2 = s[j] * s[j];
                            dsigma[j] += g[0] * (diff * diff / (s2 * s[j]) - 1.0 / s[j]);
                        }
                    }
                }
                Op::PpoSurrogate { logp, old, adv, eps } => {
                    let ratio = (self.value(*logp).item() - old).exp();
                    let unclipped = ratio * adv;
                    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
                    // the clipped branch is flat in ρ whenever it is the strict minimum
                    if unclipped <= clipped {
                        if let Some(d) = sink.get(*logp, 1) {
                            d[0] += g[0] * unclipped;
                        }
                    }
                }
                Op::SquaredError { a, target } => {
                    let av = self.value(*a).data();
                    if let Some(da) = sink.get(*a, target.len()) {
                        for k in 0..target.len() {
                            da[k] += g[0] * 2.0 * (av[k] - target[k]);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Σ log N(x_j; μ_j, σ_j²).
pub fn gaussian_log_density(mu: &[f64], sigma: &[f64], x: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .zip(x)
        .map(|((&m, &s), &x)| {
            let z = (x - m) / s;
            -0.5 * z * z - s.ln() - HALF_LN_TWO_PI
        })
        .sum()
}

/// `min(ρA, clip(ρ, 1−ε, 1+ε)A)`.
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Where the gradient of an input goes: straight into the parameter's slot,
/// into the node's buffer, or nowhere when nothing upstream is trainable.
struct Sink<'a> {
    nodes: &'a [Node],
    node_grads: &'a mut [Option<Vec<f64>>],
    grads: &'a mut Gradients,
}

impl Sink<'_> {
    fn get(&mut self, v: Var, len: usize) -> Option<&mut [f64]> {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => Some(self.grads.slot(id, len)),
            _ if !node.grad => None,
            _ => Some(self.node_grads[v.0].get_or_insert_with(|| vec![0.0; len])),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gate variables of a GRU cell: `W_*` act on the input, `U_*` on the state.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub wz: Var,
    pub uz: Var,
    pub bz: Var,
    pub wr: Var,
    pub ur: Var,
    pub br: Var,
    pub wh: Var,
    pub uh: Var,
    pub bh: Var,
}

/// One GRU update on row vectors `x` (`1×d_in`) and `h` (`1×d_h`):
///
/// ```text
/// z  = σ(x·W_z + h·U_z + b_z)
/// r  = σ(x·W_r + h·U_r + b_r)
/// h̃  = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
pub fn gru_cell(tape: &mut Tape<'_>, x: Var, h: Var, p: &GruParams) -> Result<Var, NeuroError> {
    let xz = tape.linear(x, p.wz, Some(p.bz))?;
    let hz = tape.matmul(h, p.uz)?;
    let z = tape.add(xz, hz)?;
    let z = tape.sigmoid(z);

    let xr = tape.linear(x, p.wr, Some(p.br))?;
    let hr = tape.matmul(h, p.ur)?;
    let r = tape.add(xr, hr)?;
    let r = tape.sigmoid(r);

    let xh = tape.linear(x, p.wh, Some(p.bh))?;
    let rh = tape.mul(r, h)?;
    let rh = tape.matmul(rh, p.uh)?;
    let cand = tape.add(xh, rh)?;
    let cand = tape.tanh(cand);

    let keep = tape.one_minus(z);
    let keep = tape.mul(keep, h)?;
    let update = tape.mul(z, cand)?;
    tape.add(keep, update)
}
