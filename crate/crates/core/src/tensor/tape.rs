use super::params::{ParamGrads, ParamId, ParamStore};
use super::{matmul_at_raw, matmul_bt_raw, Tensor, TensorError};
use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::Arc;

pub(crate) const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub(crate) const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Relu(Var),
    Selu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    SumRows(Var),
    Sum(Var),
    ConcatCols(Var, Var),
    NeighborMax {
        input: Var,
        /// Source row per output entry, `usize::MAX` when the atom has no neighbours.
        argmax: Vec<usize>,
    },
    EdgeMessage {
        h: Var,
        a: Var,
        edges: Arc<Vec<(usize, usize)>>,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormInfer {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    WeightedBce {
        logits: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
    AbsSum(Var),
    SqSum(Var),
}

#[derive(Debug, Clone)]
struct Node<'s> {
    value: Cow<'s, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is already a topological order. Parameters are borrowed leaves.
#[derive(Debug)]
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node<'s>>,
    params: HashMap<ParamId, Var>,
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: ParamGrads,
}

impl Gradients {
    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id)
    }

    /// Gradient with respect to an input leaf created with `requires_grad`.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
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

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Per-entry weighted BCE with logits, not yet averaged.
pub(crate) fn bce_term(z: f64, t: f64, w: f64) -> f64 {
    // −[w t log σ(z) + (1−t) log(1−σ(z))], with log σ(z) = −softplus(−z)
    // and log(1−σ(z)) = −softplus(z).
    w * t * softplus(-z) + (1.0 - t) * softplus(z)
}

fn bce_grad(z: f64, t: f64, w: f64) -> f64 {
    let s = sigmoid(z);
    -w * t * (1.0 - s) + (1.0 - t) * s
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Tape<'s> {
        Tape {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Non-parameter leaf; gradients are recorded for it when `requires_grad`.
    pub fn input(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Input, requires_grad)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(self.store.get(id)),
            op: Op::Param(id),
            needs_grad: self.store.entry(id).trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// x[m,n] + b broadcast over rows, b of length n.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (xv, bv) = (self.value(x), self.value(b));
        let (m, n) = xv.dims2();
        if bv.len() != n {
            return Err(mismatch("add_bias", xv, bv));
        }
        let mut data = xv.data().to_vec();
        for r in 0..m {
            for (d, b) in data[r * n..(r + 1) * n].iter_mut().zip(bv.data()) {
                *d += b;
            }
        }
        let out = Tensor::from_parts(vec![m, n], data);
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(out, Op::AddBias(x, b), ng))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dims2() != bv.dims2() {
            return Err(mismatch(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(av.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, k), ng)
    }

    /// 1 − x.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 - x);
        let ng = self.ng(a);
        self.push(out, Op::OneMinus(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn selu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .map(|x| if x > 0.0 { SELU_LAMBDA * x } else { SELU_LAMBDA * SELU_ALPHA * x.exp_m1() });
        let ng = self.ng(a);
        self.push(out, Op::Selu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (m, n) = av.dims2();
        let mut data = av.data().to_vec();
        for r in 0..m {
            let row = &mut data[r * n..(r + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        let out = Tensor::from_parts(vec![m, n], data);
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Column sums: [m,n] → [1,n].
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (m, n) = av.dims2();
        let mut data = vec![0.0; n];
        for r in 0..m {
            for (d, x) in data.iter_mut().zip(&av.data()[r * n..(r + 1) * n]) {
                *d += x;
            }
        }
        let ng = self.ng(a);
        self.push(Tensor::from_parts(vec![1, n], data), Op::SumRows(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let ((m, na), (mb, nb)) = (av.dims2(), bv.dims2());
        if m != mb {
            return Err(mismatch("concat_cols", av, bv));
        }
        let mut data = Vec::with_capacity(m * (na + nb));
        for r in 0..m {
            data.extend_from_slice(av.row_slice(r));
            data.extend_from_slice(bv.row_slice(r));
        }
        let out = Tensor::from_parts(vec![m, na + nb], data);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::ConcatCols(a, b), ng))
    }

    /// Row v of the output is the elementwise max of input rows listed in
    /// `neighbors[v]`, or zeros for an empty list.
    pub fn neighbor_max(&mut self, input: Var, neighbors: &[Vec<usize>]) -> Result<Var, TensorError> {
        let iv = self.value(input);
        let (m, n) = iv.dims2();
        if neighbors.len() != m || neighbors.iter().flatten().any(|&u| u >= m) {
            return Err(TensorError::Invalid("neighbour list does not match rows".into()));
        }
        let mut data = vec![0.0; m * n];
        let mut argmax = vec![usize::MAX; m * n];
        for (v, nbrs) in neighbors.iter().enumerate() {
            for j in 0..n {
                let mut best: Option<(f64, usize)> = None;
                for &u in nbrs {
                    let x = iv.data()[u * n + j];
                    if best.is_none_or(|(b, _)| x > b) {
                        best = Some((x, u));
                    }
                }
                if let Some((x, u)) = best {
                    data[v * n + j] = x;
                    argmax[v * n + j] = u;
                }
            }
        }
        let ng = self.ng(input);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::NeighborMax { input, argmax }, ng))
    }

    /// m[dst] += A_e · h[src] for each directed edge e = (src, dst), where
    /// row e of `a` holds A_e as a row-major d×d matrix.
    pub fn edge_message(&mut self, h: Var, a: Var, edges: Arc<Vec<(usize, usize)>>) -> Result<Var, TensorError> {
        let (hv, av) = (self.value(h), self.value(a));
        let (m, d) = hv.dims2();
        let (ne, dd) = av.dims2();
        if ne != edges.len() || dd != d * d || edges.iter().any(|&(s, t)| s >= m || t >= m) {
            return Err(mismatch("edge_message", hv, av));
        }
        let mut data = vec![0.0; m * d];
        for (e, &(src, dst)) in edges.iter().enumerate() {
            let ae = &av.data()[e * dd..(e + 1) * dd];
            let hs = hv.row_slice(src);
            for i in 0..d {
                let s: f64 = ae[i * d..(i + 1) * d].iter().zip(hs).map(|(x, y)| x * y).sum();
                data[dst * d + i] += s;
            }
        }
        let ng = self.ng(h) || self.ng(a);
        Ok(self.push(Tensor::from_parts(vec![m, d], data), Op::EdgeMessage { h, a, edges }, ng))
    }

    /// Normalizes each column with the batch mean and biased variance, then
    /// applies γ and β. Returns the output together with the batch mean and
    /// variance so callers can update running statistics.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>), TensorError> {
        let xv = self.value(x);
        let (m, n) = xv.dims2();
        self.check_affine(xv, gamma, beta, n)?;
        let mut mean = vec![0.0; n];
        let mut var = vec![0.0; n];
        for r in 0..m {
            for (mu, v) in mean.iter_mut().zip(xv.row_slice(r)) {
                *mu += v;
            }
        }
        mean.iter_mut().for_each(|mu| *mu /= m as f64);
        for r in 0..m {
            for ((s, v), mu) in var.iter_mut().zip(xv.row_slice(r)).zip(&mean) {
                *s += (v - mu) * (v - mu);
            }
        }
        var.iter_mut().for_each(|s| *s /= m as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xhat: Vec<f64> = (0..m * n).map(|i| (xv.data()[i] - mean[i % n]) * inv_std[i % n]).collect();
        let out = self.affine(&xhat, gamma, beta, m, n);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let v = self.push(out, Op::BatchNormTrain { x, gamma, beta, xhat, inv_std }, ng);
        Ok((v, mean, var))
    }

    /// Normalizes with fixed statistics.
    pub fn batchnorm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (m, n) = xv.dims2();
        self.check_affine(xv, gamma, beta, n)?;
        if mean.len() != n || var.len() != n {
            return Err(TensorError::Invalid("running statistics length".into()));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xhat: Vec<f64> = (0..m * n).map(|i| (xv.data()[i] - mean[i % n]) * inv_std[i % n]).collect();
        let out = self.affine(&xhat, gamma, beta, m, n);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(out, Op::BatchNormInfer { x, gamma, beta, xhat, inv_std }, ng))
    }

    fn check_affine(&self, xv: &Tensor, gamma: Var, beta: Var, n: usize) -> Result<(), TensorError> {
        for p in [gamma, beta] {
            if self.value(p).len() != n {
                return Err(mismatch("batchnorm", xv, self.value(p)));
            }
        }
        Ok(())
    }

    fn affine(&self, xhat: &[f64], gamma: Var, beta: Var, m: usize, n: usize) -> Tensor {
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let data = (0..m * n).map(|i| g[i % n] * xhat[i] + b[i % n]).collect();
        Tensor::from_parts(vec![m, n], data)
    }

    /// Elementwise multiply by a fixed mask (already holding the inverted scale).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if mask.len() != xv.len() {
            return Err(TensorError::Invalid("dropout mask length".into()));
        }
        let data = xv.data().iter().zip(&mask).map(|(a, b)| a * b).collect();
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        let ng = self.ng(x);
        Ok(self.push(out, Op::Dropout { x, mask }, ng))
    }

    /// Mean over all entries of the weighted binary cross-entropy with logits.
    /// `targets` matches `logits` elementwise; `weights` has one entry per column.
    pub fn weighted_bce(&mut self, logits: Var, targets: &[f64], weights: &[f64]) -> Result<Var, TensorError> {
        let lv = self.value(logits);
        let (_, n) = lv.dims2();
        if targets.len() != lv.len() || weights.len() != n {
            return Err(TensorError::Invalid(format!(
                "bce: logits {:?}, {} targets, {} weights",
                lv.shape(),
                targets.len(),
                weights.len()
            )));
        }
        let total: f64 = lv
            .data()
            .iter()
            .zip(targets)
            .enumerate()
            .map(|(i, (&z, &t))| bce_term(z, t, weights[i % n]))
            .sum();
        let loss = total / lv.len().max(1) as f64;
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::WeightedBce {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            ng,
        ))
    }

    /// Σ|x|.
    pub fn abs_sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|x| x.abs()).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::AbsSum(a), ng)
    }

    /// Σx².
    pub fn sq_sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::SqSum(a), ng)
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        Ok(self.backward_with_seed(loss, Tensor::full(lv.shape(), 1.0)))
    }

    /// Backpropagates an arbitrary upstream gradient for `out`.
    pub fn backward_with_seed(&self, out: Var, seed: Tensor) -> Gradients {
        assert_eq!(seed.len(), self.value(out).len(), "seed shape");
        let mut grads: Vec<Option<Tensor>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed);
        let mut params = ParamGrads::zeros_like(self.store);

        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            match node.op {
                Op::Param(id) => params.accumulate(id, &g),
                // keep leaf gradients for `wrt`
                Op::Input => grads[i] = Some(g),
                _ => {}
            }
        }
        Gradients { nodes: grads, params }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(e) => e.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce() -> Tensor) {
        if self.nodes[v.0].needs_grad {
            let g = f();
            self.acc(grads, v, g);
        }
    }

    fn propagate(&self, op: &Op, y: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| self.value(v);
        let like = |v: Var, data: Vec<f64>| Tensor::from_parts(val(v).shape().to_vec(), data);
        let gd = g.data();
        match *op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(a).dims2();
                let (_, n) = val(b).dims2();
                self.acc_with(grads, a, || like(a, matmul_bt_raw(gd, val(b).data(), m, n, k)));
                self.acc_with(grads, b, || like(b, matmul_at_raw(val(a).data(), gd, m, k, n)));
            }
            Op::AddBias(x, b) => {
                self.acc(grads, x, like(x, gd.to_vec()));
                self.acc_with(grads, b, || {
                    let (m, n) = g.dims2();
                    let mut s = vec![0.0; n];
                    for r in 0..m {
                        for (d, x) in s.iter_mut().zip(&gd[r * n..(r + 1) * n]) {
                            *d += x;
                        }
                    }
                    like(b, s)
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, a, like(a, gd.to_vec()));
                self.acc(grads, b, like(b, gd.to_vec()));
            }
            Op::Sub(a, b) => {
                self.acc(grads, a, like(a, gd.to_vec()));
                self.acc(grads, b, like(b, gd.iter().map(|x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(a).data(), val(b).data());
                self.acc_with(grads, a, || like(a, gd.iter().zip(bv).map(|(g, y)| g * y).collect()));
                self.acc_with(grads, b, || like(b, gd.iter().zip(av).map(|(g, x)| g * x).collect()));
            }
            Op::Scale(a, k) => self.acc(grads, a, like(a, gd.iter().map(|x| x * k).collect())),
            Op::OneMinus(a) => self.acc(grads, a, like(a, gd.iter().map(|x| -x).collect())),
            Op::Relu(a) => {
                let d = gd.iter().zip(val(a).data()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                self.acc(grads, a, like(a, d));
            }
            Op::Selu(a) => {
                let d = gd
                    .iter()
                    .zip(val(a).data())
                    .map(|(g, &x)| g * if x > 0.0 { SELU_LAMBDA } else { SELU_LAMBDA * SELU_ALPHA * x.exp() })
                    .collect();
                self.acc(grads, a, like(a, d));
            }
            Op::Sigmoid(a) => {
                let d = gd.iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                self.acc(grads, a, like(a, d));
            }
            Op::Tanh(a) => {
                let d = gd.iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect();
                self.acc(grads, a, like(a, d));
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = y.dims2();
                let yd = y.data();
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    let s = r * n..(r + 1) * n;
                    let dot: f64 = gd[s.clone()].iter().zip(&yd[s.clone()]).map(|(g, y)| g * y).sum();
                    for i in s {
                        d[i] = yd[i] * (gd[i] - dot);
                    }
                }
                self.acc(grads, a, like(a, d));
            }
            Op::SumRows(a) => {
                let (m, _) = val(a).dims2();
                self.acc(grads, a, like(a, gd.repeat(m)));
            }
            Op::Sum(a) => self.acc(grads, a, Tensor::full(val(a).shape(), gd[0])),
            Op::ConcatCols(a, b) => {
                let (m, na) = val(a).dims2();
                let nb = val(b).cols();
                let n = na + nb;
                self.acc_with(grads, a, || like(a, (0..m).flat_map(|r| gd[r * n..r * n + na].to_vec()).collect()));
                self.acc_with(grads, b, || like(b, (0..m).flat_map(|r| gd[r * n + na..(r + 1) * n].to_vec()).collect()));
            }
            Op::NeighborMax { input, ref argmax } => {
                let n = val(input).cols();
                let mut d = vec![0.0; val(input).len()];
                for (i, &u) in argmax.iter().enumerate() {
                    if u != usize::MAX {
                        d[u * n + i % n] += gd[i];
                    }
                }
                self.acc(grads, input, like(input, d));
            }
            Op::EdgeMessage { h, a, ref edges } => {
                let (hv, av) = (val(h), val(a));
                let d = hv.cols();
                let dd = d * d;
                self.acc_with(grads, a, || {
                    let mut ga = vec![0.0; av.len()];
                    for (e, &(src, dst)) in edges.iter().enumerate() {
                        let hs = hv.row_slice(src);
                        for i in 0..d {
                            let gi = gd[dst * d + i];
                            for j in 0..d {
                                ga[e * dd + i * d + j] += gi * hs[j];
                            }
                        }
                    }
                    like(a, ga)
                });
                self.acc_with(grads, h, || {
                    let mut gh = vec![0.0; hv.len()];
                    for (e, &(src, dst)) in edges.iter().enumerate() {
                        let ae = &av.data()[e * dd..(e + 1) * dd];
                        for i in 0..d {
                            let gi = gd[dst * d + i];
                            for j in 0..d {
                                gh[src * d + j] += ae[i * d + j] * gi;
                            }
                        }
                    }
                    like(h, gh)
                });
            }
            Op::BatchNormTrain { x, gamma, beta, ref xhat, ref inv_std } => {
                let (m, n) = val(x).dims2();
                self.affine_param_grads(grads, gamma, beta, gd, xhat, m, n);
                self.acc_with(grads, x, || {
                    let gam = val(gamma).data();
                    let mut sum_d = vec![0.0; n];
                    let mut sum_dx = vec![0.0; n];
                    for i in 0..m * n {
                        let dxh = gd[i] * gam[i % n];
                        sum_d[i % n] += dxh;
                        sum_dx[i % n] += dxh * xhat[i];
                    }
                    let mf = m as f64;
                    let d = (0..m * n)
                        .map(|i| {
                            let j = i % n;
                            let dxh = gd[i] * gam[j];
                            inv_std[j] / mf * (mf * dxh - sum_d[j] - xhat[i] * sum_dx[j])
                        })
                        .collect();
                    like(x, d)
                });
            }
            Op::BatchNormInfer { x, gamma, beta, ref xhat, ref inv_std } => {
                let (m, n) = val(x).dims2();
                self.affine_param_grads(grads, gamma, beta, gd, xhat, m, n);
                self.acc_with(grads, x, || {
                    let gam = val(gamma).data();
                    like(x, (0..m * n).map(|i| gd[i] * gam[i % n] * inv_std[i % n]).collect())
                });
            }
            Op::Dropout { x, ref mask } => {
                self.acc(grads, x, like(x, gd.iter().zip(mask).map(|(g, k)| g * k).collect()));
            }
            Op::WeightedBce { logits, ref targets, ref weights } => {
                let lv = val(logits);
                let n = lv.cols();
                let scale = gd[0] / lv.len().max(1) as f64;
                let d = lv
                    .data()
                    .iter()
                    .zip(targets)
                    .enumerate()
                    .map(|(i, (&z, &t))| scale * bce_grad(z, t, weights[i % n]))
                    .collect();
                self.acc(grads, logits, like(logits, d));
            }
            Op::AbsSum(a) => {
                let d = val(a).data().iter().map(|&x| gd[0] * sign(x)).collect();
                self.acc(grads, a, like(a, d));
            }
            Op::SqSum(a) => {
                let d = val(a).data().iter().map(|&x| gd[0] * 2.0 * x).collect();
                self.acc(grads, a, like(a, d));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn affine_param_grads(
        &self,
        grads: &mut [Option<Tensor>],
        gamma: Var,
        beta: Var,
        gd: &[f64],
        xhat: &[f64],
        m: usize,
        n: usize,
    ) {
        let like = |v: Var, data: Vec<f64>| Tensor::from_parts(self.value(v).shape().to_vec(), data);
        self.acc_with(grads, gamma, || {
            let mut s = vec![0.0; n];
            for i in 0..m * n {
                s[i % n] += gd[i] * xhat[i];
            }
            like(gamma, s)
        });
        self.acc_with(grads, beta, || {
            let mut s = vec![0.0; n];
            for i in 0..m * n {
                s[i % n] += gd[i];
            }
            like(beta, s)
        });
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::five_point;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Entries in ±[0.05, 1), away from the relu/abs kinks.
    fn rand_t(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..rows * cols)
            .map(|_| {
                let m = rng.random_range(0.05..1.0);
                if rng.random::<bool>() { m } else { -m }
            })
            .collect();
        Tensor::from_parts(vec![rows, cols], data)
    }

    type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

    fn eval(build: &Build, inputs: &[Tensor], coef: &[f64]) -> f64 {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone(), true)).collect();
        let y = build(&mut tape, &vars);
        tape.value(y).data().iter().zip(coef).map(|(a, b)| a * b).sum()
    }

    /// Largest relative error between tape and central-difference gradients.
    fn max_rel_err(build: &Build, inputs: &[Tensor], seed: u64) -> f64 {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone(), true)).collect();
        let y = build(&mut tape, &vars);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coef: Vec<f64> = (0..tape.value(y).len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grads = tape.backward_with_seed(y, Tensor::from_parts(tape.value(y).shape().to_vec(), coef.clone()));
        let mut worst: f64 = 0.0;
        for (k, t) in inputs.iter().enumerate() {
            for i in 0..t.len() {
                let num = five_point(|d| {
                    let mut p = inputs.to_vec();
                    p[k].data_mut()[i] += d;
                    eval(build, &p, &coef)
                });
                let a = grads.wrt(vars[k]).map_or(0.0, |g| g.data()[i]);
                worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-6));
            }
        }
        worst
    }

    #[test]
    fn neighbor_max_and_edge_message_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nbrs = vec![vec![1], vec![0, 2], vec![1], vec![]];
        let b: Box<Build> = Box::new(move |t, v| t.neighbor_max(v[0], &nbrs).unwrap());
        assert!(max_rel_err(&*b, &[rand_t(4, 3, &mut rng)], 1) <= 1e-5);

        let edges = Arc::new(vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
        let b: Box<Build> = Box::new(move |t, v| t.edge_message(v[0], v[1], edges.clone()).unwrap());
        assert!(max_rel_err(&*b, &[rand_t(3, 2, &mut rng), rand_t(4, 4, &mut rng)], 2) <= 1e-5);
    }

    #[test]
    fn neighbor_max_values() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, -1.0], vec![0.0, 0.0]]).unwrap(), false);
        let y = tape.neighbor_max(x, &[vec![1, 2], vec![0], vec![]]).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 0.0, 1.0, 5.0, 0.0, 0.0]);
    }

    #[test]
    fn linear_gradient_is_input_rows() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap(), true);
        let x = Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.0, 1.0, 1.0]]).unwrap();
        let mut tape = Tape::new(&store);
        let xv = tape.constant(x.clone());
        let wv = tape.param(w);
        let y = tape.matmul(xv, wv).unwrap();
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        // dL/dW[i][j] = Σ_r x[r][i]
        let col_sums = [1.5, 0.0, 3.0];
        let gw = g.param(w).unwrap();
        for i in 0..3 {
            assert_eq!(gw.row_slice(i), &[col_sums[i], col_sums[i]]);
        }
        assert!(g.wrt(xv).is_none());
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row(vec![1.0, 2.0]), true);
        let mut tape = Tape::new(&store);
        let _ = tape.param(w);
        let c = tape.constant(Tensor::scalar(3.0));
        let g = tape.backward(c).unwrap();
        assert!(g.param(w).is_none_or(|t| t.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(Tensor::row(vec![1.0, 2.0]), true);
        assert_eq!(tape.backward(x).unwrap_err(), TensorError::NonScalarLoss(vec![1, 2]));
    }

    #[test]
    fn shape_errors() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let a = tape.input(Tensor::zeros(&[2, 3]), false);
        let b = tape.input(Tensor::zeros(&[2, 2]), false);
        assert!(tape.matmul(a, b).is_err());
        assert!(tape.add(a, b).is_err());
        assert!(tape.add_bias(a, b).is_err());
    }

    #[test]
    fn repeated_param_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row(vec![2.0]), true);
        let mut tape = Tape::new(&store);
        let a = tape.param(w);
        let b = tape.param(w);
        assert_eq!(a, b);
        let sq = tape.mul(a, b).unwrap();
        let l = tape.sum(sq);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.param(w).unwrap().data(), &[4.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn elementwise_ops_match_finite_differences(rows in 1usize..4, cols in 1usize..5, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_t(rows, cols, &mut rng);
            let b = rand_t(rows, cols, &mut rng);
            let c = rand_t(cols, 3, &mut rng);
            let bias = rand_t(1, cols, &mut rng);
            let ops: Vec<Box<Build>> = vec![
                Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
                Box::new(|t, v| t.sub(v[0], v[1]).unwrap()),
                Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
                Box::new(|t, v| t.scale(v[0], -1.7)),
                Box::new(|t, v| t.one_minus(v[0])),
                Box::new(|t, v| t.tanh(v[0])),
                Box::new(|t, v| t.sigmoid(v[1])),
                Box::new(|t, v| t.selu(v[0])),
                Box::new(|t, v| t.softmax_rows(v[0])),
                Box::new(|t, v| t.sum_rows(v[0])),
                Box::new(|t, v| t.sum(v[1])),
                Box::new(|t, v| t.concat_cols(v[0], v[1]).unwrap()),
                Box::new(|t, v| t.sq_sum(v[0])),
                Box::new(|t, v| t.abs_sum(v[0])),
                Box::new(|t, v| t.matmul(v[0], v[2]).unwrap()),
                Box::new(|t, v| t.add_bias(v[0], v[3]).unwrap()),
            ];
            let inputs = [a, b, c, bias];
            for (k, op) in ops.iter().enumerate() {
                let e = max_rel_err(&**op, &inputs, seed);
                prop_assert!(e <= 1e-5, "op {} error {}", k, e);
            }
        }

        #[test]
        fn batchnorm_train_matches_finite_differences(rows in 2usize..6, cols in 1usize..4, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_t(rows, cols, &mut rng);
            let g = rand_t(1, cols, &mut rng);
            let b = rand_t(1, cols, &mut rng);
            let op: Box<Build> = Box::new(|t, v| t.batchnorm_train(v[0], v[1], v[2], 1e-3).unwrap().0);
            let e = max_rel_err(&*op, &[x, g, b], seed);
            prop_assert!(e <= 1e-5, "error {}", e);
        }

        #[test]
        fn backward_is_deterministic(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_t(3, 4, &mut rng);
            let w = rand_t(4, 2, &mut rng);
            let run = || {
                let store = ParamStore::new();
                let mut tape = Tape::new(&store);
                let xv = tape.input(x.clone(), true);
                let wv = tape.input(w.clone(), true);
                let y = tape.matmul(xv, wv).unwrap();
                let s = tape.selu(y);
                let l = tape.sq_sum(s);
                let g = tape.backward(l).unwrap();
                (tape.value(l).item().to_bits(), g.wrt(xv).unwrap().clone(), g.wrt(wv).unwrap().clone())
            };
            prop_assert_eq!(run(), run());
        }
    }
}
