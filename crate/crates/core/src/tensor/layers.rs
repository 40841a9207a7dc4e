use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::{Tensor, TensorError};
use crate::hashing::{derive_seed, hash_words};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense { input: usize, output: usize },
    Relu,
    Selu,
    Sigmoid,
    Softmax,
    BatchNorm { dim: usize, momentum: f64, eps: f64 },
    Dropout { rate: f64 },
    GruCell { input: usize, hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default)]
    pub l1: f64,
    #[serde(default)]
    pub l2: f64,
}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> LayerSpec {
        LayerSpec { kind, l1: 0.0, l2: 0.0 }
    }

    pub fn dense(input: usize, output: usize) -> LayerSpec {
        LayerSpec::new(LayerKind::Dense { input, output })
    }

    pub fn batchnorm(dim: usize) -> LayerSpec {
        LayerSpec::new(LayerKind::BatchNorm { dim, momentum: 0.1, eps: 1e-5 })
    }

    pub fn dropout(rate: f64) -> LayerSpec {
        LayerSpec::new(LayerKind::Dropout { rate })
    }

    pub fn with_regularization(mut self, l1: f64, l2: f64) -> LayerSpec {
        self.l1 = l1;
        self.l2 = l2;
        self
    }

    /// Width of the output given the input width.
    pub fn output_dim(&self, input: usize) -> Result<usize, TensorError> {
        let check = |want: usize| {
            if want == input {
                Ok(())
            } else {
                Err(TensorError::ShapeMismatch {
                    op: "layer",
                    left: vec![want],
                    right: vec![input],
                })
            }
        };
        match self.kind {
            LayerKind::Dense { input: i, output } => check(i).map(|_| output),
            LayerKind::BatchNorm { dim, .. } => check(dim).map(|_| dim),
            LayerKind::GruCell { input: i, hidden } => check(i).map(|_| hidden),
            LayerKind::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                Err(TensorError::Invalid(format!("dropout rate {rate} outside [0,1)")))
            }
            _ => Ok(input),
        }
    }

    /// Checks that each layer accepts the previous layer's output width.
    pub fn validate_stack(specs: &[LayerSpec], input: usize) -> Result<usize, TensorError> {
        specs.iter().try_fold(input, |d, s| s.output_dim(d))
    }
}

/// Batch statistics recorded in train mode, applied by the trainer after the
/// step so that forward passes never mutate the store.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

impl BnUpdate {
    pub fn apply(&self, store: &mut ParamStore) {
        let k = self.momentum;
        for (r, b) in store.get_mut(self.running_mean).data_mut().iter_mut().zip(&self.mean) {
            *r = (1.0 - k) * *r + k * b;
        }
        for (r, b) in store.get_mut(self.running_var).data_mut().iter_mut().zip(&self.var) {
            *r = (1.0 - k) * *r + k * b;
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCtx {
    pub mode: Mode,
    /// Already keyed by seed, epoch and step; each dropout layer folds in its own key.
    pub dropout_seed: u64,
    /// Use running statistics even in train mode.
    pub freeze_batchnorm: bool,
    pub bn_updates: Vec<BnUpdate>,
}

impl ForwardCtx {
    pub fn infer() -> ForwardCtx {
        ForwardCtx {
            mode: Mode::Infer,
            dropout_seed: 0,
            freeze_batchnorm: true,
            bn_updates: Vec::new(),
        }
    }

    pub fn train(dropout_seed: u64) -> ForwardCtx {
        ForwardCtx {
            mode: Mode::Train,
            dropout_seed,
            freeze_batchnorm: false,
            bn_updates: Vec::new(),
        }
    }
}

/// Uniform in ±sqrt(3 / fan_in), giving unit-variance pre-activations for unit-variance inputs.
pub(crate) fn fan_in_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (3.0 / rows.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::from_parts(vec![rows, cols], data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub l1: f64,
    pub l2: f64,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Dense {
        let weight = store.add(format!("{name}.weight"), fan_in_uniform(input, output, rng), true);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[1, output]), true);
        Dense { weight, bias, l1: 0.0, l2: 0.0 }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_bias(xw, b)
    }

    /// λ1·Σ|W| + λ2·ΣW² over the weight matrix, or `None` when both are zero.
    pub fn regularization(&self, tape: &mut Tape) -> Option<Var> {
        let w = tape.param(self.weight);
        let mut terms = Vec::new();
        if self.l1 != 0.0 {
            let s = tape.abs_sum(w);
            terms.push(tape.scale(s, self.l1));
        }
        if self.l2 != 0.0 {
            let s = tape.sq_sum(w);
            terms.push(tape.scale(s, self.l2));
        }
        terms.into_iter().reduce(|a, b| tape.add(a, b).expect("scalar terms"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, momentum: f64, eps: f64) -> BatchNorm {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[1, dim], 1.0), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[1, dim]), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[1, dim]), false),
            running_var: store.add(format!("{name}.running_var"), Tensor::full(&[1, dim], 1.0), false),
            momentum,
            eps,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, ctx: &mut ForwardCtx) -> Result<Var, TensorError> {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        if ctx.mode == Mode::Train && !ctx.freeze_batchnorm {
            let (y, mean, var) = tape.batchnorm_train(x, g, b, self.eps)?;
            ctx.bn_updates.push(BnUpdate {
                running_mean: self.running_mean,
                running_var: self.running_var,
                mean,
                var,
                momentum: self.momentum,
            });
            Ok(y)
        } else {
            let store = tape.store();
            let (mean, var) = (store.get(self.running_mean).data(), store.get(self.running_var).data());
            tape.batchnorm_infer(x, g, b, mean, var, self.eps)
        }
    }
}

/// h' = (1−z)⊙n + z⊙h with reset gate r, update gate z and candidate
/// n = tanh(x W_in + b_in + r⊙(h W_hn + b_hn)).
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    gates: [(Dense, Dense); 3],
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> GruCell {
        let mut gate = |g: &str| {
            (
                Dense::new(store, &format!("{name}.{g}_x"), input, hidden, rng),
                Dense::new(store, &format!("{name}.{g}_h"), hidden, hidden, rng),
            )
        };
        GruCell {
            gates: [gate("reset"), gate("update"), gate("candidate")],
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var, TensorError> {
        let pre = |tape: &mut Tape, k: usize| -> Result<(Var, Var), TensorError> {
            let (dx, dh) = &self.gates[k];
            Ok((dx.forward(tape, x)?, dh.forward(tape, h)?))
        };
        let (rx, rh) = pre(tape, 0)?;
        let (zx, zh) = pre(tape, 1)?;
        let (nx, nh) = pre(tape, 2)?;
        let r_sum = tape.add(rx, rh)?;
        let r = tape.sigmoid(r_sum);
        let z_sum = tape.add(zx, zh)?;
        let z = tape.sigmoid(z_sum);
        let rn = tape.mul(r, nh)?;
        let n_sum = tape.add(nx, rn)?;
        let n = tape.tanh(n_sum);
        let one_minus_z = tape.one_minus(z);
        let a = tape.mul(one_minus_z, n)?;
        let b = tape.mul(z, h)?;
        tape.add(a, b)
    }

    pub fn dense_layers(&self) -> impl Iterator<Item = &Dense> {
        self.gates.iter().flat_map(|(a, b)| [a, b])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Relu,
    Selu,
    Sigmoid,
    Softmax,
    BatchNorm(BatchNorm),
    Dropout { rate: f64, key: u64 },
    GruCell(GruCell),
}

impl Layer {
    pub fn build(spec: &LayerSpec, store: &mut ParamStore, name: &str, rng: &mut impl Rng) -> Layer {
        match spec.kind {
            LayerKind::Dense { input, output } => {
                let mut d = Dense::new(store, name, input, output, rng);
                d.l1 = spec.l1;
                d.l2 = spec.l2;
                Layer::Dense(d)
            }
            LayerKind::Relu => Layer::Relu,
            LayerKind::Selu => Layer::Selu,
            LayerKind::Sigmoid => Layer::Sigmoid,
            LayerKind::Softmax => Layer::Softmax,
            LayerKind::BatchNorm { dim, momentum, eps } => Layer::BatchNorm(BatchNorm::new(store, name, dim, momentum, eps)),
            LayerKind::Dropout { rate } => Layer::Dropout {
                rate,
                key: hash_words(&name.bytes().map(u64::from).collect::<Vec<_>>()),
            },
            LayerKind::GruCell { input, hidden } => Layer::GruCell(GruCell::new(store, name, input, hidden, rng)),
        }
    }

    /// Applies the layer. A GRU cell takes `[input, hidden]`; every other
    /// kind takes a single input.
    pub fn forward(&self, tape: &mut Tape, inputs: &[Var], ctx: &mut ForwardCtx) -> Result<Var, TensorError> {
        let arity = if matches!(self, Layer::GruCell(_)) { 2 } else { 1 };
        if inputs.len() != arity {
            return Err(TensorError::Invalid(format!("layer expects {arity} inputs, got {}", inputs.len())));
        }
        let x = inputs[0];
        match self {
            Layer::Dense(d) => d.forward(tape, x),
            Layer::Relu => Ok(tape.relu(x)),
            Layer::Selu => Ok(tape.selu(x)),
            Layer::Sigmoid => Ok(tape.sigmoid(x)),
            Layer::Softmax => Ok(tape.softmax_rows(x)),
            Layer::BatchNorm(bn) => bn.forward(tape, x, ctx),
            Layer::Dropout { rate, key } => {
                if ctx.mode == Mode::Infer || *rate == 0.0 {
                    return Ok(x);
                }
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.dropout_seed, &[*key]));
                let keep = 1.0 / (1.0 - rate);
                let mask = (0..tape.value(x).len())
                    .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep })
                    .collect();
                tape.dropout(x, mask)
            }
            Layer::GruCell(cell) => cell.forward(tape, x, inputs[1]),
        }
    }

    /// Regularization term contributed by this layer, if any.
    pub fn regularization(&self, tape: &mut Tape) -> Option<Var> {
        match self {
            Layer::Dense(d) => d.regularization(tape),
            _ => None,
        }
    }
}

/// Result of [`check_layer_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Loss = Σ c ⊙ layer(x) for a fixed coefficient tensor c.
fn weighted_output(layer: &Layer, store: &ParamStore, inputs: &[Tensor], coef: &Tensor, mode: Mode) -> Result<f64, TensorError> {
    let mut tape = Tape::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone(), true)).collect();
    let mut ctx = ForwardCtx { mode, ..ForwardCtx::train(5) };
    let y = layer.forward(&mut tape, &vars, &mut ctx)?;
    Ok(tape.value(y).data().iter().zip(coef.data()).map(|(a, b)| a * b).sum())
}

/// Compares tape gradients of Σ c ⊙ layer(x), with c drawn from `seed`,
/// against five-point central differences (step 1e-3) for every input entry
/// and every trainable parameter. Relative error is
/// |a − n| / max(|a|, |n|, 1e-6).
pub fn check_layer_gradients(
    layer: &Layer,
    store: &ParamStore,
    inputs: &[Tensor],
    mode: Mode,
    seed: u64,
) -> Result<LayerGradCheck, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone(), true)).collect();
    let mut ctx = ForwardCtx { mode, ..ForwardCtx::train(5) };
    let y = layer.forward(&mut tape, &vars, &mut ctx)?;
    let shape = tape.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    let coef = Tensor::from_parts(shape, (0..n).map(|_| rng.random_range(-1.5..1.5)).collect());
    let grads = tape.backward_with_seed(y, coef.clone());
    let mut out = LayerGradCheck { checked: 0, max_rel_err: 0.0, worst: String::new() };
    let mut record = |a: f64, num: f64, what: String| {
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
        out.checked += 1;
        if rel > out.max_rel_err || out.worst.is_empty() {
            out.max_rel_err = rel;
            out.worst = format!("{what}: analytic {a:e} numeric {num:e}");
        }
    };
    let mut failure = None;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        for i in 0..t.len() {
            let num = super::five_point_derivative(
                |d| {
                    let mut p = inputs.to_vec();
                    p[k].data_mut()[i] += d;
                    weighted_output(layer, store, &p, &coef, mode).unwrap_or_else(|e| {
                        failure = Some(e);
                        f64::NAN
                    })
                },
                1e-3,
            );
            record(analytic.data()[i], num, format!("input {k}[{i}]"));
        }
    }
    for id in store.ids().filter(|&id| store.entry(id).trainable) {
        let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        let mut s = store.clone();
        for i in 0..store.get(id).len() {
            let orig = s.get(id).data()[i];
            let num = super::five_point_derivative(
                |d| {
                    s.get_mut(id).data_mut()[i] = orig + d;
                    weighted_output(layer, &s, inputs, &coef, mode).unwrap_or_else(|e| {
                        failure = Some(e);
                        f64::NAN
                    })
                },
                1e-3,
            );
            s.get_mut(id).data_mut()[i] = orig;
            record(analytic.data()[i], num, format!("{}[{i}]", store.entry(id).name));
        }
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    /// Entries in ±[0.05, 1.5), away from the relu kink.
    fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..rows * cols)
            .map(|_| {
                let m = rng.random_range(0.05..1.5);
                if rng.random::<bool>() { m } else { -m }
            })
            .collect();
        Tensor::from_parts(vec![rows, cols], data)
    }

    fn gradcheck(layer: &Layer, store: &ParamStore, inputs: &[Tensor], mode: Mode) {
        let check = check_layer_gradients(layer, store, inputs, mode, 99).unwrap();
        assert!(check.checked > 0);
        assert!(check.max_rel_err <= 1e-5, "{layer:?}: {}", check.worst);
    }

    #[test]
    fn every_layer_kind_passes_finite_differences() {
        let mut r = rng();
        let x = random_tensor(4, 3, &mut r);
        let specs = [
            LayerSpec::dense(3, 5),
            LayerSpec::new(LayerKind::Relu),
            LayerSpec::new(LayerKind::Selu),
            LayerSpec::new(LayerKind::Sigmoid),
            LayerSpec::new(LayerKind::Softmax),
            LayerSpec::batchnorm(3),
            LayerSpec::dropout(0.4),
        ];
        for spec in &specs {
            let mut store = ParamStore::new();
            let layer = Layer::build(spec, &mut store, "l", &mut r);
            for mode in [Mode::Train, Mode::Infer] {
                gradcheck(&layer, &store, std::slice::from_ref(&x), mode);
            }
        }
        let mut store = ParamStore::new();
        let gru = Layer::build(&LayerSpec::new(LayerKind::GruCell { input: 3, hidden: 2 }), &mut store, "g", &mut r);
        gradcheck(&gru, &store, &[x.clone(), random_tensor(4, 2, &mut r)], Mode::Train);
    }

    #[test]
    fn batchnorm_infer_uses_running_stats_gradients() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 3, 0.1, 1e-5);
        store.get_mut(bn.running_mean).data_mut().copy_from_slice(&[0.3, -0.2, 1.0]);
        store.get_mut(bn.running_var).data_mut().copy_from_slice(&[2.0, 0.5, 1.5]);
        store.get_mut(bn.gamma).data_mut().copy_from_slice(&[1.2, -0.7, 0.4]);
        let layer = Layer::BatchNorm(bn);
        gradcheck(&layer, &store, &[random_tensor(5, 3, &mut r)], Mode::Infer);
    }

    #[test]
    fn dense_identity_is_identity() {
        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "d", 3, 3, &mut rng());
        *store.get_mut(d.weight) = Tensor::identity(3);
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.5], vec![0.0, 4.0, -1.0]]).unwrap();
        let mut tape = Tape::new(&store);
        let xv = tape.input(x.clone(), false);
        let y = d.forward(&mut tape, xv).unwrap();
        assert_eq!(tape.value(y).data(), x.data());
    }

    #[test]
    fn relu_of_negative_input_is_zero() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(Tensor::row(vec![-1.0, -0.5, -3.0]), false);
        let y = Layer::Relu.forward(&mut tape, &[x], &mut ForwardCtx::infer()).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_zero_and_infer_are_identity() {
        let store = ParamStore::new();
        let x = Tensor::row(vec![1.0, 2.0, 3.0, 4.0]);
        for (rate, mode) in [(0.0, Mode::Train), (0.0, Mode::Infer), (0.5, Mode::Infer)] {
            let mut tape = Tape::new(&store);
            let v = tape.input(x.clone(), false);
            let layer = Layer::Dropout { rate, key: 1 };
            let mut ctx = ForwardCtx { mode, ..ForwardCtx::train(3) };
            let y = layer.forward(&mut tape, &[v], &mut ctx).unwrap();
            assert_eq!(tape.value(y), &x);
        }
    }

    #[test]
    fn dropout_scales_kept_entries() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let v = tape.input(Tensor::full(&[1, 1000], 1.0), false);
        let y = Layer::Dropout { rate: 0.25, key: 7 }
            .forward(&mut tape, &[v], &mut ForwardCtx::train(1))
            .unwrap();
        let vals = tape.value(y).data();
        assert!(vals.iter().all(|&a| a == 0.0 || (a - 4.0 / 3.0).abs() < 1e-15));
        let kept = vals.iter().filter(|&&a| a > 0.0).count();
        assert!((650..850).contains(&kept), "{kept}");
    }

    #[test]
    fn batchnorm_train_normalizes_columns() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 4, 0.1, 1e-12);
        let mut tape = Tape::new(&store);
        let x = tape.input(random_tensor(16, 4, &mut r), false);
        let mut ctx = ForwardCtx::train(0);
        let y = bn.forward(&mut tape, x, &mut ctx).unwrap();
        let y = tape.value(y);
        for c in 0..4 {
            let col: Vec<f64> = (0..16).map(|i| y.get(i, c)).collect();
            let mean = col.iter().sum::<f64>() / 16.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9, "{mean} {var}");
        }
        assert_eq!(ctx.bn_updates.len(), 1);
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2, 0.1, 1e-5);
        let upd = BnUpdate {
            running_mean: bn.running_mean,
            running_var: bn.running_var,
            mean: vec![1.0, 2.0],
            var: vec![3.0, 1.0],
            momentum: 0.1,
        };
        upd.apply(&mut store);
        assert_eq!(store.get(bn.running_mean).data(), &[0.1, 0.2]);
        assert!((store.get(bn.running_var).data()[0] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn regularization_matches_direct_sum() {
        let mut store = ParamStore::new();
        let spec = LayerSpec::dense(4, 3).with_regularization(0.01, 0.003);
        let layer = Layer::build(&spec, &mut store, "d", &mut rng());
        let Layer::Dense(d) = &layer else { unreachable!() };
        let w = store.get(d.weight).data();
        let expected: f64 = 0.01 * w.iter().map(|x| x.abs()).sum::<f64>() + 0.003 * w.iter().map(|x| x * x).sum::<f64>();
        let mut tape = Tape::new(&store);
        let reg = layer.regularization(&mut tape).unwrap();
        assert!((tape.value(reg).item() - expected).abs() < 1e-15);
        let g = tape.backward(reg).unwrap();
        let gw = g.param(d.weight).unwrap();
        for (gv, wv) in gw.data().iter().zip(w) {
            assert!((gv - (0.01 * wv.signum() + 0.006 * wv)).abs() < 1e-15);
        }
    }

    #[test]
    fn stack_validation() {
        let ok = [LayerSpec::dense(4, 3), LayerSpec::new(LayerKind::Relu), LayerSpec::batchnorm(3)];
        assert_eq!(LayerSpec::validate_stack(&ok, 4), Ok(3));
        let bad = [LayerSpec::dense(4, 3), LayerSpec::batchnorm(4)];
        assert!(LayerSpec::validate_stack(&bad, 4).is_err());
        assert!(LayerSpec::dropout(1.0).output_dim(3).is_err());
    }
}
