//! Graph convolutional and message-passing networks over molecular graphs.
//!
//! Both variants share the same shape: atom features are projected to the
//! first message width, message layers update per-atom states, each layer's
//! states are softmax-projected and summed over atoms, and the summed graph
//! vector feeds a dense head of relu/batchnorm/dropout blocks.

mod features;
mod train;

pub use features::{
    atom_features, bond_features, graph_input, FeatureConfig, FeatureError, GraphInput, BOND_FEATURES,
};
pub use train::{read_history_csv, train, write_history_csv, EpochRecord, TrainData};

use crate::tensor::{
    BatchNorm, Checkpoint, CheckpointError, Dense, ForwardCtx, GruCell, Layer, LayerSpec, Mode, OptimizerState,
    ParamGrads, ParamStore, PosWeightStrategy, Tape, Tensor, TensorError, Var,
};
use crate::tensor::{AdamConfig, CosineRestarts};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training split is empty")]
    EmptyTrainSplit,
    #[error("label rows have {got} entries, model has {expected} tasks")]
    LabelMismatch { expected: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: u64, step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Gcn,
    Mpnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub schedule: CosineRestarts,
    pub pos_weights: PosWeightStrategy,
    /// Use running batchnorm statistics during training as well.
    pub freeze_batchnorm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 32,
            seed: 0,
            adam: AdamConfig::default(),
            schedule: CosineRestarts::default(),
            pos_weights: PosWeightStrategy::InverseFrequency,
            freeze_batchnorm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub variant: Variant,
    pub message_dims: Vec<usize>,
    pub readout_dim: usize,
    pub head_dims: Vec<usize>,
    pub dropout: f64,
    pub n_tasks: usize,
    pub l1: f64,
    pub l2: f64,
    pub batchnorm_momentum: f64,
    pub features: FeatureConfig,
    pub train: TrainConfig,
}

impl GnnConfig {
    pub fn gcn(n_tasks: usize) -> GnnConfig {
        GnnConfig {
            variant: Variant::Gcn,
            message_dims: vec![15, 20, 27, 36],
            readout_dim: 175,
            head_dims: vec![96, 63],
            dropout: 0.47,
            n_tasks,
            l1: 0.0,
            l2: 0.0,
            batchnorm_momentum: 0.1,
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
        }
    }

    pub fn mpnn(n_tasks: usize) -> GnnConfig {
        GnnConfig {
            variant: Variant::Mpnn,
            message_dims: vec![43; 5],
            readout_dim: 197,
            head_dims: vec![392; 3],
            dropout: 0.12,
            l1: 1e-5,
            l2: 1e-4,
            ..GnnConfig::gcn(n_tasks)
        }
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        let bad = |m: &str| Err(GnnError::Config(m.to_string()));
        if self.message_dims.is_empty() || self.message_dims.contains(&0) {
            return bad("message dims must be non-empty and positive");
        }
        if self.readout_dim == 0 || self.head_dims.contains(&0) {
            return bad("readout and head dims must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.n_tasks == 0 {
            return bad("n_tasks must be at least 1");
        }
        if self.variant == Variant::Mpnn && self.message_dims.windows(2).any(|w| w[0] != w[1]) {
            return bad("MPNN layers share one width because the GRU state carries over");
        }
        if self.l1 < 0.0 || self.l2 < 0.0 {
            return bad("regularization weights must be non-negative");
        }
        if self.train.batch_size == 0 {
            return bad("batch size must be positive");
        }
        Ok(())
    }

    /// Width of the embedding returned by [`GnnModel::embed`].
    pub fn embedding_dim(&self) -> usize {
        self.head_dims.last().copied().unwrap_or(self.readout_dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum MessageLayer {
    Gcn(Dense),
    Mpnn { edge_net: Dense, gru: GruCell },
}

#[derive(Debug, Clone, PartialEq)]
struct HeadBlock {
    dense: Dense,
    bn: BatchNorm,
    dropout: Layer,
}

#[derive(Debug, Clone, PartialEq)]
struct Layers {
    input: Dense,
    messages: Vec<MessageLayer>,
    readout: Vec<Dense>,
    head: Vec<HeadBlock>,
    output: Dense,
}

fn build_layers(cfg: &GnnConfig, store: &mut ParamStore) -> Layers {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let d0 = cfg.message_dims[0];
    let input = Dense::new(store, "input", cfg.features.atom_dim(), d0, &mut rng);
    let mut messages = Vec::new();
    let mut prev = d0;
    for (l, &d) in cfg.message_dims.iter().enumerate() {
        let name = format!("message{l}");
        messages.push(match cfg.variant {
            Variant::Gcn => MessageLayer::Gcn(Dense::new(store, &name, 2 * prev, d, &mut rng)),
            Variant::Mpnn => {
                let edge_net = Dense::new(store, &format!("{name}.edge"), BOND_FEATURES, d * d, &mut rng);
                // A_e multiplies a d-dim state, so the effective fan-in is 5·d.
                let scale = 1.0 / (d as f64).sqrt();
                store.get_mut(edge_net.weight).data_mut().iter_mut().for_each(|w| *w *= scale);
                let gru = GruCell::new(store, &format!("{name}.gru"), d, d, &mut rng);
                MessageLayer::Mpnn { edge_net, gru }
            }
        });
        prev = d;
    }
    let readout = cfg
        .message_dims
        .iter()
        .enumerate()
        .map(|(l, &d)| Dense::new(store, &format!("readout{l}"), d, cfg.readout_dim, &mut rng))
        .collect();
    let mut head = Vec::new();
    let mut prev = cfg.readout_dim;
    for (k, &d) in cfg.head_dims.iter().enumerate() {
        let name = format!("head{k}");
        let mut dense = Dense::new(store, &name, prev, d, &mut rng);
        dense.l1 = cfg.l1;
        dense.l2 = cfg.l2;
        let bn = BatchNorm::new(store, &format!("{name}.bn"), d, cfg.batchnorm_momentum, 1e-5);
        let dropout = Layer::build(&LayerSpec::dropout(cfg.dropout), store, &format!("{name}.dropout"), &mut rng);
        head.push(HeadBlock { dense, bn, dropout });
        prev = d;
    }
    let mut output = Dense::new(store, "output", prev, cfg.n_tasks, &mut rng);
    output.l1 = cfg.l1;
    output.l2 = cfg.l2;
    Layers {
        input,
        messages,
        readout,
        head,
        output,
    }
}

/// Logits and embedding for one molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnArchitecture {
    pub config: GnnConfig,
    pub epochs_trained: u64,
}

#[derive(Debug, Clone)]
pub struct GnnModel {
    config: GnnConfig,
    store: ParamStore,
    layers: Layers,
    epochs_trained: u64,
    optimizer: Option<OptimizerState>,
}

impl GnnModel {
    pub fn new(config: GnnConfig) -> Result<GnnModel, GnnError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let layers = build_layers(&config, &mut store);
        Ok(GnnModel {
            config,
            store,
            layers,
            epochs_trained: 0,
            optimizer: None,
        })
    }

    pub fn config(&self) -> &GnnConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn epochs_trained(&self) -> u64 {
        self.epochs_trained
    }

    pub fn featurize(&self, g: &crate::molgraph::MolecularGraph) -> Result<GraphInput, GnnError> {
        Ok(graph_input(g, &self.config.features)?)
    }

    /// Sets the final dense layer to zero so every logit is 0.
    pub fn zero_output_layer(&mut self) {
        let out = self.layers.output.clone();
        for id in [out.weight, out.bias] {
            self.store.get_mut(id).data_mut().iter_mut().for_each(|w| *w = 0.0);
        }
    }

    fn message_layer(&self, tape: &mut Tape, layer: &MessageLayer, h: Var, g: &GraphInput) -> Result<Var, GnnError> {
        Ok(match layer {
            MessageLayer::Gcn(dense) => {
                let m = tape.neighbor_max(h, &g.neighbors)?;
                let hm = tape.concat_cols(h, m)?;
                let z = dense.forward(tape, hm)?;
                tape.selu(z)
            }
            MessageLayer::Mpnn { edge_net, gru } => {
                let ef = tape.constant(g.edge_features.clone());
                let a = edge_net.forward(tape, ef)?;
                let m = tape.edge_message(h, a, g.edges.clone())?;
                gru.forward(tape, m, h)?
            }
        })
    }

    /// Per-layer node states followed by the summed readout vector.
    fn trunk(&self, tape: &mut Tape, g: &GraphInput) -> Result<(Vec<Var>, Var), GnnError> {
        let x = tape.constant(g.atoms.clone());
        let mut h = self.layers.input.forward(tape, x)?;
        let mut states = Vec::with_capacity(self.layers.messages.len());
        for layer in &self.layers.messages {
            h = self.message_layer(tape, layer, h, g)?;
            states.push(h);
        }
        let mut total: Option<Var> = None;
        let mut carried: Option<Var> = None;
        for (&s, dense) in states.iter().zip(&self.layers.readout) {
            let z = dense.forward(tape, s)?;
            let p = tape.softmax_rows(z);
            let mut r = tape.sum_rows(p);
            if self.config.variant == Variant::Mpnn {
                if let Some(c) = carried {
                    r = tape.add(r, c)?;
                }
                carried = Some(r);
            }
            total = Some(match total {
                Some(t) => tape.add(t, r)?,
                None => r,
            });
        }
        Ok((states, total.expect("at least one message layer")))
    }

    /// Dense head over a batch of graph vectors; returns (logits, embedding).
    fn head(&self, tape: &mut Tape, x: Var, ctx: &mut ForwardCtx) -> Result<(Var, Var), GnnError> {
        let mut h = x;
        for block in &self.layers.head {
            let z = block.dense.forward(tape, h)?;
            let a = tape.relu(z);
            let b = block.bn.forward(tape, a, ctx)?;
            h = block.dropout.forward(tape, &[b], ctx)?;
        }
        Ok((self.layers.output.forward(tape, h)?, h))
    }

    fn regularization(&self, tape: &mut Tape) -> Result<Option<Var>, GnnError> {
        let mut total = None;
        for d in self.layers.head.iter().map(|b| &b.dense).chain([&self.layers.output]) {
            if let Some(r) = d.regularization(tape) {
                total = Some(match total {
                    Some(t) => tape.add(t, r)?,
                    None => r,
                });
            }
        }
        Ok(total)
    }

    /// Node states after every message layer, one row per atom.
    pub fn node_states(&self, g: &GraphInput) -> Result<Vec<Tensor>, GnnError> {
        let mut tape = Tape::new(&self.store);
        let (states, _) = self.trunk(&mut tape, g)?;
        Ok(states.into_iter().map(|s| tape.value(s).clone()).collect())
    }

    /// Summed readout vector fed to the head.
    pub fn readout(&self, g: &GraphInput) -> Result<Vec<f64>, GnnError> {
        let mut tape = Tape::new(&self.store);
        let (_, r) = self.trunk(&mut tape, g)?;
        Ok(tape.value(r).data().to_vec())
    }

    /// Single-molecule forward pass. Train mode draws dropout from `dropout_seed`
    /// and normalizes with the statistics of this one-row batch.
    pub fn forward_with(&self, g: &GraphInput, mode: Mode, dropout_seed: u64) -> Result<ForwardOutput, GnnError> {
        let mut tape = Tape::new(&self.store);
        let (_, r) = self.trunk(&mut tape, g)?;
        let mut ctx = match mode {
            Mode::Infer => ForwardCtx::infer(),
            Mode::Train => ForwardCtx {
                freeze_batchnorm: self.config.train.freeze_batchnorm,
                ..ForwardCtx::train(dropout_seed)
            },
        };
        let (logits, emb) = self.head(&mut tape, r, &mut ctx)?;
        Ok(ForwardOutput {
            logits: tape.value(logits).data().to_vec(),
            embedding: tape.value(emb).data().to_vec(),
        })
    }

    pub fn forward(&self, g: &GraphInput, mode: Mode) -> Result<ForwardOutput, GnnError> {
        self.forward_with(g, mode, self.config.train.seed)
    }

    pub fn embed(&self, g: &GraphInput) -> Result<Vec<f64>, GnnError> {
        Ok(self.forward(g, Mode::Infer)?.embedding)
    }

    /// Infer-mode logits for many molecules, computed in parallel.
    pub fn predict_logits(&self, inputs: &[GraphInput]) -> Result<Vec<Vec<f64>>, GnnError> {
        inputs
            .par_iter()
            .map(|g| Ok(self.forward(g, Mode::Infer)?.logits))
            .collect()
    }

    /// Infer-mode sigmoid probabilities.
    pub fn predict_proba(&self, inputs: &[GraphInput]) -> Result<Vec<Vec<f64>>, GnnError> {
        Ok(self
            .predict_logits(inputs)?
            .into_iter()
            .map(|row| row.into_iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect())
            .collect())
    }

    pub fn embed_all(&self, inputs: &[GraphInput]) -> Result<Vec<Vec<f64>>, GnnError> {
        inputs.par_iter().map(|g| self.embed(g)).collect()
    }

    /// Weighted BCE (plus regularization) over a batch and its gradient.
    ///
    /// Each molecule's trunk runs on its own tape; the graph vectors are
    /// stacked into one batch for the head so batchnorm sees the whole batch.
    /// Per-molecule gradients are summed in batch order.
    pub fn batch_loss_grad(
        &self,
        batch: &[&GraphInput],
        targets: &[&[u8]],
        pos_weights: &[f64],
        ctx: &mut ForwardCtx,
    ) -> Result<(f64, ParamGrads), GnnError> {
        if batch.len() != targets.len() {
            return Err(GnnError::Config("batch and target counts differ".into()));
        }
        if let Some(t) = targets.iter().find(|t| t.len() != self.config.n_tasks) {
            return Err(GnnError::LabelMismatch {
                expected: self.config.n_tasks,
                got: t.len(),
            });
        }
        let trunks: Vec<(Tape, Var)> = batch
            .par_iter()
            .map(|g| {
                let mut tape = Tape::new(&self.store);
                let (_, r) = self.trunk(&mut tape, g)?;
                Ok((tape, r))
            })
            .collect::<Result<_, GnnError>>()?;
        let rows: Vec<Vec<f64>> = trunks.iter().map(|(t, r)| t.value(*r).data().to_vec()).collect();

        let mut tape = Tape::new(&self.store);
        let x = tape.input(Tensor::from_rows(&rows)?, true);
        let (logits, _) = self.head(&mut tape, x, ctx)?;
        let flat: Vec<f64> = targets.iter().flat_map(|t| t.iter().map(|&y| f64::from(y))).collect();
        let mut loss = tape.weighted_bce(logits, &flat, pos_weights)?;
        if let Some(reg) = self.regularization(&mut tape)? {
            loss = tape.add(loss, reg)?;
        }
        let loss_value = tape.value(loss).item();
        let head_grads = tape.backward(loss)?;
        let dx = head_grads.wrt(x).cloned().unwrap_or_else(|| Tensor::zeros(&[rows.len(), self.config.readout_dim]));

        let trunk_grads: Vec<ParamGrads> = trunks
            .par_iter()
            .enumerate()
            .map(|(i, (t, r))| t.backward_with_seed(*r, Tensor::row(dx.row_slice(i).to_vec())).into_params())
            .collect();
        let mut grads = head_grads.into_params();
        for g in &trunk_grads {
            grads.merge(g);
        }
        Ok((loss_value, grads))
    }

    /// Forward-only version of [`GnnModel::batch_loss_grad`].
    pub fn batch_loss(
        &self,
        batch: &[&GraphInput],
        targets: &[&[u8]],
        pos_weights: &[f64],
        ctx: &mut ForwardCtx,
    ) -> Result<f64, GnnError> {
        let rows: Vec<Vec<f64>> = batch
            .par_iter()
            .map(|g| self.readout(g))
            .collect::<Result<_, GnnError>>()?;
        self.head_loss(&rows, targets, pos_weights, ctx)
    }

    /// Loss of the head given precomputed readout vectors.
    fn head_loss(
        &self,
        rows: &[Vec<f64>],
        targets: &[&[u8]],
        pos_weights: &[f64],
        ctx: &mut ForwardCtx,
    ) -> Result<f64, GnnError> {
        let mut tape = Tape::new(&self.store);
        let x = tape.constant(Tensor::from_rows(rows)?);
        let (logits, _) = self.head(&mut tape, x, ctx)?;
        let flat: Vec<f64> = targets.iter().flat_map(|t| t.iter().map(|&y| f64::from(y))).collect();
        let mut loss = tape.weighted_bce(logits, &flat, pos_weights)?;
        if let Some(reg) = self.regularization(&mut tape)? {
            loss = tape.add(loss, reg)?;
        }
        Ok(tape.value(loss).item())
    }

    fn is_head_param(&self, id: crate::tensor::ParamId) -> bool {
        let name = &self.store.entry(id).name;
        name.starts_with("head") || name.starts_with("output")
    }

    pub fn to_checkpoint(&self) -> Checkpoint<GnnArchitecture> {
        Checkpoint::new(
            GnnArchitecture {
                config: self.config.clone(),
                epochs_trained: self.epochs_trained,
            },
            &self.store,
            self.optimizer.clone(),
            self.config.train.seed,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint<GnnArchitecture>) -> Result<GnnModel, GnnError> {
        let mut model = GnnModel::new(ck.architecture.config.clone())?;
        let loaded = ck.to_store()?;
        let same_layout = loaded.len() == model.store.len()
            && loaded
                .entries()
                .iter()
                .zip(model.store.entries())
                .all(|(a, b)| a.name == b.name && a.tensor.shape() == b.tensor.shape() && a.trainable == b.trainable);
        if !same_layout {
            return Err(GnnError::Config("checkpoint parameters do not match the architecture".into()));
        }
        if let Some(opt) = &ck.optimizer {
            if !opt.matches(&loaded) {
                return Err(GnnError::Config("optimizer state does not match parameters".into()));
            }
        }
        model.store = loaded;
        model.epochs_trained = ck.architecture.epochs_trained;
        model.optimizer = ck.optimizer.clone();
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), GnnError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<GnnModel, GnnError> {
        GnnModel::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Steps tried in turn; a stencil that straddles a relu kink is not a valid
/// oracle, so the closest of the estimates is kept.
const FD_STEPS: &[f64] = &[1e-4, 1e-5, 1e-6];

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Compares analytic batch-loss gradients against five-point central
/// differences on a random `fraction` of the trainable scalars. Relative
/// error is |a − n| / max(|a|, |n|, 1e-6). Runs in train mode with a fixed
/// dropout seed so both sides see the same masks and batch statistics.
/// Each probe tries the steps in `FD_STEPS` until one agrees to 1e-6 and
/// reports the closest.
pub fn gradient_check(
    model: &GnnModel,
    batch: &[&GraphInput],
    targets: &[&[u8]],
    pos_weights: &[f64],
    fraction: f64,
    seed: u64,
) -> Result<GradCheck, GnnError> {
    let ctx = || ForwardCtx::train(seed);
    let (_, grads) = model.batch_loss_grad(batch, targets, pos_weights, &mut ctx())?;
    let scalars: Vec<(crate::tensor::ParamId, usize)> = model
        .store
        .ids()
        .filter(|&id| model.store.entry(id).trainable)
        .flat_map(|id| (0..model.store.get(id).len()).map(move |i| (id, i)))
        .collect();
    let k = ((scalars.len() as f64 * fraction).ceil() as usize).clamp(1, scalars.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<(crate::tensor::ParamId, usize)> =
        rand::seq::index::sample(&mut rng, scalars.len(), k).into_iter().map(|i| scalars[i]).collect();
    picked.sort();
    // Head parameters leave the per-molecule readouts unchanged, so those
    // probes reuse the cached readouts and only rerun the head.
    let readouts: Vec<Vec<f64>> = batch.iter().map(|g| model.readout(g)).collect::<Result<_, _>>()?;
    let chunk = picked.len().div_ceil(rayon::current_num_threads().max(1)).max(1);
    let results: Vec<(f64, String)> = picked
        .par_chunks(chunk)
        .map(|part| -> Result<Vec<(f64, String)>, GnnError> {
            let mut local = model.clone();
            let mut out = Vec::with_capacity(part.len());
            for &(id, i) in part {
                let orig = local.store.get(id).data()[i];
                let a = grads.get(id).map_or(0.0, |g| g.data()[i]);
                let mut best: Option<(f64, f64)> = None;
                for &h in FD_STEPS {
                    let mut err = None;
                    let num = crate::tensor::five_point_derivative(
                        |d| {
                            local.store.get_mut(id).data_mut()[i] = orig + d;
                            let loss = if local.is_head_param(id) {
                                local.head_loss(&readouts, targets, pos_weights, &mut ctx())
                            } else {
                                local.batch_loss(batch, targets, pos_weights, &mut ctx())
                            };
                            loss.unwrap_or_else(|e| {
                                err = Some(e);
                                f64::NAN
                            })
                        },
                        h,
                    );
                    local.store.get_mut(id).data_mut()[i] = orig;
                    if let Some(e) = err {
                        return Err(e);
                    }
                    let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
                    if best.is_none_or(|(r, _)| rel < r) {
                        best = Some((rel, num));
                    }
                    if rel <= 1e-6 {
                        break;
                    }
                }
                let (rel, num) = best.expect("at least one step");
                out.push((rel, format!("{}[{i}] analytic {a:e} numeric {num:e}", local.store.entry(id).name)));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    let (max_rel_err, worst) = results
        .into_iter()
        .fold((0.0, String::new()), |acc, r| if r.0 > acc.0 || acc.1.is_empty() { r } else { acc });
    Ok(GradCheck {
        checked: k,
        max_rel_err,
        worst,
    })
}

#[cfg(test)]
mod tests;
