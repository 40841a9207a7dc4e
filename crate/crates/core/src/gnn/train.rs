use super::{GnnError, GnnModel, GraphInput};
use crate::hashing::derive_seed;
use crate::metrics::mean_auroc;
use crate::tensor::{adam_step, pos_weights, weighted_bce, ForwardCtx, OptimizerState, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Featurized molecules and their 0/1 label rows.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub inputs: &'a [GraphInput],
    pub labels: &'a [Vec<u8>],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_mean_auroc: Option<f64>,
}

/// Splits a shuffled order into batches, folding a trailing single example
/// into the previous batch so batchnorm never sees a batch of one.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

/// Minimizes weighted BCE on `train_idx` for the configured number of
/// epochs, evaluating on `val_idx` after each epoch.
pub fn train(
    model: &mut GnnModel,
    data: TrainData,
    train_idx: &[usize],
    val_idx: &[usize],
) -> Result<Vec<EpochRecord>, GnnError> {
    if train_idx.is_empty() {
        return Err(GnnError::EmptyTrainSplit);
    }
    let n_tasks = model.config.n_tasks;
    if data.inputs.len() != data.labels.len() {
        return Err(GnnError::Config("inputs and labels differ in length".into()));
    }
    if let Some(row) = data.labels.iter().find(|r| r.len() != n_tasks) {
        return Err(GnnError::LabelMismatch {
            expected: n_tasks,
            got: row.len(),
        });
    }
    let tc = model.config.train.clone();
    let train_labels: Vec<Vec<u8>> = train_idx.iter().map(|&i| data.labels[i].clone()).collect();
    let weights = pos_weights(&tc.pos_weights, &train_labels, n_tasks)?;
    let mut opt = match model.optimizer.take() {
        Some(o) if o.matches(&model.store) => o,
        _ => OptimizerState::new(&model.store, tc.adam.clone(), tc.schedule.clone()),
    };

    let mut history = Vec::with_capacity(tc.epochs);
    for _ in 0..tc.epochs {
        let epoch = model.epochs_trained;
        let lr = opt.schedule.lr(epoch);
        let mut order = train_idx.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, &[0, epoch])));

        let mut loss_sum = 0.0;
        for (step, batch) in batches(&order, tc.batch_size).into_iter().enumerate() {
            let inputs: Vec<&GraphInput> = batch.iter().map(|&i| &data.inputs[i]).collect();
            let targets: Vec<&[u8]> = batch.iter().map(|&i| data.labels[i].as_slice()).collect();
            let mut ctx = ForwardCtx {
                freeze_batchnorm: tc.freeze_batchnorm,
                ..ForwardCtx::train(derive_seed(tc.seed, &[1, epoch, step as u64]))
            };
            let (loss, grads) = model.batch_loss_grad(&inputs, &targets, &weights, &mut ctx)?;
            if !loss.is_finite() || !grads.all_finite() {
                model.optimizer = Some(opt);
                return Err(GnnError::NonFiniteLoss { epoch, step });
            }
            loss_sum += loss * batch.len() as f64;
            for upd in &ctx.bn_updates {
                upd.apply(&mut model.store);
            }
            adam_step(&mut model.store, &grads, &mut opt, lr);
        }

        let (val_loss, val_auroc) = if val_idx.is_empty() {
            (None, None)
        } else {
            let inputs: Vec<GraphInput> = val_idx.iter().map(|&i| data.inputs[i].clone()).collect();
            let labels: Vec<Vec<u8>> = val_idx.iter().map(|&i| data.labels[i].clone()).collect();
            let logits = model.predict_logits(&inputs)?;
            let flat_targets: Vec<f64> = labels.iter().flatten().map(|&y| f64::from(y)).collect();
            let lt = Tensor::from_rows(&logits)?;
            (Some(weighted_bce(&lt, &flat_targets, &weights)?), mean_auroc(&logits, &labels))
        };
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train_idx.len() as f64,
            val_loss,
            val_mean_auroc: val_auroc,
        };
        log::debug!(
            "epoch {} lr {:.2e} train {:.4} val {:?} auroc {:?}",
            rec.epoch,
            rec.lr,
            rec.train_loss,
            rec.val_loss,
            rec.val_mean_auroc
        );
        history.push(rec);
        model.epochs_trained += 1;
    }
    model.optimizer = Some(opt);
    Ok(history)
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for rec in history {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history_csv(path: &Path) -> Result<Vec<EpochRecord>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}
