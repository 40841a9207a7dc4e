use super::AnalysisError;
use crate::baselines::{fit_random_forest_labels, ForestConfig};
use crate::datasplit::{Split, SplitAssignment};
use crate::gnn::{train, GnnConfig, GnnModel, GraphInput, TrainData};
use crate::metrics::{auroc, bootstrap_ci, BootstrapCi};
use serde::{Deserialize, Serialize};

/// Everything the ablation needs, row-aligned.
#[derive(Debug, Clone, Copy)]
pub struct TransferInputs<'a> {
    pub graphs: &'a [GraphInput],
    /// Count fingerprints for the baseline forest.
    pub fingerprints: &'a [Vec<f64>],
    pub labels: &'a [Vec<u8>],
    pub vocabulary: &'a [String],
    /// Train/val/test groups.
    pub split: &'a SplitAssignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocWithCi {
    pub auroc: f64,
    pub ci: Option<BootstrapCi>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub held_out: String,
    /// Labels the ablated network was trained on.
    pub training_vocabulary: Vec<String>,
    pub embedding_rf: AurocWithCi,
    pub fingerprint_rf: AurocWithCi,
    /// Network trained on every label, scored on the held-out column.
    pub full_gnn: Option<AurocWithCi>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_test_positive: usize,
}

fn scored(scores: &[f64], truth: &[bool], n_resamples: usize, seed: u64) -> Result<AurocWithCi, AnalysisError> {
    let value = auroc(scores, truth)?;
    let ci = (n_resamples > 0).then(|| bootstrap_ci(auroc, scores, truth, n_resamples, seed).ok()).flatten();
    Ok(AurocWithCi { auroc: value, ci })
}

/// Hold one descriptor out: train a network on the others, fit a forest on
/// its embeddings to predict the held-out descriptor, and compare with a
/// forest on count fingerprints (and optionally a network trained on every
/// label). All models train on the train split and are scored on test.
pub fn transfer_ablation(
    inputs: TransferInputs,
    held_out: &str,
    gnn_cfg: &GnnConfig,
    rf_cfg: &ForestConfig,
    with_full_gnn: bool,
    n_resamples: usize,
    seed: u64,
) -> Result<TransferReport, AnalysisError> {
    let n = inputs.graphs.len();
    if inputs.fingerprints.len() != n || inputs.labels.len() != n || inputs.split.len() != n {
        return Err(AnalysisError::Misaligned("graphs, fingerprints, labels and split differ in length".into()));
    }
    let h = inputs.vocabulary.iter().position(|l| l == held_out).ok_or_else(|| AnalysisError::UnknownLabel(held_out.into()))?;
    if inputs.vocabulary.len() < 2 {
        return Err(AnalysisError::Config("ablation needs at least two labels".into()));
    }
    let train_idx = inputs.split.indices(Split::Train.index());
    let val_idx = inputs.split.indices(Split::Val.index());
    let test_idx = inputs.split.indices(Split::Test.index());
    let truth: Vec<bool> = test_idx.iter().map(|&i| inputs.labels[i][h] == 1).collect();
    let n_test_positive = truth.iter().filter(|&&t| t).count();
    if n_test_positive == 0 || n_test_positive == truth.len() {
        return Err(AnalysisError::HeldOutUndefined(held_out.into()));
    }

    let training_vocabulary: Vec<String> = inputs.vocabulary.iter().filter(|l| l.as_str() != held_out).cloned().collect();
    let ablated_labels: Vec<Vec<u8>> = inputs
        .labels
        .iter()
        .map(|r| r.iter().enumerate().filter(|&(j, _)| j != h).map(|(_, &v)| v).collect())
        .collect();
    assert!(ablated_labels.iter().all(|r| r.len() == training_vocabulary.len()));

    let mut cfg = gnn_cfg.clone();
    cfg.n_tasks = training_vocabulary.len();
    let mut ablated = GnnModel::new(cfg)?;
    train(&mut ablated, TrainData { inputs: inputs.graphs, labels: &ablated_labels }, &train_idx, &val_idx)?;
    let embeddings = ablated.embed_all(inputs.graphs)?;

    let target: Vec<Vec<u8>> = inputs.labels.iter().map(|r| vec![r[h]]).collect();
    let rows = |m: &[Vec<f64>], idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|&i| m[i].clone()).collect() };
    let train_target: Vec<Vec<u8>> = train_idx.iter().map(|&i| target[i].clone()).collect();

    let emb_forest = fit_random_forest_labels(&rows(&embeddings, &train_idx), &train_target, rf_cfg)?;
    let emb_scores: Vec<f64> = emb_forest.predict_all(&rows(&embeddings, &test_idx))?.into_iter().map(|p| p[0]).collect();
    let fp_forest = fit_random_forest_labels(&rows(inputs.fingerprints, &train_idx), &train_target, rf_cfg)?;
    let fp_scores: Vec<f64> = fp_forest.predict_all(&rows(inputs.fingerprints, &test_idx))?.into_iter().map(|p| p[0]).collect();

    let full_gnn = if with_full_gnn {
        let mut cfg = gnn_cfg.clone();
        cfg.n_tasks = inputs.vocabulary.len();
        let mut full = GnnModel::new(cfg)?;
        train(&mut full, TrainData { inputs: inputs.graphs, labels: inputs.labels }, &train_idx, &val_idx)?;
        let test_graphs: Vec<GraphInput> = test_idx.iter().map(|&i| inputs.graphs[i].clone()).collect();
        let probs: Vec<f64> = full.predict_proba(&test_graphs)?.into_iter().map(|p| p[h]).collect();
        Some(scored(&probs, &truth, n_resamples, seed)?)
    } else {
        None
    };

    Ok(TransferReport {
        held_out: held_out.into(),
        training_vocabulary,
        embedding_rf: scored(&emb_scores, &truth, n_resamples, seed)?,
        fingerprint_rf: scored(&fp_scores, &truth, n_resamples, seed)?,
        full_gnn,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        n_test_positive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasplit::iterative_stratify;
    use crate::fingerprint::{fingerprint, FingerprintConfig};
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn ablation_runs_on_synthetic_corpus() {
        let c = generate(&SynthConfig { n_molecules: 120, n_labels: 4, seed: 3 });
        let graphs = c.graphs();
        let mut cfg = GnnConfig::gcn(3);
        cfg.train.epochs = 3;
        let probe = GnnModel::new(cfg.clone()).unwrap();
        let inputs: Vec<GraphInput> = graphs.iter().map(|g| probe.featurize(g).unwrap()).collect();
        let fps: Vec<Vec<f64>> = graphs.iter().map(|g| fingerprint(g, &FingerprintConfig::morgan_counts()).unwrap().to_f64()).collect();
        let split = iterative_stratify(&c.labels, &[0.6, 0.2, 0.2], 2, 0).unwrap();
        let inputs = TransferInputs { graphs: &inputs, fingerprints: &fps, labels: &c.labels, vocabulary: &c.vocabulary, split: &split };
        let rf = ForestConfig { n_trees: 10, ..ForestConfig::default() };
        let r = transfer_ablation(inputs, "fruity", &cfg, &rf, true, 50, 1).unwrap();
        assert_eq!(r.training_vocabulary, vec!["fishy", "floral", "green"]);
        assert_eq!((r.n_train, r.n_test), (72, 24));
        for s in [&r.embedding_rf, &r.fingerprint_rf, r.full_gnn.as_ref().unwrap()] {
            assert!((0.0..=1.0).contains(&s.auroc));
            let ci = s.ci.as_ref().unwrap();
            assert!(ci.lo <= ci.hi);
        }
        assert!(matches!(
            transfer_ablation(inputs, "minty", &cfg, &rf, false, 0, 1),
            Err(AnalysisError::UnknownLabel(_))
        ));
    }
}
