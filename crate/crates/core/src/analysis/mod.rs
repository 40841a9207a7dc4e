//! Embedding-space analyses: projection, density, retrieval, distance
//! correlation and held-out-label transfer.

mod kde;
mod pca;
mod transfer;

pub use kde::{kde_grid, Bandwidth, DensityGrid, GridSpec, CONTOUR_MASS};
pub use pca::{pca, z_trim_mask, Pca};
pub use transfer::{transfer_ablation, AurocWithCi, TransferInputs, TransferReport};

use crate::baselines::Metric;
use crate::dataset::{CooccurrenceMatrix, LabeledDataset};
use crate::fingerprint::{jaccard_distance, FingerprintError};
use crate::metrics::{kendall_tau, pearson_r, MetricError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("expected length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("requested {requested} components, at most {max} available")]
    Components { requested: usize, max: usize },
    #[error("input has zero variance")]
    Degenerate,
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("k = {k} must be below the table size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("ids do not align: {0}")]
    Misaligned(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("held-out label `{0}` is not in the vocabulary")]
    UnknownLabel(String),
    #[error("held-out label `{0}` needs positives and negatives in the test split")]
    HeldOutUndefined(String),
    #[error(transparent)]
    Distance(#[from] FingerprintError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Gnn(#[from] crate::gnn::GnnError),
    #[error(transparent)]
    Baseline(#[from] crate::baselines::BaselineError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Gnn,
    Fingerprint,
}

/// Molecule ids with one vector each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub source: EmbeddingSource,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>, source: EmbeddingSource) -> Result<EmbeddingTable, AnalysisError> {
        if ids.len() != rows.len() {
            return Err(AnalysisError::Dimension { expected: ids.len(), got: rows.len() });
        }
        let width = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != width) {
            return Err(AnalysisError::Dimension { expected: width, got: r.len() });
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(AnalysisError::DuplicateId(id.clone()));
            }
        }
        Ok(EmbeddingTable { ids, rows, source })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn index_of(&self, id: &str) -> Result<usize, AnalysisError> {
        self.ids.iter().position(|x| x == id).ok_or_else(|| AnalysisError::UnknownId(id.into()))
    }

    /// CSV with header `id,e0,e1,...`.
    pub fn write_csv(&self, path: &Path) -> Result<(), AnalysisError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string()];
        header.extend((0..self.dim()).map(|j| format!("e{j}")));
        w.write_record(&header)?;
        for (id, row) in self.ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, source: EmbeddingSource) -> Result<EmbeddingTable, AnalysisError> {
        let mut r = csv::Reader::from_path(path)?;
        let (mut ids, mut rows) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let mut it = rec.iter();
            ids.push(it.next().unwrap_or_default().to_string());
            let row = it
                .map(|v| v.trim().parse::<f64>().map_err(|e| AnalysisError::Config(format!("bad number `{v}`: {e}"))))
                .collect::<Result<Vec<f64>, _>>()?;
            rows.push(row);
        }
        EmbeddingTable::new(ids, rows, source)
    }
}

/// Default retrieval depth.
pub const DEFAULT_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub distance: f64,
}

/// The `k` closest rows to `query_id`, excluding the query row itself,
/// ordered by distance and then id.
pub fn nearest_neighbors(table: &EmbeddingTable, query_id: &str, k: usize, metric: Metric) -> Result<Vec<Neighbor>, AnalysisError> {
    let q = table.index_of(query_id)?;
    if k >= table.len() {
        return Err(AnalysisError::KTooLarge { k, n: table.len() });
    }
    let query = &table.rows[q];
    let mut all: Vec<Neighbor> = table
        .rows
        .par_iter()
        .enumerate()
        .filter(|(i, _)| *i != q)
        .map(|(i, r)| Ok(Neighbor { id: table.ids[i].clone(), distance: metric.distance(query, r)? }))
        .collect::<Result<_, FingerprintError>>()?;
    all.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id)));
    all.truncate(k);
    Ok(all)
}

/// Label rows of `ds` reordered to match the table's ids.
pub fn aligned_labels(ds: &LabeledDataset, table: &EmbeddingTable) -> Result<Vec<Vec<u8>>, AnalysisError> {
    let matrix = ds.label_matrix();
    let by_id: HashMap<&str, usize> = ds.records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    table
        .ids
        .iter()
        .map(|id| by_id.get(id.as_str()).map(|&i| matrix[i].clone()).ok_or_else(|| AnalysisError::Misaligned(format!("`{id}` has no labels"))))
        .collect()
}

/// Kendall τ between label and embedding distances over pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceCorrelation {
    pub tau: f64,
    pub n_pairs: usize,
}

/// Every (train, test) pair's (Jaccard label distance, embedding distance).
pub fn train_test_distance_pairs(
    labels: &[Vec<u8>],
    table: &EmbeddingTable,
    metric: Metric,
    train: &[usize],
    test: &[usize],
) -> Result<(Vec<f64>, Vec<f64>), AnalysisError> {
    if labels.len() != table.len() {
        return Err(AnalysisError::Misaligned(format!("{} label rows for {} embeddings", labels.len(), table.len())));
    }
    if let Some(&i) = train.iter().chain(test).find(|&&i| i >= table.len()) {
        return Err(AnalysisError::Misaligned(format!("row {i} out of range")));
    }
    let lab: Vec<Vec<f64>> = labels.iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect();
    let blocks: Vec<(Vec<f64>, Vec<f64>)> = train
        .par_iter()
        .map(|&i| {
            let mut ld = Vec::with_capacity(test.len());
            let mut ed = Vec::with_capacity(test.len());
            for &j in test {
                ld.push(jaccard_distance(&lab[i], &lab[j])?);
                ed.push(metric.distance(&table.rows[i], &table.rows[j])?);
            }
            Ok((ld, ed))
        })
        .collect::<Result<_, FingerprintError>>()?;
    let (ld, ed): (Vec<Vec<f64>>, Vec<Vec<f64>>) = blocks.into_iter().unzip();
    Ok((ld.concat(), ed.concat()))
}

pub fn label_vs_embedding_tau(
    labels: &[Vec<u8>],
    table: &EmbeddingTable,
    metric: Metric,
    train: &[usize],
    test: &[usize],
) -> Result<DistanceCorrelation, AnalysisError> {
    let (ld, ed) = train_test_distance_pairs(labels, table, metric, train, test)?;
    Ok(DistanceCorrelation { tau: kendall_tau(&ld, &ed)?, n_pairs: ld.len() })
}

/// Pearson correlation between the normalized co-occurrence matrix and the
/// negated mean embedding distance between molecules carrying each label
/// pair, over the upper triangle (diagonal included).
pub fn cooccurrence_embedding_correlation(
    cooc: &CooccurrenceMatrix,
    ds: &LabeledDataset,
    table: &EmbeddingTable,
    metric: Metric,
) -> Result<f64, AnalysisError> {
    let labels = aligned_labels(ds, table)?;
    let cols: Vec<usize> = cooc.labels.iter().map(|l| ds.label_index(l)).collect::<Result<_, _>>().map_err(|e| AnalysisError::Misaligned(e.to_string()))?;
    let members: Vec<Vec<usize>> = cols.iter().map(|&c| (0..labels.len()).filter(|&i| labels[i][c] == 1).collect()).collect();
    let n = cols.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).collect();
    let stats: Vec<Option<(f64, f64)>> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for &i in &members[a] {
                for &j in &members[b] {
                    if i != j {
                        sum += metric.distance(&table.rows[i], &table.rows[j])?;
                        count += 1;
                    }
                }
            }
            Ok((count > 0).then(|| (cooc.normalized[a][b], -sum / count as f64)))
        })
        .collect::<Result<_, FingerprintError>>()?;
    let (c, e): (Vec<f64>, Vec<f64>) = stats.into_iter().flatten().unzip();
    Ok(pearson_r(&c, &e)?)
}

/// CSV with columns `id,pc1,pc2,...,labels` (labels joined by `;`), skipping
/// rows where `keep` is false.
pub fn write_projection_csv(
    path: &Path,
    ids: &[String],
    projected: &[Vec<f64>],
    labels: Option<&[String]>,
    keep: Option<&[bool]>,
) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path)?;
    let dims = projected.first().map_or(0, Vec::len);
    let mut header = vec!["id".to_string()];
    header.extend((1..=dims).map(|j| format!("pc{j}")));
    header.push("labels".into());
    w.write_record(&header)?;
    for (i, (id, p)) in ids.iter().zip(projected).enumerate() {
        if keep.is_some_and(|k| !k[i]) {
            continue;
        }
        let mut rec = vec![id.clone()];
        rec.extend(p.iter().map(|v| format!("{v:?}")));
        rec.push(labels.map_or(String::new(), |l| l[i].clone()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
