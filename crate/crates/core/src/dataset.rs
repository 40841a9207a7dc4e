//! Labeled molecule ingestion, source merging, vocabulary filtering and the
//! descriptor co-occurrence matrix.

use crate::molgraph::{canonical_form, parse_smiles};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("file has no data rows")]
    EmptyFile,
    #[error("no descriptor has at least {0} positives")]
    EmptyVocabulary(usize),
    #[error("min_count must be at least 1")]
    BadMinCount,
    #[error("co-occurrence needs at least 2 labels, got {0}")]
    TooFewLabels(usize),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Column names of the input CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub smiles: String,
    pub descriptors: String,
    /// Optional identifier column; row numbers are used when absent.
    pub id: String,
    pub source: String,
    pub separator: char,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            smiles: "smiles".into(),
            descriptors: "descriptors".into(),
            id: "id".into(),
            source: "source".into(),
            separator: ';',
        }
    }
}

/// Raw-to-canonical descriptor names, applied after lowercasing and trimming.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymMap {
    pub map: HashMap<String, String>,
}

impl SynonymMap {
    /// Reads a two-column CSV (`raw_label,canonical_label`) with a header row.
    pub fn from_reader<R: Read>(r: R) -> Result<SynonymMap, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut map = HashMap::new();
        for row in rdr.records() {
            let row = row?;
            if let (Some(raw), Some(canon)) = (row.get(0), row.get(1)) {
                map.insert(normalize_label(raw), normalize_label(canon));
            }
        }
        Ok(SynonymMap { map })
    }

    pub fn load(path: &Path) -> Result<SynonymMap, DatasetError> {
        SynonymMap::from_reader(std::fs::File::open(path)?)
    }

    pub fn canonical(&self, raw: &str) -> String {
        let l = normalize_label(raw);
        self.map.get(&l).cloned().unwrap_or(l)
    }
}

/// Lowercase, trim and collapse internal whitespace.
pub fn normalize_label(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub smiles: String,
    pub canonical: String,
    pub labels: BTreeSet<String>,
    pub source: Option<String>,
}

/// A row that could not be ingested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub smiles: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LoadResult {
    pub records: Vec<Record>,
    pub rejected: Vec<RejectedRow>,
    /// Rows folded into an earlier row with the same canonical form.
    pub duplicates_merged: usize,
}

pub fn load_csv(path: &Path, schema: &CsvSchema, synonyms: &SynonymMap) -> Result<LoadResult, DatasetError> {
    load_csv_reader(std::fs::File::open(path)?, schema, synonyms)
}

/// Parse and canonicalize every row. Rows with unparseable SMILES go to
/// `rejected`; rows sharing a canonical form are merged by label union, the
/// first row supplying the id and SMILES.
pub fn load_csv_reader<R: Read>(r: R, schema: &CsvSchema, synonyms: &SynonymMap) -> Result<LoadResult, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let smiles_col = col(&schema.smiles).ok_or_else(|| DatasetError::MissingColumn(schema.smiles.clone()))?;
    let desc_col = col(&schema.descriptors).ok_or_else(|| DatasetError::MissingColumn(schema.descriptors.clone()))?;
    let id_col = col(&schema.id);
    let source_col = col(&schema.source);
    let rows: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>()?;
    if rows.is_empty() {
        return Err(DatasetError::EmptyFile);
    }

    let parsed: Vec<Result<Record, RejectedRow>> = rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let smiles = row.get(smiles_col).unwrap_or("").trim().to_string();
            let graph = parse_smiles(&smiles).map_err(|e| RejectedRow { row: i + 1, smiles: smiles.clone(), error: e.to_string() })?;
            let labels = row
                .get(desc_col)
                .unwrap_or("")
                .split(schema.separator)
                .map(|l| synonyms.canonical(l))
                .filter(|l| !l.is_empty())
                .collect();
            let id = id_col.and_then(|c| row.get(c)).map(str::trim).filter(|s| !s.is_empty());
            Ok(Record {
                id: id.map_or_else(|| format!("row{}", i + 1), str::to_string),
                canonical: canonical_form(&graph),
                smiles,
                labels,
                source: source_col.and_then(|c| row.get(c)).map(|s| s.trim().to_string()).filter(|s| !s.is_empty()),
            })
        })
        .collect();

    let mut out = LoadResult::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for p in parsed {
        match p {
            Err(rej) => out.rejected.push(rej),
            Ok(rec) => match seen.get(&rec.canonical) {
                Some(&k) => {
                    out.records[k].labels.extend(rec.labels);
                    out.duplicates_merged += 1;
                }
                None => {
                    seen.insert(rec.canonical.clone(), out.records.len());
                    out.records.push(rec);
                }
            },
        }
    }
    Ok(out)
}

/// Write rejected rows as CSV (`row,smiles,error`).
pub fn write_rejects(path: &Path, rejected: &[RejectedRow]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rejected {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MergeStats {
    pub only_a: usize,
    pub only_b: usize,
    pub overlap: usize,
}

impl MergeStats {
    pub fn total(&self) -> usize {
        self.only_a + self.only_b + self.overlap
    }
}

/// Records keyed by canonical form with a sorted descriptor vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDataset {
    /// Sorted by canonical form.
    pub records: Vec<Record>,
    /// Sorted lexicographically.
    pub vocabulary: Vec<String>,
}

impl LabeledDataset {
    /// Build from records, folding duplicate canonical forms together. The
    /// lexicographically smallest id (and its SMILES and source) represents
    /// each group so the result does not depend on input order.
    pub fn from_records(records: impl IntoIterator<Item = Record>) -> LabeledDataset {
        let mut by_form: BTreeMap<String, Record> = BTreeMap::new();
        for rec in records {
            match by_form.get_mut(&rec.canonical) {
                Some(existing) => {
                    existing.labels.extend(rec.labels.iter().cloned());
                    if rec.id < existing.id {
                        existing.id = rec.id;
                        existing.smiles = rec.smiles;
                        existing.source = rec.source;
                    }
                }
                None => {
                    by_form.insert(rec.canonical.clone(), rec);
                }
            }
        }
        let records: Vec<Record> = by_form.into_values().collect();
        let vocabulary: BTreeSet<&String> = records.iter().flat_map(|r| &r.labels).collect();
        let vocabulary = vocabulary.into_iter().cloned().collect();
        LabeledDataset { records, vocabulary }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// records × vocabulary 0/1 matrix.
    pub fn label_matrix(&self) -> Vec<Vec<u8>> {
        let index: HashMap<&str, usize> = self.vocabulary.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        self.records
            .iter()
            .map(|r| {
                let mut row = vec![0u8; self.vocabulary.len()];
                for l in &r.labels {
                    if let Some(&j) = index.get(l.as_str()) {
                        row[j] = 1;
                    }
                }
                row
            })
            .collect()
    }

    /// Positive count per vocabulary entry.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for r in &self.records {
            for l in &r.labels {
                *counts.entry(l).or_default() += 1;
            }
        }
        self.vocabulary.iter().map(|l| counts.get(l.as_str()).copied().unwrap_or(0)).collect()
    }

    pub fn label_index(&self, label: &str) -> Result<usize, DatasetError> {
        self.vocabulary.binary_search_by(|l| l.as_str().cmp(label)).map_err(|_| DatasetError::UnknownLabel(label.into()))
    }

    pub fn vocabulary_file(&self, min_count: usize) -> Vocabulary {
        Vocabulary { labels: self.vocabulary.clone(), counts: self.label_counts(), min_count }
    }
}

/// Join two sources on canonical form; shared molecules get the union of
/// both label sets.
pub fn merge_sources(a: &[Record], b: &[Record]) -> (LabeledDataset, MergeStats) {
    let forms_a: BTreeSet<&str> = a.iter().map(|r| r.canonical.as_str()).collect();
    let forms_b: BTreeSet<&str> = b.iter().map(|r| r.canonical.as_str()).collect();
    let overlap = forms_a.intersection(&forms_b).count();
    let stats = MergeStats { only_a: forms_a.len() - overlap, only_b: forms_b.len() - overlap, overlap };
    let ds = LabeledDataset::from_records(a.iter().chain(b).cloned());
    (ds, stats)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_count: usize,
    /// Descriptor exempt from the count filter, so records carrying it are kept.
    pub odorless_label: Option<String>,
    /// Keep every record that ends with an empty label set.
    pub keep_unlabeled: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { min_count: 30, odorless_label: Some("odorless".into()), keep_unlabeled: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub rounds: usize,
    pub dropped_labels: Vec<String>,
    pub dropped_records: usize,
}

/// Drop rare descriptors and the records they leave empty, repeating until
/// nothing changes (dropping records can push other labels under the bar).
pub fn filter_labels(ds: &LabeledDataset, cfg: &FilterConfig) -> Result<(LabeledDataset, FilterReport), DatasetError> {
    if cfg.min_count == 0 {
        return Err(DatasetError::BadMinCount);
    }
    let odorless = cfg.odorless_label.as_deref();
    let mut records = ds.records.clone();
    let mut report = FilterReport::default();
    loop {
        report.rounds += 1;
        let mut counts: HashMap<String, usize> = HashMap::new();
        for r in &records {
            for l in &r.labels {
                *counts.entry(l.clone()).or_default() += 1;
            }
        }
        let rare: BTreeSet<String> = counts
            .into_iter()
            .filter(|(l, c)| *c < cfg.min_count && Some(l.as_str()) != odorless)
            .map(|(l, _)| l)
            .collect();
        let before = records.len();
        for r in &mut records {
            r.labels.retain(|l| !rare.contains(l));
        }
        records.retain(|r| !r.labels.is_empty() || cfg.keep_unlabeled);
        report.dropped_records += before - records.len();
        report.dropped_labels.extend(rare.iter().cloned());
        if rare.is_empty() && records.len() == before {
            break;
        }
    }
    report.dropped_labels.sort();
    let out = LabeledDataset::from_records(records);
    if out.vocabulary.is_empty() {
        return Err(DatasetError::EmptyVocabulary(cfg.min_count));
    }
    debug_assert!(out.label_counts().iter().zip(&out.vocabulary).all(|(&c, l)| c >= cfg.min_count || Some(l.as_str()) == odorless));
    Ok((out, report))
}

/// Vocabulary file contents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub labels: Vec<String>,
    pub counts: Vec<usize>,
    pub min_count: usize,
}

impl Vocabulary {
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        Ok(std::fs::write(path, serde_json::to_string_pretty(self)?)?)
    }

    pub fn load(path: &Path) -> Result<Vocabulary, DatasetError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceOptions {
    /// Remove this many most frequent descriptors first.
    pub drop_most_frequent: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CooccurrenceOptions {
    fn default() -> Self {
        CooccurrenceOptions { drop_most_frequent: 0, tolerance: 1e-6, max_iterations: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    pub labels: Vec<String>,
    /// Molecules carrying both labels; the diagonal holds label counts.
    pub counts: Vec<Vec<f64>>,
    /// Doubly stochastic rescaling of `counts`.
    pub normalized: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Labels left out because they have no molecules.
    pub excluded: Vec<String>,
}

impl CooccurrenceMatrix {
    /// Largest |row sum − 1| of the normalized matrix (columns match by symmetry).
    pub fn max_marginal_error(&self) -> f64 {
        self.normalized
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .chain((0..self.labels.len()).map(|j| (self.normalized.iter().map(|r| r[j]).sum::<f64>() - 1.0).abs()))
            .fold(0.0, f64::max)
    }
}

/// Symmetric Sinkhorn scaling: find d > 0 with D·C·D doubly stochastic via
/// d ← √(d / (C d)). The output is exactly symmetric when C is.
fn sinkhorn_symmetric(c: &[Vec<f64>], tol: f64, max_iter: usize) -> (Vec<Vec<f64>>, usize, bool) {
    let n = c.len();
    let mut d = vec![1.0; n];
    let scaled = |d: &[f64]| -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| (d[i] * d[j]) * c[i][j]).collect()).collect()
    };
    let marginal_error = |d: &[f64]| -> f64 {
        (0..n).map(|i| (d[i] * (0..n).map(|j| c[i][j] * d[j]).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    };
    for it in 0..=max_iter {
        if marginal_error(&d) <= tol {
            return (scaled(&d), it, true);
        }
        if it == max_iter {
            break;
        }
        let cd: Vec<f64> = (0..n).map(|i| (0..n).map(|j| c[i][j] * d[j]).sum()).collect();
        for i in 0..n {
            d[i] = (d[i] / cd[i]).sqrt();
        }
    }
    (scaled(&d), max_iter, false)
}

/// Co-occurrence counts over the dataset vocabulary, rescaled so every row
/// and column sums to one.
pub fn cooccurrence(ds: &LabeledDataset, opts: &CooccurrenceOptions) -> Result<CooccurrenceMatrix, DatasetError> {
    let counts = ds.label_counts();
    let mut order: Vec<usize> = (0..ds.vocabulary.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let dropped: BTreeSet<usize> = order.into_iter().take(opts.drop_most_frequent).collect();
    let mut excluded = Vec::new();
    let mut keep = Vec::new();
    for (j, l) in ds.vocabulary.iter().enumerate() {
        if dropped.contains(&j) {
            continue;
        }
        if counts[j] == 0 {
            log::warn!("descriptor `{l}` has no molecules; left out of the co-occurrence matrix");
            excluded.push(l.clone());
        } else {
            keep.push(j);
        }
    }
    if keep.len() < 2 {
        return Err(DatasetError::TooFewLabels(keep.len()));
    }
    let pos: HashMap<usize, usize> = keep.iter().enumerate().map(|(p, &j)| (j, p)).collect();
    let n = keep.len();
    let mut c = vec![vec![0.0; n]; n];
    for row in ds.label_matrix() {
        let on: Vec<usize> = row.iter().enumerate().filter(|(_, &v)| v == 1).filter_map(|(j, _)| pos.get(&j).copied()).collect();
        for &a in &on {
            for &b in &on {
                c[a][b] += 1.0;
            }
        }
    }
    let (normalized, iterations, converged) = sinkhorn_symmetric(&c, opts.tolerance, opts.max_iterations);
    if !converged {
        log::warn!("co-occurrence scaling stopped after {iterations} iterations without reaching tolerance");
    }
    Ok(CooccurrenceMatrix {
        labels: keep.iter().map(|&j| ds.vocabulary[j].clone()).collect(),
        counts: c,
        normalized,
        iterations,
        converged,
        excluded,
    })
}
