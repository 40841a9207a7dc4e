//! File formats exchanged between commands and the run manifest.

use crate::cli::{FeatureArgs, FeatureKind, MetricArg};
use anyhow::{bail, Context, Result};
use qsor_core::baselines::{Forest, KnnModel, Metric};
use qsor_core::dataset::{load_csv, CsvSchema, LabeledDataset, SynonymMap};
use qsor_core::datasplit::SplitAssignment;
use qsor_core::fingerprint::{fingerprint, FingerprintConfig, FingerprintKind};
use qsor_core::gnn::{GnnArchitecture, GnnModel, GraphInput};
use qsor_core::hashing::hash_words;
use qsor_core::molgraph::{parse_smiles, MolecularGraph};
use qsor_core::tensor::{Checkpoint, CHECKPOINT_VERSION};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

/// Problems with user-supplied input (exit code 2).
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

/// Wraps any error from reading user input as an [`InputError`].
pub trait InputContext<T> {
    fn input_context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: fmt::Display> InputContext<T> for std::result::Result<T, E> {
    fn input_context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| input_error(format!("{}: {e}", what())))
    }
}

pub fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!(InputError(format!("input file {} does not exist", path.display())));
    }
    Ok(())
}

pub fn require_output_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            bail!(InputError(format!("output directory {} does not exist", p.display())))
        }
        _ => Ok(()),
    }
}

pub const STREAM_SPLIT: u64 = 1;
pub const STREAM_GNN: u64 = 2;
pub const STREAM_FOREST: u64 = 3;
pub const STREAM_BOOTSTRAP: u64 = 4;
pub const STREAM_TRANSFER: u64 = 5;
pub const STREAM_SYNTH: u64 = 6;

pub fn load_dataset(path: &Path, synonyms: Option<&Path>) -> Result<LabeledDataset> {
    require_file(path)?;
    let syn = match synonyms {
        Some(p) => {
            require_file(p)?;
            SynonymMap::load(p).input_context(|| format!("reading synonyms {}", p.display()))?
        }
        None => SynonymMap::default(),
    };
    let loaded = load_csv(path, &CsvSchema::default(), &syn).input_context(|| format!("reading {}", path.display()))?;
    if !loaded.rejected.is_empty() {
        log::warn!("{}: skipped {} rows that failed to parse", path.display(), loaded.rejected.len());
    }
    Ok(LabeledDataset::from_records(loaded.records))
}

pub fn graphs_of(ds: &LabeledDataset) -> Result<Vec<MolecularGraph>> {
    ds.records
        .par_iter()
        .map(|r| parse_smiles(&r.canonical).input_context(|| format!("molecule {}", r.id)))
        .collect()
}

/// 0/1 rows for `vocabulary`; descriptors outside it are ignored.
pub fn label_matrix(ds: &LabeledDataset, vocabulary: &[String]) -> Vec<Vec<u8>> {
    ds.records
        .iter()
        .map(|r| vocabulary.iter().map(|l| u8::from(r.labels.contains(l))).collect())
        .collect()
}

/// Split assignment keyed by molecule id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub method: String,
    pub order: u8,
    pub seed: u64,
    pub ratios: Vec<f64>,
    pub group_names: Vec<String>,
    pub ids: Vec<String>,
    pub groups: Vec<usize>,
}

impl SplitFile {
    pub fn new(method: &str, order: u8, ids: Vec<String>, split: &SplitAssignment, group_names: Vec<String>) -> SplitFile {
        SplitFile {
            method: method.into(),
            order,
            seed: split.seed,
            ratios: split.ratios.clone(),
            group_names,
            ids,
            groups: split.groups.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<SplitFile> {
        require_file(path)?;
        let text = std::fs::read_to_string(path).input_context(|| format!("reading {}", path.display()))?;
        let f: SplitFile = serde_json::from_str(&text).input_context(|| format!("parsing split {}", path.display()))?;
        if f.ids.len() != f.groups.len() || f.groups.iter().any(|&g| g >= f.ratios.len()) {
            bail!(InputError(format!("split {} is inconsistent", path.display())));
        }
        Ok(f)
    }

    /// Assignment reordered to the dataset's record order.
    pub fn align(&self, ds: &LabeledDataset) -> Result<SplitAssignment> {
        let by_id: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), self.groups[i])).collect();
        let groups = ds
            .records
            .iter()
            .map(|r| by_id.get(r.id.as_str()).copied().ok_or_else(|| input_error(format!("molecule `{}` is missing from the split", r.id))))
            .collect::<Result<Vec<_>>>()?;
        Ok(SplitAssignment { groups, ratios: self.ratios.clone(), seed: self.seed })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    require_file(path)?;
    let text = std::fs::read_to_string(path).input_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).input_context(|| format!("parsing {what} {}", path.display()))
}

#[derive(Debug, Serialize)]
struct InputDigest {
    path: PathBuf,
    bytes: u64,
    digest: String,
}

fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let words: Vec<u64> = bytes
        .chunks(8)
        .map(|c| {
            let mut b = [0u8; 8];
            b[..c.len()].copy_from_slice(c);
            u64::from_le_bytes(b)
        })
        .chain([bytes.len() as u64])
        .collect();
    Ok(InputDigest { path: path.to_path_buf(), bytes: bytes.len() as u64, digest: format!("{:016x}", hash_words(&words)) })
}

#[derive(Debug, Serialize)]
struct Manifest<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    threads: Option<usize>,
    options: &'a T,
    inputs: Vec<InputDigest>,
    outputs: Vec<PathBuf>,
}

/// Records the command, its options, seed and input digests next to `at`.
pub struct RunInfo {
    pub command: &'static str,
    pub seed: u64,
    pub threads: Option<usize>,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("manifest.json")
    } else {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}

pub fn write_manifest<T: Serialize>(run: &RunInfo, options: &T, inputs: &[&Path], outputs: &[PathBuf], at: &Path) -> Result<()> {
    let manifest = Manifest {
        tool: "qsor",
        version: env!("CARGO_PKG_VERSION"),
        command: run.command,
        seed: run.seed,
        threads: run.threads,
        options,
        inputs: inputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
        outputs: outputs.to_vec(),
    };
    write_json(&manifest_path(at), &manifest)
}

pub fn fingerprint_config(args: &FeatureArgs, default: FeatureKind) -> Result<FingerprintConfig> {
    let mut cfg = match args.features.unwrap_or(default) {
        FeatureKind::MorganCounts => FingerprintConfig::morgan_counts(),
        FeatureKind::MorganBits => FingerprintConfig::morgan_bits(),
        FeatureKind::PathBits => FingerprintConfig::path_bits(),
    };
    if let Some(r) = args.radius {
        cfg.radius = r;
    }
    if let Some(b) = args.bits {
        cfg.n_bits = b;
    }
    cfg.validate().input_context(|| "fingerprint options".into())?;
    Ok(cfg)
}

pub fn fingerprints(graphs: &[MolecularGraph], cfg: &FingerprintConfig) -> Result<Vec<Vec<f64>>> {
    graphs
        .par_iter()
        .map(|g| Ok(fingerprint(g, cfg)?.to_f64()))
        .collect()
}

pub fn metric(m: MetricArg) -> Metric {
    match m {
        MetricArg::Jaccard => Metric::Jaccard,
        MetricArg::Cosine => Metric::Cosine,
        MetricArg::Euclidean => Metric::Euclidean,
    }
}

pub fn feature_name(cfg: &FingerprintConfig) -> &'static str {
    match (cfg.kind, cfg.counted) {
        (FingerprintKind::Morgan, true) => "morgan-counts",
        (FingerprintKind::Morgan, false) => "morgan-bits",
        (FingerprintKind::Path, true) => "path-counts",
        (FingerprintKind::Path, false) => "path-bits",
    }
}

pub const MODEL_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum ModelPayload {
    Gnn { checkpoint: Checkpoint<GnnArchitecture> },
    Rf { features: FingerprintConfig, forest: Forest },
    Knn { features: FingerprintConfig, knn: KnnModel },
}

/// Everything `eval` and `embed` need from `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub vocabulary: Vec<String>,
    /// F1-optimal decision thresholds tuned on the validation split.
    pub thresholds: Vec<f64>,
    pub model: ModelPayload,
}

impl ModelArtifact {
    pub fn load(path: &Path) -> Result<ModelArtifact> {
        let a: ModelArtifact = read_json(path, "model")?;
        if a.format_version != MODEL_FORMAT {
            bail!(InputError(format!("model format {} is not supported (expected {MODEL_FORMAT})", a.format_version)));
        }
        if a.thresholds.len() != a.vocabulary.len() {
            bail!(InputError("model thresholds do not match its vocabulary".into()));
        }
        if let ModelPayload::Gnn { checkpoint } = &a.model {
            if checkpoint.format_version != CHECKPOINT_VERSION {
                bail!(InputError(format!("checkpoint format {} is not supported", checkpoint.format_version)));
            }
        }
        Ok(a)
    }

    pub fn kind(&self) -> &'static str {
        match self.model {
            ModelPayload::Gnn { .. } => "gnn",
            ModelPayload::Rf { .. } => "rf",
            ModelPayload::Knn { .. } => "knn",
        }
    }

    pub fn network(&self) -> Result<Option<GnnModel>> {
        match &self.model {
            ModelPayload::Gnn { checkpoint } => Ok(Some(GnnModel::from_checkpoint(checkpoint).input_context(|| "loading network".into())?)),
            _ => Ok(None),
        }
    }

    /// Probabilities for every graph, one column per vocabulary entry.
    pub fn predict(&self, graphs: &[MolecularGraph]) -> Result<Vec<Vec<f64>>> {
        match &self.model {
            ModelPayload::Gnn { .. } => {
                let net = self.network()?.expect("network payload");
                let inputs = featurize(&net, graphs)?;
                Ok(net.predict_proba(&inputs)?)
            }
            ModelPayload::Rf { features, forest } => Ok(forest.predict_all(&fingerprints(graphs, features)?)?),
            ModelPayload::Knn { features, knn } => Ok(knn.predict_all(&fingerprints(graphs, features)?)?),
        }
    }
}

pub fn featurize(net: &GnnModel, graphs: &[MolecularGraph]) -> Result<Vec<GraphInput>> {
    graphs.par_iter().map(|g| Ok(net.featurize(g)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use qsor_core::dataset::Record;

    fn record(id: &str, smiles: &str) -> Record {
        Record { id: id.into(), smiles: smiles.into(), canonical: smiles.into(), labels: ["fruity".to_string()].into(), source: None }
    }

    #[test]
    fn manifest_sits_beside_files_and_inside_directories() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(manifest_path(&dir.path().join("model.json")), dir.path().join("model.json.manifest.json"));
        assert_eq!(manifest_path(dir.path()), dir.path().join("manifest.json"));
    }

    #[test]
    fn split_alignment_follows_dataset_order() {
        let split = SplitAssignment { groups: vec![0, 2, 1], ratios: vec![0.5, 0.25, 0.25], seed: 3 };
        let file = SplitFile::new("random", 1, vec!["a".into(), "b".into(), "c".into()], &split, vec!["train".into(), "val".into(), "test".into()]);
        let ds = LabeledDataset::from_records([record("c", "CCO"), record("a", "CC"), record("b", "CCC")]);
        let aligned = file.align(&ds).unwrap();
        let expect: Vec<usize> = ds.records.iter().map(|r| match r.id.as_str() { "a" => 0, "b" => 2, _ => 1 }).collect();
        assert_eq!(aligned.groups, expect);
        assert_eq!(aligned.seed, 3);

        let extra = LabeledDataset::from_records([record("z", "CCCC")]);
        let err = file.align(&extra).unwrap_err();
        assert!(err.chain().any(|c| c.is::<InputError>()));
    }

    #[test]
    fn inconsistent_split_files_are_input_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        let bad = SplitFile { method: "random".into(), order: 1, seed: 0, ratios: vec![1.0], group_names: vec!["train".into()], ids: vec!["a".into()], groups: vec![4] };
        write_json(&path, &bad).unwrap();
        assert!(SplitFile::load(&path).unwrap_err().chain().any(|c| c.is::<InputError>()));
        assert!(SplitFile::load(&dir.path().join("absent.json")).unwrap_err().chain().any(|c| c.is::<InputError>()));
    }
}
