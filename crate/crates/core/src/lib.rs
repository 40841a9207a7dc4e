//! Structure-to-odor modelling toolkit: SMILES parsing, fingerprints, a small
//! autograd engine, graph neural networks, classical baselines, multilabel
//! splitting, evaluation metrics and embedding analysis.

pub mod analysis;
pub mod baselines;
pub mod dataset;
pub mod datasplit;
pub mod fingerprint;
pub mod gnn;
pub mod hashing;
pub mod metrics;
pub mod molgraph;
pub mod synth;
pub mod tensor;

pub use baselines::{Forest, ForestConfig, KnnConfig, KnnModel, Metric};
pub use dataset::{LabeledDataset, Record};
pub use datasplit::{Split, SplitAssignment};
pub use fingerprint::{Fingerprint, FingerprintConfig};
pub use gnn::{GnnConfig, GnnModel, GraphInput};
pub use metrics::{BootstrapCi, MetricReport};
pub use molgraph::{parse_smiles, MolecularGraph};
pub use tensor::Tensor;
