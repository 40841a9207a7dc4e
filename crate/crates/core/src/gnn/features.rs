use crate::molgraph::{BondOrder, Element, MolecularGraph};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("element {symbol} (atom {atom}) is outside the featurizer's element set")]
    UnsupportedElement { symbol: String, atom: usize },
}

const DEGREE_SLOTS: usize = 6;
const CHARGE_SLOTS: usize = 3;
const H_SLOTS: usize = 5;
/// Bond order one-hot (single, double, triple, aromatic) plus ring flag.
pub const BOND_FEATURES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub elements: Vec<Element>,
    /// Map unknown elements to an all-zero element block instead of failing.
    #[serde(default)]
    pub allow_unknown_elements: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            elements: vec![
                Element::B,
                Element::C,
                Element::N,
                Element::O,
                Element::P,
                Element::S,
                Element::F,
                Element::CL,
                Element::BR,
                Element::I,
            ],
            allow_unknown_elements: false,
        }
    }
}

impl FeatureConfig {
    /// Raw per-atom feature width before projection.
    pub fn atom_dim(&self) -> usize {
        self.elements.len() + DEGREE_SLOTS + CHARGE_SLOTS + H_SLOTS + 2
    }
}

/// Precomputed network input for one molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    /// Raw atom features, one row per atom.
    pub atoms: Tensor,
    pub neighbors: Vec<Vec<usize>>,
    /// Directed edges (src, dst), two per bond.
    pub edges: Arc<Vec<(usize, usize)>>,
    /// One row of bond features per directed edge.
    pub edge_features: Tensor,
}

impl GraphInput {
    pub fn num_atoms(&self) -> usize {
        self.neighbors.len()
    }
}

fn one_hot(out: &mut Vec<f64>, slots: usize, index: usize) {
    let start = out.len();
    out.resize(start + slots, 0.0);
    out[start + index.min(slots - 1)] = 1.0;
}

/// Element, degree (capped at 5), formal charge (−1/0/+1, clamped), total H
/// (capped at 4), aromatic flag and ring flag.
pub fn atom_features(g: &MolecularGraph, cfg: &FeatureConfig) -> Result<Tensor, FeatureError> {
    let dim = cfg.atom_dim();
    let mut data = Vec::with_capacity(g.num_atoms() * dim);
    for (i, a) in g.atoms().iter().enumerate() {
        let start = data.len();
        data.resize(start + cfg.elements.len(), 0.0);
        match cfg.elements.iter().position(|&e| e == a.element) {
            Some(k) => data[start + k] = 1.0,
            None if cfg.allow_unknown_elements => {}
            None => {
                return Err(FeatureError::UnsupportedElement {
                    symbol: a.element.symbol().to_string(),
                    atom: i,
                })
            }
        }
        one_hot(&mut data, DEGREE_SLOTS, a.degree as usize);
        one_hot(&mut data, CHARGE_SLOTS, (a.formal_charge.clamp(-1, 1) + 1) as usize);
        one_hot(&mut data, H_SLOTS, a.total_h() as usize);
        data.push(f64::from(u8::from(a.aromatic)));
        data.push(f64::from(u8::from(a.in_ring)));
    }
    Ok(Tensor::from_parts(vec![g.num_atoms(), dim], data))
}

pub fn bond_features(order: BondOrder, in_ring: bool) -> [f64; BOND_FEATURES] {
    let mut f = [0.0; BOND_FEATURES];
    f[order.code() as usize - 1] = 1.0;
    f[4] = f64::from(u8::from(in_ring));
    f
}

pub fn graph_input(g: &MolecularGraph, cfg: &FeatureConfig) -> Result<GraphInput, FeatureError> {
    let atoms = atom_features(g, cfg)?;
    let neighbors = (0..g.num_atoms())
        .map(|v| g.neighbors(v).iter().map(|&(u, _)| u).collect())
        .collect();
    let mut edges = Vec::with_capacity(2 * g.num_bonds());
    let mut ef = Vec::with_capacity(2 * g.num_bonds() * BOND_FEATURES);
    for b in g.bonds() {
        let f = bond_features(b.order, b.in_ring);
        for (s, t) in [(b.begin, b.end), (b.end, b.begin)] {
            edges.push((s, t));
            ef.extend_from_slice(&f);
        }
    }
    let n_edges = edges.len();
    Ok(GraphInput {
        atoms,
        neighbors,
        edges: Arc::new(edges),
        edge_features: Tensor::from_parts(vec![n_edges, BOND_FEATURES], ef),
    })
}
