//! Circular (Morgan) and linear-path fingerprints, plus the similarity and
//! distance functions used for retrieval and nearest-neighbour models.

use crate::hashing::hash_words;
use crate::molgraph::{atom_invariants, InvariantConfig, MolecularGraph};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FingerprintError {
    #[error("invalid fingerprint config: {0}")]
    InvalidConfig(String),
    #[error("fingerprint configs differ")]
    ConfigMismatch,
    #[error("vector lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FingerprintKind {
    Morgan,
    Path,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintConfig {
    pub kind: FingerprintKind,
    /// Morgan radius, or maximum path length in bonds.
    pub radius: u32,
    pub n_bits: usize,
    pub counted: bool,
    /// Drop environments that cover an atom/bond set already seen in the molecule.
    #[serde(default = "default_true")]
    pub dedup_environments: bool,
    #[serde(default)]
    pub invariants: InvariantConfig,
}

fn default_true() -> bool {
    true
}

impl FingerprintConfig {
    /// Counted Morgan fingerprint, radius 2, 2048 bits.
    pub fn morgan_counts() -> Self {
        FingerprintConfig {
            kind: FingerprintKind::Morgan,
            radius: 2,
            n_bits: 2048,
            counted: true,
            dedup_environments: true,
            invariants: InvariantConfig::default(),
        }
    }

    /// Bit Morgan fingerprint, radius 2, 2048 bits.
    pub fn morgan_bits() -> Self {
        FingerprintConfig {
            counted: false,
            ..Self::morgan_counts()
        }
    }

    /// Bit path fingerprint, paths up to 6 bonds, 4096 bits.
    pub fn path_bits() -> Self {
        FingerprintConfig {
            kind: FingerprintKind::Path,
            radius: 6,
            n_bits: 4096,
            counted: false,
            dedup_environments: true,
            invariants: InvariantConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), FingerprintError> {
        if self.n_bits < 64 || !self.n_bits.is_power_of_two() {
            return Err(FingerprintError::InvalidConfig(format!(
                "n_bits must be a power of two >= 64, got {}",
                self.n_bits
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub values: Vec<u32>,
    pub config: FingerprintConfig,
}

impl Fingerprint {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    /// (index, value) pairs of nonzero entries.
    pub fn nonzero(&self) -> Vec<(usize, u32)> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, &v)| (i, v))
            .collect()
    }

    fn from_ids(ids: impl Iterator<Item = u64>, config: FingerprintConfig) -> Fingerprint {
        let mut values = vec![0u32; config.n_bits];
        for id in ids {
            let slot = &mut values[(id % config.n_bits as u64) as usize];
            if config.counted {
                *slot += 1;
            } else {
                *slot = 1;
            }
        }
        Fingerprint { values, config }
    }
}

/// A hashed atom-centred environment before folding into a fixed-length vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Environment {
    pub radius: u32,
    pub center: usize,
    pub id: u64,
    /// Sorted atom indices covered.
    pub atoms: Vec<usize>,
    /// Sorted bond indices covered.
    pub bonds: Vec<usize>,
}

/// All Morgan environments up to `radius`, radius-major, ids ascending within
/// a radius. With `dedup`, an environment whose (atoms, bonds) cover was
/// already produced is dropped; among same-radius duplicates the smallest id
/// survives.
pub fn morgan_environments(
    g: &MolecularGraph,
    radius: u32,
    invariants: &InvariantConfig,
    dedup: bool,
) -> Vec<Environment> {
    let n = g.num_atoms();
    let mut ids = atom_invariants(g, invariants);
    let mut bond_sets: Vec<HashSet<usize>> = vec![HashSet::new(); n];
    let mut out = Vec::new();
    let mut seen: HashSet<(Vec<usize>, Vec<usize>)> = HashSet::new();

    for r in 0..=radius {
        if r > 0 {
            let mut next_ids = vec![0u64; n];
            let mut next_sets = bond_sets.clone();
            for i in 0..n {
                let mut nb: Vec<(u64, u64)> = g
                    .neighbors(i)
                    .iter()
                    .map(|&(u, b)| (g.bonds()[b].order.code() as u64, ids[u]))
                    .collect();
                nb.sort_unstable();
                let mut words = vec![r as u64, ids[i]];
                for (o, id) in nb {
                    words.push(o);
                    words.push(id);
                }
                next_ids[i] = hash_words(&words);
                for &(u, b) in g.neighbors(i) {
                    next_sets[i].insert(b);
                    next_sets[i].extend(bond_sets[u].iter().copied());
                }
            }
            ids = next_ids;
            bond_sets = next_sets;
        }
        let mut layer: Vec<Environment> = (0..n)
            .map(|i| {
                let mut bonds: Vec<usize> = bond_sets[i].iter().copied().collect();
                bonds.sort_unstable();
                let mut atoms: Vec<usize> = bonds
                    .iter()
                    .flat_map(|&b| [g.bonds()[b].begin, g.bonds()[b].end])
                    .chain(std::iter::once(i))
                    .collect();
                atoms.sort_unstable();
                atoms.dedup();
                Environment {
                    radius: r,
                    center: i,
                    id: ids[i],
                    atoms,
                    bonds,
                }
            })
            .collect();
        layer.sort_by_key(|e| (e.id, e.center));
        for env in layer {
            if dedup && !seen.insert((env.atoms.clone(), env.bonds.clone())) {
                continue;
            }
            out.push(env);
        }
    }
    out
}

pub fn morgan_fingerprint(g: &MolecularGraph, cfg: &FingerprintConfig) -> Result<Fingerprint, FingerprintError> {
    cfg.validate()?;
    if cfg.kind != FingerprintKind::Morgan {
        return Err(FingerprintError::InvalidConfig("expected a morgan config".into()));
    }
    let envs = morgan_environments(g, cfg.radius, &cfg.invariants, cfg.dedup_environments);
    Ok(Fingerprint::from_ids(envs.iter().map(|e| e.id), *cfg))
}

/// A linear bond path, hashed direction-independently.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathEnvironment {
    pub id: u64,
    /// Atoms along the path, starting at the smaller endpoint index.
    pub atoms: Vec<usize>,
}

/// Every simple path of 1..=`max_path` bonds, each undirected path once.
pub fn path_environments(g: &MolecularGraph, max_path: u32) -> Vec<PathEnvironment> {
    let label = |a: usize| {
        let atom = &g.atoms()[a];
        atom.element.atomic_number() as u64 * 2 + atom.aromatic as u64
    };
    let mut out = Vec::new();
    let mut path = Vec::new();
    let mut on_path = vec![false; g.num_atoms()];

    fn extend(
        g: &MolecularGraph,
        max_path: usize,
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        out: &mut Vec<Vec<usize>>,
    ) {
        let last = *path.last().unwrap();
        if path.len() > 1 && path[0] < last {
            out.push(path.clone());
        }
        if path.len() > max_path {
            return;
        }
        for &(u, _) in g.neighbors(last) {
            if !on_path[u] {
                on_path[u] = true;
                path.push(u);
                extend(g, max_path, path, on_path, out);
                path.pop();
                on_path[u] = false;
            }
        }
    }

    let mut raw = Vec::new();
    for s in 0..g.num_atoms() {
        path.push(s);
        on_path[s] = true;
        extend(g, max_path as usize, &mut path, &mut on_path, &mut raw);
        on_path[s] = false;
        path.pop();
    }
    for atoms in raw {
        let seq = |order: &mut dyn Iterator<Item = usize>| {
            let atoms: Vec<usize> = order.collect();
            let mut words = vec![label(atoms[0])];
            for w in atoms.windows(2) {
                words.push(g.bond_between(w[0], w[1]).unwrap().order.code() as u64);
                words.push(label(w[1]));
            }
            words
        };
        let fwd = seq(&mut atoms.iter().copied());
        let rev = seq(&mut atoms.iter().rev().copied());
        let mut words = vec![u64::from(atoms.len() as u32 - 1)];
        words.extend(fwd.min(rev));
        out.push(PathEnvironment {
            id: hash_words(&words),
            atoms,
        });
    }
    out
}

pub fn path_fingerprint(g: &MolecularGraph, cfg: &FingerprintConfig) -> Result<Fingerprint, FingerprintError> {
    cfg.validate()?;
    if cfg.kind != FingerprintKind::Path {
        return Err(FingerprintError::InvalidConfig("expected a path config".into()));
    }
    let envs = path_environments(g, cfg.radius);
    Ok(Fingerprint::from_ids(envs.iter().map(|e| e.id), *cfg))
}

/// Dispatch on `cfg.kind`.
pub fn fingerprint(g: &MolecularGraph, cfg: &FingerprintConfig) -> Result<Fingerprint, FingerprintError> {
    match cfg.kind {
        FingerprintKind::Morgan => morgan_fingerprint(g, cfg),
        FingerprintKind::Path => path_fingerprint(g, cfg),
    }
}

/// Tanimoto similarity; counts use the Σmin/Σmax generalization.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    if a.config != b.config {
        return Err(FingerprintError::ConfigMismatch);
    }
    let (mut lo, mut hi) = (0u64, 0u64);
    for (&x, &y) in a.values.iter().zip(&b.values) {
        lo += x.min(y) as u64;
        hi += x.max(y) as u64;
    }
    Ok(if hi == 0 { 1.0 } else { lo as f64 / hi as f64 })
}

/// Σmin/Σmax over non-negative vectors; 1 when both are all-zero.
pub fn tanimoto_values(a: &[f64], b: &[f64]) -> Result<f64, FingerprintError> {
    if a.len() != b.len() {
        return Err(FingerprintError::LengthMismatch(a.len(), b.len()));
    }
    let (mut lo, mut hi) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        lo += x.min(y);
        hi += x.max(y);
    }
    Ok(if hi == 0.0 { 1.0 } else { lo / hi })
}

pub fn jaccard_distance(a: &[f64], b: &[f64]) -> Result<f64, FingerprintError> {
    Ok(1.0 - tanimoto_values(a, b)?)
}

/// 1 − cos(a, b), in [0, 2].
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64, FingerprintError> {
    if a.len() != b.len() {
        return Err(FingerprintError::LengthMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(FingerprintError::ZeroNorm);
    }
    Ok((1.0 - dot / (na * nb).sqrt()).clamp(0.0, 2.0))
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64, FingerprintError> {
    if a.len() != b.len() {
        return Err(FingerprintError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}
