//! Molecular graphs parsed from SMILES, with ring and aromaticity perception
//! and a canonical string form for deduplication.

mod canon;
mod element;
mod rings;
mod smiles;

pub use canon::{canonical_form, canonical_ranks, random_smiles, write_smiles};
pub use element::Element;
pub use smiles::{parse_smiles, parse_smiles_with, ParseOptions, SmilesError};

use crate::hashing::hash_words;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Small integer code used in hashing and feature one-hots.
    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    /// Contribution to the valence sum; aromatic bonds count as single here
    /// and the aromatic atom gets one extra unit separately.
    pub fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BondOrder::Single => "-",
            BondOrder::Double => "=",
            BondOrder::Triple => "#",
            BondOrder::Aromatic => ":",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub formal_charge: i8,
    /// Hydrogens given inside a bracket atom.
    pub explicit_h: u8,
    /// Hydrogens implied by standard valence (organic-subset atoms only).
    pub implicit_h: u8,
    pub aromatic: bool,
    pub in_ring: bool,
    /// Number of bonded neighbours.
    pub degree: u8,
}

impl Atom {
    pub fn total_h(&self) -> u8 {
        self.explicit_h + self.implicit_h
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub begin: usize,
    pub end: usize,
    pub order: BondOrder,
    pub in_ring: bool,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.begin == atom {
            self.end
        } else {
            self.begin
        }
    }
}

/// Immutable, simple, undirected molecular graph.
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    rings: Vec<Vec<usize>>,
    /// Per atom: (neighbour, bond index), ascending by neighbour.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl MolecularGraph {
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    /// Smallest set of smallest rings, each as an atom cycle.
    pub fn rings(&self) -> &[Vec<usize>] {
        &self.rings
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.adjacency[a]
            .iter()
            .find(|(n, _)| *n == b)
            .map(|&(_, bi)| &self.bonds[bi])
    }

    /// Sum of bond valence contributions around an atom.
    pub fn bond_valence_sum(&self, atom: usize) -> u8 {
        self.adjacency[atom]
            .iter()
            .map(|&(_, b)| self.bonds[b].order.valence())
            .sum()
    }

    pub fn fragment_count(&self) -> usize {
        fragments(self.atoms.len(), &self.adjacency).len()
    }

    /// Relabel atoms: atom `i` of `self` becomes atom `perm[i]` of the result.
    pub fn permuted(&self, perm: &[usize]) -> MolecularGraph {
        assert_eq!(perm.len(), self.atoms.len(), "permutation length");
        let mut hit = vec![false; perm.len()];
        for &p in perm {
            assert!(p < perm.len() && !std::mem::replace(&mut hit[p], true), "not a permutation");
        }
        let mut atoms = self.atoms.clone();
        for (i, a) in self.atoms.iter().enumerate() {
            atoms[perm[i]] = a.clone();
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| {
                let (x, y) = (perm[b.begin], perm[b.end]);
                Bond {
                    begin: x.min(y),
                    end: x.max(y),
                    order: b.order,
                    in_ring: b.in_ring,
                }
            })
            .collect();
        Self::assemble(atoms, bonds)
    }

    /// Builds adjacency and rings around already-validated atoms and bonds.
    fn assemble(atoms: Vec<Atom>, bonds: Vec<Bond>) -> MolecularGraph {
        let adjacency = adjacency(atoms.len(), &bonds);
        let rings = rings::sssr(atoms.len(), &adjacency, bonds.len());
        MolecularGraph {
            atoms,
            bonds,
            rings,
            adjacency,
        }
    }
}

pub(crate) fn adjacency(n: usize, bonds: &[Bond]) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); n];
    for (i, b) in bonds.iter().enumerate() {
        adj[b.begin].push((b.end, i));
        adj[b.end].push((b.begin, i));
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    adj
}

/// Connected components, each sorted, ordered by their smallest atom.
pub(crate) fn fragments(n: usize, adj: &[Vec<(usize, usize)>]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut i = 0;
        while i < comp.len() {
            for &(nb, _) in &adj[comp[i]] {
                if !seen[nb] {
                    seen[nb] = true;
                    comp.push(nb);
                }
            }
            i += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Hydrogens an organic-subset atom receives when written without brackets.
/// `None` means the bond sum exceeds every allowed valence.
pub(crate) fn default_implicit_h(element: Element, aromatic: bool, bond_sum: u8) -> Option<u8> {
    let valences = element.organic_valences()?;
    if aromatic {
        let max = *valences.last().unwrap();
        if bond_sum + 1 > max {
            return None;
        }
        Some(valences[0].saturating_sub(bond_sum + 1))
    } else {
        valences
            .iter()
            .find(|&&v| v >= bond_sum)
            .map(|&v| v - bond_sum)
    }
}

/// Which atom properties enter the initial atom invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantConfig {
    pub element: bool,
    pub degree: bool,
    pub formal_charge: bool,
    pub hydrogens: bool,
    pub in_ring: bool,
    pub aromatic: bool,
}

impl Default for InvariantConfig {
    fn default() -> Self {
        InvariantConfig {
            element: true,
            degree: true,
            formal_charge: true,
            hydrogens: true,
            in_ring: true,
            aromatic: true,
        }
    }
}

/// Per-atom hash of (element, degree, charge, total H, ring flag, aromatic flag).
pub fn atom_invariants(g: &MolecularGraph, cfg: &InvariantConfig) -> Vec<u64> {
    g.atoms()
        .iter()
        .map(|a| {
            let pick = |on: bool, v: u64| if on { v } else { u64::MAX };
            hash_words(&[
                pick(cfg.element, a.element.atomic_number() as u64),
                pick(cfg.degree, a.degree as u64),
                pick(cfg.formal_charge, a.formal_charge as i64 as u64),
                pick(cfg.hydrogens, a.total_h() as u64),
                pick(cfg.in_ring, a.in_ring as u64),
                pick(cfg.aromatic, a.aromatic as u64),
            ])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn methane_has_one_invariant() {
        let g = parse_smiles("C").unwrap();
        assert_eq!(atom_invariants(&g, &InvariantConfig::default()).len(), 1);
    }

    #[test]
    fn ethanol_carbons_differ() {
        let g = parse_smiles("CCO").unwrap();
        let inv = atom_invariants(&g, &InvariantConfig::default());
        assert_ne!(inv[0], inv[1]);
    }

    #[test]
    fn invariants_permute_with_atoms() {
        let g = parse_smiles("CC(=O)OCC1=CC=CC=C1").unwrap();
        let n = g.num_atoms();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let p = g.permuted(&perm);
        let a = atom_invariants(&g, &InvariantConfig::default());
        let b = atom_invariants(&p, &InvariantConfig::default());
        for i in 0..n {
            assert_eq!(a[i], b[perm[i]]);
        }
    }

    #[test]
    fn disabled_components_are_ignored() {
        let g = parse_smiles("CCO").unwrap();
        let cfg = InvariantConfig {
            degree: false,
            hydrogens: false,
            ..Default::default()
        };
        let inv = atom_invariants(&g, &cfg);
        assert_eq!(inv[0], inv[1]);
        assert_ne!(inv[0], inv[2]);
    }

    #[test]
    fn default_hydrogens() {
        assert_eq!(default_implicit_h(Element::C, false, 1), Some(3));
        assert_eq!(default_implicit_h(Element::C, true, 2), Some(1));
        assert_eq!(default_implicit_h(Element::C, true, 3), Some(0));
        assert_eq!(default_implicit_h(Element::N, false, 4), Some(1));
        assert_eq!(default_implicit_h(Element::S, true, 2), Some(0));
        assert_eq!(default_implicit_h(Element::C, false, 5), None);
        assert_eq!(default_implicit_h(Element::from_symbol("Na").unwrap(), false, 0), None);
    }
}
