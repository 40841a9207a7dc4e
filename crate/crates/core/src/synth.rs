//! Synthetic labeled corpus whose descriptors are fixed functions of
//! functional-group presence. Used for end-to-end checks where curated odor
//! data is unavailable.

use crate::dataset::{LabeledDataset, Record};
use crate::hashing::derive_seed;
use crate::molgraph::{canonical_form, parse_smiles, BondOrder, Element, MolecularGraph};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// Functional groups detected on a parsed graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalGroups {
    pub ester: bool,
    pub carboxylic_acid: bool,
    pub aldehyde: bool,
    pub ketone: bool,
    pub hydroxyl: bool,
    pub amine: bool,
    pub sulfur: bool,
    pub alkene: bool,
    pub aromatic_ring: bool,
    pub halogen: bool,
    pub nitrile: bool,
}

fn is_carbonyl_carbon(g: &MolecularGraph, a: usize) -> bool {
    g.atoms()[a].element == Element::C
        && g.neighbors(a).iter().any(|&(n, b)| g.atoms()[n].element == Element::O && g.bonds()[b].order == BondOrder::Double)
}

pub fn functional_groups(g: &MolecularGraph) -> FunctionalGroups {
    let atoms = g.atoms();
    let mut f = FunctionalGroups::default();
    for (a, atom) in atoms.iter().enumerate() {
        let nbrs = g.neighbors(a);
        let single_to = |el: Element| {
            nbrs.iter().filter(move |&&(n, b)| atoms[n].element == el && g.bonds()[b].order == BondOrder::Single).map(|&(n, _)| n)
        };
        if atom.aromatic {
            f.aromatic_ring = true;
        }
        match atom.element {
            Element::C if is_carbonyl_carbon(g, a) => {
                let mut has_single_o = false;
                for o in single_to(Element::O) {
                    has_single_o = true;
                    if atoms[o].total_h() >= 1 {
                        f.carboxylic_acid = true;
                    } else if g.neighbors(o).iter().any(|&(n, _)| n != a && atoms[n].element == Element::C) {
                        f.ester = true;
                    }
                }
                let carbon_nbrs = nbrs.iter().filter(|&&(n, _)| atoms[n].element == Element::C).count();
                let hetero_single = has_single_o || single_to(Element::N).next().is_some() || single_to(Element::S).next().is_some();
                if !hetero_single {
                    if atom.total_h() >= 1 {
                        f.aldehyde = true;
                    } else if carbon_nbrs == 2 {
                        f.ketone = true;
                    }
                }
            }
            Element::C => {
                for &(n, b) in nbrs {
                    let order = g.bonds()[b].order;
                    if order == BondOrder::Double && atoms[n].element == Element::C && !atom.aromatic {
                        f.alkene = true;
                    }
                    if order == BondOrder::Triple && atoms[n].element == Element::N {
                        f.nitrile = true;
                    }
                }
            }
            Element::O => {
                if atom.total_h() == 1 && nbrs.iter().all(|&(n, _)| atoms[n].element == Element::C && !is_carbonyl_carbon(g, n)) {
                    f.hydroxyl = true;
                }
            }
            Element::N => {
                let saturated = nbrs.iter().all(|&(_, b)| g.bonds()[b].order == BondOrder::Single);
                let amide = nbrs.iter().any(|&(n, _)| is_carbonyl_carbon(g, n));
                if !atom.aromatic && saturated && !amide {
                    f.amine = true;
                }
            }
            Element::S => f.sulfur = true,
            Element::F | Element::CL | Element::BR | Element::I => f.halogen = true,
            _ => {}
        }
    }
    f
}

/// Descriptor rules, in vocabulary order. "sweet" reuses the groups behind
/// "fruity" and "sour".
pub const SYNTH_LABELS: [&str; 7] = ["fishy", "floral", "fruity", "green", "sour", "sulfurous", "sweet"];

/// 0/1 descriptor row for the first `n_labels` entries of [`SYNTH_LABELS`].
pub fn synth_label_row(f: &FunctionalGroups, n_labels: usize) -> Vec<u8> {
    let all = [
        f.amine,
        f.aromatic_ring || f.hydroxyl,
        f.ester,
        f.aldehyde || f.alkene,
        f.carboxylic_acid,
        f.sulfur,
        f.ester || f.carboxylic_acid,
    ];
    all.iter().take(n_labels).map(|&b| u8::from(b)).collect()
}

/// Core skeletons as (atom token, free substituent slots).
const CORES: [&[(&str, usize)]; 7] = [
    &[("C", 2), ("C", 2), ("C", 2)],
    &[("C", 2), ("C", 2), ("C", 2), ("C", 2), ("C", 2)],
    &[("C", 2), ("C(C)", 1), ("C", 2), ("C", 2)],
    &[("c1", 1), ("c", 1), ("c", 1), ("c", 1), ("c", 1), ("c1", 1)],
    &[("C", 2), ("C=", 1), ("C", 1), ("C", 2)],
    &[("C1", 2), ("C", 2), ("C", 2), ("C", 2), ("C", 2), ("C1", 2)],
    &[("C", 2), ("C", 2), ("O", 0), ("C", 2), ("C", 2)],
];

/// Substituents attached through their first atom.
const GROUPS: [&str; 16] = [
    "O", "C(=O)OC", "OC(=O)C", "C(=O)O", "C=O", "C(=O)C", "N", "NC", "S", "SC", "Cl", "C#N", "OC", "C", "CC", "c2ccccc2",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_molecules: usize,
    pub n_labels: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n_molecules: 500, n_labels: SYNTH_LABELS.len(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub ids: Vec<String>,
    pub smiles: Vec<String>,
    pub labels: Vec<Vec<u8>>,
    pub vocabulary: Vec<String>,
}

impl SynthCorpus {
    pub fn graphs(&self) -> Vec<MolecularGraph> {
        self.smiles.iter().map(|s| parse_smiles(s).expect("generated SMILES parse")).collect()
    }

    pub fn to_dataset(&self) -> LabeledDataset {
        let records = self.ids.iter().zip(&self.smiles).zip(&self.labels).map(|((id, s), row)| Record {
            id: id.clone(),
            smiles: s.clone(),
            canonical: s.clone(),
            labels: row.iter().zip(&self.vocabulary).filter(|(&v, _)| v == 1).map(|(_, l)| l.clone()).collect(),
            source: Some("synthetic".into()),
        });
        let mut ds = LabeledDataset::from_records(records);
        ds.vocabulary = self.vocabulary.clone();
        ds
    }

    /// CSV text with `id,smiles,descriptors` columns.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "smiles", "descriptors"]).expect("in-memory write");
        for ((id, s), row) in self.ids.iter().zip(&self.smiles).zip(&self.labels) {
            let desc: Vec<&str> = row.iter().zip(&self.vocabulary).filter(|(&v, _)| v == 1).map(|(_, l)| l.as_str()).collect();
            w.write_record([id.as_str(), s.as_str(), &desc.join(";")]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

fn random_molecule(rng: &mut ChaCha8Rng) -> String {
    let core = *CORES.choose(rng).expect("non-empty");
    let mut slots: Vec<Vec<&str>> = vec![Vec::new(); core.len()];
    let n_groups = rng.random_range(1..=3);
    for _ in 0..n_groups {
        let pos = rng.random_range(0..core.len());
        if slots[pos].len() >= core[pos].1 {
            continue;
        }
        slots[pos].push(GROUPS.choose(rng).expect("non-empty"));
    }
    if slots.iter().all(Vec::is_empty) {
        slots[0].push(GROUPS.choose(rng).expect("non-empty"));
    }
    let mut s = String::new();
    for (&(tok, _), subs) in core.iter().zip(&slots) {
        // Bond symbols in a token belong after its atom and any branches.
        let (atom, bond) = match tok.strip_suffix('=') {
            Some(a) => (a, "="),
            None => (tok, ""),
        };
        s.push_str(atom);
        for g in subs {
            s.push('(');
            s.push_str(g);
            s.push(')');
        }
        s.push_str(bond);
    }
    s
}

/// Generate `n_molecules` distinct molecules (by canonical form) with
/// descriptor rows. Regenerates from a derived seed until every descriptor
/// has at least one positive and one negative.
pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let n_labels = cfg.n_labels.clamp(1, SYNTH_LABELS.len());
    for attempt in 0u64.. {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[attempt]));
        let mut seen = HashSet::new();
        let (mut smiles, mut labels) = (Vec::new(), Vec::new());
        let mut tries = 0usize;
        while smiles.len() < cfg.n_molecules && tries < 200 * cfg.n_molecules.max(1) {
            tries += 1;
            let s = random_molecule(&mut rng);
            let g = parse_smiles(&s).unwrap_or_else(|e| panic!("generated SMILES {s} failed to parse: {e:?}"));
            let canon = canonical_form(&g);
            if seen.insert(canon.clone()) {
                labels.push(synth_label_row(&functional_groups(&g), n_labels));
                smiles.push(canon);
            }
        }
        let balanced = (0..n_labels).all(|j| {
            let pos = labels.iter().filter(|r: &&Vec<u8>| r[j] == 1).count();
            pos > 0 && pos < labels.len()
        });
        if balanced || attempt >= 100 {
            let ids = (0..smiles.len()).map(|i| format!("syn{i:05}")).collect();
            let vocabulary = SYNTH_LABELS[..n_labels].iter().map(|s| s.to_string()).collect();
            return SynthCorpus { ids, smiles, labels, vocabulary };
        }
    }
    unreachable!("attempt loop returns")
}
