//! Smallest-set-of-smallest-rings perception (Horton candidates reduced by
//! GF(2) elimination) and Hückel checks for explicit Kekulé rings.

use super::{Atom, Bond, BondOrder, Element};
use std::collections::{HashSet, VecDeque};

type EdgeSet = Vec<u64>;

fn set_bit(s: &mut EdgeSet, i: usize) {
    s[i / 64] ^= 1 << (i % 64);
}

fn has_bit(s: &EdgeSet, i: usize) -> bool {
    s[i / 64] >> (i % 64) & 1 == 1
}

fn highest_bit(s: &EdgeSet) -> Option<usize> {
    s.iter()
        .enumerate()
        .rev()
        .find(|(_, w)| **w != 0)
        .map(|(i, w)| i * 64 + 63 - w.leading_zeros() as usize)
}

pub(crate) fn sssr(n: usize, adj: &[Vec<(usize, usize)>], n_bonds: usize) -> Vec<Vec<usize>> {
    let n_frag = super::fragments(n, adj).len();
    let target = (n_bonds + n_frag).saturating_sub(n);
    if target == 0 {
        return Vec::new();
    }
    let words = n_bonds.div_ceil(64);

    // Horton candidates: for root r and edge (x, y), P(r,x) + (x,y) + P(y,r).
    let mut candidates: Vec<(usize, EdgeSet)> = Vec::new();
    let mut seen: HashSet<EdgeSet> = HashSet::new();
    for r in 0..n {
        let mut dist = vec![usize::MAX; n];
        let mut parent = vec![(usize::MAX, usize::MAX); n];
        dist[r] = 0;
        let mut q = VecDeque::from([r]);
        while let Some(v) = q.pop_front() {
            for &(u, b) in &adj[v] {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    parent[u] = (v, b);
                    q.push_back(u);
                }
            }
        }
        let path_bonds = |mut v: usize| {
            let mut out = Vec::new();
            while v != r {
                let (p, b) = parent[v];
                out.push((v, b));
                v = p;
            }
            out
        };
        for x in 0..n {
            if dist[x] == usize::MAX {
                continue;
            }
            for &(y, b) in &adj[x] {
                if y < x || parent[x].1 == b || parent[y].1 == b {
                    continue;
                }
                let px = path_bonds(x);
                let py = path_bonds(y);
                let ax: HashSet<usize> = px.iter().map(|p| p.0).collect();
                if py.iter().any(|p| ax.contains(&p.0)) {
                    continue;
                }
                let mut set = vec![0u64; words];
                for &(_, pb) in px.iter().chain(py.iter()) {
                    set_bit(&mut set, pb);
                }
                set_bit(&mut set, b);
                let len = px.len() + py.len() + 1;
                if seen.insert(set.clone()) {
                    candidates.push((len, set));
                }
            }
        }
    }
    candidates.sort();

    let mut basis: Vec<EdgeSet> = Vec::new();
    let mut pivots: Vec<usize> = Vec::new();
    let mut chosen = Vec::new();
    for (_, set) in candidates {
        let mut v = set.clone();
        while let Some(k) = highest_bit(&v).and_then(|h| pivots.iter().position(|&p| p == h)) {
            for (w, bw) in v.iter_mut().zip(&basis[k]) {
                *w ^= bw;
            }
        }
        if let Some(h) = highest_bit(&v) {
            basis.push(v);
            pivots.push(h);
            chosen.push(set);
            if chosen.len() == target {
                break;
            }
        }
    }

    let mut rings: Vec<Vec<usize>> = chosen.iter().map(|s| cycle_atoms(s, adj)).collect();
    rings.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    rings
}

/// Orders the atoms of an edge-set cycle: start at the smallest atom, walk
/// towards its smaller cycle neighbour.
fn cycle_atoms(set: &EdgeSet, adj: &[Vec<(usize, usize)>]) -> Vec<usize> {
    let in_cycle = |a: usize| -> Vec<usize> {
        adj[a]
            .iter()
            .filter(|&&(_, b)| has_bit(set, b))
            .map(|&(n, _)| n)
            .collect()
    };
    let start = (0..adj.len()).find(|&a| !in_cycle(a).is_empty()).unwrap();
    let mut ring = vec![start];
    let mut prev = start;
    let mut cur = *in_cycle(start).iter().min().unwrap();
    while cur != start {
        ring.push(cur);
        let next = in_cycle(cur).into_iter().find(|&n| n != prev).unwrap();
        prev = cur;
        cur = next;
    }
    ring
}

pub(crate) fn ring_bond_flags(rings: &[Vec<usize>], adj: &[Vec<(usize, usize)>], n_bonds: usize) -> Vec<bool> {
    let mut flags = vec![false; n_bonds];
    for r in rings {
        for i in 0..r.len() {
            let (a, b) = (r[i], r[(i + 1) % r.len()]);
            if let Some(&(_, bi)) = adj[a].iter().find(|(n, _)| *n == b) {
                flags[bi] = true;
            }
        }
    }
    flags
}

/// Marks 5- and 6-membered rings written in explicit alternating Kekulé form
/// as aromatic when they carry 6 pi electrons.
pub(crate) fn perceive_kekule_aromaticity(
    atoms: &mut [Atom],
    bonds: &mut [Bond],
    rings: &[Vec<usize>],
    adj: &[Vec<(usize, usize)>],
) {
    let mut to_mark: Vec<&Vec<usize>> = Vec::new();
    for ring in rings {
        let n = ring.len();
        if !(n == 5 || n == 6) || ring.iter().any(|&a| atoms[a].aromatic) {
            continue;
        }
        let ring_bond = |i: usize| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            adj[a].iter().find(|(x, _)| *x == b).unwrap().1
        };
        let ring_bonds: Vec<usize> = (0..n).map(ring_bond).collect();
        let doubles: Vec<bool> = ring_bonds.iter().map(|&b| bonds[b].order == BondOrder::Double).collect();
        if ring_bonds.iter().any(|&b| bonds[b].order == BondOrder::Triple) {
            continue;
        }
        let mut pi = 0;
        let mut ok = true;
        for (i, &a) in ring.iter().enumerate() {
            let in_ring_double = doubles[i] as u8 + doubles[(i + n - 1) % n] as u8;
            let any_double = adj[a].iter().any(|&(_, b)| bonds[b].order == BondOrder::Double);
            let atom = &atoms[a];
            if atom.formal_charge != 0 {
                ok = false;
                break;
            }
            match in_ring_double {
                1 if matches!(atom.element, Element::C | Element::N) => pi += 1,
                0 if n == 5 && !any_double && matches!(atom.element, Element::N | Element::O | Element::S) => {
                    pi += 2
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && pi == 6 {
            to_mark.push(ring);
        }
    }
    for ring in to_mark {
        let n = ring.len();
        for i in 0..n {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            atoms[a].aromatic = true;
            let bi = adj[a].iter().find(|(x, _)| *x == b).unwrap().1;
            bonds[bi].order = BondOrder::Aromatic;
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::molgraph::parse_smiles;

    fn ring_sizes(s: &str) -> Vec<usize> {
        parse_smiles(s).unwrap().rings().iter().map(|r| r.len()).collect()
    }

    #[test]
    fn ring_sets() {
        assert_eq!(ring_sizes("C1CCCCC1"), vec![6]);
        assert_eq!(ring_sizes("c1ccc2ccccc2c1"), vec![6, 6]);
        assert_eq!(ring_sizes("C1CC2CCC1C2"), vec![5, 5]);
        assert_eq!(ring_sizes("C12C3C4C1C5C2C3C45"), vec![4, 4, 4, 4, 4]);
        assert_eq!(ring_sizes("CC(C)CC"), Vec::<usize>::new());
        assert_eq!(ring_sizes("C1CC1CC1CCC1"), vec![3, 4]);
    }

    #[test]
    fn rings_are_closed_cycles() {
        for s in ["c1ccc2ccccc2c1", "C12C3C4C1C5C2C3C45", "O=C1CCC2(CC1)OCCO2"] {
            let g = parse_smiles(s).unwrap();
            for r in g.rings() {
                for i in 0..r.len() {
                    assert!(g.bond_between(r[i], r[(i + 1) % r.len()]).is_some());
                }
            }
        }
    }

    #[test]
    fn in_ring_matches_rings() {
        let g = parse_smiles("CC1CCC(CC1)C(C)=O").unwrap();
        let ring_atoms: std::collections::HashSet<usize> = g.rings().iter().flatten().copied().collect();
        for (i, a) in g.atoms().iter().enumerate() {
            assert_eq!(a.in_ring, ring_atoms.contains(&i));
        }
    }
}
