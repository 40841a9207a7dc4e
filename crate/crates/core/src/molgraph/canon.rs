//! Canonical atom ranking by iterative neighbourhood refinement with
//! lexicographic tie-breaking, and DFS SMILES emission.

use super::{default_implicit_h, BondOrder, MolecularGraph};
use rand::seq::SliceRandom;
use rand::Rng;

/// Upper bound on explored tie-breaking leaves; beyond it the first branch is taken.
const MAX_LEAVES: usize = 4096;

type Neighbors = Vec<(usize, usize)>;

fn atom_key(g: &MolecularGraph, i: usize) -> (u8, u8, u8, i8, bool, bool) {
    let a = &g.atoms()[i];
    (
        a.element.atomic_number(),
        a.degree,
        a.total_h(),
        a.formal_charge,
        a.aromatic,
        a.in_ring,
    )
}

/// Dense ranks (0-based) of `keys`.
fn dense_ranks<K: Ord>(keys: &[K]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0; keys.len()];
    let mut r = 0;
    for w in 0..order.len() {
        if w > 0 && keys[order[w]] != keys[order[w - 1]] {
            r += 1;
        }
        ranks[order[w]] = r;
    }
    ranks
}

fn class_count(ranks: &[usize]) -> usize {
    ranks.iter().max().map_or(0, |m| m + 1)
}

fn refine(g: &MolecularGraph, mut ranks: Vec<usize>) -> Vec<usize> {
    loop {
        let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..g.num_atoms())
            .map(|i| {
                let mut nb: Vec<(usize, u8)> = g
                    .neighbors(i)
                    .iter()
                    .map(|&(n, b)| (ranks[n], g.bonds()[b].order.code()))
                    .collect();
                nb.sort_unstable();
                (ranks[i], nb)
            })
            .collect();
        let next = dense_ranks(&keys);
        if class_count(&next) == class_count(&ranks) {
            return next;
        }
        ranks = next;
    }
}

/// Canonical atom ranks: a permutation of `0..n` that is identical for
/// isomorphic graphs (up to automorphism).
pub fn canonical_ranks(g: &MolecularGraph) -> Vec<usize> {
    canonicalize(g).1
}

/// Canonical SMILES string; equal for different spellings of the same molecule.
pub fn canonical_form(g: &MolecularGraph) -> String {
    canonicalize(g).0
}

fn canonicalize(g: &MolecularGraph) -> (String, Vec<usize>) {
    if g.num_atoms() == 0 {
        return (String::new(), Vec::new());
    }
    let keys: Vec<_> = (0..g.num_atoms()).map(|i| atom_key(g, i)).collect();
    let ranks = refine(g, dense_ranks(&keys));
    let mut leaves = 0;
    search(g, ranks, &mut leaves)
}

fn search(g: &MolecularGraph, ranks: Vec<usize>, leaves: &mut usize) -> (String, Vec<usize>) {
    let n = ranks.len();
    if class_count(&ranks) == n {
        *leaves += 1;
        return (write_smiles(g, &ranks), ranks);
    }
    // smallest rank shared by more than one atom
    let mut counts = vec![0usize; n];
    for &r in &ranks {
        counts[r] += 1;
    }
    let target = (0..n).find(|&r| counts[r] > 1).unwrap();
    let members: Vec<usize> = (0..n).filter(|&i| ranks[i] == target).collect();
    let mut best: Option<(String, Vec<usize>)> = None;
    for &m in &members {
        // individualize m: it keeps `target`, every other atom at or above
        // `target` moves up by one
        let split: Vec<(usize, bool)> = (0..n).map(|i| (ranks[i], i != m && ranks[i] == target)).collect();
        let refined = refine(g, dense_ranks(&split));
        let candidate = search(g, refined, leaves);
        if best.as_ref().is_none_or(|b| candidate.0 < b.0) {
            best = Some(candidate);
        }
        if *leaves >= MAX_LEAVES {
            break;
        }
    }
    best.unwrap()
}

/// Random valid SMILES spelling of `g` (random root and branch order).
pub fn random_smiles<R: Rng + ?Sized>(g: &MolecularGraph, rng: &mut R) -> String {
    let mut ranks: Vec<usize> = (0..g.num_atoms()).collect();
    ranks.shuffle(rng);
    write_smiles(g, &ranks)
}

fn atom_token(g: &MolecularGraph, i: usize) -> String {
    let a = &g.atoms()[i];
    let sym = if a.aromatic {
        a.element.symbol().to_ascii_lowercase()
    } else {
        a.element.symbol().to_string()
    };
    let bare_ok = a.formal_charge == 0
        && a.element.is_organic_subset()
        && default_implicit_h(a.element, a.aromatic, g.bond_valence_sum(i)) == Some(a.total_h());
    if bare_ok {
        return sym;
    }
    let mut s = format!("[{sym}");
    match a.total_h() {
        0 => {}
        1 => s.push('H'),
        h => s.push_str(&format!("H{h}")),
    }
    match a.formal_charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("+{c}")),
        c => s.push_str(&format!("-{}", -c)),
    }
    s.push(']');
    s
}

fn bond_token(g: &MolecularGraph, a: usize, b: usize, order: BondOrder) -> &'static str {
    match order {
        BondOrder::Single if g.atoms()[a].aromatic && g.atoms()[b].aromatic => "-",
        BondOrder::Single | BondOrder::Aromatic => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
    }
}

fn ring_label(d: usize) -> String {
    if d < 10 {
        d.to_string()
    } else {
        format!("%{d:02}")
    }
}

/// Writes SMILES by DFS, rooting each fragment at its lowest-ranked atom and
/// visiting neighbours in rank order. `ranks` must be a total order.
pub fn write_smiles(g: &MolecularGraph, ranks: &[usize]) -> String {
    let n = g.num_atoms();
    let mut roots: Vec<usize> = super::fragments(n, &g.adjacency)
        .into_iter()
        .map(|f| *f.iter().min_by_key(|&&a| ranks[a]).unwrap())
        .collect();
    roots.sort_by_key(|&r| ranks[r]);

    // pass 1: DFS tree, children and ring closures per atom
    let mut visited = vec![false; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut closures: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n]; // (other atom, bond)
    let mut tree_bond = vec![false; g.num_bonds()];
    for &root in &roots {
        let mut stack = vec![(root, usize::MAX)];
        // iterative DFS with explicit neighbour ordering
        // (atom, sorted (neighbor, bond) pairs, next position)
        let mut order_stack: Vec<(usize, Neighbors, usize)> = Vec::new();
        visited[root] = true;
        let mut nbrs = sorted_neighbors(g, root, ranks);
        order_stack.push((root, std::mem::take(&mut nbrs), 0));
        stack.clear();
        while let Some((v, list, pos)) = order_stack.last_mut() {
            if *pos >= list.len() {
                order_stack.pop();
                continue;
            }
            let (u, b) = list[*pos];
            *pos += 1;
            let v = *v;
            if tree_bond[b] {
                continue;
            }
            if visited[u] {
                if !closures[v].iter().any(|&(_, cb)| cb == b) {
                    closures[u].push((v, b));
                    closures[v].push((u, b));
                }
                continue;
            }
            visited[u] = true;
            tree_bond[b] = true;
            children[v].push(u);
            order_stack.push((u, sorted_neighbors(g, u, ranks), 0));
        }
    }

    // pass 2: emission
    let mut out = String::new();
    let mut digit_of_bond = vec![usize::MAX; g.num_bonds()];
    let mut free: Vec<bool> = vec![true; 100];
    let mut emitted = vec![false; n];
    for (k, &root) in roots.iter().enumerate() {
        if k > 0 {
            out.push('.');
        }
        let mut stack: Vec<Frame> = vec![Frame::Atom(root, None)];
        while let Some(frame) = stack.pop() {
            match frame {
                Frame::Close => out.push(')'),
                Frame::Open => out.push('('),
                Frame::Atom(v, via) => {
                    if let Some((p, order)) = via {
                        out.push_str(bond_token(g, p, v, order));
                    }
                    out.push_str(&atom_token(g, v));
                    emitted[v] = true;
                    let mut rc = closures[v].clone();
                    rc.sort_by_key(|&(u, _)| ranks[u]);
                    for (u, b) in rc {
                        if digit_of_bond[b] == usize::MAX {
                            let d = (1..100).find(|&d| free[d]).expect("ring closure digits exhausted");
                            free[d] = false;
                            digit_of_bond[b] = d;
                            out.push_str(bond_token(g, v, u, g.bonds()[b].order));
                            out.push_str(&ring_label(d));
                        } else {
                            let d = digit_of_bond[b];
                            free[d] = true;
                            out.push_str(&ring_label(d));
                        }
                    }
                    let kids = &children[v];
                    for (idx, &c) in kids.iter().enumerate().rev() {
                        let order = g.bond_between(v, c).unwrap().order;
                        if idx + 1 == kids.len() {
                            stack.push(Frame::Atom(c, Some((v, order))));
                        } else {
                            stack.push(Frame::Close);
                            stack.push(Frame::Atom(c, Some((v, order))));
                            stack.push(Frame::Open);
                        }
                    }
                }
            }
        }
    }
    debug_assert!(emitted.iter().all(|&e| e));
    out
}

enum Frame {
    Atom(usize, Option<(usize, BondOrder)>),
    Open,
    Close,
}

fn sorted_neighbors(g: &MolecularGraph, v: usize, ranks: &[usize]) -> Vec<(usize, usize)> {
    let mut list = g.neighbors(v).to_vec();
    list.sort_by_key(|&(u, _)| ranks[u]);
    list
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn canon(s: &str) -> String {
        canonical_form(&parse_smiles(s).unwrap())
    }

    #[test]
    fn same_molecule_same_string() {
        assert_eq!(canon("CCO"), canon("OCC"));
        assert_ne!(canon("CCO"), canon("CCN"));
        assert_eq!(canon("c1ccccc1O"), canon("Oc1ccccc1"));
        assert_eq!(canon("C1=CC=CC=C1"), canon("c1ccccc1"));
        assert_eq!(canon("CC(=O)OC"), canon("COC(C)=O"));
    }

    #[test]
    fn respellings_collapse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for s in [
            "CC(C)CC(=O)OCC",
            "c1ccc2c(c1)cccc2C=O",
            "C12C3C4C1C5C2C3C45",
            "CC1=CC(=O)CC(C)(C)C1",
            "O=C1CCC2(CC1)OCCO2",
            "c1cc[nH]c1",
            "C[N+](C)(C)C",
        ] {
            let g = parse_smiles(s).unwrap();
            let c = canonical_form(&g);
            for _ in 0..30 {
                let r = random_smiles(&g, &mut rng);
                let back = parse_smiles(&r).unwrap_or_else(|e| panic!("{r}: {e}"));
                assert_eq!(canonical_form(&back), c, "{s} via {r}");
            }
        }
    }

    #[test]
    fn emitted_form_parses_to_same_graph_shape() {
        let g = parse_smiles("CC(=O)Oc1ccccc1C(=O)O").unwrap();
        let c = canonical_form(&g);
        let h = parse_smiles(&c).unwrap();
        assert_eq!(h.num_atoms(), g.num_atoms());
        assert_eq!(h.num_bonds(), g.num_bonds());
        assert_eq!(canonical_form(&h), c);
    }

    #[test]
    fn ranks_are_a_permutation() {
        let g = parse_smiles("CC(C)(C)c1ccccc1").unwrap();
        let mut r = canonical_ranks(&g);
        r.sort();
        assert_eq!(r, (0..g.num_atoms()).collect::<Vec<_>>());
    }

    #[test]
    fn many_ring_closures() {
        let g = parse_smiles("C1CC2CC3CC4CC5CC6CC7CC8CC9CC%10CC%11CCC%11CC%10CC9CC8CC7CC6CC5CC4CC3CC2C1").unwrap();
        let c = canonical_form(&g);
        assert_eq!(canonical_form(&parse_smiles(&c).unwrap()), c);
    }
}
