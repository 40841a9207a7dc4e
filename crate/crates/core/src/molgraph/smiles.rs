use super::{adjacency, default_implicit_h, fragments, rings, Atom, Bond, BondOrder, Element, MolecularGraph};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("empty SMILES")]
    Empty,
    #[error("non-ASCII character at offset {offset}")]
    NonAscii { offset: usize },
    #[error("unclosed ring closure {digit} opened at offset {offset}")]
    UnclosedRing { digit: u16, offset: usize },
    #[error("unbalanced parentheses at offset {offset}")]
    UnbalancedParens { offset: usize },
    #[error("unknown element `{symbol}` at offset {offset}")]
    UnknownElement { symbol: String, offset: usize },
    #[error("valence overflow on atom {atom} at offset {offset}")]
    ValenceOverflow { atom: usize, offset: usize },
    #[error("unexpected character `{ch}` at offset {offset}")]
    UnexpectedChar { ch: char, offset: usize },
    #[error("bond symbol at offset {offset} is not followed by an atom")]
    DanglingBond { offset: usize },
    #[error("conflicting bond orders on ring closure {digit} at offset {offset}")]
    RingBondConflict { digit: u16, offset: usize },
    #[error("duplicate or self bond at offset {offset}")]
    InvalidBond { offset: usize },
    #[error("aromatic atom outside a ring at offset {offset}")]
    AromaticOutsideRing { offset: usize },
    #[error("unterminated bracket atom at offset {offset}")]
    UnterminatedBracket { offset: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    /// Keep only the fragment with the most heavy atoms from `.`-separated input.
    pub keep_largest_fragment: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            keep_largest_fragment: true,
        }
    }
}

#[derive(Debug, Clone)]
struct RawAtom {
    element: Element,
    charge: i8,
    bracket_h: Option<u8>,
    aromatic: bool,
    offset: usize,
}

#[derive(Debug, Clone)]
struct RawBond {
    a: usize,
    b: usize,
    order: Option<BondOrder>,
    offset: usize,
}

/// Parse SMILES with default options (largest fragment kept).
pub fn parse_smiles(text: &str) -> Result<MolecularGraph, SmilesError> {
    parse_smiles_with(text, ParseOptions::default())
}

pub fn parse_smiles_with(text: &str, opts: ParseOptions) -> Result<MolecularGraph, SmilesError> {
    let (atoms, bonds) = Tokenizer::new(text)?.run()?;
    build(atoms, bonds, opts)
}

struct Tokenizer<'a> {
    s: &'a [u8],
    pos: usize,
    atoms: Vec<RawAtom>,
    bonds: Vec<RawBond>,
}

impl<'a> Tokenizer<'a> {
    fn new(text: &'a str) -> Result<Self, SmilesError> {
        if text.is_empty() {
            return Err(SmilesError::Empty);
        }
        if let Some(offset) = text.bytes().position(|b| !b.is_ascii()) {
            return Err(SmilesError::NonAscii { offset });
        }
        Ok(Tokenizer {
            s: text.as_bytes(),
            pos: 0,
            atoms: Vec::new(),
            bonds: Vec::new(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn unexpected(&self, offset: usize) -> SmilesError {
        SmilesError::UnexpectedChar {
            ch: self.s[offset] as char,
            offset,
        }
    }

    fn run(mut self) -> Result<(Vec<RawAtom>, Vec<RawBond>), SmilesError> {
        let mut prev: Option<usize> = None;
        let mut branches: Vec<(usize, usize)> = Vec::new();
        let mut pending: Option<(BondOrder, usize)> = None;
        let mut open_rings: BTreeMap<u16, (usize, Option<BondOrder>, usize)> = BTreeMap::new();

        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'(' => {
                    let p = prev.ok_or_else(|| self.unexpected(start))?;
                    if pending.is_some() {
                        return Err(self.unexpected(start));
                    }
                    branches.push((p, start));
                    self.pos += 1;
                }
                b')' => {
                    let (p, _) = branches
                        .pop()
                        .ok_or(SmilesError::UnbalancedParens { offset: start })?;
                    if let Some((_, off)) = pending {
                        return Err(SmilesError::DanglingBond { offset: off });
                    }
                    prev = Some(p);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if pending.is_some() || prev.is_none() {
                        return Err(self.unexpected(start));
                    }
                    let order = match c {
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        b':' => BondOrder::Aromatic,
                        // directional bonds carry stereo only
                        _ => BondOrder::Single,
                    };
                    pending = Some((order, start));
                    self.pos += 1;
                }
                b'.' => {
                    if let Some((_, off)) = pending {
                        return Err(SmilesError::DanglingBond { offset: off });
                    }
                    if prev.is_none() {
                        return Err(self.unexpected(start));
                    }
                    prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let atom = prev.ok_or_else(|| self.unexpected(start))?;
                    let digit = self.ring_number()?;
                    let order = pending.take().map(|(o, _)| o);
                    match open_rings.remove(&digit) {
                        Some((other, first, _)) => {
                            let order = match (first, order) {
                                (Some(x), Some(y)) if x != y => {
                                    return Err(SmilesError::RingBondConflict { digit, offset: start })
                                }
                                (x, y) => x.or(y),
                            };
                            self.bonds.push(RawBond {
                                a: other,
                                b: atom,
                                order,
                                offset: start,
                            });
                        }
                        None => {
                            open_rings.insert(digit, (atom, order, start));
                        }
                    }
                }
                _ => {
                    let atom = if c == b'[' {
                        self.bracket_atom()?
                    } else {
                        self.organic_atom()?
                    };
                    let idx = self.atoms.len();
                    self.atoms.push(atom);
                    if let Some(p) = prev {
                        self.bonds.push(RawBond {
                            a: p,
                            b: idx,
                            order: pending.take().map(|(o, _)| o),
                            offset: start,
                        });
                    }
                    prev = Some(idx);
                }
            }
        }
        if let Some((_, off)) = pending {
            return Err(SmilesError::DanglingBond { offset: off });
        }
        if let Some(&(_, off)) = branches.first() {
            return Err(SmilesError::UnbalancedParens { offset: off });
        }
        if let Some((&digit, &(_, _, offset))) = open_rings.iter().min_by_key(|(_, v)| v.2) {
            return Err(SmilesError::UnclosedRing { digit, offset });
        }
        if self.atoms.is_empty() {
            return Err(SmilesError::Empty);
        }
        Ok((self.atoms, self.bonds))
    }

    fn ring_number(&mut self) -> Result<u16, SmilesError> {
        let start = self.pos;
        if self.s[self.pos] == b'%' {
            let digits = self.s.get(self.pos + 1..self.pos + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    Ok(((d[0] - b'0') * 10 + (d[1] - b'0')) as u16)
                }
                _ => Err(self.unexpected(start)),
            }
        } else {
            self.pos += 1;
            Ok((self.s[start] - b'0') as u16)
        }
    }

    fn organic_atom(&mut self) -> Result<RawAtom, SmilesError> {
        let offset = self.pos;
        let c = self.s[offset];
        let next = self.s.get(offset + 1).copied();
        let (sym, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => ("Cl", false, 2),
            (b'B', Some(b'r')) => ("Br", false, 2),
            (b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I', _) => {
                (std::str::from_utf8(&self.s[offset..offset + 1]).unwrap(), false, 1)
            }
            (b'b' | b'c' | b'n' | b'o' | b'p' | b's', _) => {
                (std::str::from_utf8(&self.s[offset..offset + 1]).unwrap(), true, 1)
            }
            _ if c.is_ascii_alphabetic() || c == b'*' => {
                return Err(SmilesError::UnknownElement {
                    symbol: (c as char).to_string(),
                    offset,
                })
            }
            _ => return Err(self.unexpected(offset)),
        };
        self.pos += len;
        let symbol = if aromatic { sym.to_ascii_uppercase() } else { sym.to_string() };
        let element = Element::from_symbol(&symbol).expect("organic subset symbol");
        Ok(RawAtom {
            element,
            charge: 0,
            bracket_h: None,
            aromatic,
            offset,
        })
    }

    fn bracket_atom(&mut self) -> Result<RawAtom, SmilesError> {
        let offset = self.pos;
        self.pos += 1;
        let unterminated = SmilesError::UnterminatedBracket { offset };
        // isotope, ignored
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        let sym_start = self.pos;
        let (element, aromatic) = {
            let rest = &self.s[self.pos..];
            let two = rest.get(..2).map(|b| std::str::from_utf8(b).unwrap());
            let one = rest.get(..1).map(|b| std::str::from_utf8(b).unwrap());
            match (two, one) {
                (Some(t @ ("se" | "as" | "te")), _) => {
                    self.pos += 2;
                    (Element::from_symbol(&capitalize(t)), true)
                }
                (Some(t), _)
                    if t.as_bytes()[0].is_ascii_uppercase()
                        && t.as_bytes()[1].is_ascii_lowercase()
                        && Element::from_symbol(t).is_some() =>
                {
                    self.pos += 2;
                    (Element::from_symbol(t), false)
                }
                (_, Some(o)) if o.as_bytes()[0].is_ascii_uppercase() => {
                    self.pos += 1;
                    (Element::from_symbol(o), false)
                }
                (_, Some(o @ ("b" | "c" | "n" | "o" | "p" | "s"))) => {
                    self.pos += 1;
                    (Element::from_symbol(&o.to_ascii_uppercase()), true)
                }
                (_, None) => return Err(unterminated),
                _ => (None, false),
            }
        };
        let element = match element {
            Some(e) => e,
            None => {
                let end = self.s[sym_start..]
                    .iter()
                    .position(|b| !b.is_ascii_alphabetic())
                    .map_or(self.s.len(), |p| sym_start + p)
                    .max(sym_start + 1)
                    .min(self.s.len());
                return Err(SmilesError::UnknownElement {
                    symbol: String::from_utf8_lossy(&self.s[sym_start..end]).into_owned(),
                    offset: sym_start,
                });
            }
        };
        // chirality, discarded
        while self.peek() == Some(b'@') {
            self.pos += 1;
        }
        if matches!(self.peek(), Some(b'T' | b'A' | b'S' | b'O'))
            && matches!(self.s.get(self.pos + 1), Some(b'H' | b'L' | b'P' | b'B'))
            && self.s[self.pos - 1] == b'@'
        {
            self.pos += 2;
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
        }
        let mut h = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            h = 1;
            if let Some(d @ b'0'..=b'9') = self.peek() {
                h = d - b'0';
                self.pos += 1;
            }
        }
        let mut charge: i8 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit: i8 = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            charge = unit;
            if let Some(d @ b'0'..=b'9') = self.peek() {
                charge = unit * (d - b'0') as i8;
                self.pos += 1;
            } else {
                while self.peek() == Some(sign) {
                    charge += unit;
                    self.pos += 1;
                }
            }
        }
        if self.peek() == Some(b':') {
            self.pos += 1;
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
        }
        match self.peek() {
            Some(b']') => self.pos += 1,
            Some(_) => return Err(self.unexpected(self.pos)),
            None => return Err(unterminated),
        }
        if aromatic && !element.can_be_aromatic() {
            return Err(SmilesError::UnknownElement {
                symbol: element.symbol().to_ascii_lowercase(),
                offset: sym_start,
            });
        }
        Ok(RawAtom {
            element,
            charge,
            bracket_h: Some(h),
            aromatic,
            offset,
        })
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}

fn build(atoms: Vec<RawAtom>, bonds: Vec<RawBond>, opts: ParseOptions) -> Result<MolecularGraph, SmilesError> {
    let mut seen = std::collections::HashSet::new();
    for b in &bonds {
        if b.a == b.b || !seen.insert((b.a.min(b.b), b.a.max(b.b))) {
            return Err(SmilesError::InvalidBond { offset: b.offset });
        }
    }
    let mut bonds: Vec<Bond> = bonds
        .iter()
        .map(|b| {
            let order = b.order.unwrap_or(if atoms[b.a].aromatic && atoms[b.b].aromatic {
                BondOrder::Aromatic
            } else {
                BondOrder::Single
            });
            Bond {
                begin: b.a.min(b.b),
                end: b.a.max(b.b),
                order,
                in_ring: false,
            }
        })
        .collect();
    let mut atoms = atoms;

    let adj = adjacency(atoms.len(), &bonds);
    let frags = fragments(atoms.len(), &adj);
    if frags.len() > 1 && opts.keep_largest_fragment {
        let heavy = |f: &Vec<usize>| f.iter().filter(|&&i| atoms[i].element != Element::H).count();
        // first fragment wins ties
        let mut best = &frags[0];
        for f in &frags[1..] {
            if heavy(f) > heavy(best) {
                best = f;
            }
        }
        log::warn!(
            "multi-fragment SMILES: keeping largest of {} fragments ({} atoms)",
            frags.len(),
            best.len()
        );
        let mut remap = vec![usize::MAX; atoms.len()];
        for (new, &old) in best.iter().enumerate() {
            remap[old] = new;
        }
        atoms = best.iter().map(|&i| atoms[i].clone()).collect();
        bonds = bonds
            .into_iter()
            .filter(|b| remap[b.begin] != usize::MAX)
            .map(|b| Bond {
                begin: remap[b.begin],
                end: remap[b.end],
                ..b
            })
            .collect();
    }

    let adj = adjacency(atoms.len(), &bonds);
    let ring_list = rings::sssr(atoms.len(), &adj, bonds.len());
    let ring_bonds = rings::ring_bond_flags(&ring_list, &adj, bonds.len());
    let mut atom_in_ring = vec![false; atoms.len()];
    for r in &ring_list {
        for &a in r {
            atom_in_ring[a] = true;
        }
    }
    for (b, flag) in bonds.iter_mut().zip(&ring_bonds) {
        b.in_ring = *flag;
        if b.order == BondOrder::Aromatic && !b.in_ring {
            b.order = BondOrder::Single;
        }
    }
    for (i, a) in atoms.iter().enumerate() {
        if a.aromatic && !atom_in_ring[i] {
            return Err(SmilesError::AromaticOutsideRing { offset: a.offset });
        }
    }

    let mut out_atoms = Vec::with_capacity(atoms.len());
    for (i, a) in atoms.iter().enumerate() {
        let bond_sum: u8 = adj[i].iter().map(|&(_, b)| bonds[b].order.valence()).sum();
        let (explicit_h, implicit_h) = match a.bracket_h {
            Some(h) => (h, 0),
            None => {
                let h = default_implicit_h(a.element, a.aromatic, bond_sum)
                    .ok_or(SmilesError::ValenceOverflow { atom: i, offset: a.offset })?;
                (0, h)
            }
        };
        out_atoms.push(Atom {
            element: a.element,
            formal_charge: a.charge,
            explicit_h,
            implicit_h,
            aromatic: a.aromatic,
            in_ring: atom_in_ring[i],
            degree: adj[i].len() as u8,
        });
    }

    rings::perceive_kekule_aromaticity(&mut out_atoms, &mut bonds, &ring_list, &adj);
    Ok(MolecularGraph {
        atoms: out_atoms,
        bonds,
        rings: ring_list,
        adjacency: adj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ethanol() {
        let g = parse_smiles("CCO").unwrap();
        assert_eq!(g.num_atoms(), 3);
        assert_eq!(g.num_bonds(), 2);
        assert!(g.bonds().iter().all(|b| b.order == BondOrder::Single));
        assert!(g.rings().is_empty());
        let h: Vec<u8> = g.atoms().iter().map(|a| a.total_h()).collect();
        assert_eq!(h, vec![3, 2, 1]);
    }

    #[test]
    fn benzene() {
        let g = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(g.num_atoms(), 6);
        assert!(g.atoms().iter().all(|a| a.aromatic && a.in_ring && a.total_h() == 1));
        assert_eq!(g.num_bonds(), 6);
        assert!(g.bonds().iter().all(|b| b.order == BondOrder::Aromatic));
        assert_eq!(g.rings().len(), 1);
        assert_eq!(g.rings()[0].len(), 6);
    }

    #[test]
    fn kekule_benzene_is_aromatized() {
        let g = parse_smiles("C1=CC=CC=C1").unwrap();
        assert!(g.atoms().iter().all(|a| a.aromatic));
        assert!(g.bonds().iter().all(|b| b.order == BondOrder::Aromatic));
    }

    #[test]
    fn kekule_pyrrole_and_furan() {
        let g = parse_smiles("C1=CNC=C1").unwrap();
        assert!(g.atoms().iter().all(|a| a.aromatic));
        assert_eq!(g.atoms()[2].total_h(), 1);
        let f = parse_smiles("C1=COC=C1").unwrap();
        assert!(f.atoms().iter().all(|a| a.aromatic));
        // cyclopentadiene is not aromatic
        let c = parse_smiles("C1=CCC=C1").unwrap();
        assert!(c.atoms().iter().all(|a| !a.aromatic));
    }

    #[test]
    fn unclosed_ring() {
        assert_eq!(
            parse_smiles("C1CC"),
            Err(SmilesError::UnclosedRing { digit: 1, offset: 1 })
        );
    }

    #[test]
    fn parentheses() {
        assert!(matches!(parse_smiles("CC(C"), Err(SmilesError::UnbalancedParens { offset: 2 })));
        assert!(matches!(parse_smiles("CC)C"), Err(SmilesError::UnbalancedParens { offset: 2 })));
    }

    #[test]
    fn unknown_element() {
        assert!(matches!(parse_smiles("CX"), Err(SmilesError::UnknownElement { offset: 1, .. })));
        assert!(matches!(parse_smiles("C[Xy]"), Err(SmilesError::UnknownElement { offset: 2, .. })));
    }

    #[test]
    fn valence_overflow() {
        assert!(matches!(
            parse_smiles("CC(C)(C)(C)C"),
            Err(SmilesError::ValenceOverflow { atom: 1, offset: 1 })
        ));
        assert!(matches!(parse_smiles("O=O=O"), Err(SmilesError::ValenceOverflow { .. })));
    }

    #[test]
    fn bracket_atoms() {
        let g = parse_smiles("C[NH3+]").unwrap();
        let n = &g.atoms()[1];
        assert_eq!(n.formal_charge, 1);
        assert_eq!(n.explicit_h, 3);
        assert_eq!(n.implicit_h, 0);
        let g = parse_smiles("[13CH4]").unwrap();
        assert_eq!(g.atoms()[0].total_h(), 4);
        let g = parse_smiles("C[C@@H](O)CC").unwrap();
        assert_eq!(g.atoms()[1].total_h(), 1);
        let g = parse_smiles("[O-2]").unwrap();
        assert_eq!(g.atoms()[0].formal_charge, -2);
        let g = parse_smiles("[Fe++]").unwrap();
        assert_eq!(g.atoms()[0].formal_charge, 2);
        let g = parse_smiles("c1cc[se]c1").unwrap();
        assert!(g.atoms()[3].aromatic);
    }

    #[test]
    fn stereo_bonds_are_single() {
        let g = parse_smiles("F/C=C/F").unwrap();
        assert_eq!(g.bonds()[0].order, BondOrder::Single);
        assert_eq!(g.bonds()[1].order, BondOrder::Double);
    }

    #[test]
    fn two_digit_ring_closures() {
        let a = parse_smiles("C%12CCCCC%12").unwrap();
        assert_eq!(a.rings().len(), 1);
        assert!(parse_smiles("C%1CC").is_err());
    }

    #[test]
    fn ring_bond_order_on_either_side() {
        let a = parse_smiles("C=1CCCCC1").unwrap();
        let b = parse_smiles("C1CCCCC=1").unwrap();
        assert_eq!(a.bonds().iter().filter(|b| b.order == BondOrder::Double).count(), 1);
        assert_eq!(b.bonds().iter().filter(|b| b.order == BondOrder::Double).count(), 1);
        assert!(matches!(parse_smiles("C=1CCCCC#1"), Err(SmilesError::RingBondConflict { .. })));
    }

    #[test]
    fn largest_fragment_kept() {
        let g = parse_smiles("[Na+].CCCC(=O)[O-]").unwrap();
        assert_eq!(g.num_atoms(), 6);
        let all = parse_smiles_with(
            "[Na+].CCCC(=O)[O-]",
            ParseOptions {
                keep_largest_fragment: false,
            },
        )
        .unwrap();
        assert_eq!(all.num_atoms(), 7);
        assert_eq!(all.fragment_count(), 2);
    }

    #[test]
    fn misc_errors() {
        assert_eq!(parse_smiles(""), Err(SmilesError::Empty));
        assert!(matches!(parse_smiles("C=("), Err(SmilesError::UnexpectedChar { .. })));
        assert!(matches!(parse_smiles("CC="), Err(SmilesError::DanglingBond { .. })));
        assert!(matches!(parse_smiles("C11"), Err(SmilesError::InvalidBond { .. })));
        assert!(matches!(parse_smiles("cc"), Err(SmilesError::AromaticOutsideRing { .. })));
        assert!(matches!(parse_smiles("C[CH2"), Err(SmilesError::UnexpectedChar { .. } | SmilesError::UnterminatedBracket { .. })));
        assert!(matches!(parse_smiles("Cé"), Err(SmilesError::NonAscii { offset: 1 })));
    }

    #[test]
    fn biphenyl_link_is_single() {
        let g = parse_smiles("c1ccccc1c1ccccc1").unwrap();
        let link = g.bonds().iter().filter(|b| !b.in_ring).count();
        assert_eq!(link, 1);
        assert!(g.bonds().iter().filter(|b| !b.in_ring).all(|b| b.order == BondOrder::Single));
    }

    #[test]
    fn two_letter_organic_atoms() {
        let g = parse_smiles("ClCC(Br)c1ccccc1").unwrap();
        let syms: Vec<&str> = g.atoms().iter().map(|a| a.element.symbol()).collect();
        assert_eq!(&syms[..4], &["Cl", "C", "C", "Br"]);
        assert_eq!(g.atoms()[0].implicit_h, 0);
    }
}
