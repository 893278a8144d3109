//! SMILES reader covering the organic subset, bracket atoms, branches, ring
//! closures (including `%nn`) and disconnected components. Stereo marks are
//! accepted and ignored.

use std::collections::HashMap;

use super::{by_symbol, BondOrder, ChemAtom, ChemBond, ChemGraph};
use crate::{Error, Result};

const ORGANIC: &[&str] = &["Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I"];
const AROMATIC_ORGANIC: &[&str] = &["b", "c", "n", "o", "p", "s"];

struct Reader<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(
            format!("SMILES `{}`", self.src),
            format!("{} at offset {}", msg.into(), self.pos),
        )
    }

    fn number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        (self.pos > start).then(|| self.src[start..self.pos].parse().unwrap())
    }
}

pub fn parse_smiles(src: &str) -> Result<ChemGraph> {
    let src = src.trim();
    let mut r = Reader {
        src,
        bytes: src.as_bytes(),
        pos: 0,
    };
    if src.is_empty() {
        return Err(r.err("empty string"));
    }
    let mut g = ChemGraph::default();
    let mut prev: Option<usize> = None;
    let mut pending: Option<BondOrder> = None;
    let mut branches: Vec<usize> = Vec::new();
    let mut rings: HashMap<u32, (usize, Option<BondOrder>)> = HashMap::new();

    while let Some(c) = r.peek() {
        match c {
            b'(' => {
                let p = prev.ok_or_else(|| r.err("branch without a preceding atom"))?;
                branches.push(p);
                r.pos += 1;
            }
            b')' => {
                prev = Some(branches.pop().ok_or_else(|| r.err("unbalanced `)`"))?);
                if pending.is_some() {
                    return Err(r.err("bond symbol before `)`"));
                }
                r.pos += 1;
            }
            b'-' | b'/' | b'\\' => {
                pending = Some(BondOrder::Single);
                r.pos += 1;
            }
            b'=' => {
                pending = Some(BondOrder::Double);
                r.pos += 1;
            }
            b'#' => {
                pending = Some(BondOrder::Triple);
                r.pos += 1;
            }
            b':' => {
                pending = Some(BondOrder::Aromatic);
                r.pos += 1;
            }
            b'$' => return Err(r.err("quadruple bonds are not supported")),
            b'.' => {
                if pending.is_some() {
                    return Err(r.err("bond symbol before `.`"));
                }
                prev = None;
                r.pos += 1;
            }
            b'0'..=b'9' | b'%' => {
                let atom = prev.ok_or_else(|| r.err("ring bond without an atom"))?;
                let label = if c == b'%' {
                    r.pos += 1;
                    let start = r.pos;
                    if r.bytes.len() < start + 2 || !r.bytes[start..start + 2].iter().all(u8::is_ascii_digit) {
                        return Err(r.err("`%` must be followed by two digits"));
                    }
                    r.pos += 2;
                    src[start..start + 2].parse().unwrap()
                } else {
                    r.pos += 1;
                    (c - b'0') as u32
                };
                let order = pending.take();
                match rings.remove(&label) {
                    Some((other, open_order)) => {
                        if other == atom {
                            return Err(r.err("ring closure onto the same atom"));
                        }
                        if g.bond_between(other, atom).is_some() {
                            return Err(r.err("ring closure duplicates an existing bond"));
                        }
                        let order = match (open_order, order) {
                            (Some(a), Some(b)) if a != b => {
                                return Err(r.err("conflicting ring-closure bond orders"))
                            }
                            (Some(a), _) | (None, Some(a)) => a,
                            (None, None) => default_order(&g, other, atom),
                        };
                        g.bonds.push(ChemBond {
                            a: other,
                            b: atom,
                            order,
                        });
                    }
                    None => {
                        rings.insert(label, (atom, order));
                    }
                }
            }
            _ => {
                let atom = read_atom(&mut r)?;
                g.atoms.push(atom);
                let idx = g.atoms.len() - 1;
                if let Some(p) = prev {
                    let order = pending.take().unwrap_or_else(|| default_order(&g, p, idx));
                    g.bonds.push(ChemBond { a: p, b: idx, order });
                } else if pending.is_some() {
                    return Err(r.err("bond symbol without a preceding atom"));
                }
                prev = Some(idx);
            }
        }
    }
    if pending.is_some() {
        return Err(r.err("dangling bond symbol"));
    }
    if !branches.is_empty() {
        return Err(r.err("unclosed branch"));
    }
    if let Some(label) = rings.keys().next() {
        return Err(r.err(format!("unclosed ring bond {label}")));
    }
    if g.atoms.is_empty() {
        return Err(r.err("no atoms"));
    }
    let mut has_aromatic_bond = vec![false; g.atoms.len()];
    for b in &g.bonds {
        if b.order == BondOrder::Aromatic {
            has_aromatic_bond[b.a] = true;
            has_aromatic_bond[b.b] = true;
        }
    }
    if g.atoms.iter().zip(&has_aromatic_bond).any(|(a, &h)| a.aromatic && !a.bracket && !h) {
        return Err(r.err("aromatic atom outside a ring"));
    }
    // implicit bonds between two aromatic rings (biphenyl written without `-`)
    let ring_bonds: std::collections::HashSet<(usize, usize)> = g
        .rings()
        .iter()
        .flat_map(|ring| {
            (0..ring.len()).map(move |i| {
                let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
                (a.min(b), a.max(b))
            })
        })
        .collect();
    for b in g.bonds.iter_mut() {
        if b.order == BondOrder::Aromatic && !ring_bonds.contains(&(b.a.min(b.b), b.a.max(b.b))) {
            b.order = BondOrder::Single;
        }
    }
    g.assign_implicit_hydrogens();
    g.perceive_aromaticity();
    Ok(g)
}

fn default_order(g: &ChemGraph, a: usize, b: usize) -> BondOrder {
    if g.atoms[a].aromatic && g.atoms[b].aromatic {
        BondOrder::Aromatic
    } else {
        BondOrder::Single
    }
}

fn read_atom(r: &mut Reader<'_>) -> Result<ChemAtom> {
    let rest = &r.src[r.pos..];
    if rest.starts_with('[') {
        return read_bracket(r);
    }
    for sym in ORGANIC {
        if rest.starts_with(sym) {
            r.pos += sym.len();
            let el = by_symbol(sym).expect("organic subset is in the element table");
            return Ok(ChemAtom {
                number: el.number,
                charge: 0,
                explicit_h: 0,
                implicit_h: 0,
                aromatic: false,
                bracket: false,
            });
        }
    }
    for sym in AROMATIC_ORGANIC {
        if rest.starts_with(sym) {
            r.pos += sym.len();
            let el = by_symbol(&sym.to_uppercase()).expect("aromatic subset is in the element table");
            return Ok(ChemAtom {
                number: el.number,
                charge: 0,
                explicit_h: 0,
                implicit_h: 0,
                aromatic: true,
                bracket: false,
            });
        }
    }
    Err(r.err(format!(
        "unexpected character `{}`",
        rest.chars().next().unwrap_or(' ')
    )))
}

fn read_bracket(r: &mut Reader<'_>) -> Result<ChemAtom> {
    r.pos += 1;
    let _isotope = r.number();
    let rest = &r.src[r.pos..];
    let mut chars = rest.chars();
    let first = chars.next().ok_or_else(|| r.err("unterminated bracket atom"))?;
    let (symbol, aromatic, len) = if first.is_ascii_lowercase() {
        let two: String = rest.chars().take(2).collect();
        if matches!(two.as_str(), "se" | "as" | "te") {
            (capitalise(&two), true, 2)
        } else {
            (first.to_ascii_uppercase().to_string(), true, 1)
        }
    } else if first.is_ascii_uppercase() {
        let second = chars.next().filter(|c| c.is_ascii_lowercase());
        match second {
            Some(s) if by_symbol(&format!("{first}{s}")).is_some() => (format!("{first}{s}"), false, 2),
            _ => (first.to_string(), false, 1),
        }
    } else {
        return Err(r.err("expected an element symbol"));
    };
    let el = by_symbol(&symbol).ok_or_else(|| r.err(format!("unknown element `{symbol}`")))?;
    r.pos += len;
    while r.peek() == Some(b'@') {
        r.pos += 1;
    }
    let mut explicit_h = 0u8;
    if r.peek() == Some(b'H') {
        r.pos += 1;
        explicit_h = r.number().map_or(1, |n| n as u8);
    }
    let mut charge = 0i8;
    while let Some(c @ (b'+' | b'-')) = r.peek() {
        r.pos += 1;
        let sign = if c == b'+' { 1 } else { -1 };
        match r.number() {
            Some(n) => charge += sign * n as i8,
            None => charge += sign,
        }
    }
    if r.peek() == Some(b':') {
        r.pos += 1;
        r.number();
    }
    if r.peek() != Some(b']') {
        return Err(r.err("unterminated bracket atom"));
    }
    r.pos += 1;
    Ok(ChemAtom {
        number: el.number,
        charge,
        explicit_h,
        implicit_h: 0,
        aromatic,
        bracket: true,
    })
}

fn capitalise(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}
