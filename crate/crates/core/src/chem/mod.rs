//! Cheminformatics adapter.
//!
//! Everything toolkit-specific lives behind this module: SMILES and molfile
//! parsing, aromaticity perception, Bemis–Murcko scaffolds and
//! distance-geometry conformer embedding. The rest of the crate only sees
//! [`ChemGraph`] through [`crate::data::Molecule2D`].

mod elements;
mod embed;
mod sdf;
mod smiles;
mod writer;

use std::collections::{BTreeSet, VecDeque};

pub use elements::{by_number, by_symbol, ElementData, ELEMENTS};
pub use embed::embed_conformer;
pub use sdf::{parse_sdf, SdfRecord};
pub use smiles::parse_smiles;
pub use writer::write_smiles;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to the valence sum (aromatic bonds count as one).
    pub fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChemAtom {
    pub number: u8,
    pub charge: i8,
    /// Hydrogens written inside a bracket atom.
    pub explicit_h: u8,
    /// Hydrogens implied by valence rules for organic-subset atoms.
    pub implicit_h: u8,
    pub aromatic: bool,
    pub bracket: bool,
}

impl ChemAtom {
    pub fn element(&self) -> &'static ElementData {
        by_number(self.number)
    }

    pub fn total_h(&self) -> u8 {
        self.explicit_h + self.implicit_h
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChemBond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hybridization {
    Sp,
    Sp2,
    Sp3,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChemGraph {
    pub atoms: Vec<ChemAtom>,
    pub bonds: Vec<ChemBond>,
}

impl ChemGraph {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Neighbour lists as `(atom, bond index)`.
    pub fn neighbors(&self) -> Vec<Vec<(usize, usize)>> {
        let mut nb = vec![Vec::new(); self.atoms.len()];
        for (i, b) in self.bonds.iter().enumerate() {
            nb[b.a].push((b.b, i));
            nb[b.b].push((b.a, i));
        }
        nb
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&ChemBond> {
        self.bonds
            .iter()
            .find(|x| (x.a == a && x.b == b) || (x.a == b && x.b == a))
    }

    /// Smallest cycle through every ring bond, deduplicated. Each ring is a
    /// path-ordered list of atoms.
    pub fn rings(&self) -> Vec<Vec<usize>> {
        let nb = self.neighbors();
        let mut seen = BTreeSet::new();
        let mut rings = Vec::new();
        for (bi, bond) in self.bonds.iter().enumerate() {
            if let Some(path) = shortest_path_avoiding(&nb, bond.b, bond.a, bi, usize::MAX) {
                let mut key = path.clone();
                key.sort_unstable();
                if seen.insert(key) {
                    rings.push(path);
                }
            }
        }
        rings
    }

    pub fn ring_membership(&self) -> Vec<bool> {
        let mut member = vec![false; self.atoms.len()];
        for ring in self.rings() {
            for a in ring {
                member[a] = true;
            }
        }
        member
    }

    pub fn hybridization(&self, i: usize) -> Hybridization {
        let atom = &self.atoms[i];
        let mut doubles = 0;
        let mut triple = false;
        for b in self.bonds.iter().filter(|b| b.a == i || b.b == i) {
            match b.order {
                BondOrder::Double => doubles += 1,
                BondOrder::Triple => triple = true,
                _ => {}
            }
        }
        if triple || doubles >= 2 {
            Hybridization::Sp
        } else if atom.aromatic || doubles == 1 {
            Hybridization::Sp2
        } else {
            Hybridization::Sp3
        }
    }

    /// Connected components as sorted atom lists.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let nb = self.neighbors();
        let mut comp = vec![usize::MAX; self.atoms.len()];
        let mut out = Vec::new();
        for s in 0..self.atoms.len() {
            if comp[s] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![s];
            comp[s] = id;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &(v, _) in &nb[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = id;
                        members.push(v);
                        q.push_back(v);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    /// Assigns implicit hydrogens to organic-subset atoms from their valence.
    pub(crate) fn assign_implicit_hydrogens(&mut self) {
        let mut sums = vec![0u8; self.atoms.len()];
        for b in &self.bonds {
            sums[b.a] += b.order.valence();
            sums[b.b] += b.order.valence();
        }
        for (atom, &sum) in self.atoms.iter_mut().zip(&sums) {
            if atom.bracket {
                atom.implicit_h = 0;
                continue;
            }
            let mut sum = sum;
            if atom.aromatic {
                match atom.element().symbol {
                    // pyrrole-type nitrogens must be written as [nH]
                    "N" => {
                        atom.implicit_h = 0;
                        continue;
                    }
                    "B" | "C" | "P" => sum += 1,
                    _ => {}
                }
            }
            atom.implicit_h = atom
                .element()
                .valences
                .iter()
                .find(|&&v| v >= sum)
                .map_or(0, |&v| v - sum);
        }
    }

    /// Marks 5–7 membered Hückel rings of a Kekulé structure as aromatic.
    pub(crate) fn perceive_aromaticity(&mut self) {
        let rings = self.rings();
        let mut changed = true;
        // fused systems may need a second pass once a neighbour ring is aromatic
        while changed {
            changed = false;
            for ring in &rings {
                if ring.len() < 5 || ring.len() > 7 {
                    continue;
                }
                if ring.iter().all(|&a| self.atoms[a].aromatic)
                    && ring_bonds(ring)
                        .iter()
                        .all(|&(a, b)| self.bond_between(a, b).map(|x| x.order) == Some(BondOrder::Aromatic))
                {
                    continue;
                }
                if let Some(pi) = self.ring_pi_electrons(ring) {
                    if pi % 4 == 2 {
                        for &a in ring {
                            self.atoms[a].aromatic = true;
                        }
                        for (a, b) in ring_bonds(ring) {
                            for bond in self.bonds.iter_mut() {
                                if (bond.a == a && bond.b == b) || (bond.a == b && bond.b == a) {
                                    bond.order = BondOrder::Aromatic;
                                }
                            }
                        }
                        changed = true;
                    }
                }
            }
        }
    }

    fn ring_pi_electrons(&self, ring: &[usize]) -> Option<u32> {
        let in_ring: BTreeSet<usize> = ring.iter().copied().collect();
        let mut total = 0;
        for &a in ring {
            let atom = &self.atoms[a];
            let sym = atom.element().symbol;
            if !matches!(sym, "C" | "N" | "O" | "S" | "P" | "B" | "Se") {
                return None;
            }
            let mut ring_double = false;
            let mut exo_double = false;
            let mut aromatic_bonds = 0;
            let mut degree = 0;
            for b in self.bonds.iter().filter(|b| b.a == a || b.b == a) {
                degree += 1;
                let other = if b.a == a { b.b } else { b.a };
                match b.order {
                    BondOrder::Double if in_ring.contains(&other) => ring_double = true,
                    BondOrder::Double => exo_double = true,
                    BondOrder::Aromatic => aromatic_bonds += 1,
                    BondOrder::Triple => return None,
                    BondOrder::Single => {}
                }
            }
            let h = atom.total_h() as usize;
            let pyridine_like = sym == "N" && degree + h == 2;
            let contribution = if ring_double
                || (atom.aromatic && aromatic_bonds >= 2 && (sym == "C" || pyridine_like))
            {
                1
            } else if exo_double {
                if sym == "C" {
                    0
                } else {
                    return None;
                }
            } else {
                match sym {
                    "N" | "P" if degree + h == 3 => 2,
                    "O" | "S" | "Se" => 2,
                    "C" if atom.charge == -1 => 2,
                    "C" if atom.charge == 1 => 0,
                    "B" => 0,
                    _ => return None,
                }
            };
            total += contribution;
        }
        Some(total)
    }
}

fn ring_bonds(ring: &[usize]) -> Vec<(usize, usize)> {
    (0..ring.len())
        .map(|i| (ring[i], ring[(i + 1) % ring.len()]))
        .collect()
}

/// Breadth-first shortest path from `from` to `to` that does not use bond
/// `skip_bond`, bounded by `max_len` atoms.
pub(crate) fn shortest_path_avoiding(
    nb: &[Vec<(usize, usize)>],
    from: usize,
    to: usize,
    skip_bond: usize,
    max_len: usize,
) -> Option<Vec<usize>> {
    let mut prev = vec![usize::MAX; nb.len()];
    let mut depth = vec![usize::MAX; nb.len()];
    depth[from] = 1;
    let mut q = VecDeque::from([from]);
    while let Some(u) = q.pop_front() {
        if u == to {
            let mut path = vec![to];
            let mut cur = to;
            while cur != from {
                cur = prev[cur];
                path.push(cur);
            }
            path.reverse();
            return Some(path);
        }
        if depth[u] >= max_len {
            continue;
        }
        for &(v, bi) in &nb[u] {
            if bi == skip_bond || depth[v] != usize::MAX {
                continue;
            }
            depth[v] = depth[u] + 1;
            prev[v] = u;
            q.push_back(v);
        }
    }
    None
}

/// Bemis–Murcko framework: ring systems plus linkers, side chains removed.
/// Acyclic molecules have an empty scaffold.
pub fn murcko_scaffold(graph: &ChemGraph) -> String {
    let member = graph.ring_membership();
    if !member.iter().any(|&m| m) {
        return String::new();
    }
    let nb = graph.neighbors();
    let mut alive = vec![true; graph.len()];
    loop {
        let mut removed = false;
        for i in 0..graph.len() {
            if !alive[i] || member[i] {
                continue;
            }
            let degree = nb[i].iter().filter(|(j, _)| alive[*j]).count();
            if degree <= 1 {
                alive[i] = false;
                removed = true;
            }
        }
        if !removed {
            break;
        }
    }
    let keep: Vec<usize> = (0..graph.len()).filter(|&i| alive[i]).collect();
    let sub = graph.induced_subgraph(&keep);
    write_smiles(&sub)
}

impl ChemGraph {
    /// Subgraph over `keep` (in that order). Hydrogen counts are adjusted so
    /// that atoms which lost neighbours stay chemically sensible.
    pub fn induced_subgraph(&self, keep: &[usize]) -> ChemGraph {
        let mut map = vec![usize::MAX; self.len()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut atoms: Vec<ChemAtom> = keep.iter().map(|&i| self.atoms[i].clone()).collect();
        let mut bonds = Vec::new();
        for b in &self.bonds {
            let (na, nb) = (map[b.a], map[b.b]);
            if na != usize::MAX && nb != usize::MAX {
                bonds.push(ChemBond {
                    a: na,
                    b: nb,
                    order: b.order,
                });
            } else if na != usize::MAX || nb != usize::MAX {
                let kept = if na != usize::MAX { na } else { nb };
                let atom = &mut atoms[kept];
                if atom.aromatic && atom.element().symbol == "N" {
                    atom.bracket = true;
                    atom.explicit_h = atom.explicit_h.max(1);
                }
            }
        }
        let mut g = ChemGraph { atoms, bonds };
        g.assign_implicit_hydrogens();
        g
    }
}
