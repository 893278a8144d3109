//! Molecules, conformers, molecule pairs and evaluation splits.

mod conformer;
mod load;
mod sampling;
mod splits;
pub mod synthetic;

use std::sync::Arc;

use crate::chem::{self, ChemGraph, Hybridization};
use crate::{Error, Mat, Result};

pub use conformer::{generate_conformer, ConformerCache};
pub use load::{load_pair_dataset, DatasetFormat, LoadOptions, PairDataset};
pub use sampling::{pretrain_pair_count, sample_pair_indices, sample_pretrain_pairs};
pub use splits::{make_splits, scaffold_key, SplitScheme, SplitSpec};

const ELEMENT_SLOTS: [&str; 11] = ["C", "N", "O", "S", "F", "Cl", "Br", "I", "P", "B", "H"];

/// Width of the per-atom descriptor vector.
pub const ATOM_FEATURES: usize = ELEMENT_SLOTS.len() + 1 + 6 + 5 + 3 + 2 + 3;

/// A 2D molecular graph with per-atom descriptors.
#[derive(Clone, Debug)]
pub struct Molecule2D {
    pub id: String,
    /// N×F descriptor matrix.
    pub atom_features: Mat,
    /// Dense N×N 0/1 adjacency.
    pub adjacency: Mat,
    pub aromatic_flags: Vec<bool>,
    graph: Option<Arc<ChemGraph>>,
}

impl Molecule2D {
    /// Builds a molecule from raw arrays, validating shapes and adjacency.
    /// Molecules built this way carry no chemistry graph, so conformer
    /// generation and scaffold keys are unavailable for them.
    pub fn new(id: impl Into<String>, atom_features: Mat, adjacency: Mat, aromatic_flags: Vec<bool>) -> Result<Self> {
        let n = atom_features.rows();
        let id = id.into();
        if n == 0 {
            return Err(Error::Contract(format!("molecule {id} has no atoms")));
        }
        if adjacency.shape() != (n, n) || aromatic_flags.len() != n {
            return Err(Error::Contract(format!(
                "molecule {id}: adjacency {:?} and {} aromatic flags do not match {n} atoms",
                adjacency.shape(),
                aromatic_flags.len()
            )));
        }
        for i in 0..n {
            if adjacency.get(i, i) != 0.0 {
                return Err(Error::Contract(format!("molecule {id}: self loop on atom {i}")));
            }
            for j in 0..n {
                let a = adjacency.get(i, j);
                if (a != 0.0 && a != 1.0) || a != adjacency.get(j, i) {
                    return Err(Error::Contract(format!("molecule {id}: adjacency is not symmetric 0/1")));
                }
            }
        }
        Ok(Molecule2D {
            id,
            atom_features,
            adjacency,
            aromatic_flags,
            graph: None,
        })
    }

    /// Parses a SMILES string. The id is the canonical SMILES.
    pub fn from_smiles(smiles: &str) -> Result<Self> {
        let graph = chem::parse_smiles(smiles)?;
        let id = chem::write_smiles(&graph);
        Ok(Self::from_graph(graph, id))
    }

    pub fn from_graph(graph: ChemGraph, id: impl Into<String>) -> Self {
        let n = graph.len();
        let ring = graph.ring_membership();
        let nb = graph.neighbors();
        let mut features = Mat::zeros(n, ATOM_FEATURES);
        let mut adjacency = Mat::zeros(n, n);
        for b in &graph.bonds {
            adjacency.set(b.a, b.b, 1.0);
            adjacency.set(b.b, b.a, 1.0);
        }
        for (i, atom) in graph.atoms.iter().enumerate() {
            let row = features.row_mut(i);
            let symbol = atom.element().symbol;
            let slot = ELEMENT_SLOTS.iter().position(|&s| s == symbol).unwrap_or(ELEMENT_SLOTS.len());
            row[slot] = 1.0;
            let mut off = ELEMENT_SLOTS.len() + 1;
            row[off + nb[i].len().min(5)] = 1.0;
            off += 6;
            row[off + (atom.total_h() as usize).min(4)] = 1.0;
            off += 5;
            row[off + (atom.charge.clamp(-1, 1) + 1) as usize] = 1.0;
            off += 3;
            row[off] = f64::from(u8::from(atom.aromatic));
            row[off + 1] = f64::from(u8::from(ring[i]));
            off += 2;
            let hyb = match graph.hybridization(i) {
                Hybridization::Sp => 0,
                Hybridization::Sp2 => 1,
                Hybridization::Sp3 => 2,
            };
            row[off + hyb] = 1.0;
        }
        let aromatic_flags = graph.atoms.iter().map(|a| a.aromatic).collect();
        Molecule2D {
            id: id.into(),
            atom_features: features,
            adjacency,
            aromatic_flags,
            graph: Some(Arc::new(graph)),
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.atom_features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.atom_features.cols()
    }

    pub fn graph(&self) -> Option<&ChemGraph> {
        self.graph.as_deref()
    }

    /// Element symbols, or `X` for molecules without a chemistry graph.
    pub fn symbols(&self) -> Vec<&'static str> {
        match &self.graph {
            Some(g) => g.atoms.iter().map(|a| a.element().symbol).collect(),
            None => vec!["X"; self.n_atoms()],
        }
    }

    /// Directed edge list `(src, dst)` in both directions, ordered by source.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let n = self.n_atoms();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if self.adjacency.get(i, j) != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// The same molecule with atoms reordered so that new atom `k` is old
    /// atom `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n_atoms();
        assert_eq!(perm.len(), n, "permutation length");
        let mut adjacency = Mat::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                adjacency.set(a, b, self.adjacency.get(perm[a], perm[b]));
            }
        }
        Molecule2D {
            id: self.id.clone(),
            atom_features: self.atom_features.select_rows(perm),
            adjacency,
            aromatic_flags: perm.iter().map(|&p| self.aromatic_flags[p]).collect(),
            graph: self.graph.as_ref().map(|g| Arc::new(g.induced_subgraph(perm))),
        }
    }
}

/// One molecule with 3D coordinates in Ångström.
#[derive(Clone, Debug)]
pub struct Conformer3D {
    pub molecule: Molecule2D,
    /// N×3 coordinates.
    pub coords: Mat,
}

impl Conformer3D {
    pub fn new(molecule: Molecule2D, coords: Mat) -> Result<Self> {
        if coords.shape() != (molecule.n_atoms(), 3) {
            return Err(Error::Contract(format!(
                "conformer of {}: coordinates {:?} for {} atoms",
                molecule.id,
                coords.shape(),
                molecule.n_atoms()
            )));
        }
        if !coords.is_finite() {
            return Err(Error::Contract(format!("conformer of {} has non-finite coordinates", molecule.id)));
        }
        Ok(Conformer3D { molecule, coords })
    }

    pub fn n_atoms(&self) -> usize {
        self.coords.rows()
    }

    pub fn id(&self) -> &str {
        &self.molecule.id
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Conformer3D {
            molecule: self.molecule.permuted(perm),
            coords: self.coords.select_rows(perm),
        }
    }
}

/// Two molecules with roles assigned by radius, plus an optional label.
#[derive(Clone, Debug)]
pub struct MoleculePair {
    pub larger: Conformer3D,
    pub smaller: Conformer3D,
    pub label: Option<f64>,
    pub task_id: String,
}

impl MoleculePair {
    /// Builds a pair, assigning roles with [`assign_roles`].
    pub fn new(a: Conformer3D, b: Conformer3D, label: Option<f64>, task_id: impl Into<String>) -> Self {
        let (larger, smaller) = assign_roles(a, b);
        MoleculePair {
            larger,
            smaller,
            label,
            task_id: task_id.into(),
        }
    }
}

/// Orders two conformers by radius. Exact ties go to the molecule with more
/// atoms, then to the lexicographically smaller id.
pub fn assign_roles(a: Conformer3D, b: Conformer3D) -> (Conformer3D, Conformer3D) {
    use std::cmp::Ordering;
    let ra = crate::geometry::molecule_radius(&a);
    let rb = crate::geometry::molecule_radius(&b);
    let a_first = match ra.partial_cmp(&rb).unwrap_or(Ordering::Equal) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match a.n_atoms().cmp(&b.n_atoms()) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => a.id() <= b.id(),
        },
    };
    if a_first {
        (a, b)
    } else {
        (b, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, xs: &[f64]) -> Conformer3D {
        let n = xs.len();
        let mol = Molecule2D::new(id, Mat::zeros(n, 2), Mat::zeros(n, n), vec![false; n]).unwrap();
        let coords = Mat::from_vec(n, 3, xs.iter().flat_map(|&x| [x, 0.0, 0.0]).collect());
        Conformer3D::new(mol, coords).unwrap()
    }

    #[test]
    fn features_have_documented_width() {
        let m = Molecule2D::from_smiles("OCc1ccccc1").unwrap();
        assert_eq!(m.atom_features.shape(), (8, ATOM_FEATURES));
        assert_eq!(ATOM_FEATURES, 31);
        for i in 0..m.n_atoms() {
            let onehot: f64 = m.atom_features.row(i)[..12].iter().sum();
            assert_eq!(onehot, 1.0);
        }
        assert_eq!(m.aromatic_flags.iter().filter(|&&a| a).count(), 6);
    }

    #[test]
    fn adjacency_is_symmetric_binary() {
        let m = Molecule2D::from_smiles("CC(=O)Nc1ccc(O)cc1").unwrap();
        let n = m.n_atoms();
        for i in 0..n {
            assert_eq!(m.adjacency.get(i, i), 0.0);
            for j in 0..n {
                assert_eq!(m.adjacency.get(i, j), m.adjacency.get(j, i));
            }
        }
        assert_eq!(m.directed_edges().len(), 2 * 11);
    }

    #[test]
    fn invalid_arrays_are_rejected() {
        let mut adj = Mat::zeros(2, 2);
        adj.set(0, 1, 1.0);
        assert!(Molecule2D::new("x", Mat::zeros(2, 3), adj, vec![false; 2]).is_err());
        assert!(Molecule2D::new("x", Mat::zeros(0, 3), Mat::zeros(0, 0), vec![]).is_err());
    }

    #[test]
    fn roles_follow_radius_then_size_then_id() {
        let (l, _) = assign_roles(line("a", &[0.0, 2.0]), line("b", &[0.0, 4.0]));
        assert_eq!(l.id(), "b");
        let (l, _) = assign_roles(line("a", &[0.0, 1.0, 2.0]), line("b", &[0.0, 2.0]));
        assert_eq!(l.id(), "a");
        let (l, s) = assign_roles(line("z", &[0.0, 2.0]), line("y", &[5.0, 7.0]));
        assert_eq!((l.id(), s.id()), ("y", "z"));
    }
}
