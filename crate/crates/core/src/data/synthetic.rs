//! Random drug-like and solvent-like molecules with a smooth pairwise target,
//! for smoke tests and benchmarks.

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use rand::seq::index;
use rand::Rng;

use super::{generate_conformer, Conformer3D, Molecule2D, MoleculePair};
use crate::seeding::{self, stream};
use crate::{Error, Exec, Result};

const RINGS: &[&str] = &[
    "c1ccc(*)cc1",
    "c1ccc(*)nc1",
    "C1CCC(*)CC1",
    "C1CCC(*)C1",
    "c1cc(*)oc1",
    "c1ccc2cc(*)ccc2c1",
    "C1CC1(*)",
    "C1CCOC(*)C1",
];

fn tree_smiles<R: Rng + ?Sized>(rng: &mut R, atoms: usize) -> String {
    // Heavy-atom tree: each atom gets a parent with spare valence.
    let mut elem: Vec<&str> = Vec::with_capacity(atoms);
    let mut free: Vec<i32> = Vec::with_capacity(atoms);
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); atoms];
    for i in 0..atoms {
        let (e, valence) = match rng.gen_range(0..100) {
            0..=69 => ("C", 4),
            70..=82 => ("N", 3),
            83..=95 => ("O", 2),
            96..=97 => ("F", 1),
            _ => ("Cl", 1),
        };
        let (mut e, mut valence) = if i == 0 && valence == 1 { ("C", 4) } else { (e, valence) };
        if i > 0 {
            // Heteroatoms only bond to carbon.
            let open_for = |e: &str| (0..i).filter(|&p| free[p] > 0 && (e == "C" || elem[p] == "C")).collect::<Vec<_>>();
            let mut open = open_for(e);
            if open.is_empty() {
                (e, valence) = ("C", 4);
                open = open_for(e);
            }
            let Some(&parent) = open.get(rng.gen_range(0..open.len().max(1))) else {
                break;
            };
            free[parent] -= 1;
            children[parent].push(i);
        }
        elem.push(e);
        // The root keeps one bond free for a ring attachment.
        free.push(valence - 1);
    }
    fn write(i: usize, elem: &[&str], children: &[Vec<usize>], out: &mut String) {
        out.push_str(elem[i]);
        let kids = &children[i];
        for (k, &c) in kids.iter().enumerate() {
            if k + 1 < kids.len() {
                out.push('(');
                write(c, elem, children, out);
                out.push(')');
            } else {
                write(c, elem, children, out);
            }
        }
    }
    let mut out = String::new();
    write(0, &elem, &children, &mut out);
    out
}

/// A random SMILES: an optional ring system carrying an acyclic substituent
/// with the given number of heavy atoms.
pub fn random_smiles<R: Rng + ?Sized>(rng: &mut R, substituent: RangeInclusive<usize>, ring_probability: f64) -> String {
    let atoms = rng.gen_range(substituent);
    let tree = tree_smiles(rng, atoms.max(1));
    if rng.gen_bool(ring_probability) {
        RINGS[rng.gen_range(0..RINGS.len())].replace('*', &tree)
    } else {
        tree
    }
}

/// `count` distinct molecules with conformers.
pub fn synthetic_molecules(
    count: usize,
    substituent: RangeInclusive<usize>,
    ring_probability: f64,
    seed: u64,
    exec: Exec,
) -> Result<Vec<Conformer3D>> {
    let mut rng = seeding::rng_from(&[seed, stream::PAIR_SAMPLING, 0x5EED]);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        let mut batch = Vec::new();
        while batch.len() < count - out.len() {
            attempts += 1;
            if attempts > 200 * count.max(1) {
                return Err(Error::Dataset(format!("could only generate {} distinct molecules", out.len())));
            }
            let mol = Molecule2D::from_smiles(&random_smiles(&mut rng, substituent.clone(), ring_probability))?;
            if seen.insert(mol.id.clone()) {
                batch.push(mol);
            }
        }
        // Molecules the embedder cannot place are dropped and replaced.
        let confs = exec.map(&batch, |_, m| generate_conformer(m, seeding::derive_seed(&[seed, stream::CONFORMER])));
        out.extend(confs.into_iter().filter_map(|c| c.ok()));
    }
    Ok(out)
}

/// A smooth pairwise target built from composition counts of both partners.
pub fn synthetic_label(pair: &MoleculePair) -> f64 {
    let polar = |m: &Molecule2D| m.atom_features.data().chunks(m.n_features()).filter(|r| r[1] + r[2] > 0.0).count() as f64;
    let aromatic = |m: &Molecule2D| m.aromatic_flags.iter().filter(|&&a| a).count() as f64;
    let (a, b) = (&pair.larger.molecule, &pair.smaller.molecule);
    let (pa, pb) = (polar(a), polar(b));
    let mixed = if pb > 0.0 { aromatic(a) } else { 0.0 };
    -0.35 * pa * (1.0 + 0.5 * pb) + 0.12 * a.n_atoms() as f64 + 0.05 * b.n_atoms() as f64 - 0.2 * mixed
}

/// `n_pairs` distinct pairs drawn from the product of two molecule sets,
/// optionally labelled with [`synthetic_label`].
pub fn synthetic_pairs(
    larger: &[Conformer3D],
    smaller: &[Conformer3D],
    n_pairs: usize,
    labelled: bool,
    seed: u64,
) -> Result<Vec<MoleculePair>> {
    let total = larger.len() * smaller.len();
    if n_pairs > total {
        return Err(Error::Dataset(format!("{n_pairs} pairs requested from only {total} combinations")));
    }
    let mut rng = seeding::rng_from(&[seed, stream::PAIR_SAMPLING]);
    let mut picks = index::sample(&mut rng, total, n_pairs).into_vec();
    picks.sort_unstable();
    Ok(picks
        .into_iter()
        .map(|k| {
            let mut p = MoleculePair::new(larger[k / smaller.len()].clone(), smaller[k % smaller.len()].clone(), None, "synthetic");
            if labelled {
                p.label = Some(synthetic_label(&p));
            }
            p
        })
        .collect())
}

/// A labelled solute/solvent style dataset: larger molecules carry rings,
/// smaller ones are short chains.
pub fn synthetic_dataset(n_larger: usize, n_smaller: usize, n_pairs: usize, seed: u64, exec: Exec) -> Result<Vec<MoleculePair>> {
    let larger = synthetic_molecules(n_larger, 1..=5, 0.85, seeding::derive_seed(&[seed, 1]), exec)?;
    let smaller = synthetic_molecules(n_smaller, 2..=5, 0.0, seeding::derive_seed(&[seed, 2]), exec)?;
    synthetic_pairs(&larger, &smaller, n_pairs, true, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_smiles_always_parse() {
        let mut rng = seeding::rng_from(&[3]);
        for _ in 0..500 {
            let s = random_smiles(&mut rng, 1..=8, 0.5);
            Molecule2D::from_smiles(&s).unwrap_or_else(|e| panic!("{s}: {e}"));
        }
    }

    #[test]
    fn dataset_is_deterministic_and_labelled() {
        let a = synthetic_dataset(6, 5, 20, 9, Exec::Sequential).unwrap();
        let b = synthetic_dataset(6, 5, 20, 9, Exec::Sequential).unwrap();
        assert_eq!(a.len(), 20);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.larger.coords, y.larger.coords);
            assert_eq!(x.label, y.label);
            assert!(x.label.unwrap().is_finite());
        }
    }
}
