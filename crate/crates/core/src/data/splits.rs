use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Molecule2D, MoleculePair};
use crate::chem;
use crate::seeding::{self, stream};
use crate::{Error, Result};

const FOLDS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitScheme {
    Kfold5,
    Molecule,
    Scaffold,
}

impl std::str::FromStr for SplitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kfold5" => Ok(SplitScheme::Kfold5),
            "molecule" => Ok(SplitScheme::Molecule),
            "scaffold" => Ok(SplitScheme::Scaffold),
            other => Err(Error::config("split", format!("unknown scheme `{other}`"))),
        }
    }
}

impl std::fmt::Display for SplitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitScheme::Kfold5 => "kfold5",
            SplitScheme::Molecule => "molecule",
            SplitScheme::Scaffold => "scaffold",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub scheme: SplitScheme,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub fold_index: Option<usize>,
    pub seed: u64,
    /// Molecules held out for validation and for testing (molecule and
    /// scaffold schemes only).
    pub valid_molecules: BTreeSet<String>,
    pub test_molecules: BTreeSet<String>,
}

/// Bemis–Murcko scaffold string used to group molecules.
pub fn scaffold_key(mol: &Molecule2D) -> Result<String> {
    let graph = mol
        .graph()
        .ok_or_else(|| Error::Split(format!("no scaffold for {}: molecule has no chemistry graph", mol.id)))?;
    Ok(chem::murcko_scaffold(graph))
}

/// Produces evaluation splits over pair indices.
///
/// `kfold5` returns five splits. Fold `f` is the test set; half of fold
/// `f + 1` (mod 5) is the validation set and training uses the rest, so the
/// three lists stay disjoint while every pair is tested exactly once across
/// the folds. `molecule` and `scaffold` return one split: molecules (or
/// scaffold groups) are divided 60/20/20 into old, validation-new and
/// test-new sets; pairs made only of old molecules train, pairs touching a
/// test-new molecule test and the remainder validate.
pub fn make_splits(dataset: &[MoleculePair], scheme: SplitScheme, seed: u64) -> Result<Vec<SplitSpec>> {
    if dataset.is_empty() {
        return Err(Error::Split("dataset is empty".into()));
    }
    let mut rng = seeding::rng_from(&[seed, stream::SPLIT]);
    match scheme {
        SplitScheme::Kfold5 => {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(&mut rng);
            let folds: Vec<Vec<usize>> = (0..FOLDS)
                .map(|f| {
                    let lo = f * order.len() / FOLDS;
                    let hi = (f + 1) * order.len() / FOLDS;
                    order[lo..hi].to_vec()
                })
                .collect();
            Ok((0..FOLDS)
                .map(|f| {
                    let next = &folds[(f + 1) % FOLDS];
                    let half = next.len() / 2;
                    let mut test = folds[f].clone();
                    let mut valid = next[..half].to_vec();
                    let mut train: Vec<usize> = folds
                        .iter()
                        .enumerate()
                        .filter(|&(g, _)| g != f && g != (f + 1) % FOLDS)
                        .flat_map(|(_, fold)| fold.iter().copied())
                        .chain(next[half..].iter().copied())
                        .collect();
                    train.sort_unstable();
                    valid.sort_unstable();
                    test.sort_unstable();
                    SplitSpec {
                        scheme,
                        train,
                        valid,
                        test,
                        fold_index: Some(f),
                        seed,
                        valid_molecules: BTreeSet::new(),
                        test_molecules: BTreeSet::new(),
                    }
                })
                .collect())
        }
        SplitScheme::Molecule | SplitScheme::Scaffold => {
            let mut molecules: BTreeMap<&str, &Molecule2D> = BTreeMap::new();
            for p in dataset {
                molecules.insert(p.larger.id(), &p.larger.molecule);
                molecules.insert(p.smaller.id(), &p.smaller.molecule);
            }
            let mut groups: Vec<Vec<&str>> = if scheme == SplitScheme::Molecule {
                molecules.keys().map(|&id| vec![id]).collect()
            } else {
                let mut by_scaffold: BTreeMap<String, Vec<&str>> = BTreeMap::new();
                for (&id, mol) in &molecules {
                    by_scaffold.entry(scaffold_key(mol)?).or_default().push(id);
                }
                by_scaffold.into_values().collect()
            };
            groups.shuffle(&mut rng);
            if scheme == SplitScheme::Scaffold {
                groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
            }
            let total = molecules.len();
            let old_target = (0.6 * total as f64).round() as usize;
            let valid_target = (0.2 * total as f64).round() as usize;
            let (mut old, mut valid_new, mut test_new) = (BTreeSet::new(), BTreeSet::new(), BTreeSet::new());
            for g in groups {
                let dest = if old.len() + g.len() <= old_target || old.is_empty() {
                    &mut old
                } else if valid_new.len() + g.len() <= valid_target || valid_new.is_empty() {
                    &mut valid_new
                } else {
                    &mut test_new
                };
                dest.extend(g);
            }
            let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
            for (i, p) in dataset.iter().enumerate() {
                let (a, b) = (p.larger.id(), p.smaller.id());
                if test_new.contains(a) || test_new.contains(b) {
                    test.push(i);
                } else if old.contains(a) && old.contains(b) {
                    train.push(i);
                } else {
                    valid.push(i);
                }
            }
            Ok(vec![SplitSpec {
                scheme,
                train,
                valid,
                test,
                fold_index: None,
                seed,
                valid_molecules: valid_new.iter().map(|s| s.to_string()).collect(),
                test_molecules: test_new.iter().map(|s| s.to_string()).collect(),
            }])
        }
    }
}
