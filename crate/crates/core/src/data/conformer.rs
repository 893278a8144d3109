use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{Conformer3D, Molecule2D};
use crate::chem;
use crate::{Error, Mat, Result};

fn round6(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Embeds a conformer for `mol` by distance geometry. Coordinates are
/// centred and rounded to 6 decimals so that a conformer read back from the
/// cache is identical to a freshly generated one.
pub fn generate_conformer(mol: &Molecule2D, seed: u64) -> Result<Conformer3D> {
    let graph = mol.graph().ok_or_else(|| Error::ConformerGeneration {
        id: mol.id.clone(),
        msg: "molecule has no chemistry graph".into(),
    })?;
    let coords = chem::embed_conformer(graph, seed).map_err(|msg| Error::ConformerGeneration {
        id: mol.id.clone(),
        msg,
    })?;
    let data = coords.iter().flat_map(|p| p.iter().map(|&x| round6(x))).collect();
    Conformer3D::new(mol.clone(), Mat::from_vec(coords.len(), 3, data))
}

/// On-disk conformer cache with one XYZ-style file per (molecule id, seed).
#[derive(Clone, Debug)]
pub struct ConformerCache {
    root: PathBuf,
}

impl ConformerCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ConformerCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, id: &str, seed: u64) -> PathBuf {
        let digest = Sha256::digest(id.as_bytes());
        self.root.join(format!("{}_{seed}.xyz", hex::encode(&digest[..12])))
    }

    /// Returns the cached conformer when present and consistent with `mol`,
    /// otherwise generates and stores it.
    pub fn get_or_generate(&self, mol: &Molecule2D, seed: u64) -> Result<Conformer3D> {
        let path = self.path_for(&mol.id, seed);
        if let Ok(text) = fs::read_to_string(&path) {
            match read_xyz(&text, mol) {
                Some(coords) => return Conformer3D::new(mol.clone(), coords),
                None => log::warn!("ignoring stale conformer cache entry {}", path.display()),
            }
        }
        let conf = generate_conformer(mol, seed)?;
        self.store(&conf, seed, &path)?;
        Ok(conf)
    }

    fn store(&self, conf: &Conformer3D, seed: u64, path: &Path) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let mut text = String::new();
        writeln!(text, "{}", conf.n_atoms()).unwrap();
        writeln!(text, "id={} seed={seed}", conf.id()).unwrap();
        for (sym, i) in conf.molecule.symbols().into_iter().zip(0..) {
            let r = conf.coords.row(i);
            writeln!(text, "{sym} {:.6} {:.6} {:.6}", r[0], r[1], r[2]).unwrap();
        }
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }
}

fn read_xyz(text: &str, mol: &Molecule2D) -> Option<Mat> {
    let mut lines = text.lines();
    let n: usize = lines.next()?.trim().parse().ok()?;
    let comment = lines.next()?;
    if n != mol.n_atoms() || !comment.contains(&format!("id={} ", mol.id)) {
        return None;
    }
    let symbols = mol.symbols();
    let mut data = Vec::with_capacity(3 * n);
    for sym in symbols {
        let line = lines.next()?;
        let mut parts = line.split_whitespace();
        if parts.next()? != sym {
            return None;
        }
        for _ in 0..3 {
            let v: f64 = parts.next()?.parse().ok()?;
            data.push(v);
        }
    }
    Some(Mat::from_vec(n, 3, data))
}
