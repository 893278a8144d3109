use std::collections::BTreeMap;
use std::path::Path;

use super::{generate_conformer, ConformerCache, Conformer3D, Molecule2D, MoleculePair};
use crate::chem::{self, SdfRecord};
use crate::{Error, Exec, Mat, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    /// CSV with `smiles_1`, `smiles_2`, `label` and an optional `temperature`.
    CsvSmiles,
    /// SD file whose consecutive records form pairs; the label is read from
    /// the first record's `label` field.
    SdfPairs,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv-smiles" => Ok(DatasetFormat::CsvSmiles),
            "sdf-pairs" => Ok(DatasetFormat::SdfPairs),
            other => Err(Error::config("format", format!("unknown dataset format `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    /// Seed for conformer generation.
    pub seed: u64,
    pub cache: Option<ConformerCache>,
    pub exec: Exec,
    pub task_id: String,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            seed: 0,
            cache: None,
            exec: Exec::default(),
            task_id: "default".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PairDataset {
    pub pairs: Vec<MoleculePair>,
    /// Records skipped because they could not be parsed.
    pub skipped: usize,
    /// Molecule ids dropped because no conformer could be embedded.
    pub failed_conformers: Vec<String>,
}

struct Record {
    a: Molecule2D,
    b: Molecule2D,
    coords: Option<(Mat, Mat)>,
    label: Option<f64>,
}

/// Reads a pair dataset and assigns molecule roles. Records that fail to
/// parse are skipped and counted; pairs whose molecules cannot be embedded
/// are dropped and their molecule ids reported.
pub fn load_pair_dataset(path: &Path, format: DatasetFormat, opts: &LoadOptions) -> Result<PairDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (records, skipped) = match format {
        DatasetFormat::CsvSmiles => read_csv(&text, path)?,
        DatasetFormat::SdfPairs => read_sdf(&text),
    };
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} unparsable records", path.display());
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }

    let mut conformers: BTreeMap<String, Option<Conformer3D>> = BTreeMap::new();
    let mut pending: Vec<Molecule2D> = Vec::new();
    for r in records.iter().filter(|r| r.coords.is_none()) {
        for m in [&r.a, &r.b] {
            if !conformers.contains_key(&m.id) {
                conformers.insert(m.id.clone(), None);
                pending.push(m.clone());
            }
        }
    }
    let generated = opts.exec.map(&pending, |_, m| match &opts.cache {
        Some(cache) => cache.get_or_generate(m, opts.seed),
        None => generate_conformer(m, opts.seed),
    });
    let mut failed = Vec::new();
    for (m, result) in pending.iter().zip(generated) {
        match result {
            Ok(c) => {
                conformers.insert(m.id.clone(), Some(c));
            }
            Err(e) => {
                log::warn!("dropping {}: {e}", m.id);
                failed.push(m.id.clone());
            }
        }
    }

    let mut pairs = Vec::with_capacity(records.len());
    for r in records {
        let (ca, cb) = match r.coords {
            Some((xa, xb)) => (Conformer3D::new(r.a, xa)?, Conformer3D::new(r.b, xb)?),
            None => match (&conformers[&r.a.id], &conformers[&r.b.id]) {
                (Some(ca), Some(cb)) => (ca.clone(), cb.clone()),
                _ => continue,
            },
        };
        pairs.push(MoleculePair::new(ca, cb, r.label, opts.task_id.clone()));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    Ok(PairDataset {
        pairs,
        skipped,
        failed_conformers: failed,
    })
}

fn read_csv(text: &str, path: &Path) -> Result<(Vec<Record>, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(_) => return Ok((Vec::new(), 0)),
    };
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Ok((Vec::new(), 0));
    }
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(c1), Some(c2)) = (column("smiles_1"), column("smiles_2")) else {
        return Err(Error::parse(
            path.display().to_string(),
            "missing `smiles_1`/`smiles_2` header columns",
        ));
    };
    let c_label = column("label");

    let mut records = Vec::new();
    let mut skipped = 0;
    for row in reader.records() {
        let Ok(row) = row else {
            skipped += 1;
            continue;
        };
        let label = match c_label.and_then(|c| row.get(c)).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    skipped += 1;
                    continue;
                }
            },
        };
        let parsed = row
            .get(c1)
            .zip(row.get(c2))
            .map(|(s1, s2)| (Molecule2D::from_smiles(s1), Molecule2D::from_smiles(s2)));
        match parsed {
            Some((Ok(a), Ok(b))) => records.push(Record {
                a,
                b,
                coords: None,
                label,
            }),
            _ => skipped += 1,
        }
    }
    Ok((records, skipped))
}

fn sdf_molecule(rec: SdfRecord) -> (Molecule2D, Mat) {
    let id = chem::write_smiles(&rec.graph);
    let n = rec.coords.len();
    let coords = Mat::from_vec(n, 3, rec.coords.iter().flatten().copied().collect());
    (Molecule2D::from_graph(rec.graph, id), coords)
}

fn read_sdf(text: &str) -> (Vec<Record>, usize) {
    let recs = chem::parse_sdf(text);
    let mut records = Vec::new();
    let mut skipped = 0;
    let mut it = recs.into_iter();
    while let Some(first) = it.next() {
        let Some(second) = it.next() else {
            skipped += 1;
            break;
        };
        let (Ok(first), Ok(second)) = (first, second) else {
            skipped += 1;
            continue;
        };
        let label = match first.fields.get("label").or_else(|| second.fields.get("label")) {
            None => None,
            Some(s) => match s.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    skipped += 1;
                    continue;
                }
            },
        };
        let (a, xa) = sdf_molecule(first);
        let (b, xb) = sdf_molecule(second);
        records.push(Record {
            a,
            b,
            coords: Some((xa, xb)),
            label,
        });
    }
    (records, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn malformed_smiles_rows_are_counted() {
        let f = write("smiles_1,smiles_2,label\nCCO,O,1.5\nc1ccccc1,CO,-2\nC1CC,O,0.3\nCCN,CCl,0.1\n");
        let ds = load_pair_dataset(f.path(), DatasetFormat::CsvSmiles, &LoadOptions::default()).unwrap();
        assert_eq!(ds.pairs.len(), 3);
        assert_eq!(ds.skipped, 1);
        assert_eq!(ds.pairs[0].label, Some(1.5));
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write("");
        let err = load_pair_dataset(f.path(), DatasetFormat::CsvSmiles, &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset(_)));
        let f = write("smiles_1,smiles_2,label\n");
        let err = load_pair_dataset(f.path(), DatasetFormat::CsvSmiles, &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset(_)));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_pair_dataset(Path::new("/nonexistent/x.csv"), DatasetFormat::CsvSmiles, &LoadOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn sdf_pairs_keep_file_coordinates() {
        let mol = |name: &str, x: f64| {
            format!(
                "{name}\n\n\n  2  1  0  0  0  0  0  0  0  0999 V2000\n    0.0000    0.0000    0.0000 C   0  0\n    {x:.4}    0.0000    0.0000 O   0  0\n  1  2  1  0\nM  END\n> <label>\n1\n\n$$$$\n"
            )
        };
        let f = write(&format!("{}{}", mol("a", 1.43), mol("b", 1.40)));
        let ds = load_pair_dataset(f.path(), DatasetFormat::SdfPairs, &LoadOptions::default()).unwrap();
        assert_eq!(ds.pairs.len(), 1);
        assert_eq!(ds.pairs[0].larger.coords.get(1, 0), 1.43);
        assert_eq!(ds.pairs[0].larger.id(), "CO");
    }
}
