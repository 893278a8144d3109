//! MDL V2000 SD-file reader.

use std::collections::BTreeMap;

use super::{by_symbol, BondOrder, ChemAtom, ChemBond, ChemGraph};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct SdfRecord {
    pub title: String,
    pub graph: ChemGraph,
    pub coords: Vec<[f64; 3]>,
    pub fields: BTreeMap<String, String>,
}

fn charge_code(code: i32) -> i8 {
    match code {
        1 => 3,
        2 => 2,
        3 => 1,
        5 => -1,
        6 => -2,
        7 => -3,
        _ => 0,
    }
}

/// Parses every record of an SD file. A malformed record yields an `Err`
/// entry at its position so callers can skip and count it.
pub fn parse_sdf(text: &str) -> Vec<Result<SdfRecord>> {
    let mut out = Vec::new();
    let mut block = Vec::new();
    for line in text.lines() {
        if line.trim_end() == "$$$$" {
            out.push(parse_record(&block, out.len()));
            block.clear();
        } else {
            block.push(line);
        }
    }
    if block.iter().any(|l| !l.trim().is_empty()) {
        out.push(parse_record(&block, out.len()));
    }
    out
}

fn parse_record(lines: &[&str], index: usize) -> Result<SdfRecord> {
    let err = |msg: String| Error::parse(format!("SD record {index}"), msg);
    if lines.len() < 4 {
        return Err(err("truncated header".into()));
    }
    let title = lines[0].trim().to_string();
    let counts = lines[3];
    let field = |s: &str, a: usize, b: usize| -> Option<usize> { s.get(a..b.min(s.len()))?.trim().parse().ok() };
    let (n_atoms, n_bonds) = match (field(counts, 0, 3), field(counts, 3, 6)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            let mut it = counts.split_whitespace();
            match (it.next().and_then(|x| x.parse().ok()), it.next().and_then(|x| x.parse().ok())) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(err(format!("bad counts line `{counts}`"))),
            }
        }
    };
    if n_atoms == 0 {
        return Err(err("record has no atoms".into()));
    }
    if lines.len() < 4 + n_atoms + n_bonds {
        return Err(err("atom or bond block truncated".into()));
    }
    let mut graph = ChemGraph::default();
    let mut coords = Vec::with_capacity(n_atoms);
    for (k, line) in lines[4..4 + n_atoms].iter().enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() < 4 {
            return Err(err(format!("atom line {k} is malformed")));
        }
        let xyz: Vec<f64> = parts[..3]
            .iter()
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(format!("atom line {k}: {e}")))?;
        if xyz.iter().any(|v| !v.is_finite()) {
            return Err(err(format!("atom line {k}: non-finite coordinate")));
        }
        let el = by_symbol(parts[3]).ok_or_else(|| err(format!("unknown element `{}`", parts[3])))?;
        let charge = parts.get(5).and_then(|c| c.parse::<i32>().ok()).map_or(0, charge_code);
        coords.push([xyz[0], xyz[1], xyz[2]]);
        graph.atoms.push(ChemAtom {
            number: el.number,
            charge,
            explicit_h: 0,
            implicit_h: 0,
            aromatic: false,
            bracket: false,
        });
    }
    for (k, line) in lines[4 + n_atoms..4 + n_atoms + n_bonds].iter().enumerate() {
        let parts: Vec<usize> = line
            .split_whitespace()
            .take(3)
            .map(|p| p.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(format!("bond line {k}: {e}")))?;
        if parts.len() < 3 || parts[0] == 0 || parts[1] == 0 || parts[0] > n_atoms || parts[1] > n_atoms {
            return Err(err(format!("bond line {k} is malformed")));
        }
        let order = match parts[2] {
            1 => BondOrder::Single,
            2 => BondOrder::Double,
            3 => BondOrder::Triple,
            4 => BondOrder::Aromatic,
            o => return Err(err(format!("unsupported bond type {o}"))),
        };
        graph.bonds.push(ChemBond {
            a: parts[0] - 1,
            b: parts[1] - 1,
            order,
        });
    }
    let mut fields = BTreeMap::new();
    let mut rest = lines[4 + n_atoms + n_bonds..].iter();
    while let Some(line) = rest.next() {
        if let Some(chg) = line.strip_prefix("M  CHG") {
            let nums: Vec<i32> = chg.split_whitespace().filter_map(|x| x.parse().ok()).collect();
            for pair in nums.get(1..).unwrap_or(&[]).chunks(2) {
                if let [atom, charge] = *pair {
                    if atom >= 1 && (atom as usize) <= n_atoms {
                        graph.atoms[atom as usize - 1].charge = charge as i8;
                    }
                }
            }
        } else if line.starts_with('>') {
            if let (Some(a), Some(b)) = (line.find('<'), line.rfind('>')) {
                if b > a {
                    let name = line[a + 1..b].to_string();
                    let mut value = Vec::new();
                    for v in rest.by_ref() {
                        if v.trim().is_empty() {
                            break;
                        }
                        value.push(v.trim());
                    }
                    fields.insert(name, value.join("\n"));
                }
            }
        }
    }
    for b in &graph.bonds {
        if b.order == BondOrder::Aromatic {
            graph.atoms[b.a].aromatic = true;
            graph.atoms[b.b].aromatic = true;
        }
    }
    // hydrogens drawn in the file are counted through their bonds; aromatic
    // [nH] cannot be recovered from a type-4 bond block, so Kekulé input is
    // preferred for pyrrole-type rings
    graph.assign_implicit_hydrogens();
    graph.perceive_aromaticity();
    Ok(SdfRecord {
        title,
        graph,
        coords,
        fields,
    })
}
