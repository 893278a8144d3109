//! Canonical SMILES writer. Atoms are ranked by iterative neighbourhood
//! refinement with deterministic tie-breaking, then written depth-first in
//! rank order.

use super::{BondOrder, ChemGraph};

fn relabel<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).expect("key is present"))
        .collect()
}

fn bond_code(order: BondOrder) -> u8 {
    match order {
        BondOrder::Single => 1,
        BondOrder::Double => 2,
        BondOrder::Triple => 3,
        BondOrder::Aromatic => 4,
    }
}

/// Canonical ranks: equal ranks only for atoms that refinement cannot tell
/// apart, which are then split one at a time.
pub(crate) fn canonical_ranks(g: &ChemGraph) -> Vec<usize> {
    let nb = g.neighbors();
    let initial: Vec<(u8, bool, usize, u8, i8)> = g
        .atoms
        .iter()
        .enumerate()
        .map(|(i, a)| (a.number, a.aromatic, nb[i].len(), a.total_h(), a.charge))
        .collect();
    let mut ranks = relabel(&initial);
    loop {
        ranks = refine(g, &nb, ranks);
        let n_classes = ranks.iter().max().map_or(0, |m| m + 1);
        if n_classes == g.len() {
            return ranks;
        }
        // break the lowest tied class at its lowest-index atom
        let mut counts = vec![0usize; n_classes];
        for &r in &ranks {
            counts[r] += 1;
        }
        let tied = (0..n_classes).find(|&c| counts[c] > 1).expect("some class is tied");
        let pick = ranks.iter().position(|&r| r == tied).unwrap();
        let keys: Vec<(usize, u8)> = ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| (r, if r == tied && i != pick { 1 } else { 0 }))
            .collect();
        ranks = relabel(&keys);
    }
}

fn refine(g: &ChemGraph, nb: &[Vec<(usize, usize)>], mut ranks: Vec<usize>) -> Vec<usize> {
    loop {
        let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..g.len())
            .map(|i| {
                let mut env: Vec<(usize, u8)> = nb[i]
                    .iter()
                    .map(|&(j, bi)| (ranks[j], bond_code(g.bonds[bi].order)))
                    .collect();
                env.sort_unstable();
                (ranks[i], env)
            })
            .collect();
        let next = relabel(&keys);
        let before = ranks.iter().max().copied().unwrap_or(0);
        let after = next.iter().max().copied().unwrap_or(0);
        ranks = next;
        if after == before {
            return ranks;
        }
    }
}

fn atom_token(g: &ChemGraph, i: usize) -> String {
    let a = &g.atoms[i];
    let sym = a.element().symbol;
    let organic = matches!(sym, "B" | "C" | "N" | "O" | "P" | "S" | "F" | "Cl" | "Br" | "I");
    let text = if a.aromatic { sym.to_lowercase() } else { sym.to_string() };
    if organic && !a.bracket && a.charge == 0 {
        return text;
    }
    let mut s = format!("[{text}");
    match a.total_h() {
        0 => {}
        1 => s.push('H'),
        h => s.push_str(&format!("H{h}")),
    }
    match a.charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("+{c}")),
        c => s.push_str(&format!("-{}", -c)),
    }
    s.push(']');
    s
}

fn bond_token(g: &ChemGraph, a: usize, b: usize, order: BondOrder) -> &'static str {
    match order {
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic => "",
        BondOrder::Single if g.atoms[a].aromatic && g.atoms[b].aromatic => "-",
        BondOrder::Single => "",
    }
}

/// Writes `g` as a canonical SMILES string. Disconnected components are
/// joined with `.` in rank order.
pub fn write_smiles(g: &ChemGraph) -> String {
    if g.is_empty() {
        return String::new();
    }
    let ranks = canonical_ranks(g);
    let nb = g.neighbors();
    let mut order_nb: Vec<Vec<(usize, usize)>> = nb.clone();
    for list in &mut order_nb {
        list.sort_by_key(|&(j, _)| ranks[j]);
    }

    let mut comps = g.components();
    comps.sort_by_key(|c| c.iter().map(|&i| ranks[i]).min());

    let mut visited = vec![false; g.len()];
    let mut parts = Vec::new();
    for comp in comps {
        let root = *comp.iter().min_by_key(|&&i| ranks[i]).unwrap();
        // pass 1: spanning tree and ring-closure bonds
        let mut tree_children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); g.len()];
        let mut closures: Vec<Vec<(usize, usize)>> = vec![Vec::new(); g.len()];
        let mut used_bond = vec![false; g.bonds.len()];
        dfs(root, &order_nb, &mut visited, &mut used_bond, &mut tree_children, &mut closures);
        // pass 2: emit
        let mut out = String::new();
        let mut open: Vec<Option<usize>> = Vec::new();
        let mut digit_of_bond = std::collections::HashMap::new();
        emit(g, root, &tree_children, &closures, &mut open, &mut digit_of_bond, &mut out);
        parts.push(out);
    }
    parts.join(".")
}

fn dfs(
    u: usize,
    nb: &[Vec<(usize, usize)>],
    visited: &mut [bool],
    used_bond: &mut [bool],
    children: &mut [Vec<(usize, usize)>],
    closures: &mut [Vec<(usize, usize)>],
) {
    visited[u] = true;
    for &(v, bi) in &nb[u] {
        if used_bond[bi] {
            continue;
        }
        used_bond[bi] = true;
        if visited[v] {
            closures[u].push((v, bi));
            closures[v].push((u, bi));
        } else {
            children[u].push((v, bi));
            dfs(v, nb, visited, used_bond, children, closures);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn emit(
    g: &ChemGraph,
    u: usize,
    children: &[Vec<(usize, usize)>],
    closures: &[Vec<(usize, usize)>],
    open: &mut Vec<Option<usize>>,
    digit_of_bond: &mut std::collections::HashMap<usize, usize>,
    out: &mut String,
) {
    out.push_str(&atom_token(g, u));
    for &(v, bi) in &closures[u] {
        let bond = &g.bonds[bi];
        if let Some(d) = digit_of_bond.remove(&bi) {
            out.push_str(bond_token(g, u, v, bond.order));
            push_digit(out, d);
            open[d] = None;
        } else {
            let d = match open.iter().position(Option::is_none) {
                Some(d) => d,
                None => {
                    open.push(None);
                    open.len() - 1
                }
            };
            open[d] = Some(bi);
            digit_of_bond.insert(bi, d);
            out.push_str(bond_token(g, u, v, bond.order));
            push_digit(out, d);
        }
    }
    let kids = &children[u];
    for (k, &(v, bi)) in kids.iter().enumerate() {
        let last = k + 1 == kids.len();
        if !last {
            out.push('(');
        }
        out.push_str(bond_token(g, u, v, g.bonds[bi].order));
        emit(g, v, children, closures, open, digit_of_bond, out);
        if !last {
            out.push(')');
        }
    }
}

fn push_digit(out: &mut String, d: usize) {
    let label = d + 1;
    if label < 10 {
        out.push_str(&label.to_string());
    } else {
        out.push_str(&format!("%{label:02}"));
    }
}
