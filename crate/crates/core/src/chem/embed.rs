//! Distance-geometry conformer embedding.
//!
//! Bounds come from covalent radii (1-2), ideal hybridisation angles (1-3),
//! cis/trans torsion extremes (1-4) and scaled van der Waals radii for the
//! rest. After triangle smoothing, a random distance matrix drawn inside the
//! bounds is embedded through the metric matrix and refined against the
//! bounds by gradient descent. Only the atoms present on the graph are
//! embedded; implicit hydrogens are not placed.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use super::{shortest_path_avoiding, BondOrder, ChemGraph, Hybridization};
use crate::seeding;

const MAX_ATTEMPTS: u64 = 10;
const BOND_TOL: f64 = 0.01;
const ANGLE_TOL: f64 = 0.04;
const FAR: f64 = 100.0;
const INTER_COMPONENT_MAX: f64 = 10.0;
/// Lower-bound scale on the van der Waals sum for pairs four bonds apart,
/// and for pairs further apart or in different components.
const VDW_SCALE_15: f64 = 0.7;
const VDW_SCALE_FAR: f64 = 0.85;

fn bond_length(g: &ChemGraph, a: usize, b: usize, order: BondOrder) -> f64 {
    let sum = g.atoms[a].element().covalent + g.atoms[b].element().covalent;
    match order {
        BondOrder::Single => sum,
        BondOrder::Aromatic => 0.93 * sum,
        BondOrder::Double => 0.87 * sum,
        BondOrder::Triple => 0.78 * sum,
    }
}

fn ideal_angle(g: &ChemGraph, center: usize, ring_size: Option<usize>) -> f64 {
    match ring_size {
        Some(4) => 90f64.to_radians(),
        Some(5) => 108f64.to_radians(),
        _ => match g.hybridization(center) {
            Hybridization::Sp => std::f64::consts::PI,
            Hybridization::Sp2 => 120f64.to_radians(),
            Hybridization::Sp3 => 109.47f64.to_radians(),
        },
    }
}

fn law_of_cosines(a: f64, b: f64, angle: f64) -> f64 {
    (a * a + b * b - 2.0 * a * b * angle.cos()).max(0.0).sqrt()
}

/// Distance between the terminal atoms of a torsion i-j-k-l at dihedral `phi`.
fn torsion_distance(b1: f64, b2: f64, b3: f64, t1: f64, t2: f64, phi: f64) -> f64 {
    let i = [b1 * t1.cos(), b1 * t1.sin(), 0.0];
    let l = [
        b2 - b3 * t2.cos(),
        b3 * t2.sin() * phi.cos(),
        b3 * t2.sin() * phi.sin(),
    ];
    ((i[0] - l[0]).powi(2) + (i[1] - l[1]).powi(2) + (i[2] - l[2]).powi(2)).sqrt()
}

struct Bounds {
    n: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    fn set(&mut self, i: usize, j: usize, lo: f64, hi: f64) {
        let (a, b) = (self.idx(i, j), self.idx(j, i));
        self.lower[a] = lo;
        self.lower[b] = lo;
        self.upper[a] = hi;
        self.upper[b] = hi;
    }

    fn lo(&self, i: usize, j: usize) -> f64 {
        self.lower[self.idx(i, j)]
    }

    fn hi(&self, i: usize, j: usize) -> f64 {
        self.upper[self.idx(i, j)]
    }
}

/// Bond counts between all atom pairs; `usize::MAX` across components.
fn topological_distances(nb: &[Vec<(usize, usize)>]) -> Vec<Vec<usize>> {
    let n = nb.len();
    (0..n)
        .map(|src| {
            let mut d = vec![usize::MAX; n];
            d[src] = 0;
            let mut queue = std::collections::VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &nb[u] {
                    if d[v] == usize::MAX {
                        d[v] = d[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            d
        })
        .collect()
}

fn build_bounds(g: &ChemGraph) -> Bounds {
    let n = g.len();
    let mut bounds = Bounds {
        n,
        lower: vec![0.0; n * n],
        upper: vec![FAR; n * n],
    };
    let nb = g.neighbors();
    let mut fixed = vec![false; n * n];

    let components = g.components();
    let mut comp_of = vec![0; n];
    for (c, members) in components.iter().enumerate() {
        for &m in members {
            comp_of[m] = c;
        }
    }
    let hops = topological_distances(&nb);
    for i in 0..n {
        for j in i + 1..n {
            let scale = if hops[i][j] <= 4 { VDW_SCALE_15 } else { VDW_SCALE_FAR };
            let lo = scale * (g.atoms[i].element().vdw + g.atoms[j].element().vdw);
            let hi = if comp_of[i] == comp_of[j] { FAR } else { INTER_COMPONENT_MAX.max(lo + 1.0) };
            bounds.set(i, j, lo, hi);
        }
    }

    let mut lengths = vec![0.0; g.bonds.len()];
    for (bi, b) in g.bonds.iter().enumerate() {
        let d = bond_length(g, b.a, b.b, b.order);
        lengths[bi] = d;
        bounds.set(b.a, b.b, d - BOND_TOL, d + BOND_TOL);
        fixed[b.a * n + b.b] = true;
        fixed[b.b * n + b.a] = true;
    }

    // ring size seen through angle i-j-k: shortest i..k path not using j
    let ring_size = |i: usize, j: usize, k: usize| -> Option<usize> {
        let mut masked = nb.clone();
        masked[j].clear();
        for list in masked.iter_mut() {
            list.retain(|&(v, _)| v != j);
        }
        shortest_path_avoiding(&masked, i, k, usize::MAX, 6).map(|p| p.len() + 1)
    };

    let mut angles = std::collections::HashMap::new();
    for j in 0..n {
        for (x, &(i, bi)) in nb[j].iter().enumerate() {
            for &(k, bk) in nb[j].iter().skip(x + 1) {
                if fixed[i * n + k] {
                    continue;
                }
                let rs = ring_size(i, j, k);
                let theta = ideal_angle(g, j, rs.filter(|&s| s <= 5));
                angles.insert((i, j, k), theta);
                angles.insert((k, j, i), theta);
                let d = law_of_cosines(lengths[bi], lengths[bk], theta);
                bounds.set(i, k, d - ANGLE_TOL, d + ANGLE_TOL);
                fixed[i * n + k] = true;
                fixed[k * n + i] = true;
            }
        }
    }

    let rings = g.rings();
    let same_ring = |atoms: [usize; 4]| rings.iter().any(|r| atoms.iter().all(|a| r.contains(a)));
    for (bj, b) in g.bonds.iter().enumerate() {
        let (j, k) = (b.a, b.b);
        for &(i, bi) in &nb[j] {
            if i == k {
                continue;
            }
            for &(l, bl) in &nb[k] {
                if l == j || l == i || fixed[i * n + l] {
                    continue;
                }
                let (Some(&t1), Some(&t2)) = (angles.get(&(i, j, k)), angles.get(&(j, k, l))) else {
                    continue;
                };
                let cis = torsion_distance(lengths[bi], lengths[bj], lengths[bl], t1, t2, 0.0);
                let trans = torsion_distance(lengths[bi], lengths[bj], lengths[bl], t1, t2, std::f64::consts::PI);
                let planar = g.hybridization(j) == Hybridization::Sp2
                    && g.hybridization(k) == Hybridization::Sp2
                    && same_ring([i, j, k, l]);
                let (lo, hi) = if planar {
                    (cis - 0.05, cis + 0.05)
                } else {
                    (cis.min(trans) - 0.05, cis.max(trans) + 0.05)
                };
                bounds.set(i, l, lo, hi);
                fixed[i * n + l] = true;
                fixed[l * n + i] = true;
            }
        }
    }

    smooth(&mut bounds);
    bounds
}

/// Triangle-inequality smoothing (Floyd–Warshall on upper and lower bounds).
fn smooth(b: &mut Bounds) {
    let n = b.n;
    for k in 0..n {
        for i in 0..n {
            for j in i + 1..n {
                if i == k || j == k {
                    continue;
                }
                let u = b.hi(i, k) + b.hi(k, j);
                if u < b.hi(i, j) {
                    let lo = b.lo(i, j);
                    b.set(i, j, lo, u);
                }
                let l1 = b.lo(i, k) - b.hi(k, j);
                let l2 = b.lo(j, k) - b.hi(k, i);
                let l = l1.max(l2);
                if l > b.lo(i, j) {
                    let hi = b.hi(i, j);
                    b.set(i, j, l, hi);
                }
                if b.lo(i, j) > b.hi(i, j) {
                    let m = 0.5 * (b.lo(i, j) + b.hi(i, j));
                    b.set(i, j, m, m);
                }
            }
        }
    }
}

fn metric_embed(dist: &[f64], n: usize) -> Option<Vec<[f64; 3]>> {
    let mut d0 = vec![0.0; n];
    let total: f64 = (0..n)
        .flat_map(|j| (j + 1..n).map(move |k| (j, k)))
        .map(|(j, k)| dist[j * n + k].powi(2))
        .sum::<f64>()
        / (n * n) as f64;
    for i in 0..n {
        d0[i] = (0..n).map(|j| dist[i * n + j].powi(2)).sum::<f64>() / n as f64 - total;
    }
    let metric = DMatrix::from_fn(n, n, |i, j| 0.5 * (d0[i] + d0[j] - dist[i * n + j].powi(2)));
    let eig = SymmetricEigen::new(metric);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut coords = vec![[0.0; 3]; n];
    for (axis, &e) in order.iter().take(3).enumerate() {
        let lambda = eig.eigenvalues[e];
        let scale = if lambda > 1e-8 { lambda.sqrt() } else { 0.0 };
        for (i, c) in coords.iter_mut().enumerate() {
            c[axis] = eig.eigenvectors[(i, e)] * scale;
        }
    }
    coords.iter().all(|c| c.iter().all(|x| x.is_finite())).then_some(coords)
}

fn bounds_error(b: &Bounds, x: &[[f64; 3]], grad: Option<&mut [[f64; 3]]>) -> f64 {
    let n = b.n;
    let mut e = 0.0;
    let mut gbuf = grad;
    for i in 0..n {
        for j in i + 1..n {
            let d = [x[i][0] - x[j][0], x[i][1] - x[j][1], x[i][2] - x[j][2]];
            let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            let (lo, hi) = (b.lo(i, j), b.hi(i, j));
            let mut coef = 0.0;
            let u2 = hi * hi;
            if d2 > u2 {
                let v = d2 / u2 - 1.0;
                e += v * v;
                coef += 2.0 * v * 2.0 / u2;
            }
            let l2 = lo * lo;
            if d2 < l2 {
                let v = 2.0 * l2 / (l2 + d2) - 1.0;
                e += v * v;
                coef += 2.0 * v * (-2.0 * l2 / (l2 + d2).powi(2)) * 2.0;
            }
            if coef != 0.0 {
                if let Some(g) = gbuf.as_deref_mut() {
                    for a in 0..3 {
                        g[i][a] += coef * d[a];
                        g[j][a] -= coef * d[a];
                    }
                }
            }
        }
    }
    e
}

fn refine(b: &Bounds, x: &mut [[f64; 3]], iterations: usize) -> f64 {
    let n = x.len();
    let mut step = 0.05;
    let mut grad = vec![[0.0; 3]; n];
    let mut err = bounds_error(b, x, None);
    for _ in 0..iterations {
        grad.iter_mut().for_each(|g| *g = [0.0; 3]);
        bounds_error(b, x, Some(&mut grad));
        let gnorm = grad.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < 1e-10 {
            break;
        }
        loop {
            let trial: Vec<[f64; 3]> = x
                .iter()
                .zip(&grad)
                .map(|(p, g)| [p[0] - step * g[0], p[1] - step * g[1], p[2] - step * g[2]])
                .collect();
            let e = bounds_error(b, &trial, None);
            if e < err {
                x.copy_from_slice(&trial);
                err = e;
                step *= 1.2;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return err;
            }
        }
    }
    err
}

fn max_bond_deviation(g: &ChemGraph, x: &[[f64; 3]]) -> f64 {
    g.bonds
        .iter()
        .map(|b| {
            let d = ((x[b.a][0] - x[b.b][0]).powi(2) + (x[b.a][1] - x[b.b][1]).powi(2) + (x[b.a][2] - x[b.b][2]).powi(2)).sqrt();
            (d - bond_length(g, b.a, b.b, b.order)).abs()
        })
        .fold(0.0, f64::max)
}

/// Embeds `g` in 3D. Deterministic for a fixed `(g, seed)`. Coordinates are
/// centred on their centroid.
pub fn embed_conformer(g: &ChemGraph, seed: u64) -> Result<Vec<[f64; 3]>, String> {
    let n = g.len();
    if n == 0 {
        return Err("molecule has no atoms".into());
    }
    if n == 1 {
        return Ok(vec![[0.0; 3]]);
    }
    let bounds = build_bounds(g);
    let mut last_err = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = seeding::rng_from(&[seeding::stream::CONFORMER, seed, attempt]);
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let (lo, hi) = (bounds.lo(i, j), bounds.hi(i, j).min(lo_cap(&bounds, i, j)));
                let d = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        let Some(mut x) = metric_embed(&dist, n) else {
            last_err = format!("attempt {attempt}: metric embedding produced non-finite coordinates");
            continue;
        };
        // random jitter breaks planarity from rank-deficient metric matrices
        for p in x.iter_mut() {
            for v in p.iter_mut() {
                *v += rng.gen_range(-0.05..0.05);
            }
        }
        refine(&bounds, &mut x, 2000);
        let dev = max_bond_deviation(g, &x);
        if dev.is_finite() && dev < 0.1 {
            let c = centroid(&x);
            return Ok(x.iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect());
        }
        last_err = format!("attempt {attempt}: bond deviation {dev:.3} Å after refinement");
    }
    Err(format!("embedding failed after {MAX_ATTEMPTS} attempts ({last_err})"))
}

/// Caps sampled upper bounds so unconstrained pairs do not explode the
/// initial embedding.
fn lo_cap(b: &Bounds, i: usize, j: usize) -> f64 {
    (b.lo(i, j) + 3.0).max(b.lo(i, j) * 1.5)
}

fn centroid(x: &[[f64; 3]]) -> [f64; 3] {
    let n = x.len() as f64;
    let mut c = [0.0; 3];
    for p in x {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    c.map(|v| v / n)
}

#[cfg(test)]
mod tests {
    use super::super::parse_smiles;
    use super::*;

    fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    #[test]
    fn water_with_explicit_hydrogens() {
        let g = parse_smiles("[H]O[H]").unwrap();
        let x = embed_conformer(&g, 0).unwrap();
        assert_eq!(x.len(), 3);
        for h in [0, 2] {
            let d = dist(x[1], x[h]);
            assert!((0.8..=1.2).contains(&d), "O-H distance {d}");
        }
    }

    #[test]
    fn benzene_bonds_and_para_distance() {
        let g = parse_smiles("c1ccccc1").unwrap();
        let x = embed_conformer(&g, 3).unwrap();
        for b in &g.bonds {
            let d = dist(x[b.a], x[b.b]);
            assert!((d - 1.41).abs() < 0.1, "aromatic bond {d}");
        }
        let para = dist(x[0], x[3]);
        assert!((para - 2.83).abs() < 0.2, "para distance {para}");
    }

    #[test]
    fn deterministic_per_seed() {
        let g = parse_smiles("CC(=O)Oc1ccccc1C(=O)O").unwrap();
        assert_eq!(embed_conformer(&g, 11).unwrap(), embed_conformer(&g, 11).unwrap());
        assert_ne!(embed_conformer(&g, 11).unwrap(), embed_conformer(&g, 12).unwrap());
    }

    #[test]
    fn salts_keep_components_close() {
        let g = parse_smiles("[Na+].[Cl-]").unwrap();
        let x = embed_conformer(&g, 1).unwrap();
        assert!(dist(x[0], x[1]) <= INTER_COMPONENT_MAX + 0.5);
    }
}
