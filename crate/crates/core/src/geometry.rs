//! Virtual interaction geometries: replicas of the smaller molecule placed
//! around selected atoms of the larger one, pseudo-force targets and local
//! frames for the equivariant force head.

use std::f64::consts::PI;
use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use serde_json::json;

use crate::data::{Conformer3D, Molecule2D, MoleculePair};
use crate::seeding::{self, stream};
use crate::{Error, Mat, Result};

pub type Vec3 = [f64; 3];
pub type Rotation = [[f64; 3]; 3];

const FRAME_EPS: f64 = 1e-8;
const FORCE_EPS: f64 = 1e-9;

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn scaled(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// `q · v`.
pub fn rotate(q: &Rotation, v: Vec3) -> Vec3 {
    [dot(q[0], v), dot(q[1], v), dot(q[2], v)]
}

pub fn det3(m: &Rotation) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}

fn row3(m: &Mat, i: usize) -> Vec3 {
    let r = m.row(i);
    [r[0], r[1], r[2]]
}

pub fn centroid(coords: &Mat) -> Vec3 {
    let n = coords.rows() as f64;
    let mut c = [0.0; 3];
    for i in 0..coords.rows() {
        c = add(c, row3(coords, i));
    }
    scaled(c, 1.0 / n)
}

/// Largest distance of any atom from the coordinate centroid.
pub fn molecule_radius(conf: &Conformer3D) -> f64 {
    let c = centroid(&conf.coords);
    (0..conf.n_atoms())
        .map(|i| norm(sub(row3(&conf.coords, i), c)))
        .fold(0.0, f64::max)
}

/// Draws `n` target atoms from the non-aromatic atoms of `mol`: without
/// replacement when there are enough of them, with replacement otherwise,
/// and from all atoms when every atom is aromatic.
pub fn select_target_atoms<R: Rng + ?Sized>(mol: &Molecule2D, n: usize, rng: &mut R) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..mol.n_atoms()).filter(|&i| !mol.aromatic_flags[i]).collect();
    if pool.is_empty() {
        pool = (0..mol.n_atoms()).collect();
    }
    if pool.len() >= n {
        index::sample(rng, pool.len(), n).into_iter().map(|k| pool[k]).collect()
    } else {
        (0..n).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
    }
}

/// Uniform rotation from a uniformly distributed unit quaternion.
pub fn sample_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (x, y) = (a * (2.0 * PI * u2).sin(), a * (2.0 * PI * u2).cos());
    let (z, w) = (b * (2.0 * PI * u3).sin(), b * (2.0 * PI * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Uniform direction on the unit sphere.
pub fn sample_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z: f64 = 2.0 * rng.gen::<f64>() - 1.0;
    let phi = 2.0 * PI * rng.gen::<f64>();
    let s = (1.0 - z * z).max(0.0).sqrt();
    [s * phi.cos(), s * phi.sin(), z]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub coords: Mat,
    pub epsilon: Vec3,
    pub rotation: Rotation,
}

/// Places one copy of `small`: its centred coordinates are rotated by `q`
/// and moved so that the centroid lands at `target + epsilon * r`, where `r`
/// is the radius of `small`.
pub fn place_replica_with(small: &Conformer3D, target: Vec3, epsilon: Vec3, q: &Rotation) -> Placement {
    let c = centroid(&small.coords);
    let r = molecule_radius(small);
    let shift = add(target, scaled(epsilon, r));
    let mut coords = Mat::zeros(small.n_atoms(), 3);
    for i in 0..small.n_atoms() {
        let p = add(rotate(q, sub(row3(&small.coords, i), c)), shift);
        coords.row_mut(i).copy_from_slice(&p);
    }
    Placement {
        coords,
        epsilon,
        rotation: *q,
    }
}

/// [`place_replica_with`] with a random direction and rotation.
pub fn place_replica<R: Rng + ?Sized>(small: &Conformer3D, target: Vec3, rng: &mut R) -> Placement {
    let epsilon = sample_unit_vector(rng);
    let q = sample_rotation(rng);
    place_replica_with(small, target, epsilon, &q)
}

#[derive(Clone, Debug)]
pub struct VirtualGeometry {
    /// `(N1 + m * N2) × 3`, larger molecule first, then the `m` replicas.
    pub coords: Mat,
    pub atom_features: Mat,
    /// Larger-molecule atom assigned to each replica.
    pub target_atoms: Vec<usize>,
    pub replica_slices: Vec<Range<usize>>,
    /// One `N2 × 3` block of unit vectors per replica.
    pub pseudo_forces: Vec<Mat>,
    pub epsilons: Vec<Vec3>,
    pub rotations: Vec<Rotation>,
    pub seed: u64,
    pub n_larger: usize,
    pub n_smaller: usize,
    pub symbols: Vec<&'static str>,
}

impl VirtualGeometry {
    pub fn n_atoms(&self) -> usize {
        self.coords.rows()
    }

    pub fn n_replicas(&self) -> usize {
        self.replica_slices.len()
    }

    /// Replica `i` relative to its target atom (target at the origin).
    pub fn replica_local(&self, i: usize) -> Vec<Vec3> {
        let t = row3(&self.coords, self.target_atoms[i]);
        self.replica_slices[i].clone().map(|r| sub(row3(&self.coords, r), t)).collect()
    }

    /// The same geometry moved by `x -> q x + t`. Forces and directions are
    /// rotated accordingly.
    pub fn transformed(&self, q: &Rotation, t: Vec3) -> VirtualGeometry {
        let mut out = self.clone();
        for i in 0..self.n_atoms() {
            let p = add(rotate(q, row3(&self.coords, i)), t);
            out.coords.row_mut(i).copy_from_slice(&p);
        }
        for (k, f) in out.pseudo_forces.iter_mut().enumerate() {
            for a in 0..f.rows() {
                let v = rotate(q, row3(&self.pseudo_forces[k], a));
                f.row_mut(a).copy_from_slice(&v);
            }
        }
        for e in out.epsilons.iter_mut() {
            *e = rotate(q, *e);
        }
        out
    }

    /// Extended XYZ text. The comment line carries the replica count, the
    /// seed and the target atoms.
    pub fn to_xyz(&self) -> String {
        let targets: Vec<String> = self.target_atoms.iter().map(|t| t.to_string()).collect();
        let mut out = format!(
            "{}\nProperties=species:S:1:pos:R:3 n={} seed={} target_atoms=\"{}\"\n",
            self.n_atoms(),
            self.n_replicas(),
            self.seed,
            targets.join(",")
        );
        for i in 0..self.n_atoms() {
            let r = self.coords.row(i);
            out.push_str(&format!("{} {:.6} {:.6} {:.6}\n", self.symbols[i], r[0], r[1], r[2]));
        }
        out
    }

    /// Sidecar record with directions, rotations and pseudo forces rounded
    /// to 6 decimals.
    pub fn sidecar(&self) -> serde_json::Value {
        let r6 = |x: f64| (x * 1e6).round() / 1e6 + 0.0;
        let v3 = |v: &Vec3| v.iter().map(|&x| r6(x)).collect::<Vec<_>>();
        json!({
            "n": self.n_replicas(),
            "seed": self.seed,
            "n_larger": self.n_larger,
            "n_smaller": self.n_smaller,
            "target_atoms": self.target_atoms,
            "epsilons": self.epsilons.iter().map(v3).collect::<Vec<_>>(),
            "rotations": self.rotations.iter().map(|q| q.iter().map(v3).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "pseudo_forces": self.pseudo_forces.iter().map(|f| {
                (0..f.rows()).map(|a| v3(&row3(f, a))).collect::<Vec<_>>()
            }).collect::<Vec<_>>(),
        })
    }
}

/// Assembles the virtual environment for `pair` with `n` target atoms and one
/// replica per target atom.
pub fn build_virtual_geometry(pair: &MoleculePair, n: usize, seed: u64) -> Result<VirtualGeometry> {
    build_virtual_geometry_replicated(pair, n, 1, seed)
}

/// Like [`build_virtual_geometry`] with `per_atom` replicas around every
/// target atom.
pub fn build_virtual_geometry_replicated(
    pair: &MoleculePair,
    n: usize,
    per_atom: usize,
    seed: u64,
) -> Result<VirtualGeometry> {
    if n == 0 {
        return Err(Error::config("n_target_atoms", "must be at least 1"));
    }
    if per_atom == 0 {
        return Err(Error::config("replicas_per_atom", "must be at least 1"));
    }
    let (large, small) = (&pair.larger, &pair.smaller);
    let (n1, n2) = (large.n_atoms(), small.n_atoms());
    let mut rng = seeding::rng_from(&[seed, stream::GEOMETRY]);
    let chosen = select_target_atoms(&large.molecule, n, &mut rng);
    let targets: Vec<usize> = chosen.iter().flat_map(|&t| std::iter::repeat(t).take(per_atom)).collect();
    let m = targets.len();

    let mut coord_blocks = vec![large.coords.clone()];
    let mut epsilons = Vec::with_capacity(m);
    let mut rotations = Vec::with_capacity(m);
    let mut slices = Vec::with_capacity(m);
    for (i, &t) in targets.iter().enumerate() {
        let p = place_replica(small, row3(&large.coords, t), &mut rng);
        coord_blocks.push(p.coords);
        epsilons.push(p.epsilon);
        rotations.push(p.rotation);
        slices.push(n1 + i * n2..n1 + (i + 1) * n2);
    }
    let coords = Mat::vcat(&coord_blocks.iter().collect::<Vec<_>>());
    let mut feature_blocks = vec![&large.molecule.atom_features];
    feature_blocks.extend(std::iter::repeat(&small.molecule.atom_features).take(m));
    let atom_features = Mat::vcat(&feature_blocks);
    let mut symbols = large.molecule.symbols();
    for _ in 0..m {
        symbols.extend(small.molecule.symbols());
    }

    let mut vg = VirtualGeometry {
        coords,
        atom_features,
        target_atoms: targets,
        replica_slices: slices,
        pseudo_forces: Vec::new(),
        epsilons,
        rotations,
        seed,
        n_larger: n1,
        n_smaller: n2,
        symbols,
    };
    vg.pseudo_forces = pseudo_force_targets(&vg)?;
    Ok(vg)
}

/// Unit directions from each replica's target atom to each replica atom.
pub fn pseudo_force_targets(vg: &VirtualGeometry) -> Result<Vec<Mat>> {
    (0..vg.n_replicas())
        .map(|i| {
            let local = vg.replica_local(i);
            let mut f = Mat::zeros(local.len(), 3);
            for (k, d) in local.iter().enumerate() {
                let len = norm(*d);
                if len < FORCE_EPS {
                    return Err(Error::DegenerateGeometry(format!(
                        "replica {i} atom {k} coincides with its target atom"
                    )));
                }
                f.row_mut(k).copy_from_slice(&scaled(*d, 1.0 / len));
            }
            Ok(f)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalFrame {
    /// Orthonormal right-handed axes, one per row.
    pub axes: Rotation,
    pub degenerate_fallback_used: bool,
}

/// Frame from the difference and cross product of two positions given
/// relative to the replica's target atom.
pub fn local_frame(r_k: Vec3, r_l: Vec3) -> LocalFrame {
    let d = sub(r_k, r_l);
    let c = cross(r_k, r_l);
    let (nd, nc) = (norm(d), norm(c));
    if nd >= FRAME_EPS && nc >= FRAME_EPS {
        let a1 = scaled(d, 1.0 / nd);
        let a2 = scaled(c, 1.0 / nc);
        return LocalFrame {
            axes: [a1, a2, cross(a1, a2)],
            degenerate_fallback_used: false,
        };
    }
    let axes = if nd >= FRAME_EPS {
        let a1 = scaled(d, 1.0 / nd);
        let helper = match (0..3).min_by(|&i, &j| a1[i].abs().total_cmp(&a1[j].abs())).unwrap() {
            0 => [1.0, 0.0, 0.0],
            1 => [0.0, 1.0, 0.0],
            _ => [0.0, 0.0, 1.0],
        };
        let h = sub(helper, scaled(a1, dot(helper, a1)));
        let a2 = scaled(h, 1.0 / norm(h));
        [a1, a2, cross(a1, a2)]
    } else {
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    };
    LocalFrame {
        axes,
        degenerate_fallback_used: true,
    }
}

/// Both positions expressed in frame coordinates.
pub fn frame_projection(frame: &LocalFrame, r_k: Vec3, r_l: Vec3) -> [f64; 6] {
    let a = rotate(&frame.axes, r_k);
    let b = rotate(&frame.axes, r_l);
    [a[0], a[1], a[2], b[0], b[1], b[2]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conf(points: &[Vec3]) -> Conformer3D {
        let n = points.len();
        let mol = Molecule2D::new("t", Mat::zeros(n, 2), Mat::zeros(n, n), vec![false; n]).unwrap();
        Conformer3D::new(mol, Mat::from_vec(n, 3, points.iter().flatten().copied().collect())).unwrap()
    }

    #[test]
    fn radius_examples() {
        assert_eq!(molecule_radius(&conf(&[[3.0, -1.0, 2.0]])), 0.0);
        assert_eq!(molecule_radius(&conf(&[[0.0; 3], [2.0, 0.0, 0.0]])), 1.0);
    }

    #[test]
    fn placement_examples() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let p = place_replica_with(&conf(&[[4.0, 4.0, 4.0]]), [0.0; 3], [1.0, 0.0, 0.0], &id);
        assert_eq!(p.coords.row(0), &[0.0, 0.0, 0.0]);
        let p = place_replica_with(&conf(&[[0.0; 3], [2.0, 0.0, 0.0]]), [5.0; 3], [0.0, 0.0, 1.0], &id);
        assert_eq!(centroid(&p.coords), [5.0, 5.0, 6.0]);
    }

    #[test]
    fn frame_worked_example() {
        let f = local_frame([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let expect = [[s, -s, 0.0], [0.0, 0.0, 1.0], [-s, -s, 0.0]];
        for a in 0..3 {
            for b in 0..3 {
                assert!((f.axes[a][b] - expect[a][b]).abs() < 1e-12);
            }
        }
        assert!(!f.degenerate_fallback_used);
    }

    #[test]
    fn collinear_input_uses_fallback() {
        let f = local_frame([1.0, 0.0, 0.0], [2.0, 0.0, 0.0]);
        assert!(f.degenerate_fallback_used);
        assert!((det3(&f.axes) - 1.0).abs() < 1e-12);
        let f = local_frame([1.0, 1.0, 1.0], [1.0, 1.0, 1.0]);
        assert!(f.degenerate_fallback_used);
        assert!(frame_projection(&f, [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn identity_frame_projection() {
        let f = LocalFrame {
            axes: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            degenerate_fallback_used: false,
        };
        assert_eq!(frame_projection(&f, [1.0, 2.0, 3.0], [4.0, 5.0, 6.0]), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn rotations_are_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let q = sample_rotation(&mut rng);
            assert!((det3(&q) - 1.0).abs() < 1e-12);
            for a in 0..3 {
                for b in 0..3 {
                    let d = dot(q[a], q[b]);
                    assert!((d - f64::from(u8::from(a == b))).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn target_selection_rules() {
        let benzene = Molecule2D::from_smiles("c1ccccc1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = select_target_atoms(&benzene, 2, &mut rng);
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|&i| i < 6));
        let m = Molecule2D::from_smiles("CCOc1ccccc1").unwrap();
        let t = select_target_atoms(&m, 5, &mut rng);
        assert_eq!(t.len(), 5);
        assert!(t.iter().all(|&i| !m.aromatic_flags[i]));
    }

    #[test]
    fn pseudo_force_examples() {
        let small = conf(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let large = conf(&[[0.0; 3], [2.0, 0.0, 0.0], [4.0, 0.0, 0.0]]);
        let pair = MoleculePair::new(large, small, None, "t");
        let mut vg = build_virtual_geometry(&pair, 1, 0).unwrap();
        let t = vg.target_atoms[0];
        let base = row3(&vg.coords, t);
        let start = vg.replica_slices[0].start;
        vg.coords.row_mut(start).copy_from_slice(&add(base, [0.0, 0.0, 3.0]));
        assert_eq!(pseudo_force_targets(&vg).unwrap()[0].row(0), &[0.0, 0.0, 1.0]);
        vg.coords.row_mut(start).copy_from_slice(&add(base, [1.0, 1.0, 0.0]));
        let f = pseudo_force_targets(&vg).unwrap();
        assert!((f[0].get(0, 0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-5);
        vg.coords.row_mut(start).copy_from_slice(&base);
        assert!(matches!(pseudo_force_targets(&vg), Err(Error::DegenerateGeometry(_))));
    }
}
