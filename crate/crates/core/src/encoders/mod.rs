//! Trainable networks: the 2D pair encoder with cross-molecule interaction,
//! the invariant 3D environment encoder and the equivariant force head.

mod force;
mod graph2d;
mod schnet;

use serde::{Deserialize, Serialize};

use crate::data::{Molecule2D, ATOM_FEATURES};
use crate::geometry::VirtualGeometry;
use crate::nn::{Activation, Mlp, ParamStore, Session};
use crate::seeding::{self, stream};
use crate::tape::Var;
use crate::{Error, Mat, Result};

pub(crate) use force::{ForceHead, ReplicaGraph};
pub(crate) use graph2d::{GraphEncoder, Set2Set};
pub(crate) use schnet::{RadiusGraph, SchNet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Mpnn3,
    Gin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchNetConfig {
    pub hidden: usize,
    pub filters: usize,
    pub interactions: usize,
    /// Neighbour cutoff in Ångström.
    pub cutoff: f64,
    pub gaussians: usize,
}

impl Default for SchNetConfig {
    fn default() -> Self {
        SchNetConfig {
            hidden: 128,
            filters: 128,
            interactions: 6,
            cutoff: 5.0,
            gaussians: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForceHeadConfig {
    pub layers: usize,
    pub coeff_dim: usize,
}

impl Default for ForceHeadConfig {
    fn default() -> Self {
        ForceHeadConfig { layers: 2, coeff_dim: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    /// Atom embedding width `d`.
    pub hidden_dim: usize,
    pub gnn_layers: usize,
    pub projection_dim: usize,
    pub set2set_steps: usize,
    pub atom_features: usize,
    pub schnet: SchNetConfig,
    pub force_head: ForceHeadConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            backbone: Backbone::Mpnn3,
            hidden_dim: 56,
            gnn_layers: 3,
            projection_dim: 128,
            set2set_steps: 2,
            atom_features: ATOM_FEATURES,
            schnet: SchNetConfig::default(),
            force_head: ForceHeadConfig::default(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("encoder.hidden_dim", self.hidden_dim),
            ("encoder.gnn_layers", self.gnn_layers),
            ("encoder.projection_dim", self.projection_dim),
            ("encoder.set2set_steps", self.set2set_steps),
            ("encoder.atom_features", self.atom_features),
            ("encoder.schnet.hidden", self.schnet.hidden),
            ("encoder.schnet.filters", self.schnet.filters),
            ("encoder.schnet.interactions", self.schnet.interactions),
            ("encoder.schnet.gaussians", self.schnet.gaussians),
            ("encoder.force_head.layers", self.force_head.layers),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(self.schnet.cutoff > 0.0 && self.schnet.cutoff.is_finite()) {
            return Err(Error::config("encoder.schnet.cutoff", "must be a positive length"));
        }
        if self.force_head.coeff_dim != 3 {
            return Err(Error::config("encoder.force_head.coeff_dim", "must be exactly 3"));
        }
        Ok(())
    }

    /// Width of each molecule's graph embedding (Set2Set over `2d` inputs).
    pub fn graph_dim(&self) -> usize {
        4 * self.hidden_dim
    }

    pub fn pair_dim(&self) -> usize {
        8 * self.hidden_dim
    }
}

/// Prefix shared by every parameter of the 2D pair encoder.
pub const ENCODER_PREFIX: &str = "encoder.";

/// All trainable networks with their parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: EncoderConfig,
    pub params: ParamStore,
    enc1: GraphEncoder,
    enc2: GraphEncoder,
    readout1: Set2Set,
    readout2: Set2Set,
    proj_2d: Mlp,
    schnet: SchNet,
    proj_3d: Mlp,
    force: ForceHead,
    head: Mlp,
}

/// Tape handles of one pair encoding.
#[derive(Clone, Copy, Debug)]
pub struct PairVars {
    pub e1: Var,
    pub e2: Var,
    pub interaction: Var,
    pub h1: Var,
    pub h2: Var,
    pub z1: Var,
    pub z2: Var,
    pub z_pair: Var,
}

/// Values of one pair encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct PairEncoderOutput {
    pub e1: Mat,
    pub e2: Mat,
    pub interaction: Mat,
    pub h1: Mat,
    pub h2: Mat,
    pub z1: Mat,
    pub z2: Mat,
    pub z_pair: Mat,
}

impl Model {
    /// Builds a model with freshly initialised parameters.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeding::rng_from(&[seed, stream::INIT]);
        let mut p = ParamStore::new();
        let c = &config;
        let d = c.hidden_dim;
        let enc1 = GraphEncoder::new(&mut p, "encoder.g1", c.backbone, c.atom_features, d, c.gnn_layers, &mut rng);
        let enc2 = GraphEncoder::new(&mut p, "encoder.g2", c.backbone, c.atom_features, d, c.gnn_layers, &mut rng);
        let readout1 = Set2Set::new(&mut p, "encoder.readout1", 2 * d, c.set2set_steps, &mut rng);
        let readout2 = Set2Set::new(&mut p, "encoder.readout2", 2 * d, c.set2set_steps, &mut rng);
        let proj = c.projection_dim;
        let proj_2d = Mlp::new(&mut p, "proj2d", &[c.pair_dim(), proj, proj], Activation::Relu, &mut rng);
        let schnet = SchNet::new(&mut p, "schnet", c.atom_features, &c.schnet, &mut rng);
        let proj_3d = Mlp::new(&mut p, "proj3d", &[c.schnet.hidden, proj, proj], Activation::Relu, &mut rng);
        let force = ForceHead::new(&mut p, "force", d, c.force_head.layers, &mut rng);
        let head = Mlp::new(&mut p, "head", &[c.pair_dim(), d, 1], Activation::Relu, &mut rng);
        Ok(Model {
            config,
            params: p,
            enc1,
            enc2,
            readout1,
            readout2,
            proj_2d,
            schnet,
            proj_3d,
            force,
            head,
        })
    }

    /// Builds a model for `config` and takes every parameter from `params`.
    pub fn from_params(config: EncoderConfig, params: &ParamStore) -> Result<Self> {
        let mut m = Model::new(config, 0)?;
        m.params.load_prefix(params, "")?;
        Ok(m)
    }

    /// Parameters of the final layer of the property head.
    pub fn head_output_layer(&self) -> (crate::nn::ParamId, Option<crate::nn::ParamId>) {
        let last = self.head.layers.last().expect("head has layers");
        (last.w, last.b)
    }

    fn check_features(&self, mol: &Molecule2D) -> Result<()> {
        if mol.n_features() != self.config.atom_features {
            return Err(Error::config(
                "encoder.atom_features",
                format!(
                    "model expects {} atom features but {} has {}",
                    self.config.atom_features,
                    mol.id,
                    mol.n_features()
                ),
            ));
        }
        Ok(())
    }

    /// Records the pair encoder on the session tape.
    pub fn pair_forward(&self, s: &mut Session<'_>, g1: &Molecule2D, g2: &Molecule2D) -> Result<PairVars> {
        self.check_features(g1)?;
        self.check_features(g2)?;
        let e1 = self.enc1.forward(s, &g1.atom_features, &g1.adjacency);
        let e2 = self.enc2.forward(s, &g2.atom_features, &g2.adjacency);
        let n1 = s.tape.normalize_rows(e1);
        let n2 = s.tape.normalize_rows(e2);
        let interaction = s.tape.matmul_nt(n1, n2);
        let ie2 = s.tape.matmul(interaction, e2);
        let it = s.tape.transpose(interaction);
        let ite1 = s.tape.matmul(it, e1);
        let h1 = s.tape.concat_cols(&[e1, ie2]);
        let h2 = s.tape.concat_cols(&[e2, ite1]);
        let z1 = self.readout1.forward(s, h1);
        let z2 = self.readout2.forward(s, h2);
        let z_pair = s.tape.concat_cols(&[z1, z2]);
        Ok(PairVars {
            e1,
            e2,
            interaction,
            h1,
            h2,
            z1,
            z2,
            z_pair,
        })
    }

    /// Projection of `z_pair` into the contrastive space.
    pub fn project_2d(&self, s: &mut Session<'_>, z_pair: Var) -> Var {
        self.proj_2d.forward(s, z_pair)
    }

    /// Projected 3D embedding of a virtual geometry.
    pub fn geometry_forward(&self, s: &mut Session<'_>, vg: &VirtualGeometry) -> Result<Var> {
        if vg.n_atoms() < 2 {
            return Err(Error::DegenerateGeometry(format!(
                "3D encoding needs at least 2 atoms, got {}",
                vg.n_atoms()
            )));
        }
        Ok(self.pool_3d(s, &vg.coords, &vg.atom_features))
    }

    pub(crate) fn pool_3d(&self, s: &mut Session<'_>, coords: &Mat, features: &Mat) -> Var {
        let graph = RadiusGraph::new(coords, self.schnet.config());
        let pooled = self.schnet.forward(s, features, &graph);
        self.proj_3d.forward(s, pooled)
    }

    /// Unprojected sum-pooled SchNet output of arbitrary coordinates.
    pub fn schnet_pooled(&self, coords: &Mat, features: &Mat) -> Mat {
        let mut s = Session::new(&self.params);
        let graph = RadiusGraph::new(coords, self.schnet.config());
        let v = self.schnet.forward(&mut s, features, &graph);
        s.value(v).clone()
    }

    /// Predicted forces for every replica atom, stacked `m·N2 × 3`.
    pub fn forces_forward(&self, s: &mut Session<'_>, h1: Var, h2: Var, vg: &VirtualGeometry) -> Var {
        let graph = ReplicaGraph::new(vg);
        self.force.forward(s, h1, h2, &graph)
    }

    /// Raw property-head output (a logit for classification).
    pub fn head_forward(&self, s: &mut Session<'_>, z_pair: Var) -> Var {
        self.head.forward(s, z_pair)
    }
}

/// Cosine similarity of every row of `e1` with every row of `e2`. Rows with
/// zero norm have zero similarity to everything.
pub fn interaction_matrix(e1: &Mat, e2: &Mat) -> Mat {
    let unit = |m: &Mat| {
        let mut out = m.clone();
        for r in 0..m.rows() {
            let row = out.row_mut(r);
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            let inv = if n > 1e-12 { 1.0 / n } else { 0.0 };
            row.iter_mut().for_each(|x| *x *= inv);
        }
        out
    };
    unit(e1).matmul(&unit(e2).transpose())
}

/// Encodes a molecule pair with the 2D interaction encoder.
pub fn encode_pair_2d(model: &Model, g1: &Molecule2D, g2: &Molecule2D) -> Result<PairEncoderOutput> {
    let mut s = Session::new(&model.params);
    let v = model.pair_forward(&mut s, g1, g2)?;
    let get = |x: Var| s.value(x).clone();
    Ok(PairEncoderOutput {
        e1: get(v.e1),
        e2: get(v.e2),
        interaction: get(v.interaction),
        h1: get(v.h1),
        h2: get(v.h2),
        z1: get(v.z1),
        z2: get(v.z2),
        z_pair: get(v.z_pair),
    })
}

/// Invariant embedding of a virtual geometry, length `projection_dim`.
pub fn encode_geometry_3d(model: &Model, vg: &VirtualGeometry) -> Result<Mat> {
    let mut s = Session::new(&model.params);
    let v = model.geometry_forward(&mut s, vg)?;
    Ok(s.value(v).clone())
}

/// Forces for every replica: `h2` holds the fused embeddings of the smaller
/// molecule and `h1_targets` one fused embedding per replica's target atom.
pub fn predict_forces(model: &Model, h2: &Mat, h1_targets: &Mat, vg: &VirtualGeometry) -> Result<Vec<Mat>> {
    let width = 2 * model.config.hidden_dim;
    if h2.shape() != (vg.n_smaller, width) || h1_targets.shape() != (vg.n_replicas(), width) {
        return Err(Error::Contract(format!(
            "predict_forces: h2 {:?} and h1_targets {:?} do not fit {} replicas of {} atoms with width {width}",
            h2.shape(),
            h1_targets.shape(),
            vg.n_replicas(),
            vg.n_smaller
        )));
    }
    let mut s = Session::new(&model.params);
    let h1 = s.input(h1_targets.clone());
    let h2 = s.input(h2.clone());
    let graph = ReplicaGraph::new(vg);
    let graph = ReplicaGraph {
        target_of_node: local_targets(vg),
        ..graph
    };
    let f = model.force.forward(&mut s, h1, h2, &graph);
    Ok(split_forces(s.value(f), vg.n_smaller))
}

fn local_targets(vg: &VirtualGeometry) -> std::sync::Arc<Vec<usize>> {
    std::sync::Arc::new((0..vg.n_replicas()).flat_map(|i| std::iter::repeat(i).take(vg.n_smaller)).collect())
}

/// Splits a stacked `m·N2 × 3` force matrix into per-replica blocks.
pub fn split_forces(stacked: &Mat, n2: usize) -> Vec<Mat> {
    (0..stacked.rows() / n2.max(1))
        .map(|i| Mat::from_vec(n2, 3, stacked.data()[i * n2 * 3..(i + 1) * n2 * 3].to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            hidden_dim: 6,
            projection_dim: 8,
            schnet: SchNetConfig {
                hidden: 8,
                filters: 8,
                interactions: 2,
                cutoff: 5.0,
                gaussians: 10,
            },
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn shapes_follow_the_width_arithmetic() {
        let model = Model::new(EncoderConfig::default(), 0).unwrap();
        let g1 = Molecule2D::from_smiles("CCO").unwrap();
        let g2 = Molecule2D::from_smiles("CN").unwrap();
        let out = encode_pair_2d(&model, &g1, &g2).unwrap();
        assert_eq!(out.e1.shape(), (3, 56));
        assert_eq!(out.interaction.shape(), (3, 2));
        assert_eq!(out.h1.shape(), (3, 112));
        assert_eq!(out.z1.shape(), (1, 224));
        assert_eq!(out.z_pair.shape(), (1, 448));
    }

    #[test]
    fn fused_embeddings_are_exact() {
        let model = Model::new(tiny(), 1).unwrap();
        let g1 = Molecule2D::from_smiles("c1ccccc1O").unwrap();
        let g2 = Molecule2D::from_smiles("CC(C)=O").unwrap();
        let out = encode_pair_2d(&model, &g1, &g2).unwrap();
        let expect_h1 = Mat::hcat(&[&out.e1, &out.interaction.matmul(&out.e2)]);
        let expect_h2 = Mat::hcat(&[&out.e2, &out.interaction.transpose().matmul(&out.e1)]);
        assert_eq!(out.h1, expect_h1);
        assert_eq!(out.h2, expect_h2);
        assert!(out.interaction.data().iter().all(|x| (-1.0 - 1e-12..=1.0 + 1e-12).contains(x)));
    }

    #[test]
    fn interaction_matrix_examples() {
        let i2 = Mat::identity(2);
        assert_eq!(interaction_matrix(&i2, &i2), i2);
        let a = Mat::from_rows(&[[1.0, 0.0], [0.0, 0.0]]);
        let b = Mat::from_rows(&[[0.0, 3.0]]);
        assert_eq!(interaction_matrix(&a, &b), Mat::zeros(2, 1));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = tiny();
        c.force_head.coeff_dim = 4;
        assert!(matches!(Model::new(c, 0), Err(Error::Config { .. })));
        let mut c = tiny();
        c.schnet.cutoff = 0.0;
        assert!(Model::new(c, 0).is_err());
    }

    #[test]
    fn feature_width_mismatch_is_a_config_error() {
        let mut c = tiny();
        c.atom_features = 7;
        let model = Model::new(c, 0).unwrap();
        let g = Molecule2D::from_smiles("CC").unwrap();
        assert!(matches!(encode_pair_2d(&model, &g, &g), Err(Error::Config { .. })));
    }
}
