use std::sync::Arc;

use rand::Rng;

use crate::geometry::{frame_projection, local_frame, VirtualGeometry};
use crate::nn::{Activation, Linear, Mlp, ParamStore, Session};
use crate::tape::{EdgeFrames, Var};
use crate::Mat;

#[derive(Clone, Debug)]
struct MessageLayer {
    self_w: Linear,
    msg_w: Linear,
}

/// Equivariant force head: invariant edge coefficients combine the axes of
/// per-edge local frames.
#[derive(Clone, Debug)]
pub(crate) struct ForceHead {
    edge_2d: Mlp,
    edge_3d: Mlp,
    node_in: Linear,
    layers: Vec<MessageLayer>,
    edge_out: Mlp,
}

/// Complete graphs over every replica of the smaller molecule, all replicas
/// stacked into one node set of `m·N2` rows.
pub(crate) struct ReplicaGraph {
    pub n_nodes: usize,
    /// Smaller-molecule atom index of every node.
    pub atom_of_node: Arc<Vec<usize>>,
    /// Larger-molecule target atom of every node.
    pub target_of_node: Arc<Vec<usize>>,
    /// Directed edge `(k, l)` as global node indices.
    pub k: Arc<Vec<usize>>,
    pub l: Arc<Vec<usize>>,
    /// Within-molecule pair index of every edge, into `pair_k`/`pair_l`.
    pub pair_of_edge: Arc<Vec<usize>>,
    pub pair_k: Arc<Vec<usize>>,
    pub pair_l: Arc<Vec<usize>>,
    pub frames: EdgeFrames,
    pub projections: Mat,
}

impl ReplicaGraph {
    pub fn new(vg: &VirtualGeometry) -> Self {
        let n2 = vg.n_smaller;
        let m = vg.n_replicas();
        let mut pair_k = Vec::new();
        let mut pair_l = Vec::new();
        for k in 0..n2 {
            for l in 0..n2 {
                if k != l {
                    pair_k.push(k);
                    pair_l.push(l);
                }
            }
        }
        let per = pair_k.len();
        let (mut ek, mut el, mut pair_of_edge) = (Vec::new(), Vec::new(), Vec::new());
        let mut frames = Vec::with_capacity(m * per);
        let mut projections = Mat::zeros(m * per, 6);
        for i in 0..m {
            let local = vg.replica_local(i);
            for p in 0..per {
                let (k, l) = (pair_k[p], pair_l[p]);
                let e = ek.len();
                ek.push(i * n2 + k);
                el.push(i * n2 + l);
                pair_of_edge.push(p);
                let frame = local_frame(local[k], local[l]);
                let a = frame.axes;
                frames.push([a[0][0], a[0][1], a[0][2], a[1][0], a[1][1], a[1][2], a[2][0], a[2][1], a[2][2]]);
                projections.row_mut(e).copy_from_slice(&frame_projection(&frame, local[k], local[l]));
            }
        }
        ReplicaGraph {
            n_nodes: m * n2,
            atom_of_node: Arc::new((0..m).flat_map(|_| 0..n2).collect()),
            target_of_node: Arc::new(vg.target_atoms.iter().flat_map(|&t| std::iter::repeat(t).take(n2)).collect()),
            k: Arc::new(ek),
            l: Arc::new(el),
            pair_of_edge: Arc::new(pair_of_edge),
            pair_k: Arc::new(pair_k),
            pair_l: Arc::new(pair_l),
            frames: Arc::new(frames),
            projections,
        }
    }
}

impl ForceHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, layers: usize, rng: &mut R) -> Self {
        ForceHead {
            edge_2d: Mlp::new(store, &format!("{name}.edge2d"), &[4 * d, d, d], Activation::Relu, rng),
            edge_3d: Mlp::new(store, &format!("{name}.edge3d"), &[6, d, d], Activation::Relu, rng),
            node_in: Linear::new(store, &format!("{name}.node_in"), 4 * d, d, true, rng),
            layers: (0..layers)
                .map(|t| MessageLayer {
                    self_w: Linear::new(store, &format!("{name}.mp{t}.self"), d, d, true, rng),
                    msg_w: Linear::new(store, &format!("{name}.mp{t}.msg"), d, d, false, rng),
                })
                .collect(),
            edge_out: Mlp::new(store, &format!("{name}.edge_out"), &[3 * d, d, 3], Activation::Relu, rng),
        }
    }

    /// Predicted forces, one row per replica atom (`m·N2 × 3`).
    pub fn forward(&self, s: &mut Session<'_>, h1: Var, h2: Var, g: &ReplicaGraph) -> Var {
        if g.k.is_empty() {
            return s.input(Mat::zeros(g.n_nodes, 3));
        }
        let hk = s.tape.gather(h2, g.pair_k.clone());
        let hl = s.tape.gather(h2, g.pair_l.clone());
        let pair_in = s.tape.concat_cols(&[hk, hl]);
        let e2d = self.edge_2d.forward(s, pair_in);
        let e2d = s.tape.gather(e2d, g.pair_of_edge.clone());
        let proj = s.input(g.projections.clone());
        let e3d = self.edge_3d.forward(s, proj);
        let e = s.tape.add(e2d, e3d);

        let xs = s.tape.gather(h2, g.atom_of_node.clone());
        let xt = s.tape.gather(h1, g.target_of_node.clone());
        let x = s.tape.concat_cols(&[xs, xt]);
        let mut h = self.node_in.forward(s, x);
        for layer in &self.layers {
            let msg = layer.msg_w.forward(s, h);
            let msg = s.tape.gather(msg, g.l.clone());
            let msg = s.tape.mul(msg, e);
            let agg = s.tape.scatter_add(msg, g.k.clone(), g.n_nodes);
            let own = layer.self_w.forward(s, h);
            let sum = s.tape.add(own, agg);
            h = s.tape.relu(sum);
        }
        let nk = s.tape.gather(h, g.k.clone());
        let nl = s.tape.gather(h, g.l.clone());
        let edge_in = s.tape.concat_cols(&[nk, nl, e]);
        let coef = self.edge_out.forward(s, edge_in);
        s.tape.frame_combine(coef, g.frames.clone(), g.k.clone(), g.n_nodes)
    }
}
