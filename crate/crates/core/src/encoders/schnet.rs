use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;

use super::SchNetConfig;
use crate::nn::{Activation, Linear, Mlp, ParamStore, Session};
use crate::tape::Var;
use crate::Mat;

#[derive(Clone, Debug)]
struct Interaction {
    filter: Mlp,
    lin1: Linear,
    lin2: Linear,
    lin3: Linear,
}

/// Continuous-filter convolution network over interatomic distances.
#[derive(Clone, Debug)]
pub(crate) struct SchNet {
    cfg: SchNetConfig,
    embed: Linear,
    interactions: Vec<Interaction>,
    atomwise: Linear,
}

/// Neighbour pairs within the cutoff. Distance expansions are stored once
/// per unordered pair and shared by both directed edges.
pub(crate) struct RadiusGraph {
    pub n_atoms: usize,
    pub src: Arc<Vec<usize>>,
    pub dst: Arc<Vec<usize>>,
    /// Unordered pair of each directed edge.
    pub pair_of_edge: Arc<Vec<usize>>,
    pub rbf: Mat,
    pub envelope: Mat,
}

impl RadiusGraph {
    pub fn new(coords: &Mat, cfg: &SchNetConfig) -> Self {
        let n = coords.rows();
        let (mut src, mut dst, mut pair_of_edge, mut dist) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (coords.row(i), coords.row(j));
                let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                if d < cfg.cutoff {
                    src.extend([j, i]);
                    dst.extend([i, j]);
                    pair_of_edge.extend([dist.len(), dist.len()]);
                    dist.push(d);
                }
            }
        }
        let k = cfg.gaussians;
        let spacing = cfg.cutoff / (k.max(2) - 1) as f64;
        let gamma = 0.5 / (spacing * spacing);
        let mut rbf = Mat::zeros(dist.len(), k);
        let mut envelope = Mat::zeros(dist.len(), 1);
        for (e, &d) in dist.iter().enumerate() {
            for (g, slot) in rbf.row_mut(e).iter_mut().enumerate() {
                let mu = g as f64 * spacing;
                *slot = (-gamma * (d - mu).powi(2)).exp();
            }
            envelope.set(e, 0, 0.5 * ((PI * d / cfg.cutoff).cos() + 1.0));
        }
        RadiusGraph {
            n_atoms: n,
            src: Arc::new(src),
            dst: Arc::new(dst),
            pair_of_edge: Arc::new(pair_of_edge),
            rbf,
            envelope,
        }
    }
}

impl SchNet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_dim: usize, cfg: &SchNetConfig, rng: &mut R) -> Self {
        let (h, f) = (cfg.hidden, cfg.filters);
        let interactions = (0..cfg.interactions)
            .map(|t| {
                let p = format!("{name}.interaction{t}");
                Interaction {
                    filter: Mlp::new(store, &format!("{p}.filter"), &[cfg.gaussians, f, f], Activation::Ssp, rng),
                    lin1: Linear::new(store, &format!("{p}.lin1"), h, f, false, rng),
                    lin2: Linear::new(store, &format!("{p}.lin2"), f, h, true, rng),
                    lin3: Linear::new(store, &format!("{p}.lin3"), h, h, true, rng),
                }
            })
            .collect();
        SchNet {
            cfg: cfg.clone(),
            embed: Linear::new(store, &format!("{name}.embed"), in_dim, h, true, rng),
            interactions,
            atomwise: Linear::new(store, &format!("{name}.atomwise"), h, h, true, rng),
        }
    }

    pub fn config(&self) -> &SchNetConfig {
        &self.cfg
    }

    /// Sum-pooled atomwise output, `1 × hidden`.
    pub fn forward(&self, s: &mut Session<'_>, features: &Mat, graph: &RadiusGraph) -> Var {
        let x = s.input(features.clone());
        let mut h = self.embed.forward(s, x);
        let rbf = s.input(graph.rbf.clone());
        let env = s.input(graph.envelope.clone());
        for block in &self.interactions {
            let w = block.filter.forward(s, rbf);
            let w = s.tape.mul_col(w, env);
            let w = s.tape.gather(w, graph.pair_of_edge.clone());
            let x1 = block.lin1.forward(s, h);
            let xj = s.tape.gather(x1, graph.src.clone());
            let m = s.tape.mul(xj, w);
            let agg = s.tape.scatter_add(m, graph.dst.clone(), graph.n_atoms);
            let v = block.lin2.forward(s, agg);
            let v = s.tape.ssp(v);
            let v = block.lin3.forward(s, v);
            h = s.tape.add(h, v);
        }
        let o = self.atomwise.forward(s, h);
        let o = s.tape.ssp(o);
        s.tape.sum_rows(o)
    }
}
