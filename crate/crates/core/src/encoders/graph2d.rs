use rand::Rng;

use super::Backbone;
use crate::nn::{Activation, Linear, Mlp, ParamStore, Session};
use crate::tape::Var;
use crate::Mat;

/// Per-layer weights of a 2D message-passing backbone.
#[derive(Clone, Debug)]
pub(crate) enum GraphLayer {
    /// `h' = h·W_self + (A·h)·W_nb + b`
    Mpnn { self_w: Linear, nb_w: Linear },
    /// `h' = MLP(h + A·h)`
    Gin { mlp: Mlp },
}

#[derive(Clone, Debug)]
pub(crate) struct GraphEncoder {
    layers: Vec<GraphLayer>,
}

impl GraphEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        backbone: Backbone,
        in_dim: usize,
        hidden: usize,
        depth: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..depth)
            .map(|l| {
                let fan_in = if l == 0 { in_dim } else { hidden };
                let prefix = format!("{name}.layer{l}");
                match backbone {
                    Backbone::Mpnn3 => GraphLayer::Mpnn {
                        self_w: Linear::new(store, &format!("{prefix}.self"), fan_in, hidden, true, rng),
                        nb_w: Linear::new(store, &format!("{prefix}.nb"), fan_in, hidden, false, rng),
                    },
                    Backbone::Gin => GraphLayer::Gin {
                        mlp: Mlp::new(store, &format!("{prefix}.mlp"), &[fan_in, hidden, hidden], Activation::Relu, rng),
                    },
                }
            })
            .collect();
        GraphEncoder { layers }
    }

    /// Atom embeddings `N×d`. Every layer but the last is followed by ReLU.
    pub fn forward(&self, s: &mut Session<'_>, features: &Mat, adjacency: &Mat) -> Var {
        let mut h = s.input(features.clone());
        let adj = s.input(adjacency.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let nb = s.tape.matmul(adj, h);
            h = match layer {
                GraphLayer::Mpnn { self_w, nb_w } => {
                    let a = self_w.forward(s, h);
                    let b = nb_w.forward(s, nb);
                    s.tape.add(a, b)
                }
                GraphLayer::Gin { mlp } => {
                    let sum = s.tape.add(h, nb);
                    mlp.forward(s, sum)
                }
            };
            if l + 1 < self.layers.len() {
                h = s.tape.relu(h);
            }
        }
        h
    }
}

/// Set2Set readout with a single-layer LSTM. Output width is twice the
/// input width.
#[derive(Clone, Debug)]
pub(crate) struct Set2Set {
    width: usize,
    steps: usize,
    wx: Linear,
    wh: Linear,
}

impl Set2Set {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, steps: usize, rng: &mut R) -> Self {
        Set2Set {
            width,
            steps,
            wx: Linear::new(store, &format!("{name}.lstm.x"), 2 * width, 4 * width, true, rng),
            wh: Linear::new(store, &format!("{name}.lstm.h"), width, 4 * width, false, rng),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Var {
        let w = self.width;
        let mut q_star = s.input(Mat::zeros(1, 2 * w));
        let mut h = s.input(Mat::zeros(1, w));
        let mut c = s.input(Mat::zeros(1, w));
        for _ in 0..self.steps {
            let gx = self.wx.forward(s, q_star);
            let gh = self.wh.forward(s, h);
            let gates = s.tape.add(gx, gh);
            let i = s.tape.slice_cols(gates, 0, w);
            let f = s.tape.slice_cols(gates, w, 2 * w);
            let g = s.tape.slice_cols(gates, 2 * w, 3 * w);
            let o = s.tape.slice_cols(gates, 3 * w, 4 * w);
            let (i, f, o) = (s.tape.sigmoid(i), s.tape.sigmoid(f), s.tape.sigmoid(o));
            let g = s.tape.tanh(g);
            let fc = s.tape.mul(f, c);
            let ig = s.tape.mul(i, g);
            c = s.tape.add(fc, ig);
            let tc = s.tape.tanh(c);
            h = s.tape.mul(o, tc);
            let scores = s.tape.matmul_nt(h, x);
            let attn = s.tape.softmax_rows(scores);
            let r = s.tape.matmul(attn, x);
            q_star = s.tape.concat_cols(&[h, r]);
        }
        q_star
    }
}
