//! Parameters, layers and the Adam optimiser.
//!
//! Parameter values are kept at single precision (every stored value is
//! exactly representable as `f32`) while all arithmetic runs in `f64`. A
//! checkpoint written as `f32` therefore reloads bit for bit.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tape::{Gradients, Tape, Var};
use crate::{Error, Mat, Result};

fn to_f32_grid(m: &mut Mat) {
    for x in m.data_mut() {
        *x = f64::from(*x as f32);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Values are rounded to single precision.
    pub fn add(&mut self, name: impl Into<String>, mut value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        to_f32_grid(&mut value);
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform weight of shape `fan_in × fan_out`.
    pub fn glorot<R: Rng + ?Sized>(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut R) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect();
        self.add(name, Mat::from_vec(fan_in, fan_out, data))
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Mat::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.data().len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    /// Replaces a value, rounding it to single precision.
    pub fn set(&mut self, id: ParamId, mut value: Mat) {
        assert_eq!(value.shape(), self.values[id.0].shape(), "shape of {}", self.names[id.0]);
        to_f32_grid(&mut value);
        self.values[id.0] = value;
    }

    /// Replaces a value without rounding, for finite-difference probes.
    pub fn set_exact(&mut self, id: ParamId, value: Mat) {
        assert_eq!(value.shape(), self.values[id.0].shape(), "shape of {}", self.names[id.0]);
        self.values[id.0] = value;
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Copies every parameter whose name starts with `prefix` from `other`.
    /// Names and shapes must match exactly.
    pub fn load_prefix(&mut self, other: &ParamStore, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for i in 0..self.values.len() {
            if !self.names[i].starts_with(prefix) {
                continue;
            }
            let j = *other.index.get(&self.names[i]).ok_or_else(|| {
                Error::Checkpoint(format!("checkpoint lacks parameter {}", self.names[i]))
            })?;
            if other.values[j].shape() != self.values[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?} in the checkpoint but {:?} in the model",
                    self.names[i],
                    other.values[j].shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = other.values[j].clone();
            copied += 1;
        }
        Ok(copied)
    }
}

/// Binds parameters of a store into a tape on first use.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Session {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.tape.leaf(value)
    }

    pub fn value(&self, v: Var) -> &Mat {
        self.tape.value(v)
    }

    /// Adds the parameter gradients found in `grads` into `acc`.
    pub fn collect(&self, grads: &Gradients, acc: &mut GradBuffer) {
        for (i, b) in self.bound.iter().enumerate() {
            if let Some(g) = b.and_then(|v| grads.get(v)) {
                match &mut acc.grads[i] {
                    Some(existing) => existing.add_assign(g),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
    }
}

/// Per-parameter gradient sums. Parameters never touched stay `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer {
    grads: Vec<Option<Mat>>,
}

impl GradBuffer {
    pub fn new(store: &ParamStore) -> Self {
        GradBuffer {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads[id.0].as_ref()
    }

    pub fn merge(&mut self, other: &GradBuffer) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            match (a.as_mut(), b) {
                (Some(x), Some(y)) => x.add_assign(y),
                (None, Some(y)) => *a = Some(y.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale(k);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.grads.iter().flatten().map(Mat::max_abs).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Mat::is_finite)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Ssp,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, s: &mut Session<'_>, x: Var) -> Var {
        match self {
            Activation::Relu => s.tape.relu(x),
            Activation::Ssp => s.tape.ssp(x),
            Activation::Tanh => s.tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut R) -> Self {
        let w = store.glorot(format!("{name}.w"), fan_in, fan_out, rng);
        let b = bias.then(|| store.zeros(format!("{name}.b"), 1, fan_out));
        Linear { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Var {
        let w = s.param(self.w);
        let y = s.tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = s.param(b);
                s.tape.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Stack of linear layers with an activation between consecutive layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Activation,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, widths: &[usize], act: Activation, rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Mlp { layers, act }
    }

    pub fn forward(&self, s: &mut Session<'_>, mut x: Var) -> Var {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(s, x);
            if i + 1 < self.layers.len() {
                x = self.act.apply(s, x);
            }
        }
        x
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }
}

/// Adam without weight decay. Updated values are rounded to single
/// precision.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = |s: &ParamStore| s.values.iter().map(|v| Mat::zeros(v.rows(), v.cols())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(store),
            v: zeros(store),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v, p) = (&mut self.m[i], &mut self.v[i], &mut store.values[i]);
            for (((pj, mj), vj), gj) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                let step = self.lr * (*mj / bc1) / ((*vj / bc2).sqrt() + self.eps);
                *pj = f64::from((*pj - step) as f32);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn values_live_on_the_f32_grid() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let id = store.glorot("w", 5, 7, &mut rng);
        assert!(store.get(id).data().iter().all(|&x| f64::from(x as f32) == x));
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(store.get(id).max_abs() <= bound);
    }

    #[test]
    fn adam_fits_a_linear_map() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = Linear::new(&mut store, "lin", 3, 1, true, &mut rng);
        let x = Mat::from_rows(&[[1.0, 0.0, 2.0], [0.5, -1.0, 0.0], [0.0, 1.0, 1.0], [2.0, 2.0, -1.0]]);
        let y = Mat::from_rows(&[[3.0], [-0.5], [2.5], [0.0]]);
        let mut adam = Adam::new(&store, 0.05);
        let mut last = f64::INFINITY;
        for _ in 0..400 {
            let mut s = Session::new(&store);
            let xv = s.input(x.clone());
            let yv = s.input(y.clone());
            let p = lin.forward(&mut s, xv);
            let d = s.tape.sub(p, yv);
            let sq = s.tape.mul(d, d);
            let loss = s.tape.sum_all(sq);
            last = s.value(loss).get(0, 0);
            let g = s.tape.backward_scalar(loss);
            let mut buf = GradBuffer::new(&store);
            s.collect(&g, &mut buf);
            adam.step(&mut store, &buf);
        }
        assert!(last < 1e-3, "loss {last}");
    }

    #[test]
    fn load_prefix_checks_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = ParamStore::new();
        a.glorot("enc.w", 2, 2, &mut rng);
        a.glorot("head.w", 2, 1, &mut rng);
        let mut b = ParamStore::new();
        b.glorot("enc.w", 2, 2, &mut rng);
        b.glorot("head.w", 2, 1, &mut rng);
        assert_eq!(b.load_prefix(&a, "enc.").unwrap(), 1);
        assert_eq!(b.get(ParamId(0)), a.get(ParamId(0)));
        assert_ne!(b.get(ParamId(1)), a.get(ParamId(1)));
        let mut c = ParamStore::new();
        c.glorot("enc.w", 3, 2, &mut rng);
        assert!(c.load_prefix(&a, "enc.").is_err());
    }
}
