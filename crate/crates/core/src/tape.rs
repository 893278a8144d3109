//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Values are kept
//! for the backward sweep, so a tape should be dropped as soon as its
//! gradients have been read.

use std::sync::Arc;

use crate::tensor::{gemm, GemmOperand, Mat};

const LN_2: f64 = std::f64::consts::LN_2;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant 3×3 frames (row-major axes) attached to edges for [`Tape::frame_combine`].
pub type EdgeFrames = Arc<Vec<[f64; 9]>>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softplus(Var),
    ShiftedSoftplus(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Arc<Vec<usize>>),
    ScatterAdd(Var, Arc<Vec<usize>>),
    SumRows(Var),
    SumAll(Var),
    Transpose(Var),
    NormalizeRows(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    FrameCombine(Var, EdgeFrames, Arc<Vec<usize>>),
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Mat>,
    ops: Vec<Op>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads[v.0].take()
    }
}

fn map(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    Mat::from_vec(m.rows(), m.cols(), m.data().iter().map(|&x| f(x)).collect())
}

fn zip_map(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    Mat::from_vec(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

const NORM_EPS: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.values[v.0].shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.values[a.0].matmul(&self.values[b.0]);
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        let mut out = Mat::zeros(va.rows(), vb.rows());
        gemm(GemmOperand::plain(va), GemmOperand::t(vb), &mut out, 0.0);
        self.push(out, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(&self.values[a.0], &self.values[b.0], |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(&self.values[a.0], &self.values[b.0], |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(&self.values[a.0], &self.values[b.0], |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// Adds the `1×m` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(vb.shape(), (1, va.cols()), "add_row expects a 1×m bias");
        let mut out = va.clone();
        let bias = vb.row(0);
        for r in 0..out.rows() {
            for (x, b) in out.row_mut(r).iter_mut().zip(bias) {
                *x += b;
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    /// Scales row `i` of `a` by `s[i]`, where `s` is `n×1`.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Var {
        let (va, vs) = (&self.values[a.0], &self.values[s.0]);
        assert_eq!(vs.shape(), (va.rows(), 1), "mul_col expects an n×1 scale");
        let mut out = va.clone();
        for r in 0..out.rows() {
            let k = vs.get(r, 0);
            for x in out.row_mut(r) {
                *x *= k;
            }
        }
        self.push(out, Op::MulCol(a, s))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = map(&self.values[a.0], |x| x * k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = map(&self.values[a.0], |x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = map(&self.values[a.0], softplus);
        self.push(out, Op::Softplus(a))
    }

    /// `softplus(x) - ln 2`, zero at the origin.
    pub fn ssp(&mut self, a: Var) -> Var {
        let out = map(&self.values[a.0], |x| softplus(x) - LN_2);
        self.push(out, Op::ShiftedSoftplus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = map(&self.values[a.0], f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = map(&self.values[a.0], sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = map(&self.values[a.0], f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = map(&self.values[a.0], f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|v| &self.values[v.0]).collect();
        let out = Mat::hcat(&mats);
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|v| &self.values[v.0]).collect();
        let out = Mat::vcat(&mats);
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `[start, end)` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let va = &self.values[a.0];
        assert!(start <= end && end <= va.cols(), "slice_cols out of range");
        let mut out = Mat::zeros(va.rows(), end - start);
        for r in 0..va.rows() {
            out.row_mut(r).copy_from_slice(&va.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    /// Row `i` of the output is row `idx[i]` of `a`.
    pub fn gather(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Var {
        let out = self.values[a.0].select_rows(&idx);
        self.push(out, Op::Gather(a, idx))
    }

    /// Sums row `i` of `a` into output row `idx[i]`; the output has `n` rows.
    pub fn scatter_add(&mut self, a: Var, idx: Arc<Vec<usize>>, n: usize) -> Var {
        let va = &self.values[a.0];
        assert_eq!(va.rows(), idx.len(), "scatter_add index length mismatch");
        let mut out = Mat::zeros(n, va.cols());
        for (r, &dst) in idx.iter().enumerate() {
            for (o, x) in out.row_mut(dst).iter_mut().zip(va.row(r)) {
                *o += x;
            }
        }
        self.push(out, Op::ScatterAdd(a, idx))
    }

    /// Column sums as a `1×m` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let va = &self.values[a.0];
        let mut out = Mat::zeros(1, va.cols());
        for r in 0..va.rows() {
            for (o, x) in out.row_mut(0).iter_mut().zip(va.row(r)) {
                *o += x;
            }
        }
        self.push(out, Op::SumRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.values[a.0].sum();
        self.push(Mat::filled(1, 1, s), Op::SumAll(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.values[a.0].transpose();
        self.push(out, Op::Transpose(a))
    }

    /// Divides each row by its L2 norm. Rows with (near) zero norm map to zero.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let va = &self.values[a.0];
        let mut out = va.clone();
        for r in 0..out.rows() {
            let n = row_norm(va.row(r));
            let row = out.row_mut(r);
            if n > NORM_EPS {
                row.iter_mut().for_each(|x| *x /= n);
            } else {
                row.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        self.push(out, Op::NormalizeRows(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.values[a.0].clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.values[a.0].clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    /// Combines per-edge coefficients with constant per-edge frames:
    /// `out[dst[e]] += Σ_a coef[e, a] · axis_a(frames[e])`. Output is `n×3`.
    pub fn frame_combine(
        &mut self,
        coef: Var,
        frames: EdgeFrames,
        dst: Arc<Vec<usize>>,
        n: usize,
    ) -> Var {
        let vc = &self.values[coef.0];
        assert_eq!(vc.shape(), (frames.len(), 3), "frame_combine coefficient shape");
        assert_eq!(dst.len(), frames.len(), "frame_combine destination length");
        let mut out = Mat::zeros(n, 3);
        for (e, f) in frames.iter().enumerate() {
            let c = vc.row(e);
            let o = out.row_mut(dst[e]);
            for (j, oj) in o.iter_mut().enumerate() {
                *oj += c[0] * f[j] + c[1] * f[3 + j] + c[2] * f[6 + j];
            }
        }
        self.push(out, Op::FrameCombine(coef, frames, dst))
    }

    /// Runs the backward sweep from the given seed gradients.
    pub fn backward(&self, seeds: &[(Var, Mat)]) -> Gradients {
        let mut grads: Vec<Option<Mat>> = vec![None; self.values.len()];
        for (v, g) in seeds {
            assert_eq!(g.shape(), self.values[v.0].shape(), "seed shape mismatch");
            accumulate(&mut grads, *v, g.clone());
        }
        let top = seeds.iter().map(|(v, _)| v.0).max().unwrap_or(0);
        for i in (0..=top.min(self.values.len().saturating_sub(1))).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    /// Backward from a scalar `1×1` output with unit seed.
    pub fn backward_scalar(&self, out: Var) -> Gradients {
        self.backward(&[(out, Mat::filled(1, 1, 1.0))])
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let out = &self.values[i];
        match &self.ops[i] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                let mut da = Mat::zeros(va.rows(), va.cols());
                gemm(GemmOperand::plain(g), GemmOperand::t(vb), &mut da, 0.0);
                accumulate(grads, *a, da);
                let mut db = Mat::zeros(vb.rows(), vb.cols());
                gemm(GemmOperand::t(va), GemmOperand::plain(g), &mut db, 0.0);
                accumulate(grads, *b, db);
            }
            Op::MatMulNt(a, b) => {
                let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                let mut da = Mat::zeros(va.rows(), va.cols());
                gemm(GemmOperand::plain(g), GemmOperand::plain(vb), &mut da, 0.0);
                accumulate(grads, *a, da);
                let mut db = Mat::zeros(vb.rows(), vb.cols());
                gemm(GemmOperand::t(g), GemmOperand::plain(va), &mut db, 0.0);
                accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, map(g, |x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                accumulate(grads, *a, zip_map(g, vb, |x, y| x * y));
                accumulate(grads, *b, zip_map(g, va, |x, y| x * y));
            }
            Op::AddRow(a, b) => {
                accumulate(grads, *a, g.clone());
                let mut db = Mat::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, x) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                accumulate(grads, *b, db);
            }
            Op::MulCol(a, s) => {
                let (va, vs) = (&self.values[a.0], &self.values[s.0]);
                let mut da = g.clone();
                let mut ds = Mat::zeros(vs.rows(), 1);
                for r in 0..g.rows() {
                    let k = vs.get(r, 0);
                    da.row_mut(r).iter_mut().for_each(|x| *x *= k);
                    let dot: f64 = g.row(r).iter().zip(va.row(r)).map(|(x, y)| x * y).sum();
                    ds.set(r, 0, dot);
                }
                accumulate(grads, *a, da);
                accumulate(grads, *s, ds);
            }
            Op::Scale(a, k) => accumulate(grads, *a, map(g, |x| x * k)),
            Op::Relu(a) => {
                accumulate(grads, *a, zip_map(g, out, |x, y| if y > 0.0 { x } else { 0.0 }))
            }
            Op::Softplus(a) | Op::ShiftedSoftplus(a) => {
                let va = &self.values[a.0];
                accumulate(grads, *a, zip_map(g, va, |x, y| x * sigmoid(y)))
            }
            Op::Tanh(a) => accumulate(grads, *a, zip_map(g, out, |x, y| x * (1.0 - y * y))),
            Op::Sigmoid(a) => accumulate(grads, *a, zip_map(g, out, |x, y| x * y * (1.0 - y))),
            Op::Exp(a) => accumulate(grads, *a, zip_map(g, out, |x, y| x * y)),
            Op::Log(a) => {
                let va = &self.values[a.0];
                accumulate(grads, *a, zip_map(g, va, |x, y| x / y))
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for p in parts {
                    let vp = &self.values[p.0];
                    let mut dp = Mat::zeros(vp.rows(), vp.cols());
                    for r in 0..vp.rows() {
                        dp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + vp.cols()]);
                    }
                    c0 += vp.cols();
                    accumulate(grads, *p, dp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut r0 = 0;
                for p in parts {
                    let vp = &self.values[p.0];
                    let n = vp.rows() * vp.cols();
                    let start = r0 * g.cols();
                    let dp = Mat::from_vec(vp.rows(), vp.cols(), g.data()[start..start + n].to_vec());
                    r0 += vp.rows();
                    accumulate(grads, *p, dp);
                }
            }
            Op::SliceCols(a, start) => {
                let va = &self.values[a.0];
                let mut da = Mat::zeros(va.rows(), va.cols());
                for r in 0..g.rows() {
                    da.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, da);
            }
            Op::Gather(a, idx) => {
                let va = &self.values[a.0];
                let mut da = Mat::zeros(va.rows(), va.cols());
                for (r, &src) in idx.iter().enumerate() {
                    for (o, x) in da.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::ScatterAdd(a, idx) => {
                accumulate(grads, *a, g.select_rows(idx));
            }
            Op::SumRows(a) => {
                let va = &self.values[a.0];
                let mut da = Mat::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    da.row_mut(r).copy_from_slice(g.row(0));
                }
                accumulate(grads, *a, da);
            }
            Op::SumAll(a) => {
                let va = &self.values[a.0];
                accumulate(grads, *a, Mat::filled(va.rows(), va.cols(), g.get(0, 0)));
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::NormalizeRows(a) => {
                let va = &self.values[a.0];
                let mut da = Mat::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    let n = row_norm(va.row(r));
                    if n <= NORM_EPS {
                        continue;
                    }
                    let y = out.row(r);
                    let gr = g.row(r);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, &yy), &gg) in da.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *d = (gg - yy * dot) / n;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::SoftmaxRows(a) => {
                let mut da = Mat::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, &yy), &gg) in da.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *d = yy * (gg - dot);
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::LogSoftmaxRows(a) => {
                let mut da = Mat::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let gs: f64 = gr.iter().sum();
                    for ((d, &yy), &gg) in da.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *d = gg - yy.exp() * gs;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::FrameCombine(coef, frames, dst) => {
                let mut dc = Mat::zeros(frames.len(), 3);
                for (e, f) in frames.iter().enumerate() {
                    let go = g.row(dst[e]);
                    let row = dc.row_mut(e);
                    for (a, slot) in row.iter_mut().enumerate() {
                        *slot = go[0] * f[3 * a] + go[1] * f[3 * a + 1] + go[2] * f[3 * a + 2];
                    }
                }
                accumulate(grads, *coef, dc);
            }
        }
    }
}

fn row_norm(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
