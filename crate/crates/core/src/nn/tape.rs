//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Every primitive pushes its output onto the tape together with the inputs it
//! read. [`Tape::backward`] walks the tape once in reverse, accumulating exact
//! gradients into every node that (transitively) depends on a parameter.

use std::rc::Rc;

use super::real::{gemm, Operand, Real};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Integer bin ranges (half-open) for one region of interest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoiBins {
    pub rows: Vec<(usize, usize)>,
    pub cols: Vec<(usize, usize)>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, b_trans: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Reshape(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Relu(Var),
    Conv2d { x: Var, w: Var, b: Var, pad: usize },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Mean(Var),
    Sum(Var),
    Gather { x: Var, idx: Rc<[usize]> },
    ScatterAdd { x: Var, idx: Rc<[usize]> },
    ScatterMean { x: Var, idx: Rc<[usize]>, counts: Vec<usize> },
    RowScale { x: Var, w: Var },
    SegmentSoftmax { x: Var, seg: Rc<[usize]>, segments: usize },
    CrossEntropy { logits: Var, labels: Vec<usize>, weights: Vec<f64> },
    RoiPool { x: Var, argmax: Vec<u32> },
}

const NO_ARGMAX: u32 = u32::MAX;

pub struct Tape<S: Real> {
    values: Vec<Tensor<S>>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
    grads: Vec<Option<Vec<S>>>,
    backward_done: bool,
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            ops: Vec::new(),
            needs_grad: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Drops everything recorded so far.
    pub fn reset(&mut self) {
        self.values.clear();
        self.ops.clear();
        self.needs_grad.clear();
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor<S>, op: Op, needs_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.needs_grad[v.0]
    }

    /// Records a constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    /// Gradient accumulated by the last [`Tape::backward`], if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads[v.0].as_deref()
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.values[v.0]
            .dims2()
            .ok_or_else(|| Error::shape(op, self.shape(v), &[0, 0]))
    }

    // ----- primitives -----------------------------------------------------

    /// `a (n×k) · b (k×m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a (n×k) · bᵀ` where `b` is `m×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_trans: bool) -> Result<Var> {
        let (n, k) = self.dims2(a, "matmul")?;
        let (br, bc) = self.dims2(b, "matmul")?;
        let (bk, m) = if b_trans { (bc, br) } else { (br, bc) };
        if k != bk {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![S::zero(); n * m];
        let bop = if b_trans {
            Operand::t(self.values[b.0].data())
        } else {
            Operand::n(self.values[b.0].data())
        };
        gemm(n, k, m, Operand::n(self.values[a.0].data()), bop, &mut out, false);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new([n, m], out)?, Op::MatMul { a, b, b_trans }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.values[a.0].data(), self.values[b.0].data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), ng))
    }

    /// Adds a length-`m` vector to every row of an `n×m` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, m) = self.dims2(x, "add_row")?;
        if self.values[bias.0].len() != m {
            return Err(Error::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.values[bias.0].data();
        let data: Vec<S> = self.values[x.0]
            .data()
            .chunks(m)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &c)| v + c))
            .collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRow(x, bias), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.values[a.0].data(), self.values[b.0].data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let k = S::from_f64(s);
        let data = self.values[x.0].data().iter().map(|&v| v * k).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        self.push(Tensor::new(shape, data).expect("same length"), Op::Scale(x, s), ng)
    }

    /// Column-wise concatenation of rank-2 tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Nn("concat of zero tensors".into()))?;
        let (n, _) = self.dims2(first, "concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat")?;
            if r != n {
                return Err(Error::shape("concat", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for row in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.values[p.0].data()[row * w..(row + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::new([n, total], out)?, Op::Concat(parts.to_vec()), ng))
    }

    /// Columns `start..start + len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.dims2(x, "slice_cols")?;
        if start + len > m {
            return Err(Error::shape("slice_cols", self.shape(x), &[start, len]));
        }
        let src = self.values[x.0].data();
        let mut out = Vec::with_capacity(n * len);
        for row in 0..n {
            out.extend_from_slice(&src[row * m + start..row * m + start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new([n, len], out)?, Op::Slice { x, start }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.values[x.0].clone().reshaped(shape.to_vec())?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let k = S::from_f64(slope);
        self.unary(x, Op::LeakyRelu(x, slope), |v| if v >= S::zero() { v } else { v * k })
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Elu(x), |v| if v >= S::zero() { v } else { v.exp_m1() })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > S::zero() { v } else { S::zero() })
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(S) -> S) -> Var {
        let data = self.values[x.0].data().iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        self.push(Tensor::new(shape, data).expect("same length"), op, ng)
    }

    /// Stride-1 convolution. `x`: `N×C×H×W`, `w`: `O×C×k×k`, `b`: `O`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let (n, c, h, wd) = dims4(self.shape(x), "conv2d")?;
        let (o, wc, k, k2) = dims4(self.shape(w), "conv2d")?;
        if wc != c || k != k2 || self.values[b.0].len() != o {
            return Err(Error::shape("conv2d", self.shape(x), self.shape(w)));
        }
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::shape("conv2d", self.shape(x), self.shape(w)));
        }
        let geo = ConvGeom { c, h, w: wd, k, pad };
        let (ho, wo) = geo.out_hw();
        let plane = ho * wo;
        let ckk = c * k * k;
        let mut cols = vec![S::zero(); ckk * plane];
        let mut out = vec![S::zero(); n * o * plane];
        let xd = self.values[x.0].data();
        let wdata = self.values[w.0].data();
        let bias = self.values[b.0].data();
        for s in 0..n {
            let xs = &xd[s * c * h * wd..(s + 1) * c * h * wd];
            geo.im2col(xs, &mut cols);
            let os = &mut out[s * o * plane..(s + 1) * o * plane];
            for (ch, row) in os.chunks_mut(plane).enumerate() {
                row.iter_mut().for_each(|v| *v = bias[ch]);
            }
            gemm(o, ckk, plane, Operand::n(wdata), Operand::n(&cols), os, true);
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(Tensor::new([n, o, ho, wo], out)?, Op::Conv2d { x, w, b, pad }, ng))
    }

    /// 2×2 max pooling with stride 2 (odd trailing rows/columns dropped).
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(x), "maxpool2")?;
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(Error::shape("maxpool2", self.shape(x), &[2, 2]));
        }
        let xd = self.values[x.0].data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new([n, c, ho, wo], out)?, Op::MaxPool2 { x, argmax }, ng))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::Nn("mean of an empty tensor".into()));
        }
        let n = S::from_f64(t.len() as f64);
        let s: S = t.data().iter().copied().sum();
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(s / n), Op::Mean(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: S = self.value(x).data().iter().copied().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Row `idx[e]` of `x` for every `e`.
    pub fn gather_rows(&mut self, x: Var, idx: Rc<[usize]>) -> Result<Var> {
        let (n, m) = self.dims2(x, "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::shape("gather_rows", self.shape(x), &[bad]));
        }
        let src = self.values[x.0].data();
        let mut out = Vec::with_capacity(idx.len() * m);
        for &i in idx.iter() {
            out.extend_from_slice(&src[i * m..(i + 1) * m]);
        }
        let ng = self.ng(x);
        let e = idx.len();
        Ok(self.push(Tensor::new([e, m], out)?, Op::Gather { x, idx }, ng))
    }

    /// `out[idx[e]] += x[e]` into an `n_out × m` zero matrix.
    pub fn scatter_add_rows(&mut self, x: Var, idx: Rc<[usize]>, n_out: usize) -> Result<Var> {
        let out = self.scatter_rows(x, &idx, n_out, "scatter_add_rows")?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::ScatterAdd { x, idx }, ng))
    }

    /// Mean of the rows of `x` grouped by `idx`; empty groups give zero rows.
    pub fn scatter_mean_rows(&mut self, x: Var, idx: Rc<[usize]>, n_out: usize) -> Result<Var> {
        let mut out = self.scatter_rows(x, &idx, n_out, "scatter_mean_rows")?;
        let mut counts = vec![0usize; n_out];
        for &d in idx.iter() {
            counts[d] += 1;
        }
        let m = out.shape()[1];
        for (row, &cnt) in out.data_mut().chunks_mut(m.max(1)).zip(&counts) {
            if cnt > 0 {
                let inv = S::from_f64(1.0 / cnt as f64);
                row.iter_mut().for_each(|v| *v *= inv);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::ScatterMean { x, idx, counts }, ng))
    }

    fn scatter_rows(
        &self,
        x: Var,
        idx: &[usize],
        n_out: usize,
        op: &'static str,
    ) -> Result<Tensor<S>> {
        let (e, m) = self.dims2(x, op)?;
        if e != idx.len() {
            return Err(Error::shape(op, self.shape(x), &[idx.len()]));
        }
        if let Some(&bad) = idx.iter().find(|&&d| d >= n_out) {
            return Err(Error::shape(op, &[n_out], &[bad]));
        }
        let src = self.values[x.0].data();
        let mut out = vec![S::zero(); n_out * m];
        for (row, &d) in idx.iter().enumerate() {
            for (o, &v) in out[d * m..(d + 1) * m].iter_mut().zip(&src[row * m..(row + 1) * m]) {
                *o += v;
            }
        }
        Tensor::new([n_out, m], out)
    }

    /// Multiplies row `e` of `x` (`E×m`) by the scalar `w[e]` (`w` has `E` entries).
    pub fn row_scale(&mut self, x: Var, w: Var) -> Result<Var> {
        let (e, m) = self.dims2(x, "row_scale")?;
        if self.values[w.0].len() != e {
            return Err(Error::shape("row_scale", self.shape(x), self.shape(w)));
        }
        let wd = self.values[w.0].data();
        let data: Vec<S> = self.values[x.0]
            .data()
            .chunks(m.max(1))
            .zip(wd)
            .flat_map(|(row, &k)| row.iter().map(move |&v| v * k))
            .collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(Tensor::new(shape, data)?, Op::RowScale { x, w }, ng))
    }

    /// Softmax of the scores of `x` within each segment `seg[e]`.
    pub fn segment_softmax(&mut self, x: Var, seg: Rc<[usize]>, segments: usize) -> Result<Var> {
        let t = self.value(x);
        if t.len() != seg.len() {
            return Err(Error::shape("segment_softmax", t.shape(), &[seg.len()]));
        }
        if let Some(&bad) = seg.iter().find(|&&s| s >= segments) {
            return Err(Error::shape("segment_softmax", &[segments], &[bad]));
        }
        let out = segment_softmax_values(t.data(), &seg, segments);
        let shape = t.shape().to_vec();
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::SegmentSoftmax { x, seg, segments },
            ng,
        ))
    }

    /// Weighted mean of `-log softmax(logits[i])[labels[i]]`. Rows with zero
    /// weight are excluded; at least one weight must be positive.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], weights: &[f64]) -> Result<Var> {
        let (n, k) = self.dims2(logits, "cross_entropy")?;
        if labels.len() != n || weights.len() != n {
            return Err(Error::shape("cross_entropy", &[n, k], &[labels.len(), weights.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::shape("cross_entropy", &[k], &[bad]));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Nn("cross_entropy: every row is masked out".into()));
        }
        let norm: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let data = self.values[logits.0].data();
        let mut loss = 0.0f64;
        for i in 0..n {
            if norm[i] == 0.0 {
                continue;
            }
            let row = &data[i * k..(i + 1) * k];
            let lse = log_sum_exp(row);
            loss += norm[i] * (lse - row[labels[i]].as_f64());
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(S::from_f64(loss)),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                weights: norm,
            },
            ng,
        ))
    }

    /// Channel-wise max over each bin of each region. `x` is `C×H×W` (or
    /// `1×C×H×W`); the result is `R × (C·gh·gw)`, channel-major per row.
    /// `None` regions produce zero rows.
    pub fn roi_pool(&mut self, x: Var, rois: &[Option<RoiBins>]) -> Result<Var> {
        let (c, h, w) = match self.shape(x) {
            &[c, h, w] | &[1, c, h, w] => (c, h, w),
            s => return Err(Error::shape("roi_pool", s, &[1, 0, 0, 0])),
        };
        let grid = rois
            .iter()
            .flatten()
            .map(|r| (r.rows.len(), r.cols.len()))
            .next()
            .unwrap_or((1, 1));
        let cells = grid.0 * grid.1;
        let xd = self.values[x.0].data();
        let mut out = vec![S::zero(); rois.len() * c * cells];
        let mut argmax = vec![NO_ARGMAX; rois.len() * c * cells];
        for (r, roi) in rois.iter().enumerate() {
            let Some(roi) = roi else { continue };
            if (roi.rows.len(), roi.cols.len()) != grid {
                return Err(Error::shape("roi_pool", &[grid.0, grid.1], &[roi.rows.len(), roi.cols.len()]));
            }
            for &(y0, y1) in &roi.rows {
                if y0 >= y1 || y1 > h {
                    return Err(Error::shape("roi_pool", &[h], &[y0, y1]));
                }
            }
            for &(x0, x1) in &roi.cols {
                if x0 >= x1 || x1 > w {
                    return Err(Error::shape("roi_pool", &[w], &[x0, x1]));
                }
            }
            for ch in 0..c {
                let plane = ch * h * w;
                for (py, &(y0, y1)) in roi.rows.iter().enumerate() {
                    for (px, &(x0, x1)) in roi.cols.iter().enumerate() {
                        let mut best = plane + y0 * w + x0;
                        for yy in y0..y1 {
                            for xx in x0..x1 {
                                let i = plane + yy * w + xx;
                                if xd[i] > xd[best] {
                                    best = i;
                                }
                            }
                        }
                        let o = (r * c + ch) * cells + py * grid.1 + px;
                        out[o] = xd[best];
                        argmax[o] = best as u32;
                    }
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new([rois.len(), c * cells], out)?,
            Op::RoiPool { x, argmax },
            ng,
        ))
    }

    // ----- backward -------------------------------------------------------

    /// Accumulates d`root`/d(node) for every node that needs a gradient.
    /// `root` must be a single-element tensor.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Nn("backward already ran on this tape; reset it first".into()));
        }
        if self.values[root.0].len() != 1 {
            return Err(Error::shape("backward", self.shape(root), &[1]));
        }
        self.backward_done = true;
        if !self.needs_grad[root.0] {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![S::one()]);
        let Tape {
            values,
            ops,
            needs_grad,
            grads,
            ..
        } = self;
        for i in (0..=root.0).rev() {
            if !needs_grad[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut sink = Sink {
                grads: &mut *grads,
                needs_grad,
                values,
            };
            backprop_op(&ops[i], &values[i], &g, &mut sink);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

struct Sink<'a, S: Real> {
    grads: &'a mut [Option<Vec<S>>],
    needs_grad: &'a [bool],
    values: &'a [Tensor<S>],
}

impl<S: Real> Sink<'_, S> {
    fn wants(&self, v: Var) -> bool {
        self.needs_grad[v.0]
    }

    /// Mutable gradient buffer of `v`, zero-initialised on first touch.
    fn buf(&mut self, v: Var) -> &mut [S] {
        let len = self.values[v.0].len();
        self.grads[v.0].get_or_insert_with(|| vec![S::zero(); len])
    }

    fn add(&mut self, v: Var, f: impl Fn(usize) -> S) {
        if !self.wants(v) {
            return;
        }
        for (i, g) in self.buf(v).iter_mut().enumerate() {
            *g += f(i);
        }
    }
}

fn backprop_op<S: Real>(op: &Op, out: &Tensor<S>, g: &[S], sink: &mut Sink<'_, S>) {
    let values = sink.values;
    match *op {
        Op::Leaf => {}
        Op::MatMul { a, b, b_trans } => {
            let (n, k) = values[a.0].dims2().expect("rank 2");
            let m = out.shape()[1];
            if sink.wants(a) {
                // dA = G · Bᵀ  (or G · B when B was used transposed)
                let bd = values[b.0].data();
                let bop = if b_trans { Operand::n(bd) } else { Operand::t(bd) };
                gemm(n, m, k, Operand::n(g), bop, sink.buf(a), true);
            }
            if sink.wants(b) {
                let ad = values[a.0].data();
                if b_trans {
                    // dB (m×k) = Gᵀ · A
                    gemm(m, n, k, Operand::t(g), Operand::n(ad), sink.buf(b), true);
                } else {
                    // dB (k×m) = Aᵀ · G
                    gemm(k, n, m, Operand::t(ad), Operand::n(g), sink.buf(b), true);
                }
            }
        }
        Op::Add(a, b) => {
            sink.add(a, |i| g[i]);
            sink.add(b, |i| g[i]);
        }
        Op::AddRow(x, bias) => {
            sink.add(x, |i| g[i]);
            if sink.wants(bias) {
                let m = values[bias.0].len();
                let gb = sink.buf(bias);
                for row in g.chunks(m) {
                    for (d, &v) in gb.iter_mut().zip(row) {
                        *d += v;
                    }
                }
            }
        }
        Op::Mul(a, b) => {
            let av = values[a.0].data();
            let bv = values[b.0].data();
            sink.add(a, |i| g[i] * bv[i]);
            sink.add(b, |i| g[i] * av[i]);
        }
        Op::Scale(x, s) => {
            let k = S::from_f64(s);
            sink.add(x, |i| g[i] * k);
        }
        Op::Concat(ref parts) => {
            let n = out.shape()[0];
            let total = out.shape()[1];
            let mut offset = 0;
            for &p in parts {
                let w = values[p.0].shape()[1];
                if sink.wants(p) {
                    let gp = sink.buf(p);
                    for row in 0..n {
                        for j in 0..w {
                            gp[row * w + j] += g[row * total + offset + j];
                        }
                    }
                }
                offset += w;
            }
        }
        Op::Slice { x, start } => {
            if sink.wants(x) {
                let m = values[x.0].shape()[1];
                let (n, len) = (out.shape()[0], out.shape()[1]);
                let gx = sink.buf(x);
                for row in 0..n {
                    for j in 0..len {
                        gx[row * m + start + j] += g[row * len + j];
                    }
                }
            }
        }
        Op::Reshape(x) => sink.add(x, |i| g[i]),
        Op::LeakyRelu(x, slope) => {
            let k = S::from_f64(slope);
            let xv = values[x.0].data();
            sink.add(x, |i| if xv[i] >= S::zero() { g[i] } else { g[i] * k });
        }
        Op::Elu(x) => {
            let xv = values[x.0].data();
            sink.add(x, |i| if xv[i] >= S::zero() { g[i] } else { g[i] * xv[i].exp() });
        }
        Op::Relu(x) => {
            let xv = values[x.0].data();
            sink.add(x, |i| if xv[i] > S::zero() { g[i] } else { S::zero() });
        }
        Op::Conv2d { x, w, b, pad } => conv2d_backward(x, w, b, pad, out, g, sink),
        Op::MaxPool2 { x, ref argmax } => {
            if sink.wants(x) {
                let gx = sink.buf(x);
                for (o, &src) in argmax.iter().enumerate() {
                    gx[src as usize] += g[o];
                }
            }
        }
        Op::Mean(x) => {
            let n = S::from_f64(values[x.0].len() as f64);
            let v = g[0] / n;
            sink.add(x, |_| v);
        }
        Op::Sum(x) => {
            let v = g[0];
            sink.add(x, |_| v);
        }
        Op::Gather { x, ref idx } => {
            if sink.wants(x) {
                let m = values[x.0].shape()[1];
                let gx = sink.buf(x);
                for (e, &src) in idx.iter().enumerate() {
                    for j in 0..m {
                        gx[src * m + j] += g[e * m + j];
                    }
                }
            }
        }
        Op::ScatterAdd { x, ref idx } => {
            if sink.wants(x) {
                let m = values[x.0].shape()[1];
                let gx = sink.buf(x);
                for (e, &d) in idx.iter().enumerate() {
                    for j in 0..m {
                        gx[e * m + j] += g[d * m + j];
                    }
                }
            }
        }
        Op::ScatterMean { x, ref idx, ref counts } => {
            if sink.wants(x) {
                let m = values[x.0].shape()[1];
                let gx = sink.buf(x);
                for (e, &d) in idx.iter().enumerate() {
                    let inv = S::from_f64(1.0 / counts[d] as f64);
                    for j in 0..m {
                        gx[e * m + j] += g[d * m + j] * inv;
                    }
                }
            }
        }
        Op::RowScale { x, w } => {
            let m = values[x.0].shape()[1].max(1);
            if sink.wants(x) {
                let wv = values[w.0].data();
                sink.add(x, |i| g[i] * wv[i / m]);
            }
            if sink.wants(w) {
                let xv = values[x.0].data();
                let gw = sink.buf(w);
                for (e, d) in gw.iter_mut().enumerate() {
                    let mut acc = S::zero();
                    for j in 0..m {
                        acc += g[e * m + j] * xv[e * m + j];
                    }
                    *d += acc;
                }
            }
        }
        Op::SegmentSoftmax { x, ref seg, segments } => {
            let y = out.data();
            let mut dot = vec![S::zero(); segments];
            for (e, &s) in seg.iter().enumerate() {
                dot[s] += y[e] * g[e];
            }
            sink.add(x, |e| y[e] * (g[e] - dot[seg[e]]));
        }
        Op::CrossEntropy {
            logits,
            ref labels,
            ref weights,
        } => {
            if sink.wants(logits) {
                let k = values[logits.0].shape()[1];
                let lv = values[logits.0].data();
                let gl = sink.buf(logits);
                let upstream = g[0].as_f64();
                for (i, &wi) in weights.iter().enumerate() {
                    if wi == 0.0 {
                        continue;
                    }
                    let row = &lv[i * k..(i + 1) * k];
                    let lse = log_sum_exp(row);
                    for j in 0..k {
                        let p = (row[j].as_f64() - lse).exp();
                        let target = if j == labels[i] { 1.0 } else { 0.0 };
                        gl[i * k + j] += S::from_f64(upstream * wi * (p - target));
                    }
                }
            }
        }
        Op::RoiPool { x, ref argmax } => {
            if sink.wants(x) {
                let gx = sink.buf(x);
                for (o, &src) in argmax.iter().enumerate() {
                    if src != NO_ARGMAX {
                        gx[src as usize] += g[o];
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
}

impl ConvGeom {
    fn out_hw(&self) -> (usize, usize) {
        (self.h + 2 * self.pad + 1 - self.k, self.w + 2 * self.pad + 1 - self.k)
    }

    /// Valid output-column range for kernel column `kj`: `ox` with `0 <= ox + kj - pad < w`.
    fn valid(&self, kj: usize, out: usize, size: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kj);
        let hi = (size + self.pad).saturating_sub(kj).min(out);
        (lo, hi.max(lo))
    }

    fn im2col<S: Real>(&self, x: &[S], cols: &mut [S]) {
        let (ho, wo) = self.out_hw();
        let plane = ho * wo;
        let (k, pad, h, w) = (self.k, self.pad, self.h, self.w);
        for ch in 0..self.c {
            let xc = &x[ch * h * w..(ch + 1) * h * w];
            for ki in 0..k {
                let (oy0, oy1) = self.valid(ki, ho, h);
                for kj in 0..k {
                    let row = ((ch * k + ki) * k + kj) * plane;
                    let dst = &mut cols[row..row + plane];
                    let (ox0, ox1) = self.valid(kj, wo, w);
                    for oy in 0..ho {
                        let line = &mut dst[oy * wo..(oy + 1) * wo];
                        if oy < oy0 || oy >= oy1 {
                            line.iter_mut().for_each(|v| *v = S::zero());
                            continue;
                        }
                        let iy = oy + ki - pad;
                        line[..ox0].iter_mut().for_each(|v| *v = S::zero());
                        line[ox1..].iter_mut().for_each(|v| *v = S::zero());
                        let src = &xc[iy * w + ox0 + kj - pad..iy * w + ox1 + kj - pad];
                        line[ox0..ox1].copy_from_slice(src);
                    }
                }
            }
        }
    }

    fn col2im<S: Real>(&self, cols: &[S], dx: &mut [S]) {
        let (ho, wo) = self.out_hw();
        let plane = ho * wo;
        let (k, pad, h, w) = (self.k, self.pad, self.h, self.w);
        for ch in 0..self.c {
            let dxc = &mut dx[ch * h * w..(ch + 1) * h * w];
            for ki in 0..k {
                let (oy0, oy1) = self.valid(ki, ho, h);
                for kj in 0..k {
                    let row = ((ch * k + ki) * k + kj) * plane;
                    let src = &cols[row..row + plane];
                    let (ox0, ox1) = self.valid(kj, wo, w);
                    for oy in oy0..oy1 {
                        let iy = oy + ki - pad;
                        let dst = &mut dxc[iy * w + ox0 + kj - pad..iy * w + ox1 + kj - pad];
                        for (d, &v) in dst.iter_mut().zip(&src[oy * wo + ox0..oy * wo + ox1]) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_backward<S: Real>(
    x: Var,
    w: Var,
    b: Var,
    pad: usize,
    out: &Tensor<S>,
    g: &[S],
    sink: &mut Sink<'_, S>,
) {
    let values = sink.values;
    let xs = values[x.0].shape().to_vec();
    let ws = values[w.0].shape().to_vec();
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (o, k) = (ws[0], ws[2]);
    let geo = ConvGeom { c, h, w: wd, k, pad };
    let plane = out.shape()[2] * out.shape()[3];
    let ckk = c * k * k;
    if sink.wants(b) {
        let gb = sink.buf(b);
        for s in 0..n {
            for (ch, row) in g[s * o * plane..(s + 1) * o * plane].chunks(plane).enumerate() {
                gb[ch] += row.iter().copied().sum::<S>();
            }
        }
    }
    let want_w = sink.wants(w);
    let want_x = sink.wants(x);
    if !want_w && !want_x {
        return;
    }
    let xd = values[x.0].data();
    let wdata = values[w.0].data();
    let mut cols = vec![S::zero(); ckk * plane];
    let mut dw = if want_w { vec![S::zero(); o * ckk] } else { Vec::new() };
    let mut dx = if want_x { vec![S::zero(); n * c * h * wd] } else { Vec::new() };
    for s in 0..n {
        let gs = &g[s * o * plane..(s + 1) * o * plane];
        if want_w {
            geo.im2col(&xd[s * c * h * wd..(s + 1) * c * h * wd], &mut cols);
            gemm(o, plane, ckk, Operand::n(gs), Operand::t(&cols), &mut dw, true);
        }
        if want_x {
            gemm(ckk, o, plane, Operand::t(wdata), Operand::n(gs), &mut cols, false);
            geo.col2im(&cols, &mut dx[s * c * h * wd..(s + 1) * c * h * wd]);
        }
    }
    if want_w {
        sink.add(w, |i| dw[i]);
    }
    if want_x {
        sink.add(x, |i| dx[i]);
    }
}

fn dims4(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [a, b, c, d] => Ok((a, b, c, d)),
        _ => Err(Error::shape(op, shape, &[0, 0, 0, 0])),
    }
}

fn zip_map<S: Real>(a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn log_sum_exp<S: Real>(row: &[S]) -> f64 {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln()
}

/// Max-subtracted softmax within each segment.
pub(crate) fn segment_softmax_values<S: Real>(x: &[S], seg: &[usize], segments: usize) -> Vec<S> {
    let mut max = vec![S::neg_infinity(); segments];
    for (&v, &s) in x.iter().zip(seg) {
        if v > max[s] {
            max[s] = v;
        }
    }
    let mut out: Vec<S> = x.iter().zip(seg).map(|(&v, &s)| (v - max[s]).exp()).collect();
    let mut denom = vec![S::zero(); segments];
    for (&v, &s) in out.iter().zip(seg) {
        denom[s] += v;
    }
    for (v, &s) in out.iter_mut().zip(seg) {
        *v = *v / denom[s];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn leaky_relu_value_and_slope() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[1], &[-1.0]));
        let y = tape.leaky_relu(x, 0.2);
        assert!((tape.value(y).data()[0] + 0.2).abs() < 1e-12);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert!((tape.grad(x).unwrap()[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn activations_use_unit_subgradient_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[0.0, 0.0]));
        let a = tape.leaky_relu(x, 0.2);
        let b = tape.elu(x);
        let sa = tape.sum(a);
        let sb = tape.sum(b);
        let both = tape.concat(&[sa, sb]);
        assert!(both.is_err(), "scalars are rank 1");
        let stacked = tape.add(sa, sb).unwrap();
        tape.backward(stacked).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
        assert_eq!(tape.value(a).data(), &[0.0, 0.0]);
        assert_eq!(tape.value(b).data(), &[0.0, 0.0]);
    }

    #[test]
    fn matmul_identity_and_sum_gradient() {
        let mut tape = Tape::<f64>::new();
        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let x = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = tape.matmul(eye, x).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());

        let mut tape = Tape::<f64>::new();
        let a = tape.param(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = tape.matmul(a, b).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        // d sum(AB) / dA_ij = sum_k B_jk
        assert_eq!(tape.grad(a).unwrap(), &[6.0, 15.0, 6.0, 15.0]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([4, 5]));
        match tape.matmul(a, b) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 5]);
            }
            other => panic!("unexpected {other:?}", other = other.map(|v| v.index())),
        }
    }

    #[test]
    fn segment_softmax_closed_forms() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[5.0, 0.0, 3f64.ln()]));
        let seg: Rc<[usize]> = vec![0, 1, 1].into();
        let y = tape.segment_softmax(x, seg, 2).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!((v[1] - 0.25).abs() < 1e-12);
        assert!((v[2] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn segment_softmax_empty_is_empty() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([0]));
        let y = tape.segment_softmax(x, Vec::new().into(), 0).unwrap();
        assert!(tape.value(y).is_empty());
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(t(&[2, 2], &[20.0, -20.0, -20.0, 20.0]));
        let l = tape.cross_entropy(logits, &[0, 1], &[1.0, 1.0]).unwrap();
        assert!(tape.value(l).data()[0] < 1e-6);

        let logits = tape.constant(t(&[3, 2], &[0.3, 0.3, -1.0, -1.0, 2.0, 2.0]));
        let l = tape.cross_entropy(logits, &[0, 1, 1], &[1.0, 1.0, 1.0]).unwrap();
        assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);

        let err = tape.cross_entropy(logits, &[0, 1, 1], &[0.0, 0.0, 0.0]);
        assert!(err.is_err());
    }

    #[test]
    fn second_backward_is_rejected_until_reset() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[1], &[2.0]));
        let y = tape.sum(x);
        tape.backward(y).unwrap();
        assert!(tape.backward(y).is_err());
        tape.reset();
        assert!(tape.is_empty());
    }

    #[test]
    fn conv_with_identity_kernel_copies_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = tape.constant(t(&[1, 1, 3, 3], &k));
        let b = tape.constant(t(&[1], &[0.5]));
        let y = tape.conv2d(x, w, b, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 2, 3]);
        assert_eq!(tape.value(y).data(), &[1.5, 2.5, 3.5, 4.5, 5.5, 6.5]);
    }

    #[test]
    fn maxpool_picks_window_max() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 1, 2, 4], &[1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, 6.0]));
        let y = tape.maxpool2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, 7.0]);
    }
}
