//! Reverse-mode differentiation over a tape of matrix-level primitives.
//!
//! Values are row-major `f64` matrices. Every op appends a node whose parents were appended
//! earlier, so the tape is in topological order and `backward` is one reverse sweep.

use std::rc::Rc;

use crate::error::{Result, TnpError};
use crate::linalg;
use crate::mask::MaskSpec;
use crate::tensor::{gemm, Mat, MatMut, Tensor};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous row ranges of a token matrix, each with its own attention mask.
#[derive(Clone, Debug, Default)]
pub struct AttentionLayout {
    segments: Vec<(usize, MaskSpec)>,
}

impl AttentionLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(mask: MaskSpec) -> Self {
        Self {
            segments: vec![(0, mask)],
        }
    }

    pub fn push(&mut self, start: usize, mask: MaskSpec) {
        self.segments.push((start, mask));
    }

    pub fn segments(&self) -> &[(usize, MaskSpec)] {
        &self.segments
    }

    pub fn rows(&self) -> usize {
        self.segments
            .iter()
            .map(|(s, m)| s + m.len())
            .max()
            .unwrap_or(0)
    }
}

/// Row ranges `(start, len)` with a weight each, for the joint Gaussian losses.
#[derive(Clone, Debug)]
pub struct WeightedSegments {
    pub ranges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    AddBias(Var, Var),
    Relu(Var),
    Exp(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    Dropout(Var, Rc<Vec<f64>>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Attention {
        qkv: Var,
        layout: Rc<AttentionLayout>,
        heads: usize,
        probs: Vec<Vec<f64>>,
    },
    GatherRows(Var, Rc<Vec<usize>>),
    ConcatCols(Var, Var),
    SegmentMean(Var, Rc<Vec<(usize, usize)>>),
    GaussianNll {
        out: Var,
        y: Rc<Vec<f64>>,
        weight: Rc<Vec<f64>>,
        lo: f64,
        hi: f64,
    },
    TrilNll {
        mu: Var,
        h: Var,
        segs: Rc<WeightedSegments>,
        saved: Vec<(Vec<f64>, Vec<f64>)>,
    },
    LowRankNll {
        mu: Var,
        logd: Var,
        h: Var,
        segs: Rc<WeightedSegments>,
        saved: Vec<(Vec<f64>, Vec<f64>)>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A recording of one forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients for every node of a graph; nodes off the loss path read as zero.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn data(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

/// Softmax over the allowed entries of one row, in place; denied entries become exactly 0.
pub(crate) fn masked_softmax_row(row: &mut [f64], allowed: &[bool]) -> Result<()> {
    let mut max = f64::NEG_INFINITY;
    for (v, &a) in row.iter().zip(allowed) {
        if a && *v > max {
            max = *v;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(TnpError::EmptyAttentionRow { row: 0 });
    }
    let mut total = 0.0;
    for (v, &a) in row.iter_mut().zip(allowed) {
        if a {
            *v = (*v - max).exp();
            total += *v;
        } else {
            *v = 0.0;
        }
    }
    for v in row.iter_mut() {
        *v /= total;
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf; differentiable iff the tensor's `requires_grad` flag is set.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let ng = t.requires_grad();
        self.push(t, Op::Leaf, ng)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t.with_grad(true), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_grad(false), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TnpError::Dimension(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.data_mut()
            .iter_mut()
            .zip(self.value(b).data())
            .for_each(|(x, y)| *x += y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out.with_grad(false), Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let mut out = self.value(a).clone();
        out.data_mut()
            .iter_mut()
            .zip(self.value(b).data())
            .for_each(|(x, y)| *x *= y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out.with_grad(false), Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone().with_grad(false);
        out.data_mut().iter_mut().for_each(|x| *x *= s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Adds a length-`cols` bias to every row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.value(bias).len() != c {
            return Err(TnpError::Dimension(format!(
                "bias of {} for {} columns",
                self.value(bias).len(),
                c
            )));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(a).clone().with_grad(false);
        for i in 0..r {
            out.data_mut()[i * c..(i + 1) * c]
                .iter_mut()
                .zip(&b)
                .for_each(|(x, y)| *x += y);
        }
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(out, Op::AddBias(a, bias), ng))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let mut out = self.value(a).clone().with_grad(false);
        out.data_mut().iter_mut().for_each(|x| *x = f(*x));
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Elementwise multiply by a fixed keep-mask (entries 0 or `1/(1-p)`).
    pub fn dropout(&mut self, a: Var, mask: Rc<Vec<f64>>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(TnpError::Dimension("dropout mask size".into()));
        }
        let mut out = self.value(a).clone().with_grad(false);
        out.data_mut()
            .iter_mut()
            .zip(mask.iter())
            .for_each(|(x, m)| *x *= m);
        let ng = self.ng(a);
        Ok(self.push(out, Op::Dropout(a, mask), ng))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let (r, c) = self.dims(x);
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(TnpError::Dimension("layer norm affine size".into()));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + EPS).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            Tensor::matrix(r, c, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Multi-head scaled dot-product attention from a fused `[Q | K | V]` matrix of width
    /// `3 * d_model`. Output is `rows x d_model` with heads concatenated (before any output
    /// projection). Denied logits are replaced by `-inf`, so denied tokens get weight exactly 0.
    pub fn attention(
        &mut self,
        qkv: Var,
        layout: Rc<AttentionLayout>,
        heads: usize,
    ) -> Result<Var> {
        let (rows, width) = self.dims(qkv);
        if width % 3 != 0 || heads == 0 || (width / 3) % heads != 0 {
            return Err(TnpError::Dimension(format!(
                "qkv width {width} incompatible with {heads} heads"
            )));
        }
        if layout.rows() > rows {
            return Err(TnpError::Dimension(format!(
                "layout covers {} rows, input has {rows}",
                layout.rows()
            )));
        }
        let d = width / 3;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let src = self.value(qkv).data();
        let mut out = vec![0.0; rows * d];
        let mut probs = Vec::with_capacity(layout.segments().len() * heads);
        for (start, mask) in layout.segments() {
            let n = mask.len();
            for h in 0..heads {
                let q = Mat::block(src, width, *start, n, h * dh, dh);
                let k = Mat::block(src, width, *start, n, d + h * dh, dh);
                let v = Mat::block(src, width, *start, n, 2 * d + h * dh, dh);
                let mut p = vec![0.0; n * n];
                gemm(q, k.t(), MatMut::new(&mut p, n, n), scale, 0.0);
                for i in 0..n {
                    masked_softmax_row(&mut p[i * n..(i + 1) * n], mask.row(i))
                        .map_err(|_| TnpError::EmptyAttentionRow { row: i })?;
                }
                gemm(
                    Mat::new(&p, n, n),
                    v,
                    MatMut::block(&mut out, d, *start, n, h * dh, dh),
                    1.0,
                    0.0,
                );
                probs.push(p);
            }
        }
        let ng = self.ng(qkv);
        Ok(self.push(
            Tensor::matrix(rows, d, out),
            Op::Attention {
                qkv,
                layout,
                heads,
                probs,
            },
            ng,
        ))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let (r, c) = self.dims(a);
        if idx.iter().any(|&i| i >= r) {
            return Err(TnpError::Dimension("gather index out of range".into()));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(idx.len(), c, out), Op::GatherRows(a, idx), ng))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if ra != rb {
            return Err(TnpError::Dimension("concat rows differ".into()));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&da[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&db[i * cb..(i + 1) * cb]);
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(ra, ca + cb, out), Op::ConcatCols(a, b), ng))
    }

    /// Mean of each row range, summed in ascending row order.
    pub fn segment_mean(&mut self, a: Var, segs: Rc<Vec<(usize, usize)>>) -> Result<Var> {
        let (r, c) = self.dims(a);
        if segs.iter().any(|&(s, n)| n == 0 || s + n > r) {
            return Err(TnpError::Dimension("bad pooling segment".into()));
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; segs.len() * c];
        for (k, &(s, n)) in segs.iter().enumerate() {
            let dst = &mut out[k * c..(k + 1) * c];
            for i in s..s + n {
                dst.iter_mut()
                    .zip(&src[i * c..(i + 1) * c])
                    .for_each(|(d, v)| *d += v);
            }
            dst.iter_mut().for_each(|d| *d /= n as f64);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(segs.len(), c, out), Op::SegmentMean(a, segs), ng))
    }

    /// Weighted sum of Gaussian negative log-densities. `out` holds `[mu | raw log sigma]`
    /// with `dy` columns each; log sigma is clamped to `[lo, hi]`.
    pub fn gaussian_nll(
        &mut self,
        out: Var,
        y: Rc<Vec<f64>>,
        weight: Rc<Vec<f64>>,
        lo: f64,
        hi: f64,
    ) -> Result<Var> {
        let (r, c) = self.dims(out);
        let dy = c / 2;
        if c % 2 != 0 || y.len() != r * dy || weight.len() != r * dy {
            return Err(TnpError::Dimension("gaussian nll sizes".into()));
        }
        let o = self.value(out).data();
        let mut total = 0.0;
        for i in 0..r {
            for j in 0..dy {
                let w = weight[i * dy + j];
                if w == 0.0 {
                    continue;
                }
                let mu = o[i * c + j];
                let ls = o[i * c + dy + j].clamp(lo, hi);
                let z = (y[i * dy + j] - mu) * (-ls).exp();
                total += w * (ls + HALF_LN_2PI + 0.5 * z * z);
            }
        }
        if !total.is_finite() {
            return Err(TnpError::NonFinite("gaussian nll".into()));
        }
        let ng = self.ng(out);
        Ok(self.push(
            Tensor::scalar(total),
            Op::GaussianNll {
                out,
                y,
                weight,
                lo,
                hi,
            },
            ng,
        ))
    }

    /// Weighted sum over segments of `-log N(y | mu, L L^T)` with
    /// `L = lower(H H^T) + eps I` built from the rows of `h`.
    pub fn tril_nll(
        &mut self,
        mu: Var,
        h: Var,
        y: Rc<Vec<f64>>,
        segs: Rc<WeightedSegments>,
        eps: f64,
    ) -> Result<Var> {
        let (r, one) = self.dims(mu);
        let (rh, p) = self.dims(h);
        if one != 1 || rh != r || y.len() != r {
            return Err(TnpError::Dimension("tril nll sizes".into()));
        }
        let muv = self.value(mu).data();
        let hv = self.value(h).data();
        let mut total = 0.0;
        let mut saved = Vec::with_capacity(segs.ranges.len());
        for (&(s, n), &w) in segs.ranges.iter().zip(&segs.weights) {
            let l = tril_factor(&hv[s * p..(s + n) * p], n, p, eps);
            if (0..n).any(|i| !(l[i * n + i] > 0.0)) {
                return Err(TnpError::Factorization("non-positive diagonal".into()));
            }
            let resid: Vec<f64> = (0..n).map(|i| y[s + i] - muv[s + i]).collect();
            let z = linalg::solve_lower(&l, n, &resid);
            let logdet: f64 = (0..n).map(|i| l[i * n + i].ln()).sum();
            let quad: f64 = z.iter().map(|v| v * v).sum();
            total += w * (logdet + 0.5 * quad + n as f64 * HALF_LN_2PI);
            saved.push((l, z));
        }
        if !total.is_finite() {
            return Err(TnpError::NonFinite("joint gaussian nll".into()));
        }
        let ng = self.ng(mu) || self.ng(h);
        Ok(self.push(
            Tensor::scalar(total),
            Op::TrilNll { mu, h, segs, saved },
            ng,
        ))
    }

    /// Weighted sum over segments of `-log N(y | mu, diag(exp(d)) + H H^T)`.
    pub fn lowrank_nll(
        &mut self,
        mu: Var,
        logd: Var,
        h: Var,
        y: Rc<Vec<f64>>,
        segs: Rc<WeightedSegments>,
    ) -> Result<Var> {
        let (r, one) = self.dims(mu);
        let (rd, one2) = self.dims(logd);
        let (rh, p) = self.dims(h);
        if one != 1 || one2 != 1 || rd != r || rh != r || y.len() != r {
            return Err(TnpError::Dimension("low-rank nll sizes".into()));
        }
        let muv = self.value(mu).data();
        let dv = self.value(logd).data();
        let hv = self.value(h).data();
        let mut total = 0.0;
        let mut saved = Vec::with_capacity(segs.ranges.len());
        for (&(s, n), &w) in segs.ranges.iter().zip(&segs.weights) {
            let sigma = lowrank_cov(&dv[s..s + n], &hv[s * p..(s + n) * p], n, p);
            let l = linalg::cholesky(&sigma, n)
                .ok_or_else(|| TnpError::Factorization("low-rank covariance".into()))?;
            let resid: Vec<f64> = (0..n).map(|i| y[s + i] - muv[s + i]).collect();
            let z = linalg::solve_lower(&l, n, &resid);
            let alpha = linalg::solve_lower_transpose(&l, n, &z);
            let logdet: f64 = (0..n).map(|i| l[i * n + i].ln()).sum();
            let quad: f64 = z.iter().map(|v| v * v).sum();
            total += w * (logdet + 0.5 * quad + n as f64 * HALF_LN_2PI);
            saved.push((linalg::cholesky_inverse(&l, n), alpha));
        }
        if !total.is_finite() {
            return Err(TnpError::NonFinite("low-rank gaussian nll".into()));
        }
        let ng = self.ng(mu) || self.ng(logd) || self.ng(h);
        Ok(self.push(
            Tensor::scalar(total),
            Op::LowRankNll {
                mu,
                logd,
                h,
                segs,
                saved,
            },
            ng,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TnpError::NotScalar(lv.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let ng = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let nn = self.dims(*b).1;
                if ng(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(
                        Mat::new(g, m, nn),
                        Mat::new(val(*b), k, nn).t(),
                        MatMut::new(&mut ga, m, k),
                        1.0,
                        0.0,
                    );
                    add_into(&mut grads[a.0], &ga);
                }
                if ng(*b) {
                    let mut gb = vec![0.0; k * nn];
                    gemm(
                        Mat::new(val(*a), m, k).t(),
                        Mat::new(g, m, nn),
                        MatMut::new(&mut gb, k, nn),
                        1.0,
                        0.0,
                    );
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::Add(a, b) => {
                if ng(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if ng(*b) {
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::Mul(a, b) => {
                if ng(*a) {
                    let ga: Vec<f64> = g.iter().zip(val(*b)).map(|(x, y)| x * y).collect();
                    add_into(&mut grads[a.0], &ga);
                }
                if ng(*b) {
                    let gb: Vec<f64> = g.iter().zip(val(*a)).map(|(x, y)| x * y).collect();
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::Scale(a, s) => {
                let ga: Vec<f64> = g.iter().map(|x| x * s).collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Sum(a) => {
                let ga = vec![g[0]; self.value(*a).len()];
                add_into(&mut grads[a.0], &ga);
            }
            Op::AddBias(a, b) => {
                if ng(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if ng(*b) {
                    let c = self.value(*b).len();
                    let mut gb = vec![0.0; c];
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::Relu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(val(*a))
                    .map(|(x, v)| if *v > 0.0 { *x } else { 0.0 })
                    .collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Exp(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(x, e)| x * e)
                    .collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Softplus(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(val(*a))
                    .map(|(x, v)| x * sigmoid(*v))
                    .collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Clamp(a, lo, hi) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(val(*a))
                    .map(|(x, v)| if v >= lo && v <= hi { *x } else { 0.0 })
                    .collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Dropout(a, mask) => {
                let ga: Vec<f64> = g.iter().zip(mask.iter()).map(|(x, m)| x * m).collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (r, c) = self.dims(*x);
                let gv = val(*gain);
                if ng(*gain) {
                    let mut gg = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            gg[j] += g[i * c + j] * xhat[i * c + j];
                        }
                    }
                    add_into(&mut grads[gain.0], &gg);
                }
                if ng(*bias) {
                    let mut gb = vec![0.0; c];
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    add_into(&mut grads[bias.0], &gb);
                }
                if ng(*x) {
                    let mut gx = vec![0.0; r * c];
                    for i in 0..r {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..c {
                            let dxh = g[i * c + j] * gv[j];
                            mean_d += dxh;
                            mean_dx += dxh * xhat[i * c + j];
                        }
                        mean_d /= c as f64;
                        mean_dx /= c as f64;
                        for j in 0..c {
                            let dxh = g[i * c + j] * gv[j];
                            gx[i * c + j] =
                                rstd[i] * (dxh - mean_d - xhat[i * c + j] * mean_dx);
                        }
                    }
                    add_into(&mut grads[x.0], &gx);
                }
            }
            Op::Attention {
                qkv,
                layout,
                heads,
                probs,
            } => {
                let (rows, width) = self.dims(*qkv);
                let d = width / 3;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let src = val(*qkv);
                let mut gq = vec![0.0; rows * width];
                let mut pi = 0;
                for (start, mask) in layout.segments() {
                    let n = mask.len();
                    for h in 0..*heads {
                        let p = &probs[pi];
                        pi += 1;
                        let q = Mat::block(src, width, *start, n, h * dh, dh);
                        let k = Mat::block(src, width, *start, n, d + h * dh, dh);
                        let v = Mat::block(src, width, *start, n, 2 * d + h * dh, dh);
                        let go = Mat::block(g, d, *start, n, h * dh, dh);
                        // dV = P^T dO
                        gemm(
                            Mat::new(p, n, n).t(),
                            go,
                            MatMut::block(&mut gq, width, *start, n, 2 * d + h * dh, dh),
                            1.0,
                            1.0,
                        );
                        // dP = dO V^T, then softmax backward in place
                        let mut ds = vec![0.0; n * n];
                        gemm(go, v.t(), MatMut::new(&mut ds, n, n), 1.0, 0.0);
                        for i in 0..n {
                            let prow = &p[i * n..(i + 1) * n];
                            let drow = &mut ds[i * n..(i + 1) * n];
                            let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                            drow.iter_mut()
                                .zip(prow)
                                .for_each(|(dv, pv)| *dv = pv * (*dv - dot));
                        }
                        // dQ = scale dS K, dK = scale dS^T Q
                        gemm(
                            Mat::new(&ds, n, n),
                            k,
                            MatMut::block(&mut gq, width, *start, n, h * dh, dh),
                            scale,
                            1.0,
                        );
                        gemm(
                            Mat::new(&ds, n, n).t(),
                            q,
                            MatMut::block(&mut gq, width, *start, n, d + h * dh, dh),
                            scale,
                            1.0,
                        );
                    }
                }
                add_into(&mut grads[qkv.0], &gq);
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = self.dims(*a);
                let mut ga = vec![0.0; r * c];
                for (k, &i) in idx.iter().enumerate() {
                    ga[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&g[k * c..(k + 1) * c])
                        .for_each(|(x, y)| *x += y);
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::ConcatCols(a, b) => {
                let (r, ca) = self.dims(*a);
                let cb = self.dims(*b).1;
                let w = ca + cb;
                if ng(*a) {
                    let ga: Vec<f64> = (0..r).flat_map(|i| g[i * w..i * w + ca].to_vec()).collect();
                    add_into(&mut grads[a.0], &ga);
                }
                if ng(*b) {
                    let gb: Vec<f64> =
                        (0..r).flat_map(|i| g[i * w + ca..(i + 1) * w].to_vec()).collect();
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::SegmentMean(a, segs) => {
                let (r, c) = self.dims(*a);
                let mut ga = vec![0.0; r * c];
                for (k, &(s, n)) in segs.iter().enumerate() {
                    for i in s..s + n {
                        for j in 0..c {
                            ga[i * c + j] += g[k * c + j] / n as f64;
                        }
                    }
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::GaussianNll {
                out,
                y,
                weight,
                lo,
                hi,
            } => {
                let (r, c) = self.dims(*out);
                let dy = c / 2;
                let o = val(*out);
                let mut go = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..dy {
                        let w = weight[i * dy + j];
                        if w == 0.0 {
                            continue;
                        }
                        let mu = o[i * c + j];
                        let raw = o[i * c + dy + j];
                        let ls = raw.clamp(*lo, *hi);
                        let inv_var = (-2.0 * ls).exp();
                        let resid = y[i * dy + j] - mu;
                        go[i * c + j] = g[0] * w * (-resid * inv_var);
                        if raw >= *lo && raw <= *hi {
                            go[i * c + dy + j] = g[0] * w * (1.0 - resid * resid * inv_var);
                        }
                    }
                }
                add_into(&mut grads[out.0], &go);
            }
            Op::TrilNll {
                mu,
                h,
                segs,
                saved,
                ..
            } => {
                let r = self.dims(*mu).0;
                let p = self.dims(*h).1;
                let hv = val(*h);
                let mut gmu = vec![0.0; r];
                let mut gh = vec![0.0; r * p];
                for ((&(s, n), &w), (l, z)) in segs.ranges.iter().zip(&segs.weights).zip(saved) {
                    let scale = g[0] * w;
                    let wv = linalg::solve_lower_transpose(l, n, z);
                    for i in 0..n {
                        gmu[s + i] = -scale * wv[i];
                    }
                    // dnll/dL restricted to the lower triangle
                    let mut gl = vec![0.0; n * n];
                    for i in 0..n {
                        for j in 0..=i {
                            gl[i * n + j] = -wv[i] * z[j];
                        }
                        gl[i * n + i] += 1.0 / l[i * n + i];
                    }
                    // L = lower(H H^T) + eps I  =>  dH = (G + G^T) H
                    let hs = &hv[s * p..(s + n) * p];
                    for i in 0..n {
                        for j in 0..n {
                            let gs = gl[i * n + j] + gl[j * n + i];
                            if gs == 0.0 {
                                continue;
                            }
                            for k in 0..p {
                                gh[(s + i) * p + k] += scale * gs * hs[j * p + k];
                            }
                        }
                    }
                }
                if ng(*mu) {
                    add_into(&mut grads[mu.0], &gmu);
                }
                if ng(*h) {
                    add_into(&mut grads[h.0], &gh);
                }
            }
            Op::LowRankNll {
                mu,
                logd,
                h,
                segs,
                saved,
                ..
            } => {
                let r = self.dims(*mu).0;
                let p = self.dims(*h).1;
                let hv = val(*h);
                let dv = val(*logd);
                let mut gmu = vec![0.0; r];
                let mut gd = vec![0.0; r];
                let mut gh = vec![0.0; r * p];
                for ((&(s, n), &w), (inv, alpha)) in
                    segs.ranges.iter().zip(&segs.weights).zip(saved)
                {
                    let scale = g[0] * w;
                    // dnll/dSigma = (Sigma^{-1} - alpha alpha^T) / 2
                    let gs = |i: usize, j: usize| 0.5 * (inv[i * n + j] - alpha[i] * alpha[j]);
                    let hs = &hv[s * p..(s + n) * p];
                    for i in 0..n {
                        gmu[s + i] = -scale * alpha[i];
                        gd[s + i] = scale * gs(i, i) * dv[s + i].exp();
                        for j in 0..n {
                            let c = 2.0 * gs(i, j);
                            for k in 0..p {
                                gh[(s + i) * p + k] += scale * c * hs[j * p + k];
                            }
                        }
                    }
                }
                if ng(*mu) {
                    add_into(&mut grads[mu.0], &gmu);
                }
                if ng(*logd) {
                    add_into(&mut grads[logd.0], &gd);
                }
                if ng(*h) {
                    add_into(&mut grads[h.0], &gh);
                }
            }
        }
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `lower(H H^T) + eps I` for `H` of shape `n x p`.
pub fn tril_factor(h: &[f64], n: usize, p: usize, eps: f64) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..p {
                acc += h[i * p + k] * h[j * p + k];
            }
            l[i * n + j] = acc;
        }
        l[i * n + i] += eps;
    }
    l
}

/// `diag(exp(d)) + H H^T`.
pub fn lowrank_cov(logd: &[f64], h: &[f64], n: usize, p: usize) -> Vec<f64> {
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..p {
                acc += h[i * p + k] * h[j * p + k];
            }
            s[i * n + j] = acc;
            s[j * n + i] = acc;
        }
        s[i * n + i] += logd[i].exp();
    }
    s
}

/// Stand-alone masked softmax over each row of `logits`.
pub fn masked_softmax(logits: &Tensor, mask: &MaskSpec) -> Result<Tensor> {
    let (r, c) = (logits.rows(), logits.cols());
    if r != mask.len() || c != mask.len() {
        return Err(TnpError::Dimension(format!(
            "logits {r}x{c} vs mask of {}",
            mask.len()
        )));
    }
    let mut out = logits.clone();
    for i in 0..r {
        masked_softmax_row(&mut out.data_mut()[i * c..(i + 1) * c], mask.row(i))
            .map_err(|_| TnpError::EmptyAttentionRow { row: i })?;
    }
    Ok(out)
}

/// `-0.5 ln(2 pi)`.
pub const NEG_HALF_LN_2PI: f64 = -HALF_LN_2PI;
