//! Tape-based reverse-mode differentiation over [`Mat`] values.
//!
//! Every op evaluates eagerly when it is recorded; [`Graph::backward`] then
//! walks the tape in reverse. Nodes built only from constants are never
//! visited on the way back.

use super::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, norm, Mat};
use crate::error::{shape_err, Result, VictrError};

/// Norm guard shared by every normalisation in the crate.
pub const NORM_EPS: f64 = 1e-8;
pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Affine(Var, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Sigmoid(Var),
    Gelu(Var),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    CombineRows(Var, Vec<Vec<(usize, f64)>>),
    ConcatRows(Vec<Var>),
    RowNormalize(Var, Vec<f64>),
    LayerNorm(Var, Vec<f64>),
    LayerNormAffine {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Mat,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        group_len: usize,
        heads: usize,
        probs: Vec<Vec<f64>>,
    },
    SoftmaxCe(Var, Vec<f64>),
    SigmoidBce(Var, Vec<f64>),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `like`'s shape when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(rows, cols))
    }
}

fn check_same(a: &Mat, b: &Mat, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn fast_tanh(z: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * z).exp() + 1.0)
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + fast_tanh(GELU_C * (x + GELU_A * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let t = fast_tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(512),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that gradients flow into.
    pub fn variable(&mut self, value: Mat) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that is treated as data.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.shape(a);
        let (k2, c) = self.shape(b);
        if k != k2 {
            return shape_err(format!("matmul {r}x{k} by {k2}x{c}"));
        }
        let mut out = Mat::zeros(r, c);
        matmul_acc(&self.value(a).data, &self.value(b).data, &mut out.data, r, k, c);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.shape(a);
        let (c, k2) = self.shape(b);
        if k != k2 {
            return shape_err(format!("matmul_nt {r}x{k} by ({c}x{k2})^T"));
        }
        let mut out = Mat::zeros(r, c);
        matmul_nt_acc(&self.value(a).data, &self.value(b).data, &mut out.data, r, k, c);
        Ok(self.push(out, Op::MatMulNT(a, b), &[a, b]))
    }

    /// `x w + b` with `b` a `1 x c` row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (r, k) = self.shape(x);
        let (k2, c) = self.shape(w);
        if k != k2 || self.shape(b) != (1, c) {
            return shape_err(format!("affine {r}x{k} by {k2}x{c} plus {:?}", self.shape(b)));
        }
        let bias = &self.value(b).data;
        let mut out = Mat::from_vec(r, c, bias.repeat(r))?;
        matmul_acc(&self.value(x).data, &self.value(w).data, &mut out.data, r, k, c);
        Ok(self.push(out, Op::Affine(x, w, b), &[x, w, b]))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        check_same(self.value(a), self.value(b), "elementwise op")?;
        let av = self.value(a);
        let data = av.data.iter().zip(&self.value(b).data).map(|(x, y)| f(*x, *y)).collect();
        let out = Mat::from_vec(av.rows, av.cols, data)?;
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return shape_err(format!("add_row: {r}x{c} with {:?}", self.shape(row)));
        }
        let mut out = self.value(a).clone();
        let rv = &self.value(row).data;
        for i in 0..r {
            for (o, b) in out.row_mut(i).iter_mut().zip(rv) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    /// Multiplies every row of `a` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return shape_err(format!("mul_row: {r}x{c} with {:?}", self.shape(row)));
        }
        let mut out = self.value(a).clone();
        let rv = &self.value(row).data;
        for i in 0..r {
            for (o, b) in out.row_mut(i).iter_mut().zip(rv) {
                *o *= b;
            }
        }
        Ok(self.push(out, Op::MulRow(a, row), &[a, row]))
    }

    /// Scales row `i` of `a` by `col[i]` (`col` is `r x 1`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(col) != (r, 1) {
            return shape_err(format!("mul_col: {r}x{c} with {:?}", self.shape(col)));
        }
        let mut out = self.value(a).clone();
        let cv = self.value(col).data.clone();
        for (i, w) in cv.iter().enumerate() {
            for o in out.row_mut(i) {
                *o *= w;
            }
        }
        Ok(self.push(out, Op::MulCol(a, col), &[a, col]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let av = self.value(a);
        let out = Mat::from_vec(av.rows, av.cols, av.data.iter().map(|x| x * s).collect())?;
        Ok(self.push(out, Op::Scale(a, s), &[a]))
    }

    /// Multiplies `a` by a `1 x 1` variable.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return shape_err(format!("scale_by expects a scalar, got {:?}", self.shape(s)));
        }
        let sv = self.value(s).item();
        let av = self.value(a);
        let out = Mat::from_vec(av.rows, av.cols, av.data.iter().map(|x| x * sv).collect())?;
        Ok(self.push(out, Op::ScaleBy(a, s), &[a, s]))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let av = self.value(a);
        let out = Mat::from_vec(av.rows, av.cols, av.data.iter().map(|x| f(*x)).collect())?;
        Ok(self.push(out, op, &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Gelu(a), gelu)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let av = self.value(a);
        if av.len() != rows * cols {
            return shape_err(format!("reshape {:?} to {rows}x{cols}", av.shape()));
        }
        let out = Mat::from_vec(rows, cols, av.data.clone())?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Output row `i` is row `idx[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let av = self.value(a);
        if let Some(bad) = idx.iter().find(|&&i| i >= av.rows) {
            return shape_err(format!("gather index {bad} out of {} rows", av.rows));
        }
        let mut data = Vec::with_capacity(idx.len() * av.cols);
        for &i in &idx {
            data.extend_from_slice(av.row(i));
        }
        let out = Mat::from_vec(idx.len(), av.cols, data)?;
        Ok(self.push(out, Op::Gather(a, idx), &[a]))
    }

    /// Output row `i` is `sum_j w_ij * a[j]` over the listed `(j, w_ij)` pairs.
    pub fn combine_rows(&mut self, a: Var, mix: Vec<Vec<(usize, f64)>>) -> Result<Var> {
        let av = self.value(a);
        let mut out = Mat::zeros(mix.len(), av.cols);
        for (i, terms) in mix.iter().enumerate() {
            for &(j, w) in terms {
                if j >= av.rows {
                    return shape_err(format!("combine index {j} out of {} rows", av.rows));
                }
                let src = av.row(j);
                for (o, s) in out.row_mut(i).iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        Ok(self.push(out, Op::CombineRows(a, mix), &[a]))
    }

    /// Mean of groups of rows; `groups[i]` lists the rows averaged into output row `i`.
    pub fn mean_rows(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let mix = groups
            .iter()
            .map(|g| {
                let w = 1.0 / g.len().max(1) as f64;
                g.iter().map(|&j| (j, w)).collect()
            })
            .collect();
        self.combine_rows(a, mix)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => self.shape(p).1,
            None => return shape_err("concat of nothing"),
        };
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.cols != cols {
                return shape_err(format!("concat rows: {} vs {cols} columns", pv.cols));
            }
            rows += pv.rows;
            data.extend_from_slice(&pv.data);
        }
        let out = Mat::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Scales every row to unit L2 norm; rows with norm `<= 1e-8` are an error.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let mut out = av.clone();
        let mut norms = Vec::with_capacity(av.rows);
        for i in 0..av.rows {
            let n = norm(av.row(i));
            if !(n > NORM_EPS) {
                return Err(VictrError::ZeroNorm {
                    context: format!("row {i} of a {}x{} operand", av.rows, av.cols),
                    norm: n,
                });
            }
            for v in out.row_mut(i) {
                *v /= n;
            }
            norms.push(n);
        }
        Ok(self.push(out, Op::RowNormalize(a, norms), &[a]))
    }

    /// Row-wise `(x - mean) / sqrt(var + 1e-5)` without affine parameters.
    pub fn layer_norm_plain(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.cols < 2 {
            return shape_err("layer norm needs at least 2 features");
        }
        let d = av.cols as f64;
        let mut out = av.clone();
        let mut inv_std = Vec::with_capacity(av.rows);
        for i in 0..av.rows {
            let row = out.row_mut(i);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        Ok(self.push(out, Op::LayerNorm(a, inv_std), &[a]))
    }

    /// [`Graph::layer_norm_plain`] followed by a per-feature `gamma` scale
    /// and `beta` shift, both `1 x c`.
    pub fn layer_norm_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(gamma) != (1, c) || self.shape(beta) != (1, c) {
            return shape_err(format!("layer norm of width {c} with {:?} gain", self.shape(gamma)));
        }
        if c < 2 {
            return shape_err("layer norm needs at least 2 features");
        }
        let d = c as f64;
        let mut normed = self.value(x).clone();
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = normed.row_mut(i);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        let (gv, bv) = (&self.value(gamma).data, &self.value(beta).data);
        let mut out = normed.clone();
        for i in 0..r {
            for ((o, g), b) in out.row_mut(i).iter_mut().zip(gv).zip(bv) {
                *o = *o * g + b;
            }
        }
        let op = Op::LayerNormAffine {
            x,
            gamma,
            beta,
            normed,
            inv_std,
        };
        Ok(self.push(out, op, &[x, gamma, beta]))
    }

    /// Scaled dot-product attention applied independently to consecutive
    /// groups of `group_len` rows and to each of `heads` column blocks.
    ///
    /// `q`, `k`, `v` are already projected; output has `v`'s shape with heads
    /// concatenated along columns.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, group_len: usize, heads: usize) -> Result<Var> {
        let (n, d) = self.shape(q);
        if self.shape(k) != (n, d) || self.shape(v) != (n, d) {
            return shape_err("attention q/k/v shapes differ");
        }
        if heads == 0 || d % heads != 0 {
            return shape_err(format!("model width {d} not divisible by {heads} heads"));
        }
        if group_len == 0 || n % group_len != 0 {
            return shape_err(format!("{n} rows do not split into groups of {group_len}"));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (&self.value(q).data, &self.value(k).data, &self.value(v).data);
        let mut out = Mat::zeros(n, d);
        let mut probs = Vec::with_capacity(n / group_len * heads);
        for g in 0..n / group_len {
            let base = g * group_len;
            for h in 0..heads {
                let off = h * dh;
                let mut p = vec![0.0; group_len * group_len];
                for i in 0..group_len {
                    let qi = &qv[(base + i) * d + off..(base + i) * d + off + dh];
                    let prow = &mut p[i * group_len..(i + 1) * group_len];
                    for (j, pj) in prow.iter_mut().enumerate() {
                        let kj = &kv[(base + j) * d + off..(base + j) * d + off + dh];
                        *pj = super::tensor::dot(qi, kj) * scale;
                    }
                    softmax_in_place(prow);
                    let orow = &mut out.data[(base + i) * d + off..(base + i) * d + off + dh];
                    for (j, &pij) in prow.iter().enumerate() {
                        let vj = &vv[(base + j) * d + off..(base + j) * d + off + dh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += pij * x;
                        }
                    }
                }
                probs.push(p);
            }
        }
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                group_len,
                heads,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Softmax cross-entropy of a `1 x n` logit row against class `target`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let (r, n) = self.shape(logits);
        if r != 1 {
            return shape_err("cross-entropy expects a single logit row");
        }
        if target >= n {
            return Err(VictrError::Label(format!("class {target} out of {n}")));
        }
        let mut p = self.value(logits).data.clone();
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + p.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let loss = lse - p[target];
        softmax_in_place(&mut p);
        p[target] -= 1.0;
        Ok(self.push(Mat::scalar(loss), Op::SoftmaxCe(logits, p), &[logits]))
    }

    /// Mean per-class sigmoid cross-entropy against binary `targets`.
    pub fn sigmoid_cross_entropy(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let (r, n) = self.shape(logits);
        if r != 1 || targets.len() != n {
            return shape_err(format!("sigmoid CE: {r}x{n} logits, {} targets", targets.len()));
        }
        let z = &self.value(logits).data;
        let loss = z
            .iter()
            .zip(targets)
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum::<f64>()
            / n as f64;
        let dz = z
            .iter()
            .zip(targets)
            .map(|(&z, &y)| (sigmoid(z) - y) / n as f64)
            .collect();
        Ok(self.push(Mat::scalar(loss), Op::SigmoidBce(logits, dz), &[logits]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data.iter().sum();
        Ok(self.push(Mat::scalar(s), Op::Sum(a), &[a]))
    }

    /// Reverse pass seeded with `d loss = 1`; `loss` must be `1 x 1`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return shape_err("backward needs a scalar output");
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.backprop(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Mat>], v: Var) -> &'a mut Mat {
        let (r, c) = self.shape(v);
        grads[v.0].get_or_insert_with(|| Mat::zeros(r, c))
    }

    fn backprop(&self, node: &Node, dy: &Mat, grads: &mut [Option<Mat>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (r, k) = self.shape(*a);
                let c = y.cols;
                if self.wants(*a) {
                    let bv = &self.value(*b).data;
                    matmul_nt_acc(&dy.data, bv, &mut self.slot(grads, *a).data, r, c, k);
                }
                if self.wants(*b) {
                    let av = &self.value(*a).data;
                    matmul_tn_acc(av, &dy.data, &mut self.slot(grads, *b).data, r, k, c);
                }
            }
            Op::Affine(x, w, b) => {
                let (r, k) = self.shape(*x);
                let c = y.cols;
                if self.wants(*x) {
                    let wv = &self.value(*w).data;
                    matmul_nt_acc(&dy.data, wv, &mut self.slot(grads, *x).data, r, c, k);
                }
                if self.wants(*w) {
                    let xv = &self.value(*x).data;
                    matmul_tn_acc(xv, &dy.data, &mut self.slot(grads, *w).data, r, k, c);
                }
                if self.wants(*b) {
                    let g = self.slot(grads, *b);
                    for i in 0..r {
                        for (o, d) in g.data.iter_mut().zip(dy.row(i)) {
                            *o += d;
                        }
                    }
                }
            }
            Op::MatMulNT(a, b) => {
                let (r, k) = self.shape(*a);
                let c = y.cols;
                if self.wants(*a) {
                    let bv = &self.value(*b).data;
                    matmul_acc(&dy.data, bv, &mut self.slot(grads, *a).data, r, c, k);
                }
                if self.wants(*b) {
                    let av = &self.value(*a).data;
                    matmul_tn_acc(&dy.data, av, &mut self.slot(grads, *b).data, r, c, k);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.wants(*a) {
                    self.slot(grads, *a).add_assign(dy);
                }
                if self.wants(*b) {
                    let g = self.slot(grads, *b);
                    for (o, d) in g.data.iter_mut().zip(&dy.data) {
                        *o += sign * d;
                    }
                }
            }
            Op::Mul(a, b) => {
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if self.wants(this) {
                        let ov = &self.value(other).data;
                        let g = self.slot(grads, this);
                        for ((o, d), x) in g.data.iter_mut().zip(&dy.data).zip(ov) {
                            *o += d * x;
                        }
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.wants(*a) {
                    self.slot(grads, *a).add_assign(dy);
                }
                if self.wants(*row) {
                    let g = self.slot(grads, *row);
                    for i in 0..dy.rows {
                        for (o, d) in g.data.iter_mut().zip(dy.row(i)) {
                            *o += d;
                        }
                    }
                }
            }
            Op::MulRow(a, row) => {
                let av = self.value(*a);
                let rv = &self.value(*row).data;
                if self.wants(*a) {
                    let g = self.slot(grads, *a);
                    for i in 0..dy.rows {
                        for ((o, d), w) in g.row_mut(i).iter_mut().zip(dy.row(i)).zip(rv) {
                            *o += d * w;
                        }
                    }
                }
                if self.wants(*row) {
                    let g = self.slot(grads, *row);
                    for i in 0..dy.rows {
                        for ((o, d), x) in g.data.iter_mut().zip(dy.row(i)).zip(av.row(i)) {
                            *o += d * x;
                        }
                    }
                }
            }
            Op::MulCol(a, col) => {
                let av = self.value(*a);
                let cv = &self.value(*col).data;
                if self.wants(*a) {
                    let g = self.slot(grads, *a);
                    for (i, w) in cv.iter().enumerate() {
                        for (o, d) in g.row_mut(i).iter_mut().zip(dy.row(i)) {
                            *o += d * w;
                        }
                    }
                }
                if self.wants(*col) {
                    let g = self.slot(grads, *col);
                    for i in 0..dy.rows {
                        g.data[i] += super::tensor::dot(dy.row(i), av.row(i));
                    }
                }
            }
            Op::Scale(a, s) => {
                let g = self.slot(grads, *a);
                for (o, d) in g.data.iter_mut().zip(&dy.data) {
                    *o += s * d;
                }
            }
            Op::ScaleBy(a, s) => {
                let sv = self.value(*s).item();
                if self.wants(*a) {
                    let g = self.slot(grads, *a);
                    for (o, d) in g.data.iter_mut().zip(&dy.data) {
                        *o += sv * d;
                    }
                }
                if self.wants(*s) {
                    let ds = super::tensor::dot(&dy.data, &self.value(*a).data);
                    self.slot(grads, *s).data[0] += ds;
                }
            }
            Op::Sigmoid(a) => {
                let g = self.slot(grads, *a);
                for ((o, d), s) in g.data.iter_mut().zip(&dy.data).zip(&y.data) {
                    *o += d * s * (1.0 - s);
                }
            }
            Op::Gelu(a) => {
                let x = &self.value(*a).data;
                let g = self.slot(grads, *a);
                for ((o, d), xv) in g.data.iter_mut().zip(&dy.data).zip(x) {
                    *o += d * gelu_grad(*xv);
                }
            }
            Op::Reshape(a) => {
                let g = self.slot(grads, *a);
                for (o, d) in g.data.iter_mut().zip(&dy.data) {
                    *o += d;
                }
            }
            Op::Gather(a, idx) => {
                let g = self.slot(grads, *a);
                for (i, &src) in idx.iter().enumerate() {
                    for (o, d) in g.row_mut(src).iter_mut().zip(dy.row(i)) {
                        *o += d;
                    }
                }
            }
            Op::CombineRows(a, mix) => {
                let g = self.slot(grads, *a);
                for (i, terms) in mix.iter().enumerate() {
                    for &(j, w) in terms {
                        for (o, d) in g.row_mut(j).iter_mut().zip(dy.row(i)) {
                            *o += w * d;
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.wants(p) {
                        let g = self.slot(grads, p);
                        for (o, d) in g.data.iter_mut().zip(&dy.data[offset * c..(offset + r) * c]) {
                            *o += d;
                        }
                    }
                    offset += r;
                }
            }
            Op::RowNormalize(a, norms) => {
                let g = self.slot(grads, *a);
                for (i, n) in norms.iter().enumerate() {
                    let yr = y.row(i);
                    let dr = dy.row(i);
                    let proj = super::tensor::dot(yr, dr);
                    for ((o, d), yv) in g.row_mut(i).iter_mut().zip(dr).zip(yr) {
                        *o += (d - yv * proj) / n;
                    }
                }
            }
            Op::LayerNorm(a, inv_std) => {
                let d = y.cols as f64;
                let g = self.slot(grads, *a);
                for (i, is) in inv_std.iter().enumerate() {
                    let xh = y.row(i);
                    let dr = dy.row(i);
                    let mean_d = dr.iter().sum::<f64>() / d;
                    let mean_dx = super::tensor::dot(dr, xh) / d;
                    for ((o, dv), xv) in g.row_mut(i).iter_mut().zip(dr).zip(xh) {
                        *o += is * (dv - mean_d - xv * mean_dx);
                    }
                }
            }
            Op::LayerNormAffine {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            } => {
                let gv = &self.value(*gamma).data;
                if self.wants(*gamma) {
                    let g = self.slot(grads, *gamma);
                    for i in 0..dy.rows {
                        for ((o, d), xh) in g.data.iter_mut().zip(dy.row(i)).zip(normed.row(i)) {
                            *o += d * xh;
                        }
                    }
                }
                if self.wants(*beta) {
                    let g = self.slot(grads, *beta);
                    for i in 0..dy.rows {
                        for (o, d) in g.data.iter_mut().zip(dy.row(i)) {
                            *o += d;
                        }
                    }
                }
                if self.wants(*x) {
                    let d = y.cols as f64;
                    let g = self.slot(grads, *x);
                    let mut dxh = vec![0.0; y.cols];
                    for (i, is) in inv_std.iter().enumerate() {
                        for ((o, d), w) in dxh.iter_mut().zip(dy.row(i)).zip(gv) {
                            *o = d * w;
                        }
                        let xh = normed.row(i);
                        let mean_d = dxh.iter().sum::<f64>() / d;
                        let mean_dx = super::tensor::dot(&dxh, xh) / d;
                        for ((o, dv), xv) in g.row_mut(i).iter_mut().zip(&dxh).zip(xh) {
                            *o += is * (dv - mean_d - xv * mean_dx);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                group_len,
                heads,
                probs,
            } => self.attention_backward(dy, grads, (*q, *k, *v), *group_len, *heads, probs),
            Op::SoftmaxCe(a, dz) | Op::SigmoidBce(a, dz) => {
                let s = dy.item();
                let g = self.slot(grads, *a);
                for (o, d) in g.data.iter_mut().zip(dz) {
                    *o += s * d;
                }
            }
            Op::Sum(a) => {
                let s = dy.item();
                for o in self.slot(grads, *a).data.iter_mut() {
                    *o += s;
                }
            }
        }
    }

    fn attention_backward(
        &self,
        dy: &Mat,
        grads: &mut [Option<Mat>],
        (q, k, v): (Var, Var, Var),
        group_len: usize,
        heads: usize,
        probs: &[Vec<f64>],
    ) {
        let (n, d) = self.shape(q);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (&self.value(q).data, &self.value(k).data, &self.value(v).data);
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut ds = vec![0.0; group_len * group_len];
        for g in 0..n / group_len {
            let base = g * group_len;
            for h in 0..heads {
                let off = h * dh;
                let p = &probs[g * heads + h];
                let at = |i: usize| (base + i) * d + off;
                for i in 0..group_len {
                    let doi = &dy.data[at(i)..at(i) + dh];
                    let mut dot_sum = 0.0;
                    for j in 0..group_len {
                        let pij = p[i * group_len + j];
                        let vj = &vv[at(j)..at(j) + dh];
                        let dp = super::tensor::dot(doi, vj);
                        ds[i * group_len + j] = dp;
                        dot_sum += dp * pij;
                        for (o, x) in dv[at(j)..at(j) + dh].iter_mut().zip(doi) {
                            *o += pij * x;
                        }
                    }
                    for j in 0..group_len {
                        let pij = p[i * group_len + j];
                        ds[i * group_len + j] = pij * (ds[i * group_len + j] - dot_sum) * scale;
                    }
                }
                for i in 0..group_len {
                    for j in 0..group_len {
                        let s = ds[i * group_len + j];
                        if s == 0.0 {
                            continue;
                        }
                        for c in 0..dh {
                            dq[at(i) + c] += s * kv[at(j) + c];
                            dk[at(j) + c] += s * qv[at(i) + c];
                        }
                    }
                }
            }
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if self.wants(var) {
                let g = self.slot(grads, var);
                for (o, x) in g.data.iter_mut().zip(&buf) {
                    *o += x;
                }
            }
        }
    }
}
