//! Composite layers built on the tape: affinities, layer norm, attention.

use super::graph::{Graph, Var, NORM_EPS};
use super::tensor::{dot, norm, Mat};
use crate::error::{shape_err, Result, VictrError};

/// Cosine similarity `<a,b> / (|a| |b|)`.
pub fn cosine_affinity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return shape_err(format!("affinity between lengths {} and {}", a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    for (n, which) in [(na, "first"), (nb, "second")] {
        if !(n > NORM_EPS) {
            return Err(VictrError::ZeroNorm {
                context: format!("{which} affinity operand"),
                norm: n,
            });
        }
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Pairwise cosine affinities between the rows of `a` (`r x d`) and `b`
/// (`c x d`), as an `r x c` node.
pub fn affinity_matrix(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let an = g.row_normalize(a)?;
    let bn = g.row_normalize(b)?;
    g.matmul_nt(an, bn)
}

/// Differentiable cosine affinity of two `1 x d` rows, as a `1 x 1` node.
pub fn cosine_affinity_var(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.shape(a).0 != 1 || g.shape(b).0 != 1 {
        return shape_err("cosine_affinity_var expects single rows");
    }
    affinity_matrix(g, a, b)
}

/// A fully-connected layer `x W + b` with `W` stored `in x out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.affine(x, self.weight, self.bias)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gamma: Var,
    pub beta: Var,
}

/// Row-wise layer norm with epsilon `1e-5`, then `gamma` scale and `beta` shift.
pub fn layer_norm(g: &mut Graph, x: Var, p: &LayerNormParams) -> Result<Var> {
    g.layer_norm_affine(x, p.gamma, p.beta)
}

/// Query/key/value/output projections of one attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

/// Multi-head self-attention over consecutive groups of `group_len` rows.
///
/// With `group_len == rows` this is ordinary MSA over the whole sequence;
/// smaller groups attend only within themselves.
pub fn grouped_self_attention(
    g: &mut Graph,
    x: Var,
    w: &AttentionWeights,
    heads: usize,
    group_len: usize,
) -> Result<Var> {
    let (_, d) = g.shape(x);
    if heads == 0 || d % heads != 0 {
        return shape_err(format!("width {d} is not divisible by {heads} heads"));
    }
    let q = w.query.forward(g, x)?;
    let k = w.key.forward(g, x)?;
    let v = w.value.forward(g, x)?;
    let a = g.attention(q, k, v, group_len, heads)?;
    w.output.forward(g, a)
}

/// Multi-head self-attention over all rows of `x` (`S x D`).
pub fn multi_head_self_attention(g: &mut Graph, x: Var, w: &AttentionWeights, heads: usize) -> Result<Var> {
    let rows = g.shape(x).0;
    if rows == 0 {
        return shape_err("attention over an empty sequence");
    }
    grouped_self_attention(g, x, w, heads, rows)
}

/// Builds [`AttentionWeights`] whose projections are all identity with zero bias.
pub fn identity_attention(g: &mut Graph, d: usize) -> AttentionWeights {
    let lin = |g: &mut Graph| Linear {
        weight: g.constant(Mat::identity(d)),
        bias: g.constant(Mat::zeros(1, d)),
    };
    AttentionWeights {
        query: lin(g),
        key: lin(g),
        value: lin(g),
        output: lin(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(cosine_affinity(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(cosine_affinity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(cosine_affinity(&[1.0, 0.0], &[-2.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(
            cosine_affinity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(VictrError::ZeroNorm { .. })
        ));
        assert!(matches!(cosine_affinity(&[1.0], &[1.0, 0.0]), Err(VictrError::Shape(_))));
    }

    fn ln_rows(x: Vec<Vec<f64>>, gamma: f64, beta: f64) -> Mat {
        let d = x[0].len();
        let mut g = Graph::new();
        let xv = g.constant(Mat::from_rows(&x).unwrap());
        let p = LayerNormParams {
            gamma: g.constant(Mat::row_vector(vec![gamma; d])),
            beta: g.constant(Mat::row_vector(vec![beta; d])),
        };
        let y = layer_norm(&mut g, xv, &p).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn layer_norm_examples() {
        let y = ln_rows(vec![vec![2.5; 4]], 1.0, 0.0);
        assert!(y.data.iter().all(|v| *v == 0.0));
        // (1, -1): mean 0, var 1 -> x / sqrt(1 + 1e-5)
        let y = ln_rows(vec![vec![1.0, -1.0]], 1.0, 0.0);
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert_abs_diff_eq!(y.data[0], expect, epsilon = 1e-15);
        assert_abs_diff_eq!(y.data[1], -expect, epsilon = 1e-15);
        let y = ln_rows(vec![vec![0.3, -7.0, 2.0]], 0.0, 1.25);
        assert!(y.data.iter().all(|v| *v == 1.25));
    }
}
