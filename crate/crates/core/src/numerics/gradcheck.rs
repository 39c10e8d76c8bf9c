use super::graph::{Graph, Var};
use super::tensor::DiffTensor;
use crate::error::{shape_err, Result};

/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// `max_i |analytic_i - central_i| / max(1, |central_i|)` where `central_i`
/// is `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn max_relative_error(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    h: f64,
) -> Result<f64> {
    if x.len() != analytic.len() {
        return shape_err("analytic gradient length differs from input length");
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

/// Checks the reverse-mode gradient of the scalar graph built by `f` at `x`.
pub fn grad_check<F>(f: F, x: &DiffTensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let shape = x.as_mat();
    let eval = |values: &[f64], want_grad: bool| -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let mut m = shape.clone();
        m.data.copy_from_slice(values);
        let input = g.variable(m);
        let out = f(&mut g, input)?;
        if g.shape(out) != (1, 1) {
            return shape_err("grad_check function must return a scalar");
        }
        let value = g.value(out).item();
        let grad = if want_grad {
            g.backward(out)?
                .get_or_zeros(input, shape.rows, shape.cols)
                .data
        } else {
            Vec::new()
        };
        Ok((value, grad))
    };
    let (_, analytic) = eval(&x.values, true)?;
    max_relative_error(|v| eval(v, false).map(|r| r.0), &x.values, &analytic, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ops::{
        affinity_matrix, layer_norm, multi_head_self_attention, AttentionWeights, LayerNormParams, Linear,
    };
    use crate::numerics::rng::Rng;
    use crate::numerics::tensor::Mat;

    fn random(rng: &mut Rng, rows: usize, cols: usize) -> Mat {
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    fn tensor(rng: &mut Rng, rows: usize, cols: usize) -> DiffTensor {
        DiffTensor::from_mat(&random(rng, rows, cols)).unwrap()
    }

    #[test]
    fn linear_function_is_exact() {
        let c = Mat::row_vector(vec![0.5, -2.0, 3.0, 0.25]);
        let x = DiffTensor::new(vec![1, 4], vec![1.0, 2.0, -1.0, 0.3]).unwrap();
        let err = grad_check(
            |g, x| {
                let cv = g.constant(c.clone());
                let p = g.mul(cv, x)?;
                g.sum(p)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn cosine_affinity_gradient() {
        let mut rng = Rng::new(11);
        let b = random(&mut rng, 1, 6);
        for _ in 0..20 {
            let mut x = tensor(&mut rng, 1, 6);
            let n = x.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            x.values.iter_mut().for_each(|v| *v /= n);
            let err = grad_check(
                |g, x| {
                    let bv = g.constant(b.clone());
                    affinity_matrix(g, x, bv)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "{err}");
        }
    }

    /// Weighted sum so that every output coordinate matters.
    fn probe_sum(g: &mut Graph, y: Var, rng: &mut Rng) -> Result<Var> {
        let (r, c) = g.shape(y);
        let w = g.constant(random(rng, r, c));
        let p = g.mul(y, w)?;
        g.sum(p)
    }

    #[test]
    fn every_primitive_passes_in_f64() {
        type Build = Box<dyn Fn(&mut Graph, Var, &mut Rng) -> Result<Var>>;
        let cases: Vec<(&str, usize, usize, Build)> = vec![
            ("matmul", 3, 4, Box::new(|g, x, r| {
                let w = g.constant(random(r, 4, 2));
                g.matmul(x, w)
            })),
            ("matmul_nt", 3, 4, Box::new(|g, x, r| {
                let w = g.constant(random(r, 5, 4));
                g.matmul_nt(x, w)
            })),
            ("self_matmul_nt", 3, 4, Box::new(|g, x, _| g.matmul_nt(x, x))),
            ("sigmoid", 2, 3, Box::new(|g, x, _| g.sigmoid(x))),
            ("gelu", 2, 5, Box::new(|g, x, _| g.gelu(x))),
            ("mul_self", 2, 3, Box::new(|g, x, _| g.mul(x, x))),
            ("row_normalize", 3, 4, Box::new(|g, x, _| g.row_normalize(x))),
            ("layer_norm", 3, 5, Box::new(|g, x, r| {
                let p = LayerNormParams {
                    gamma: g.constant(random(r, 1, 5)),
                    beta: g.constant(random(r, 1, 5)),
                };
                layer_norm(g, x, &p)
            })),
            ("combine_gather_concat", 4, 3, Box::new(|g, x, _| {
                let a = g.gather_rows(x, vec![3, 0, 0, 2])?;
                let b = g.mean_rows(x, &[vec![0, 1], vec![1, 2, 3]])?;
                g.concat_rows(&[a, b, x])
            })),
            ("mul_col_scale_by", 4, 3, Box::new(|g, x, _| {
                let w = g.reshape(x, 12, 1)?;
                let col = g.gather_rows(w, vec![0, 5, 7, 11])?;
                let y = g.mul_col(x, col)?;
                let s = g.gather_rows(w, vec![2])?;
                g.scale_by(y, s)
            })),
            ("row_broadcasts", 3, 4, Box::new(|g, x, r| {
                let c = g.constant(random(r, 1, 4));
                let a = g.add_row(x, c)?;
                let row = g.gather_rows(x, vec![1])?;
                let m = g.mul_row(a, row)?;
                let s = g.sub(m, x)?;
                let t = g.scale(x, 2.0)?;
                g.add(s, t)
            })),
            ("softmax_ce", 1, 5, Box::new(|g, x, _| g.softmax_cross_entropy(x, 3))),
            ("sigmoid_ce", 1, 4, Box::new(|g, x, _| g.sigmoid_cross_entropy(x, &[1.0, 0.0, 0.0, 1.0]))),
            ("attention", 6, 4, Box::new(|g, x, r| {
                let mut lin = |g: &mut Graph| Linear {
                    weight: g.constant(random(r, 4, 4)),
                    bias: g.constant(random(r, 1, 4)),
                };
                let w = AttentionWeights { query: lin(g), key: lin(g), value: lin(g), output: lin(g) };
                multi_head_self_attention(g, x, &w, 2)
            })),
            ("grouped_attention_shared_qkv", 6, 4, Box::new(|g, x, _| g.attention(x, x, x, 3, 2))),
        ];
        for (name, rows, cols, build) in cases {
            for trial in 0..5u64 {
                let mut data_rng = Rng::new(100 + trial);
                let x = tensor(&mut data_rng, rows, cols);
                let seed = 1000 + trial;
                let err = grad_check(
                    |g, x| {
                        let mut r = Rng::new(seed);
                        let y = build(g, x, &mut r)?;
                        probe_sum(g, y, &mut r)
                    },
                    &x,
                    1e-5,
                )
                .unwrap();
                assert!(err < 1e-6, "{name} trial {trial}: {err}");
            }
        }
    }
}
