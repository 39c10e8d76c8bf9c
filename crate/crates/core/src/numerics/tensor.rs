use crate::error::{shape_err, Result, VictrError};

/// Dense row-major 2-D array of `f64`. Vectors are `1 x n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return shape_err(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("ragged rows");
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::row_vector(vec![v])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `a (r x k) * b (k x c)`, accumulated into `out`.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let out_row = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * c..(p + 1) * c];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `a (r x k) * b^T` where `b` is `c x k`, accumulated into `out`.
pub(crate) fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..c {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * c + j] += dot(a_row, b_row);
        }
    }
}

/// `a^T * b` where `a` is `k x r` and `b` is `k x c`, accumulated into `out` (`r x c`).
pub(crate) fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], k: usize, r: usize, c: usize) {
    for p in 0..k {
        let a_row = &a[p * r..(p + 1) * r];
        let b_row = &b[p * c..(p + 1) * c];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * c..(i + 1) * c];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A named dense array taking part in gradient accumulation.
///
/// Extents are positive, `values.len()` equals their product, and `grad`
/// (once allocated) has the same length as `values`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffTensor {
    shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
}

impl DiffTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return shape_err(format!("extents must be positive, got {shape:?}"));
        }
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return shape_err(format!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(VictrError::NonFinite(format!("tensor value at index {i}")));
        }
        Ok(Self {
            shape,
            values,
            grad: None,
            requires_grad: true,
        })
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![v; n])
    }

    pub fn from_mat(m: &Mat) -> Result<Self> {
        Self::new(vec![m.rows, m.cols], m.data.clone())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// 1-D tensors view as a `1 x n` row; 2-D as-is; higher ranks fold
    /// leading extents into rows.
    pub fn as_mat(&self) -> Mat {
        let cols = *self.shape.last().unwrap_or(&1);
        Mat {
            rows: self.values.len() / cols,
            cols,
            data: self.values.clone(),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = Some(vec![0.0; self.values.len()]);
    }

    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.values.len() {
            return shape_err(format!(
                "gradient of length {} for tensor of {} values",
                g.len(),
                self.values.len()
            ));
        }
        let grad = self.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diff_tensor_rejects_bad_shapes_and_nan() {
        assert!(DiffTensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(DiffTensor::new(vec![0], vec![]).is_err());
        assert!(matches!(
            DiffTensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(VictrError::NonFinite(_))
        ));
        let t = DiffTensor::new(vec![2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(t.as_mat().shape(), (2, 3));
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let b = Mat::from_rows(&[vec![1.0, -1.0, 0.5], vec![2.0, 0.0, 1.0]]).unwrap();
        let mut ab = vec![0.0; 9];
        matmul_acc(&a.data, &b.data, &mut ab, 3, 2, 3);
        let bt = b.transpose();
        let mut ab2 = vec![0.0; 9];
        matmul_nt_acc(&a.data, &bt.data, &mut ab2, 3, 2, 3);
        let at = a.transpose();
        let mut ab3 = vec![0.0; 9];
        matmul_tn_acc(&at.data, &b.data, &mut ab3, 2, 3, 3);
        assert_eq!(ab, vec![5.0, -1.0, 2.5, 11.0, -3.0, 5.5, 17.0, -5.0, 8.5]);
        assert_eq!(ab, ab2);
        assert_eq!(ab, ab3);
    }
}
