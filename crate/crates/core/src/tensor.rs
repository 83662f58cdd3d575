//! Dense row-major tensors of `f64` and the matrix-multiply kernel used by the tape.

use crate::error::{Result, TnpError};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TnpError::Dimension(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            requires_grad: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
        }
    }

    /// Matrix from a row-major buffer; panics on a size mismatch.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix {rows}x{cols}");
        Self {
            shape: vec![rows, cols],
            data,
            requires_grad: false,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TnpError::Dimension("ragged rows".into()));
        }
        Ok(Self::matrix(rows.len(), cols, rows.concat()))
    }

    pub fn with_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Leading dimension; 1 for scalars.
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Trailing dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 || self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(TnpError::Dimension(format!(
                "matmul {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            Mat::new(&self.data, m, k),
            Mat::new(&other.data, k, n),
            MatMut::new(&mut out, m, n),
            1.0,
            0.0,
        );
        Ok(Tensor::matrix(m, n, out))
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::matrix(c, r, out)
    }
}

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            offset: 0,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Column block `[col0, col0 + cols)` of rows `[row0, row0 + rows)` in a buffer with `stride` columns.
    pub fn block(
        data: &'a [f64],
        stride: usize,
        row0: usize,
        rows: usize,
        col0: usize,
        cols: usize,
    ) -> Self {
        Self {
            data,
            offset: row0 * stride + col0,
            rows,
            cols,
            rs: stride as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn check(&self) {
        if self.rows == 0 || self.cols == 0 {
            return;
        }
        let last = self.offset as isize
            + (self.rows as isize - 1) * self.rs
            + (self.cols as isize - 1) * self.cs;
        assert!(last >= 0 && (last as usize) < self.data.len(), "view out of bounds");
    }
}

pub(crate) struct MatMut<'a> {
    pub data: &'a mut [f64],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatMut<'a> {
    pub fn new(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            offset: 0,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn block(
        data: &'a mut [f64],
        stride: usize,
        row0: usize,
        rows: usize,
        col0: usize,
        cols: usize,
    ) -> Self {
        Self {
            data,
            offset: row0 * stride + col0,
            rows,
            cols,
            rs: stride as isize,
            cs: 1,
        }
    }
}

/// `c = alpha * a @ b + beta * c`.
pub(crate) fn gemm(a: Mat, b: Mat, c: MatMut, alpha: f64, beta: f64) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm rows");
    assert_eq!(b.cols, c.cols, "gemm cols");
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    a.check();
    b.check();
    let last = c.offset as isize + (c.rows as isize - 1) * c.rs + (c.cols as isize - 1) * c.cs;
    assert!(last >= 0 && (last as usize) < c.data.len(), "output view out of bounds");
    if a.cols == 0 {
        for i in 0..c.rows {
            for j in 0..c.cols {
                let idx = (c.offset as isize + i as isize * c.rs + j as isize * c.cs) as usize;
                c.data[idx] *= beta;
            }
        }
        return;
    }
    // SAFETY: every view was bounds-checked above and the output does not alias the inputs
    // (it is a distinct &mut borrow).
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs,
            a.cs,
            b.data.as_ptr().add(b.offset),
            b.rs,
            b.cs,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs,
            c.cs,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn matmul_matches_naive() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::matrix(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn strided_transposed_block() {
        // 2x4 buffer, take columns 1..3 and transpose.
        let buf = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let a = Mat::block(&buf, 4, 0, 2, 1, 2).t(); // 2x2: [[2,6],[3,7]]
        let id = vec![1.0, 0.0, 0.0, 1.0];
        let mut out = vec![0.0; 4];
        gemm(a, Mat::new(&id, 2, 2), MatMut::new(&mut out, 2, 2), 1.0, 0.0);
        assert_eq!(out, vec![2.0, 6.0, 3.0, 7.0]);
    }
}
