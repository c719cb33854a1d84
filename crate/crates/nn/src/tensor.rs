//! Row-major 2-D tensors with the few operations the layers need.

use crate::{NnError, Real};
use serde::{Deserialize, Serialize};

/// A dense matrix; `data[r * cols + c]` holds row `r`, column `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Real>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Real>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must equal rows * cols");
        Tensor2 { rows, cols, data }
    }

    /// Single-row tensor borrowing nothing; handy for per-step vectors.
    pub fn row_vector(data: Vec<Real>) -> Self {
        Tensor2 { rows: 1, cols: data.len(), data }
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

    pub fn at(&self, r: usize, c: usize) -> Real {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut Real {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[Real] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Real] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self @ other`; accumulation order is row-by-row over the shared
    /// dimension so results are deterministic.
    pub fn matmul(&self, other: &Tensor2) -> Tensor2 {
        assert_eq!(
            self.cols, other.rows,
            "inner dimensions must agree: {}x{} @ {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Tensor2::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^T @ other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Tensor2) -> Tensor2 {
        assert_eq!(self.rows, other.rows, "row counts must agree for t_matmul");
        let mut out = Tensor2::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = other.row(r);
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self @ other^T` without materializing the transpose.
    pub fn matmul_t(&self, other: &Tensor2) -> Tensor2 {
        assert_eq!(self.cols, other.cols, "column counts must agree for matmul_t");
        let mut out = Tensor2::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let a_row = self.row(r);
            for k in 0..other.rows {
                let b_row = other.row(k);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out.data[r * other.rows + k] = acc;
            }
        }
        out
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor2) -> Tensor2 {
        assert_eq!(self.shape(), other.shape(), "element-wise add needs equal shapes");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Tensor2 { rows: self.rows, cols: self.cols, data }
    }

    pub fn add_assign(&mut self, other: &Tensor2) {
        assert_eq!(self.shape(), other.shape(), "element-wise add needs equal shapes");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: Real) -> Tensor2 {
        self.map(|v| v * s)
    }

    /// Adds `bias` (a single row) to every row.
    pub fn add_row(&self, bias: &Tensor2) -> Tensor2 {
        assert_eq!(bias.rows, 1, "bias must be a single row");
        assert_eq!(bias.cols, self.cols, "bias width must match");
        let mut out = self.clone();
        for r in 0..out.rows {
            for (v, &b) in out.row_mut(r).iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        out
    }

    /// Sums rows into a single-row tensor; the bias gradient.
    pub fn sum_rows(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, &v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors unless `self` has exactly the given shape.
    pub fn expect_shape(&self, rows: usize, cols: usize) -> Result<(), NnError> {
        if self.rows == rows && self.cols == cols {
            Ok(())
        } else {
            Err(NnError::ShapeMismatch {
                expected: format!("{rows}x{cols}"),
                got: format!("{}x{}", self.rows, self.cols),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_computation() {
        let a = Tensor2::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor2::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = Tensor2::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0]);
        let b = Tensor2::from_vec(2, 4, (0..8).map(|i| i as Real * 0.3 - 1.0).collect());
        assert_eq!(a.t_matmul(&b).data, a.transpose().matmul(&b).data);
        let c = Tensor2::from_vec(5, 3, (0..15).map(|i| (i as Real).sin()).collect());
        assert_eq!(a.matmul_t(&c).data, a.matmul(&c.transpose()).data);
    }

    #[test]
    fn bias_row_broadcast_and_row_sum_are_inverse_shapes() {
        let x = Tensor2::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor2::row_vector(vec![10.0, 20.0]);
        let y = x.add_row(&b);
        assert_eq!(y.data, vec![11.0, 22.0, 13.0, 24.0, 15.0, 26.0]);
        assert_eq!(y.sum_rows().data, vec![39.0, 72.0]);
    }

    #[test]
    fn shape_expectations_report_both_shapes() {
        let x = Tensor2::zeros(2, 3);
        assert!(x.expect_shape(2, 3).is_ok());
        let err = x.expect_shape(4, 1).unwrap_err();
        assert!(err.to_string().contains("4x1") && err.to_string().contains("2x3"));
    }
}
