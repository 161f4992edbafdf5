//! Minimal dense linear algebra used by the forward/backward kernels.
//!
//! Everything is `f64`, row-major, and allocation-explicit so the manual
//! backward passes stay easy to audit. No BLAS: matrices here are small
//! (hundreds of rows at most) and the training loops are dominated by
//! message construction, not matmuls.

use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// y = A·x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for c in 0..self.cols {
                acc += row[c] * x[c];
            }
            y[r] = acc;
        }
        y
    }

    /// out += Aᵀ·u  (the input-side adjoint of `matvec`).
    pub fn matvec_t_acc(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for r in 0..self.rows {
            let ur = u[r];
            if ur == 0.0 {
                continue;
            }
            let row = self.row(r);
            for c in 0..self.cols {
                out[c] += row[c] * ur;
            }
        }
    }

    /// self += u ⊗ x  (the weight-side adjoint of `matvec`).
    pub fn outer_acc(&mut self, u: &[f64], x: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for r in 0..self.rows {
            let ur = u[r];
            if ur == 0.0 {
                continue;
            }
            let row = self.row_mut(r);
            for c in 0..x.len() {
                row[c] += ur * x[c];
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// out += s·x
#[inline]
pub fn axpy(s: f64, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, xi) in out.iter_mut().zip(x) {
        *o += s * xi;
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Adjoint of `relu` at pre-activation `pre`: d_pre = d_out ∘ 1(pre > 0).
pub fn relu_backward(pre: &[f64], d_out: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(d_out)
        .map(|(&p, &d)| if p > 0.0 { d } else { 0.0 })
        .collect()
}

/// a ‖ b
pub fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matvec_and_adjoints_agree_with_inner_products() {
        // <A·x, u> == <x, Aᵀ·u> for random-ish fixed data.
        let a = Mat { rows: 3, cols: 2, data: vec![1.0, -2.0, 0.5, 3.0, -1.5, 0.25] };
        let x = [0.7, -1.3];
        let u = [2.0, -0.5, 1.1];
        let ax = a.matvec(&x);
        let mut atu = vec![0.0; 2];
        a.matvec_t_acc(&u, &mut atu);
        assert_relative_eq!(dot(&ax, &u), dot(&x, &atu), epsilon = 1e-12);
    }

    #[test]
    fn outer_acc_matches_gradient_of_bilinear_form() {
        // d/dA (uᵀ·A·x) = u ⊗ x, checked entrywise.
        let mut g = Mat::zeros(2, 3);
        let u = [1.5, -2.0];
        let x = [3.0, 0.0, -1.0];
        g.outer_acc(&u, &x);
        assert_eq!(g.data, vec![4.5, 0.0, -1.5, -6.0, -0.0, 2.0]);
    }

    #[test]
    fn relu_backward_masks_on_preactivation() {
        let pre = [-1.0, 0.0, 2.0];
        let d = relu_backward(&pre, &[5.0, 5.0, 5.0]);
        assert_eq!(d, vec![0.0, 0.0, 5.0]);
    }
}
