//! Minimal dense kernel: tensors, the GELU projection head with its backward
//! pass, row normalization, AdamW and a finite-difference checker.

pub mod adamw;
pub mod gradcheck;
pub mod mlp;
pub mod params;
pub mod tensor;

pub use adamw::AdamWState;
pub use gradcheck::{finite_diff_check, max_relative_error};
pub use mlp::{gelu, gelu_grad, MlpCache, MlpHead};
pub use params::{HeadDims, ParamGrads, ParamSet};
pub use tensor::{dot, Tensor2D};

use alloc::vec::Vec;

/// Norm guard for row normalization.
pub const NORM_EPS: f64 = 1e-12;

/// Divide each row by `max(‖row‖₂, 1e-12)`.
pub fn l2_normalize_rows(x: &Tensor2D) -> Tensor2D {
    l2_normalize_rows_with_norms(x).0
}

/// Normalized rows plus the guarded norm of each row (for the backward pass).
pub fn l2_normalize_rows_with_norms(x: &Tensor2D) -> (Tensor2D, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let n = libm::fmax(libm::sqrt(dot(row, row)), NORM_EPS);
        row.iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    (out, norms)
}

/// Backward of [`l2_normalize_rows`]: given `y = x/‖x‖` and `dy`, returns `dx`.
/// Rows that hit the norm guard are treated as a constant scaling.
pub fn l2_normalize_rows_backward(y: &Tensor2D, norms: &[f64], dy: &Tensor2D, x: &Tensor2D) -> Tensor2D {
    let mut dx = dy.clone();
    for (i, &n) in norms.iter().enumerate().take(y.rows()) {
        let raw = libm::sqrt(dot(x.row(i), x.row(i)));
        let yr = y.row(i);
        let proj = if raw >= NORM_EPS { dot(yr, dy.row(i)) } else { 0.0 };
        for (d, &yv) in dx.row_mut(i).iter_mut().zip(yr) {
            *d = (*d - yv * proj) / n;
        }
    }
    dx
}
