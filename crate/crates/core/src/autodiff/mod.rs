//! Dense 2-D tensors with eager reverse-mode differentiation.
//!
//! Operations are recorded on a [`Tape`] as they execute; [`Tape::backward`]
//! walks the record once in reverse. Every produced value and gradient is
//! checked for NaN/Inf.

mod sparse;
mod tape;
mod tensor;

pub use sparse::CsrMatrix;
pub use tape::{Axis, Gradients, Tape, Var};
pub use tensor::Tensor;

/// `c += a · b` for row-major operands described by `(rows, cols)` and
/// element strides. Thin wrapper over the `matrixmultiply` kernel.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: bounds are asserted above and every stride pair addresses a
    // dense m×k, k×n or m×n block inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
