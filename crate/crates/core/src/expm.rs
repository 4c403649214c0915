//! Action of the zero-order-hold propagator on sparse systems.
//!
//! For `ẋ = A x + w` with `w` held constant over a step of length `h`,
//!
//! ```text
//! x(h) = e^{Ah} x + h φ₁(Ah) w = x + h φ₁(Ah) (A x + w),   φ₁(z) = (e^z - 1) / z,
//! ```
//!
//! which needs only matrix-vector products and stays well defined when `A`
//! is singular. The step is split into substeps with `‖A‖∞ τ ≤ 1/2` and
//! `φ₁` is summed as a Taylor series on each.

use nalgebra::DVector;
use nalgebra_sparse::CsrMatrix;

use crate::Real;

/// Largest `‖A‖∞ τ` allowed on one substep.
const THETA: f64 = 0.5;
const MAX_TERMS: usize = 60;

pub fn spmv<T: Real>(a: &CsrMatrix<T>, x: &DVector<T>, out: &mut DVector<T>) {
    for (i, row) in a.row_iter().enumerate() {
        let mut acc = T::zero();
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            acc += v * x[j];
        }
        out[i] = acc;
    }
}

/// Infinity norm (maximum absolute row sum).
pub fn norm_inf<T: Real>(a: &CsrMatrix<T>) -> T {
    a.row_iter()
        .map(|row| row.values().iter().fold(T::zero(), |s, v| s + v.abs()))
        .fold(T::zero(), |m, s| m.max(s))
}

fn amax<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Exact zero-order-hold update `e^{Ah}x + hφ₁(Ah)w`, truncating each Taylor
/// series once a term falls below `tol` relative to the running sum.
pub fn zoh_step<T: Real>(
    a: &CsrMatrix<T>,
    a_norm: T,
    x: &DVector<T>,
    w: &DVector<T>,
    h: T,
    tol: T,
) -> DVector<T> {
    let n = x.len();
    let substeps = (a_norm * h / T::lit(THETA)).ceil().as_f64().max(1.0) as usize;
    let tau = h / T::count(substeps);
    let mut x = x.clone();
    let mut r = DVector::zeros(n);
    let mut term = DVector::zeros(n);
    let mut next = DVector::zeros(n);
    for _ in 0..substeps {
        spmv(a, &x, &mut r);
        r += w;
        term.copy_from(&r);
        let mut acc = r.clone();
        for k in 1..MAX_TERMS {
            spmv(a, &term, &mut next);
            let scale = tau / T::count(k + 1);
            for (t, nx) in term.iter_mut().zip(next.iter()) {
                *t = *nx * scale;
            }
            acc += &term;
            if amax(&term) <= tol * amax(&acc) {
                break;
            }
        }
        x.axpy(tau, &acc, T::one());
    }
    x
}
