//! Small dense linear algebra on row-major square matrices.

use crate::math::sqrt;

/// In-place Cholesky factorisation `a = l lᵀ` of an `n×n` symmetric matrix.
/// The lower triangle of `a` is overwritten by `l`. Returns `false` if
/// `a` is not numerically positive definite.
pub fn cholesky(a: &mut [f64], n: usize) -> bool {
    debug_assert!(a.len() >= n * n);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = sqrt(d);
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

/// Solves `l lᵀ x = b` in place given the factor from [`cholesky`].
pub fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Diagonal of `(l lᵀ)⁻¹`; `work` must hold `n` values.
pub fn cholesky_inverse_diag(l: &[f64], n: usize, work: &mut [f64], out: &mut [f64]) {
    for j in 0..n {
        work[..n].iter_mut().for_each(|w| *w = 0.0);
        work[j] = 1.0;
        cholesky_solve(l, n, &mut work[..n]);
        out[j] = work[j];
    }
}

/// Eigenvalues of a symmetric 2×2 matrix, ascending.
pub fn sym2_eigenvalues(a: f64, b: f64, d: f64) -> (f64, f64) {
    let mean = 0.5 * (a + d);
    let r = sqrt(0.25 * (a - d) * (a - d) + b * b);
    (mean - r, mean + r)
}

/// Principal square root of a symmetric positive semidefinite 2×2 matrix
/// `[[a, b], [b, d]]`; negative eigenvalues are clipped to zero.
pub fn sym2_sqrt(a: f64, b: f64, d: f64) -> (f64, f64, f64) {
    let (l0, l1) = sym2_eigenvalues(a, b, d);
    let (s0, s1) = (sqrt(l0.max(0.0)), sqrt(l1.max(0.0)));
    if l1 - l0 <= 1e-300 {
        return (s1, 0.0, s1);
    }
    // Spectral projector onto the top eigenvector: (A - l0 I)/(l1 - l0).
    let inv = 1.0 / (l1 - l0);
    let (pa, pb, pd) = ((a - l0) * inv, b * inv, (d - l0) * inv);
    (s0 + (s1 - s0) * pa, (s1 - s0) * pb, s0 + (s1 - s0) * pd)
}
