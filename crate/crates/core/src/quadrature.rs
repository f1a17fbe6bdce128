//! Gauss–Hermite quadrature for expectations over a standard normal variable.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{abs, sqrt};

/// Nodes and weights with `Σ wᵢ f(xᵢ) ≈ E f(Z)`, `Z ~ N(0, 1)`.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// `n`-point rule. Nodes are eigenvalues of the Jacobi matrix of the
    /// probabilists' Hermite polynomials, polished by Newton steps; weights
    /// come from the orthonormal polynomial values.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut d = vec![0.0; n];
        let mut e: Vec<f64> = (0..n).map(|k| if k + 1 < n { sqrt((k + 1) as f64) } else { 0.0 }).collect();
        symmetric_tridiagonal_eigenvalues(&mut d, &mut e);
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut weights = vec![0.0; n];
        for (i, x) in d.iter_mut().enumerate() {
            for _ in 0..2 {
                let (pn, pn1, _) = orthonormal_hermite(*x, n);
                if pn1 != 0.0 && pn.is_finite() && pn1.is_finite() {
                    *x -= pn / (sqrt(n as f64) * pn1);
                }
            }
            let (_, _, sum_sq) = orthonormal_hermite(*x, n);
            weights[i] = if sum_sq.is_finite() { 1.0 / sum_sq } else { 0.0 };
        }
        // Enforce exact symmetry.
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (d[j] - d[i]);
            let w = 0.5 * (weights[i] + weights[j]);
            d[i] = -x;
            d[j] = x;
            weights[i] = w;
            weights[j] = w;
        }
        if n % 2 == 1 {
            d[n / 2] = 0.0;
        }
        Self { nodes: d, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Returns `(p_n(x), p_{n-1}(x), Σ_{k<n} p_k(x)²)` for the orthonormal
/// probabilists' Hermite polynomials.
fn orthonormal_hermite(x: f64, n: usize) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut sum = 0.0;
    for k in 0..n {
        sum += cur * cur;
        let next = (x * cur - sqrt(k as f64) * prev) / sqrt((k + 1) as f64);
        prev = cur;
        cur = next;
    }
    (cur, prev, sum)
}

/// Implicit QL iteration. `d` holds the diagonal, `e[..n-1]` the
/// sub-diagonal; on return `d` holds the eigenvalues.
fn symmetric_tridiagonal_eigenvalues(d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    if n < 2 {
        return;
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = abs(d[m]) + abs(d[m + 1]);
                if abs(e[m]) <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 100, "tridiagonal eigenvalue iteration did not converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = libm::hypot(g, 1.0);
            g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { abs(r) } else { -abs(r) });
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = libm::hypot(f, g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_gaussian_moments() {
        for n in [1, 2, 5, 64, 257, 1024] {
            let gh = GaussHermite::new(n);
            assert!((gh.expect(|_| 1.0) - 1.0).abs() < 1e-12, "n={n}");
            if n >= 2 {
                assert!((gh.expect(|x| x * x) - 1.0).abs() < 1e-11, "n={n}");
            }
            if n >= 4 {
                assert!((gh.expect(|x| x.powi(6)) - 15.0).abs() < 1e-9, "n={n}");
            }
        }
    }

    #[test]
    fn two_point_rule_is_exact() {
        let gh = GaussHermite::new(2);
        assert!((gh.nodes[1] - 1.0).abs() < 1e-15);
        assert!((gh.weights[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn smooth_expectation() {
        // E cos(Z) = e^{-1/2}
        let gh = GaussHermite::new(40);
        assert!((gh.expect(libm::cos) - libm::exp(-0.5)).abs() < 1e-14);
    }
}
