//! The per-sample potential
//! `ψ(χ, z) = -½(y - σ(χ)ᵀz)² + Σ log N(χ_l; γ_l, V_k) + Σ log N(z_l; ω_l, V_v)`
//! and its maximiser.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::activation::{ActivationKind, Jet};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_inverse_diag, cholesky_solve};
use crate::math::{ln, sq, sqrt, LN_2PI};

/// Stationarity tolerance on the gradient of ψ.
pub const PSI_GRAD_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct PsiOutProblem {
    pub y: f64,
    pub gamma: Vec<f64>,
    pub omega: Vec<f64>,
    pub v_k: f64,
    pub v_v: f64,
    pub act: ActivationKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsiOutSolution {
    pub chi_prime: Vec<f64>,
    pub z_prime: Vec<f64>,
    pub cov_chi: Vec<f64>,
    pub cov_z: Vec<f64>,
    pub psi_value: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Copy)]
pub(crate) struct PsiRef<'a> {
    pub y: f64,
    pub gamma: &'a [f64],
    pub omega: &'a [f64],
    pub v_k: f64,
    pub v_v: f64,
    pub act: ActivationKind,
}

impl PsiOutProblem {
    pub(crate) fn as_ref(&self) -> PsiRef<'_> {
        PsiRef { y: self.y, gamma: &self.gamma, omega: &self.omega, v_k: self.v_k, v_v: self.v_v, act: self.act }
    }

    fn check(&self) -> Result<()> {
        let l = self.gamma.len();
        if l == 0 || self.omega.len() != l {
            return Err(Error::Dimension { expected: l, found: self.omega.len() });
        }
        if !(self.v_k > 0.0 && self.v_v > 0.0) {
            crate::error::bail!(Domain, "variances must be positive, got V_k = {}, V_v = {}", self.v_k, self.v_v);
        }
        if !self.gamma.iter().chain(&self.omega).all(|x| x.is_finite()) || !self.y.is_finite() {
            crate::error::bail!(Domain, "non-finite ψ_out input");
        }
        Ok(())
    }
}

fn normalizers(l: usize, v_k: f64, v_v: f64) -> f64 {
    -0.5 * l as f64 * (LN_2PI + ln(v_k)) - 0.5 * l as f64 * (LN_2PI + ln(v_v))
}

/// Exact value of ψ including the Gaussian normalisations.
pub fn psi_out_value(p: &PsiOutProblem, chi: &[f64], z: &[f64]) -> f64 {
    let l = p.gamma.len();
    let mut jet = Jet::with_capacity(l);
    jet.eval(p.act, chi);
    let r = p.y - jet.dot(z);
    let mut v = -0.5 * r * r + normalizers(l, p.v_k, p.v_v);
    for j in 0..l {
        v -= sq(chi[j] - p.gamma[j]) / (2.0 * p.v_k) + sq(z[j] - p.omega[j]) / (2.0 * p.v_v);
    }
    v
}

/// Reusable buffers for the Newton solver.
pub(crate) struct PsiWorkspace {
    jet: Jet,
    x: Vec<f64>,
    trial: Vec<f64>,
    g: Vec<f64>,
    h: Vec<f64>,
    chol: Vec<f64>,
    step: Vec<f64>,
    w: Vec<f64>,
    hd: Vec<f64>,
    jac: Vec<f64>,
    work: Vec<f64>,
    pub cov: Vec<f64>,
}

impl PsiWorkspace {
    pub fn new(l: usize) -> Self {
        let n = 2 * l;
        Self {
            jet: Jet::with_capacity(l),
            x: vec![0.0; n],
            trial: vec![0.0; n],
            g: vec![0.0; n],
            h: vec![0.0; n * n],
            chol: vec![0.0; n * n],
            step: vec![0.0; n],
            w: vec![0.0; l],
            hd: vec![0.0; l * l],
            jac: vec![0.0; l * l],
            work: vec![0.0; n],
            cov: vec![0.0; n],
        }
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    fn resize(&mut self, l: usize) {
        let n = 2 * l;
        self.x.resize(n, 0.0);
        self.trial.resize(n, 0.0);
        self.g.resize(n, 0.0);
        self.h.resize(n * n, 0.0);
        self.chol.resize(n * n, 0.0);
        self.step.resize(n, 0.0);
        self.w.resize(l, 0.0);
        self.hd.resize(l * l, 0.0);
        self.jac.resize(l * l, 0.0);
        self.work.resize(n, 0.0);
        self.cov.resize(n, 0.0);
    }
}

/// `f = -ψ` without normalisations, evaluated at `x = [χ; z]`.
fn objective(p: &PsiRef, jet: &mut Jet, x: &[f64]) -> f64 {
    let l = p.gamma.len();
    let (chi, z) = x.split_at(l);
    jet.eval(p.act, chi);
    let r = p.y - jet.dot(z);
    let mut f = 0.5 * r * r;
    for j in 0..l {
        f += sq(chi[j] - p.gamma[j]) / (2.0 * p.v_k) + sq(z[j] - p.omega[j]) / (2.0 * p.v_v);
    }
    f
}

/// Value, gradient and Hessian of `f = -ψ` at `ws.x`.
fn derivatives(p: &PsiRef, ws: &mut PsiWorkspace) -> f64 {
    let l = p.gamma.len();
    let n = 2 * l;
    let f = objective(p, &mut ws.jet, &ws.x);
    let (chi, z) = ws.x.split_at(l);
    let r = p.y - ws.jet.dot(z);
    ws.jet.vjp(z, &mut ws.w);
    ws.jet.hessian_dot(z, &mut ws.hd);
    ws.jet.jacobian(&mut ws.jac);
    let s = &ws.jet.sigma;
    for j in 0..l {
        ws.g[j] = -r * ws.w[j] + (chi[j] - p.gamma[j]) / p.v_k;
        ws.g[l + j] = -r * s[j] + (z[j] - p.omega[j]) / p.v_v;
    }
    for j in 0..l {
        for k in 0..l {
            let mut hcc = ws.w[j] * ws.w[k] - r * ws.hd[j * l + k];
            let mut hzz = s[j] * s[k];
            if j == k {
                hcc += 1.0 / p.v_k;
                hzz += 1.0 / p.v_v;
            }
            ws.h[j * n + k] = hcc;
            ws.h[(l + j) * n + l + k] = hzz;
            // ∂²f/∂χ_j∂z_k = w_j s_k - r J_kj
            let hcz = ws.w[j] * s[k] - r * ws.jac[k * l + j];
            ws.h[j * n + l + k] = hcz;
            ws.h[(l + k) * n + j] = hcz;
        }
    }
    f
}

fn norm(v: &[f64]) -> f64 {
    sqrt(v.iter().map(|x| x * x).sum())
}

/// Damped Newton from `ws.x`. On success `ws.x` holds the maximiser and
/// `ws.cov` the diagonal of the inverse negated Hessian. Returns `(f, |∇f|)`.
fn newton(p: &PsiRef, ws: &mut PsiWorkspace) -> Option<(f64, f64)> {
    let n = 2 * p.gamma.len();
    for _ in 0..200 {
        let f = derivatives(p, ws);
        if !f.is_finite() {
            return None;
        }
        let gn = norm(&ws.g[..n]);
        ws.chol[..n * n].copy_from_slice(&ws.h[..n * n]);
        let pd = cholesky(&mut ws.chol, n);
        if gn < PSI_GRAD_TOL {
            if !pd {
                return None;
            }
            cholesky_inverse_diag(&ws.chol, n, &mut ws.work, &mut ws.cov);
            return Some((f, gn));
        }
        // Levenberg–Marquardt shift when the Hessian is not positive definite.
        if !pd {
            let diag = (0..n).map(|i| ws.h[i * n + i].abs()).fold(0.0, f64::max);
            let mut lambda = 1e-8 * diag.max(1.0);
            loop {
                ws.chol[..n * n].copy_from_slice(&ws.h[..n * n]);
                for i in 0..n {
                    ws.chol[i * n + i] += lambda;
                }
                if cholesky(&mut ws.chol, n) {
                    break;
                }
                lambda *= 10.0;
                if !lambda.is_finite() {
                    return None;
                }
            }
        }
        for i in 0..n {
            ws.step[i] = -ws.g[i];
        }
        cholesky_solve(&ws.chol, n, &mut ws.step);
        let slope: f64 = ws.step[..n].iter().zip(&ws.g).map(|(a, b)| a * b).sum();
        // Close to the optimum the decrease of f drops below its round-off;
        // take the full Newton step when the model is convex.
        if pd && gn < 1e-5 {
            for i in 0..n {
                ws.x[i] += ws.step[i];
            }
            continue;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                ws.trial[i] = ws.x[i] + t * ws.step[i];
            }
            let ft = objective(p, &mut ws.jet, &ws.trial);
            if ft <= f + 1e-4 * t * slope || (ft <= f && t < 1e-6) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Round-off floor: accept a point that is stationary to working precision.
            if gn < 1e3 * PSI_GRAD_TOL && pd {
                cholesky_inverse_diag(&ws.chol, n, &mut ws.work, &mut ws.cov);
                return Some((f, gn));
            }
            return None;
        }
        ws.x[..n].copy_from_slice(&ws.trial[..n]);
    }
    None
}

/// Solves into `ws`, warm-starting from `warm` (`[χ; z]`) when given and
/// falling back to the Gaussian means `(γ, ω)`.
pub(crate) fn solve_into(p: &PsiRef, warm: Option<&[f64]>, ws: &mut PsiWorkspace) -> Result<(f64, f64)> {
    let l = p.gamma.len();
    ws.resize(l);
    if let Some(w) = warm {
        ws.x[..2 * l].copy_from_slice(&w[..2 * l]);
        if let Some(r) = newton(p, ws) {
            return Ok(r);
        }
    }
    ws.x[..l].copy_from_slice(p.gamma);
    ws.x[l..2 * l].copy_from_slice(p.omega);
    if let Some(r) = newton(p, ws) {
        return Ok(r);
    }
    Err(Error::Numerical(format!(
        "ψ_out maximisation failed: y = {}, γ = {:?}, ω = {:?}, V_k = {}, V_v = {}, σ = {}",
        p.y,
        p.gamma,
        p.omega,
        p.v_k,
        p.v_v,
        p.act.name()
    )))
}

/// Local maximiser of ψ by Newton's method with the analytic Hessian.
pub fn solve_psi_out(p: &PsiOutProblem, warm_start: Option<(&[f64], &[f64])>) -> Result<PsiOutSolution> {
    p.check()?;
    let l = p.gamma.len();
    let mut ws = PsiWorkspace::new(l);
    let warm: Option<Vec<f64>> = warm_start.map(|(c, z)| c.iter().chain(z).copied().collect());
    let (f, gn) = solve_into(&p.as_ref(), warm.as_deref(), &mut ws)?;
    Ok(PsiOutSolution {
        chi_prime: ws.x[..l].to_vec(),
        z_prime: ws.x[l..2 * l].to_vec(),
        cov_chi: ws.cov[..l].to_vec(),
        cov_z: ws.cov[l..2 * l].to_vec(),
        psi_value: -f + normalizers(l, p.v_k, p.v_v),
        grad_norm: gn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(act: ActivationKind) -> PsiOutProblem {
        PsiOutProblem { y: 0.7, gamma: vec![0.4, -1.2, 0.3], omega: vec![-0.5, 0.9, 0.2], v_k: 0.8, v_v: 0.5, act }
    }

    #[test]
    fn value_at_gaussian_means() {
        let p = problem(ActivationKind::Softmax);
        let s = ActivationKind::Softmax.apply(&p.gamma);
        let r = p.y - s.iter().zip(&p.omega).map(|(a, b)| a * b).sum::<f64>();
        let expect = -0.5 * r * r - 1.5 * (LN_2PI + ln(0.8)) - 1.5 * (LN_2PI + ln(0.5));
        assert!((psi_out_value(&p, &p.gamma, &p.omega) - expect).abs() < 1e-14);
    }

    #[test]
    fn hessian_matches_finite_differences() {
        for act in [ActivationKind::Softmax, ActivationKind::LinearPlusOne, ActivationKind::ErfBias(0.5), ActivationKind::SoftplusNormalized] {
            let p = problem(act);
            let pr = p.as_ref();
            let mut ws = PsiWorkspace::new(3);
            let x0 = [0.1, -0.3, 0.5, 0.2, -0.4, 0.7];
            ws.x.copy_from_slice(&x0);
            derivatives(&pr, &mut ws);
            let (g0, h0) = (ws.g.clone(), ws.h.clone());
            let eps = 1e-6;
            let mut jet = Jet::with_capacity(3);
            for i in 0..6 {
                let mut xp = x0;
                let mut xm = x0;
                xp[i] += eps;
                xm[i] -= eps;
                let fd = (objective(&pr, &mut jet, &xp) - objective(&pr, &mut jet, &xm)) / (2.0 * eps);
                assert!((fd - g0[i]).abs() < 1e-7, "{act:?} grad {i}");
                ws.x.copy_from_slice(&xp);
                derivatives(&pr, &mut ws);
                let gp = ws.g.clone();
                ws.x.copy_from_slice(&xm);
                derivatives(&pr, &mut ws);
                for j in 0..6 {
                    let fd = (gp[j] - ws.g[j]) / (2.0 * eps);
                    assert!((fd - h0[j * 6 + i]).abs() < 1e-6, "{act:?} hess {i},{j}");
                }
            }
        }
    }

    #[test]
    fn exact_fit_returns_means() {
        let mut p = problem(ActivationKind::Softmax);
        let s = ActivationKind::Softmax.apply(&p.gamma);
        p.y = s.iter().zip(&p.omega).map(|(a, b)| a * b).sum();
        let sol = solve_psi_out(&p, None).unwrap();
        for j in 0..3 {
            assert!((sol.chi_prime[j] - p.gamma[j]).abs() < 1e-12);
            assert!((sol.z_prime[j] - p.omega[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_with_positive_covariances() {
        for act in [ActivationKind::Softmax, ActivationKind::LinearPlusOne, ActivationKind::ErfBias(0.5), ActivationKind::SoftplusNormalized] {
            let sol = solve_psi_out(&problem(act), None).unwrap();
            assert!(sol.grad_norm < PSI_GRAD_TOL);
            assert!(sol.cov_chi.iter().chain(&sol.cov_z).all(|&c| c > 0.0));
        }
    }
}
