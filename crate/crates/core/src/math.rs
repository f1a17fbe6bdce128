//! Scalar special functions backed by `libm`, usable without `std`.

pub use libm::{erf, erfc, exp, expm1, fabs as abs, log as ln, log1p, pow, sqrt, tanh};

pub const SQRT_2: f64 = core::f64::consts::SQRT_2;
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// 2/√π
pub const FRAC_2_SQRT_PI: f64 = core::f64::consts::FRAC_2_SQRT_PI;
/// 1/√(2π)
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn sq(x: f64) -> f64 {
    x * x
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * exp(-0.5 * x * x)
}

/// Standard normal distribution function, accurate in both tails.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// log(1 + eˣ) without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + log1p(exp(-x))
    } else {
        log1p(exp(x))
    }
}

/// Logistic function 1/(1 + e⁻ˣ).
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// log(softplus(x)), finite for every finite x.
#[inline]
pub fn ln_softplus(x: f64) -> f64 {
    if x < -30.0 {
        // softplus(x) = eˣ(1 - eˣ/2 + …)
        x + log1p(-0.5 * exp(x))
    } else {
        ln(softplus(x))
    }
}

/// Largest entry and its first index. Panics on an empty slice.
#[inline]
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// log Σ exp(xᵢ).
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + ln(xs.iter().map(|&x| exp(x - m)).sum::<f64>())
}

/// Writes softmax(scale · xs) into `out`.
pub fn softmax_scaled(xs: &[f64], scale: f64, out: &mut [f64]) {
    let m = xs.iter().map(|&x| scale * x).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = exp(scale * x - m);
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_matches_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-14);
        assert!((normal_cdf(-8.0) - 6.220_960_574_271_785e-16).abs() < 1e-28);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!((ln_softplus(-700.0) + 700.0).abs() < 1e-12);
        assert!((ln_softplus(2.0) - ln(softplus(2.0))).abs() < 1e-15);
        assert!((ln_softplus(-29.9) - ln(softplus(-29.9))).abs() < 1e-12);
        assert!((ln_softplus(-30.1) - ln(softplus(-30.1))).abs() < 1e-12);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.5]), 0);
    }
}
