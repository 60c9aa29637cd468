//! Scalar helpers on top of `libm` so the same code runs with and without `std`.

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

/// Logistic function, evaluated without overflow for either sign.
#[inline]
pub(crate) fn logistic(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + exp(-a))
    } else {
        let e = exp(a);
        e / (1.0 + e)
    }
}

/// `ln(logistic(a))`.
#[inline]
pub(crate) fn ln_logistic(a: f64) -> f64 {
    if a >= 0.0 {
        -ln_1p(exp(-a))
    } else {
        a - ln_1p(exp(a))
    }
}

/// Log-density of `N(mean, var)` at `y`.
#[inline]
pub(crate) fn ln_normal_pdf(y: f64, mean: f64, var: f64) -> f64 {
    let d = y - mean;
    -0.5 * (LN_2PI + ln(var) + d * d / var)
}

/// `ln(sum(exp(xs)))`; `-inf` for an empty or all `-inf` input.
pub(crate) fn ln_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| exp(x - m)).sum();
    m + ln(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_is_symmetric_and_saturates() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!((1.0 - logistic(1e3)).abs() < 1e-10);
        assert!(logistic(-1e3) >= 0.0);
        for a in [-30.0, -2.5, 0.1, 7.0] {
            assert!((logistic(a) + logistic(-a) - 1.0).abs() < 1e-15);
            assert!((ln_logistic(a) - ln(logistic(a))).abs() < 1e-12);
        }
    }

    #[test]
    fn ln_sum_exp_handles_large_offsets() {
        let v = ln_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + core::f64::consts::LN_2)).abs() < 1e-12);
        assert_eq!(ln_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
