//! Overflow-safe scalar kernels shared by the likelihood and model code.
//!
//! Linear predictors can exceed ±700 during line search, so nothing here may
//! form `exp(u)` for large positive `u`. Probabilities are clamped into the
//! open unit interval so downstream logs never see 0 or 1.

/// Largest `f64` strictly below 1.
pub const MAX_PROB: f64 = 1.0 - f64::EPSILON / 2.0;

/// Smallest probability we ever report; keeps logs finite.
pub const MIN_PROB: f64 = f64::MIN_POSITIVE;

/// Clamp a probability into the open interval (0, 1).
#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(MIN_PROB, MAX_PROB)
}

/// `log(1 + e^u)` in branch form: `u + log1p(e^-u)` for positive `u`,
/// `log1p(e^u)` otherwise.
#[inline]
pub fn log1pexp(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// `log(1 - e^l)` for `l <= 0`, switching between `ln(-expm1(l))` and
/// `log1p(-exp(l))` at `-ln 2` to avoid cancellation at both ends.
///
/// Returns `-inf` when `l` rounds to 0; callers that divide by the result
/// apply their own floor.
#[inline]
pub fn log1mexp(l: f64) -> f64 {
    debug_assert!(l <= 0.0);
    if l > -std::f64::consts::LN_2 {
        (-l.exp_m1()).ln()
    } else {
        (-l.exp()).ln_1p()
    }
}

/// Standard logistic function in branch form, clamped into (0, 1).
#[inline]
pub fn sigmoid(u: f64) -> f64 {
    let raw = if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    };
    clamp_prob(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log1pexp_matches_naive_in_safe_range() {
        for &u in &[-30.0, -1.0, 0.0, 0.5, 10.0, 30.0] {
            let naive = (1.0 + f64::exp(u)).ln();
            assert!((log1pexp(u) - naive).abs() < 1e-12 * (1.0 + naive.abs()));
        }
    }

    #[test]
    fn log1pexp_large_argument_is_linear() {
        assert_eq!(log1pexp(800.0), 800.0);
        assert_eq!(log1pexp(-800.0), 0.0);
    }

    #[test]
    fn log1mexp_agrees_with_naive() {
        for &l in &[-1e-8, -0.1, -0.5, -1.0, -5.0, -50.0] {
            let naive = (1.0 - f64::exp(l)).ln();
            assert!((log1mexp(l) - naive).abs() < 1e-9 * (1.0 + naive.abs()));
        }
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        assert!(sigmoid(800.0) < 1.0);
        assert!(sigmoid(800.0) > 1.0 - 1e-15);
        assert!(sigmoid(-800.0) > 0.0);
        assert!(sigmoid(-800.0) < 1e-300);
    }
}
