//! The internal (unbounded) scale for autocorrelation parameters.
//!
//! Both spatial parameters live in a bounded interval, which is awkward for
//! grids, Hessians, and random walks near the edges. Work happens instead on
//! gamma = log((1 + x) / (1 - x)), the scaled logit of (x + 1) / 2, whose
//! inverse is
//!
//! ```text
//! f(gamma) = 2 exp(gamma) / (1 + exp(gamma)) - 1 = tanh(gamma / 2)
//! ```
//!
//! The tanh form is the numerically stable branch: it neither overflows for
//! large gamma nor loses the sign symmetry f(-gamma) = -f(gamma). Note that
//! beyond |gamma| of roughly 38 the result is no longer strictly inside
//! (-1, 1) in double precision (tanh rounds to +-1); admissibility checks
//! downstream operate on the bounded scale and catch that saturation.
//!
//! Grid sizing uses the delta method: if an estimate x carries standard
//! error s, the variance of gamma is approximately s^2 (g'(x))^2 with
//! g'(x) = 2 / ((1 + x)(1 - x)).

use crate::error::{Error, Result};

/// A point of the two-dimensional internal scale: `gamma1` carries the
/// response autocorrelation, `gamma2` the error autocorrelation.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct InternalPoint {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl InternalPoint {
    pub fn new(gamma1: f64, gamma2: f64) -> Self {
        InternalPoint { gamma1, gamma2 }
    }

    /// Back-transformed response autocorrelation.
    pub fn rho(&self) -> f64 {
        from_internal(self.gamma1)
    }

    /// Back-transformed error autocorrelation.
    pub fn lambda(&self) -> f64 {
        from_internal(self.gamma2)
    }
}

/// Map x in (-1, 1) to the internal scale: gamma = log((1+x)/(1-x)).
pub fn to_internal(x: f64) -> Result<f64> {
    if !(x.abs() < 1.0) {
        return Err(Error::OutOfRange {
            name: "autocorrelation".into(),
            value: x,
            lo: -1.0,
            hi: 1.0,
        });
    }
    // ln_1p on both halves keeps precision near x = 0.
    Ok(x.ln_1p() - (-x).ln_1p())
}

/// Inverse of [`to_internal`]; total on finite inputs.
pub fn from_internal(gamma: f64) -> f64 {
    (0.5 * gamma).tanh()
}

/// Delta-method variance of the internal estimate: se^2 (2/((1+x)(1-x)))^2.
pub fn delta_variance(estimate: f64, std_error: f64) -> Result<f64> {
    if !(estimate.abs() < 1.0) {
        return Err(Error::OutOfRange {
            name: "estimate".into(),
            value: estimate,
            lo: -1.0,
            hi: 1.0,
        });
    }
    if !(std_error > 0.0) {
        return Err(Error::Invalid {
            name: "std_error".into(),
            reason: format!("must be positive, got {std_error}"),
        });
    }
    let slope = 2.0 / ((1.0 + estimate) * (1.0 - estimate));
    Ok(std_error * std_error * slope * slope)
}

/// log |df/dgamma| = log(2 e^g / (1 + e^g)^2), evaluated via the reflected
/// form so large |gamma| neither overflows nor cancels.
pub fn log_jacobian(gamma: f64) -> f64 {
    let a = -gamma.abs();
    std::f64::consts::LN_2 + a - 2.0 * a.exp().ln_1p()
}

/// |df/dgamma| itself, in the same reflected form. At gamma = 0 this is
/// exactly 0.5 (the expression reduces to 2/4 in exact IEEE arithmetic).
pub fn jacobian(gamma: f64) -> f64 {
    let q = (-gamma.abs()).exp();
    let d = 1.0 + q;
    2.0 * q / (d * d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn known_values() {
        assert_eq!(to_internal(0.0).unwrap(), 0.0);
        assert_relative_eq!(to_internal(0.5).unwrap(), 3.0f64.ln(), epsilon = 1e-15);
        assert_eq!(from_internal(0.0), 0.0);
        assert!(to_internal(1.0).is_err());
        assert!(to_internal(-1.0).is_err());
    }

    #[test]
    fn large_gamma_saturates_without_overflow() {
        let x = from_internal(40.0);
        assert!(x.is_finite());
        assert!(x <= 1.0);
        // 2 exp(-40) is below half an ulp of 1, so the rounded result
        // coincides with the extended-precision value 1 - 2 exp(-40).
        assert_eq!(x, 1.0 - 2.0 * (-40.0f64).exp());
        // Just inside the saturation zone the value is still interior.
        assert!(from_internal(36.0) < 1.0);
        assert!(from_internal(-36.0) > -1.0);
    }

    #[test]
    fn monotone_on_a_sampled_grid() {
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=200 {
            let gamma = -10.0 + 0.1 * k as f64;
            let x = from_internal(gamma);
            assert!(x > prev);
            prev = x;
        }
    }

    #[test]
    fn delta_variance_reference_values() {
        assert_relative_eq!(delta_variance(0.0, 0.1).unwrap(), 0.04, epsilon = 1e-15);
        assert_relative_eq!(delta_variance(0.93, 0.02).unwrap(), 0.08766, epsilon = 1e-5);
        assert_relative_eq!(delta_variance(0.09, 0.10).unwrap(), 0.04066, epsilon = 1e-5);
        assert!(delta_variance(1.0, 0.1).is_err());
        assert!(delta_variance(0.5, 0.0).is_err());
    }

    #[test]
    fn jacobian_symmetry_and_center_value() {
        assert_eq!(jacobian(0.0), 0.5);
        for gamma in [0.3, 1.7, 9.0, 33.0] {
            assert_eq!(jacobian(gamma), jacobian(-gamma));
            assert_eq!(log_jacobian(gamma), log_jacobian(-gamma));
            assert_relative_eq!(log_jacobian(gamma), jacobian(gamma).ln(), epsilon = 1e-12);
        }
        // Far tail: log form stays finite and decays linearly.
        assert_relative_eq!(
            log_jacobian(700.0),
            std::f64::consts::LN_2 - 700.0,
            epsilon = 1e-12
        );
    }

    proptest! {
        #[test]
        fn roundtrip_is_identity(x in -0.999f64..0.999) {
            let gamma = to_internal(x).unwrap();
            prop_assert!((from_internal(gamma) - x).abs() <= 1e-12);
        }

        #[test]
        fn internal_point_backtransforms_consistently(
            g1 in -8.0f64..8.0,
            g2 in -8.0f64..8.0,
        ) {
            let p = InternalPoint::new(g1, g2);
            prop_assert_eq!(p.rho(), from_internal(g1));
            prop_assert_eq!(p.lambda(), from_internal(g2));
            prop_assert!(p.rho().abs() < 1.0 && p.lambda().abs() < 1.0);
        }
    }
}
