//! Prior specification for the model's four parameter blocks.
//!
//! Coefficients carry independent zero-mean Gaussian priors with a common
//! scalar precision. The noise precision tau is either Gamma(shape, rate) or
//! fixed at a known value (the degenerate limit of a Gamma with shape and
//! rate growing at constant ratio, useful for closed-form cross-checks). The
//! two autocorrelation parameters carry densities on (-1, 1), uniform by
//! default.
//!
//! Because the grid and the samplers operate on the internal scale (see
//! [`crate::transform`]), the autocorrelation priors are consumed through
//! [`internal_log_prior`]: the base density at the back-transformed point
//! times the Jacobian of the transform. For the uniform base this is
//! exp(gamma) / (1 + exp(gamma))^2, whose value at zero is exactly 1/4.

use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::transform::{from_internal, jacobian, log_jacobian};

/// Prior on the noise precision tau.
#[derive(Clone, Debug, PartialEq)]
pub enum TauPrior {
    /// Gamma(shape, rate) on tau, the conventional conjugate choice.
    Gamma { shape: f64, rate: f64 },
    /// tau known exactly; inference conditions on it.
    Fixed(f64),
}

/// Prior density on an autocorrelation parameter, supported on (-1, 1).
#[derive(Clone, Debug, PartialEq)]
pub enum IntervalPrior {
    /// Uniform on (-1, 1), density 1/2.
    Uniform,
    /// Arbitrary tabulated density; its support must lie within [-1, 1].
    Tabulated(DensityGrid),
}

impl IntervalPrior {
    /// Log density at x in (-1, 1); negative infinity outside the support.
    pub fn log_density(&self, x: f64) -> f64 {
        match self {
            IntervalPrior::Uniform => {
                if x.abs() < 1.0 {
                    -std::f64::consts::LN_2
                } else {
                    f64::NEG_INFINITY
                }
            }
            IntervalPrior::Tabulated(grid) => {
                let d = grid.density_at(x);
                if d > 0.0 {
                    d.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        match self {
            IntervalPrior::Uniform => Ok(()),
            IntervalPrior::Tabulated(grid) => {
                let (lo, hi) = grid.support();
                if lo < -1.0 || hi > 1.0 {
                    return Err(Error::Invalid {
                        name: name.into(),
                        reason: format!("tabulated prior support [{lo}, {hi}] exceeds (-1, 1)"),
                    });
                }
                // DensityGrid normalizes on construction; this guards against
                // a grid whose trapezoid rule degraded through rescaling.
                let mass = grid.integral();
                if (mass - 1.0).abs() > 1e-6 {
                    return Err(Error::Invalid {
                        name: name.into(),
                        reason: format!("tabulated prior integrates to {mass}, not 1"),
                    });
                }
                Ok(())
            }
        }
    }
}

/// Full prior specification.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpec {
    /// Scalar precision of the independent zero-mean Gaussian coefficient
    /// priors.
    pub beta_precision: f64,
    /// Prior on the noise precision.
    pub tau: TauPrior,
    /// Prior on the response autocorrelation.
    pub rho_prior: IntervalPrior,
    /// Prior on the error autocorrelation.
    pub lambda_prior: IntervalPrior,
}

impl Default for PriorSpec {
    /// Defaults: coefficient precision 1000, Gamma(0.01, 0.01) on tau,
    /// uniform autocorrelation priors.
    ///
    /// The coefficient precision is deliberately configurable: 1000 is a
    /// strongly informative shrinkage prior, and analyses with coefficients
    /// far from zero will usually want a much smaller value (for example
    /// 0.001).
    fn default() -> Self {
        PriorSpec {
            beta_precision: 1000.0,
            tau: TauPrior::Gamma {
                shape: 0.01,
                rate: 0.01,
            },
            rho_prior: IntervalPrior::Uniform,
            lambda_prior: IntervalPrior::Uniform,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_precision > 0.0) || !self.beta_precision.is_finite() {
            return Err(Error::Invalid {
                name: "beta_precision".into(),
                reason: format!("must be a positive real, got {}", self.beta_precision),
            });
        }
        match self.tau {
            TauPrior::Gamma { shape, rate } => {
                if !(shape > 0.0) || !(rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
                    return Err(Error::Invalid {
                        name: "tau prior".into(),
                        reason: format!("Gamma parameters must be positive, got ({shape}, {rate})"),
                    });
                }
            }
            TauPrior::Fixed(tau0) => {
                if !(tau0 > 0.0) || !tau0.is_finite() {
                    return Err(Error::Invalid {
                        name: "tau prior".into(),
                        reason: format!("fixed precision must be positive, got {tau0}"),
                    });
                }
            }
        }
        self.rho_prior.validate("rho prior")?;
        self.lambda_prior.validate("lambda prior")
    }
}

/// Log prior density on the internal scale:
/// log base(f(gamma)) + log |df/dgamma|.
pub fn internal_log_prior(gamma: f64, base: &IntervalPrior) -> f64 {
    base.log_density(from_internal(gamma)) + log_jacobian(gamma)
}

/// The same density without logs, in a form exact at gamma = 0 for the
/// uniform base (0.5 * 0.5 = 0.25 in IEEE arithmetic).
pub fn internal_prior_density(gamma: f64, base: &IntervalPrior) -> f64 {
    let base_density = match base {
        IntervalPrior::Uniform => {
            if from_internal(gamma).abs() < 1.0 {
                0.5
            } else {
                0.0
            }
        }
        IntervalPrior::Tabulated(grid) => grid.density_at(from_internal(gamma)),
    };
    base_density * jacobian(gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::trapezoid;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_internal_prior_center_values() {
        assert_eq!(internal_prior_density(0.0, &IntervalPrior::Uniform), 0.25);
        assert_relative_eq!(
            internal_log_prior(0.0, &IntervalPrior::Uniform),
            0.25f64.ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn internal_prior_is_symmetric_and_normalized() {
        let base = IntervalPrior::Uniform;
        for gamma in [0.5, 2.0, 7.5] {
            assert_eq!(
                internal_log_prior(gamma, &base),
                internal_log_prior(-gamma, &base)
            );
        }
        let xs: Vec<f64> = (0..=3000).map(|i| -15.0 + i as f64 * 0.01).collect();
        let ds: Vec<f64> = xs
            .iter()
            .map(|&g| internal_log_prior(g, &base).exp())
            .collect();
        assert_relative_eq!(trapezoid(&xs, &ds), 1.0, epsilon = 1e-3);
    }

    #[test]
    fn tabulated_prior_flows_through_the_jacobian() {
        // Triangular density on (-1, 1): f(x) = 1 - |x|.
        let xs: Vec<f64> = (0..=400).map(|i| -1.0 + i as f64 * 0.005).collect();
        let ds: Vec<f64> = xs.iter().map(|&x| 1.0 - x.abs()).collect();
        let tri = IntervalPrior::Tabulated(DensityGrid::new(xs, ds).unwrap());
        tri.validate("prior").unwrap();

        for gamma in [-1.5f64, 0.0, 0.3, 2.0] {
            let x = from_internal(gamma);
            let expected = (1.0 - x.abs()).ln() + log_jacobian(gamma);
            assert_relative_eq!(internal_log_prior(gamma, &tri), expected, epsilon = 1e-3);
        }
        // Outside the tabulated support the density vanishes.
        assert_eq!(tri.log_density(1.5), f64::NEG_INFINITY);
    }

    #[test]
    fn validation_catches_bad_hyperparameters() {
        let mut p = PriorSpec::default();
        p.validate().unwrap();

        p.beta_precision = 0.0;
        assert!(p.validate().is_err());
        p.beta_precision = 1000.0;

        p.tau = TauPrior::Gamma {
            shape: -1.0,
            rate: 0.01,
        };
        assert!(p.validate().is_err());

        p.tau = TauPrior::Fixed(0.0);
        assert!(p.validate().is_err());

        p.tau = TauPrior::Fixed(2.0);
        p.validate().unwrap();
    }

    #[test]
    fn uniform_log_density_is_flat_inside_and_empty_outside() {
        let u = IntervalPrior::Uniform;
        assert_relative_eq!(u.log_density(0.9), -std::f64::consts::LN_2);
        assert_relative_eq!(u.log_density(-0.9), -std::f64::consts::LN_2);
        assert_eq!(u.log_density(1.0), f64::NEG_INFINITY);
    }
}
