//! Synthetic SAC data generation.
//!
//! The model's reduced form expresses the response directly in the noise:
//!
//! ```text
//! y = (I - rho W)^-1 (X beta + (I - lambda W)^-1 e),   e ~ N(0, tau^-1 I)
//! ```
//!
//! so a draw is two filter solves around a Gaussian vector. Simulation
//! exists for calibration studies and round-trip tests; everything is
//! deterministic given the seed, with covariates drawn first (column by
//! column) and the noise vector last.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::filter::SpatialFilter;
use crate::weights::SpatialWeights;

/// Draws one dataset from the SAC model.
///
/// `beta` holds the intercept coefficient first, then one coefficient per
/// covariate column. `x` optionally supplies the covariate columns (without
/// the intercept, which is always prepended); when absent, standard normal
/// covariates named `x1`, `x2`, ... are drawn. The same seed yields the
/// same dataset, bit for bit.
///
/// Errors when an autocorrelation is inadmissible for `w`, the noise
/// precision is not positive, or the supplied covariates disagree with
/// `beta` in shape.
pub fn simulate_sac(
    w: &SpatialWeights,
    beta: &[f64],
    rho: f64,
    lambda: f64,
    tau: f64,
    x: Option<DMatrix<f64>>,
    seed: u64,
) -> Result<Dataset> {
    if beta.is_empty() {
        return Err(Error::Invalid {
            name: "simulation coefficients".into(),
            reason: "beta must contain at least the intercept".into(),
        });
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Invalid {
            name: "simulation noise precision".into(),
            reason: format!("tau = {tau} must be positive and finite"),
        });
    }
    let n = w.n();
    let n_cov = beta.len() - 1;
    let rho_filter = SpatialFilter::new(w, rho)?;
    let lambda_filter = SpatialFilter::new(w, lambda)?;

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let covariates = match x {
        Some(m) => {
            if m.nrows() != n || m.ncols() != n_cov {
                return Err(Error::Dimension {
                    context: "simulation covariates (rows x columns, intercept excluded)".into(),
                    expected: n * n_cov,
                    got: m.nrows() * m.ncols(),
                });
            }
            m
        }
        None => DMatrix::from_fn(n, n_cov, |_, _| rng.sample::<f64, _>(StandardNormal)),
    };

    let sigma = 1.0 / tau.sqrt();
    let e = DVector::from_fn(n, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));

    // Mean part X beta with the intercept folded in.
    let mut xb = DVector::from_element(n, beta[0]);
    for j in 0..n_cov {
        xb += covariates.column(j) * beta[j + 1];
    }
    let u = lambda_filter.solve_vec(&e)?;
    let y = rho_filter.solve_vec(&(xb + u))?;

    let named: Vec<(String, Vec<f64>)> = (0..n_cov)
        .map(|j| {
            (
                format!("x{}", j + 1),
                covariates.column(j).iter().copied().collect(),
            )
        })
        .collect();
    Dataset::from_parts(y.iter().copied().collect(), named, "(Intercept)")
}
