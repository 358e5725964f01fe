//! Tabulated univariate densities.
//!
//! Posterior marginals travel through the crate as a [`DensityGrid`]: an
//! ordered abscissa grid with nonnegative density values, trapezoid-
//! normalized exactly at construction. Everything downstream (merging,
//! moments, quantiles, serialization) relies on those invariants, so the
//! constructor is the single place they are enforced.
//!
//! Degenerate distributions appear naturally here: the indirect impact at
//! rho = 0 and the variance marginal under a fixed noise precision are point
//! masses. They are represented as a three-point triangular spike of unit
//! mass whose width is negligible on any plotting scale, and they remember
//! being point masses so consumers (notably marginal merging) can treat the
//! mass atomically instead of losing it to interpolation.

use crate::error::{Error, Result};
use crate::numeric::trapezoid;

/// Relative half-width of the spike representing a point mass.
const POINT_MASS_EPS: f64 = 1e-9;

/// A univariate density tabulated on a strictly increasing grid, normalized
/// so the trapezoid integral is exactly one at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    abscissae: Vec<f64>,
    densities: Vec<f64>,
    spike_at: Option<f64>,
}

impl DensityGrid {
    /// Validate and normalize a tabulated density.
    ///
    /// Requirements: at least two points, strictly increasing finite
    /// abscissae, finite nonnegative densities, positive total mass.
    pub fn new(abscissae: Vec<f64>, densities: Vec<f64>) -> Result<Self> {
        if abscissae.len() < 2 {
            return Err(Error::Invalid {
                name: "density grid".into(),
                reason: format!("needs at least 2 points, got {}", abscissae.len()),
            });
        }
        if abscissae.len() != densities.len() {
            return Err(Error::Dimension {
                context: "density grid".into(),
                expected: abscissae.len(),
                got: densities.len(),
            });
        }
        for pair in abscissae.windows(2) {
            if !(pair[1] > pair[0]) || !pair[0].is_finite() || !pair[1].is_finite() {
                return Err(Error::Invalid {
                    name: "density grid".into(),
                    reason: format!(
                        "abscissae must be strictly increasing and finite; found {} then {}",
                        pair[0], pair[1]
                    ),
                });
            }
        }
        for &d in &densities {
            if !(d >= 0.0) || !d.is_finite() {
                return Err(Error::Invalid {
                    name: "density grid".into(),
                    reason: format!("densities must be finite and nonnegative; found {d}"),
                });
            }
        }
        let mass = trapezoid(&abscissae, &densities);
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::Invalid {
                name: "density grid".into(),
                reason: format!("total mass {mass} is not positive"),
            });
        }
        let densities = densities.into_iter().map(|d| d / mass).collect();
        Ok(DensityGrid {
            abscissae,
            densities,
            spike_at: None,
        })
    }

    /// Build from log-density values: exponentiate stably (max subtraction)
    /// and normalize. Useful when densities span hundreds of log units.
    pub fn from_log_density(abscissae: Vec<f64>, log_densities: &[f64]) -> Result<Self> {
        let peak = log_densities
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return Err(Error::Invalid {
                name: "density grid".into(),
                reason: "log-densities contain no finite value".into(),
            });
        }
        let densities = log_densities.iter().map(|&l| (l - peak).exp()).collect();
        Self::new(abscissae, densities)
    }

    /// A point mass at `center`: a triangular spike over
    /// `center +- h` with `h = POINT_MASS_EPS * (1 + |center|)`, integrating
    /// to one exactly.
    pub fn point_mass(center: f64) -> Self {
        let h = POINT_MASS_EPS * (1.0 + center.abs());
        // The peak is normalized against the realized grid, not the nominal
        // half-width: `center + h` rounds, and at this scale the rounding is
        // visible next to the unit integral.
        let lo = center - h;
        let hi = center + h;
        DensityGrid {
            abscissae: vec![lo, center, hi],
            densities: vec![0.0, 2.0 / (hi - lo), 0.0],
            spike_at: Some(center),
        }
    }

    /// The location of a point mass, when this grid is one.
    pub fn spike_at(&self) -> Option<f64> {
        self.spike_at
    }

    pub fn len(&self) -> usize {
        self.abscissae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissae.is_empty()
    }

    pub fn abscissae(&self) -> &[f64] {
        &self.abscissae
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn support(&self) -> (f64, f64) {
        (self.abscissae[0], *self.abscissae.last().unwrap())
    }

    /// Trapezoid integral; one up to rounding by construction.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.abscissae, &self.densities)
    }

    /// Linear interpolation of the density; zero outside the support.
    pub fn density_at(&self, x: f64) -> f64 {
        let xs = &self.abscissae;
        if x < xs[0] || x > *xs.last().unwrap() {
            return 0.0;
        }
        let k = match xs.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
            Ok(k) => return self.densities[k],
            Err(k) => k, // xs[k-1] < x < xs[k]
        };
        let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
        self.densities[k - 1] + t * (self.densities[k] - self.densities[k - 1])
    }

    /// Trapezoid mean.
    pub fn mean(&self) -> f64 {
        let weighted: Vec<f64> = self
            .abscissae
            .iter()
            .zip(&self.densities)
            .map(|(&x, &d)| x * d)
            .collect();
        trapezoid(&self.abscissae, &weighted)
    }

    /// Trapezoid variance (guarded against small negative round-off).
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let weighted: Vec<f64> = self
            .abscissae
            .iter()
            .zip(&self.densities)
            .map(|(&x, &d)| (x - m) * (x - m) * d)
            .collect();
        trapezoid(&self.abscissae, &weighted).max(0.0)
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Quantile by linear inversion of the trapezoid cumulative.
    pub fn quantile(&self, q: f64) -> f64 {
        assert!(
            (0.0..=1.0).contains(&q),
            "quantile level {q} outside [0, 1]"
        );
        let xs = &self.abscissae;
        let ds = &self.densities;
        let mut cum = 0.0;
        for k in 1..xs.len() {
            let seg = 0.5 * (ds[k - 1] + ds[k]) * (xs[k] - xs[k - 1]);
            if cum + seg >= q || k == xs.len() - 1 {
                if seg <= 0.0 {
                    return xs[k - 1];
                }
                let t = ((q - cum) / seg).clamp(0.0, 1.0);
                return xs[k - 1] + t * (xs[k] - xs[k - 1]);
            }
            cum += seg;
        }
        *xs.last().unwrap()
    }

    /// Rescale the random variable: if this is the density of Z, return the
    /// density of `scale * Z` via the change-of-variables Jacobian.
    ///
    /// A negative scale flips the support; zero is rejected (the result
    /// would be a point mass, which the caller must construct explicitly).
    pub fn scaled(&self, scale: f64) -> Result<DensityGrid> {
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::Invalid {
                name: "scale".into(),
                reason: format!("density rescaling needs a finite nonzero factor, got {scale}"),
            });
        }
        if let Some(c) = self.spike_at {
            return Ok(DensityGrid::point_mass(scale * c));
        }
        let inv = 1.0 / scale.abs();
        let (xs, ds): (Vec<f64>, Vec<f64>) = if scale > 0.0 {
            (
                self.abscissae.iter().map(|&x| x * scale).collect(),
                self.densities.iter().map(|&d| d * inv).collect(),
            )
        } else {
            (
                self.abscissae.iter().rev().map(|&x| x * scale).collect(),
                self.densities.iter().rev().map(|&d| d * inv).collect(),
            )
        };
        let mut out = DensityGrid::new(xs, ds)?;
        out.spike_at = None;
        Ok(out)
    }
}
