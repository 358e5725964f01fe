//! Average direct, indirect, and total impacts of the covariates.
//!
//! In a model with a spatially lagged response, a coefficient is not the
//! marginal effect of its covariate: a change in region i propagates through
//! the lag into every other region. The reduced form routes covariate r
//! through the matrix
//!
//! ```text
//! S_r(W) = (I - rho W)^-1 beta_r
//! ```
//!
//! whose diagonal averages to the direct impact and whose full average is
//! the total impact. Because W is row standardized, the row sums of
//! `(I - rho W)^-1` are all `1/(1 - rho)`, so the three averages collapse to
//! deterministic multiples of `beta_r`:
//!
//! ```text
//! total    = beta_r / (1 - rho)
//! direct   = beta_r tr((I - rho W)^-1) / n
//! indirect = total - direct
//! ```
//!
//! Conditional on a lattice node, each impact posterior is therefore the
//! coefficient marginal rescaled by a known constant, and the averaged
//! posterior is the usual weighted mixture. The factors depend on rho only,
//! so one trace per distinct rho value serves a whole lattice row.
//!
//! Summary moments are computed from the exact conditional moments rather
//! than from the merged grids: scaling and mixing are linear, so means and
//! second moments pass through exactly, and the reported total splits into
//! direct plus indirect at floating precision instead of at the merge
//! interpolation error.

use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::fit::ConditionalFit;
use crate::grid::GridPoint;
use crate::merge::merge_marginals;

/// One impact kind: its averaged marginal and exact mixture moments.
#[derive(Clone, Debug)]
pub struct ImpactComponent {
    /// Averaged posterior marginal (normalized density grid).
    pub marginal: DensityGrid,
    /// Posterior mean by the exact law of total expectation.
    pub mean: f64,
    /// Posterior standard deviation by the exact law of total variance.
    pub sd: f64,
}

/// Posterior impacts of one covariate.
#[derive(Clone, Debug)]
pub struct ImpactSummary {
    /// Covariate name.
    pub covariate: String,
    pub direct: ImpactComponent,
    pub indirect: ImpactComponent,
    pub total: ImpactComponent,
}

/// The deterministic impact factors at one rho: (total, direct, indirect)
/// multipliers of the coefficient.
///
/// `trace_inv` must be `tr((I - rho W)^-1)` for the same rho and weights
/// matrix. For rho in (0, 1) the factors satisfy
/// `total >= direct >= 1 >= 0` and `indirect >= 0`.
pub fn impact_scales(rho: f64, trace_inv: f64, n: usize) -> (f64, f64, f64) {
    let total = 1.0 / (1.0 - rho);
    let direct = trace_inv / n as f64;
    (total, direct, total - direct)
}

/// Impact marginals of coefficient `j` conditional on one lattice node, in
/// the order (total, direct, indirect).
///
/// Each marginal is the coefficient marginal pushed through its scale
/// factor. A zero indirect factor (exactly the case rho = 0) yields a point
/// mass at zero; anywhere else a vanishing factor means the trace identity
/// degenerated, which is worth a warning but still yields the point mass.
pub fn conditional_impacts(
    fit: &ConditionalFit,
    trace_inv: f64,
    j: usize,
) -> Result<(DensityGrid, DensityGrid, DensityGrid)> {
    let beta = fit.marginal_beta(j)?;
    let (s_total, s_direct, s_indirect) = impact_scales(fit.rho, trace_inv, fit.n());
    let total = beta.scaled(s_total)?;
    let direct = if s_direct == 1.0 {
        beta.clone()
    } else {
        beta.scaled(s_direct)?
    };
    let indirect = if s_indirect == 0.0 {
        if fit.rho != 0.0 {
            log::warn!(
                "indirect impact factor vanished at rho = {}; trace identity degenerate",
                fit.rho
            );
        }
        DensityGrid::point_mass(0.0)
    } else {
        beta.scaled(s_indirect)?
    };
    Ok((total, direct, indirect))
}

/// Averages the conditional impact marginals of coefficient `j` over the
/// lattice.
///
/// `fits` must align with `points` (lattice row-major order) and
/// `rho_traces` must hold one `tr((I - rho W)^-1)` per lattice row, in row
/// order; the lattice shape is recovered from the two lengths. Moments come
/// from the exact mixture formulas, so `total.mean` equals
/// `direct.mean + indirect.mean` at floating precision.
pub fn bma_impacts(
    points: &[GridPoint],
    fits: &[ConditionalFit],
    rho_traces: &[f64],
    j: usize,
    covariate: &str,
) -> Result<ImpactSummary> {
    if points.is_empty() || points.len() != fits.len() {
        return Err(Error::Invalid {
            name: "impact inputs".into(),
            reason: format!("{} lattice points but {} fits", points.len(), fits.len()),
        });
    }
    if rho_traces.is_empty() || !points.len().is_multiple_of(rho_traces.len()) {
        return Err(Error::Invalid {
            name: "impact traces".into(),
            reason: format!(
                "{} traces cannot tile {} lattice points",
                rho_traces.len(),
                points.len()
            ),
        });
    }
    let k2 = points.len() / rho_traces.len();

    let weights: Vec<f64> = points.iter().map(|p| p.weight).collect();
    let mut totals = Vec::with_capacity(points.len());
    let mut directs = Vec::with_capacity(points.len());
    let mut indirects = Vec::with_capacity(points.len());
    // Exact mixture moments, accumulated as (mean, second moment).
    let mut acc = [(0.0f64, 0.0f64); 3];

    for (idx, (fit, w)) in fits.iter().zip(&weights).enumerate() {
        let trace_inv = rho_traces[idx / k2];
        let (total, direct, indirect) = conditional_impacts(fit, trace_inv, j)?;
        let m = fit.beta_mean(j);
        let v = fit.beta_variance(j);
        let (s_total, s_direct, s_indirect) = impact_scales(fit.rho, trace_inv, fit.n());
        for (slot, s) in acc.iter_mut().zip([s_total, s_direct, s_indirect]) {
            let mean = s * m;
            slot.0 += w * mean;
            slot.1 += w * (s * s * v + mean * mean);
        }
        totals.push(total);
        directs.push(direct);
        indirects.push(indirect);
    }

    let component = |grids: &[DensityGrid], (m, m2): (f64, f64)| -> Result<ImpactComponent> {
        Ok(ImpactComponent {
            marginal: merge_marginals(grids, &weights)?,
            mean: m,
            sd: (m2 - m * m).max(0.0).sqrt(),
        })
    };
    Ok(ImpactSummary {
        covariate: covariate.to_string(),
        total: component(&totals, acc[0])?,
        direct: component(&directs, acc[1])?,
        indirect: component(&indirects, acc[2])?,
    })
}
