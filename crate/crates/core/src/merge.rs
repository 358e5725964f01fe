//! Combining conditional posteriors into model-averaged ones.
//!
//! Every conditional fit on the lattice produces marginal densities on its
//! own support. The averaged posterior is the weighted mixture
//!
//! ```text
//! pi(x | D) = sum_i w_i pi(x | D, rho_i, lambda_i)
//! ```
//!
//! evaluated here on a common support: the union of the input supports,
//! discretized to a fixed number of points, with each input interpolated by
//! a shape-preserving monotone cubic and extended by zero outside its own
//! support. Monotone (Fritsch-Carlson) interpolation matters because plain
//! cubic splines overshoot near density peaks and produce small negative
//! lobes; the monotone variant cannot.
//!
//! Point masses need special handling: a degenerate marginal (a fixed noise
//! variance, or the indirect impact at rho = 0) is stored as a spike a few
//! nanounits wide, which a fixed merge grid would simply miss. Such inputs
//! deposit their whole weight as a single-cell hat centered on the nearest
//! merge node instead, preserving total mass exactly. The same treatment
//! extends to any input narrower than one merge cell: when the union of
//! supports is dominated by one wide component (a total-impact marginal at
//! a near-boundary rho node, say), the narrow components are point masses
//! at the resolution of the common grid, and the hat deposit keeps their
//! weight and mean exact where interpolation would alias them. Components
//! wide enough to interpolate are individually rescaled by their own
//! re-evaluated mass, which removes the quantization error of the common
//! grid so every input contributes exactly its mixture weight.
//!
//! The module also provides the weighted scalar summaries used for the grid
//! coordinates themselves and weighted kernel density estimates over the
//! lattice, which serve as smooth posteriors for the two autocorrelation
//! parameters and their joint distribution.

use serde::Serialize;

use crate::density::DensityGrid;
use crate::error::{Error, Result};

/// Number of points on a merged common support.
const MERGE_POINTS: usize = 401;

/// Tolerated deviation of the pre-normalization mixture mass from one.
/// Hat deposits and the per-component rescale make each input contribute
/// its exact weight, so only accumulated rounding remains and a larger
/// deviation indicates a defect in the merge itself.
const RENORM_TOL: f64 = 5e-3;

/// Tolerated deviation of a single interpolated component's re-evaluated
/// mass from one. Beyond this the component's shape cannot be represented
/// at the merge resolution at all (for instance several sub-cell spikes
/// far apart), which no rescale can repair honestly.
const COMPONENT_MASS_TOL: f64 = 0.1;

/// Grid size of a 1D weighted kernel density estimate.
const KDE_POINTS_1D: usize = 512;

/// Per-axis grid size of a 2D weighted kernel density estimate.
const KDE_POINTS_2D: usize = 101;

/// The evaluation grid extends this many bandwidths past the data range.
const KDE_SPAN_BW: f64 = 3.0;

/// Weighted location and spread summary of a scalar parameter.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Population-form weighted standard deviation.
    pub sd: f64,
    /// 2.5% quantile by cumulative-weight interpolation.
    pub q025: f64,
    pub median: f64,
    /// 97.5% quantile by cumulative-weight interpolation.
    pub q975: f64,
}

/// A density surface over a rectangular lattice.
///
/// `z[i][j]` is the density at `(x[i], y[j])`; the double trapezoid integral
/// is one up to rounding.
#[derive(Clone, Debug)]
pub struct Surface {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<Vec<f64>>,
}

/// Merges marginal densities into their weighted mixture on a common support.
///
/// The support is the union of the input supports sampled at 401 points.
/// Point masses and inputs narrower than one cell deposit their weight as
/// one-cell hats; interpolated inputs are rescaled by their re-evaluated
/// mass (see the module docs). An input too irregular for either route is
/// an error. The mixture is renormalized before return and the factor is
/// logged at debug level; a factor outside 1 +- 5e-3 indicates a defect in
/// the merge arithmetic itself and is an error.
pub fn merge_marginals(grids: &[DensityGrid], weights: &[f64]) -> Result<DensityGrid> {
    if grids.is_empty() {
        return Err(Error::Merge("no marginals to merge".into()));
    }
    if grids.len() != weights.len() {
        return Err(Error::Merge(format!(
            "{} marginals but {} weights",
            grids.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::Merge(format!("invalid mixture weight {w}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Merge(format!(
            "mixture weights sum to {total}, expected 1"
        )));
    }

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for g in grids {
        let (a, b) = g.support();
        lo = lo.min(a);
        hi = hi.max(b);
    }
    let step = (hi - lo) / (MERGE_POINTS - 1) as f64;
    let xs: Vec<f64> = (0..MERGE_POINTS).map(|k| lo + k as f64 * step).collect();
    let mut mix = vec![0.0; MERGE_POINTS];

    for (g, &w) in grids.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        // Declared spikes, and anything too narrow for the cell spacing,
        // are point masses at this resolution.
        let center = g
            .spike_at()
            .or_else(|| (g.sd() < step).then(|| g.mean()));
        if let Some(center) = center {
            hat_deposit(&mut mix, lo, step, center, w);
            continue;
        }
        let interp = MonotoneCubic::new(g.abscissae(), g.densities());
        let ys: Vec<f64> = xs.iter().map(|&x| interp.eval(x).max(0.0)).collect();
        let mass = crate::numeric::trapezoid(&xs, &ys);
        if (mass - 1.0).abs() > COMPONENT_MASS_TOL {
            return Err(Error::Merge(format!(
                "an input marginal re-evaluates to mass {mass:.6} on the \
                 common support; its shape cannot be resolved at the merge \
                 resolution"
            )));
        }
        for (m, y) in mix.iter_mut().zip(&ys) {
            *m += w * y / mass;
        }
    }

    let mass = crate::numeric::trapezoid(&xs, &mix);
    if (mass - 1.0).abs() > RENORM_TOL {
        return Err(Error::Merge(format!(
            "merged mixture mass {mass:.6} before renormalization"
        )));
    }
    log::debug!("merge renormalization factor {:.8}", 1.0 / mass);
    DensityGrid::new(xs, mix)
}

/// Adds weight `w` as a single-cell hat at `center`: the weight splits
/// linearly between the two straddling nodes, which preserves both the
/// total mass and the mean exactly (each node's trapezoid mass is step/2
/// at the edges and step inside).
fn hat_deposit(mix: &mut [f64], lo: f64, step: f64, center: f64, w: f64) {
    let last = mix.len() - 1;
    let pos = ((center - lo) / step).clamp(0.0, last as f64);
    let k = (pos.floor() as usize).min(last - 1);
    let t = pos - k as f64;
    let node_mass = |i: usize| if i == 0 || i == last { step / 2.0 } else { step };
    mix[k] += w * (1.0 - t) / node_mass(k);
    mix[k + 1] += w * t / node_mass(k + 1);
}

/// Weighted mean, population standard deviation, and quantiles of scalar
/// values under normalized weights.
///
/// Quantiles interpolate the cumulative-weight step function linearly
/// between sorted values; probabilities at or below the first cumulative
/// weight return the smallest value. The validation sampler summarizes its
/// chains with the same convention so the two outputs are comparable.
pub fn weighted_summary(values: &[f64], weights: &[f64]) -> Result<Summary> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(Error::Invalid {
            name: "weighted summary".into(),
            reason: format!(
                "needs matching nonempty inputs, got {} values and {} weights",
                values.len(),
                weights.len()
            ),
        });
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::Invalid {
            name: "weighted summary".into(),
            reason: format!("invalid weight {w}"),
        });
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Invalid {
            name: "weighted summary".into(),
            reason: format!("weights sum to {total}, expected 1"),
        });
    }

    let mean: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    let var: f64 = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v - mean).powi(2))
        .sum();
    let q = weighted_quantiles(values, weights, &[0.025, 0.5, 0.975]);
    Ok(Summary {
        mean,
        sd: var.max(0.0).sqrt(),
        q025: q[0],
        median: q[1],
        q975: q[2],
    })
}

/// Weighted quantiles by linear interpolation of the cumulative weights.
/// `probs` must be sorted ascending; weights are assumed normalized.
fn weighted_quantiles(values: &[f64], weights: &[f64], probs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = Vec::with_capacity(probs.len());
    let mut cum = 0.0;
    let mut prev_cum = 0.0;
    let mut prev_val = values[idx[0]];
    let mut k = 0;
    for &p in probs {
        loop {
            if cum >= p || k == idx.len() {
                break;
            }
            prev_cum = cum;
            prev_val = if k == 0 {
                values[idx[0]]
            } else {
                values[idx[k - 1]]
            };
            cum += weights[idx[k]];
            k += 1;
        }
        let cur_val = values[idx[k.saturating_sub(1)]];
        if k == 0 || p <= prev_cum || cum == prev_cum {
            out.push(cur_val);
        } else if cum >= p {
            let t = (p - prev_cum) / (cum - prev_cum);
            out.push(prev_val + t * (cur_val - prev_val));
        } else {
            // p beyond the last cumulative weight (rounding): largest value.
            out.push(cur_val);
        }
    }
    out
}

/// Weighted Gaussian kernel density estimate on 512 points.
///
/// The grid spans the data range extended by three bandwidths. `bandwidth`
/// of `None` selects Silverman's rule of thumb,
/// `0.9 min(sd, IQR/1.34) ess^(-1/5)`, with weighted spread measures and the
/// effective sample size `1 / sum w_i^2` in place of n; if the weighted
/// spread is degenerate the unweighted spread of the points is used instead.
pub fn weighted_kde_1d(
    points: &[f64],
    weights: &[f64],
    bandwidth: Option<f64>,
) -> Result<DensityGrid> {
    check_kde_inputs(points, weights)?;
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => {
            return Err(Error::Invalid {
                name: "kde bandwidth".into(),
                reason: format!("must be positive and finite, got {h}"),
            })
        }
        None => silverman(points, weights)?,
    };

    let (lo, hi) = data_range(points);
    let a = lo - KDE_SPAN_BW * h;
    let b = hi + KDE_SPAN_BW * h;
    let step = (b - a) / (KDE_POINTS_1D - 1) as f64;
    let xs: Vec<f64> = (0..KDE_POINTS_1D).map(|k| a + k as f64 * step).collect();
    let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let mut s = 0.0;
            for (&p, &w) in points.iter().zip(weights) {
                let z = (x - p) / h;
                s += w * (-0.5 * z * z).exp();
            }
            s * norm
        })
        .collect();
    DensityGrid::new(xs, ys)
}

/// Weighted product-Gaussian kernel density estimate on a 101 x 101 lattice.
///
/// Bandwidths follow the same per-axis rule as [`weighted_kde_1d`]. The
/// returned surface is normalized so its double trapezoid integral is one.
pub fn weighted_kde_2d(
    x: &[f64],
    y: &[f64],
    weights: &[f64],
    bandwidths: Option<(f64, f64)>,
) -> Result<Surface> {
    check_kde_inputs(x, weights)?;
    check_kde_inputs(y, weights)?;
    let (hx, hy) = match bandwidths {
        Some((hx, hy)) if hx > 0.0 && hy > 0.0 && hx.is_finite() && hy.is_finite() => (hx, hy),
        Some((hx, hy)) => {
            return Err(Error::Invalid {
                name: "kde bandwidths".into(),
                reason: format!("must be positive and finite, got ({hx}, {hy})"),
            })
        }
        None => (silverman(x, weights)?, silverman(y, weights)?),
    };

    let axis = |vals: &[f64], h: f64| -> Vec<f64> {
        let (lo, hi) = data_range(vals);
        let a = lo - KDE_SPAN_BW * h;
        let step = (hi + KDE_SPAN_BW * h - a) / (KDE_POINTS_2D - 1) as f64;
        (0..KDE_POINTS_2D).map(|k| a + k as f64 * step).collect()
    };
    let gx = axis(x, hx);
    let gy = axis(y, hy);

    let norm = 1.0 / (hx * hy * 2.0 * std::f64::consts::PI);
    let mut z: Vec<Vec<f64>> = gx
        .iter()
        .map(|&px| {
            gy.iter()
                .map(|&py| {
                    let mut s = 0.0;
                    for ((&xi, &yi), &w) in x.iter().zip(y).zip(weights) {
                        let zx = (px - xi) / hx;
                        let zy = (py - yi) / hy;
                        s += w * (-0.5 * (zx * zx + zy * zy)).exp();
                    }
                    s * norm
                })
                .collect()
        })
        .collect();

    // Normalize the double trapezoid integral to one.
    let rows: Vec<f64> = z
        .iter()
        .map(|row| crate::numeric::trapezoid(&gy, row))
        .collect();
    let mass = crate::numeric::trapezoid(&gx, &rows);
    if !(mass > 0.0) {
        return Err(Error::Invalid {
            name: "kde surface".into(),
            reason: format!("non-positive total mass {mass}"),
        });
    }
    for row in &mut z {
        for v in row {
            *v /= mass;
        }
    }
    Ok(Surface { x: gx, y: gy, z })
}

fn check_kde_inputs(points: &[f64], weights: &[f64]) -> Result<()> {
    if points.len() < 2 || points.len() != weights.len() {
        return Err(Error::Invalid {
            name: "kde input".into(),
            reason: format!(
                "needs at least two points with matching weights, got {} and {}",
                points.len(),
                weights.len()
            ),
        });
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::Invalid {
            name: "kde input".into(),
            reason: "non-finite point".into(),
        });
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::Invalid {
            name: "kde input".into(),
            reason: format!("invalid weight {w}"),
        });
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Invalid {
            name: "kde input".into(),
            reason: format!("weights sum to {total}, expected 1"),
        });
    }
    let (lo, hi) = data_range(points);
    if lo == hi {
        return Err(Error::Invalid {
            name: "kde input".into(),
            reason: "all points coincide, zero spread".into(),
        });
    }
    Ok(())
}

fn data_range(points: &[f64]) -> (f64, f64) {
    points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
            (lo.min(p), hi.max(p))
        })
}

/// Silverman bandwidth with weighted spread and effective sample size.
fn silverman(points: &[f64], weights: &[f64]) -> Result<f64> {
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let spread = |vals: &[f64], ws: &[f64]| -> f64 {
        let total: f64 = ws.iter().sum();
        let mean: f64 = vals.iter().zip(ws).map(|(v, w)| v * w).sum::<f64>() / total;
        let sd = (vals
            .iter()
            .zip(ws)
            .map(|(v, w)| w * (v - mean).powi(2))
            .sum::<f64>()
            / total)
            .sqrt();
        let q = weighted_quantiles(vals, ws, &[0.25, 0.75]);
        let iqr = (q[1] - q[0]) / 1.34;
        match (sd > 0.0, iqr > 0.0) {
            (true, true) => sd.min(iqr),
            (true, false) => sd,
            (false, true) => iqr,
            (false, false) => 0.0,
        }
    };
    let mut s = spread(points, weights);
    if s == 0.0 {
        // Weight mass degenerate on one point: fall back to the unweighted
        // spread so the estimate stays usable.
        let flat = vec![1.0 / points.len() as f64; points.len()];
        s = spread(points, &flat);
    }
    if s == 0.0 {
        return Err(Error::Invalid {
            name: "kde bandwidth".into(),
            reason: "zero spread in every direction".into(),
        });
    }
    Ok(0.9 * s * ess.powf(-0.2))
}

/// Shape-preserving cubic interpolant (Fritsch-Carlson slopes), zero outside
/// the data range.
struct MonotoneCubic<'a> {
    xs: &'a [f64],
    ys: &'a [f64],
    slopes: Vec<f64>,
}

impl<'a> MonotoneCubic<'a> {
    fn new(xs: &'a [f64], ys: &'a [f64]) -> Self {
        let n = xs.len();
        debug_assert!(n >= 2);
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = ys
            .windows(2)
            .zip(&h)
            .map(|(w, &hk)| (w[1] - w[0]) / hk)
            .collect();

        let mut m = vec![0.0; n];
        m[0] = endpoint_slope(h[0], h.get(1).copied(), delta[0], delta.get(1).copied());
        m[n - 1] = endpoint_slope(
            h[n - 2],
            (n >= 3).then(|| h[n - 3]),
            delta[n - 2],
            (n >= 3).then(|| delta[n - 3]),
        );
        for k in 1..n - 1 {
            if delta[k - 1] * delta[k] <= 0.0 {
                m[k] = 0.0;
            } else {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                m[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
            }
        }
        MonotoneCubic { xs, ys, slopes: m }
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] || x > self.xs[n - 1] {
            return 0.0;
        }
        let k = match self.xs.partition_point(|&p| p <= x) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let hk = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / hk;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[k]
            + h10 * hk * self.slopes[k]
            + h01 * self.ys[k + 1]
            + h11 * hk * self.slopes[k + 1]
    }
}

/// Non-centered three-point endpoint slope with the usual monotonicity
/// clamps; falls back to the secant when only one interval exists.
fn endpoint_slope(h0: f64, h1: Option<f64>, d0: f64, d1: Option<f64>) -> f64 {
    let (Some(h1), Some(d1)) = (h1, d1) else {
        return d0;
    };
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use sac_bma_testkit as testkit;

    fn gaussian_grid(mean: f64, sd: f64, n: usize) -> DensityGrid {
        let lo = mean - 8.0 * sd;
        let step = 16.0 * sd / (n - 1) as f64;
        let xs: Vec<f64> = (0..n).map(|k| lo + k as f64 * step).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| (-0.5 * ((x - mean) / sd).powi(2)).exp())
            .collect();
        DensityGrid::new(xs, ys).unwrap()
    }

    #[test]
    fn single_grid_merge_is_identity_to_interpolation_error() {
        // Against the analytic density, which bounds the distortion of the
        // tabulation and the merge interpolation together.
        let (mean, sd) = (1.0, 0.7);
        let g = gaussian_grid(mean, sd, 2401);
        let merged = merge_marginals(std::slice::from_ref(&g), &[1.0]).unwrap();
        let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
        for (&x, &d) in merged.abscissae().iter().zip(merged.densities()) {
            let truth = norm * (-0.5 * ((x - mean) / sd).powi(2)).exp();
            assert_abs_diff_eq!(d, truth, epsilon = 1e-6);
        }
    }

    #[test]
    fn identical_grids_merge_to_themselves() {
        let g = gaussian_grid(0.0, 1.0, 257);
        let merged = merge_marginals(&[g.clone(), g.clone()], &[0.3, 0.7]).unwrap();
        assert_relative_eq!(merged.mean(), g.mean(), epsilon = 1e-9);
        assert_relative_eq!(merged.sd(), g.sd(), epsilon = 1e-6);
    }

    #[test]
    fn equal_mixture_of_separated_gaussians_has_known_moments() {
        let a = gaussian_grid(-2.0, 1.0, 401);
        let b = gaussian_grid(2.0, 1.0, 401);
        let merged = merge_marginals(&[a, b], &[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(merged.mean(), 0.0, epsilon = 1e-3);
        assert_abs_diff_eq!(merged.variance(), 5.0, epsilon = 5e-3);
    }

    #[test]
    fn merge_is_associative_to_interpolation_error() {
        let a = gaussian_grid(-1.0, 0.8, 301);
        let b = gaussian_grid(0.5, 1.2, 301);
        let c = gaussian_grid(2.0, 0.6, 301);
        let w = [0.2, 0.5, 0.3];

        let ab = merge_marginals(&[a.clone(), b.clone()], &[w[0] / 0.7, w[1] / 0.7]).unwrap();
        let nested = merge_marginals(&[ab, c.clone()], &[0.7, 0.3]).unwrap();
        let flat = merge_marginals(&[a, b, c], &w).unwrap();
        for (&x, &d) in flat.abscissae().iter().zip(flat.densities()) {
            assert_abs_diff_eq!(d, nested.density_at(x), epsilon = 1e-5);
        }
    }

    #[test]
    fn point_mass_inputs_deposit_their_weight_in_one_cell() {
        let spike = DensityGrid::point_mass(0.3);
        let smooth = gaussian_grid(0.0, 1.0, 401);
        let merged = merge_marginals(&[spike, smooth], &[0.4, 0.6]).unwrap();

        assert_relative_eq!(merged.integral(), 1.0, epsilon = 1e-9);
        // Mass within two cells of the spike location: the hat plus the
        // smooth component's small share.
        let (lo, hi) = merged.support();
        let step = (hi - lo) / (merged.len() - 1) as f64;
        let xs = merged.abscissae();
        let ds = merged.densities();
        let near: Vec<usize> = (0..xs.len())
            .filter(|&k| (xs[k] - 0.3).abs() <= 2.0 * step)
            .collect();
        let mut mass = 0.0;
        for w in near.windows(2) {
            mass += 0.5 * (ds[w[0]] + ds[w[1]]) * (xs[w[1]] - xs[w[0]]);
        }
        assert!(mass > 0.39, "hat mass {mass} missing");
        // The linear deposit preserves the spike's mean exactly; the rest of
        // the tolerance is the smooth component's interpolation error.
        assert_abs_diff_eq!(merged.mean(), 0.4 * 0.3, epsilon = 1e-4);
    }

    #[test]
    fn merge_rejects_malformed_weights() {
        let g = gaussian_grid(0.0, 1.0, 101);
        assert!(merge_marginals(std::slice::from_ref(&g), &[0.4]).is_err());
        assert!(merge_marginals(&[g.clone(), g.clone()], &[1.5, -0.5]).is_err());
        assert!(merge_marginals(std::slice::from_ref(&g), &[0.5, 0.5]).is_err());
        assert!(merge_marginals(&[], &[]).is_err());
    }

    #[test]
    fn sub_cell_inputs_collapse_to_hats_with_exact_mass_and_mean() {
        // A density far narrower than one merge cell cannot be interpolated
        // on the common grid; it must land as a single-cell hat carrying its
        // exact weight at its exact mean, like a declared point mass.
        let narrow = gaussian_grid(0.4, 1e-7, 101);
        let wide = gaussian_grid(0.0, 1.0, 401);
        let merged = merge_marginals(&[narrow, wide], &[0.5, 0.5]).unwrap();

        assert_relative_eq!(merged.integral(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(merged.mean(), 0.5 * 0.4, epsilon = 1e-3);
        // Union span 16, so one cell is 0.04 wide: the wide component alone
        // puts about 0.03 of mass within two cells of 0.4, the hat adds 0.5.
        let xs = merged.abscissae();
        let ds = merged.densities();
        let step = (merged.support().1 - merged.support().0) / (merged.len() - 1) as f64;
        let mut near = 0.0;
        for k in 0..xs.len() - 1 {
            if (xs[k] - 0.4).abs() <= 2.0 * step {
                near += 0.5 * (ds[k] + ds[k + 1]) * (xs[k + 1] - xs[k]);
            }
        }
        assert!(near > 0.5, "hat mass near 0.4 is {near}");
    }

    #[test]
    fn unresolvable_multimodal_input_is_an_error_not_a_silent_rescale() {
        // Two sub-cell bumps twelve units apart: the overall spread defeats
        // the hat deposit and the cell spacing defeats interpolation, so no
        // rescale can represent this input honestly.
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &c in &[-6.0_f64, 6.0] {
            xs.push(c - 2e-7);
            ys.push(0.0);
            for k in -12..=12_i32 {
                let x = c + f64::from(k) * 1e-8;
                xs.push(x);
                ys.push((-0.5 * ((x - c) / 4e-8).powi(2)).exp());
            }
            xs.push(c + 2e-7);
            ys.push(0.0);
        }
        let jagged = DensityGrid::new(xs, ys).unwrap();
        let wide = gaussian_grid(0.0, 2.0, 401);
        let err = merge_marginals(&[jagged, wide], &[0.5, 0.5]);
        assert!(matches!(err, Err(Error::Merge(_))));
    }

    #[test]
    fn summary_matches_hand_arithmetic() {
        let s = weighted_summary(&[1.0, 3.0], &[0.5, 0.5]).unwrap();
        assert_relative_eq!(s.mean, 2.0);
        assert_relative_eq!(s.sd, 1.0);

        let degenerate = weighted_summary(&[4.0, 9.0], &[1.0, 0.0]).unwrap();
        assert_relative_eq!(degenerate.mean, 4.0);
        assert_relative_eq!(degenerate.sd, 0.0);
        assert_relative_eq!(degenerate.median, 4.0);

        assert!(weighted_summary(&[], &[]).is_err());
        assert!(weighted_summary(&[1.0], &[0.3]).is_err());
    }

    #[test]
    fn summary_quantiles_interpolate_cumulative_weights() {
        // Five equally weighted values: cumulative weights 0.2, 0.4, ..., 1.
        let vals = [10.0, 20.0, 30.0, 40.0, 50.0];
        let w = [0.2; 5];
        let s = weighted_summary(&vals, &w).unwrap();
        // p = 0.5 sits halfway between cum 0.4 (20) and cum 0.6 (30).
        assert_relative_eq!(s.median, 25.0);
        assert!(s.q025 <= s.median && s.median <= s.q975);
        assert_relative_eq!(s.q025, 10.0);
        assert_relative_eq!(s.q975, 48.75);
    }

    #[test]
    fn kde_1d_integrates_to_one_and_spans_three_bandwidths() {
        let pts = [0.0, 0.5, 1.0, 2.0];
        let w = [0.25; 4];
        let g = weighted_kde_1d(&pts, &w, Some(0.4)).unwrap();
        assert_relative_eq!(g.integral(), 1.0, epsilon = 1e-12);
        let (lo, hi) = g.support();
        assert_relative_eq!(lo, -1.2, epsilon = 1e-12);
        assert_relative_eq!(hi, 3.2, epsilon = 1e-12);
        assert_eq!(g.len(), 512);
    }

    #[test]
    fn equal_weights_reproduce_the_unweighted_reference() {
        let pts: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
        let w = vec![1.0 / 40.0; 40];
        let h = 0.3;
        let mine = weighted_kde_1d(&pts, &w, Some(h)).unwrap();
        let raw = testkit::kde_1d_reference(&pts, h, mine.abscissae());
        let mass = crate::numeric::trapezoid(mine.abscissae(), &raw);
        for (&d, &r) in mine.densities().iter().zip(&raw) {
            assert_abs_diff_eq!(d, r / mass, epsilon = 1e-12);
        }
    }

    #[test]
    fn kde_weight_concentration_moves_the_peak() {
        let pts = [-1.0, 0.0, 2.5];
        let g = weighted_kde_1d(&pts, &[0.0, 0.0, 1.0], None).unwrap();
        let (argmax, _) = g.abscissae().iter().zip(g.densities()).fold(
            (0.0, f64::NEG_INFINITY),
            |(ax, av), (&x, &d)| {
                if d > av {
                    (x, d)
                } else {
                    (ax, av)
                }
            },
        );
        let step = (g.support().1 - g.support().0) / (g.len() - 1) as f64;
        assert!((argmax - 2.5).abs() <= step, "peak at {argmax}");
    }

    #[test]
    fn kde_rejects_degenerate_input() {
        assert!(weighted_kde_1d(&[1.0, 1.0, 1.0], &[0.4, 0.3, 0.3], None).is_err());
        assert!(weighted_kde_1d(&[0.0, 1.0], &[0.7, 0.7], None).is_err());
        assert!(weighted_kde_1d(&[0.0, 1.0], &[0.5, 0.5], Some(-1.0)).is_err());
    }

    #[test]
    fn kde_2d_transposes_under_axis_swap() {
        let x = [0.1, 0.4, 0.9, 0.3];
        let y = [1.0, 0.2, 0.5, 0.8];
        let w = [0.4, 0.3, 0.2, 0.1];
        let a = weighted_kde_2d(&x, &y, &w, None).unwrap();
        let b = weighted_kde_2d(&y, &x, &w, None).unwrap();
        assert_eq!(a.x, b.y);
        for i in 0..a.z.len() {
            for j in 0..a.z[i].len() {
                assert_eq!(a.z[i][j], b.z[j][i]);
            }
        }
    }

    #[test]
    fn kde_2d_matches_reference_and_integrates_to_one() {
        let x: Vec<f64> = (0..25).map(|i| (i as f64 * 0.41).sin()).collect();
        let y: Vec<f64> = (0..25).map(|i| (i as f64 * 0.17).cos()).collect();
        let w = vec![1.0 / 25.0; 25];
        let s = weighted_kde_2d(&x, &y, &w, Some((0.25, 0.3))).unwrap();

        let raw = testkit::kde_2d_reference(&x, &y, (0.25, 0.3), &s.x, &s.y);
        let rows: Vec<f64> = raw
            .iter()
            .map(|row| crate::numeric::trapezoid(&s.y, row))
            .collect();
        let mass = crate::numeric::trapezoid(&s.x, &rows);
        for (zrow, rrow) in s.z.iter().zip(&raw) {
            for (za, ra) in zrow.iter().zip(rrow) {
                assert_abs_diff_eq!(*za, ra / mass, epsilon = 1e-12);
            }
        }

        let zrows: Vec<f64> =
            s.z.iter()
                .map(|row| crate::numeric::trapezoid(&s.y, row))
                .collect();
        assert_relative_eq!(crate::numeric::trapezoid(&s.x, &zrows), 1.0, epsilon = 1e-9);
        assert!(s.z.iter().flatten().all(|&v| v >= 0.0));
    }

    #[test]
    fn kde_2d_single_heavy_point_peaks_there() {
        let x = [0.0, 0.6, 1.0];
        let y = [0.0, -0.4, 1.0];
        let s = weighted_kde_2d(&x, &y, &[0.0, 1.0, 0.0], None).unwrap();
        let mut best = (0, 0);
        let mut bv = f64::NEG_INFINITY;
        for i in 0..s.z.len() {
            for j in 0..s.z[i].len() {
                if s.z[i][j] > bv {
                    bv = s.z[i][j];
                    best = (i, j);
                }
            }
        }
        let sx = s.x[1] - s.x[0];
        let sy = s.y[1] - s.y[0];
        assert!((s.x[best.0] - 0.6).abs() <= sx);
        assert!((s.y[best.1] - -0.4).abs() <= sy);
    }
}
