//! The model-averaging engine: mode search, lattice construction, weights,
//! and the driver that turns a dataset into averaged posteriors.
//!
//! Inference treats the two autocorrelations as model indices. On a lattice
//! of points (rho_i, lambda_i), each conditional model is fit exactly, and
//! the posterior of any quantity is the mixture of its conditional posteriors
//! under weights
//!
//! ```text
//! w_i = pi(y | rho_i, lambda_i) pi(rho_i, lambda_i)
//!       ---------------------------------------------   (normalized)
//!                sum_k pi(y | .) pi(.)
//! ```
//!
//! The lattice lives on the internal (unbounded) scale where the posterior
//! is close to Gaussian, centered on the joint mode found by derivative-free
//! search, with equispaced steps sized in posterior standard deviations from
//! the finite-difference Hessian at the mode. Equal-volume cells mean the
//! lattice step cancels in the normalization above, so the weights are a
//! plain softmax over log evidence plus log prior.
//!
//! All lattice fits are independent and run concurrently; every reduction
//! consumes them in lattice order, which keeps results identical across
//! thread counts. Spatial filter factorizations are shared: one per distinct
//! rho and one per distinct lambda, not one per node.

use nalgebra::DVector;

use crate::dataset::Dataset;
use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::exec::ordered_map;
use crate::filter::SpatialFilter;
use crate::fit::{fit_from_stats, ConditionalFit, QuadratureConfig, SuffStats};
use crate::merge::{
    merge_marginals, weighted_kde_1d, weighted_kde_2d, weighted_summary, Summary, Surface,
};
use crate::optim;
use crate::priors::{internal_log_prior, PriorSpec};
use crate::transform::{from_internal, InternalPoint};
use crate::weights::SpatialWeights;

/// Objective-evaluation budget for the mode search.
const MODE_SEARCH_EVALS: usize = 200;

/// Convergence tolerance (objective spread) for the mode search.
const MODE_SEARCH_FTOL: f64 = 1e-6;

/// Finite-difference step for the Hessian at the mode.
const HESSIAN_STEP: f64 = 1e-3;

/// Internal coordinates beyond this magnitude map to autocorrelations
/// indistinguishable from +-1 at working precision; a mode there means the
/// posterior is pressed against the admissibility boundary and the Gaussian
/// lattice construction is meaningless.
const SATURATION_BOUND: f64 = 20.0;

/// Fraction of total weight on the outermost lattice ring above which the
/// search region is too small to contain the posterior.
const BOUNDARY_MASS_WARN: f64 = 0.01;

/// A lattice specification on the internal scale.
#[derive(Clone, Copy, Debug)]
pub struct GridSpec {
    /// Lattice center, normally the posterior mode.
    pub center: InternalPoint,
    /// Per-axis scale (posterior standard deviations on the internal scale).
    pub internal_sds: (f64, f64),
    /// Lattice dimensions (K1 nodes over rho, K2 over lambda).
    pub dims: (usize, usize),
    /// Half-width of each axis in units of its scale.
    pub semi_amplitude: f64,
}

impl GridSpec {
    /// Validates dimensions and scales. An axis with a single node pins that
    /// parameter at the center value; axes meant to average need at least
    /// two nodes.
    pub fn validate(&self) -> Result<()> {
        if self.dims.0 == 0 || self.dims.1 == 0 {
            return Err(Error::Invalid {
                name: "grid dims".into(),
                reason: format!("need at least one node per axis, got {:?}", self.dims),
            });
        }
        let (s1, s2) = self.internal_sds;
        if !(s1 > 0.0 && s1.is_finite() && s2 > 0.0 && s2.is_finite()) {
            return Err(Error::Invalid {
                name: "grid scales".into(),
                reason: format!("must be positive and finite, got ({s1}, {s2})"),
            });
        }
        if !(self.semi_amplitude > 0.0 && self.semi_amplitude.is_finite()) {
            return Err(Error::Invalid {
                name: "grid semi-amplitude".into(),
                reason: format!("must be positive and finite, got {}", self.semi_amplitude),
            });
        }
        if !(self.center.gamma1.is_finite() && self.center.gamma2.is_finite()) {
            return Err(Error::Invalid {
                name: "grid center".into(),
                reason: "must be finite".into(),
            });
        }
        Ok(())
    }
}

/// How the lattice is obtained.
#[derive(Clone, Copy, Debug)]
pub enum GridSetting {
    /// Locate the mode and scales automatically, then build `dims` nodes
    /// spanning `semi_amplitude` standard deviations per axis.
    Auto {
        dims: (usize, usize),
        semi_amplitude: f64,
    },
    /// Use the given specification as is (for instance to replicate an
    /// externally centered run).
    Manual(GridSpec),
}

impl GridSetting {
    /// Automatic lattice with the default semi-amplitude of three standard
    /// deviations per axis.
    pub fn auto(dims: (usize, usize)) -> Self {
        GridSetting::Auto {
            dims,
            semi_amplitude: 3.0,
        }
    }
}

/// One lattice node with its evidence, prior, and averaging weight.
#[derive(Clone, Copy, Debug)]
pub struct GridPoint {
    /// Node location on the internal scale.
    pub internal: InternalPoint,
    /// Back-transformed response autocorrelation.
    pub rho: f64,
    /// Back-transformed error autocorrelation.
    pub lambda: f64,
    /// log pi(y | rho, lambda); NaN until evaluated.
    pub log_evidence: f64,
    /// Log prior density at the node on the internal scale (both axes);
    /// NaN until evaluated.
    pub log_prior_internal: f64,
    /// Normalized averaging weight; NaN until computed.
    pub weight: f64,
}

/// Everything the averaging run produces.
#[derive(Clone, Debug)]
pub struct BmaResult {
    /// The lattice in row-major order (rho axis outer, lambda inner).
    pub points: Vec<GridPoint>,
    /// The conditional fit at each lattice node, aligned with `points`.
    pub fits: Vec<ConditionalFit>,
    /// Coefficient names from the dataset.
    pub names: Vec<String>,
    /// The resolved lattice specification (mode-centered when automatic).
    pub spec: GridSpec,
    /// Averaged marginal of each coefficient.
    pub merged_beta: Vec<DensityGrid>,
    /// Averaged marginal of the noise variance 1/tau.
    pub merged_variance: DensityGrid,
    /// Weighted summary of rho over the lattice.
    pub rho_summary: Summary,
    /// Weighted summary of lambda over the lattice.
    pub lambda_summary: Summary,
    /// Smoothed marginal of rho (weighted KDE), or a point mass for a
    /// single-node axis.
    pub rho_marginal: DensityGrid,
    /// Smoothed marginal of lambda, as above.
    pub lambda_marginal: DensityGrid,
    /// Smoothed joint density of (rho, lambda); absent when either axis has
    /// a single node.
    pub joint_rl: Option<Surface>,
    /// Effective number of contributing models, 1 / sum of squared weights.
    pub ess: f64,
    /// Fraction of total weight on the outermost lattice ring (axes with at
    /// least three nodes only).
    pub boundary_mass: f64,
}

/// Locates the joint posterior mode of the autocorrelations on the internal
/// scale and returns it with per-axis standard deviations from the inverse
/// negative Hessian.
///
/// The objective is log evidence plus the two internal-scale log priors.
/// The Hessian is central finite differences with step 1e-3; when it is not
/// negative definite the off-diagonal term is dropped with a warning and the
/// diagonal curvatures are used alone. A mode in the saturation zone (the
/// autocorrelation within ~1e-17 of +-1) or a search that exhausts its
/// budget is an error.
pub fn find_mode(
    data: &Dataset,
    w: &SpatialWeights,
    priors: &PriorSpec,
    quad: &QuadratureConfig,
) -> Result<(InternalPoint, (f64, f64))> {
    priors.validate()?;
    let objective = |g: &[f64]| -> f64 {
        if g[0].abs() > SATURATION_BOUND || g[1].abs() > SATURATION_BOUND {
            return f64::NEG_INFINITY;
        }
        match crate::fit::fit_conditional(
            data,
            w,
            from_internal(g[0]),
            from_internal(g[1]),
            priors,
            quad,
        ) {
            Ok(fit) => {
                fit.log_evidence
                    + internal_log_prior(g[0], &priors.rho_prior)
                    + internal_log_prior(g[1], &priors.lambda_prior)
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let opt = optim::maximize(
        &objective,
        &[0.0, 0.0],
        0.5,
        MODE_SEARCH_EVALS,
        MODE_SEARCH_FTOL,
    );
    if !opt.converged {
        return Err(Error::Optim(format!(
            "mode search did not converge within {} evaluations",
            opt.evals
        )));
    }
    let (g1, g2) = (opt.x[0], opt.x[1]);
    if g1.abs() > SATURATION_BOUND - 1.0 || g2.abs() > SATURATION_BOUND - 1.0 {
        return Err(Error::Optim(format!(
            "posterior mode ({g1:.3}, {g2:.3}) lies in the saturation zone; \
             the autocorrelation posterior is degenerate at the boundary"
        )));
    }

    let sds = hessian_sds(&objective, g1, g2, opt.value)?;
    Ok((InternalPoint::new(g1, g2), sds))
}

/// Standard deviations from the finite-difference Hessian at the mode.
fn hessian_sds<F>(f: &F, g1: f64, g2: f64, f0: f64) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    let s = HESSIAN_STEP;
    let fpp = f(&[g1 + s, g2 + s]);
    let fpm = f(&[g1 + s, g2 - s]);
    let fmp = f(&[g1 - s, g2 + s]);
    let fmm = f(&[g1 - s, g2 - s]);
    let fp0 = f(&[g1 + s, g2]);
    let fm0 = f(&[g1 - s, g2]);
    let f0p = f(&[g1, g2 + s]);
    let f0m = f(&[g1, g2 - s]);
    for v in [fpp, fpm, fmp, fmm, fp0, fm0, f0p, f0m, f0] {
        if !v.is_finite() {
            return Err(Error::Optim(
                "objective not finite on the Hessian stencil at the mode".into(),
            ));
        }
    }
    let h11 = (fp0 - 2.0 * f0 + fm0) / (s * s);
    let h22 = (f0p - 2.0 * f0 + f0m) / (s * s);
    let h12 = (fpp - fpm - fmp + fmm) / (4.0 * s * s);

    // Negative definite Hessian: curvature matrix A = -H must have positive
    // diagonal and determinant; then the covariance is A^-1.
    let (a, b, c) = (-h11, -h12, -h22);
    let det = a * c - b * b;
    if a > 0.0 && det > 0.0 {
        return Ok(((c / det).sqrt(), (a / det).sqrt()));
    }
    log::warn!(
        "Hessian at the mode is not negative definite \
         (h11 {h11:.3e}, h22 {h22:.3e}, h12 {h12:.3e}); using diagonal curvatures only"
    );
    if h11 < 0.0 && h22 < 0.0 {
        return Ok(((-1.0 / h11).sqrt(), (-1.0 / h22).sqrt()));
    }
    Err(Error::Optim(
        "no negative curvature at the located mode; cannot size the lattice".into(),
    ))
}

/// Equispaced axis of `k` internal coordinates spanning
/// `center +- amp * sd`; a single-node axis sits at the center.
fn axis(center: f64, sd: f64, k: usize, amp: f64) -> Vec<f64> {
    if k == 1 {
        return vec![center];
    }
    let lo = center - amp * sd;
    let step = 2.0 * amp * sd / (k - 1) as f64;
    (0..k).map(|i| lo + i as f64 * step).collect()
}

/// Builds the lattice in row-major order (rho axis outer, lambda inner),
/// with evidence, prior, and weight fields left NaN.
pub fn build_grid(spec: &GridSpec) -> Result<Vec<GridPoint>> {
    spec.validate()?;
    let g1 = axis(
        spec.center.gamma1,
        spec.internal_sds.0,
        spec.dims.0,
        spec.semi_amplitude,
    );
    let g2 = axis(
        spec.center.gamma2,
        spec.internal_sds.1,
        spec.dims.1,
        spec.semi_amplitude,
    );
    let mut points = Vec::with_capacity(g1.len() * g2.len());
    for &a in &g1 {
        for &b in &g2 {
            points.push(GridPoint {
                internal: InternalPoint::new(a, b),
                rho: from_internal(a),
                lambda: from_internal(b),
                log_evidence: f64::NAN,
                log_prior_internal: f64::NAN,
                weight: f64::NAN,
            });
        }
    }
    Ok(points)
}

/// Fills normalized weights from the log evidence and log prior fields.
///
/// Weights are the softmax of `log_evidence + log_prior_internal`, computed
/// through log-sum-exp. Nodes at negative infinity get weight zero; NaN
/// entries or an all-negative-infinity lattice are errors.
pub fn compute_weights(points: &mut [GridPoint]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Invalid {
            name: "grid weights".into(),
            reason: "empty lattice".into(),
        });
    }
    let terms: Vec<f64> = points
        .iter()
        .map(|p| p.log_evidence + p.log_prior_internal)
        .collect();
    if terms.iter().any(|t| t.is_nan()) {
        return Err(Error::Invalid {
            name: "grid weights".into(),
            reason: "NaN log evidence or log prior on the lattice".into(),
        });
    }
    if terms.iter().all(|t| *t == f64::NEG_INFINITY) {
        return Err(Error::Invalid {
            name: "grid weights".into(),
            reason: "every lattice node has zero posterior mass".into(),
        });
    }
    let weights = crate::numeric::normalized_exp(&terms);
    for (p, w) in points.iter_mut().zip(weights) {
        p.weight = w;
    }
    Ok(())
}

/// Runs the full averaging pipeline: resolve the lattice, fit every node
/// concurrently, weight, and merge.
///
/// Fits run through shared per-rho and per-lambda filter factorizations and
/// are collected in lattice order, so the result is independent of the
/// thread count. A failed node aborts the run with its lattice location. A
/// warning is logged when more than 1% of the weight sits on the outermost
/// ring (the lattice is then too small for the posterior).
pub fn run_bma(
    data: &Dataset,
    w: &SpatialWeights,
    priors: &PriorSpec,
    setting: &GridSetting,
    quad: &QuadratureConfig,
) -> Result<BmaResult> {
    priors.validate()?;
    quad.validate()?;
    if data.n() != w.n() {
        return Err(Error::Dimension {
            context: "dataset rows versus weights regions".into(),
            expected: w.n(),
            got: data.n(),
        });
    }

    let spec = match *setting {
        GridSetting::Manual(spec) => {
            spec.validate()?;
            spec
        }
        GridSetting::Auto {
            dims,
            semi_amplitude,
        } => {
            let (center, internal_sds) = find_mode(data, w, priors, quad)?;
            let spec = GridSpec {
                center,
                internal_sds,
                dims,
                semi_amplitude,
            };
            spec.validate()?;
            spec
        }
    };
    let mut points = build_grid(&spec)?;
    let (k1, k2) = spec.dims;

    // One filter per distinct axis value, shared read-only by every node.
    let rho_values: Vec<f64> = points.iter().step_by(k2).map(|p| p.rho).collect();
    let lambda_values: Vec<f64> = points.iter().take(k2).map(|p| p.lambda).collect();
    let rho_filters: Vec<SpatialFilter> = ordered_map(rho_values, |r| SpatialFilter::new(w, r))
        .into_iter()
        .collect::<Result<_>>()?;
    let lambda_filters: Vec<SpatialFilter> =
        ordered_map(lambda_values, |l| SpatialFilter::new(w, l))
            .into_iter()
            .collect::<Result<_>>()?;
    let rho_ys: Vec<DVector<f64>> = rho_filters.iter().map(|f| f.apply(data.y())).collect();

    let nodes: Vec<(usize, usize)> = (0..k1).flat_map(|i| (0..k2).map(move |j| (i, j))).collect();
    let fits: Vec<ConditionalFit> = ordered_map(nodes, |(i, j)| {
        let stats = SuffStats::from_pieces(data, &rho_filters[i], &lambda_filters[j], &rho_ys[i]);
        let p = &points[i * k2 + j];
        fit_from_stats(p.rho, p.lambda, stats, priors, quad)
            .map_err(|e| e.at_grid_node(i, j, p.rho, p.lambda))
    })
    .into_iter()
    .collect::<Result<_>>()?;

    for (p, fit) in points.iter_mut().zip(&fits) {
        p.log_evidence = fit.log_evidence;
        p.log_prior_internal = internal_log_prior(p.internal.gamma1, &priors.rho_prior)
            + internal_log_prior(p.internal.gamma2, &priors.lambda_prior);
    }
    compute_weights(&mut points)?;

    let weights: Vec<f64> = points.iter().map(|p| p.weight).collect();
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let boundary_mass = ring_mass(&points, k1, k2);
    if boundary_mass > BOUNDARY_MASS_WARN {
        log::warn!(
            "{:.2}% of posterior weight lies on the lattice boundary ring; \
             the search region is too small",
            100.0 * boundary_mass
        );
    }

    // Averaged coefficient marginals, one merge per coefficient.
    let p_cols = data.p();
    let mut merged_beta = Vec::with_capacity(p_cols);
    for j in 0..p_cols {
        let marginals: Vec<DensityGrid> =
            ordered_map(fits.iter().collect(), |f: &ConditionalFit| {
                f.marginal_beta(j)
            })
            .into_iter()
            .collect::<Result<_>>()?;
        merged_beta.push(merge_marginals(&marginals, &weights)?);
    }
    let variance_marginals: Vec<DensityGrid> =
        ordered_map(fits.iter().collect(), |f: &ConditionalFit| {
            f.marginal_variance()
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let merged_variance = merge_marginals(&variance_marginals, &weights)?;

    let rhos: Vec<f64> = points.iter().map(|p| p.rho).collect();
    let lambdas: Vec<f64> = points.iter().map(|p| p.lambda).collect();
    let rho_summary = weighted_summary(&rhos, &weights)?;
    let lambda_summary = weighted_summary(&lambdas, &weights)?;

    let rho_marginal = if k1 >= 2 {
        weighted_kde_1d(&rhos, &weights, None)?
    } else {
        DensityGrid::point_mass(rhos[0])
    };
    let lambda_marginal = if k2 >= 2 {
        weighted_kde_1d(&lambdas, &weights, None)?
    } else {
        DensityGrid::point_mass(lambdas[0])
    };
    let joint_rl = if k1 >= 2 && k2 >= 2 {
        Some(weighted_kde_2d(&rhos, &lambdas, &weights, None)?)
    } else {
        None
    };

    Ok(BmaResult {
        points,
        fits,
        names: data.names().to_vec(),
        spec,
        merged_beta,
        merged_variance,
        rho_summary,
        lambda_summary,
        rho_marginal,
        lambda_marginal,
        joint_rl,
        ess,
        boundary_mass,
    })
}

/// Weight on the outermost ring, counting only axes with at least three
/// nodes (with one or two nodes every node is an edge node and the
/// diagnostic would be vacuous).
fn ring_mass(points: &[GridPoint], k1: usize, k2: usize) -> f64 {
    let mut mass = 0.0;
    for i in 0..k1 {
        for j in 0..k2 {
            let edge1 = k1 >= 3 && (i == 0 || i == k1 - 1);
            let edge2 = k2 >= 3 && (j == 0 || j == k2 - 1);
            if edge1 || edge2 {
                mass += points[i * k2 + j].weight;
            }
        }
    }
    mass
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::TauPrior;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn ring_weights(n: usize) -> SpatialWeights {
        let mut edges = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            edges.push((i, j, 1.0));
            edges.push((j, i, 1.0));
        }
        SpatialWeights::from_edges(n, &edges)
            .unwrap()
            .row_standardize()
            .unwrap()
    }

    /// Independent-noise dataset (rho = lambda = 0 truth) with one covariate.
    fn flat_truth_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| 1.0 + 0.5 * v + rng.sample::<f64, _>(StandardNormal))
            .collect();
        Dataset::from_parts(y, vec![("x1".into(), x)], "(Intercept)").unwrap()
    }

    fn diffuse_priors() -> PriorSpec {
        PriorSpec {
            beta_precision: 0.001,
            tau: TauPrior::Gamma {
                shape: 0.01,
                rate: 0.01,
            },
            ..PriorSpec::default()
        }
    }

    #[test]
    fn two_by_two_grid_sits_at_plus_minus_amplitude() {
        let spec = GridSpec {
            center: InternalPoint::new(0.0, 0.0),
            internal_sds: (1.0, 1.0),
            dims: (2, 2),
            semi_amplitude: 3.0,
        };
        let pts = build_grid(&spec).unwrap();
        let coords: Vec<(f64, f64)> = pts
            .iter()
            .map(|p| (p.internal.gamma1, p.internal.gamma2))
            .collect();
        assert_eq!(
            coords,
            vec![(-3.0, -3.0), (-3.0, 3.0), (3.0, -3.0), (3.0, 3.0)]
        );
        // Back-transformed coordinates are tanh(gamma/2).
        assert_relative_eq!(pts[0].rho, (-1.5f64).tanh());
    }

    #[test]
    fn single_node_axis_pins_the_center() {
        let spec = GridSpec {
            center: InternalPoint::new(0.4, -0.2),
            internal_sds: (1.0, 1.0),
            dims: (1, 3),
            semi_amplitude: 3.0,
        };
        let pts = build_grid(&spec).unwrap();
        assert_eq!(pts.len(), 3);
        assert!(pts.iter().all(|p| p.internal.gamma1 == 0.4));
    }

    #[test]
    fn grid_spec_validation_rejects_degenerate_scales() {
        let mut spec = GridSpec {
            center: InternalPoint::new(0.0, 0.0),
            internal_sds: (0.0, 1.0),
            dims: (2, 2),
            semi_amplitude: 3.0,
        };
        assert!(spec.validate().is_err());
        spec.internal_sds = (1.0, 1.0);
        spec.dims = (0, 2);
        assert!(spec.validate().is_err());
        spec.dims = (2, 2);
        spec.semi_amplitude = -1.0;
        assert!(spec.validate().is_err());
    }

    fn bare_points(terms: &[f64]) -> Vec<GridPoint> {
        terms
            .iter()
            .map(|&t| GridPoint {
                internal: InternalPoint::new(0.0, 0.0),
                rho: 0.0,
                lambda: 0.0,
                log_evidence: t,
                log_prior_internal: 0.0,
                weight: f64::NAN,
            })
            .collect()
    }

    #[test]
    fn softmax_weights_match_hand_values() {
        let mut pts = bare_points(&[-10.0, -12.0]);
        compute_weights(&mut pts).unwrap();
        // exp(-10) / (exp(-10) + exp(-12)) = 1 / (1 + exp(-2)).
        let w0 = 1.0 / (1.0 + (-2.0f64).exp());
        assert_relative_eq!(pts[0].weight, w0, epsilon = 1e-12);
        assert_abs_diff_eq!(pts[0].weight, 0.8808, epsilon = 1e-4);
        assert_abs_diff_eq!(pts[1].weight, 0.1192, epsilon = 1e-4);
    }

    #[test]
    fn equal_terms_share_weight_and_shifts_cancel() {
        let mut pts = bare_points(&[-5.0; 7]);
        compute_weights(&mut pts).unwrap();
        for p in &pts {
            assert_relative_eq!(p.weight, 1.0 / 7.0, epsilon = 1e-14);
        }

        let terms = [-3.0, -1.0, -4.0, -1.5];
        let mut a = bare_points(&terms);
        let shifted: Vec<f64> = terms.iter().map(|t| t + 12345.678).collect();
        let mut b = bare_points(&shifted);
        compute_weights(&mut a).unwrap();
        compute_weights(&mut b).unwrap();
        let sum: f64 = a.iter().map(|p| p.weight).sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        for (pa, pb) in a.iter().zip(&b) {
            assert_abs_diff_eq!(pa.weight, pb.weight, epsilon = 1e-15);
        }
    }

    #[test]
    fn degenerate_weight_inputs_are_rejected() {
        assert!(compute_weights(&mut []).is_err());
        let mut nan = bare_points(&[f64::NAN, -1.0]);
        assert!(compute_weights(&mut nan).is_err());
        let mut empty = bare_points(&[f64::NEG_INFINITY, f64::NEG_INFINITY]);
        assert!(compute_weights(&mut empty).is_err());
    }

    #[test]
    fn mode_search_finds_a_local_maximum_near_flat_truth() {
        let n = 60;
        let data = flat_truth_dataset(n, 11);
        let w = ring_weights(n);
        let priors = diffuse_priors();
        let quad = QuadratureConfig::default();

        let (mode, sds) = find_mode(&data, &w, &priors, &quad).unwrap();
        assert!(sds.0 > 0.0 && sds.1 > 0.0);
        // Truth is rho = lambda = 0; a short ring at n = 60 localizes only
        // loosely, but the back-transformed mode must be well inside.
        assert!(mode.rho().abs() < 0.6, "rho mode {}", mode.rho());
        assert!(mode.lambda().abs() < 0.6, "lambda mode {}", mode.lambda());

        // Local optimality against the eight neighboring probe points.
        let objective = |g1: f64, g2: f64| -> f64 {
            let fit = crate::fit::fit_conditional(
                &data,
                &w,
                from_internal(g1),
                from_internal(g2),
                &priors,
                &quad,
            )
            .unwrap();
            fit.log_evidence
                + internal_log_prior(g1, &priors.rho_prior)
                + internal_log_prior(g2, &priors.lambda_prior)
        };
        let at_mode = objective(mode.gamma1, mode.gamma2);
        let step = 0.05;
        for di in [-1.0, 0.0, 1.0] {
            for dj in [-1.0, 0.0, 1.0] {
                if di == 0.0 && dj == 0.0 {
                    continue;
                }
                let probe = objective(mode.gamma1 + di * step, mode.gamma2 + dj * step);
                assert!(
                    probe <= at_mode + 1e-9,
                    "probe ({di}, {dj}) beats the mode by {}",
                    probe - at_mode
                );
            }
        }
    }

    #[test]
    fn bma_weights_concentrate_near_the_mode() {
        let n = 60;
        let data = flat_truth_dataset(n, 11);
        let w = ring_weights(n);
        let priors = diffuse_priors();
        let quad = QuadratureConfig::default();

        let result = run_bma(&data, &w, &priors, &GridSetting::auto((3, 3)), &quad).unwrap();
        assert_eq!(result.points.len(), 9);
        let total: f64 = result.points.iter().map(|p| p.weight).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        assert!(result.points.iter().all(|p| p.weight >= 0.0));
        assert!(result.ess >= 1.0 && result.ess <= 9.0);

        // The heaviest node must be the lattice node nearest the mode in
        // the internal metric: the center node of a mode-centered lattice.
        let argmax = result
            .points
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.weight.partial_cmp(&b.1.weight).unwrap())
            .unwrap()
            .0;
        assert_eq!(
            argmax,
            4,
            "weights {:?}",
            result.points.iter().map(|p| p.weight).collect::<Vec<_>>()
        );

        // Merged coefficient marginals are normalized and centered sanely.
        assert_eq!(result.merged_beta.len(), 2);
        for g in &result.merged_beta {
            assert_relative_eq!(g.integral(), 1.0, epsilon = 1e-9);
        }
        let b1 = &result.merged_beta[1];
        assert!((b1.mean() - 0.5).abs() < 0.5, "beta1 mean {}", b1.mean());
        assert!(result.joint_rl.is_some());
    }

    #[test]
    fn single_node_lattice_reproduces_the_conditional_fit() {
        let n = 40;
        let data = flat_truth_dataset(n, 3);
        let w = ring_weights(n);
        let priors = diffuse_priors();
        let quad = QuadratureConfig::default();

        let spec = GridSpec {
            center: InternalPoint::new(0.3, -0.1),
            internal_sds: (0.5, 0.5),
            dims: (1, 1),
            semi_amplitude: 3.0,
        };
        let result = run_bma(&data, &w, &priors, &GridSetting::Manual(spec), &quad).unwrap();
        let direct = crate::fit::fit_conditional(
            &data,
            &w,
            from_internal(0.3),
            from_internal(-0.1),
            &priors,
            &quad,
        )
        .unwrap();

        assert_eq!(result.points.len(), 1);
        assert_relative_eq!(result.points[0].weight, 1.0);
        assert_relative_eq!(result.points[0].log_evidence, direct.log_evidence);
        assert_relative_eq!(result.ess, 1.0);
        // The merged marginal is the single conditional marginal up to
        // common-support interpolation.
        let merged = &result.merged_beta[1];
        let cond = direct.marginal_beta(1).unwrap();
        assert_abs_diff_eq!(merged.mean(), cond.mean(), epsilon = 1e-6);
        assert_abs_diff_eq!(merged.sd(), cond.sd(), epsilon = 1e-6);
        assert!(result.rho_marginal.spike_at().is_some());
        assert!(result.joint_rl.is_none());
    }

    #[test]
    fn invalid_quadrature_config_is_rejected_before_fitting() {
        let n = 30;
        let data = flat_truth_dataset(n, 5);
        let w = ring_weights(n);
        let priors = diffuse_priors();
        let bad_quad = QuadratureConfig {
            n_nodes: 1,
            ..QuadratureConfig::default()
        };
        let spec = GridSpec {
            center: InternalPoint::new(0.0, 0.0),
            internal_sds: (0.5, 0.5),
            dims: (2, 2),
            semi_amplitude: 1.0,
        };
        let err = run_bma(&data, &w, &priors, &GridSetting::Manual(spec), &bad_quad);
        assert!(matches!(err, Err(Error::Quadrature(_))));
    }
}
