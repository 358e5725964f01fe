//! Exact conditional inference at a fixed (rho, lambda).
//!
//! Conditioning on the two autocorrelation parameters turns the model into
//! linear Gaussian regression with a known error structure:
//!
//! ```text
//! y = Xt b + u,   Xt = A(rho)^-1 X,   u ~ N(0, (tau Sigma)^-1),
//! Sigma = A(rho)' A(lambda)' A(lambda) A(rho)
//! ```
//!
//! Multiplying through by C = A(lambda) A(rho) gives iid errors:
//! v - U b ~ N(0, tau^-1 I) with v = C y and U = A(lambda) X. All the
//! conditional algebra lives on the sufficient statistics {U'U, U'v, v'v,
//! log|Sigma|}; the transformed design Xt is never materialized and every
//! evidence evaluation after the statistics are formed costs O(p^3).
//!
//! With a N(0, p_b^-1 I) prior on the coefficients, the b-integral is
//! conjugate. Writing Q = tau U'U + p_b I and m = Q^-1 (tau U'v),
//!
//! ```text
//! log pi(y | tau) = (n/2)(log tau - log 2 pi) + (1/2) log|Sigma|
//!                 + (p/2) log p_b - (1/2) log|Q|
//!                 - (1/2)(tau v'v - tau m'U'v)
//! ```
//!
//! The remaining tau-integral is one-dimensional. On t = log tau with a
//! Gamma(a, b) prior the integrand is
//!
//! ```text
//! h(t) = log pi(y | e^t) + a log b - log G(a) + a t - b e^t
//! ```
//!
//! (the a t term collects the Gamma exponent (a-1)t and the Jacobian of the
//! log transform). Evidence is computed by locating the mode of h with a
//! coarse scan plus golden-section refinement, clipping the integration
//! window where h falls `log_window` below the peak, and applying
//! Gauss-Legendre quadrature there; the node weights double as the discrete
//! tau-posterior used for all downstream marginals. A fixed (point-mass) tau
//! skips the quadrature: the evidence is log pi(y | tau0) itself.

use libm::lgamma;
use nalgebra::{Cholesky, DMatrix, DVector};

use crate::dataset::Dataset;
use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::filter::SpatialFilter;
use crate::numeric::{bisect_to, gauss_legendre, golden_section_max, log_sum_exp, normalized_exp};
use crate::priors::{PriorSpec, TauPrior};
use crate::weights::SpatialWeights;

/// Bounds and resolution of the coarse scan for the mode of h(t), t = log tau.
const SCAN_LO: f64 = -60.0;
const SCAN_HI: f64 = 60.0;
const SCAN_STEP: f64 = 0.25;

/// Hard walls for the window walk (so a pathological integrand cannot run
/// the search into overflow territory).
const T_MIN: f64 = -80.0;
const T_MAX: f64 = 80.0;

/// Step of the outward walk that brackets the window edges.
const WALK_STEP: f64 = 0.5;

/// Points of the beta marginal grid, spanning mean +- BETA_SPAN mixture sd.
const BETA_GRID_POINTS: usize = 801;
const BETA_SPAN: f64 = 8.0;

/// Points of the variance marginal grid (uniform in v = 1/tau).
const VARIANCE_GRID_POINTS: usize = 2001;

/// Controls for the tau quadrature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureConfig {
    /// Gauss-Legendre node count over the integration window (at least 3).
    pub n_nodes: usize,
    /// Window half-depth: integration covers where h(t) >= max h - log_window.
    pub log_window: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            n_nodes: 41,
            log_window: 30.0,
        }
    }
}

impl QuadratureConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.n_nodes < 3 {
            return Err(Error::Quadrature(format!(
                "tau quadrature needs at least 3 nodes, got {}",
                self.n_nodes
            )));
        }
        if !(self.log_window > 0.0) {
            return Err(Error::Quadrature(format!(
                "log window must be positive, got {}",
                self.log_window
            )));
        }
        Ok(())
    }
}

/// Sufficient statistics of one conditional model.
#[derive(Clone, Debug)]
pub(crate) struct SuffStats {
    pub n: usize,
    pub p: usize,
    pub log_det_sigma: f64,
    pub utu: DMatrix<f64>,
    pub utv: DVector<f64>,
    pub vtv: f64,
}

impl SuffStats {
    /// Assemble from data and two filters (one per autocorrelation).
    pub fn assemble(
        data: &Dataset,
        rho_filter: &SpatialFilter,
        lambda_filter: &SpatialFilter,
    ) -> Self {
        let ay = rho_filter.apply(data.y());
        Self::from_pieces(data, rho_filter, lambda_filter, &ay)
    }

    /// Assemble reusing a cached A(rho) y (the grid engine shares it across
    /// one rho-row of the lattice).
    pub fn from_pieces(
        data: &Dataset,
        rho_filter: &SpatialFilter,
        lambda_filter: &SpatialFilter,
        rho_y: &DVector<f64>,
    ) -> Self {
        let u = lambda_filter.apply_mat(data.x());
        let v = lambda_filter.apply(rho_y);
        SuffStats {
            n: data.n(),
            p: data.p(),
            log_det_sigma: 2.0 * (rho_filter.logdet() + lambda_filter.logdet()),
            utu: u.transpose() * &u,
            utv: u.transpose() * &v,
            vtv: v.dot(&v),
        }
    }

    /// Q's Cholesky and the posterior mean of the coefficients at tau = e^t;
    /// None if Q fails to factorize (possible only at scan extremes where
    /// the integrand is negligible anyway).
    fn beta_posterior(
        &self,
        beta_precision: f64,
        t: f64,
    ) -> Option<(DVector<f64>, Cholesky<f64, nalgebra::Dyn>)> {
        let tau = t.exp();
        let mut q = &self.utu * tau;
        for j in 0..self.p {
            q[(j, j)] += beta_precision;
        }
        let chol = Cholesky::new(q)?;
        let mean = chol.solve(&(&self.utv * tau));
        Some((mean, chol))
    }

    /// log pi(y | tau) with the coefficients integrated out.
    fn log_py_given_tau(&self, beta_precision: f64, t: f64) -> f64 {
        let Some((mean, chol)) = self.beta_posterior(beta_precision, t) else {
            return f64::NEG_INFINITY;
        };
        let tau = t.exp();
        let log_det_q: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let quad_form = tau * self.vtv - tau * mean.dot(&self.utv);
        0.5 * (self.n as f64 * t + self.log_det_sigma)
            - 0.5 * self.n as f64 * (2.0 * std::f64::consts::PI).ln()
            + 0.5 * self.p as f64 * beta_precision.ln()
            - 0.5 * log_det_q
            - 0.5 * quad_form
    }
}

/// One tau-quadrature node with its share of the posterior and the
/// conditional coefficient distribution there.
#[derive(Clone, Debug)]
pub struct TauNode {
    /// Node location on the log scale.
    pub log_tau: f64,
    /// Node location, tau itself.
    pub tau: f64,
    /// Normalized log posterior weight of the node.
    pub log_weight: f64,
    /// Normalized posterior weight; the weights sum to one.
    pub weight: f64,
    /// Conditional posterior mean of the coefficients at this tau.
    pub beta_mean: DVector<f64>,
    /// Conditional posterior covariance (symmetric positive definite).
    pub beta_cov: DMatrix<f64>,
}

/// Exact conditional inference at one (rho, lambda) point.
#[derive(Clone, Debug)]
pub struct ConditionalFit {
    pub rho: f64,
    pub lambda: f64,
    /// log pi(y | rho, lambda): coefficients integrated analytically, noise
    /// precision by quadrature (or fixed).
    pub log_evidence: f64,
    /// The discrete tau posterior with per-node coefficient conditionals.
    pub nodes: Vec<TauNode>,
    stats: SuffStats,
    beta_precision: f64,
    tau_prior: TauPrior,
    /// Integration window on t = log tau (degenerate for fixed tau).
    window: (f64, f64),
}

/// Fit the conditional model at (rho, lambda).
pub fn fit_conditional(
    data: &Dataset,
    w: &SpatialWeights,
    rho: f64,
    lambda: f64,
    priors: &PriorSpec,
    quad: &QuadratureConfig,
) -> Result<ConditionalFit> {
    if data.n() != w.n() {
        return Err(Error::Dimension {
            context: "dataset rows versus weights regions".into(),
            expected: w.n(),
            got: data.n(),
        });
    }
    let rho_filter = SpatialFilter::new(w, rho)?;
    let lambda_filter = SpatialFilter::new(w, lambda)?;
    let stats = SuffStats::assemble(data, &rho_filter, &lambda_filter);
    fit_from_stats(rho, lambda, stats, priors, quad)
}

/// Core fitting path over precomputed sufficient statistics.
pub(crate) fn fit_from_stats(
    rho: f64,
    lambda: f64,
    stats: SuffStats,
    priors: &PriorSpec,
    quad: &QuadratureConfig,
) -> Result<ConditionalFit> {
    priors.validate()?;
    quad.validate()?;
    let pb = priors.beta_precision;

    match priors.tau {
        TauPrior::Fixed(tau0) => {
            let t0 = tau0.ln();
            let log_evidence = stats.log_py_given_tau(pb, t0);
            if !log_evidence.is_finite() {
                return Err(Error::Quadrature(format!(
                    "conditional evidence is not finite at fixed tau = {tau0}"
                )));
            }
            let (mean, chol) = stats
                .beta_posterior(pb, t0)
                .expect("Q = tau U'U + p_b I is positive definite for p_b > 0");
            let node = TauNode {
                log_tau: t0,
                tau: tau0,
                log_weight: 0.0,
                weight: 1.0,
                beta_mean: mean,
                beta_cov: symmetrized_inverse(&chol),
            };
            Ok(ConditionalFit {
                rho,
                lambda,
                log_evidence,
                nodes: vec![node],
                stats,
                beta_precision: pb,
                tau_prior: priors.tau.clone(),
                window: (t0, t0),
            })
        }
        TauPrior::Gamma { shape, rate } => {
            let h =
                |t: f64| stats.log_py_given_tau(pb, t) + log_gamma_with_jacobian(shape, rate, t);

            // Mode: coarse scan, then golden-section refinement around the
            // best scan point.
            let mut best_t = f64::NAN;
            let mut best_h = f64::NEG_INFINITY;
            let steps = ((SCAN_HI - SCAN_LO) / SCAN_STEP).round() as usize;
            for k in 0..=steps {
                let t = SCAN_LO + k as f64 * SCAN_STEP;
                let ht = h(t);
                if ht > best_h {
                    best_h = ht;
                    best_t = t;
                }
            }
            if !best_h.is_finite() {
                return Err(Error::Quadrature(
                    "tau integrand vanished over the entire scan range".into(),
                ));
            }
            let (t_mode, h_mode) =
                golden_section_max(h, best_t - SCAN_STEP, best_t + SCAN_STEP, 1e-9);
            let target = h_mode - quad.log_window;

            let t_lo = window_edge(&h, t_mode, target, -WALK_STEP, T_MIN);
            let t_hi = window_edge(&h, t_mode, target, WALK_STEP, T_MAX);

            let (xi, glw) = gauss_legendre(quad.n_nodes);
            let mid = 0.5 * (t_lo + t_hi);
            let half = 0.5 * (t_hi - t_lo);
            let ts: Vec<f64> = xi.iter().map(|&x| mid + half * x).collect();
            let log_terms: Vec<f64> = ts
                .iter()
                .zip(&glw)
                .map(|(&t, &wq)| h(t) + wq.ln())
                .collect();
            let log_evidence = log_sum_exp(&log_terms) + half.ln();
            if !log_evidence.is_finite() {
                return Err(Error::Quadrature(format!(
                    "conditional evidence is not finite on window [{t_lo}, {t_hi}]"
                )));
            }

            let weights = normalized_exp(&log_terms);
            let log_z = log_sum_exp(&log_terms);
            let mut nodes = Vec::with_capacity(ts.len());
            for ((&t, &lw), &wt) in ts.iter().zip(&log_terms).zip(&weights) {
                let (mean, chol) = stats.beta_posterior(pb, t).ok_or_else(|| {
                    Error::Quadrature(format!(
                        "coefficient posterior not definite at log tau = {t}"
                    ))
                })?;
                nodes.push(TauNode {
                    log_tau: t,
                    tau: t.exp(),
                    log_weight: lw - log_z,
                    weight: wt,
                    beta_mean: mean,
                    beta_cov: symmetrized_inverse(&chol),
                });
            }
            Ok(ConditionalFit {
                rho,
                lambda,
                log_evidence,
                nodes,
                stats,
                beta_precision: pb,
                tau_prior: priors.tau.clone(),
                window: (t_lo, t_hi),
            })
        }
    }
}

impl ConditionalFit {
    pub fn n(&self) -> usize {
        self.stats.n
    }

    pub fn p(&self) -> usize {
        self.stats.p
    }

    /// Integration window on t = log tau.
    pub fn tau_window(&self) -> (f64, f64) {
        self.window
    }

    /// Posterior mean of coefficient j (mixture over tau nodes).
    pub fn beta_mean(&self, j: usize) -> f64 {
        self.nodes
            .iter()
            .map(|nd| nd.weight * nd.beta_mean[j])
            .sum()
    }

    /// Posterior variance of coefficient j (law of total variance over the
    /// tau mixture).
    pub fn beta_variance(&self, j: usize) -> f64 {
        let mean = self.beta_mean(j);
        self.nodes
            .iter()
            .map(|nd| nd.weight * (nd.beta_cov[(j, j)] + nd.beta_mean[j] * nd.beta_mean[j]))
            .sum::<f64>()
            - mean * mean
    }

    /// Posterior mean of the error variance 1/tau.
    pub fn variance_mean(&self) -> f64 {
        self.nodes.iter().map(|nd| nd.weight / nd.tau).sum()
    }

    /// Posterior second moment of 1/tau.
    pub fn variance_second_moment(&self) -> f64 {
        self.nodes
            .iter()
            .map(|nd| nd.weight / (nd.tau * nd.tau))
            .sum()
    }

    /// Marginal posterior density of coefficient j: the tau-node-weighted
    /// Gaussian mixture tabulated on mean +- 8 mixture sd.
    pub fn marginal_beta(&self, j: usize) -> Result<DensityGrid> {
        if j >= self.stats.p {
            return Err(Error::Invalid {
                name: "coefficient index".into(),
                reason: format!("index {j} out of range for p = {}", self.stats.p),
            });
        }
        let mean = self.beta_mean(j);
        let sd = self.beta_variance(j).max(0.0).sqrt().max(1e-300);
        let lo = mean - BETA_SPAN * sd;
        let hi = mean + BETA_SPAN * sd;
        let step = (hi - lo) / (BETA_GRID_POINTS - 1) as f64;
        let xs: Vec<f64> = (0..BETA_GRID_POINTS)
            .map(|k| lo + k as f64 * step)
            .collect();
        let mut ds = vec![0.0f64; xs.len()];
        for nd in &self.nodes {
            let m = nd.beta_mean[j];
            let s2 = nd.beta_cov[(j, j)];
            let inv = 1.0 / (2.0 * s2);
            let norm = nd.weight / (2.0 * std::f64::consts::PI * s2).sqrt();
            for (d, &x) in ds.iter_mut().zip(&xs) {
                *d += norm * (-(x - m) * (x - m) * inv).exp();
            }
        }
        DensityGrid::new(xs, ds)
    }

    /// Marginal posterior density of the error variance v = 1/tau, by change
    /// of variables from the tau quadrature posterior (density divided by
    /// v^2, realized on a uniform v grid via h(-log v) - log v).
    pub fn marginal_variance(&self) -> Result<DensityGrid> {
        match self.tau_prior {
            TauPrior::Fixed(tau0) => Ok(DensityGrid::point_mass(1.0 / tau0)),
            TauPrior::Gamma { shape, rate } => {
                let (t_lo, t_hi) = self.window;
                let v_lo = (-t_hi).exp();
                let v_hi = (-t_lo).exp();
                let step = (v_hi - v_lo) / (VARIANCE_GRID_POINTS - 1) as f64;
                let xs: Vec<f64> = (0..VARIANCE_GRID_POINTS)
                    .map(|k| v_lo + k as f64 * step)
                    .collect();
                let log_ds: Vec<f64> = xs
                    .iter()
                    .map(|&v| {
                        let t = -v.ln();
                        self.stats.log_py_given_tau(self.beta_precision, t)
                            + log_gamma_with_jacobian(shape, rate, t)
                            - v.ln()
                    })
                    .collect();
                DensityGrid::from_log_density(xs, &log_ds)
            }
        }
    }
}

/// log Gamma(tau; a, b) density at tau = e^t plus the log-scale Jacobian:
/// a log b - log G(a) + a t - b e^t.
fn log_gamma_with_jacobian(shape: f64, rate: f64, t: f64) -> f64 {
    shape * rate.ln() - lgamma(shape) + shape * t - rate * t.exp()
}

/// Walk outward from the mode until h drops below `target`, then bisect the
/// crossing. `dir` is the signed step; `wall` bounds the walk.
fn window_edge(h: &impl Fn(f64) -> f64, t_mode: f64, target: f64, dir: f64, wall: f64) -> f64 {
    let mut inside = t_mode;
    loop {
        let next = inside + dir;
        if (dir < 0.0 && next <= wall) || (dir > 0.0 && next >= wall) {
            return wall;
        }
        if h(next) < target {
            let (a, b) = if dir < 0.0 {
                (next, inside)
            } else {
                (inside, next)
            };
            return bisect_to(h, a, b, target, 1e-6);
        }
        inside = next;
    }
}

fn symmetrized_inverse(chol: &Cholesky<f64, nalgebra::Dyn>) -> DMatrix<f64> {
    let inv = chol.inverse();
    0.5 * (&inv + inv.transpose())
}
