//! Metropolis-within-Gibbs sampler for the full SAC posterior.
//!
//! The averaging pipeline never simulates: conditional posteriors are exact
//! and the lattice supplies the (rho, lambda) mixing. This module is its
//! validation oracle, a conventional sampler targeting the same joint
//! posterior
//!
//! ```text
//! pi(beta, tau, rho, lambda | y)  propto
//!     tau^(n/2) |A(rho)| |A(lambda)|
//!     exp(-tau/2 ||A(lambda)(A(rho)y - X beta)||^2)
//!     pi(beta) pi(tau) pi(rho) pi(lambda)
//! ```
//!
//! Two blocks are conjugate and drawn exactly. With U = A(lambda)X and
//! v = A(lambda)A(rho)y, the coefficient block beta | rest is Gaussian with
//! precision tau U'U + p_beta I and mean tau Q^-1 U'v, and tau | rest is
//! Gamma(a + n/2, b + ||v - U beta||^2 / 2). The autocorrelations move by
//! random-walk Metropolis on the same internal scale the lattice uses, with
//! the prior expressed on that scale (Jacobian included), so both methods
//! target the identical posterior and any disagreement between them points
//! at a defect rather than a parameterization mismatch.
//!
//! Each autocorrelation proposal factorizes its spatial filter afresh: a
//! random walk revisits a value too rarely for a factorization cache to pay
//! for itself. The matrix products the likelihood needs are cheap by
//! comparison because A(x)z = z - x Wz is linear in x, so Wy, W(Wy), and WX
//! are formed once and every residual afterwards is a dense combination.

use std::io;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Gamma, StandardNormal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::filter::SpatialFilter;
use crate::fit::QuadratureConfig;
use crate::grid::find_mode;
use crate::merge::{weighted_summary, Summary};
use crate::priors::{internal_log_prior, PriorSpec, TauPrior};
use crate::transform::{from_internal, to_internal};
use crate::weights::SpatialWeights;

/// Factor applied to the curvature standard deviations when the random-walk
/// scales are not given explicitly, the usual optimal-scaling heuristic for
/// a one-dimensional Gaussian target.
pub const RW_SCALE_FACTOR: f64 = 2.4;

/// Acceptance-rate band outside which [`sample_posterior`] logs a warning.
pub const ACCEPTANCE_BAND: (f64, f64) = (0.1, 0.6);

/// Run-length and tuning settings for the sampler.
#[derive(Clone, Debug)]
pub struct McmcConfig {
    /// Sweeps discarded before retention begins.
    pub burn_in: usize,
    /// Post-burn-in sweeps.
    pub iterations: usize,
    /// Keep one draw per this many post-burn-in sweeps.
    pub thin: usize,
    /// Random-walk standard deviations for (rho, lambda) proposals on the
    /// internal scale. `None` selects [`RW_SCALE_FACTOR`] times the
    /// curvature standard deviations at the posterior mode.
    pub rw_scales: Option<(f64, f64)>,
    /// Seed of the ChaCha20 generator driving the whole chain.
    pub seed: u64,
    /// Starting (rho, lambda) on the natural scale. `None` starts at the
    /// posterior mode, which skips most of the transient.
    pub init: Option<(f64, f64)>,
}

impl Default for McmcConfig {
    /// A long conservative run suited to final reporting rather than quick
    /// checks: 10000 burn-in sweeps, 90000 inference sweeps, one draw in
    /// ten retained.
    fn default() -> Self {
        McmcConfig {
            burn_in: 10_000,
            iterations: 90_000,
            thin: 10,
            rw_scales: None,
            seed: 1,
            init: None,
        }
    }
}

impl McmcConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Invalid {
                name: "mcmc iterations".into(),
                reason: "at least one post-burn-in sweep is required".into(),
            });
        }
        if self.thin == 0 {
            return Err(Error::Invalid {
                name: "mcmc thinning".into(),
                reason: "thin must be at least 1".into(),
            });
        }
        if let Some((s1, s2)) = self.rw_scales {
            if !(s1 > 0.0 && s1.is_finite() && s2 > 0.0 && s2.is_finite()) {
                return Err(Error::Invalid {
                    name: "mcmc random-walk scales".into(),
                    reason: format!("({s1}, {s2}) must be positive and finite"),
                });
            }
        }
        Ok(())
    }
}

/// One retained draw of the full parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    /// Regression coefficients in design-column order.
    pub beta: Vec<f64>,
    pub tau: f64,
    pub rho: f64,
    pub lambda: f64,
}

/// Retained draws plus mixing diagnostics.
///
/// Columns are ordered as in `names`: one per coefficient, then `tau`,
/// `rho`, `lambda`. Every draw satisfies tau > 0 and admissible (rho,
/// lambda) by construction, since the internal scale cannot leave the open
/// interval.
#[derive(Clone, Debug)]
pub struct Chains {
    /// Column names: coefficient names, then "tau", "rho", "lambda".
    pub names: Vec<String>,
    /// Retained draws in chain order.
    pub draws: Vec<Draw>,
    /// Post-burn-in Metropolis acceptance rates for (rho, lambda).
    pub acceptance_rates: (f64, f64),
    /// Effective sample size per column, aligned with `names`.
    pub ess_per_param: Vec<f64>,
}

impl Chains {
    /// Number of retained draws.
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Number of regression coefficients per draw.
    pub fn n_coefficients(&self) -> usize {
        self.names.len().saturating_sub(3)
    }

    /// Chain of column `k` (indexing `names`) as a vector.
    pub fn column(&self, k: usize) -> Vec<f64> {
        let p = self.n_coefficients();
        self.draws
            .iter()
            .map(|d| match k {
                j if j < p => d.beta[j],
                j if j == p => d.tau,
                j if j == p + 1 => d.rho,
                _ => d.lambda,
            })
            .collect()
    }

    /// Writes the chains as CSV, one retained draw per row, columns named
    /// as in `names`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(&self.names)?;
        let mut row = Vec::with_capacity(self.names.len());
        for d in &self.draws {
            row.clear();
            row.extend(d.beta.iter().map(|b| b.to_string()));
            row.push(d.tau.to_string());
            row.push(d.rho.to_string());
            row.push(d.lambda.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Summary of one chain column.
#[derive(Clone, Debug)]
pub struct ParamSummary {
    pub name: String,
    /// Mean, standard deviation, and quantiles under the same conventions
    /// as the averaged posteriors.
    pub summary: Summary,
    /// Effective sample size; NaN flags a degenerate (constant) chain.
    pub ess: f64,
}

/// Per-column summaries of a chain: moments, quantiles, and effective
/// sample size.
///
/// Quantiles follow the same cumulative-weight convention as the lattice
/// summaries, so the two reports are directly comparable. A constant column
/// gets standard deviation zero and a NaN effective sample size.
pub fn chain_summary(chains: &Chains) -> Result<Vec<ParamSummary>> {
    if chains.is_empty() {
        return Err(Error::Invalid {
            name: "chains".into(),
            reason: "no retained draws to summarize".into(),
        });
    }
    let n = chains.len();
    let weights = vec![1.0 / n as f64; n];
    chains
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let col = chains.column(k);
            if col.iter().all(|&v| v == col[0]) {
                // A constant column is a point: report it exactly and flag
                // the undefined effective sample size.
                let v = col[0];
                return Ok(ParamSummary {
                    name: name.clone(),
                    summary: Summary {
                        mean: v,
                        sd: 0.0,
                        q025: v,
                        median: v,
                        q975: v,
                    },
                    ess: f64::NAN,
                });
            }
            Ok(ParamSummary {
                name: name.clone(),
                summary: weighted_summary(&col, &weights)?,
                ess: effective_sample_size(&col),
            })
        })
        .collect()
}

/// Effective sample size by the initial-monotone-sequence estimator.
///
/// Autocorrelations are summed in adjacent pairs; the sum stops at the
/// first non-positive pair and each pair is capped by its predecessor,
/// which makes the integrated autocorrelation time estimate consistent for
/// reversible chains. Returns the chain length for chains shorter than two
/// and NaN for a constant chain, whose autocorrelation is undefined.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return n as f64;
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let centered: Vec<f64> = x.iter().map(|&v| v - mean).collect();
    let c0 = centered.iter().map(|&d| d * d).sum::<f64>() / nf;
    if c0 == 0.0 || !c0.is_finite() {
        return f64::NAN;
    }
    let autocorr = |k: usize| -> f64 {
        let mut s = 0.0;
        for t in 0..n - k {
            s += centered[t] * centered[t + k];
        }
        s / (nf * c0)
    };

    let mut pair_sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = autocorr(2 * m) + autocorr(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        pair_sum += pair;
        prev = pair;
        m += 1;
    }
    // tau_int = 1 + 2 sum_{k>=1} rho_k and rho_0 = 1 sits inside the first
    // pair, hence the reassembly below.
    let tau_int = (2.0 * pair_sum - 1.0).max(1.0 / nf);
    nf / tau_int
}

/// Draws from the joint posterior by Metropolis-within-Gibbs.
///
/// The sweep order is beta, tau, rho, lambda. The conjugate blocks are
/// exact draws; the autocorrelations take independent random-walk steps on
/// the internal scale. A `Fixed` noise precision is held at its value and
/// consumes no randomness. Given the seed the chain is fully deterministic.
///
/// When `cfg.init` or `cfg.rw_scales` is absent the posterior mode search
/// runs once to supply the starting point and proposal scales. Acceptance
/// rates are counted over post-burn-in sweeps and a warning is logged when
/// either leaves [`ACCEPTANCE_BAND`].
///
/// Errors when the configuration is inconsistent, the starting point lies
/// outside the open interval, or the log posterior at the start is not
/// finite (for instance a tabulated prior that puts no mass there).
pub fn sample_posterior(
    data: &Dataset,
    w: &SpatialWeights,
    priors: &PriorSpec,
    cfg: &McmcConfig,
) -> Result<Chains> {
    cfg.validate()?;
    priors.validate()?;
    if data.n() != w.n() {
        return Err(Error::Dimension {
            context: "dataset rows versus weights regions".into(),
            expected: w.n(),
            got: data.n(),
        });
    }

    // Starting point and proposal scales, from the mode search unless both
    // are pinned by the configuration.
    let needs_mode = cfg.init.is_none() || cfg.rw_scales.is_none();
    let mode = if needs_mode {
        Some(find_mode(data, w, priors, &QuadratureConfig::default())?)
    } else {
        None
    };
    let (g_rho, g_lam) = match cfg.init {
        Some((r, l)) => (to_internal(r)?, to_internal(l)?),
        None => {
            let point = mode.as_ref().expect("mode search ran").0;
            (point.gamma1, point.gamma2)
        }
    };
    let scales = match cfg.rw_scales {
        Some(s) => s,
        None => {
            let sds = mode.as_ref().expect("mode search ran").1;
            (RW_SCALE_FACTOR * sds.0, RW_SCALE_FACTOR * sds.1)
        }
    };

    let mut state = SamplerState::at(data, w, priors, g_rho, g_lam)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    // The conjugate blocks are redrawn first in every sweep, so only the
    // pieces the Metropolis ratio reuses need to be finite here.
    state.draw_beta(&mut rng)?;
    state.draw_tau(&mut rng)?;
    let lp0 = state.log_posterior();
    if !lp0.is_finite() {
        return Err(Error::Invalid {
            name: "mcmc initialization".into(),
            reason: format!(
                "log posterior is {lp0} at rho = {}, lambda = {}",
                state.rho, state.lam
            ),
        });
    }

    for _ in 0..cfg.burn_in {
        state.sweep(&mut rng, scales)?;
    }

    let mut draws = Vec::with_capacity(cfg.iterations / cfg.thin);
    let mut accepted = (0usize, 0usize);
    for t in 0..cfg.iterations {
        let (a_rho, a_lam) = state.sweep(&mut rng, scales)?;
        accepted.0 += a_rho as usize;
        accepted.1 += a_lam as usize;
        if (t + 1) % cfg.thin == 0 {
            draws.push(Draw {
                beta: state.beta.iter().copied().collect(),
                tau: state.tau,
                rho: state.rho,
                lambda: state.lam,
            });
        }
    }

    let sweeps = cfg.iterations as f64;
    let acceptance_rates = (accepted.0 as f64 / sweeps, accepted.1 as f64 / sweeps);
    for (name, rate) in [("rho", acceptance_rates.0), ("lambda", acceptance_rates.1)] {
        if rate < ACCEPTANCE_BAND.0 || rate > ACCEPTANCE_BAND.1 {
            log::warn!(
                "{name} acceptance rate {rate:.3} outside [{}, {}]; consider retuning rw_scales",
                ACCEPTANCE_BAND.0,
                ACCEPTANCE_BAND.1
            );
        }
    }

    let mut names: Vec<String> = data.names().to_vec();
    names.extend(["tau", "rho", "lambda"].map(str::to_string));
    let mut chains = Chains {
        names,
        draws,
        acceptance_rates,
        ess_per_param: Vec::new(),
    };
    chains.ess_per_param = (0..chains.names.len())
        .map(|k| effective_sample_size(&chains.column(k)))
        .collect();
    Ok(chains)
}

/// Current point of the chain plus every cached product the sweep reuses.
struct SamplerState<'a> {
    data: &'a Dataset,
    w: &'a SpatialWeights,
    priors: &'a PriorSpec,
    /// W y, W(W y), and W X, formed once; A(x)z = z - x Wz makes every
    /// design and residual a dense combination of these.
    wy: DVector<f64>,
    w2y: DVector<f64>,
    wx: DMatrix<f64>,
    g_rho: f64,
    g_lam: f64,
    rho: f64,
    lam: f64,
    logdet_rho: f64,
    logdet_lam: f64,
    /// U = A(lambda)X at the current lambda.
    u: DMatrix<f64>,
    /// v = A(lambda)A(rho)y at the current point.
    v: DVector<f64>,
    beta: DVector<f64>,
    tau: f64,
    /// ||v - U beta||^2 at the current point.
    ssr: f64,
}

impl<'a> SamplerState<'a> {
    fn at(
        data: &'a Dataset,
        w: &'a SpatialWeights,
        priors: &'a PriorSpec,
        g_rho: f64,
        g_lam: f64,
    ) -> Result<Self> {
        let rho = from_internal(g_rho);
        let lam = from_internal(g_lam);
        let logdet_rho = SpatialFilter::new(w, rho)?.logdet();
        let logdet_lam = SpatialFilter::new(w, lam)?.logdet();
        let m = w.matrix();
        let wy = m.matvec(data.y());
        let w2y = m.matvec(&wy);
        let wx = m.matmul_dense(data.x());
        let tau = match priors.tau {
            TauPrior::Gamma { shape, rate } => shape / rate,
            TauPrior::Fixed(t0) => t0,
        };
        let mut state = SamplerState {
            data,
            w,
            priors,
            wy,
            w2y,
            wx,
            g_rho,
            g_lam,
            rho,
            lam,
            logdet_rho,
            logdet_lam,
            u: DMatrix::zeros(0, 0),
            v: DVector::zeros(0),
            beta: DVector::zeros(data.p()),
            tau,
            ssr: 0.0,
        };
        state.u = state.design_at(lam);
        state.v = state.response_at(rho, lam);
        state.refresh_ssr();
        Ok(state)
    }

    /// U = X - lambda WX.
    fn design_at(&self, lam: f64) -> DMatrix<f64> {
        self.data.x() - &self.wx * lam
    }

    /// v = y - (rho + lambda) Wy + rho lambda W(Wy).
    fn response_at(&self, rho: f64, lam: f64) -> DVector<f64> {
        self.data.y() - &self.wy * (rho + lam) + &self.w2y * (rho * lam)
    }

    fn refresh_ssr(&mut self) {
        self.ssr = (&self.v - &self.u * &self.beta).norm_squared();
    }

    /// Log posterior density up to an additive constant, for the
    /// initialization check only; sweeps use block-local differences.
    fn log_posterior(&self) -> f64 {
        let n = self.data.n() as f64;
        let like =
            0.5 * n * self.tau.ln() + self.logdet_rho + self.logdet_lam - 0.5 * self.tau * self.ssr;
        let prior_beta = -0.5 * self.priors.beta_precision * self.beta.norm_squared();
        let prior_tau = match self.priors.tau {
            TauPrior::Gamma { shape, rate } => (shape - 1.0) * self.tau.ln() - rate * self.tau,
            TauPrior::Fixed(_) => 0.0,
        };
        like + prior_beta
            + prior_tau
            + internal_log_prior(self.g_rho, &self.priors.rho_prior)
            + internal_log_prior(self.g_lam, &self.priors.lambda_prior)
    }

    /// One full sweep; returns the (rho, lambda) acceptance indicators.
    fn sweep<R: Rng>(&mut self, rng: &mut R, scales: (f64, f64)) -> Result<(bool, bool)> {
        self.draw_beta(rng)?;
        self.draw_tau(rng)?;
        let a_rho = self.step_rho(rng, scales.0)?;
        let a_lam = self.step_lambda(rng, scales.1)?;
        Ok((a_rho, a_lam))
    }

    /// Exact Gaussian draw of beta | tau, rho, lambda.
    fn draw_beta<R: Rng>(&mut self, rng: &mut R) -> Result<()> {
        let p = self.data.p();
        let q = self.u.tr_mul(&self.u) * self.tau
            + DMatrix::<f64>::identity(p, p) * self.priors.beta_precision;
        let chol = Cholesky::new(q).ok_or_else(|| {
            Error::Singular("coefficient conditional precision is not positive definite".into())
        })?;
        let mean = chol.solve(&(self.u.tr_mul(&self.v) * self.tau));
        let z = DVector::from_fn(p, |_, _| rng.sample(StandardNormal));
        let spread = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Singular("triangular solve in the coefficient draw".into()))?;
        self.beta = mean + spread;
        self.refresh_ssr();
        Ok(())
    }

    /// Exact Gamma draw of tau | beta, rho, lambda; a fixed precision stays
    /// put and consumes no randomness.
    fn draw_tau<R: Rng>(&mut self, rng: &mut R) -> Result<()> {
        if let TauPrior::Gamma { shape, rate } = self.priors.tau {
            let post_shape = shape + 0.5 * self.data.n() as f64;
            let post_rate = rate + 0.5 * self.ssr;
            // rand_distr parameterizes Gamma by shape and scale.
            let gamma = Gamma::new(post_shape, 1.0 / post_rate).map_err(|e| Error::Invalid {
                name: "tau conditional".into(),
                reason: e.to_string(),
            })?;
            self.tau = rng.sample(gamma);
        }
        Ok(())
    }

    /// Random-walk Metropolis step for rho on the internal scale.
    fn step_rho<R: Rng>(&mut self, rng: &mut R, scale: f64) -> Result<bool> {
        let g_new = self.g_rho + scale * rng.sample::<f64, _>(StandardNormal);
        let rho_new = from_internal(g_new);
        let logdet_new = SpatialFilter::new(self.w, rho_new)?.logdet();
        let v_new = self.response_at(rho_new, self.lam);
        let ssr_new = (&v_new - &self.u * &self.beta).norm_squared();

        let delta = (logdet_new + internal_log_prior(g_new, &self.priors.rho_prior)
            - 0.5 * self.tau * ssr_new)
            - (self.logdet_rho + internal_log_prior(self.g_rho, &self.priors.rho_prior)
                - 0.5 * self.tau * self.ssr);
        if rng.random::<f64>().ln() < delta {
            self.g_rho = g_new;
            self.rho = rho_new;
            self.logdet_rho = logdet_new;
            self.v = v_new;
            self.ssr = ssr_new;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Random-walk Metropolis step for lambda on the internal scale.
    fn step_lambda<R: Rng>(&mut self, rng: &mut R, scale: f64) -> Result<bool> {
        let g_new = self.g_lam + scale * rng.sample::<f64, _>(StandardNormal);
        let lam_new = from_internal(g_new);
        let logdet_new = SpatialFilter::new(self.w, lam_new)?.logdet();
        let u_new = self.design_at(lam_new);
        let v_new = self.response_at(self.rho, lam_new);
        let ssr_new = (&v_new - &u_new * &self.beta).norm_squared();

        let delta = (logdet_new + internal_log_prior(g_new, &self.priors.lambda_prior)
            - 0.5 * self.tau * ssr_new)
            - (self.logdet_lam + internal_log_prior(self.g_lam, &self.priors.lambda_prior)
                - 0.5 * self.tau * self.ssr);
        if rng.random::<f64>().ln() < delta {
            self.g_lam = g_new;
            self.lam = lam_new;
            self.logdet_lam = logdet_new;
            self.u = u_new;
            self.v = v_new;
            self.ssr = ssr_new;
            Ok(true)
        } else {
            Ok(false)
        }
    }
}
