//! Dense reference computations for the test suites.
//!
//! Everything here is written for clarity and independence, not speed: dense
//! nalgebra algebra, covariance-form Gaussian densities, and wide fixed-rule
//! quadrature. The production crate works in precision form with sparse
//! factorizations and sufficient statistics; these oracles deliberately take
//! the other route so that agreement between the two is meaningful.
//!
//! Nothing in this crate is used outside `#[cfg(test)]` / dev-dependencies.

use nalgebra::{DMatrix, DVector};

/// Precision prior for the brute-force evidence oracle.
#[derive(Clone, Copy, Debug)]
pub enum TauPriorRef {
    /// Gamma(shape, rate) prior on the noise precision.
    Gamma { shape: f64, rate: f64 },
    /// Noise precision known exactly.
    Fixed(f64),
}

/// Log evidence of the SAC conditional model by dense brute force.
///
/// The model, conditional on (rho, lambda):
///
/// ```text
/// y = (I - rho W)^-1 X beta + u,   u ~ N(0, (tau Sigma)^-1)
/// Sigma = (I - rho W)' (I - lambda W)' (I - lambda W) (I - rho W)
/// beta ~ N(0, I / beta_precision),   tau ~ prior
/// ```
///
/// Marginalizing beta analytically in *covariance* form gives
/// y | tau ~ N(0, Xt Xt' / beta_precision + Sigma^-1 / tau) with
/// Xt = (I - rho W)^-1 X, evaluated via dense Cholesky. The tau integral is a
/// 2000-node trapezoid rule on t = log tau over a window found by coarse scan,
/// wide enough that truncation is far below the comparison tolerances.
///
/// A Cholesky failure at an extreme-tau node (where the covariance is
/// numerically semidefinite but the integrand is ~e^-25 of the peak) treats
/// that node as zero; its true contribution is orders of magnitude below the
/// 1e-4 tolerance this oracle backs.
pub fn log_evidence_dense(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
    rho: f64,
    lambda: f64,
    beta_precision: f64,
    tau: TauPriorRef,
) -> f64 {
    let n = y.len();
    assert_eq!(x.nrows(), n);
    assert_eq!(w.nrows(), n);
    assert_eq!(w.ncols(), n);

    let id = DMatrix::<f64>::identity(n, n);
    let a_rho = &id - w * rho;
    let a_lam = &id - w * lambda;
    let xt = a_rho
        .clone()
        .lu()
        .solve(x)
        .expect("(I - rho W) singular in oracle");
    let c = &a_lam * &a_rho;
    let sigma = c.transpose() * &c;
    let sigma_inv = sigma
        .clone()
        .cholesky()
        .expect("Sigma not positive definite in oracle")
        .inverse();
    let xt_outer = &xt * xt.transpose() / beta_precision;

    let log_marginal = |tau_val: f64| -> f64 {
        let m = &xt_outer + &sigma_inv / tau_val;
        match m.clone().cholesky() {
            Some(chol) => {
                let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
                let alpha = chol.solve(y);
                -0.5 * (n as f64) * (2.0 * std::f64::consts::PI).ln()
                    - 0.5 * logdet
                    - 0.5 * y.dot(&alpha)
            }
            None => -1e300,
        }
    };

    match tau {
        TauPriorRef::Fixed(tau0) => log_marginal(tau0),
        TauPriorRef::Gamma { shape, rate } => {
            // Integrand on t = log tau, Jacobian e^t folded in.
            let g = |t: f64| {
                log_marginal(t.exp()) + shape * rate.ln() - libm::lgamma(shape) + shape * t
                    - rate * t.exp()
            };
            // Coarse scan for the mode, then zoom scans: the window below is
            // sized by a log drop from the peak, so the mode must be located
            // much better than the integrand's width (a concentrated prior
            // can make that width ~1e-3 in t).
            let mut t_best = 0.0;
            let mut g_best = f64::NEG_INFINITY;
            let mut t = -60.0;
            while t <= 60.0 {
                let v = g(t);
                if v > g_best {
                    g_best = v;
                    t_best = t;
                }
                t += 0.25;
            }
            let mut step = 0.25;
            for _ in 0..14 {
                let center = t_best;
                for k in -4..=4_i64 {
                    let tt = center + k as f64 * step / 4.0;
                    let v = g(tt);
                    if v > g_best {
                        g_best = v;
                        t_best = tt;
                    }
                }
                step /= 4.0;
            }
            // Walk out geometrically to a 60-drop (or a wall) on each side;
            // overshooting only wastes nodes.
            let mut lo = t_best;
            let mut out = 1e-5;
            while lo > -80.0 && g(lo) > g_best - 60.0 {
                lo -= out;
                out *= 2.0;
            }
            let mut hi = t_best;
            out = 1e-5;
            while hi < 80.0 && g(hi) > g_best - 60.0 {
                hi += out;
                out *= 2.0;
            }
            let nodes = 2000;
            let h = (hi - lo) / (nodes - 1) as f64;
            let mut terms = Vec::with_capacity(nodes);
            for k in 0..nodes {
                let wk = if k == 0 || k == nodes - 1 { 0.5 } else { 1.0 };
                terms.push(g(lo + k as f64 * h) + (wk * h).ln());
            }
            log_sum_exp(&terms)
        }
    }
}

/// Closed-form conjugate linear regression with known noise precision.
///
/// For y = X beta + e, e ~ N(0, I/tau0), beta ~ N(0, I/beta_precision):
/// returns (posterior mean, posterior covariance, log evidence), the latter in
/// covariance form N(y; 0, X X' / beta_precision + I/tau0).
pub fn conjugate_fixed_tau(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    tau0: f64,
    beta_precision: f64,
) -> (DVector<f64>, DMatrix<f64>, f64) {
    let n = y.len();
    let p = x.ncols();
    let q = x.transpose() * x * tau0 + DMatrix::<f64>::identity(p, p) * beta_precision;
    let cov = q.cholesky().expect("posterior precision not PD").inverse();
    let mean = &cov * (x.transpose() * y) * tau0;

    let marg = x * x.transpose() / beta_precision + DMatrix::<f64>::identity(n, n) / tau0;
    let chol = marg.cholesky().expect("marginal covariance not PD");
    let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let alpha = chol.solve(y);
    let log_ev =
        -0.5 * (n as f64) * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet - 0.5 * y.dot(&alpha);
    (mean, cov, log_ev)
}

/// log det of a symmetric positive-definite dense matrix via Cholesky.
pub fn logdet_spd_dense(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .cholesky()
        .expect("matrix not positive definite")
        .l()
        .diagonal()
        .iter()
        .map(|d| 2.0 * d.ln())
        .sum()
}

/// log |det M| of a general square dense matrix via LU.
pub fn logdet_dense(m: &DMatrix<f64>) -> f64 {
    m.clone().lu().determinant().abs().ln()
}

/// Trace of the inverse of a dense matrix, column by column.
pub fn trace_inverse_dense(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let lu = m.clone().lu();
    let mut tr = 0.0;
    for i in 0..n {
        let mut e = DVector::<f64>::zeros(n);
        e[i] = 1.0;
        let col = lu.solve(&e).expect("singular matrix in trace oracle");
        tr += col[i];
    }
    tr
}

/// Smallest real eigenvalue of a dense matrix (imaginary parts below `im_tol`
/// are treated as rounding noise on a real eigenvalue).
pub fn min_real_eigenvalue_dense(m: &DMatrix<f64>, im_tol: f64) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= im_tol)
        .map(|z| z.re)
        .fold(f64::INFINITY, f64::min)
}

/// Covariance of y implied by the SAC reduced form:
/// (I-rho W)^-1 (I-lambda W)^-1 (I-lambda W)^-T (I-rho W)^-T / tau.
pub fn sac_covariance_dense(w: &DMatrix<f64>, rho: f64, lambda: f64, tau: f64) -> DMatrix<f64> {
    let n = w.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let a_rho = &id - w * rho;
    let a_lam = &id - w * lambda;
    let inv_r = a_rho.lu().try_inverse().expect("singular rho filter");
    let inv_l = a_lam.lu().try_inverse().expect("singular lambda filter");
    let s = &inv_r * inv_l;
    &s * s.transpose() / tau
}

/// Plain unweighted Gaussian KDE evaluated on a caller-supplied grid.
pub fn kde_1d_reference(points: &[f64], bandwidth: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / ((points.len() as f64) * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| {
            let mut s = 0.0;
            for &p in points {
                let z = (g - p) / bandwidth;
                s += (-0.5 * z * z).exp();
            }
            s * norm
        })
        .collect()
}

/// Unweighted product-kernel 2D KDE on the outer grid `gx` x `gy`,
/// returned row-major with x varying over rows.
pub fn kde_2d_reference(
    xs: &[f64],
    ys: &[f64],
    bw: (f64, f64),
    gx: &[f64],
    gy: &[f64],
) -> Vec<Vec<f64>> {
    assert_eq!(xs.len(), ys.len());
    let norm = 1.0 / ((xs.len() as f64) * bw.0 * bw.1 * 2.0 * std::f64::consts::PI);
    gx.iter()
        .map(|&px| {
            gy.iter()
                .map(|&py| {
                    let mut s = 0.0;
                    for (&x, &y) in xs.iter().zip(ys) {
                        let zx = (px - x) / bw.0;
                        let zy = (py - y) / bw.1;
                        s += (-0.5 * (zx * zx + zy * zy)).exp();
                    }
                    s * norm
                })
                .collect()
        })
        .collect()
}

/// Numerically stable log(sum(exp(terms))).
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}
