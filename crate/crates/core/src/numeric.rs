//! Small numerical building blocks: log-sum-exp, Gauss-Legendre rules,
//! golden-section search, trapezoid integration.
//!
//! All evidence bookkeeping in this crate happens in log space, and every
//! normalization goes through [`log_sum_exp`] so a single overflow-safe
//! pattern is shared by the quadrature weights, the BMA weights, and the
//! mixture marginals.

/// log(sum(exp(x_i))) with the usual max subtraction.
///
/// Returns -inf for an empty slice or one containing only -inf.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        // All -inf (or empty): the sum is zero. +inf propagates as-is.
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Exponentiate log weights into a normalized simplex vector.
///
/// The subtraction of log_sum_exp guarantees the largest term exponentiates
/// to at most 1; the final division mops up first-order rounding so the
/// result sums to 1 at working precision.
pub fn normalized_exp(log_terms: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(log_terms);
    let mut w: Vec<f64> = log_terms.iter().map(|t| (t - z).exp()).collect();
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        for wi in &mut w {
            *wi /= s;
        }
    }
    w
}

/// Nodes and weights of the k-point Gauss-Legendre rule on [-1, 1].
///
/// Newton iteration on the Legendre polynomial from the Chebyshev-based
/// initial guess; converges to machine precision in a handful of steps.
/// Nodes come out in increasing order.
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(k >= 1, "quadrature rule needs at least one node");
    let mut nodes = vec![0.0; k];
    let mut weights = vec![0.0; k];
    let kf = k as f64;
    for i in 0..k.div_ceil(2) {
        // Initial guess: Chebyshev-like angle for the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (kf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_k(x) and P'_k(x) by the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 2..=k {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = kf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Roots are symmetric about zero; the guess above walks down from +1.
        nodes[k - 1 - i] = x;
        nodes[i] = -x;
        weights[i] = w;
        weights[k - 1 - i] = w;
    }
    if k % 2 == 1 {
        nodes[k / 2] = 0.0;
    }
    (nodes, weights)
}

/// Maximize a unimodal function on [lo, hi] by golden-section search.
///
/// Returns (argmax, max). Tolerance is on the bracket width.
pub fn golden_section_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, xtol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > xtol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Trapezoid integral of tabulated values over (not necessarily uniform)
/// increasing abscissae.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (y[0] + y[1]) * (x[1] - x[0]))
        .sum()
}

/// Find x in [lo, hi] with f(x) = target to within xtol, given that f is
/// monotone on the bracket and f(lo), f(hi) straddle the target.
pub fn bisect_to(f: impl Fn(f64) -> f64, lo: f64, hi: f64, target: f64, xtol: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let rising = f(b) > f(a);
    for _ in 0..200 {
        if (b - a).abs() <= xtol {
            break;
        }
        let m = 0.5 * (a + b);
        if (f(m) > target) == rising {
            b = m;
        } else {
            a = m;
        }
    }
    0.5 * (a + b)
}
