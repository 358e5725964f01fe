//! Derivative-free maximization for the posterior mode search.
//!
//! The objective maximized by the grid engine is the log conditional evidence
//! plus the internal-scale log priors, a smooth two-dimensional surface whose
//! gradient is not available in closed form. A Nelder-Mead simplex with a
//! restart pass is entirely adequate here: the surface is unimodal in
//! practice, the dimension is fixed at two, and each evaluation costs a full
//! quadrature pass, so the budget matters more than the convergence order.
//!
//! The implementation is the standard simplex recipe (reflection 1, expansion
//! 2, contraction 1/2, shrink 1/2) with one twist: after the value spread of
//! the simplex falls below the tolerance, the search restarts from the best
//! vertex with a tenth of the original edge length. Only when a restart fails
//! to improve the objective by more than the tolerance is the result declared
//! converged. This guards against the classic simplex failure mode of
//! collapsing onto a line before reaching the optimum.
//!
//! Objective values that come back NaN are treated as negatively infinite,
//! so the simplex simply walks away from regions where the model cannot be
//! evaluated.

/// Result of a simplex maximization.
#[derive(Clone, Debug)]
pub(crate) struct Optimum {
    /// Argument of the best objective value found.
    pub x: Vec<f64>,
    /// Best objective value found.
    pub value: f64,
    /// Total objective evaluations spent.
    pub evals: usize,
    /// Whether the value spread fell below the tolerance and a restart
    /// confirmed the optimum before the budget ran out.
    pub converged: bool,
}

/// Maximizes `f` from `x0` by Nelder-Mead with restarts.
///
/// `scale` is the initial simplex edge length, `max_evals` the total budget
/// across all passes, and `ftol` the convergence tolerance on the spread of
/// objective values over the simplex.
pub(crate) fn maximize<F>(mut f: F, x0: &[f64], scale: f64, max_evals: usize, ftol: f64) -> Optimum
where
    F: FnMut(&[f64]) -> f64,
{
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };

    let mut best_x = x0.to_vec();
    let mut best_v = eval(&best_x, &mut evals);
    let mut edge = scale;
    let mut converged = false;

    while evals < max_evals {
        let (x, v, did_converge) =
            simplex_pass(&mut eval, &best_x, edge, max_evals, &mut evals, ftol);
        let improved = v > best_v + ftol;
        if v > best_v {
            best_x = x;
            best_v = v;
        }
        if did_converge && !improved {
            converged = true;
            break;
        }
        if !did_converge {
            // Budget ran out mid-pass.
            break;
        }
        edge *= 0.1;
    }

    Optimum {
        x: best_x,
        value: best_v,
        evals,
        converged,
    }
}

/// One Nelder-Mead pass. Returns the best vertex, its value, and whether the
/// value spread reached `ftol` within the budget.
fn simplex_pass<E>(
    eval: &mut E,
    x0: &[f64],
    edge: f64,
    max_evals: usize,
    evals: &mut usize,
    ftol: f64,
) -> (Vec<f64>, f64, bool)
where
    E: FnMut(&[f64], &mut usize) -> f64,
{
    let d = x0.len();
    let mut verts: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    verts.push(x0.to_vec());
    for i in 0..d {
        let mut v = x0.to_vec();
        v[i] += edge;
        verts.push(v);
    }
    let mut vals: Vec<f64> = verts.iter().map(|v| eval(v, evals)).collect();

    loop {
        // Sort vertices by decreasing value: verts[0] is the best.
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
        let verts_s: Vec<Vec<f64>> = order.iter().map(|&i| verts[i].clone()).collect();
        let vals_s: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
        verts = verts_s;
        vals = vals_s;

        let spread = vals[0] - vals[d];
        if spread.is_finite() && spread.abs() < ftol {
            return (verts[0].clone(), vals[0], true);
        }
        if *evals >= max_evals {
            return (verts[0].clone(), vals[0], false);
        }

        // Centroid of all but the worst vertex.
        let mut cen = vec![0.0; d];
        for v in verts.iter().take(d) {
            for (c, &vi) in cen.iter_mut().zip(v) {
                *c += vi / d as f64;
            }
        }
        let worst = verts[d].clone();
        let blend = |a: f64| -> Vec<f64> {
            cen.iter()
                .zip(&worst)
                .map(|(&c, &w)| c + a * (c - w))
                .collect()
        };

        let xr = blend(1.0);
        let vr = eval(&xr, evals);
        if vr > vals[0] {
            // Try expanding past the reflection.
            let xe = blend(2.0);
            let ve = eval(&xe, evals);
            if ve > vr {
                verts[d] = xe;
                vals[d] = ve;
            } else {
                verts[d] = xr;
                vals[d] = vr;
            }
        } else if vr > vals[d - 1] {
            verts[d] = xr;
            vals[d] = vr;
        } else {
            // Contract toward the centroid, inside or outside.
            let xc = if vr > vals[d] {
                blend(0.5)
            } else {
                blend(-0.5)
            };
            let vc = eval(&xc, evals);
            if vc > vals[d].max(vr) {
                verts[d] = xc;
                vals[d] = vc;
            } else {
                // Shrink everything toward the best vertex.
                for i in 1..=d {
                    let shrunk: Vec<f64> = verts[0]
                        .iter()
                        .zip(&verts[i])
                        .map(|(&b, &v)| b + 0.5 * (v - b))
                        .collect();
                    vals[i] = eval(&shrunk, evals);
                    verts[i] = shrunk;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_bowl_is_maximized_to_tolerance() {
        let f = |x: &[f64]| -((x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2));
        let opt = maximize(f, &[0.0, 0.0], 0.5, 400, 1e-10);
        assert!(opt.converged);
        assert_abs_diff_eq!(opt.x[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(opt.x[1], -2.0, epsilon = 1e-4);
        assert!(opt.value > -1e-8);
    }

    #[test]
    fn banana_valley_is_followed_within_budget() {
        // Rosenbrock flipped for maximization; the restart pass is what gets
        // the simplex out of the valley floor.
        let f = |x: &[f64]| -(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2));
        let opt = maximize(f, &[-1.2, 1.0], 0.5, 2000, 1e-12);
        assert!(opt.value > -1e-6, "value {}", opt.value);
        assert_abs_diff_eq!(opt.x[0], 1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(opt.x[1], 1.0, epsilon = 1e-3);
    }

    #[test]
    fn budget_exhaustion_reports_nonconvergence() {
        let f = |x: &[f64]| -(x[0].powi(2) + x[1].powi(2));
        let opt = maximize(f, &[50.0, -80.0], 0.1, 12, 1e-12);
        assert!(!opt.converged);
        // The budget is checked once per simplex iteration, so a few evals
        // of overshoot within the final iteration are expected.
        assert!(opt.evals <= 16);
    }

    #[test]
    fn nan_regions_are_avoided() {
        // Objective undefined outside the unit disc; the maximum at the
        // origin must still be found from a valid start.
        let f = |x: &[f64]| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            if r2 > 1.0 {
                f64::NAN
            } else {
                -r2
            }
        };
        let opt = maximize(f, &[0.5, 0.0], 0.3, 400, 1e-10);
        assert!(opt.converged);
        assert_abs_diff_eq!(opt.x[0], 0.0, epsilon = 1e-4);
        assert_abs_diff_eq!(opt.x[1], 0.0, epsilon = 1e-4);
    }
}
