//! Primal-dual interior-point method with a filter line search.
//!
//! Solves `min f(x)  s.t.  g(x) <= 0,  lower <= x <= upper` through slacks `g(x) + s = 0`,
//! `s >= 0` and log barriers on `s` and the variable bounds. Each Newton system is condensed
//! onto the primal variables,
//!
//! ```text
//! (W + J^T (Z_s / S) J + Z_l / (X - L) + Z_u / (U - X) + delta I) dx = rhs,
//! ```
//!
//! and factorized with a sparse Cholesky; `delta` grows until the factorization succeeds,
//! which is how non-convexity is handled. Every accepted Newton step counts as one iteration.

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::{Deserialize, Serialize};

use super::nlp::Evaluation;
use crate::error::{Error, Result};

/// A smooth problem `min f(x)  s.t.  g(x) <= 0,  lower <= x <= upper`.
pub trait ConstrainedProblem {
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];
    fn evaluate(&self, x: &[f64]) -> Evaluation;
    /// Hessian of `obj_factor * f + sum_i lambda_i g_i` as symmetric triplets, both
    /// triangles listed. Duplicates are summed.
    fn lagrangian_hessian(
        &self,
        x: &[f64],
        obj_factor: f64,
        lambda: &[f64],
    ) -> Vec<(usize, usize, f64)>;
    /// Elimination order for the factorization (`order[k]` is eliminated k-th).
    fn ordering(&self) -> Vec<usize> {
        (0..self.lower().len()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Cap on Newton iterations.
    pub max_iterations: usize,
    /// Scaled KKT error at which the solve is declared converged.
    pub kkt_tol: f64,
    /// Initial barrier parameter.
    pub mu_init: f64,
    /// Relative distance by which the start is pushed inside the bounds and slack floor.
    pub bound_push: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 3000,
            kkt_tol: 1e-6,
            mu_init: 1e-5,
            bound_push: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub mu: f64,
    /// Unscaled objective.
    pub objective: f64,
    /// Scaled barrier function of the current subproblem.
    pub barrier: f64,
    /// `sum |g(x) + s|` (scaled).
    pub infeasibility: f64,
    /// Scaled KKT error of the original problem before the step.
    pub kkt_residual: f64,
    /// Infinity norm of the accepted primal step (scaled variables).
    pub step_norm: f64,
    pub alpha: f64,
    pub regularization: f64,
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub x: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub trace: Vec<TraceEntry>,
}

const KAPPA_EPS: f64 = 10.0;
const KAPPA_MU: f64 = 0.2;
const THETA_MU: f64 = 1.5;
const TAU_MIN: f64 = 0.99;
const BOUND_RELAX: f64 = 1e-8;
const KAPPA_SIGMA: f64 = 1e10;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const ETA_PHI: f64 = 1e-8;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const SCALE_MAX: f64 = 100.0;
const MAX_BACKTRACKS: usize = 40;
const MAX_FILTER_RESETS: usize = 5;

/// Problem in scaled variables `z = x / scale` with the objective multiplied by `obj_scale`.
struct Scaled<'p, P: ConstrainedProblem> {
    problem: &'p P,
    scale: Vec<f64>,
    obj_scale: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Scaled function values at a primal point.
struct Values {
    f: f64,
    grad: Vec<f64>,
    cons: Vec<f64>,
    row_width: usize,
    jac_cols: Vec<usize>,
    jac_vals: Vec<f64>,
}

impl Values {
    fn jt_mul(&self, m: &[f64], out: &mut [f64]) {
        for (i, &mi) in m.iter().enumerate() {
            let base = i * self.row_width;
            for k in base..base + self.row_width {
                out[self.jac_cols[k]] += mi * self.jac_vals[k];
            }
        }
    }

    fn j_mul(&self, v: &[f64]) -> Vec<f64> {
        (0..self.cons.len())
            .map(|i| {
                let base = i * self.row_width;
                (base..base + self.row_width)
                    .map(|k| self.jac_vals[k] * v[self.jac_cols[k]])
                    .sum()
            })
            .collect()
    }

    fn finite(&self) -> bool {
        self.f.is_finite()
            && self.grad.iter().all(|v| v.is_finite())
            && self.cons.iter().all(|v| v.is_finite())
            && self.jac_vals.iter().all(|v| v.is_finite())
    }
}

impl<P: ConstrainedProblem> Scaled<'_, P> {
    fn unscale(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.scale).map(|(a, s)| a * s).collect()
    }

    fn values(&self, z: &[f64]) -> Values {
        let e = self.problem.evaluate(&self.unscale(z));
        let grad = e
            .gradient
            .iter()
            .zip(&self.scale)
            .map(|(g, s)| g * s * self.obj_scale)
            .collect();
        let jac_vals = e
            .jac_cols
            .iter()
            .zip(&e.jac_vals)
            .map(|(&c, v)| v * self.scale[c])
            .collect();
        Values {
            f: e.objective * self.obj_scale,
            grad,
            cons: e.constraints,
            row_width: e.row_width,
            jac_cols: e.jac_cols,
            jac_vals,
        }
    }
}

/// Primal-dual iterate.
#[derive(Clone)]
struct Iterate {
    z: Vec<f64>,
    s: Vec<f64>,
    lam: Vec<f64>,
    zs: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
}

struct Errors {
    dual: f64,
    primal: f64,
    compl: f64,
    s_d: f64,
    s_c: f64,
}

impl Errors {
    fn total(&self) -> f64 {
        (self.dual / self.s_d).max(self.primal).max(self.compl / self.s_c)
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn errors(sc: &Scaled<'_, impl ConstrainedProblem>, it: &Iterate, v: &Values, mu: f64) -> Errors {
    let n = it.z.len();
    let m = it.s.len();
    let mut rx = v.grad.clone();
    v.jt_mul(&it.lam, &mut rx);
    for j in 0..n {
        rx[j] += it.zu[j] - it.zl[j];
    }
    let rs = (0..m).map(|i| (it.lam[i] - it.zs[i]).abs()).fold(0.0, f64::max);
    let dual = norm_inf(&rx).max(rs);
    let primal = (0..m).map(|i| (v.cons[i] + it.s[i]).abs()).fold(0.0, f64::max);
    let mut compl = 0.0f64;
    for i in 0..m {
        compl = compl.max((it.s[i] * it.zs[i] - mu).abs());
    }
    for j in 0..n {
        compl = compl.max(((it.z[j] - sc.lower[j]) * it.zl[j] - mu).abs());
        compl = compl.max(((sc.upper[j] - it.z[j]) * it.zu[j] - mu).abs());
    }
    let sum = |a: &[f64]| a.iter().map(|x| x.abs()).sum::<f64>();
    let bound_mult = sum(&it.zs) + sum(&it.zl) + sum(&it.zu);
    let s_d = (SCALE_MAX.max((sum(&it.lam) + bound_mult) / (2 * m + 2 * n) as f64)) / SCALE_MAX;
    let s_c = (SCALE_MAX.max(bound_mult / (m + 2 * n) as f64)) / SCALE_MAX;
    Errors {
        dual,
        primal,
        compl,
        s_d,
        s_c,
    }
}

fn barrier(sc: &Scaled<'_, impl ConstrainedProblem>, z: &[f64], s: &[f64], f: f64, mu: f64) -> f64 {
    let mut logs = 0.0;
    for &si in s {
        logs += si.ln();
    }
    for (j, &zj) in z.iter().enumerate() {
        logs += (zj - sc.lower[j]).ln() + (sc.upper[j] - zj).ln();
    }
    f - mu * logs
}

fn infeasibility(cons: &[f64], s: &[f64]) -> f64 {
    cons.iter().zip(s).map(|(c, s)| (c + s).abs()).sum()
}

/// Largest step in `(0, 1]` keeping `x + a dx >= (1 - tau) x` for positive `x`.
fn max_step(x: &[f64], dx: &[f64], tau: f64) -> f64 {
    let mut a = 1.0f64;
    for (&xi, &di) in x.iter().zip(dx) {
        if di < 0.0 {
            a = a.min(-tau * xi / di);
        }
    }
    a
}

pub fn solve_ipm<P: ConstrainedProblem>(
    problem: &P,
    x0: &[f64],
    scale: &[f64],
    config: &SolverConfig,
) -> Result<IpmResult> {
    let n = x0.len();
    if scale.len() != n || problem.lower().len() != n || problem.upper().len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} variables, {} scales, {} bounds",
            n,
            scale.len(),
            problem.lower().len()
        )));
    }
    let relax = |v: f64| BOUND_RELAX * v.abs().max(1.0);
    let lower: Vec<f64> = (0..n)
        .map(|j| problem.lower()[j] / scale[j])
        .map(|l| l - relax(l))
        .collect();
    let upper: Vec<f64> = (0..n)
        .map(|j| problem.upper()[j] / scale[j])
        .map(|u| u + relax(u))
        .collect();
    let mut sc = Scaled {
        problem,
        scale: scale.to_vec(),
        obj_scale: 1.0,
        lower,
        upper,
    };

    // push the start strictly inside the bounds
    let mut z: Vec<f64> = x0.iter().zip(scale).map(|(x, s)| x / s).collect();
    for j in 0..n {
        let (lo, hi) = (sc.lower[j], sc.upper[j]);
        let k = config.bound_push;
        let push = (k * lo.abs().max(1.0)).min(0.5 * k * (hi - lo));
        let push_hi = (k * hi.abs().max(1.0)).min(0.5 * k * (hi - lo));
        z[j] = z[j].clamp(lo + push, hi - push_hi);
    }
    let first = sc.values(&z);
    if !first.finite() {
        return Err(Error::SolverNan {
            iteration: 0,
            diagnostic: "non-finite objective, gradient or constraints at the start".into(),
        });
    }
    sc.obj_scale = (SCALE_MAX / norm_inf(&first.grad).max(1e-300)).min(1.0);
    let mut vals = sc.values(&z);
    let m = vals.cons.len();

    let mut mu = config.mu_init;
    let s: Vec<f64> = vals
        .cons
        .iter()
        .map(|&c| (-c).max(config.bound_push * c.abs().max(1.0)))
        .collect();
    let zs: Vec<f64> = s.iter().map(|&si| mu / si).collect();
    let mut it = Iterate {
        zl: (0..n).map(|j| mu / (z[j] - sc.lower[j])).collect(),
        zu: (0..n).map(|j| mu / (sc.upper[j] - z[j])).collect(),
        lam: zs.clone(),
        zs,
        s,
        z,
    };

    let order = problem.ordering();
    let mut position = vec![0; n];
    for (k, &j) in order.iter().enumerate() {
        position[j] = k;
    }

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut delta_last = 0.0f64;
    let mut filter: Vec<(f64, f64)> = Vec::new();
    let mut filter_resets = 0;
    let theta0 = infeasibility(&vals.cons, &it.s);
    let theta_max = 1e4 * theta0.max(1.0);
    let theta_min = 1e-4 * theta0.max(1.0);
    let mut kkt = errors(&sc, &it, &vals, 0.0).total();

    loop {
        if kkt <= config.kkt_tol {
            converged = true;
            break;
        }
        if iterations >= config.max_iterations {
            break;
        }
        // leave barrier subproblems that are already solved well enough
        let mut mu_changed = false;
        while mu > config.kkt_tol / 10.0
            && errors(&sc, &it, &vals, mu).total() <= KAPPA_EPS * mu
        {
            mu = (config.kkt_tol / 10.0).max((KAPPA_MU * mu).min(mu.powf(THETA_MU)));
            mu_changed = true;
        }
        if mu_changed {
            filter.clear();
        }
        let tau = TAU_MIN.max(1.0 - mu);

        let hess = problem.lagrangian_hessian(&sc.unscale(&it.z), sc.obj_scale, &it.lam);
        let mut rhs = vals.grad.iter().map(|g| -g).collect::<Vec<f64>>();
        let coef: Vec<f64> = (0..m)
            .map(|i| mu / it.s[i] + it.zs[i] / it.s[i] * (vals.cons[i] + it.s[i]))
            .map(|c| -c)
            .collect();
        vals.jt_mul(&coef, &mut rhs);
        let mut diag = vec![0.0; n];
        for j in 0..n {
            let dl = it.z[j] - sc.lower[j];
            let du = sc.upper[j] - it.z[j];
            rhs[j] += mu / dl - mu / du;
            diag[j] = it.zl[j] / dl + it.zu[j] / du;
        }

        let mut triplets: Vec<(usize, usize, f64)> = hess
            .into_iter()
            .map(|(r, c, v)| (r, c, v * sc.scale[r] * sc.scale[c]))
            .collect();
        for i in 0..m {
            let sigma = it.zs[i] / it.s[i];
            let base = i * vals.row_width;
            for a in base..base + vals.row_width {
                for b in base..base + vals.row_width {
                    let v = sigma * vals.jac_vals[a] * vals.jac_vals[b];
                    if v != 0.0 {
                        triplets.push((vals.jac_cols[a], vals.jac_cols[b], v));
                    }
                }
            }
        }
        for (j, &d) in diag.iter().enumerate() {
            triplets.push((j, j, d));
        }

        let mut delta = 0.0;
        let dx = loop {
            match factor_and_solve(&triplets, &position, &order, &rhs, delta) {
                Some(dx) => break dx,
                None => {
                    delta = if delta == 0.0 {
                        if delta_last == 0.0 {
                            1e-4
                        } else {
                            (delta_last / 3.0).max(1e-20)
                        }
                    } else if delta_last == 0.0 {
                        delta * 100.0
                    } else {
                        delta * 8.0
                    };
                    if delta > 1e40 {
                        return Err(Error::SolverNan {
                            iteration: iterations,
                            diagnostic: "Newton matrix could not be regularized".into(),
                        });
                    }
                }
            }
        };
        if delta > 0.0 {
            delta_last = delta;
        }

        let jdx = vals.j_mul(&dx);
        let ds: Vec<f64> = (0..m).map(|i| -(vals.cons[i] + it.s[i]) - jdx[i]).collect();
        let dzs: Vec<f64> = (0..m)
            .map(|i| mu / it.s[i] - it.zs[i] - it.zs[i] / it.s[i] * ds[i])
            .collect();
        let dlam: Vec<f64> = (0..m).map(|i| dzs[i] - (it.lam[i] - it.zs[i])).collect();
        let mut dzl = vec![0.0; n];
        let mut dzu = vec![0.0; n];
        let mut gap_l = vec![0.0; n];
        let mut gap_u = vec![0.0; n];
        for j in 0..n {
            let dl = it.z[j] - sc.lower[j];
            let du = sc.upper[j] - it.z[j];
            gap_l[j] = dl;
            gap_u[j] = du;
            dzl[j] = mu / dl - it.zl[j] - it.zl[j] / dl * dx[j];
            dzu[j] = mu / du - it.zu[j] + it.zu[j] / du * dx[j];
        }
        let neg_dx: Vec<f64> = dx.iter().map(|v| -v).collect();
        let alpha_max = max_step(&it.s, &ds, tau)
            .min(max_step(&gap_l, &dx, tau))
            .min(max_step(&gap_u, &neg_dx, tau));
        let alpha_dual = max_step(&it.zs, &dzs, tau)
            .min(max_step(&it.zl, &dzl, tau))
            .min(max_step(&it.zu, &dzu, tau));

        // filter line search on (infeasibility, barrier)
        let theta = infeasibility(&vals.cons, &it.s);
        let phi = barrier(&sc, &it.z, &it.s, vals.f, mu);
        let mut dphi: f64 = vals.grad.iter().zip(&dx).map(|(g, d)| g * d).sum();
        for i in 0..m {
            dphi -= mu * ds[i] / it.s[i];
        }
        for j in 0..n {
            dphi += -mu * dx[j] / gap_l[j] + mu * dx[j] / gap_u[j];
        }
        let mut alpha = alpha_max;
        let mut accepted = None;
        // a stale filter can block every trial point; it may be dropped a few times per solve
        // before giving up, in place of a feasibility restoration phase
        for tries in 0..MAX_BACKTRACKS * 2 {
            if tries == MAX_BACKTRACKS {
                if filter.is_empty() || filter_resets >= MAX_FILTER_RESETS {
                    break;
                }
                log::debug!("filter reset at iteration {iterations}, mu {mu:e}");
                filter.clear();
                filter_resets += 1;
                alpha = alpha_max;
            }
            let zt: Vec<f64> = (0..n).map(|j| it.z[j] + alpha * dx[j]).collect();
            let st: Vec<f64> = (0..m).map(|i| it.s[i] + alpha * ds[i]).collect();
            let vt = sc.values(&zt);
            if vt.finite() {
                let theta_t = infeasibility(&vt.cons, &st);
                let phi_t = barrier(&sc, &zt, &st, vt.f, mu);
                let in_filter = filter.iter().any(|&(tf, pf)| theta_t >= tf && phi_t >= pf);
                if theta_t <= theta_max && !in_filter && phi_t.is_finite() {
                    let switching = dphi < 0.0
                        && alpha * (-dphi).powf(S_PHI) > theta.powf(S_THETA)
                        && theta <= theta_min;
                    if switching {
                        if phi_t <= phi + ETA_PHI * alpha * dphi {
                            accepted = Some((zt, st, vt, false));
                            break;
                        }
                    } else if theta_t <= (1.0 - GAMMA_THETA) * theta
                        || phi_t <= phi - GAMMA_PHI * theta
                    {
                        accepted = Some((zt, st, vt, true));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((zt, st, vt, grow_filter)) = accepted else {
            log::debug!("line search failed at iteration {iterations}, mu {mu:e}");
            break;
        };
        if grow_filter {
            filter.push(((1.0 - GAMMA_THETA) * theta, phi - GAMMA_PHI * theta));
        }

        let step_norm = alpha * norm_inf(&dx);
        it.z = zt;
        it.s = st;
        for i in 0..m {
            it.lam[i] += alpha * dlam[i];
            it.zs[i] += alpha_dual * dzs[i];
        }
        for j in 0..n {
            it.zl[j] += alpha_dual * dzl[j];
            it.zu[j] += alpha_dual * dzu[j];
        }
        // keep bound multipliers near the central path
        for i in 0..m {
            let c = mu / it.s[i];
            it.zs[i] = it.zs[i].clamp(c / KAPPA_SIGMA, c * KAPPA_SIGMA);
        }
        for j in 0..n {
            let cl = mu / (it.z[j] - sc.lower[j]);
            let cu = mu / (sc.upper[j] - it.z[j]);
            it.zl[j] = it.zl[j].clamp(cl / KAPPA_SIGMA, cl * KAPPA_SIGMA);
            it.zu[j] = it.zu[j].clamp(cu / KAPPA_SIGMA, cu * KAPPA_SIGMA);
        }
        vals = vt;
        iterations += 1;
        trace.push(TraceEntry {
            iteration: iterations,
            mu,
            objective: vals.f / sc.obj_scale,
            barrier: barrier(&sc, &it.z, &it.s, vals.f, mu),
            infeasibility: infeasibility(&vals.cons, &it.s),
            kkt_residual: kkt,
            step_norm,
            alpha,
            regularization: delta,
        });
        if it.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverNan {
                iteration: iterations,
                diagnostic: format!("non-finite iterate, mu {mu:e}, alpha {alpha:e}"),
            });
        }
        kkt = errors(&sc, &it, &vals, 0.0).total();
    }

    let x = sc.unscale(&it.z);
    let e = problem.evaluate(&x);
    let bound_violation = (0..n)
        .map(|j| (problem.lower()[j] - x[j]).max(x[j] - problem.upper()[j]).max(0.0))
        .fold(0.0, f64::max);
    let max_violation = e.constraints.iter().copied().fold(bound_violation, f64::max);
    Ok(IpmResult {
        multipliers: it.lam.iter().map(|l| l / sc.obj_scale).collect(),
        objective: e.objective,
        x,
        iterations,
        converged,
        kkt_residual: kkt,
        max_violation,
        trace,
    })
}

/// Solves `(K + delta I) dx = rhs` in the permuted order; `None` if `K + delta I` is not
/// numerically positive definite.
fn factor_and_solve(
    triplets: &[(usize, usize, f64)],
    position: &[usize],
    order: &[usize],
    rhs: &[f64],
    delta: f64,
) -> Option<Vec<f64>> {
    let n = rhs.len();
    let mut coo = CooMatrix::new(n, n);
    for &(r, c, v) in triplets {
        coo.push(position[r], position[c], v);
    }
    if delta > 0.0 {
        for k in 0..n {
            coo.push(k, k, delta);
        }
    }
    let k = CscMatrix::from(&coo);
    let chol = CscCholesky::factor(&k).ok()?;
    let b = DMatrix::from_iterator(n, 1, order.iter().map(|&j| rhs[j]));
    let y = chol.solve(&b);
    let mut dx = vec![0.0; n];
    for (k, &j) in order.iter().enumerate() {
        dx[j] = y[(k, 0)];
    }
    dx.iter().all(|v| v.is_finite()).then_some(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min (x0 - 2)^2 + (x1 - 2)^2  s.t.  x0^2 + x1^2 <= 2,  0 <= x <= 5
    struct Disk;

    impl ConstrainedProblem for Disk {
        fn lower(&self) -> &[f64] {
            &[0.0, 0.0]
        }
        fn upper(&self) -> &[f64] {
            &[5.0, 5.0]
        }
        fn evaluate(&self, x: &[f64]) -> Evaluation {
            Evaluation {
                objective: (x[0] - 2.0).powi(2) + (x[1] - 2.0).powi(2),
                gradient: vec![2.0 * (x[0] - 2.0), 2.0 * (x[1] - 2.0)],
                constraints: vec![x[0] * x[0] + x[1] * x[1] - 2.0],
                row_width: 2,
                jac_cols: vec![0, 1],
                jac_vals: vec![2.0 * x[0], 2.0 * x[1]],
            }
        }
        fn lagrangian_hessian(
            &self,
            _x: &[f64],
            obj_factor: f64,
            lambda: &[f64],
        ) -> Vec<(usize, usize, f64)> {
            let d = 2.0 * obj_factor + 2.0 * lambda[0];
            vec![(0, 0, d), (1, 1, d)]
        }
    }

    /// Rosenbrock inside a box, with a redundant constraint: non-convex, unconstrained
    /// optimum at (1, 1).
    struct Banana;

    impl ConstrainedProblem for Banana {
        fn lower(&self) -> &[f64] {
            &[-2.0, -1.0]
        }
        fn upper(&self) -> &[f64] {
            &[2.0, 3.0]
        }
        fn evaluate(&self, x: &[f64]) -> Evaluation {
            let (a, b) = (x[0], x[1]);
            Evaluation {
                objective: (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
                gradient: vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ],
                constraints: vec![a + b - 10.0],
                row_width: 2,
                jac_cols: vec![0, 1],
                jac_vals: vec![1.0, 1.0],
            }
        }
        fn lagrangian_hessian(
            &self,
            x: &[f64],
            obj_factor: f64,
            _lambda: &[f64],
        ) -> Vec<(usize, usize, f64)> {
            let (a, b) = (x[0], x[1]);
            vec![
                (0, 0, obj_factor * (2.0 - 400.0 * (b - a * a) + 800.0 * a * a)),
                (0, 1, obj_factor * (-400.0 * a)),
                (1, 0, obj_factor * (-400.0 * a)),
                (1, 1, obj_factor * 200.0),
            ]
        }
    }

    #[test]
    fn solves_disk_problem() {
        let r = solve_ipm(&Disk, &[0.1, 0.3], &[1.0, 1.0], &SolverConfig::default()).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
        // stationarity: 2 (x - 2) + 2 lambda x = 0 at x = 1
        assert!((r.multipliers[0] - 1.0).abs() < 1e-4, "{:?}", r.multipliers);
        assert!(r.iterations >= 1);
    }

    #[test]
    fn solves_nonconvex_problem() {
        let r = solve_ipm(&Banana, &[-1.2, 1.0], &[1.0, 1.0], &SolverConfig::default()).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn accepted_steps_pass_the_filter() {
        // every accepted step lowers the infeasibility or the barrier function of its
        // subproblem
        let r = solve_ipm(&Disk, &[4.0, 0.5], &[1.0, 1.0], &SolverConfig::default()).unwrap();
        assert!(r.converged);
        for pair in r.trace.windows(2) {
            if pair[0].mu == pair[1].mu {
                assert!(
                    pair[1].infeasibility < pair[0].infeasibility
                        || pair[1].barrier <= pair[0].barrier + 1e-12,
                    "{pair:?}"
                );
            }
        }
    }
}
