//! Sparse box-constrained convex QP: `min 1/2 x'Hx + g'x  s.t.  lower <= x <= upper`.
//!
//! Solved by a projected Newton method: the Newton system is restricted to the variables
//! that are not held at a bound, and the step is projected back onto the box with an
//! Armijo search along the projection arc.

use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix, CsrMatrix};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: CsrMatrix<f64>,
    pub g: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Infinity norm of `x - P(x - grad)`.
    pub residual: f64,
}

impl QpProblem {
    pub fn new(h: CsrMatrix<f64>, g: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = g.len();
        if h.nrows() != n || h.ncols() != n || lower.len() != n || upper.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "QP with {}x{} H, {} g, {} lower, {} upper",
                h.nrows(),
                h.ncols(),
                n,
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| lower[i] > upper[i]) {
            return Err(Error::InfeasibleBounds {
                index: i,
                lower: lower[i],
                upper: upper[i],
            });
        }
        let transpose = h.transpose();
        for (a, b) in h.triplet_iter().zip(transpose.triplet_iter()) {
            if a.0 != b.0 || a.1 != b.1 || (a.2 - b.2).abs() > 1e-10 {
                return Err(Error::InvalidInput("QP Hessian is not symmetric".into()));
            }
        }
        Ok(Self { h, g, lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let hx = self.mul(x);
        hx.iter().zip(x).map(|(a, b)| 0.5 * a * b).sum::<f64>()
            + self.g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut hx = self.mul(x);
        for (v, g) in hx.iter_mut().zip(&self.g) {
            *v += g;
        }
        hx
    }

    fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (row, lane) in self.h.row_iter().enumerate() {
            out[row] = lane
                .col_indices()
                .iter()
                .zip(lane.values())
                .map(|(&c, v)| v * x[c])
                .sum();
        }
        out
    }

    fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// `||x - P(x - grad)||_inf`.
    pub fn kkt_residual(&self, x: &[f64]) -> f64 {
        let grad = self.gradient(x);
        x.iter()
            .zip(&grad)
            .zip(self.lower.iter().zip(&self.upper))
            .map(|((&xi, &gi), (&lo, &hi))| (xi - (xi - gi).clamp(lo, hi)).abs())
            .fold(0.0, f64::max)
    }

    /// Principal submatrix over `free` (sorted indices), plus `shift` on the diagonal.
    fn reduced_hessian(&self, free: &[usize], shift: f64) -> CscMatrix<f64> {
        let n = self.dim();
        let mut map = vec![usize::MAX; n];
        for (k, &i) in free.iter().enumerate() {
            map[i] = k;
        }
        let m = free.len();
        let mut coo = CooMatrix::new(m, m);
        for &i in free {
            let row = self.h.row(i);
            let mut diag_seen = false;
            for (&c, &v) in row.col_indices().iter().zip(row.values()) {
                if map[c] != usize::MAX {
                    let extra = if c == i {
                        diag_seen = true;
                        shift
                    } else {
                        0.0
                    };
                    coo.push(map[i], map[c], v + extra);
                }
            }
            if !diag_seen && shift > 0.0 {
                coo.push(map[i], map[i], shift);
            }
        }
        CscMatrix::from(&coo)
    }
}

/// Solves the QP to `||x - P(x - grad)||_inf <= tol`.
pub fn solve_qp(problem: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution> {
    solve_qp_from(problem, None, tol, max_iter)
}

pub fn solve_qp_from(
    problem: &QpProblem,
    start: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<QpSolution> {
    let n = problem.dim();
    let mut x = match start {
        Some(s) if s.len() == n => s.to_vec(),
        _ => vec![0.0; n],
    };
    problem.project(&mut x);
    let mut used = 0;
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            let row = problem.h.row(i);
            row.col_indices()
                .iter()
                .zip(row.values())
                .find(|(&c, _)| c == i)
                .map(|(_, &v)| v)
                .unwrap_or(0.0)
        })
        .collect();

    let mut residual = problem.kkt_residual(&x);
    for iteration in 0..max_iter {
        if residual <= tol {
            return Ok(QpSolution {
                x,
                iterations: iteration,
                residual,
            });
        }
        let grad = problem.gradient(&x);
        let eps = residual.min(1e-6);
        let mut held = vec![false; n];
        for i in 0..n {
            let at_lower = x[i] <= problem.lower[i] + eps && grad[i] > 0.0;
            let at_upper = x[i] >= problem.upper[i] - eps && grad[i] < 0.0;
            held[i] = at_lower || at_upper;
        }
        let free: Vec<usize> = (0..n).filter(|&i| !held[i]).collect();

        let mut dir = vec![0.0; n];
        for i in 0..n {
            if held[i] {
                dir[i] = -grad[i] / diag[i].max(1e-12);
            }
        }
        if !free.is_empty() {
            let rhs: Vec<f64> = free.iter().map(|&i| -grad[i]).collect();
            let scale = free.iter().map(|&i| diag[i].abs()).fold(0.0, f64::max).max(1e-300);
            let mut shift = 0.0;
            let step = loop {
                let reduced = problem.reduced_hessian(&free, shift);
                match CscCholesky::factor(&reduced) {
                    Ok(chol) => {
                        let b = nalgebra::DMatrix::from_column_slice(rhs.len(), 1, &rhs);
                        break Some(chol.solve(&b));
                    }
                    Err(_) if shift < scale => {
                        shift = if shift == 0.0 { 1e-12 * scale } else { shift * 100.0 };
                    }
                    Err(_) => break None,
                }
            };
            match step {
                Some(p) => {
                    for (k, &i) in free.iter().enumerate() {
                        dir[i] = p[(k, 0)];
                    }
                }
                None => {
                    for &i in &free {
                        dir[i] = -grad[i] / diag[i].max(1e-12);
                    }
                }
            }
        }

        // Armijo search along the projection arc
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut trial = x.clone();
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = x[i] + alpha * dir[i];
            }
            problem.project(&mut trial);
            // change of the quadratic evaluated from the step itself, which stays accurate
            // long after f(trial) - f(x) has drowned in round-off
            let delta: Vec<f64> = (0..n).map(|i| trial[i] - x[i]).collect();
            let slope: f64 = (0..n).map(|i| grad[i] * delta[i]).sum();
            let curv: f64 = problem.mul(&delta).iter().zip(&delta).map(|(a, b)| a * b).sum();
            if slope < 0.0 && slope + 0.5 * curv <= 1e-4 * slope {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // numerical floor: no descent left along the projected direction
            break;
        }
        used = iteration + 1;
        std::mem::swap(&mut x, &mut trial);
        residual = problem.kkt_residual(&x);
    }
    if residual <= tol {
        return Ok(QpSolution {
            x,
            iterations: used,
            residual,
        });
    }
    Err(Error::QpNotConverged {
        iterations: used,
        residual,
        best: x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag_problem(n: usize, upper: f64) -> QpProblem {
        let mut coo = CooMatrix::new(n, n);
        for i in 0..n {
            // 1/2 x'(2I)x - 2 sum x = sum (x^2 - 2x)
            coo.push(i, i, 2.0);
        }
        QpProblem::new(CsrMatrix::from(&coo), vec![-2.0; n], vec![0.0; n], vec![upper; n]).unwrap()
    }

    #[test]
    fn interior_optimum() {
        let sol = solve_qp(&diag_problem(5, 10.0), 1e-10, 100).unwrap();
        for v in sol.x {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn active_upper_bound() {
        let sol = solve_qp(&diag_problem(5, 0.5), 1e-10, 100).unwrap();
        for v in sol.x {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_crossed_bounds_and_asymmetry() {
        let mut coo = CooMatrix::new(2, 2);
        coo.push(0, 0, 1.0);
        coo.push(1, 1, 1.0);
        let h = CsrMatrix::from(&coo);
        assert!(matches!(
            QpProblem::new(h.clone(), vec![0.0; 2], vec![1.0, 0.0], vec![0.0, 1.0]),
            Err(Error::InfeasibleBounds { index: 0, .. })
        ));
        coo.push(0, 1, 0.5);
        assert!(QpProblem::new(CsrMatrix::from(&coo), vec![0.0; 2], vec![0.0; 2], vec![1.0; 2]).is_err());
    }

    #[test]
    fn reports_iteration_limit() {
        let mut coo = CooMatrix::new(40, 40);
        for i in 0..40 {
            coo.push(i, i, 2.0 + i as f64);
            if i + 1 < 40 {
                coo.push(i, i + 1, -1.0);
                coo.push(i + 1, i, -1.0);
            }
        }
        let p = QpProblem::new(
            CsrMatrix::from(&coo),
            (0..40).map(|i| (i as f64).sin() * 10.0).collect(),
            vec![-0.5; 40],
            vec![0.5; 40],
        )
        .unwrap();
        match solve_qp(&p, 1e-14, 0) {
            Err(Error::QpNotConverged { best, .. }) => assert_eq!(best.len(), 40),
            other => panic!("{other:?}"),
        }
    }

    /// Dense primal active-set method used as an independent reference.
    fn reference_active_set(h: &DMatrix<f64>, g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
        let n = g.len();
        // working set: 0 free, -1 at lower, +1 at upper
        let mut x: Vec<f64> = (0..n).map(|i| 0.0f64.clamp(lo[i], hi[i])).collect();
        let mut w: Vec<i8> = (0..n)
            .map(|i| if x[i] == lo[i] { -1 } else if x[i] == hi[i] { 1 } else { 0 })
            .collect();
        for _ in 0..10_000 {
            let grad: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| h[(i, j)] * x[j]).sum::<f64>() + g[i])
                .collect();
            let free: Vec<usize> = (0..n).filter(|&i| w[i] == 0).collect();
            let mut p = vec![0.0; n];
            if !free.is_empty() {
                let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
                let rhs = nalgebra::DVector::from_iterator(free.len(), free.iter().map(|&i| -grad[i]));
                let sol = hff.lu().solve(&rhs).unwrap();
                for (k, &i) in free.iter().enumerate() {
                    p[i] = sol[k];
                }
            }
            let pnorm = p.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if pnorm < 1e-13 {
                // multipliers: lower-bound needs grad >= 0, upper needs grad <= 0
                let worst = (0..n)
                    .filter(|&i| w[i] != 0)
                    .map(|i| (i, if w[i] < 0 { grad[i] } else { -grad[i] }))
                    .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
                match worst {
                    Some((i, lam)) if lam < -1e-12 => w[i] = 0,
                    _ => return x,
                }
                continue;
            }
            let mut alpha = 1.0;
            let mut block = None;
            for &i in &free {
                if p[i] < 0.0 {
                    let a = (lo[i] - x[i]) / p[i];
                    if a < alpha {
                        alpha = a;
                        block = Some((i, -1));
                    }
                } else if p[i] > 0.0 {
                    let a = (hi[i] - x[i]) / p[i];
                    if a < alpha {
                        alpha = a;
                        block = Some((i, 1));
                    }
                }
            }
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            if let Some((i, side)) = block {
                x[i] = if side < 0 { lo[i] } else { hi[i] };
                w[i] = side;
            }
        }
        panic!("reference active-set did not terminate");
    }

    #[test]
    fn matches_reference_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = 50;
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let h = m.transpose() * &m + DMatrix::identity(n, n) * 0.5;
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..0.0)).collect();
            let hi: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut coo = CooMatrix::new(n, n);
            for i in 0..n {
                for j in 0..n {
                    coo.push(i, j, 0.5 * (h[(i, j)] + h[(j, i)]));
                }
            }
            let p = QpProblem::new(CsrMatrix::from(&coo), g.clone(), lo.clone(), hi.clone()).unwrap();
            let sol = solve_qp(&p, 1e-10, 500).unwrap();
            let reference = reference_active_set(&h, &g, &lo, &hi);
            for (a, b) in sol.x.iter().zip(&reference) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }
}
