//! Periodic cubic splines with arbitrary (strictly increasing) knots.

use crate::error::{Error, Result};

/// A C2 periodic cubic spline `y(t)` with period `period`.
#[derive(Debug, Clone)]
pub struct PeriodicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots.
    moments: Vec<f64>,
    period: f64,
}

impl PeriodicSpline {
    /// Interpolates `values` at `knots`. Knots must be strictly increasing and span less
    /// than one period; the sample after the last knot is the first knot shifted by `period`.
    pub fn new(knots: Vec<f64>, values: Vec<f64>, period: f64) -> Result<Self> {
        let n = knots.len();
        if n < 3 || values.len() != n {
            return Err(Error::InvalidInput(format!(
                "periodic spline needs >= 3 matching knots/values, got {}/{}",
                n,
                values.len()
            )));
        }
        if !(period > 0.0) || knots[n - 1] - knots[0] >= period {
            return Err(Error::InvalidInput("spline knots exceed one period".into()));
        }
        let h: Vec<f64> = (0..n)
            .map(|i| {
                if i + 1 < n {
                    knots[i + 1] - knots[i]
                } else {
                    knots[0] + period - knots[n - 1]
                }
            })
            .collect();
        if h.iter().any(|&hi| !(hi > 0.0)) {
            return Err(Error::InvalidInput("spline knots not strictly increasing".into()));
        }
        // Row i: h[i-1] M[i-1] + 2 (h[i-1] + h[i]) M[i] + h[i] M[i+1] = 6 (slope_i - slope_{i-1})
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let im = (i + n - 1) % n;
            let ip = (i + 1) % n;
            sub[i] = h[im];
            diag[i] = 2.0 * (h[im] + h[i]);
            sup[i] = h[i];
            rhs[i] = 6.0 * ((values[ip] - values[i]) / h[i] - (values[i] - values[im]) / h[im]);
        }
        let moments = solve_cyclic_tridiagonal(&sub, &diag, &sup, &rhs);
        Ok(Self {
            knots,
            values,
            moments,
            period,
        })
    }

    /// Spline through uniformly spaced samples `values[i]` at `t = i * step`.
    pub fn uniform(values: Vec<f64>, step: f64) -> Result<Self> {
        let n = values.len();
        let knots = (0..n).map(|i| i as f64 * step).collect();
        Self::new(knots, values, n as f64 * step)
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Locates the segment containing `t`, returning `(index, local offset, segment length)`.
    fn locate(&self, t: f64) -> (usize, f64, f64) {
        let n = self.knots.len();
        let t0 = self.knots[0];
        let mut u = (t - t0).rem_euclid(self.period) + t0;
        if u >= t0 + self.period {
            u = t0;
        }
        // Largest i with knots[i] <= u.
        let i = match self.knots.partition_point(|&k| k <= u) {
            0 => 0,
            p => p - 1,
        };
        let h = if i + 1 < n {
            self.knots[i + 1] - self.knots[i]
        } else {
            self.knots[0] + self.period - self.knots[i]
        };
        (i, u - self.knots[i], h)
    }

    /// Value, first and second derivative at `t`.
    pub fn eval_all(&self, t: f64) -> (f64, f64, f64) {
        let n = self.knots.len();
        let (i, x, h) = self.locate(t);
        let j = (i + 1) % n;
        let (yi, yj) = (self.values[i], self.values[j]);
        let (mi, mj) = (self.moments[i], self.moments[j]);
        let a = (h - x) / h;
        let b = x / h;
        let value = a * yi
            + b * yj
            + ((a * a * a - a) * mi + (b * b * b - b) * mj) * h * h / 6.0;
        let d1 = (yj - yi) / h - (3.0 * a * a - 1.0) / 6.0 * h * mi
            + (3.0 * b * b - 1.0) / 6.0 * h * mj;
        let d2 = a * mi + b * mj;
        (value, d1, d2)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_all(t).0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.eval_all(t).1
    }
}

/// Solves a cyclic tridiagonal system (`sub[0]` couples row 0 to the last unknown,
/// `sup[n-1]` couples the last row to unknown 0) via Sherman-Morrison.
pub(crate) fn solve_cyclic_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let alpha = sup[n - 1];
    let beta = sub[0];
    let gamma = -diag[0];
    let mut b = diag.to_vec();
    b[0] -= gamma;
    b[n - 1] -= alpha * beta / gamma;
    let x = solve_tridiagonal(sub, &b, sup, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(sub, &b, sup, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

/// Thomas algorithm; `sub[0]` and `sup[n-1]` are ignored.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / m } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn reproduces_knot_values() {
        let knots = vec![0.0, 0.7, 1.5, 2.0, 3.1, 4.4];
        let values: Vec<f64> = knots.iter().map(|&t: &f64| (t * 0.9).sin()).collect();
        let s = PeriodicSpline::new(knots.clone(), values.clone(), 5.5).unwrap();
        for (t, v) in knots.iter().zip(&values) {
            assert!((s.eval(*t) - v).abs() < 1e-12);
        }
        // periodic wrap
        assert!((s.eval(5.5) - values[0]).abs() < 1e-12);
        assert!((s.eval(-5.5 + 0.7) - values[1]).abs() < 1e-12);
    }

    #[test]
    fn approximates_periodic_function() {
        let n = 64;
        let step = 2.0 * PI / n as f64;
        let vals = (0..n).map(|i| (i as f64 * step).cos()).collect();
        let s = PeriodicSpline::uniform(vals, step).unwrap();
        for k in 0..200 {
            let t = k as f64 * 0.0371;
            let (v, d1, d2) = s.eval_all(t);
            assert!((v - t.cos()).abs() < 1e-5);
            assert!((d1 + t.sin()).abs() < 1e-3);
            assert!((d2 + t.cos()).abs() < 2e-2);
        }
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(PeriodicSpline::new(vec![0.0, 1.0], vec![0.0, 1.0], 3.0).is_err());
        assert!(PeriodicSpline::new(vec![0.0, 1.0, 1.0], vec![0.0; 3], 3.0).is_err());
        assert!(PeriodicSpline::new(vec![0.0, 1.0, 3.0], vec![0.0; 3], 3.0).is_err());
    }
}
