//! Periodic cubic spline through polar control points.

use std::f64::consts::TAU;

/// C² periodic cubic spline `ρ(θ)` with period 2π.
///
/// Knots must be strictly increasing and span less than one period.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots.
    curvature: Vec<f64>,
}

impl PeriodicSpline {
    /// Panics if the knots are not strictly increasing within one period or
    /// fewer than three knots are given.
    pub fn new(knots: &[f64], values: &[f64]) -> Self {
        let n = knots.len();
        assert!(n >= 3, "periodic spline needs at least three knots");
        assert_eq!(n, values.len());
        assert!(
            knots.windows(2).all(|w| w[1] > w[0]),
            "spline knots must be strictly increasing"
        );
        assert!(knots[n - 1] - knots[0] < TAU);

        let gap = |i: usize| -> f64 {
            if i + 1 < n {
                knots[i + 1] - knots[i]
            } else {
                knots[0] + TAU - knots[n - 1]
            }
        };

        // Cyclic tridiagonal system for the second derivatives, solved densely.
        let mut a = vec![vec![0.0; n]; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let prev = (i + n - 1) % n;
            let next = (i + 1) % n;
            let h_prev = gap(prev);
            let h = gap(i);
            a[i][prev] += h_prev;
            a[i][i] += 2.0 * (h_prev + h);
            a[i][next] += h;
            rhs[i] = 6.0 * ((values[next] - values[i]) / h - (values[i] - values[prev]) / h_prev);
        }
        let curvature = solve_dense(a, rhs);

        Self {
            knots: knots.to_vec(),
            values: values.to_vec(),
            curvature,
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Evaluates the spline at any angle; the angle is wrapped into the
    /// period starting at the first knot.
    pub fn eval(&self, theta: f64) -> f64 {
        let n = self.knots.len();
        let start = self.knots[0];
        let mut t = (theta - start).rem_euclid(TAU) + start;
        if t >= start + TAU {
            t = start;
        }
        // Last interval wraps back to the first knot.
        let i = match self.knots.iter().rposition(|&k| k <= t) {
            Some(i) => i,
            None => n - 1,
        };
        let (x0, x1, j) = if i + 1 < n {
            (self.knots[i], self.knots[i + 1], i + 1)
        } else {
            (self.knots[n - 1], start + TAU, 0)
        };
        let h = x1 - x0;
        let (m0, m1) = (self.curvature[i], self.curvature[j]);
        let (y0, y1) = (self.values[i], self.values[j]);
        let a = x1 - t;
        let b = t - x0;
        m0 * a * a * a / (6.0 * h)
            + m1 * b * b * b / (6.0 * h)
            + (y0 / h - m0 * h / 6.0) * a
            + (y1 / h - m1 * h / 6.0) * b
    }
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
            .unwrap_or(col);
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col];
        for row in col + 1..n {
            let factor = a[row][col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_knots(n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|i| phase + TAU * i as f64 / n as f64).collect()
    }

    #[test]
    fn constant_values_give_constant_spline() {
        let knots = uniform_knots(8, 0.0);
        let spline = PeriodicSpline::new(&knots, &[4.0; 8]);
        for k in 0..100 {
            let theta = -3.0 + 0.13 * k as f64;
            assert!((spline.eval(theta) - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolates_knots_and_is_periodic() {
        let knots = [0.1, 0.9, 1.5, 2.2, 3.3, 4.0, 4.9, 5.8];
        let values = [3.0, 10.0, 4.0, 9.0, 2.5, 8.0, 6.0, 7.0];
        let spline = PeriodicSpline::new(&knots, &values);
        for (&k, &v) in knots.iter().zip(&values) {
            assert!((spline.eval(k) - v).abs() < 1e-9);
            assert!((spline.eval(k + TAU) - v).abs() < 1e-9);
            assert!((spline.eval(k - TAU) - v).abs() < 1e-9);
        }
        // Continuity across the wrap-around interval.
        let before = spline.eval(knots[0] + TAU - 1e-9);
        let after = spline.eval(knots[0] + 1e-9);
        assert!((before - after).abs() < 1e-6);
    }

    #[test]
    fn reproduces_a_sinusoid_closely() {
        let n = 32;
        let knots = uniform_knots(n, 0.3);
        let values: Vec<f64> = knots.iter().map(|t| 5.0 + t.sin()).collect();
        let spline = PeriodicSpline::new(&knots, &values);
        for k in 0..200 {
            let t = k as f64 * TAU / 200.0;
            assert!((spline.eval(t) - (5.0 + t.sin())).abs() < 1e-4);
        }
    }

    #[test]
    fn second_derivative_is_continuous_at_knots() {
        let knots = [0.0, 0.7, 1.9, 2.4, 3.5, 4.4, 5.0, 5.9];
        let values = [5.0, 9.0, 3.0, 8.0, 4.0, 7.0, 2.0, 6.0];
        let spline = PeriodicSpline::new(&knots, &values);
        let h = 1e-4;
        let second =
            |t: f64| (spline.eval(t + h) - 2.0 * spline.eval(t) + spline.eval(t - h)) / (h * h);
        for &k in &knots {
            let left = second(k - 5.0 * h);
            let right = second(k + 5.0 * h);
            assert!(
                (left - right).abs() < 0.05 * (1.0 + left.abs()),
                "{left} vs {right}"
            );
        }
    }
}
