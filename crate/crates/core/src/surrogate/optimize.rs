//! Derivative-free bounded minimization (Nelder–Mead with projection onto
//! the box).

#[derive(Clone, Debug)]
pub struct NelderMead {
    /// Stop when the simplex diameter and value spread fall below this.
    pub tolerance: f64,
    pub max_evaluations: usize,
    /// Initial simplex edge as a fraction of each bound width.
    pub initial_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_evaluations: 400,
            initial_step: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

impl NelderMead {
    /// Minimizes `f` inside `bounds` from `start`. Non-finite values are
    /// treated as +∞, so the returned value is never worse than `f(start)`.
    pub fn minimize<F>(&self, mut f: F, start: &[f64], bounds: &[(f64, f64)]) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        let dim = start.len();
        assert_eq!(dim, bounds.len());
        let evaluations = std::cell::Cell::new(0usize);
        let mut eval = |x: &[f64]| {
            evaluations.set(evaluations.get() + 1);
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };

        let mut x0 = start.to_vec();
        project(&mut x0, bounds);
        let mut simplex = vec![x0.clone()];
        for i in 0..dim {
            let mut x = x0.clone();
            let (lo, hi) = bounds[i];
            let step = self.initial_step * (hi - lo).max(1e-12);
            x[i] = if x[i] + step <= hi {
                x[i] + step
            } else {
                x[i] - step
            };
            simplex.push(x);
        }
        let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();

        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        loop {
            let mut order: Vec<usize> = (0..=dim).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let diameter = simplex[1..]
                .iter()
                .flat_map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            let spread = values[dim] - values[0];
            if (diameter < self.tolerance && (spread < self.tolerance || !spread.is_finite()))
                || evaluations.get() >= self.max_evaluations
            {
                break;
            }

            let centroid: Vec<f64> = (0..dim)
                .map(|j| simplex[..dim].iter().map(|x| x[j]).sum::<f64>() / dim as f64)
                .collect();
            let towards = |coef: f64| -> Vec<f64> {
                let mut x: Vec<f64> = centroid
                    .iter()
                    .zip(&simplex[dim])
                    .map(|(c, w)| c + coef * (c - w))
                    .collect();
                project(&mut x, bounds);
                x
            };

            let reflected = towards(alpha);
            let f_r = eval(&reflected);
            if f_r < values[0] {
                let expanded = towards(gamma);
                let f_e = eval(&expanded);
                if f_e < f_r {
                    simplex[dim] = expanded;
                    values[dim] = f_e;
                } else {
                    simplex[dim] = reflected;
                    values[dim] = f_r;
                }
            } else if f_r < values[dim - 1] {
                simplex[dim] = reflected;
                values[dim] = f_r;
            } else {
                let contracted = if f_r < values[dim] {
                    towards(rho * alpha)
                } else {
                    towards(-rho)
                };
                let f_c = eval(&contracted);
                if f_c < values[dim].min(f_r) {
                    simplex[dim] = contracted;
                    values[dim] = f_c;
                } else {
                    let best = simplex[0].clone();
                    for i in 1..=dim {
                        for j in 0..dim {
                            simplex[i][j] = best[j] + sigma * (simplex[i][j] - best[j]);
                        }
                        values[i] = eval(&simplex[i]);
                    }
                }
            }
        }
        Minimum {
            point: simplex[0].clone(),
            value: values[0],
            evaluations: evaluations.get(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let nm = NelderMead::default();
        let m = nm.minimize(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 0.5).powi(2),
            &[4.0, 4.0],
            &[(-5.0, 5.0), (-5.0, 5.0)],
        );
        assert!((m.point[0] - 1.0).abs() < 1e-3);
        assert!((m.point[1] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn respects_bounds() {
        let nm = NelderMead::default();
        let m = nm.minimize(|x| x[0], &[0.5], &[(0.2, 1.0)]);
        assert!((m.point[0] - 0.2).abs() < 1e-9);
    }

    #[test]
    fn rosenbrock_in_a_box() {
        let nm = NelderMead {
            max_evaluations: 4000,
            ..NelderMead::default()
        };
        let m = nm.minimize(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &[(-2.0, 2.0), (-2.0, 2.0)],
        );
        assert!(m.value < 1e-6, "{m:?}");
    }

    #[test]
    fn never_worse_than_start_even_with_nan_regions() {
        let nm = NelderMead::default();
        let f = |x: &[f64]| {
            if x[0] > 0.3 {
                f64::NAN
            } else {
                (x[0] - 0.1).powi(2)
            }
        };
        let start = [0.25];
        let m = nm.minimize(f, &start, &[(0.0, 1.0)]);
        assert!(m.value <= f(&start));
    }
}
