//! Exact Gaussian-process regression with an isotropic squared-exponential
//! kernel and likelihood-optimized hyperparameters.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::optimize::NelderMead;
use super::sobol::sobol_points;
use super::SurrogateError;

pub const NOISE_FLOOR: f64 = 1e-8;
const DUPLICATE_TOLERANCE: f64 = 1e-12;
const FIT_STARTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl GpHyperparams {
    pub fn new(
        length_scale: f64,
        signal_variance: f64,
        noise_variance: f64,
    ) -> Result<Self, SurrogateError> {
        let h = Self {
            length_scale,
            signal_variance,
            noise_variance,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<(), SurrogateError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.length_scale)
            || !ok(self.signal_variance)
            || !(self.noise_variance >= NOISE_FLOOR)
        {
            return Err(SurrogateError::InvalidHyperparams(*self));
        }
        Ok(())
    }

    fn from_log(p: &[f64]) -> Self {
        Self {
            length_scale: p[0].exp(),
            signal_variance: p[1].exp(),
            noise_variance: p[2].exp().max(NOISE_FLOOR),
        }
    }
}

/// `σ² · exp(−‖x − x'‖² / (2 l²))`
pub fn kernel(x: &[f64], x_prime: &[f64], hyper: &GpHyperparams) -> f64 {
    debug_assert_eq!(x.len(), x_prime.len());
    let d2 = squared_distance(x, x_prime);
    hyper.signal_variance * (-d2 / (2.0 * hyper.length_scale * hyper.length_scale)).exp()
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Box constraints on the hyperparameters (natural units).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpBounds {
    pub length_scale: (f64, f64),
    pub signal_variance: (f64, f64),
    pub noise_variance: (f64, f64),
}

impl GpBounds {
    /// Bounds scaled to the spread of the inputs and the variance of the
    /// targets.
    pub fn for_data(inputs: &[Vec<f64>], targets: &[f64]) -> Self {
        let dim = inputs.first().map_or(1, Vec::len);
        let diag = (0..dim)
            .map(|j| {
                let (lo, hi) = inputs
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                        (lo.min(x[j]), hi.max(x[j]))
                    });
                (hi - lo).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        let diag = if diag.is_finite() && diag > 0.0 {
            diag
        } else {
            1.0
        };
        let n = targets.len().max(1) as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let var = if var.is_finite() && var > 0.0 {
            var
        } else {
            1.0
        };
        Self {
            length_scale: (1e-2 * diag, 10.0 * diag),
            signal_variance: (1e-3 * var, 1e2 * var),
            noise_variance: (NOISE_FLOOR, var.max(NOISE_FLOOR * 10.0)),
        }
    }

    fn log_box(&self) -> [(f64, f64); 3] {
        let lg = |(lo, hi): (f64, f64)| (lo.ln(), hi.ln());
        [
            lg(self.length_scale),
            lg(self.signal_variance),
            lg((
                self.noise_variance.0.max(NOISE_FLOOR),
                self.noise_variance.1.max(NOISE_FLOOR),
            )),
        ]
    }
}

/// Diagnostics from the multi-start likelihood search.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub log_likelihood: f64,
    pub starts: Vec<GpHyperparams>,
    /// Log marginal likelihood at each start point (−∞ where the kernel
    /// matrix was not positive definite).
    pub start_log_likelihoods: Vec<f64>,
    pub evaluations: usize,
}

#[derive(Clone, Debug)]
pub struct GpModel {
    dim: usize,
    /// Row-major `n × dim`.
    inputs: Vec<f64>,
    targets: Vec<f64>,
    offset: f64,
    hyper: GpHyperparams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    report: Option<FitReport>,
}

#[derive(Serialize, Deserialize)]
struct GpModelFile {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    hyper: GpHyperparams,
}

/// Merges rows that coincide within tolerance, averaging their targets.
fn merge_duplicates(inputs: &[Vec<f64>], targets: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(inputs.len());
    let mut sums: Vec<(f64, usize)> = Vec::with_capacity(inputs.len());
    for (x, &y) in inputs.iter().zip(targets) {
        let dup = rows.iter().position(|r| {
            r.iter()
                .zip(x)
                .all(|(a, b)| (a - b).abs() <= DUPLICATE_TOLERANCE)
        });
        match dup {
            Some(i) => {
                sums[i].0 += y;
                sums[i].1 += 1;
            }
            None => {
                rows.push(x.clone());
                sums.push((y, 1));
            }
        }
    }
    let merged = sums.into_iter().map(|(s, c)| s / c as f64).collect();
    (rows, merged)
}

fn check_data(
    inputs: &[Vec<f64>],
    targets: &[f64],
    min_rows: usize,
) -> Result<usize, SurrogateError> {
    if inputs.len() != targets.len() {
        return Err(SurrogateError::LengthMismatch {
            inputs: inputs.len(),
            targets: targets.len(),
        });
    }
    if inputs.len() < min_rows {
        return Err(SurrogateError::InsufficientData(inputs.len()));
    }
    let dim = inputs[0].len();
    if dim == 0 {
        return Err(SurrogateError::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    if let Some(bad) = inputs.iter().find(|x| x.len() != dim) {
        return Err(SurrogateError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    if inputs.iter().flatten().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
        return Err(SurrogateError::NonFiniteData);
    }
    Ok(dim)
}

/// Precomputed pairwise squared distances for repeated likelihood
/// evaluation.
struct LikelihoodProblem {
    n: usize,
    sq_dist: Vec<f64>,
    centered: DVector<f64>,
}

impl LikelihoodProblem {
    fn new(rows: &[Vec<f64>], centered: &[f64]) -> Self {
        let n = rows.len();
        let mut sq_dist = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                let d = squared_distance(&rows[i], &rows[j]);
                sq_dist[i * n + j] = d;
                sq_dist[j * n + i] = d;
            }
        }
        Self {
            n,
            sq_dist,
            centered: DVector::from_column_slice(centered),
        }
    }

    fn factor(&self, hyper: &GpHyperparams) -> Option<Cholesky<f64, Dyn>> {
        let n = self.n;
        let inv = -1.0 / (2.0 * hyper.length_scale * hyper.length_scale);
        let mut k = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                k[(i, j)] = hyper.signal_variance * (self.sq_dist[i * n + j] * inv).exp();
            }
            k[(j, j)] += hyper.noise_variance;
        }
        Cholesky::new(k)
    }

    fn log_likelihood(&self, hyper: &GpHyperparams) -> f64 {
        match self.factor(hyper) {
            Some(chol) => log_likelihood_from(&chol, &self.centered),
            None => f64::NEG_INFINITY,
        }
    }
}

fn log_likelihood_from(chol: &Cholesky<f64, Dyn>, centered: &DVector<f64>) -> f64 {
    let n = centered.len() as f64;
    let alpha = chol.solve(centered);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    -0.5 * centered.dot(&alpha) - log_det_half - 0.5 * n * (2.0 * PI).ln()
}

/// Models are equal when they hold the same data and hyperparameters; the
/// factorization follows from those.
impl PartialEq for GpModel {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.inputs == other.inputs
            && self.targets == other.targets
            && self.hyper == other.hyper
    }
}

impl GpModel {
    /// Conditions a GP with fixed hyperparameters on the data.
    pub fn with_hyperparams(
        inputs: &[Vec<f64>],
        targets: &[f64],
        hyper: GpHyperparams,
    ) -> Result<Self, SurrogateError> {
        check_data(inputs, targets, 1)?;
        hyper.validate()?;
        let (rows, merged) = merge_duplicates(inputs, targets);
        Self::condition(rows, merged, hyper, None)
    }

    fn condition(
        rows: Vec<Vec<f64>>,
        targets: Vec<f64>,
        hyper: GpHyperparams,
        report: Option<FitReport>,
    ) -> Result<Self, SurrogateError> {
        let dim = rows[0].len();
        let offset = targets.iter().sum::<f64>() / targets.len() as f64;
        let centered: Vec<f64> = targets.iter().map(|y| y - offset).collect();
        let problem = LikelihoodProblem::new(&rows, &centered);
        let chol = problem
            .factor(&hyper)
            .ok_or(SurrogateError::SingularKernel)?;
        let alpha = chol.solve(&problem.centered);
        Ok(Self {
            dim,
            inputs: rows.into_iter().flatten().collect(),
            targets,
            offset,
            hyper,
            chol,
            alpha,
            report,
        })
    }

    /// Maximizes the log marginal likelihood over `(log l, log σ², log noise)`
    /// with bounded Nelder–Mead from eight Sobol-spread starts.
    pub fn fit(
        inputs: &[Vec<f64>],
        targets: &[f64],
        bounds: &GpBounds,
    ) -> Result<Self, SurrogateError> {
        check_data(inputs, targets, 2)?;
        let (rows, merged) = merge_duplicates(inputs, targets);
        let offset = merged.iter().sum::<f64>() / merged.len() as f64;
        let centered: Vec<f64> = merged.iter().map(|y| y - offset).collect();
        let problem = LikelihoodProblem::new(&rows, &centered);
        let log_box = bounds.log_box();

        let optimizer = NelderMead::default();
        let mut starts = Vec::with_capacity(FIT_STARTS);
        let mut start_lls = Vec::with_capacity(FIT_STARTS);
        let mut best: Option<(f64, GpHyperparams)> = None;
        let mut evaluations = 0;
        for unit in sobol_points(3, FIT_STARTS, 1)? {
            let start: Vec<f64> = unit
                .iter()
                .zip(&log_box)
                .map(|(u, (lo, hi))| lo + u * (hi - lo))
                .collect();
            let start_hyper = GpHyperparams::from_log(&start);
            starts.push(start_hyper);
            start_lls.push(problem.log_likelihood(&start_hyper));
            let result = optimizer.minimize(
                |p| -problem.log_likelihood(&GpHyperparams::from_log(p)),
                &start,
                &log_box,
            );
            evaluations += result.evaluations;
            let ll = -result.value;
            if ll.is_finite() && best.is_none_or(|(b, _)| ll > b) {
                best = Some((ll, GpHyperparams::from_log(&result.point)));
            }
        }
        let (ll, hyper) = best.ok_or(SurrogateError::SingularKernel)?;
        let report = FitReport {
            log_likelihood: ll,
            starts,
            start_log_likelihoods: start_lls,
            evaluations,
        };
        Self::condition(rows, merged, hyper, Some(report))
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Training targets after duplicate merging.
    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.inputs.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn fit_report(&self) -> Option<&FitReport> {
        self.report.as_ref()
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let centered = DVector::from_iterator(
            self.targets.len(),
            self.targets.iter().map(|y| y - self.offset),
        );
        log_likelihood_from(&self.chol, &centered)
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), SurrogateError> {
        if x.len() != self.dim {
            return Err(SurrogateError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn cross_covariance(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.targets.len(),
            self.inputs
                .chunks(self.dim)
                .map(|row| kernel(row, x, &self.hyper)),
        )
    }

    /// Predictive mean only.
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64, SurrogateError> {
        self.check_dim(x)?;
        let mut acc = 0.0;
        for (row, a) in self.inputs.chunks(self.dim).zip(self.alpha.iter()) {
            acc += kernel(row, x, &self.hyper) * a;
        }
        Ok(acc + self.offset)
    }

    /// Predictive mean and variance (including observation noise).
    pub fn predict_one(&self, x: &[f64]) -> Result<(f64, f64), SurrogateError> {
        self.check_dim(x)?;
        let k_star = self.cross_covariance(x);
        let mean = k_star.dot(&self.alpha) + self.offset;
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k_star)
            .ok_or(SurrogateError::SingularKernel)?;
        let var = self.hyper.signal_variance - v.norm_squared() + self.hyper.noise_variance;
        Ok((mean, var.max(0.0)))
    }

    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>), SurrogateError> {
        let mut means = Vec::with_capacity(xs.len());
        let mut vars = Vec::with_capacity(xs.len());
        for x in xs {
            let (m, v) = self.predict_one(x)?;
            means.push(m);
            vars.push(v);
        }
        Ok((means, vars))
    }

    /// JSON with training data and hyperparameters; the factorization is
    /// recomputed on load.
    pub fn to_json(&self) -> String {
        let file = GpModelFile {
            inputs: self.inputs(),
            targets: self.targets.clone(),
            hyper: self.hyper,
        };
        serde_json::to_string_pretty(&file).expect("GP model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SurrogateError> {
        let file: GpModelFile =
            serde_json::from_str(text).map_err(|e| SurrogateError::Format(e.to_string()))?;
        Self::with_hyperparams(&file.inputs, &file.targets, file.hyper)
    }
}
