//! Ridge-penalised logistic regression fitted by Newton/IRLS.
//!
//! Columns are standardised internally (population sd); the penalty
//! `(lambda / 2) * ||beta||^2` applies to the standardised coefficients and
//! the intercept is unpenalised. When there are at least as many columns as
//! rows the problem is solved in the row space of the standardised design
//! (`Z = U S V'`, `beta = V theta`), which gives the same optimum with a
//! much smaller system.

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{log1p_exp, logistic};

pub const MAX_ITERATIONS: usize = 100;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    /// Population standard deviation; zero marks a constant column.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub intercept: f64,
    /// Original-scale coefficients.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub standardization: Vec<ColumnScale>,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl RidgeModel {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    /// Coefficients on the standardised scale the penalty acts on.
    pub fn standardized_coefficients(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .zip(&self.standardization)
            .map(|(b, s)| b * s.scale)
            .collect()
    }

    /// Adds `delta` to the intercept (log-odds offset).
    pub fn shift_intercept(&mut self, delta: f64) {
        self.intercept += delta;
    }
}

/// Case probabilities for the rows of `x`.
pub fn predict(model: &RidgeModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.coefficients.len() {
        return Err(Error::Dimension {
            expected: model.coefficients.len(),
            found: x.ncols(),
        });
    }
    Ok((0..x.nrows())
        .map(|i| {
            let eta = model.intercept
                + model
                    .coefficients
                    .iter()
                    .enumerate()
                    .map(|(c, b)| b * x[(i, c)])
                    .sum::<f64>();
            logistic(eta)
        })
        .collect())
}

/// `sum_i [c_i eta_i - log(1 + exp(eta_i))] - lambda/2 ||beta||^2` with
/// `eta = intercept + x beta`, on the design as given.
pub fn penalized_log_likelihood(x: &DMatrix<f64>, labels: &[f64], intercept: f64, beta: &[f64], lambda: f64) -> f64 {
    let mut ll = 0.0;
    for (i, &c) in labels.iter().enumerate() {
        let eta = intercept + beta.iter().enumerate().map(|(k, b)| b * x[(i, k)]).sum::<f64>();
        ll += c * eta - log1p_exp(eta);
    }
    ll - 0.5 * lambda * beta.iter().map(|b| b * b).sum::<f64>()
}

/// Gradient of [`penalized_log_likelihood`]: `(d/d intercept, d/d beta)`.
pub fn penalized_gradient(x: &DMatrix<f64>, labels: &[f64], intercept: f64, beta: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let mut g0 = 0.0;
    let mut g: Vec<f64> = beta.iter().map(|b| -lambda * b).collect();
    for (i, &c) in labels.iter().enumerate() {
        let eta = intercept + beta.iter().enumerate().map(|(k, b)| b * x[(i, k)]).sum::<f64>();
        let r = c - logistic(eta);
        g0 += r;
        for (k, gk) in g.iter_mut().enumerate() {
            *gk += r * x[(i, k)];
        }
    }
    (g0, g)
}

/// Standardised (and possibly reduced) design shared by fits at several
/// penalties.
#[derive(Debug, Clone)]
pub struct RidgeProblem {
    /// n x (k + 1): a column of ones followed by the working columns.
    design: DMatrix<f64>,
    /// p x k map from working to standardised coefficients, if reduced.
    basis: Option<DMatrix<f64>>,
    labels: DVector<f64>,
    scales: Vec<ColumnScale>,
}

/// Parameters in the working space plus convergence diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    /// Intercept followed by the working coefficients.
    pub w: DVector<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Objective after each accepted iterate, starting with the initial one.
    pub objective_trace: Vec<f64>,
}

impl RidgeProblem {
    pub fn new(x: &DMatrix<f64>, labels: &[f64]) -> Result<Self> {
        let (n, p) = x.shape();
        if labels.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: labels.len(),
            });
        }
        if n < 2 {
            return Err(Error::Validation(format!("ridge fit needs at least 2 samples, got {n}")));
        }
        if labels.iter().any(|&c| c != 0.0 && c != 1.0) {
            return Err(Error::Validation("labels must be 0 or 1".into()));
        }
        let cases = labels.iter().filter(|&&c| c == 1.0).count();
        if cases == 0 || cases == n {
            return Err(Error::Validation("ridge fit needs both classes present".into()));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite feature value {v}")));
        }

        let scales: Vec<ColumnScale> = (0..p)
            .map(|c| {
                let col = x.column(c);
                let mean = col.sum() / n as f64;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                let sd = var.sqrt();
                // spread at rounding level is treated as constant
                let scale = if sd > 1e-12 * mean.abs().max(f64::MIN_POSITIVE) { sd } else { 0.0 };
                ColumnScale { mean, scale }
            })
            .collect();
        let z = DMatrix::from_fn(n, p, |i, c| {
            let s = scales[c];
            if s.scale > 0.0 {
                (x[(i, c)] - s.mean) / s.scale
            } else {
                0.0
            }
        });

        let (working, basis) = if p >= n && p > 0 {
            // decompose the tall transpose: nalgebra's SVD of wide matrices
            // does not always reproduce its input
            let svd = z.transpose().svd(true, false);
            let u = svd.u.expect("requested");
            let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
            let keep: Vec<usize> = (0..svd.singular_values.len())
                .filter(|&k| svd.singular_values[k] > 1e-10 * top)
                .collect();
            let basis = DMatrix::from_fn(p, keep.len(), |c, k| u[(c, keep[k])]);
            (&z * &basis, Some(basis))
        } else {
            (z, None)
        };
        let k = working.ncols();
        let mut design = DMatrix::from_element(n, k + 1, 1.0);
        design.columns_mut(1, k).copy_from(&working);
        Ok(Self {
            design,
            basis,
            labels: DVector::from_column_slice(labels),
            scales,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.design.nrows()
    }

    /// Dimension of the working coefficient vector (without intercept).
    pub fn working_dim(&self) -> usize {
        self.design.ncols() - 1
    }

    pub fn prevalence(&self) -> f64 {
        self.labels.mean()
    }

    pub fn objective(&self, w: &DVector<f64>, lambda: f64) -> f64 {
        let eta = &self.design * w;
        let ll: f64 = eta
            .iter()
            .zip(self.labels.iter())
            .map(|(e, c)| c * e - log1p_exp(*e))
            .sum();
        ll - 0.5 * lambda * w.rows(1, w.len() - 1).norm_squared()
    }

    pub fn gradient(&self, w: &DVector<f64>, lambda: f64) -> DVector<f64> {
        let eta = &self.design * w;
        let resid = DVector::from_iterator(
            eta.len(),
            eta.iter().zip(self.labels.iter()).map(|(e, c)| c - logistic(*e)),
        );
        let mut g = self.design.tr_mul(&resid);
        for k in 1..g.len() {
            g[k] -= lambda * w[k];
        }
        g
    }

    /// Starting point: intercept at the sample log-odds, slopes zero.
    pub fn initial(&self) -> DVector<f64> {
        let mut w = DVector::zeros(self.design.ncols());
        let pi = self.prevalence();
        w[0] = (pi / (1.0 - pi)).ln();
        w
    }

    /// Newton iterations with step halving from `start` (or
    /// [`initial`](Self::initial)).
    pub fn solve(&self, lambda: f64, start: Option<&DVector<f64>>) -> Result<RidgeSolution> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive and finite, got {lambda}")));
        }
        let mut w = start.cloned().unwrap_or_else(|| self.initial());
        let mut obj = self.objective(&w, lambda);
        let mut trace = vec![obj];
        let dim = w.len();
        let n = self.n_samples();
        let mut polished = false;
        for iteration in 0..=MAX_ITERATIONS {
            let eta = &self.design * &w;
            let mut weights = Vec::with_capacity(n);
            let mut resid = DVector::zeros(n);
            for i in 0..n {
                let p = logistic(eta[i]);
                weights.push(p * (1.0 - p));
                resid[i] = self.labels[i] - p;
            }
            let mut g = self.design.tr_mul(&resid);
            for k in 1..dim {
                g[k] -= lambda * w[k];
            }
            let gnorm = g.norm();
            // one Newton step past the tolerance; convergence can be slow
            // near separation and the step is cheap
            let converged = gnorm < GRADIENT_TOLERANCE;
            if converged && (polished || iteration == MAX_ITERATIONS) {
                return Ok(RidgeSolution {
                    w,
                    iterations: iteration,
                    gradient_norm: gnorm,
                    objective_trace: trace,
                });
            }
            polished = converged;
            if iteration == MAX_ITERATIONS {
                return Err(Error::NonConvergence {
                    iterations: iteration,
                    gradient_norm: gnorm,
                    lambda,
                });
            }

            let mut weighted = self.design.clone();
            for (i, mut row) in weighted.row_iter_mut().enumerate() {
                row *= weights[i];
            }
            let mut h = self.design.tr_mul(&weighted);
            for k in 1..dim {
                h[(k, k)] += lambda;
            }
            // the intercept direction can lose all curvature under separation
            h[(0, 0)] += 1e-12 * n as f64;
            let step = match h.clone().cholesky() {
                Some(ch) => ch.solve(&g),
                None => h.lu().solve(&g).ok_or_else(|| Error::NonConvergence {
                    iterations: iteration,
                    gradient_norm: gnorm,
                    lambda,
                })?,
            };

            // near the optimum the ascent is below the rounding of the objective
            let slack = 64.0 * f64::EPSILON * (1.0 + obj.abs());
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let candidate = &w + &step * t;
                let cand_obj = self.objective(&candidate, lambda);
                if cand_obj >= obj - slack {
                    w = candidate;
                    obj = cand_obj;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted && converged {
                return Ok(RidgeSolution {
                    w,
                    iterations: iteration,
                    gradient_norm: gnorm,
                    objective_trace: trace,
                });
            }
            if !accepted {
                debug!("ridge: no ascent along Newton direction at iteration {iteration}, gradient norm {gnorm:.3e}");
                return Err(Error::NonConvergence {
                    iterations: iteration,
                    gradient_norm: gnorm,
                    lambda,
                });
            }
            trace.push(obj);
        }
        unreachable!("loop returns on its last iteration")
    }

    /// Maps a working-space solution back to an original-scale model.
    pub fn model(&self, solution: &RidgeSolution, lambda: f64) -> RidgeModel {
        let theta = solution.w.rows(1, solution.w.len() - 1).into_owned();
        let beta_std: Vec<f64> = match &self.basis {
            Some(v) => (v * theta).iter().copied().collect(),
            None => theta.iter().copied().collect(),
        };
        let coefficients: Vec<f64> = beta_std
            .iter()
            .zip(&self.scales)
            .map(|(b, s)| if s.scale > 0.0 { b / s.scale } else { 0.0 })
            .collect();
        let intercept = solution.w[0]
            - coefficients
                .iter()
                .zip(&self.scales)
                .map(|(b, s)| b * s.mean)
                .sum::<f64>();
        RidgeModel {
            intercept,
            coefficients,
            lambda,
            standardization: self.scales.clone(),
            iterations: solution.iterations,
            gradient_norm: solution.gradient_norm,
        }
    }

    pub fn fit(&self, lambda: f64) -> Result<RidgeModel> {
        let solution = self.solve(lambda, None)?;
        Ok(self.model(&solution, lambda))
    }
}

pub fn fit_ridge(x: &DMatrix<f64>, labels: &[f64], lambda: f64) -> Result<RidgeModel> {
    RidgeProblem::new(x, labels)?.fit(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, c| rng.random_range(-2.0..2.0) * (c + 1) as f64 + c as f64);
        let mut labels: Vec<f64> = (0..n).map(|i| (x[(i, 0)] + rng.random_range(-3.0..3.0) > 0.0) as u8 as f64).collect();
        labels[0] = 0.0;
        labels[1] = 1.0;
        (x, labels)
    }

    #[test]
    fn zero_model_predicts_half() {
        let model = RidgeModel {
            intercept: 0.0,
            coefficients: vec![0.0, 0.0],
            lambda: 1.0,
            standardization: vec![ColumnScale { mean: 0.0, scale: 1.0 }; 2],
            iterations: 0,
            gradient_norm: 0.0,
        };
        let x = DMatrix::from_row_slice(1, 2, &[3.0, -1.0]);
        assert_eq!(predict(&model, &x).unwrap(), vec![0.5]);
        let mut shifted = model.clone();
        shifted.intercept = 3.0f64.ln();
        assert!((predict(&shifted, &x).unwrap()[0] - 0.75).abs() < 1e-15);
        assert!(predict(&model, &DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn monotone_in_positive_coefficient() {
        let (x, c) = random_instance(3, 40, 2);
        let model = fit_ridge(&x, &c, 1.0).unwrap();
        assert!(model.coefficients[0] > 0.0);
        let lo = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let hi = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(predict(&model, &hi).unwrap()[0] > predict(&model, &lo).unwrap()[0]);
    }

    #[test]
    fn huge_penalty_gives_prevalence() {
        let (x, c) = random_instance(5, 30, 4);
        let model = fit_ridge(&x, &c, 1e8).unwrap();
        assert!(model.standardized_coefficients().iter().all(|b| b.abs() < 1e-4));
        let prevalence = c.iter().sum::<f64>() / c.len() as f64;
        for p in predict(&model, &x).unwrap() {
            assert!((p - prevalence).abs() < 1e-3);
        }
    }

    #[test]
    fn separable_column_stays_finite() {
        let x = DMatrix::from_fn(20, 1, |i, _| i as f64);
        let c: Vec<f64> = (0..20).map(|i| (i >= 10) as u8 as f64).collect();
        let model = fit_ridge(&x, &c, 0.1).unwrap();
        assert!(model.coefficients[0].is_finite() && model.intercept.is_finite());
    }

    #[test]
    fn single_class_rejected() {
        let x = DMatrix::from_element(5, 1, 1.0);
        assert!(fit_ridge(&x, &[1.0; 5], 1.0).is_err());
    }

    #[test]
    fn objective_never_decreases() {
        for seed in 0..10 {
            let (x, c) = random_instance(seed, 30, 5);
            let problem = RidgeProblem::new(&x, &c).unwrap();
            let sol = problem.solve(1e-3, None).unwrap();
            for pair in sol.objective_trace.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-12);
            }
        }
    }

    #[test]
    fn reduced_basis_matches_direct_solution() {
        // p >= n uses the row-space reduction; compare the stationarity
        // condition on the full standardised design
        let (x, c) = random_instance(11, 12, 30);
        let lambda = 0.7;
        let model = fit_ridge(&x, &c, lambda).unwrap();
        let z = DMatrix::from_fn(12, 30, |i, k| {
            let s = model.standardization[k];
            (x[(i, k)] - s.mean) / s.scale
        });
        let beta = model.standardized_coefficients();
        let b0 = model.intercept
            + model
                .coefficients
                .iter()
                .zip(&model.standardization)
                .map(|(b, s)| b * s.mean)
                .sum::<f64>();
        let (g0, g) = penalized_gradient(&z, &c, b0, &beta, lambda);
        assert!(g0.abs() < 1e-6);
        assert!(g.iter().all(|v| v.abs() < 1e-6), "{g:?}");
    }

    #[test]
    fn standardization_invariance() {
        let (x, c) = random_instance(8, 25, 3);
        let raw = fit_ridge(&x, &c, 0.5).unwrap();
        let z = DMatrix::from_fn(25, 3, |i, k| {
            let s = raw.standardization[k];
            (x[(i, k)] - s.mean) / s.scale
        });
        let std = fit_ridge(&z, &c, 0.5).unwrap();
        let a = predict(&raw, &x).unwrap();
        let b = predict(&std, &z).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_column_gets_zero_coefficient() {
        let (mut x, c) = random_instance(2, 20, 3);
        x.column_mut(1).fill(4.2);
        let model = fit_ridge(&x, &c, 1.0).unwrap();
        assert_eq!(model.coefficients[1], 0.0);
    }
}
