//! Residualisation of a shape column on an intensity column through a
//! natural cubic spline.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Below this many distinct intensity values a straight line is fitted.
pub const MIN_DISTINCT_FOR_SPLINE: usize = 10;
const INTERIOR_QUANTILES: [f64; 3] = [0.25, 0.5, 0.75];

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Least-squares fit of `y` on a natural cubic spline (or a line) in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineFit {
    /// Boundary and interior knots, ascending; empty for the linear fit.
    pub knots: Vec<f64>,
    pub coefficients: Vec<f64>,
}

impl SplineFit {
    pub fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Dimension {
                expected: x.len(),
                found: y.len(),
            });
        }
        if x.is_empty() {
            return Err(Error::Validation("no rows to fit".into()));
        }
        if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite value {v} in residualisation input")));
        }
        let mut sorted = x.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut distinct = sorted.clone();
        distinct.dedup();
        let knots = if distinct.len() < MIN_DISTINCT_FOR_SPLINE {
            warn!(
                "{} distinct intensity values (< {MIN_DISTINCT_FOR_SPLINE}); using a linear fit",
                distinct.len()
            );
            Vec::new()
        } else {
            let mut k = vec![sorted[0]];
            k.extend(INTERIOR_QUANTILES.iter().map(|&q| quantile(&sorted, q)));
            k.push(sorted[sorted.len() - 1]);
            k.dedup();
            k
        };
        let mut fit = Self {
            knots,
            coefficients: Vec::new(),
        };
        let design = DMatrix::from_fn(x.len(), fit.n_basis(), |i, b| fit.basis(x[i], b));
        let svd = design.svd(true, true);
        let coef = svd
            .solve(&DVector::from_column_slice(y), 1e-12)
            .map_err(|e| Error::Validation(format!("spline least squares failed: {e}")))?;
        fit.coefficients = coef.iter().copied().collect();
        Ok(fit)
    }

    fn n_basis(&self) -> usize {
        if self.knots.len() < 3 {
            2
        } else {
            self.knots.len()
        }
    }

    /// Basis `1, x, d_k(x) - d_{K-1}(x)` with
    /// `d_k(x) = ((x - t_k)_+^3 - (x - t_K)_+^3) / (t_K - t_k)`.
    fn basis(&self, x: f64, b: usize) -> f64 {
        match b {
            0 => 1.0,
            1 => x,
            _ => {
                let k = &self.knots;
                let last = k.len() - 1;
                let d = |j: usize| -> f64 {
                    let cube = |t: f64| (x - t).max(0.0).powi(3);
                    (cube(k[j]) - cube(k[last])) / (k[last] - k[j])
                };
                d(b - 2) - d(last - 1)
            }
        }
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(b, c)| c * self.basis(x, b))
            .sum()
    }
}

/// Residuals `shape - f(intensity)` for every row, with `f` fitted on
/// `fit_rows` only.
pub fn residualize_shape_on_intensity(shape: &[f64], intensity: &[f64], fit_rows: &[usize]) -> Result<Vec<f64>> {
    if shape.len() != intensity.len() {
        return Err(Error::Dimension {
            expected: shape.len(),
            found: intensity.len(),
        });
    }
    let xs: Vec<f64> = fit_rows.iter().map(|&i| intensity[i]).collect();
    let ys: Vec<f64> = fit_rows.iter().map(|&i| shape[i]).collect();
    let fit = SplineFit::fit(&xs, &ys)?;
    Ok(shape
        .iter()
        .zip(intensity)
        .map(|(s, x)| s - fit.predict(*x))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn recovers_a_natural_spline() {
        let x: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin() * 3.0 + i as f64 * 0.1).collect();
        let target = SplineFit::fit(&x, &x.iter().map(|v| v * v).collect::<Vec<_>>()).unwrap();
        let y: Vec<f64> = x.iter().map(|&v| target.predict(v)).collect();
        let r = residualize_shape_on_intensity(&y, &x, &all(60)).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn linear_beyond_boundary_knots() {
        let x: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| (v / 5.0).sin()).collect();
        let fit = SplineFit::fit(&x, &y).unwrap();
        let slope = |a: f64| fit.predict(a + 1.0) - fit.predict(a);
        assert!((slope(40.0) - slope(60.0)).abs() < 1e-9);
        assert!((slope(-20.0) - slope(-50.0)).abs() < 1e-9);
    }

    #[test]
    fn constant_intensity_centres() {
        let shape = [1.0, 2.0, 6.0];
        let r = residualize_shape_on_intensity(&shape, &[5.0; 3], &all(3)).unwrap();
        for (a, b) in r.iter().zip([-2.0, -1.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn few_distinct_values_use_a_line() {
        let x = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let y = [2.0, 4.0, 6.0, 2.0, 4.0, 6.0];
        let fit = SplineFit::fit(&x, &y).unwrap();
        assert!(fit.knots.is_empty());
        assert!((fit.predict(10.0) - 20.0).abs() < 1e-10);
    }

    #[test]
    fn held_out_rows_use_training_fit() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let mut y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        y[19] = 100.0;
        let r = residualize_shape_on_intensity(&y, &x, &all(19)).unwrap();
        assert!((r[19] - (100.0 - 38.0)).abs() < 1e-8);
    }
}
