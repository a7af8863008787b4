//! Shape summaries of one cluster's intensity pattern in one sample.
//!
//! Every function here works on a single per-cluster sequence `x_1..x_J`.
//! The residual-based sequences `s` and `r` come from [`shape_residuals`],
//! which removes the sample's overall level relative to the typical pattern.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::stats::midranks;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeResiduals {
    /// Log-scale offset: mean of `l_j - l_bar_j`.
    pub alpha: f64,
    /// `exp(alpha)`, the geometric mean of `y_j / y_bar_j`.
    pub beta: f64,
    pub s: Vec<f64>,
    pub r: Vec<f64>,
}

/// Least-squares level alignment of a log pattern `l` to `l_bar`.
pub fn shape_residuals(l: &[f64], l_bar: &[f64]) -> ShapeResiduals {
    let diff: Vec<f64> = l.iter().zip(l_bar).map(|(a, b)| a - b).collect();
    let alpha = diff.iter().sum::<f64>() / diff.len() as f64;
    let s: Vec<f64> = diff.iter().map(|d| d - alpha).collect();
    let r = s.iter().map(|v| v.exp()).collect();
    ShapeResiduals {
        alpha,
        beta: alpha.exp(),
        s,
        r,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairSelection {
    #[default]
    Consecutive,
    /// The two positions with the largest typical intensity.
    TopTwo,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    Ratio,
    Difference,
}

/// Index pairs `(j, j')` (zero-based) selected for pairwise measures.
///
/// `y_bar` is needed for [`PairSelection::TopTwo`] only. Fewer than two
/// positions yields no pairs.
pub fn select_pairs(j_count: usize, selection: PairSelection, y_bar: &[f64]) -> Vec<(usize, usize)> {
    if j_count < 2 {
        return Vec::new();
    }
    match selection {
        PairSelection::Consecutive => (0..j_count - 1).map(|j| (j, j + 1)).collect(),
        PairSelection::All => (0..j_count)
            .flat_map(|j| (j + 1..j_count).map(move |k| (j, k)))
            .collect(),
        PairSelection::TopTwo => {
            let mut order: Vec<usize> = (0..j_count).collect();
            order.sort_by(|&a, &b| y_bar[b].total_cmp(&y_bar[a]).then(a.cmp(&b)));
            vec![(order[0], order[1])]
        }
    }
}

/// Pairwise ratios `x_j / x_j'` or differences `x_j - x_j'`.
pub fn pairwise_measure(x: &[f64], pairs: &[(usize, usize)], mode: PairMode) -> Vec<f64> {
    pairs
        .iter()
        .map(|&(a, b)| match mode {
            PairMode::Ratio => x[a] / x[b],
            PairMode::Difference => x[a] - x[b],
        })
        .collect()
}

/// Midranks `R_1..R_J` of the sequence.
pub fn rank_vector(x: &[f64]) -> Vec<f64> {
    midranks(x)
}

/// Inverse ranks listed from the mode downward: `R^-1(J), R^-1(J-1), ...,
/// R^-1(1)`, as one-based positions.
///
/// The ordering is by decreasing value with ties in ascending position, so
/// the mode of a tied maximum is its smallest position.
pub fn inverse_rank_vector(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    order.into_iter().map(|j| (j + 1) as f64).collect()
}

/// `R^-1(J)`: one-based position of the pattern's mode.
pub fn mode_location(x: &[f64]) -> f64 {
    inverse_rank_vector(x)[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionShape {
    pub cg: f64,
    pub spread: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

/// Moments of the distribution on `{1..J}` with masses proportional to `x`.
///
/// `x` must be positive.
pub fn distribution_shape(x: &[f64]) -> DistributionShape {
    let total: f64 = x.iter().sum();
    let p: Vec<f64> = x.iter().map(|v| v / total).collect();
    let cg: f64 = p.iter().enumerate().map(|(j, pj)| (j + 1) as f64 * pj).sum();
    let moment = |k: i32| -> f64 {
        p.iter()
            .enumerate()
            .map(|(j, pj)| ((j + 1) as f64 - cg).powi(k) * pj)
            .sum()
    };
    let var = moment(2);
    let (skewness, kurtosis) = if var > 0.0 {
        (moment(3) / var.powf(1.5), moment(4) / (var * var))
    } else {
        debug!("zero spread in distribution shape; reporting skewness and kurtosis as 0");
        (0.0, 0.0)
    };
    DistributionShape {
        cg,
        spread: var.sqrt(),
        skewness,
        kurtosis,
    }
}

/// Linear and quadratic coefficients of the fit
/// `x_j = a + b (j - J_bar) + c (j - J_bar)^2` with `J_bar = (J + 1) / 2`.
///
/// Returns `None` for fewer than three points.
pub fn polynomial_shape(x: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 3 {
        return None;
    }
    let centre = (n as f64 + 1.0) / 2.0;
    let u: Vec<f64> = (1..=n).map(|j| j as f64 - centre).collect();
    let s2: f64 = u.iter().map(|v| v * v).sum();
    let s4: f64 = u.iter().map(|v| v.powi(4)).sum();
    let sx: f64 = x.iter().sum();
    let sux: f64 = u.iter().zip(x).map(|(a, b)| a * b).sum();
    let su2x: f64 = u.iter().zip(x).map(|(a, b)| a * a * b).sum();
    // u is symmetric about zero, so the odd sums vanish and the linear term
    // decouples from the intercept/quadratic pair
    let linear = sux / s2;
    let det = n as f64 * s4 - s2 * s2;
    let quadratic = (n as f64 * su2x - s2 * sx) / det;
    Some((linear, quadratic))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residuals_identity_case() {
        let l = [1.0, 2.0, 0.5];
        let res = shape_residuals(&l, &l);
        assert_eq!(res.alpha, 0.0);
        assert!(res.s.iter().all(|v| *v == 0.0));
        assert!(res.r.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn residuals_pure_scaling() {
        let y_bar: [f64; 3] = [3.0, 7.0, 2.0];
        let l_bar: Vec<f64> = y_bar.iter().map(|v| v.ln()).collect();
        let l: Vec<f64> = y_bar.iter().map(|v| (2.0 * v).ln()).collect();
        let res = shape_residuals(&l, &l_bar);
        assert!((res.beta - 2.0).abs() < 1e-12);
        assert!(res.r.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn residuals_symmetric_difference() {
        let res = shape_residuals(&[1.0, -1.0], &[0.0, 0.0]);
        assert_eq!(res.alpha, 0.0);
        assert_eq!(res.s, vec![1.0, -1.0]);
    }

    #[test]
    fn consecutive_ratios() {
        let pairs = select_pairs(3, PairSelection::Consecutive, &[]);
        assert_eq!(pairwise_measure(&[4.0, 2.0, 1.0], &pairs, PairMode::Ratio), vec![2.0, 2.0]);
    }

    #[test]
    fn constant_pattern_pairs() {
        let pairs = select_pairs(4, PairSelection::All, &[]);
        assert_eq!(pairs.len(), 6);
        assert!(pairwise_measure(&[3.0; 4], &pairs, PairMode::Ratio).iter().all(|v| *v == 1.0));
        assert!(pairwise_measure(&[3.0; 4], &pairs, PairMode::Difference).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn top_two_follows_typical_pattern() {
        let pairs = select_pairs(3, PairSelection::TopTwo, &[1.0, 5.0, 3.0]);
        assert_eq!(pairs, vec![(1, 2)]);
        let x = [10.0, 6.0, 4.0];
        assert_eq!(pairwise_measure(&x, &pairs, PairMode::Ratio), vec![1.5]);
        assert!(select_pairs(1, PairSelection::Consecutive, &[]).is_empty());
    }

    #[test]
    fn ranks_and_mode() {
        let x = [0.2, 0.9, 0.5];
        assert_eq!(rank_vector(&x), vec![1.0, 3.0, 2.0]);
        assert_eq!(mode_location(&x), 2.0);
        assert_eq!(inverse_rank_vector(&x), vec![2.0, 3.0, 1.0]);
        let inc = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(rank_vector(&inc), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mode_location(&inc), 4.0);
        assert_eq!(mode_location(&[1.0, 5.0, 2.0, 5.0]), 2.0);
    }

    #[test]
    fn inverse_ranks_invert_tie_free_ranks() {
        let x = [0.3, 0.1, 0.7, 0.5];
        let ranks = rank_vector(&x);
        let inv = inverse_rank_vector(&x);
        let j_count = x.len();
        for (k, pos) in inv.iter().enumerate() {
            // inv[k] = R^-1(J - k)
            assert_eq!(ranks[*pos as usize - 1], (j_count - k) as f64);
        }
    }

    #[test]
    fn uniform_distribution_moments() {
        let d = distribution_shape(&[1.0, 1.0, 1.0]);
        assert!((d.cg - 2.0).abs() < 1e-12);
        assert!((d.spread - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(d.skewness.abs() < 1e-12);
        assert!((d.kurtosis - 1.5).abs() < 1e-12);
        let d = distribution_shape(&[1.0, 2.0, 1.0]);
        assert!((d.cg - 2.0).abs() < 1e-12 && d.skewness.abs() < 1e-12);
    }

    #[test]
    fn polynomial_exact_fits() {
        assert_eq!(polynomial_shape(&[1.0, 2.0, 3.0]), Some((1.0, 0.0)));
        assert_eq!(polynomial_shape(&[1.0, 0.0, 1.0]), Some((0.0, 1.0)));
        assert_eq!(polynomial_shape(&[2.5; 5]), Some((0.0, 0.0)));
        assert_eq!(polynomial_shape(&[1.0, 2.0]), None);
    }

    #[test]
    fn polynomial_matches_normal_equations() {
        // generic least squares on J = 5 via the 3x3 normal equations
        let x = [0.3, 1.7, 2.2, 1.1, -0.4];
        let (b, c) = polynomial_shape(&x).unwrap();
        let u: Vec<f64> = (1..=5).map(|j| j as f64 - 3.0).collect();
        let design = nalgebra::DMatrix::from_fn(5, 3, |i, k| u[i].powi(k as i32));
        let target = nalgebra::DVector::from_column_slice(&x);
        let coef = (design.transpose() * &design).lu().solve(&(design.transpose() * target)).unwrap();
        assert!((coef[1] - b).abs() < 1e-12 && (coef[2] - c).abs() < 1e-12);
    }
}
