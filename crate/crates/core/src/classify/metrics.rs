use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, midranks, sample_sd};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub error_rate: f64,
    pub brier: f64,
    pub deviance: f64,
    /// Absent when only one class is present.
    pub auc: Option<f64>,
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Error rate (a case is predicted when p > 0.5), Brier score, deviance
/// `-2 sum log(1 - |p - c|)` and AUC.
pub fn metrics(probabilities: &[f64], labels: &[f64]) -> Result<Metrics> {
    if probabilities.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            found: probabilities.len(),
        });
    }
    if probabilities.is_empty() {
        return Err(Error::Validation("no predictions to evaluate".into()));
    }
    if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Validation(format!("probability {p} outside [0, 1]")));
    }
    let n = labels.len() as f64;
    let errors = probabilities
        .iter()
        .zip(labels)
        .filter(|(p, c)| (**p > 0.5) != (**c == 1.0))
        .count();
    let brier = compensated_sum(probabilities.iter().zip(labels).map(|(p, c)| (p - c).powi(2))) / n;
    let deviance = -2.0 * compensated_sum(probabilities.iter().zip(labels).map(|(p, c)| (1.0 - (p - c).abs()).ln()));
    let auc = auc(probabilities, labels);
    if auc.is_none() {
        warn!("AUC undefined: only one class among {} labels", labels.len());
    }
    Ok(Metrics {
        error_rate: errors as f64 / n,
        brier,
        deviance,
        auc,
    })
}

/// Mann-Whitney form of the AUC; ties count one half.
pub fn auc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let n1 = labels.iter().filter(|&&c| c == 1.0).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return None;
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, c)| **c == 1.0).map(|(r, _)| r).sum();
    let (n1, n0) = (n1 as f64, n0 as f64);
    Some((rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

/// Mean and standard error (sample sd / sqrt(R)) of each metric across
/// repetitions. AUC is averaged over the repetitions where it is defined.
pub fn average_metrics(runs: &[Metrics]) -> (Metrics, Metrics) {
    let stat = |v: Vec<f64>| -> (f64, f64) {
        let se = if v.len() > 1 { sample_sd(&v) / (v.len() as f64).sqrt() } else { f64::NAN };
        (mean(&v), se)
    };
    let (e, e_se) = stat(runs.iter().map(|m| m.error_rate).collect());
    let (b, b_se) = stat(runs.iter().map(|m| m.brier).collect());
    let (d, d_se) = stat(runs.iter().map(|m| m.deviance).collect());
    let aucs: Vec<f64> = runs.iter().filter_map(|m| m.auc).collect();
    let (a, a_se) = if aucs.is_empty() { (None, None) } else {
        let (a, s) = stat(aucs);
        (Some(a), Some(s))
    };
    (
        Metrics { error_rate: e, brier: b, deviance: d, auc: a },
        Metrics { error_rate: e_se, brier: b_se, deviance: d_se, auc: a_se },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let c = [1.0, 0.0, 1.0, 0.0];
        let p: Vec<f64> = c.iter().map(|v| v * (1.0 - 2e-12) + 1e-12).collect();
        let m = metrics(&p, &c).unwrap();
        assert!(m.brier < 1e-20 && m.deviance < 1e-10);
        assert_eq!(m.auc, Some(1.0));
        assert_eq!(m.error_rate, 0.0);
    }

    #[test]
    fn coin_flip_deviance() {
        for n in [1usize, 2, 3, 7, 10, 90, 101, 1000] {
            let c: Vec<f64> = (0..n).map(|i| (i % 3 == 0) as u8 as f64).collect();
            let m = metrics(&vec![0.5; n], &c).unwrap();
            assert_eq!(m.deviance, 2.0 * n as f64 * std::f64::consts::LN_2, "n = {n}");
            let cases = c.iter().sum::<f64>();
            assert_eq!(m.error_rate, cases / n as f64, "ties at 0.5 classify as control");
        }
    }

    #[test]
    fn auc_pair_counting() {
        let p = [0.1, 0.4, 0.35, 0.8, 0.4];
        let c = [0.0, 0.0, 1.0, 1.0, 1.0];
        // pairs (case, control): (0.35 vs 0.1) 1, (0.35 vs 0.4) 0, (0.8,*) 2, (0.4 vs 0.1) 1, (0.4 vs 0.4) 0.5
        assert!((auc(&p, &c).unwrap() - 4.5 / 6.0).abs() < 1e-15);
        assert_eq!(auc(&p, &[1.0; 5]), None);
    }

    #[test]
    fn repetition_average() {
        let runs = [
            Metrics { error_rate: 0.1, brier: 0.2, deviance: 3.0, auc: Some(0.8) },
            Metrics { error_rate: 0.3, brier: 0.2, deviance: 5.0, auc: Some(0.6) },
        ];
        let (m, se) = average_metrics(&runs);
        assert!((m.error_rate - 0.2).abs() < 1e-15 && (m.auc.unwrap() - 0.7).abs() < 1e-15);
        assert!((se.deviance - 1.0).abs() < 1e-12);
        assert_eq!(se.brier, 0.0);
    }
}
