//! Small numeric helpers shared across modules.

use std::cmp::Ordering;

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Median of a slice; NaN for empty input.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    }
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// One-based ranks with ties replaced by the average of the ranks they span.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

/// Midrank of `value` relative to an ascending reference sample.
///
/// When `member` is true the value is assumed to already be one of the
/// reference entries; otherwise it is inserted as an additional observation.
pub fn midrank_in(sorted_reference: &[f64], value: f64, member: bool) -> f64 {
    let less = sorted_reference.partition_point(|&r| r.total_cmp(&value) == Ordering::Less);
    let less_or_equal =
        sorted_reference.partition_point(|&r| r.total_cmp(&value) != Ordering::Greater);
    let equal = (less_or_equal - less) as f64;
    if member {
        less as f64 + (equal + 1.0) / 2.0
    } else {
        less as f64 + 1.0 + equal / 2.0
    }
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + exp(x))` without overflow.
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Pearson correlation; NaN when either side is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[5.0, 3.0, 3.0, 1.0]), vec![4.0, 2.5, 2.5, 1.0]);
        assert_eq!(midranks(&[2.0, 2.0, 2.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn midrank_insertion_matches_full_ranking() {
        let reference = [1.0, 3.0, 3.0, 5.0];
        // inserting a 3.0 makes three tied values at positions 2..=4
        assert_eq!(midrank_in(&reference, 3.0, false), 3.0);
        assert_eq!(midrank_in(&reference, 3.0, true), 2.5);
        assert_eq!(midrank_in(&reference, 0.0, false), 1.0);
        assert_eq!(midrank_in(&reference, 9.0, false), 5.0);
    }

    #[test]
    fn logistic_is_stable() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(3.0f64.ln()) - 0.75).abs() < 1e-15);
        assert!(logistic(-800.0) >= 0.0);
        assert!((log1p_exp(800.0) - 800.0).abs() < 1e-12);
    }
}
