//! Per-sample peak detection: threshold the profile into connected
//! intervals, take each interval's apex, and keep only apexes that have an
//! isotopic neighbour one dalton away.

use serde::{Deserialize, Serialize};

use crate::spectrum_io::RawSpectrum;
use crate::stats::median;

/// Noise threshold used for the serum FTICR data.
pub const DEFAULT_THRESHOLD: f64 = 0.8e6;
pub const DEFAULT_NEIGHBOR_TOL: f64 = 0.05;
/// Isotope spacing for singly charged ions.
pub const ISOTOPE_SPACING: f64 = 1.0;

/// A maximal run of grid points whose intensity exceeds the detection
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedInterval {
    pub lo: f64,
    pub hi: f64,
    pub apex_mz: f64,
    pub apex_intensity: f64,
    /// Trapezoidal area over `[lo, hi]`.
    pub area: f64,
}

impl DetectedInterval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, mz: f64) -> bool {
        self.lo <= mz && mz <= self.hi
    }
}

/// Apexes that passed the isotope-neighbour filter, sorted by `apex_mz`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakList {
    pub sample_id: String,
    pub peaks: Vec<DetectedInterval>,
}

/// Both outputs of the detection step for one sample. The unfiltered
/// intervals are needed again when quantifying consensus peaks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleDetection {
    pub sample_id: String,
    pub intervals: Vec<DetectedInterval>,
    pub peaks: PeakList,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    pub threshold: f64,
    pub neighbor_tol: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            neighbor_tol: DEFAULT_NEIGHBOR_TOL,
        }
    }
}

/// Splits the spectrum into maximal runs of points with intensity strictly
/// above `threshold`.
///
/// Apex ties go to the lowest m/z. A single-point run has `lo == hi` and an
/// area of intensity times the local grid spacing.
pub fn threshold_intervals(spectrum: &RawSpectrum, threshold: f64) -> Vec<DetectedInterval> {
    let mz = &spectrum.mz;
    let y = &spectrum.intensity;
    let n = mz.len();
    let mut out = Vec::new();
    let mut k = 0;
    while k < n {
        if y[k] <= threshold {
            k += 1;
            continue;
        }
        let start = k;
        let mut apex = k;
        let mut area = 0.0;
        while k + 1 < n && y[k + 1] > threshold {
            area += 0.5 * (mz[k + 1] - mz[k]) * (y[k] + y[k + 1]);
            k += 1;
            if y[k] > y[apex] {
                apex = k;
            }
        }
        let end = k;
        if start == end {
            area = y[start] * local_spacing(mz, start);
        }
        out.push(DetectedInterval {
            lo: mz[start],
            hi: mz[end],
            apex_mz: mz[apex],
            apex_intensity: y[apex],
            area,
        });
        k += 1;
    }
    out
}

fn local_spacing(mz: &[f64], k: usize) -> f64 {
    let n = mz.len();
    match (k > 0, k + 1 < n) {
        (true, true) => 0.5 * (mz[k + 1] - mz[k - 1]),
        (true, false) => mz[k] - mz[k - 1],
        (false, true) => mz[k + 1] - mz[k],
        (false, false) => 0.0,
    }
}

/// Keeps intervals whose apex shifted by one dalton either way falls inside
/// another interval widened by `neighbor_tol` on each side.
pub fn isotope_filter(intervals: &[DetectedInterval], neighbor_tol: f64) -> Vec<DetectedInterval> {
    let mut order: Vec<usize> = (0..intervals.len()).collect();
    order.sort_by(|&a, &b| intervals[a].lo.total_cmp(&intervals[b].lo));
    let sorted: Vec<DetectedInterval> = order.iter().map(|&k| intervals[k]).collect();
    // running maximum of widened upper bounds makes the backward scan exact
    // even when widened intervals overlap
    let mut reach = Vec::with_capacity(sorted.len());
    let mut best = f64::NEG_INFINITY;
    for iv in &sorted {
        best = best.max(iv.hi + neighbor_tol);
        reach.push(best);
    }

    let has_neighbor = |own: usize, target: f64| -> bool {
        let end = sorted.partition_point(|iv| iv.lo - neighbor_tol <= target);
        let mut k = end;
        while k > 0 {
            k -= 1;
            if reach[k] < target {
                break;
            }
            if k != own && sorted[k].lo - neighbor_tol <= target && target <= sorted[k].hi + neighbor_tol {
                return true;
            }
        }
        false
    };

    let mut kept: Vec<DetectedInterval> = sorted
        .iter()
        .enumerate()
        .filter(|(k, iv)| {
            has_neighbor(*k, iv.apex_mz + ISOTOPE_SPACING) || has_neighbor(*k, iv.apex_mz - ISOTOPE_SPACING)
        })
        .map(|(_, iv)| *iv)
        .collect();
    kept.sort_by(|a, b| a.apex_mz.total_cmp(&b.apex_mz));
    kept
}

/// Runs thresholding and the isotope filter for one sample.
pub fn detect(spectrum: &RawSpectrum, params: &DetectionParams) -> SampleDetection {
    let intervals = threshold_intervals(spectrum, params.threshold);
    let peaks = isotope_filter(&intervals, params.neighbor_tol);
    SampleDetection {
        sample_id: spectrum.sample_id.clone(),
        intervals,
        peaks: PeakList {
            sample_id: spectrum.sample_id.clone(),
            peaks,
        },
    }
}

/// Robust noise level `median + k * 1.4826 * MAD` of the raw intensities.
///
/// This is an optional helper for choosing a threshold; the default pipeline
/// uses a fixed threshold.
pub fn estimate_noise_threshold(spectrum: &RawSpectrum, k: f64) -> f64 {
    let med = median(&spectrum.intensity);
    let deviations: Vec<f64> = spectrum.intensity.iter().map(|v| (v - med).abs()).collect();
    med + k * 1.4826 * median(&deviations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spectrum(mz: Vec<f64>, y: Vec<f64>) -> RawSpectrum {
        RawSpectrum::new("t", mz, y).unwrap()
    }

    fn grid(lo: f64, step: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| lo + step * k as f64).collect()
    }

    fn interval(lo: f64, hi: f64, apex: f64) -> DetectedInterval {
        DetectedInterval {
            lo,
            hi,
            apex_mz: apex,
            apex_intensity: 1.0,
            area: 1.0,
        }
    }

    /// Naive run scan: list of (first, last) index pairs above threshold.
    fn naive_runs(y: &[f64], threshold: f64) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut open: Option<usize> = None;
        for (k, &v) in y.iter().enumerate() {
            match (v > threshold, open) {
                (true, None) => open = Some(k),
                (false, Some(s)) => {
                    runs.push((s, k - 1));
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(s) = open {
            runs.push((s, y.len() - 1));
        }
        runs
    }

    #[test]
    fn flat_zero_spectrum_has_no_intervals() {
        let s = spectrum(grid(1500.0, 0.001, 100), vec![0.0; 100]);
        assert!(threshold_intervals(&s, DEFAULT_THRESHOLD).is_empty());
    }

    #[test]
    fn triangular_bump_apex() {
        let mz = grid(1499.9, 0.01, 21);
        let y: Vec<f64> = mz.iter().map(|x| (2e6 - 2e7 * (x - 1500.0).abs()).max(0.0)).collect();
        let s = spectrum(mz, y);
        let iv = threshold_intervals(&s, DEFAULT_THRESHOLD);
        assert_eq!(iv.len(), 1);
        assert!((iv[0].apex_mz - 1500.0).abs() < 1e-9);
        assert!(iv[0].lo < iv[0].apex_mz && iv[0].apex_mz < iv[0].hi);
        assert!(iv[0].area > 0.0);
    }

    #[test]
    fn two_bumps_match_naive_scan() {
        let mz = grid(1500.0, 0.01, 60);
        let y: Vec<f64> = (0..60)
            .map(|k| match k {
                10..=15 => 2e6 + k as f64,
                30..=31 => 5e6,
                _ => 1e5,
            })
            .collect();
        let s = spectrum(mz.clone(), y.clone());
        let iv = threshold_intervals(&s, DEFAULT_THRESHOLD);
        let runs = naive_runs(&y, DEFAULT_THRESHOLD);
        assert_eq!(iv.len(), runs.len());
        for (got, (a, b)) in iv.iter().zip(runs) {
            assert_eq!(got.lo, mz[a]);
            assert_eq!(got.hi, mz[b]);
        }
        // equal maxima at 30 and 31 resolve to the lower m/z
        assert_eq!(iv[1].apex_mz, mz[30]);
    }

    #[test]
    fn single_point_interval() {
        let mz = grid(1500.0, 0.01, 5);
        let s = spectrum(mz.clone(), vec![0.0, 0.0, 4e6, 0.0, 0.0]);
        let iv = threshold_intervals(&s, DEFAULT_THRESHOLD);
        assert_eq!(iv.len(), 1);
        assert_eq!(iv[0].lo, iv[0].hi);
        assert!((iv[0].area - 4e6 * 0.01).abs() < 1e-6);
    }

    #[test]
    fn trapezoid_area_exact_for_linear_signal() {
        let mz = grid(1500.0, 0.5, 5);
        let s = spectrum(mz, vec![2e6, 4e6, 6e6, 4e6, 2e6]);
        let iv = threshold_intervals(&s, 1e6);
        // two trapezoids of width 1 Da each
        assert!((iv[0].area - 8e6).abs() < 1e-6);
    }

    #[test]
    fn mutual_neighbors_retained() {
        let iv = vec![interval(1499.95, 1500.05, 1500.0), interval(1500.95, 1501.05, 1501.0)];
        assert_eq!(isotope_filter(&iv, DEFAULT_NEIGHBOR_TOL).len(), 2);
    }

    #[test]
    fn isolated_apex_dropped() {
        let iv = vec![interval(1999.95, 2000.05, 2000.0)];
        assert!(isotope_filter(&iv, DEFAULT_NEIGHBOR_TOL).is_empty());
    }

    #[test]
    fn two_dalton_spacing_dropped() {
        let iv = vec![interval(1499.95, 1500.05, 1500.0), interval(1501.95, 1502.05, 1502.0)];
        assert!(isotope_filter(&iv, DEFAULT_NEIGHBOR_TOL).is_empty());
    }

    #[test]
    fn tolerance_widens_containment() {
        // apex + 1 = 1501.0 misses [1501.02, 1501.1] but is within 0.05 of it
        let iv = vec![interval(1499.95, 1500.05, 1500.0), interval(1501.02, 1501.10, 1501.06)];
        assert_eq!(isotope_filter(&iv, 0.0).len(), 0);
        assert_eq!(isotope_filter(&iv, DEFAULT_NEIGHBOR_TOL).len(), 2);
    }

    #[test]
    fn noise_estimate_on_constant_signal() {
        let s = spectrum(grid(1500.0, 0.1, 10), vec![3.0; 10]);
        assert_eq!(estimate_noise_threshold(&s, 5.0), 3.0);
    }

    proptest! {
        #[test]
        fn intervals_cover_exactly_the_points_above_threshold(
            y in proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..3.0], 2..400),
            threshold in 0.1f64..2.5,
        ) {
            let mz = grid(1500.0, 0.003, y.len());
            let s = spectrum(mz.clone(), y.clone());
            let iv = threshold_intervals(&s, threshold);
            let runs = naive_runs(&y, threshold);
            prop_assert_eq!(iv.len(), runs.len());
            for (got, (a, b)) in iv.iter().zip(runs) {
                prop_assert_eq!(got.lo, mz[a]);
                prop_assert_eq!(got.hi, mz[b]);
                prop_assert!(got.area > 0.0);
                prop_assert!(got.lo <= got.apex_mz && got.apex_mz <= got.hi);
            }
        }

        #[test]
        fn filter_is_a_subset_and_keeps_mutual_pairs(
            apexes in proptest::collection::btree_set(0u32..4000, 1..60),
            half_width in 0.005f64..0.04,
        ) {
            let iv: Vec<DetectedInterval> = apexes
                .iter()
                .map(|&a| {
                    let x = 1500.0 + a as f64 * 0.25;
                    interval(x - half_width, x + half_width, x)
                })
                .collect();
            let once = isotope_filter(&iv, DEFAULT_NEIGHBOR_TOL);
            for p in &once {
                prop_assert!(iv.contains(p));
            }
            let twice = isotope_filter(&once, DEFAULT_NEIGHBOR_TOL);
            for p in &twice {
                prop_assert!(once.contains(p));
            }
            // apexes on an exact 1-Da lattice are mutual neighbours and survive
            for p in &once {
                let partner = once.iter().any(|q| ((q.apex_mz - p.apex_mz).abs() - 1.0).abs() < 1e-9);
                if partner {
                    prop_assert!(twice.contains(p));
                }
            }
        }
    }
}
