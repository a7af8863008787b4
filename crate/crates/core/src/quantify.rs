//! Quantification of consensus peaks in every sample.
//!
//! A consensus position is detected in a sample when one of that sample's
//! threshold intervals contains it; the interval's area is the intensity.
//! Undetected peaks are coded as the raw area in a window of the typical
//! peak width centred on the consensus position, so that the intensity
//! matrix is complete and strictly positive.

use std::ops::Range;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster_id::{prune_clusters, IsotopicCluster, PruneMode};
use crate::error::{Error, Result};
use crate::peak_detection::{DetectedInterval, SampleDetection};
use crate::spectrum_io::RawSpectrum;
use crate::stats::median;

/// Relative floor applied to coded intensities (times the cluster's median
/// detected area).
pub const EPSILON_FRACTION: f64 = 1e-6;
/// Bin width (Da) of the fallback width-versus-m/z model.
pub const WIDTH_BIN: f64 = 100.0;
/// Width used when no interval of positive width exists anywhere.
pub const LAST_RESORT_WIDTH: f64 = 0.05;

/// Per sample x consensus-peak intensities and detection flags.
///
/// Peaks are laid out cluster by cluster; `cluster_range(q)` gives the
/// columns of cluster `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantifiedMatrix {
    pub samples: Vec<String>,
    pub clusters: Vec<IsotopicCluster>,
    offsets: Vec<usize>,
    y: Vec<f64>,
    detected: Vec<bool>,
    pub typical_width: Vec<f64>,
}

impl QuantifiedMatrix {
    pub fn new(
        samples: Vec<String>,
        clusters: Vec<IsotopicCluster>,
        y: Vec<f64>,
        detected: Vec<bool>,
        typical_width: Vec<f64>,
    ) -> Result<Self> {
        let offsets = offsets_of(&clusters);
        let p = *offsets.last().unwrap_or(&0);
        let n = samples.len();
        if y.len() != n * p || detected.len() != n * p {
            return Err(Error::Dimension {
                expected: n * p,
                found: y.len().min(detected.len()),
            });
        }
        if typical_width.len() != p {
            return Err(Error::Dimension {
                expected: p,
                found: typical_width.len(),
            });
        }
        if let Some(v) = y.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Validation(format!("intensity {v} is not finite and positive")));
        }
        Ok(Self {
            samples,
            clusters,
            offsets,
            y,
            detected,
            typical_width,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Total number of consensus peaks across clusters.
    pub fn n_peaks(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn cluster_range(&self, q: usize) -> Range<usize> {
        self.offsets[q]..self.offsets[q + 1]
    }

    pub fn y_row(&self, i: usize) -> &[f64] {
        let p = self.n_peaks();
        &self.y[i * p..(i + 1) * p]
    }

    pub fn detected_row(&self, i: usize) -> &[bool] {
        let p = self.n_peaks();
        &self.detected[i * p..(i + 1) * p]
    }

    pub fn y_block(&self, i: usize, q: usize) -> &[f64] {
        &self.y_row(i)[self.cluster_range(q)]
    }

    pub fn detected_block(&self, i: usize, q: usize) -> &[bool] {
        &self.detected_row(i)[self.cluster_range(q)]
    }

    pub fn y(&self, i: usize, col: usize) -> f64 {
        self.y[i * self.n_peaks() + col]
    }

    pub fn is_detected(&self, i: usize, col: usize) -> bool {
        self.detected[i * self.n_peaks() + col]
    }

    /// Whether any peak of cluster `q` was detected in sample `i`.
    pub fn cluster_detected(&self, i: usize, q: usize) -> bool {
        self.detected_block(i, q).iter().any(|&d| d)
    }

    pub fn undetected_fraction(&self) -> f64 {
        if self.detected.is_empty() {
            return 0.0;
        }
        self.detected.iter().filter(|d| !**d).count() as f64 / self.detected.len() as f64
    }

    /// Keeps the clusters flagged in `keep`, preserving order.
    pub fn retain_clusters(&self, keep: &[bool]) -> Self {
        let cols: Vec<usize> = (0..self.n_clusters())
            .filter(|&q| keep[q])
            .flat_map(|q| self.cluster_range(q))
            .collect();
        let clusters: Vec<IsotopicCluster> = self
            .clusters
            .iter()
            .zip(keep)
            .filter(|(_, k)| **k)
            .map(|(c, _)| c.clone())
            .collect();
        let mut y = Vec::with_capacity(self.n_samples() * cols.len());
        let mut detected = Vec::with_capacity(y.capacity());
        for i in 0..self.n_samples() {
            y.extend(cols.iter().map(|&c| self.y(i, c)));
            detected.extend(cols.iter().map(|&c| self.is_detected(i, c)));
        }
        Self {
            samples: self.samples.clone(),
            offsets: offsets_of(&clusters),
            clusters,
            y,
            detected,
            typical_width: cols.iter().map(|&c| self.typical_width[c]).collect(),
        }
    }

    /// Collapses replicate spectra: geometric mean of intensities, detected
    /// if any replicate detected the peak.
    pub fn average_replicates(&self, groups: &[(String, Vec<usize>)]) -> Self {
        let p = self.n_peaks();
        let mut y = Vec::with_capacity(groups.len() * p);
        let mut detected = Vec::with_capacity(groups.len() * p);
        for (_, members) in groups {
            for c in 0..p {
                let mean_log = members.iter().map(|&i| self.y(i, c).ln()).sum::<f64>() / members.len() as f64;
                y.push(mean_log.exp());
                detected.push(members.iter().any(|&i| self.is_detected(i, c)));
            }
        }
        Self {
            samples: groups.iter().map(|g| g.0.clone()).collect(),
            clusters: self.clusters.clone(),
            offsets: self.offsets.clone(),
            y,
            detected,
            typical_width: self.typical_width.clone(),
        }
    }
}

fn offsets_of(clusters: &[IsotopicCluster]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(clusters.len() + 1);
    offsets.push(0);
    for c in clusters {
        offsets.push(offsets.last().unwrap() + c.len());
    }
    offsets
}

/// Mean log intensity per peak over a set of samples, and the position of
/// its maximum within each cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalPattern {
    pub l_bar: Vec<f64>,
    /// Per cluster, the local peak index maximising `l_bar` (ties to the
    /// smallest index).
    pub argmax: Vec<usize>,
}

impl TypicalPattern {
    pub fn from_rows(qm: &QuantifiedMatrix, rows: &[usize]) -> Self {
        let p = qm.n_peaks();
        let mut l_bar = vec![0.0; p];
        for &i in rows {
            for (acc, y) in l_bar.iter_mut().zip(qm.y_row(i)) {
                *acc += y.ln();
            }
        }
        let n = rows.len() as f64;
        l_bar.iter_mut().for_each(|v| *v /= n);
        let argmax = (0..qm.n_clusters())
            .map(|q| first_argmax(&l_bar[qm.cluster_range(q)]))
            .collect();
        Self { l_bar, argmax }
    }

    pub fn y_bar(&self) -> Vec<f64> {
        self.l_bar.iter().map(|v| v.exp()).collect()
    }
}

pub(crate) fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = j;
        }
    }
    best
}

/// Log intensities together with the typical pattern over all samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMatrix {
    pub l: Vec<f64>,
    pub pattern: TypicalPattern,
}

impl LogMatrix {
    pub fn new(qm: &QuantifiedMatrix) -> Self {
        let rows: Vec<usize> = (0..qm.n_samples()).collect();
        Self {
            l: qm.y.iter().map(|v| v.ln()).collect(),
            pattern: TypicalPattern::from_rows(qm, &rows),
        }
    }
}

/// For each consensus position (flattened over clusters), the sample's
/// interval containing it, if any.
///
/// When one interval contains several positions it is assigned to the
/// position nearest its apex; the others stay undetected.
pub fn match_and_integrate(intervals: &[DetectedInterval], positions: &[f64]) -> Vec<Option<DetectedInterval>> {
    let mut sorted = intervals.to_vec();
    sorted.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let mut owner: Vec<Option<usize>> = vec![None; sorted.len()];
    let mut hit: Vec<Option<usize>> = vec![None; positions.len()];
    for (c, &x) in positions.iter().enumerate() {
        let k = sorted.partition_point(|iv| iv.lo <= x);
        if k == 0 || !sorted[k - 1].contains(x) {
            continue;
        }
        let iv = k - 1;
        hit[c] = Some(iv);
        match owner[iv] {
            None => owner[iv] = Some(c),
            Some(prev) => {
                let apex = sorted[iv].apex_mz;
                let closer = (x - apex).abs() < (positions[prev] - apex).abs();
                if closer {
                    owner[iv] = Some(c);
                }
            }
        }
    }
    hit.iter()
        .enumerate()
        .map(|(c, h)| h.filter(|&iv| owner[iv] == Some(c)).map(|iv| sorted[iv]))
        .collect()
}

/// Piecewise-constant model of interval width against m/z.
#[derive(Debug, Clone, PartialEq)]
pub struct WidthModel {
    /// (bin index, mean width), ascending by bin.
    bins: Vec<(i64, f64)>,
}

impl WidthModel {
    /// Fits bin means from `(mz, width)` pairs; non-positive widths are
    /// ignored.
    pub fn fit(points: &[(f64, f64)]) -> Self {
        let mut acc: std::collections::BTreeMap<i64, (f64, usize)> = Default::default();
        for &(mz, w) in points {
            if w > 0.0 {
                let e = acc.entry((mz / WIDTH_BIN).floor() as i64).or_insert((0.0, 0));
                e.0 += w;
                e.1 += 1;
            }
        }
        Self {
            bins: acc.into_iter().map(|(b, (s, n))| (b, s / n as f64)).collect(),
        }
    }

    /// Width for `mz`, borrowing from the nearest populated bin when its own
    /// bin is empty.
    pub fn predict(&self, mz: f64) -> Option<f64> {
        let bin = (mz / WIDTH_BIN).floor() as i64;
        self.bins
            .iter()
            .min_by_key(|(b, _)| ((b - bin).abs(), *b))
            .map(|(_, w)| *w)
    }
}

/// Mean width of the matched intervals of one consensus peak; `None` when no
/// sample detected it or all matches are single points.
pub fn typical_peak_width(matched: &[Option<DetectedInterval>]) -> Option<f64> {
    let widths: Vec<f64> = matched.iter().flatten().map(|iv| iv.width()).collect();
    if widths.is_empty() {
        return None;
    }
    let w = widths.iter().sum::<f64>() / widths.len() as f64;
    (w > 0.0).then_some(w)
}

/// Exact integral of the linearly interpolated profile over `[a, b]`,
/// restricted to the spectrum's m/z span.
pub fn integrate_window(spectrum: &RawSpectrum, a: f64, b: f64) -> f64 {
    let mz = &spectrum.mz;
    let y = &spectrum.intensity;
    let n = mz.len();
    let a = a.max(mz[0]);
    let b = b.min(mz[n - 1]);
    if a >= b {
        return 0.0;
    }
    let interp = |x: f64| -> f64 {
        let k = mz.partition_point(|&m| m <= x).clamp(1, n - 1);
        let (x0, x1) = (mz[k - 1], mz[k]);
        let t = (x - x0) / (x1 - x0);
        y[k - 1] + t * (y[k] - y[k - 1])
    };
    let first = mz.partition_point(|&m| m <= a);
    let last = mz.partition_point(|&m| m < b);
    let mut area = 0.0;
    let mut prev = (a, interp(a));
    for k in first..last {
        area += 0.5 * (mz[k] - prev.0) * (y[k] + prev.1);
        prev = (mz[k], y[k]);
    }
    area += 0.5 * (b - prev.0) * (interp(b) + prev.1);
    area
}

/// Area of the raw profile in a window of width `w` centred on `x`,
/// floored at `epsilon`.
pub fn code_undetected(spectrum: &RawSpectrum, x: f64, w: f64, epsilon: f64) -> f64 {
    integrate_window(spectrum, x - 0.5 * w, x + 0.5 * w).max(epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantifyParams {
    pub max_peaks: usize,
    pub prune_mode: PruneMode,
}

impl Default for QuantifyParams {
    fn default() -> Self {
        Self {
            max_peaks: crate::cluster_id::DEFAULT_MAX_PEAKS,
            prune_mode: PruneMode::Conjunctive,
        }
    }
}

/// Matches, integrates and codes every consensus peak in every sample.
///
/// `spectra[i]` and `detections[i]` must describe the same sample.
pub fn quantify(
    spectra: &[RawSpectrum],
    detections: &[SampleDetection],
    clusters: &[IsotopicCluster],
) -> Result<QuantifiedMatrix> {
    if spectra.len() != detections.len() {
        return Err(Error::Dimension {
            expected: spectra.len(),
            found: detections.len(),
        });
    }
    for (s, d) in spectra.iter().zip(detections) {
        if s.sample_id != d.sample_id {
            return Err(Error::Validation(format!(
                "spectrum {} paired with detections of {}",
                s.sample_id, d.sample_id
            )));
        }
    }
    let positions: Vec<f64> = clusters.iter().flat_map(|c| c.positions.iter().copied()).collect();
    let offsets = offsets_of(clusters);
    let p = positions.len();

    let matched: Vec<Vec<Option<DetectedInterval>>> = detections
        .par_iter()
        .map(|d| match_and_integrate(&d.intervals, &positions))
        .collect();

    // typical widths, with the binned model for peaks nobody detected
    let mut width: Vec<Option<f64>> = (0..p)
        .map(|c| {
            let column: Vec<Option<DetectedInterval>> = matched.iter().map(|m| m[c]).collect();
            typical_peak_width(&column)
        })
        .collect();
    if width.iter().any(Option::is_none) {
        let points: Vec<(f64, f64)> = matched
            .iter()
            .flat_map(|m| m.iter().flatten().map(|iv| (iv.apex_mz, iv.width())))
            .collect();
        let model = WidthModel::fit(&points);
        for (c, w) in width.iter_mut().enumerate() {
            if w.is_none() {
                *w = Some(model.predict(positions[c]).unwrap_or_else(|| {
                    warn!("no interval of positive width; using {LAST_RESORT_WIDTH} Da");
                    LAST_RESORT_WIDTH
                }));
            }
        }
    }
    let typical_width: Vec<f64> = width.into_iter().map(|w| w.expect("filled")).collect();

    // per-cluster epsilon floor
    let all_areas: Vec<f64> = matched.iter().flat_map(|m| m.iter().flatten().map(|iv| iv.area)).collect();
    let global_floor = {
        let m = median(&all_areas);
        if m.is_finite() && m > 0.0 {
            EPSILON_FRACTION * m
        } else {
            1e-12
        }
    };
    let epsilon: Vec<f64> = (0..clusters.len())
        .map(|q| {
            let areas: Vec<f64> = matched
                .iter()
                .flat_map(|m| m[offsets[q]..offsets[q + 1]].iter().flatten().map(|iv| iv.area))
                .collect();
            if areas.is_empty() {
                global_floor
            } else {
                EPSILON_FRACTION * median(&areas)
            }
        })
        .collect();
    let cluster_of: Vec<usize> = (0..clusters.len())
        .flat_map(|q| std::iter::repeat_n(q, clusters[q].len()))
        .collect();

    let rows: Vec<(Vec<f64>, Vec<bool>)> = spectra
        .par_iter()
        .zip(&matched)
        .map(|(spectrum, m)| {
            let mut y = Vec::with_capacity(p);
            let mut det = Vec::with_capacity(p);
            for c in 0..p {
                match m[c] {
                    Some(iv) => {
                        y.push(iv.area);
                        det.push(true);
                    }
                    None => {
                        y.push(code_undetected(spectrum, positions[c], typical_width[c], epsilon[cluster_of[c]]));
                        det.push(false);
                    }
                }
            }
            (y, det)
        })
        .collect();

    let mut y = Vec::with_capacity(spectra.len() * p);
    let mut detected = Vec::with_capacity(spectra.len() * p);
    for (ry, rd) in rows {
        y.extend(ry);
        detected.extend(rd);
    }
    QuantifiedMatrix::new(
        spectra.iter().map(|s| s.sample_id.clone()).collect(),
        clusters.to_vec(),
        y,
        detected,
        typical_width,
    )
}

/// Quantifies, then prunes suspect clusters using the typical pattern over
/// all samples.
pub fn quantify_and_prune(
    spectra: &[RawSpectrum],
    detections: &[SampleDetection],
    clusters: &[IsotopicCluster],
    params: &QuantifyParams,
) -> Result<QuantifiedMatrix> {
    let qm = quantify(spectra, detections, clusters)?;
    let logs = LogMatrix::new(&qm);
    let patterns: Vec<Vec<f64>> = (0..qm.n_clusters())
        .map(|q| logs.pattern.l_bar[qm.cluster_range(q)].to_vec())
        .collect();
    let kept = prune_clusters(&qm.clusters, params.max_peaks, &patterns, params.prune_mode);
    let keep: Vec<bool> = {
        let ids: std::collections::HashSet<u32> = kept.iter().map(|c| c.cluster_id).collect();
        qm.clusters.iter().map(|c| ids.contains(&c.cluster_id)).collect()
    };
    Ok(qm.retain_clusters(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interval(lo: f64, hi: f64, area: f64) -> DetectedInterval {
        DetectedInterval {
            lo,
            hi,
            apex_mz: 0.5 * (lo + hi),
            apex_intensity: 1.0,
            area,
        }
    }

    fn grid_spectrum(lo: f64, step: f64, n: usize, f: impl Fn(f64) -> f64) -> RawSpectrum {
        let mz: Vec<f64> = (0..n).map(|k| lo + step * k as f64).collect();
        let y = mz.iter().map(|&x| f(x)).collect();
        RawSpectrum::new("s", mz, y).unwrap()
    }

    #[test]
    fn containment_detects() {
        let m = match_and_integrate(&[interval(2020.9, 2021.3, 5.2)], &[2021.1]);
        assert_eq!(m[0].map(|iv| iv.area), Some(5.2));
    }

    #[test]
    fn no_containing_interval() {
        let m = match_and_integrate(&[interval(2020.9, 2021.3, 5.2)], &[2553.1]);
        assert!(m[0].is_none());
    }

    #[test]
    fn separate_intervals_for_neighbouring_positions() {
        let m = match_and_integrate(
            &[interval(2022.0, 2022.2, 3.0), interval(2021.0, 2021.2, 4.0)],
            &[2021.1, 2022.1],
        );
        assert_eq!(m[0].unwrap().area, 4.0);
        assert_eq!(m[1].unwrap().area, 3.0);
    }

    #[test]
    fn shared_interval_goes_to_nearer_position() {
        let iv = DetectedInterval {
            lo: 2020.0,
            hi: 2021.5,
            apex_mz: 2021.2,
            apex_intensity: 1.0,
            area: 9.0,
        };
        let m = match_and_integrate(&[iv], &[2020.1, 2021.1]);
        assert!(m[0].is_none());
        assert_eq!(m[1].unwrap().area, 9.0);
    }

    #[test]
    fn typical_width_is_mean() {
        let w = typical_peak_width(&[Some(interval(1.0, 1.10, 1.0)), None, Some(interval(1.0, 1.14, 1.0))]).unwrap();
        assert!((w - 0.12).abs() < 1e-12);
        let w = typical_peak_width(&[Some(interval(1.0, 1.08, 1.0))]).unwrap();
        assert!((w - 0.08).abs() < 1e-12);
        assert!(typical_peak_width(&[None, None]).is_none());
    }

    #[test]
    fn width_model_matches_direct_bin_means() {
        let points = [(1510.0, 0.10), (1590.0, 0.14), (1720.0, 0.2), (1799.0, 0.0), (2450.0, 0.3)];
        let model = WidthModel::fit(&points);
        // oracle: bin 15 -> mean(0.10, 0.14); bin 17 -> 0.2 (zero width ignored)
        assert!((model.predict(1555.0).unwrap() - 0.12).abs() < 1e-12);
        assert!((model.predict(1701.0).unwrap() - 0.2).abs() < 1e-12);
        // empty bin 16 borrows from the nearer/lower neighbour
        assert!((model.predict(1650.0).unwrap() - 0.12).abs() < 1e-12);
        assert!((model.predict(3000.0).unwrap() - 0.3).abs() < 1e-12);
        assert!(WidthModel::fit(&[]).predict(1500.0).is_none());
    }

    #[test]
    fn flat_noise_window_area() {
        let s = grid_spectrum(1500.0, 0.001, 2000, |_| 7.0);
        let a = code_undetected(&s, 1500.5, 0.1, 1e-9);
        assert!((a - 0.7).abs() < 1e-9);
        // window straddling a grid cell boundary at arbitrary offsets
        let a = code_undetected(&s, 1500.50037, 0.0123, 1e-9);
        assert!((a - 7.0 * 0.0123).abs() < 1e-9);
    }

    #[test]
    fn zero_signal_floors_at_epsilon() {
        let s = grid_spectrum(1500.0, 0.001, 100, |_| 0.0);
        assert_eq!(code_undetected(&s, 1500.05, 0.02, 1e-3), 1e-3);
        // fully outside the spectrum
        assert_eq!(code_undetected(&s, 2000.0, 0.02, 1e-3), 1e-3);
    }

    #[test]
    fn gaussian_window_matches_closed_form() {
        let (mu, sigma, area) = (1500.3, 0.01, 1e6);
        let s = grid_spectrum(1500.0, 0.001, 700, |x| {
            area / (sigma * (2.0 * std::f64::consts::PI).sqrt()) * (-0.5 * ((x - mu) / sigma).powi(2)).exp()
        });
        let w = 0.03;
        let got = code_undetected(&s, mu, w, 1e-9);
        let z = 0.5 * w / sigma;
        let want = area * erf(z / std::f64::consts::SQRT_2);
        assert!(((got - want) / want).abs() < 0.01, "{got} vs {want}");
    }

    /// Maclaurin series, accurate for the small arguments used here.
    fn erf(x: f64) -> f64 {
        let mut sum = 0.0;
        let mut term = x;
        let mut k = 0;
        while term.abs() > 1e-17 || k < 5 {
            sum += term / (2 * k + 1) as f64;
            k += 1;
            term *= -x * x / k as f64;
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    #[test]
    fn quantify_complete_and_positive() {
        let gauss = |mu: f64, h: f64| move |x: f64| h * (-0.5 * ((x - mu) / 0.01f64).powi(2)).exp();
        let s1 = grid_spectrum(1499.9, 0.002, 1200, |x| gauss(1500.0, 5e6)(x) + gauss(1501.0, 3e6)(x));
        let mut s2 = grid_spectrum(1499.9, 0.002, 1200, |x| gauss(1500.0, 4e6)(x) + gauss(1501.0, 1e5)(x));
        s2.sample_id = "t".into();
        let params = crate::peak_detection::DetectionParams::default();
        let d1 = crate::peak_detection::detect(&s1, &params);
        let d2 = crate::peak_detection::detect(&s2, &params);
        let cluster = IsotopicCluster {
            cluster_id: 1,
            positions: vec![1500.0, 1501.0],
            member_count: 3,
            support: vec![2, 1],
        };
        let qm = quantify(&[s1, s2], &[d1, d2], &[cluster]).unwrap();
        assert_eq!(qm.detected_block(0, 0), &[true, true]);
        assert_eq!(qm.detected_block(1, 0), &[true, false]);
        assert!(qm.y_block(1, 0).iter().all(|v| v.is_finite() && *v > 0.0));
        assert!((qm.undetected_fraction() - 0.25).abs() < 1e-12);
        let logs = LogMatrix::new(&qm);
        assert_eq!(logs.pattern.argmax, vec![0]);
        for (yb, lb) in logs.pattern.y_bar().iter().zip(&logs.pattern.l_bar) {
            assert_eq!(*yb, lb.exp());
        }
    }
}
