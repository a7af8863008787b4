//! Synthetic spectrum corpora with planted isotopic clusters.
//!
//! Cluster `q` has monoisotopic mass `m_q` and peaks at `m_q + k`
//! (`k = 0..max_peaks`) with Poisson envelope probabilities. Each sample
//! receives every cluster with probability `1 - dropout`, with a total area
//! drawn log-normally around `abundance`; cases get the cluster's
//! intensity log-fold and envelope tilt. Peaks are Gaussians of width
//! `resolution_sigma` on a uniform grid, plus baseline and clipped Gaussian
//! noise.
//!
//! Clusters sit on a lattice: slots `max_peaks + 2` Da long, each holding
//! up to six clusters whose masses differ by multiples of 1/6 Da, so peaks
//! of different clusters are never within 0.14 Da of an integer spacing.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};
use crate::spectrum_io::{write_metadata, write_spectrum, ClassLabel, RawSpectrum, SampleRecord, SampleSet, SampleTable};

/// Poisson rate per Da: averagine carbon count times the 13C abundance.
pub const ENVELOPE_RATE_PER_DA: f64 = 4.76e-4;
pub const MAX_JITTER: f64 = 0.01;
const LANES: usize = 6;
/// Gaussian peaks are rendered out to this many widths.
const RENDER_WIDTHS: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_cases: usize,
    pub n_controls: usize,
    pub n_clusters: usize,
    pub mass_range: (f64, f64),
    pub grid_step: f64,
    pub resolution_sigma: f64,
    pub noise_sd: f64,
    pub baseline: f64,
    /// Probability that a cluster is entirely absent from a sample.
    pub detect_dropout: f64,
    /// Per-cluster override of `detect_dropout`.
    pub cluster_dropout: Vec<Option<f64>>,
    /// Per-cluster log-fold added to the total area of cases; missing
    /// entries are zero.
    pub intensity_effect: Vec<f64>,
    /// Per-cluster envelope tilt `tau` for cases: `p_k exp(tau k)`,
    /// renormalised.
    pub shape_effect: Vec<f64>,
    /// Median total area of a cluster.
    pub abundance: f64,
    /// Log-scale sd of the total area per (sample, cluster).
    pub abundance_sd: f64,
    /// Log-scale sd of a per-sample factor shared by all clusters.
    pub sample_sd: f64,
    /// Log-scale sd of independent per-peak variation.
    pub peak_noise_sd: f64,
    pub max_peaks: usize,
    pub n_plates: u16,
    /// Fraction of samples (per plate and class) in the calibration set.
    pub calibration_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_cases: 10,
            n_controls: 20,
            n_clusters: 20,
            mass_range: (1500.0, 1800.0),
            grid_step: 0.002,
            resolution_sigma: 0.02,
            noise_sd: 0.0,
            baseline: 0.0,
            detect_dropout: 0.0,
            cluster_dropout: Vec::new(),
            intensity_effect: Vec::new(),
            shape_effect: Vec::new(),
            abundance: 2e6,
            abundance_sd: 0.3,
            sample_sd: 0.0,
            peak_noise_sd: 0.05,
            max_peaks: 6,
            n_plates: 1,
            calibration_fraction: 0.6,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.resolution_sigma >= 0.5 {
            return bad(format!(
                "resolution_sigma {} Da leaves neighbouring isotopes unresolved (must be < 0.5)",
                self.resolution_sigma
            ));
        }
        if !(self.resolution_sigma > 0.0) {
            return bad("resolution_sigma must be positive".into());
        }
        if !(self.grid_step > 0.0) {
            return bad("grid_step must be positive".into());
        }
        let (lo, hi) = self.mass_range;
        if !(lo > 0.0 && hi > lo) {
            return bad(format!("invalid mass range ({lo}, {hi})"));
        }
        for (name, p) in [("detect_dropout", self.detect_dropout), ("calibration_fraction", self.calibration_fraction)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if let Some(p) = self.cluster_dropout.iter().flatten().find(|p| !(0.0..=1.0).contains(*p)) {
            return bad(format!("cluster dropout {p} is not a probability"));
        }
        if self.max_peaks == 0 || self.n_plates == 0 {
            return bad("max_peaks and n_plates must be positive".into());
        }
        if self.n_cases + self.n_controls == 0 {
            return bad("no samples requested".into());
        }
        for (name, v) in [
            ("abundance_sd", self.abundance_sd),
            ("sample_sd", self.sample_sd),
            ("peak_noise_sd", self.peak_noise_sd),
            ("noise_sd", self.noise_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number"));
            }
        }
        if !(self.abundance > 0.0) {
            return bad("abundance must be positive".into());
        }
        let capacity = self.slot_count() * LANES;
        if self.n_clusters > capacity {
            return bad(format!(
                "{} clusters do not fit in {lo}..{hi} Da with {} peaks each (capacity {capacity})",
                self.n_clusters, self.max_peaks
            ));
        }
        Ok(())
    }

    fn slot_length(&self) -> f64 {
        (self.max_peaks + 2) as f64
    }

    fn slot_count(&self) -> usize {
        let (lo, hi) = self.mass_range;
        // a slot needs max_peaks - 1 Da of peaks plus render margins
        let usable = hi - lo - 2.0 - (self.max_peaks as f64 - 1.0);
        if usable < 0.0 {
            0
        } else {
            (usable / self.slot_length()).floor() as usize + 1
        }
    }

    /// Monoisotopic mass of cluster `q`.
    pub fn cluster_mass(&self, q: usize) -> f64 {
        let slot = q / LANES;
        let lane = q % LANES;
        self.mass_range.0 + 0.5 + slot as f64 * self.slot_length() + lane as f64 / LANES as f64
    }

    fn intensity_effect_of(&self, q: usize) -> f64 {
        self.intensity_effect.get(q).copied().unwrap_or(0.0)
    }

    fn shape_effect_of(&self, q: usize) -> f64 {
        self.shape_effect.get(q).copied().unwrap_or(0.0)
    }

    fn dropout_of(&self, q: usize) -> f64 {
        self.cluster_dropout.get(q).copied().flatten().unwrap_or(self.detect_dropout)
    }

    pub fn n_samples(&self) -> usize {
        self.n_cases + self.n_controls
    }
}

/// Poisson probabilities with rate `mass * 4.76e-4`, truncated to
/// `max_peaks` terms and renormalised.
pub fn isotope_envelope(mass: f64, max_peaks: usize) -> Vec<f64> {
    let rate = mass * ENVELOPE_RATE_PER_DA;
    let mut p = Vec::with_capacity(max_peaks);
    let mut term = (-rate).exp();
    for k in 0..max_peaks {
        if k > 0 {
            term *= rate / k as f64;
        }
        p.push(term);
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// `p_k exp(tau k)`, renormalised.
pub fn tilt_envelope(p: &[f64], tau: f64) -> Vec<f64> {
    let w: Vec<f64> = p.iter().enumerate().map(|(k, v)| v * (tau * k as f64).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCluster {
    pub cluster_id: u32,
    pub monoisotopic_mass: f64,
    pub envelope: Vec<f64>,
    /// Un-jittered peak positions `m + k`.
    pub positions: Vec<f64>,
    pub intensity_effect: f64,
    pub shape_effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSample {
    pub sample_id: String,
    pub class: ClassLabel,
    /// Per cluster.
    pub present: Vec<bool>,
    /// Per cluster and peak: area as rendered (zero when absent).
    pub areas: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub clusters: Vec<PlantedCluster>,
    pub samples: Vec<PlantedSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub spectra: Vec<RawSpectrum>,
    pub metadata: SampleTable,
    pub truth: GroundTruth,
}

fn planted_clusters(config: &SyntheticConfig) -> Vec<PlantedCluster> {
    (0..config.n_clusters)
        .map(|q| {
            let m = config.cluster_mass(q);
            PlantedCluster {
                cluster_id: q as u32 + 1,
                monoisotopic_mass: m,
                envelope: isotope_envelope(m, config.max_peaks),
                positions: (0..config.max_peaks).map(|k| m + k as f64).collect(),
                intensity_effect: config.intensity_effect_of(q),
                shape_effect: config.shape_effect_of(q),
            }
        })
        .collect()
}

/// Class, plate and set per sample. Cases come first; plates are dealt
/// round-robin within each class, and the first `calibration_fraction` of
/// each (plate, class) group is calibration.
fn sample_layout(config: &SyntheticConfig) -> Vec<(String, ClassLabel, u16, SampleSet)> {
    let mut out = Vec::with_capacity(config.n_samples());
    for (class, count, prefix) in [(ClassLabel::Case, config.n_cases, "case"), (ClassLabel::Control, config.n_controls, "ctrl")] {
        for k in 0..count {
            let plate = (k % config.n_plates as usize) as u16 + 1;
            let in_plate = k / config.n_plates as usize;
            let plate_size = (count + config.n_plates as usize - 1 - (plate as usize - 1)) / config.n_plates as usize;
            let cal = (in_plate as f64) < (config.calibration_fraction * plate_size as f64).round();
            let set = if cal { SampleSet::Calibration } else { SampleSet::Validation };
            out.push((format!("{prefix}{:04}", k + 1), class, plate, set));
        }
    }
    out
}

fn render_sample(
    config: &SyntheticConfig,
    clusters: &[PlantedCluster],
    sample_index: usize,
    sample_id: &str,
    class: ClassLabel,
) -> (RawSpectrum, PlantedSample) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(sample_index as u64 + 1);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (lo, hi) = config.mass_range;
    let n_points = ((hi - lo) / config.grid_step).floor() as usize + 1;
    let mz: Vec<f64> = (0..n_points).map(|k| lo + k as f64 * config.grid_step).collect();
    let mut signal = vec![0.0; n_points];

    let sigma = config.resolution_sigma;
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let reach = RENDER_WIDTHS * sigma;
    let is_case = class == ClassLabel::Case;
    let sample_factor = config.sample_sd * std_normal.sample(&mut rng);

    let mut present = Vec::with_capacity(clusters.len());
    let mut areas = Vec::with_capacity(clusters.len());
    for (q, c) in clusters.iter().enumerate() {
        // draw everything regardless of presence so streams stay aligned
        let keep = !rng.random_bool(config.dropout_of(q));
        let level = config.abundance_sd * std_normal.sample(&mut rng);
        let peak_noise: Vec<f64> = (0..c.envelope.len()).map(|_| config.peak_noise_sd * std_normal.sample(&mut rng)).collect();
        let jitter: Vec<f64> = (0..c.envelope.len()).map(|_| rng.random_range(-MAX_JITTER..=MAX_JITTER)).collect();
        if !keep {
            present.push(false);
            areas.push(vec![0.0; c.envelope.len()]);
            continue;
        }
        let (effect, envelope) = if is_case {
            (c.intensity_effect, tilt_envelope(&c.envelope, c.shape_effect))
        } else {
            (0.0, c.envelope.clone())
        };
        let total = config.abundance * (level + sample_factor + effect).exp();
        let mut peak_areas = Vec::with_capacity(envelope.len());
        for (k, pk) in envelope.iter().enumerate() {
            let area = total * pk * peak_noise[k].exp();
            let centre = c.positions[k] + jitter[k];
            let first = (((centre - reach - lo) / config.grid_step).ceil().max(0.0)) as usize;
            let last = (((centre + reach - lo) / config.grid_step).floor() as isize).min(n_points as isize - 1);
            for g in first..=(last.max(0) as usize) {
                let z = (mz[g] - centre) / sigma;
                signal[g] += area * norm * (-0.5 * z * z).exp();
            }
            peak_areas.push(area);
        }
        present.push(true);
        areas.push(peak_areas);
    }

    if config.noise_sd > 0.0 || config.baseline != 0.0 {
        let noise = Normal::new(0.0, config.noise_sd.max(0.0)).expect("finite sd");
        for v in signal.iter_mut() {
            let e = if config.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            *v = (*v + config.baseline + e).max(0.0);
        }
    }
    let spectrum = RawSpectrum::new(sample_id, mz, signal).expect("grid is strictly increasing and finite");
    (
        spectrum,
        PlantedSample {
            sample_id: sample_id.to_string(),
            class,
            present,
            areas,
        },
    )
}

/// Renders a corpus; every sample draws from its own stream of a generator
/// seeded with `config.seed`, so the output does not depend on threading.
pub fn generate_corpus(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let clusters = planted_clusters(config);
    let layout = sample_layout(config);
    let rendered: Vec<(RawSpectrum, PlantedSample)> = layout
        .par_iter()
        .enumerate()
        .map(|(i, (id, class, _, _))| render_sample(config, &clusters, i, &format!("{id}_1"), *class))
        .collect();
    let rows = layout
        .iter()
        .map(|(id, class, plate, set)| SampleRecord {
            sample_id: id.clone(),
            class: *class,
            plate: *plate,
            set: *set,
            replicate: 1,
            file: None,
        })
        .collect();
    let (spectra, samples): (Vec<_>, Vec<_>) = rendered.into_iter().unzip();
    Ok(SyntheticCorpus {
        spectra,
        metadata: SampleTable::new(rows)?,
        truth: GroundTruth { clusters, samples },
    })
}

/// Writes `spectra/<id>.csv`, `metadata.csv` and `ground_truth.json`.
pub fn write_corpus(corpus: &SyntheticCorpus, dir: &Path) -> Result<()> {
    let spectra_dir = dir.join("spectra");
    fs::create_dir_all(&spectra_dir).map_err(|e| Error::io(&spectra_dir, e))?;
    corpus
        .spectra
        .par_iter()
        .map(|s| write_spectrum(&spectra_dir.join(format!("{}.csv", s.sample_id)), s))
        .collect::<Result<Vec<_>>>()?;
    write_metadata(&dir.join("metadata.csv"), &corpus.metadata)?;
    let truth_path = dir.join("ground_truth.json");
    let json = serde_json::to_string_pretty(&corpus.truth)?;
    fs::write(&truth_path, json).map_err(|e| Error::io(&truth_path, e))
}

pub fn read_config(path: &Path) -> Result<SyntheticConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: SyntheticConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

/// Bayes AUC of the planted intensity effect, computed on the true log
/// total areas: two Gaussians with covariance
/// `abundance_sd^2 I + sample_sd^2 11'` and mean difference equal to the
/// effect vector give `Phi(d / sqrt 2)` with `d` the Mahalanobis distance.
pub fn bayes_auc_intensity(config: &SyntheticConfig) -> f64 {
    let e: Vec<f64> = (0..config.n_clusters).map(|q| config.intensity_effect_of(q)).collect();
    let a2 = config.abundance_sd.powi(2);
    let s2 = config.sample_sd.powi(2);
    let q = e.len() as f64;
    let sum: f64 = e.iter().sum();
    let sq: f64 = e.iter().map(|v| v * v).sum();
    let d2 = if a2 > 0.0 {
        (sq - s2 * sum * sum / (a2 + q * s2)) / a2
    } else if sq > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    StdNormal::standard().cdf(d2.sqrt() / std::f64::consts::SQRT_2)
}

/// Equal log-fold for `k` clusters giving Bayes AUC `target` when the
/// per-sample factor is absent.
pub fn effect_for_bayes_auc(target: f64, abundance_sd: f64, k: usize) -> f64 {
    let d = std::f64::consts::SQRT_2 * StdNormal::standard().inverse_cdf(target);
    d * abundance_sd / (k as f64).sqrt()
}
