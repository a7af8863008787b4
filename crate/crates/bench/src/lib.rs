//! Shared fixtures for the benchmarks.

use isoshape::cluster_id::PooledPeak;
use isoshape::synthgen::{generate_corpus, SyntheticConfig};
use isoshape::{detect, DetectionParams, RawSpectrum, SampleDetection};

/// Noise-free corpus with `n_samples` spectra and `n_clusters` clusters
/// over a 300 Da window.
pub fn corpus(n_samples: usize, n_clusters: usize, grid_step: f64) -> Vec<RawSpectrum> {
    let config = SyntheticConfig {
        n_cases: n_samples / 2,
        n_controls: n_samples - n_samples / 2,
        n_clusters,
        mass_range: (1500.0, 1800.0),
        grid_step,
        seed: 11,
        ..SyntheticConfig::default()
    };
    generate_corpus(&config).expect("valid benchmark config").spectra
}

pub fn detections(spectra: &[RawSpectrum]) -> Vec<SampleDetection> {
    let params = DetectionParams::default();
    spectra.iter().map(|s| detect(s, &params)).collect()
}

pub fn pool(detections: &[SampleDetection]) -> Vec<PooledPeak> {
    isoshape::pipeline::pool_peaks(detections)
}
