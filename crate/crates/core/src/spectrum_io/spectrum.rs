use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{split_fields, Delimiter};
use crate::error::{Error, Result};

/// Inclusive m/z window accepted by the instrument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MzRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for MzRange {
    fn default() -> Self {
        Self {
            lo: 1013.0,
            hi: 3700.0,
        }
    }
}

impl MzRange {
    pub fn contains(&self, mz: f64) -> bool {
        mz >= self.lo && mz <= self.hi
    }
}

/// One sample's profile spectrum on its native m/z grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSpectrum {
    pub sample_id: String,
    pub mz: Vec<f64>,
    pub intensity: Vec<f64>,
}

impl RawSpectrum {
    /// Builds a validated spectrum, sorting the points by m/z.
    pub fn new(sample_id: impl Into<String>, mz: Vec<f64>, intensity: Vec<f64>) -> Result<Self> {
        let sample_id = sample_id.into();
        if mz.len() != intensity.len() {
            return Err(Error::Validation(format!(
                "{sample_id}: {} m/z values but {} intensities",
                mz.len(),
                intensity.len()
            )));
        }
        if mz.len() < 2 {
            return Err(Error::Validation(format!(
                "{sample_id}: spectrum needs at least 2 points, found {}",
                mz.len()
            )));
        }
        let mut points: Vec<(f64, f64)> = mz.into_iter().zip(intensity).collect();
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        for (k, &(x, y)) in points.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::Validation(format!("{sample_id}: non-finite m/z value {x}")));
            }
            if !y.is_finite() || y < 0.0 {
                return Err(Error::Validation(format!(
                    "{sample_id}: intensity {y} at m/z {x} is negative or non-finite"
                )));
            }
            if k > 0 && points[k - 1].0 == x {
                return Err(Error::Validation(format!("{sample_id}: duplicated m/z value {x}")));
            }
        }
        let (mz, intensity) = points.into_iter().unzip();
        Ok(Self {
            sample_id,
            mz,
            intensity,
        })
    }

    pub fn len(&self) -> usize {
        self.mz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mz.is_empty()
    }

    /// Rejects spectra with points outside `range`.
    pub fn check_range(&self, range: MzRange) -> Result<()> {
        let first = self.mz[0];
        let last = self.mz[self.mz.len() - 1];
        if !range.contains(first) || !range.contains(last) {
            return Err(Error::Validation(format!(
                "{}: m/z span [{first}, {last}] leaves instrument range [{}, {}]",
                self.sample_id, range.lo, range.hi
            )));
        }
        Ok(())
    }
}

/// Reads a two-column (m/z, intensity) delimited text file.
///
/// The sample id is the file stem. A first line without any numeric field is
/// treated as a header.
pub fn parse_spectrum(path: &Path) -> Result<RawSpectrum> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sample_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_spectrum_text(&text, sample_id, path)
}

pub(crate) fn parse_spectrum_text(text: &str, sample_id: String, path: &Path) -> Result<RawSpectrum> {
    let delimiter = Delimiter::detect(text);
    let mut mz = Vec::new();
    let mut intensity = Vec::new();
    let mut seen_data = false;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = split_fields(trimmed, delimiter);
        let parsed: Vec<Option<f64>> = fields.iter().map(|f| f.parse::<f64>().ok()).collect();
        if !seen_data && parsed.iter().all(Option::is_none) {
            // header
            seen_data = true;
            continue;
        }
        seen_data = true;
        if fields.len() != 2 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 2 columns (m/z, intensity), found {}", fields.len()),
            ));
        }
        match (parsed[0], parsed[1]) {
            (Some(x), Some(y)) => {
                mz.push(x);
                intensity.push(y);
            }
            _ => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("non-numeric value in '{trimmed}'"),
                ))
            }
        }
    }
    RawSpectrum::new(sample_id, mz, intensity)
}

/// Writes `mz,intensity` with shortest round-trip float formatting.
pub fn write_spectrum(path: &Path, spectrum: &RawSpectrum) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        writeln!(out, "mz,intensity")?;
        for (x, y) in spectrum.mz.iter().zip(&spectrum.intensity) {
            writeln!(out, "{x},{y}")?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}
