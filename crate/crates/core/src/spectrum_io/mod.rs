//! Reading spectra and cohort metadata, and writing every pipeline artifact
//! as delimited text.
//!
//! All writers emit a fixed header line and format floats with Rust's
//! shortest round-trip representation, so reading a file back reproduces the
//! stored `f64` values exactly.

mod metadata;
mod spectrum;
mod tables;

pub use metadata::{
    parse_metadata, write_metadata, ClassLabel, SampleRecord, SampleSet, SampleTable,
};
pub use spectrum::{parse_spectrum, write_spectrum, MzRange, RawSpectrum};
pub use tables::{
    read_clusters, read_feature_matrix, read_intervals, read_quantified, write_cluster_summary,
    write_clusters, write_feature_matrix, write_intervals, write_probabilities, write_quantified,
    ClusterFileHeader,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Delimiter {
    Comma,
    Tab,
    Semicolon,
    Whitespace,
}

impl Delimiter {
    /// Picks the delimiter from the first non-comment line.
    pub(crate) fn detect(text: &str) -> Self {
        let line = text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty() && !l.starts_with('#'))
            .unwrap_or("");
        if line.contains('\t') {
            Delimiter::Tab
        } else if line.contains(';') {
            Delimiter::Semicolon
        } else if line.contains(',') {
            Delimiter::Comma
        } else {
            Delimiter::Whitespace
        }
    }

    pub(crate) fn byte(self) -> u8 {
        match self {
            Delimiter::Comma => b',',
            Delimiter::Tab => b'\t',
            Delimiter::Semicolon => b';',
            Delimiter::Whitespace => b' ',
        }
    }
}

pub(crate) fn split_fields(line: &str, delimiter: Delimiter) -> Vec<&str> {
    match delimiter {
        Delimiter::Whitespace => line.split_whitespace().collect(),
        d => line.split(d.byte() as char).map(str::trim).collect(),
    }
}
