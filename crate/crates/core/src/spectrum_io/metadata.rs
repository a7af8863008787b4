use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Delimiter;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Control,
    Case,
}

impl ClassLabel {
    pub fn as_f64(self) -> f64 {
        match self {
            ClassLabel::Case => 1.0,
            ClassLabel::Control => 0.0,
        }
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "case" => Ok(ClassLabel::Case),
            "control" => Ok(ClassLabel::Control),
            other => Err(Error::Validation(format!(
                "unknown class label '{other}' (allowed: case, control)"
            ))),
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassLabel::Case => "case",
            ClassLabel::Control => "control",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSet {
    Calibration,
    Validation,
}

impl FromStr for SampleSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "calibration" => Ok(SampleSet::Calibration),
            "validation" => Ok(SampleSet::Validation),
            other => Err(Error::Validation(format!(
                "unknown set '{other}' (allowed: calibration, validation)"
            ))),
        }
    }
}

impl fmt::Display for SampleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleSet::Calibration => "calibration",
            SampleSet::Validation => "validation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub class: ClassLabel,
    pub plate: u16,
    pub set: SampleSet,
    pub replicate: u16,
    /// Spectrum file name relative to the spectra directory, when the table
    /// carries an explicit `file` column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

impl SampleRecord {
    /// Identifier of this record's spectrum: the file stem, which is also the
    /// `sample_id` carried by the parsed [`RawSpectrum`](super::RawSpectrum).
    pub fn spectrum_id(&self) -> String {
        match &self.file {
            Some(f) => Path::new(f)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| f.clone()),
            None => format!("{}_{}", self.sample_id, self.replicate),
        }
    }

    pub fn spectrum_file(&self) -> String {
        self.file
            .clone()
            .unwrap_or_else(|| format!("{}.csv", self.spectrum_id()))
    }
}

/// Cohort table: one row per spectrum (sample x replicate).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleTable {
    pub rows: Vec<SampleRecord>,
}

impl SampleTable {
    pub fn new(rows: Vec<SampleRecord>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("no rows".into()));
        }
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert((r.sample_id.as_str(), r.replicate)) {
                return Err(Error::Validation(format!(
                    "duplicate (sample_id, replicate) = ({}, {})",
                    r.sample_id, r.replicate
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn class_counts(&self) -> BTreeMap<ClassLabel, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.rows {
            *counts.entry(r.class).or_insert(0) += 1;
        }
        counts
    }

    pub fn find_spectrum(&self, spectrum_id: &str) -> Option<&SampleRecord> {
        self.rows.iter().find(|r| r.spectrum_id() == spectrum_id)
    }

    /// Resolves every row's spectrum file under `dir`, failing on the first
    /// missing one.
    pub fn spectrum_paths(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        self.rows
            .iter()
            .map(|r| {
                let p = dir.join(r.spectrum_file());
                if p.is_file() {
                    Ok(p)
                } else {
                    Err(Error::Validation(format!(
                        "spectrum file for sample {} replicate {} not found: {}",
                        r.sample_id,
                        r.replicate,
                        p.display()
                    )))
                }
            })
            .collect()
    }
}

const REQUIRED: [&str; 5] = ["sample_id", "class", "plate", "set", "replicate"];

pub fn parse_metadata(path: &Path) -> Result<SampleTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metadata_text(&text, path)
}

pub(crate) fn parse_metadata_text(text: &str, path: &Path) -> Result<SampleTable> {
    if text.trim().is_empty() {
        return Err(Error::Validation("no rows".into()));
    }
    let delimiter = Delimiter::detect(text);
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter.byte())
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(REQUIRED) {
        *slot = column(name).ok_or_else(|| {
            Error::parse(path, 1, format!("header lacks column '{name}' (expected {})", REQUIRED.join(",")))
        })?;
    }
    let file_col = column("file");

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |k: usize| record.get(k).unwrap_or("");
        let int = |k: usize, name: &str| -> Result<u16> {
            field(k)
                .parse::<u16>()
                .map_err(|_| Error::parse(path, line, format!("{name} '{}' is not a small integer", field(k))))
        };
        let sample_id = field(idx[0]).to_string();
        if sample_id.is_empty() {
            return Err(Error::parse(path, line, "empty sample_id"));
        }
        rows.push(SampleRecord {
            sample_id,
            class: field(idx[1]).parse()?,
            plate: int(idx[2], "plate")?,
            set: field(idx[3]).parse()?,
            replicate: int(idx[4], "replicate")?,
            file: file_col.map(|k| field(k).to_string()).filter(|f| !f.is_empty()),
        });
    }
    SampleTable::new(rows)
}

pub fn write_metadata(path: &Path, table: &SampleTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let with_file = table.rows.iter().any(|r| r.file.is_some());
    let mut header = REQUIRED.to_vec();
    if with_file {
        header.push("file");
    }
    w.write_record(&header)?;
    for r in &table.rows {
        let mut rec = vec![
            r.sample_id.clone(),
            r.class.to_string(),
            r.plate.to_string(),
            r.set.to_string(),
            r.replicate.to_string(),
        ];
        if with_file {
            rec.push(r.file.clone().unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SampleTable> {
        parse_metadata_text(text, Path::new("meta.csv"))
    }

    #[test]
    fn counts_by_class() {
        let t = parse(
            "sample_id,class,plate,set,replicate\n\
             a,case,1,calibration,1\n\
             b,control,1,calibration,1\n\
             c,control,1,validation,1\n",
        )
        .unwrap();
        let counts = t.class_counts();
        assert_eq!(counts[&ClassLabel::Case], 1);
        assert_eq!(counts[&ClassLabel::Control], 2);
        assert_eq!(t.rows[0].spectrum_id(), "a_1");
    }

    #[test]
    fn unknown_label_lists_allowed() {
        let err = parse("sample_id,class,plate,set,replicate\na,patient,1,calibration,1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("case") && msg.contains("control"), "{msg}");
    }

    #[test]
    fn empty_file() {
        assert_eq!(parse("").unwrap_err().to_string(), "validation failed: no rows");
        assert!(parse("sample_id,class,plate,set,replicate\n").unwrap_err().to_string().contains("no rows"));
    }

    #[test]
    fn duplicate_replicate_rejected() {
        let err = parse(
            "sample_id,class,plate,set,replicate\na,case,1,calibration,1\na,case,1,calibration,1\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        // a second replicate of the same sample is fine
        parse("sample_id,class,plate,set,replicate\na,case,1,calibration,1\na,case,1,calibration,2\n").unwrap();
    }

    #[test]
    fn tab_delimited_with_file_column() {
        let t = parse("sample_id\tclass\tplate\tset\treplicate\tfile\nx\tCASE\t2\tvalidation\t1\tx.txt\n").unwrap();
        assert_eq!(t.rows[0].class, ClassLabel::Case);
        assert_eq!(t.rows[0].spectrum_id(), "x");
        assert_eq!(t.rows[0].spectrum_file(), "x.txt");
    }

    #[test]
    fn missing_spectrum_file_detected() {
        let dir = tempfile::tempdir().unwrap();
        let t = parse("sample_id,class,plate,set,replicate\na,case,1,calibration,1\n").unwrap();
        assert!(t.spectrum_paths(dir.path()).is_err());
        std::fs::write(dir.path().join("a_1.csv"), "1,1\n2,2\n").unwrap();
        assert_eq!(t.spectrum_paths(dir.path()).unwrap().len(), 1);
    }
}
