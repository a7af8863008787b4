//! Delimited-text artifacts passed between pipeline stages.
//!
//! Tables may start with `# key=value` comment lines carrying metadata.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::classify::SamplePrediction;
use crate::cluster_id::{ClusterParams, IsotopicCluster, PruneMode};
use crate::error::{Error, Result};
use crate::measures::{Basis, ColumnDescriptor, FeatureMatrix};
use crate::peak_detection::DetectedInterval;
use crate::quantify::{QuantifiedMatrix, TypicalPattern};

struct Table {
    meta: BTreeMap<String, String>,
    headers: Vec<String>,
    rows: Vec<(usize, csv::StringRecord)>,
}

impl Table {
    fn column(&self, path: &Path, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::parse(path, 1, format!("missing column '{name}'")))
    }
}

fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut meta = BTreeMap::new();
    for line in text.lines().map(str::trim).take_while(|l| l.is_empty() || l.starts_with('#')) {
        if let Some((k, v)) = line.trim_start_matches('#').split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        rows.push((line, record));
    }
    Ok(Table { meta, headers, rows })
}

fn field<T: FromStr>(path: &Path, line: usize, record: &csv::StringRecord, col: usize, name: &str) -> Result<T> {
    let raw = record.get(col).unwrap_or("");
    raw.parse()
        .map_err(|_| Error::parse(path, line, format!("invalid {name} '{raw}'")))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(file))
}

fn finish(path: &Path, writer: csv::Writer<BufWriter<fs::File>>) -> Result<()> {
    let mut inner = writer.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

fn comments(path: &Path, out: &mut BufWriter<fs::File>, meta: &[(&str, String)]) -> Result<()> {
    for (k, v) in meta {
        writeln!(out, "# {k}={v}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Writes one sample's threshold intervals.
pub fn write_intervals(path: &Path, sample_id: &str, intervals: &[DetectedInterval]) -> Result<()> {
    let mut out = create(path)?;
    comments(path, &mut out, &[("sample_id", sample_id.to_string())])?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lo", "hi", "apex_mz", "apex_intensity", "area"])?;
    for iv in intervals {
        w.write_record([iv.lo, iv.hi, iv.apex_mz, iv.apex_intensity, iv.area].map(|v| v.to_string()))?;
    }
    finish(path, w)
}

/// Reads a file written by [`write_intervals`]; returns the sample id and
/// its intervals.
pub fn read_intervals(path: &Path) -> Result<(String, Vec<DetectedInterval>)> {
    let t = read_table(path)?;
    let sample_id = t
        .meta
        .get("sample_id")
        .cloned()
        .ok_or_else(|| Error::parse(path, 1, "missing '# sample_id=' line"))?;
    let cols = ["lo", "hi", "apex_mz", "apex_intensity", "area"]
        .map(|c| t.column(path, c));
    let [lo, hi, apex_mz, apex_intensity, area] = cols;
    let (lo, hi, apex_mz, apex_intensity, area) = (lo?, hi?, apex_mz?, apex_intensity?, area?);
    let intervals = t
        .rows
        .iter()
        .map(|(line, r)| {
            Ok(DetectedInterval {
                lo: field(path, *line, r, lo, "lo")?,
                hi: field(path, *line, r, hi, "hi")?,
                apex_mz: field(path, *line, r, apex_mz, "apex_mz")?,
                apex_intensity: field(path, *line, r, apex_intensity, "apex_intensity")?,
                area: field(path, *line, r, area, "area")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((sample_id, intervals))
}

/// Clustering parameters recorded at the top of a clusters file, used
/// downstream for pruning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterFileHeader {
    pub delta: f64,
    pub delta_prime: f64,
    pub max_peaks: usize,
    pub prune_mode: PruneMode,
}

impl From<&ClusterParams> for ClusterFileHeader {
    fn from(p: &ClusterParams) -> Self {
        Self {
            delta: p.delta,
            delta_prime: p.delta_prime,
            max_peaks: p.max_peaks,
            prune_mode: p.prune_mode,
        }
    }
}

pub fn write_clusters(path: &Path, header: &ClusterFileHeader, clusters: &[IsotopicCluster]) -> Result<()> {
    let mut out = create(path)?;
    comments(
        path,
        &mut out,
        &[
            ("delta", header.delta.to_string()),
            ("delta_prime", header.delta_prime.to_string()),
            ("max_peaks", header.max_peaks.to_string()),
            ("prune", header.prune_mode.to_string()),
        ],
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cluster_id", "j", "consensus_mz", "support", "member_count"])?;
    for c in clusters {
        for (j, (x, s)) in c.positions.iter().zip(&c.support).enumerate() {
            w.write_record([
                c.cluster_id.to_string(),
                (j + 1).to_string(),
                x.to_string(),
                s.to_string(),
                c.member_count.to_string(),
            ])?;
        }
    }
    finish(path, w)
}

pub fn read_clusters(path: &Path) -> Result<(ClusterFileHeader, Vec<IsotopicCluster>)> {
    let t = read_table(path)?;
    let meta = |key: &str| -> Result<&String> {
        t.meta
            .get(key)
            .ok_or_else(|| Error::parse(path, 1, format!("missing '# {key}=' line")))
    };
    let bad = |key: &str| Error::parse(path, 1, format!("invalid value for '{key}'"));
    let header = ClusterFileHeader {
        delta: meta("delta")?.parse().map_err(|_| bad("delta"))?,
        delta_prime: meta("delta_prime")?.parse().map_err(|_| bad("delta_prime"))?,
        max_peaks: meta("max_peaks")?.parse().map_err(|_| bad("max_peaks"))?,
        prune_mode: meta("prune")?.parse().map_err(|_| bad("prune"))?,
    };
    let (id_c, j_c, mz_c, sup_c, mem_c) = (
        t.column(path, "cluster_id")?,
        t.column(path, "j")?,
        t.column(path, "consensus_mz")?,
        t.column(path, "support")?,
        t.column(path, "member_count")?,
    );
    let mut clusters: Vec<IsotopicCluster> = Vec::new();
    for (line, r) in &t.rows {
        let id: u32 = field(path, *line, r, id_c, "cluster_id")?;
        let j: usize = field(path, *line, r, j_c, "j")?;
        let mz: f64 = field(path, *line, r, mz_c, "consensus_mz")?;
        let support: usize = field(path, *line, r, sup_c, "support")?;
        let members: usize = field(path, *line, r, mem_c, "member_count")?;
        match clusters.last_mut() {
            Some(c) if c.cluster_id == id => {
                if j != c.positions.len() + 1 {
                    return Err(Error::parse(path, *line, format!("peak index {j} out of sequence")));
                }
                c.positions.push(mz);
                c.support.push(support);
            }
            _ => {
                if j != 1 {
                    return Err(Error::parse(path, *line, format!("cluster {id} does not start at j = 1")));
                }
                if clusters.iter().any(|c| c.cluster_id == id) {
                    return Err(Error::parse(path, *line, format!("cluster {id} is not contiguous")));
                }
                clusters.push(IsotopicCluster {
                    cluster_id: id,
                    positions: vec![mz],
                    member_count: members,
                    support: vec![support],
                });
            }
        }
    }
    Ok((header, clusters))
}

/// Long table `sample_id, cluster_id, j, delta_flag, y`.
pub fn write_quantified(path: &Path, qm: &QuantifiedMatrix) -> Result<()> {
    let out = create(path)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample_id", "cluster_id", "j", "delta_flag", "y"])?;
    for (i, sample) in qm.samples.iter().enumerate() {
        for (q, c) in qm.clusters.iter().enumerate() {
            let y = qm.y_block(i, q);
            let d = qm.detected_block(i, q);
            for j in 0..c.len() {
                w.write_record([
                    sample.clone(),
                    c.cluster_id.to_string(),
                    (j + 1).to_string(),
                    (d[j] as u8).to_string(),
                    y[j].to_string(),
                ])?;
            }
        }
    }
    finish(path, w)
}

/// Per consensus peak: position, typical width, typical log intensity and
/// detection support.
pub fn write_cluster_summary(path: &Path, qm: &QuantifiedMatrix) -> Result<()> {
    let pattern = TypicalPattern::from_rows(qm, &(0..qm.n_samples()).collect::<Vec<_>>());
    let out = create(path)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cluster_id", "j", "consensus_mz", "typical_width", "l_bar", "support", "member_count"])?;
    for (q, c) in qm.clusters.iter().enumerate() {
        let range = qm.cluster_range(q);
        for j in 0..c.len() {
            w.write_record([
                c.cluster_id.to_string(),
                (j + 1).to_string(),
                c.positions[j].to_string(),
                qm.typical_width[range.start + j].to_string(),
                pattern.l_bar[range.start + j].to_string(),
                c.support[j].to_string(),
                c.member_count.to_string(),
            ])?;
        }
    }
    finish(path, w)
}

/// Rebuilds a [`QuantifiedMatrix`] from the long table and cluster summary.
pub fn read_quantified(path: &Path, summary_path: &Path) -> Result<QuantifiedMatrix> {
    let s = read_table(summary_path)?;
    let sp = summary_path;
    let (id_c, j_c, mz_c, w_c, sup_c, mem_c) = (
        s.column(sp, "cluster_id")?,
        s.column(sp, "j")?,
        s.column(sp, "consensus_mz")?,
        s.column(sp, "typical_width")?,
        s.column(sp, "support")?,
        s.column(sp, "member_count")?,
    );
    let mut clusters: Vec<IsotopicCluster> = Vec::new();
    let mut width = Vec::new();
    for (line, r) in &s.rows {
        let id: u32 = field(sp, *line, r, id_c, "cluster_id")?;
        let j: usize = field(sp, *line, r, j_c, "j")?;
        let mz: f64 = field(sp, *line, r, mz_c, "consensus_mz")?;
        let support: usize = field(sp, *line, r, sup_c, "support")?;
        let members: usize = field(sp, *line, r, mem_c, "member_count")?;
        width.push(field::<f64>(sp, *line, r, w_c, "typical_width")?);
        match clusters.last_mut() {
            Some(c) if c.cluster_id == id && j == c.positions.len() + 1 => {
                c.positions.push(mz);
                c.support.push(support);
            }
            _ if j == 1 => clusters.push(IsotopicCluster {
                cluster_id: id,
                positions: vec![mz],
                member_count: members,
                support: vec![support],
            }),
            _ => return Err(Error::parse(sp, *line, format!("peak index {j} out of sequence"))),
        }
    }
    let mut column_of: BTreeMap<(u32, usize), usize> = BTreeMap::new();
    for c in &clusters {
        for j in 1..=c.len() {
            let next = column_of.len();
            column_of.insert((c.cluster_id, j), next);
        }
    }
    let p = column_of.len();

    let t = read_table(path)?;
    let (s_c, id_c, j_c, d_c, y_c) = (
        t.column(path, "sample_id")?,
        t.column(path, "cluster_id")?,
        t.column(path, "j")?,
        t.column(path, "delta_flag")?,
        t.column(path, "y")?,
    );
    let mut samples: Vec<String> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut y: Vec<f64> = Vec::new();
    let mut detected: Vec<bool> = Vec::new();
    let mut filled: Vec<bool> = Vec::new();
    for (line, r) in &t.rows {
        let sample = r.get(s_c).unwrap_or("").to_string();
        let i = *index.entry(sample.clone()).or_insert_with(|| {
            samples.push(sample);
            y.extend(std::iter::repeat_n(0.0, p));
            detected.extend(std::iter::repeat_n(false, p));
            filled.extend(std::iter::repeat_n(false, p));
            samples.len() - 1
        });
        let id: u32 = field(path, *line, r, id_c, "cluster_id")?;
        let j: usize = field(path, *line, r, j_c, "j")?;
        let col = *column_of
            .get(&(id, j))
            .ok_or_else(|| Error::parse(path, *line, format!("cluster {id} peak {j} not in summary")))?;
        let flag: u8 = field(path, *line, r, d_c, "delta_flag")?;
        y[i * p + col] = field(path, *line, r, y_c, "y")?;
        detected[i * p + col] = flag == 1;
        filled[i * p + col] = true;
    }
    if let Some(k) = filled.iter().position(|f| !f) {
        return Err(Error::Validation(format!(
            "{}: sample {} lacks an entry for peak column {}",
            path.display(),
            samples[k / p],
            k % p + 1
        )));
    }
    QuantifiedMatrix::new(samples, clusters, y, detected, width)
}

/// Feature table with `# kind=`, `# on=` and `# imputed=` metadata lines.
/// Imputed entries are listed as `row:column` pairs (zero-based).
pub fn write_feature_matrix(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let mut out = create(path)?;
    let imputed: Vec<String> = (0..m.n_samples())
        .flat_map(|i| (0..m.n_features()).map(move |c| (i, c)))
        .filter(|&(i, c)| m.missing_mask[(i, c)])
        .map(|(i, c)| format!("{i}:{c}"))
        .collect();
    comments(
        path,
        &mut out,
        &[
            ("kind", m.kind.clone()),
            ("on", m.on.map_or_else(|| "-".to_string(), |b| b.to_string())),
            ("imputed", imputed.join(";")),
        ],
    )?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample_id".to_string()];
    header.extend(m.columns.iter().map(|c| c.to_string()));
    w.write_record(&header)?;
    for (i, sample) in m.samples.iter().enumerate() {
        let mut row = vec![sample.clone()];
        row.extend(m.values.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    finish(path, w)
}

pub fn read_feature_matrix(path: &Path) -> Result<FeatureMatrix> {
    let t = read_table(path)?;
    let kind = t.meta.get("kind").cloned().unwrap_or_else(|| "unknown".to_string());
    let on = match t.meta.get("on").map(String::as_str) {
        None | Some("-") | Some("") => None,
        Some(b) => Some(Basis::from_str(b).map_err(|_| Error::parse(path, 1, format!("invalid basis '{b}'")))?),
    };
    if t.headers.first().map(|h| h.to_ascii_lowercase()) != Some("sample_id".into()) {
        return Err(Error::parse(path, 1, "first column must be 'sample_id'"));
    }
    let columns = t.headers[1..]
        .iter()
        .map(|h| h.parse::<ColumnDescriptor>().map_err(|e| Error::parse(path, 1, e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let p = columns.len();
    let n = t.rows.len();
    let mut values = DMatrix::<f64>::zeros(n, p);
    let mut samples = Vec::with_capacity(n);
    for (i, (line, r)) in t.rows.iter().enumerate() {
        if r.len() != p + 1 {
            return Err(Error::parse(path, *line, format!("expected {} fields, found {}", p + 1, r.len())));
        }
        samples.push(r[0].to_string());
        for c in 0..p {
            values[(i, c)] = field(path, *line, r, c + 1, "value")?;
        }
    }
    let mut mask = DMatrix::<bool>::from_element(n, p, false);
    for pair in t.meta.get("imputed").map(String::as_str).unwrap_or("").split(';').filter(|s| !s.is_empty()) {
        let parsed = pair
            .split_once(':')
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
            .filter(|&(i, c)| i < n && c < p);
        let (i, c) = parsed.ok_or_else(|| Error::parse(path, 1, format!("invalid imputed entry '{pair}'")))?;
        mask[(i, c)] = true;
    }
    Ok(FeatureMatrix {
        kind,
        on,
        samples,
        columns,
        values,
        missing_mask: mask,
    })
}

/// Per-sample out-of-fold (or validation) probabilities.
pub fn write_probabilities(path: &Path, predictions: &[SamplePrediction]) -> Result<()> {
    let out = create(path)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["repetition", "sample_id", "class", "probability", "lambda"])?;
    for p in predictions {
        w.write_record([
            p.repetition.to_string(),
            p.sample_id.clone(),
            p.class.to_string(),
            p.probability.to_string(),
            p.lambda.to_string(),
        ])?;
    }
    finish(path, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(id: u32, positions: Vec<f64>) -> IsotopicCluster {
        let j = positions.len();
        IsotopicCluster {
            cluster_id: id,
            positions,
            member_count: 3 * j,
            support: vec![3; j],
        }
    }

    #[test]
    fn intervals_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.intervals.csv");
        let iv = DetectedInterval {
            lo: 2020.9,
            hi: 2021.3000000000002,
            apex_mz: 2021.1,
            apex_intensity: 1.25e6,
            area: 0.1 + 0.2,
        };
        write_intervals(&path, "a", &[iv]).unwrap();
        assert_eq!(read_intervals(&path).unwrap(), ("a".to_string(), vec![iv]));
        write_intervals(&path, "b", &[]).unwrap();
        assert_eq!(read_intervals(&path).unwrap(), ("b".to_string(), vec![]));
    }

    #[test]
    fn clusters_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clusters.csv");
        let header = ClusterFileHeader {
            delta: 0.08,
            delta_prime: 0.1,
            max_peaks: 8,
            prune_mode: PruneMode::Disjunctive,
        };
        let clusters = vec![cluster(1, vec![1500.0, 1501.003]), cluster(2, vec![1600.5])];
        write_clusters(&path, &header, &clusters).unwrap();
        let (h, c) = read_clusters(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(c, clusters);
    }

    #[test]
    fn quantified_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let clusters = vec![cluster(4, vec![1500.0, 1501.0]), cluster(9, vec![1700.0])];
        let qm = QuantifiedMatrix::new(
            vec!["x".into(), "y".into()],
            clusters,
            vec![1.0, 2.5, 1e-7, 3.0, 1.0 / 3.0, 7.0],
            vec![true, true, false, true, false, true],
            vec![0.1, 0.12, 0.2],
        )
        .unwrap();
        let long = dir.path().join("q.csv");
        let summary = dir.path().join("s.csv");
        write_quantified(&long, &qm).unwrap();
        write_cluster_summary(&summary, &qm).unwrap();
        assert_eq!(read_quantified(&long, &summary).unwrap(), qm);
    }

    #[test]
    fn feature_matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let mut mask = DMatrix::from_element(2, 2, false);
        mask[(1, 0)] = true;
        let m = FeatureMatrix {
            kind: "cg".into(),
            on: Some(Basis::R),
            samples: vec!["a".into(), "b".into()],
            columns: vec![ColumnDescriptor::new(1, None), ColumnDescriptor::new(2, Some("beta".into()))],
            values: DMatrix::from_row_slice(2, 2, &[1.5, -0.1, 2.0 / 3.0, 1e300]),
            missing_mask: mask,
        };
        write_feature_matrix(&path, &m).unwrap();
        assert_eq!(read_feature_matrix(&path).unwrap(), m);
    }

    #[test]
    fn malformed_value_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        fs::write(&path, "# kind=sl\nsample_id,q1\na,1.0\nb,oops\n").unwrap();
        let err = read_feature_matrix(&path).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
    }
}
