//! Intensity and shape summary measures per cluster and sample.
//!
//! A [`MeasureSpec`] names one measure kind (and, for shape kinds, the
//! sequence it is computed on). [`compute_measure`] turns a
//! [`QuantifiedMatrix`] into a [`FeatureMatrix`] for a subset of samples,
//! using cross-sample statistics from a [`ReferenceStats`] fitted on a
//! (possibly different) subset. Fitting the statistics on training samples
//! only keeps held-out samples out of the typical pattern, the rank
//! reference and the quantile reference.
//!
//! Shape measures are undefined for samples in which a whole cluster went
//! undetected; those entries come out as NaN with `missing_mask` set, and an
//! [`Imputer`] replaces them with the training mean.

pub mod intensity;
pub mod shape;

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantify::{QuantifiedMatrix, TypicalPattern};
use crate::stats::midrank_in;

pub use intensity::{map_to_reference, quantile_normalize, quantile_reference};
pub use shape::{
    distribution_shape, inverse_rank_vector, mode_location, pairwise_measure, polynomial_shape,
    rank_vector, select_pairs, shape_residuals, DistributionShape, PairMode, PairSelection,
    ShapeResiduals,
};

/// Sequence a shape measure is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    /// Raw (coded) intensities.
    Y,
    /// Log intensities.
    L,
    /// Exponentiated residuals from the typical pattern.
    #[default]
    R,
    /// Log residuals from the typical pattern.
    S,
}

impl FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "y" => Ok(Basis::Y),
            "l" => Ok(Basis::L),
            "r" => Ok(Basis::R),
            "s" => Ok(Basis::S),
            other => Err(Error::Config(format!("unknown basis '{other}' (allowed: y, l, r, s)"))),
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Y => "y",
            Basis::L => "l",
            Basis::R => "r",
            Basis::S => "s",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasureKind {
    /// Per-peak detection flag.
    Bp,
    /// Cluster detected (completely or partly).
    Bc,
    /// Sum of across-sample ranks.
    Sr,
    /// Rank at the typical maximum.
    Mr,
    /// Sum of quantile-normalised intensities.
    Sq,
    /// Quantile-normalised intensity at the typical maximum.
    Mq,
    /// Sum of log intensities.
    Sl,
    /// Log intensity at the typical maximum.
    Ml,
    Ratios(PairSelection),
    RankVec,
    /// Inverse ranks from the mode down; `Some(k)` keeps the first `k + 1`.
    InvRankVec(Option<usize>),
    Mode,
    Cg,
    Spread,
    Skew,
    Kurt,
    Poly,
}

impl MeasureKind {
    pub fn is_shape(self) -> bool {
        !matches!(
            self,
            MeasureKind::Bp
                | MeasureKind::Bc
                | MeasureKind::Sr
                | MeasureKind::Mr
                | MeasureKind::Sq
                | MeasureKind::Mq
                | MeasureKind::Sl
                | MeasureKind::Ml
        )
    }

    /// Smallest cluster size the measure is defined for.
    fn min_peaks(self) -> usize {
        match self {
            MeasureKind::Poly => 3,
            k if k.is_shape() => 2,
            _ => 1,
        }
    }
}

impl FromStr for MeasureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, option) = match s.split_once(':') {
            Some((n, o)) => (n, Some(o)),
            None => (s, None),
        };
        let kind = match (name, option) {
            ("bp", None) => MeasureKind::Bp,
            ("bc", None) => MeasureKind::Bc,
            ("sr", None) => MeasureKind::Sr,
            ("mr", None) => MeasureKind::Mr,
            ("sq", None) => MeasureKind::Sq,
            ("mq", None) => MeasureKind::Mq,
            ("sl", None) => MeasureKind::Sl,
            ("ml", None) => MeasureKind::Ml,
            ("ratios", None | Some("consecutive")) => MeasureKind::Ratios(PairSelection::Consecutive),
            ("ratios", Some("top-two")) => MeasureKind::Ratios(PairSelection::TopTwo),
            ("ratios", Some("all")) => MeasureKind::Ratios(PairSelection::All),
            ("rankvec", None) => MeasureKind::RankVec,
            ("invrankvec", None) => MeasureKind::InvRankVec(None),
            ("invrankvec", Some(k)) => MeasureKind::InvRankVec(Some(
                k.parse().map_err(|_| Error::Config(format!("invalid top-k '{k}' in '{s}'")))?,
            )),
            ("mode", None) => MeasureKind::Mode,
            ("cg", None) => MeasureKind::Cg,
            ("spread", None) => MeasureKind::Spread,
            ("skew", None) => MeasureKind::Skew,
            ("kurt", None) => MeasureKind::Kurt,
            ("poly", None) => MeasureKind::Poly,
            _ => {
                return Err(Error::Config(format!(
                    "unknown measure kind '{s}' (allowed: bp, bc, sr, mr, sq, mq, sl, ml, ratios[:consecutive|top-two|all], \
                     rankvec, invrankvec[:k], mode, cg, spread, skew, kurt, poly)"
                )))
            }
        };
        Ok(kind)
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasureKind::Bp => f.write_str("bp"),
            MeasureKind::Bc => f.write_str("bc"),
            MeasureKind::Sr => f.write_str("sr"),
            MeasureKind::Mr => f.write_str("mr"),
            MeasureKind::Sq => f.write_str("sq"),
            MeasureKind::Mq => f.write_str("mq"),
            MeasureKind::Sl => f.write_str("sl"),
            MeasureKind::Ml => f.write_str("ml"),
            MeasureKind::Ratios(PairSelection::Consecutive) => f.write_str("ratios"),
            MeasureKind::Ratios(PairSelection::TopTwo) => f.write_str("ratios:top-two"),
            MeasureKind::Ratios(PairSelection::All) => f.write_str("ratios:all"),
            MeasureKind::RankVec => f.write_str("rankvec"),
            MeasureKind::InvRankVec(None) => f.write_str("invrankvec"),
            MeasureKind::InvRankVec(Some(k)) => write!(f, "invrankvec:{k}"),
            MeasureKind::Mode => f.write_str("mode"),
            MeasureKind::Cg => f.write_str("cg"),
            MeasureKind::Spread => f.write_str("spread"),
            MeasureKind::Skew => f.write_str("skew"),
            MeasureKind::Kurt => f.write_str("kurt"),
            MeasureKind::Poly => f.write_str("poly"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeasureSpec {
    pub kind: MeasureKind,
    /// Ignored by intensity kinds.
    pub on: Basis,
}

impl MeasureSpec {
    pub fn new(kind: MeasureKind, on: Basis) -> Result<Self> {
        let spec = Self { kind, on };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            MeasureKind::Cg | MeasureKind::Spread | MeasureKind::Skew | MeasureKind::Kurt => {
                matches!(self.on, Basis::Y | Basis::R)
            }
            MeasureKind::Poly => matches!(self.on, Basis::R | Basis::S),
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "measure '{}' is not defined on '{}'",
                self.kind, self.on
            )))
        }
    }

    /// Short label such as `sl` or `cg@r`.
    pub fn label(&self) -> String {
        if self.kind.is_shape() {
            format!("{}@{}", self.kind, self.on)
        } else {
            self.kind.to_string()
        }
    }
}

/// Parses `kind[@basis]`; the basis defaults to `r`.
impl FromStr for MeasureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, on) = match s.trim().split_once('@') {
            Some((k, b)) => (k.parse()?, b.parse()?),
            None => (s.trim().parse()?, Basis::default()),
        };
        MeasureSpec::new(kind, on)
    }
}

/// Column label: optional kind prefix, cluster id, optional component.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnDescriptor {
    pub prefix: Option<String>,
    pub cluster_id: u32,
    pub component: Option<String>,
}

impl ColumnDescriptor {
    pub fn new(cluster_id: u32, component: Option<String>) -> Self {
        Self {
            prefix: None,
            cluster_id,
            component,
        }
    }
}

impl fmt::Display for ColumnDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.prefix {
            write!(f, "{p}/")?;
        }
        write!(f, "q{}", self.cluster_id)?;
        if let Some(c) = &self.component {
            write!(f, ":{c}")?;
        }
        Ok(())
    }
}

impl FromStr for ColumnDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("malformed column descriptor '{s}'"));
        let (prefix, rest) = match s.rsplit_once('/') {
            Some((p, r)) if r.starts_with('q') => (Some(p.to_string()), r),
            _ => (None, s),
        };
        let rest = rest.strip_prefix('q').ok_or_else(bad)?;
        let (id, component) = match rest.split_once(':') {
            Some((id, c)) => (id, Some(c.to_string())),
            None => (rest, None),
        };
        Ok(Self {
            prefix,
            cluster_id: id.parse().map_err(|_| bad())?,
            component,
        })
    }
}

/// n samples x p features of one measure kind.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub kind: String,
    pub on: Option<Basis>,
    pub samples: Vec<String>,
    pub columns: Vec<ColumnDescriptor>,
    pub values: DMatrix<f64>,
    /// Entries that were (or still need to be) imputed.
    pub missing_mask: DMatrix<bool>,
}

impl FeatureMatrix {
    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            kind: self.kind.clone(),
            on: self.on,
            samples: rows.iter().map(|&i| self.samples[i].clone()).collect(),
            columns: self.columns.clone(),
            values: self.values.select_rows(rows),
            missing_mask: self.missing_mask.select_rows(rows),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            kind: self.kind.clone(),
            on: self.on,
            samples: self.samples.clone(),
            columns: cols.iter().map(|&c| self.columns[c].clone()).collect(),
            values: self.values.select_columns(cols),
            missing_mask: self.missing_mask.select_columns(cols),
        }
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|v| !v.is_finite())
    }
}

/// Cross-sample statistics fitted on a set of reference (training) samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceStats {
    pub pattern: TypicalPattern,
    /// Per peak column, the reference samples' intensities in ascending order.
    pub sorted_columns: Vec<Vec<f64>>,
    /// Mean order statistics of the reference samples' full peak vectors.
    pub quantile_reference: Vec<f64>,
    member: Vec<bool>,
}

impl ReferenceStats {
    pub fn fit(qm: &QuantifiedMatrix, rows: &[usize]) -> Self {
        let p = qm.n_peaks();
        let mut sorted_columns: Vec<Vec<f64>> = (0..p)
            .map(|c| rows.iter().map(|&i| qm.y(i, c)).collect())
            .collect();
        sorted_columns.iter_mut().for_each(|c| c.sort_by(f64::total_cmp));
        let reference_rows: Vec<&[f64]> = rows.iter().map(|&i| qm.y_row(i)).collect();
        let mut member = vec![false; qm.n_samples()];
        rows.iter().for_each(|&i| member[i] = true);
        Self {
            pattern: TypicalPattern::from_rows(qm, rows),
            sorted_columns,
            quantile_reference: quantile_reference(&reference_rows),
            member,
        }
    }

    /// Statistics over every sample of the matrix.
    pub fn fit_all(qm: &QuantifiedMatrix) -> Self {
        let rows: Vec<usize> = (0..qm.n_samples()).collect();
        Self::fit(qm, &rows)
    }

    fn is_member(&self, i: usize) -> bool {
        self.member.get(i).copied().unwrap_or(false)
    }
}

/// Per-sample normalised intensity rows needed by some kinds.
enum RowCache {
    None,
    Ranks(Vec<f64>),
    Quantiles(Vec<f64>),
}

/// Computes one measure for the samples `rows` of `qm`.
pub fn compute_measure(
    qm: &QuantifiedMatrix,
    spec: &MeasureSpec,
    stats: &ReferenceStats,
    rows: &[usize],
) -> Result<FeatureMatrix> {
    spec.validate()?;
    let kind = spec.kind;
    let y_bar = stats.pattern.y_bar();

    // column layout depends only on cluster sizes and the reference pattern
    let mut columns = Vec::new();
    let mut blocks: Vec<(usize, usize)> = Vec::new(); // (cluster, width)
    for (q, cluster) in qm.clusters.iter().enumerate() {
        if cluster.len() < kind.min_peaks() {
            continue;
        }
        let names = component_names(kind, spec.on, cluster.len(), &y_bar[qm.cluster_range(q)]);
        blocks.push((q, names.len()));
        columns.extend(
            names
                .into_iter()
                .map(|c| ColumnDescriptor::new(cluster.cluster_id, c)),
        );
    }

    let p = columns.len();
    let mut values = DMatrix::<f64>::zeros(rows.len(), p);
    let mut mask = DMatrix::<bool>::from_element(rows.len(), p, false);
    for (r, &i) in rows.iter().enumerate() {
        let cache = match kind {
            MeasureKind::Sr | MeasureKind::Mr => RowCache::Ranks(
                qm.y_row(i)
                    .iter()
                    .enumerate()
                    .map(|(c, &v)| midrank_in(&stats.sorted_columns[c], v, stats.is_member(i)))
                    .collect(),
            ),
            MeasureKind::Sq | MeasureKind::Mq => {
                RowCache::Quantiles(map_to_reference(qm.y_row(i), &stats.quantile_reference))
            }
            _ => RowCache::None,
        };
        let mut col = 0;
        for &(q, width) in &blocks {
            let range = qm.cluster_range(q);
            let out = if kind.is_shape() && !qm.cluster_detected(i, q) {
                None
            } else {
                Some(cluster_components(
                    qm,
                    kind,
                    spec.on,
                    stats,
                    &y_bar[range.clone()],
                    i,
                    q,
                    &cache,
                ))
            };
            match out {
                Some(v) => {
                    debug_assert_eq!(v.len(), width);
                    for (k, x) in v.into_iter().enumerate() {
                        values[(r, col + k)] = x;
                    }
                }
                None => {
                    for k in 0..width {
                        values[(r, col + k)] = f64::NAN;
                        mask[(r, col + k)] = true;
                    }
                }
            }
            col += width;
        }
    }

    Ok(FeatureMatrix {
        kind: kind.to_string(),
        on: kind.is_shape().then_some(spec.on),
        samples: rows.iter().map(|&i| qm.samples[i].clone()).collect(),
        columns,
        values,
        missing_mask: mask,
    })
}

fn component_names(kind: MeasureKind, on: Basis, j_count: usize, y_bar: &[f64]) -> Vec<Option<String>> {
    match kind {
        MeasureKind::Bp => (1..=j_count).map(|j| Some(format!("j{j}"))).collect(),
        MeasureKind::Ratios(selection) => {
            let symbol = if matches!(on, Basis::Y | Basis::R) { "Q" } else { "D" };
            select_pairs(j_count, selection, y_bar)
                .into_iter()
                .map(|(a, b)| Some(format!("{symbol}{}_{}", a + 1, b + 1)))
                .collect()
        }
        MeasureKind::RankVec => (1..=j_count).map(|j| Some(format!("R{j}"))).collect(),
        MeasureKind::InvRankVec(top) => {
            let keep = top.map_or(j_count, |k| (k + 1).min(j_count));
            (0..keep).map(|k| Some(format!("Rinv{}", j_count - k))).collect()
        }
        MeasureKind::Poly => vec![Some("beta".into()), Some("gamma".into())],
        _ => vec![None],
    }
}

#[allow(clippy::too_many_arguments)]
fn cluster_components(
    qm: &QuantifiedMatrix,
    kind: MeasureKind,
    on: Basis,
    stats: &ReferenceStats,
    y_bar: &[f64],
    i: usize,
    q: usize,
    cache: &RowCache,
) -> Vec<f64> {
    let range = qm.cluster_range(q);
    let y = qm.y_block(i, q);
    let argmax = stats.pattern.argmax[q];
    match (kind, cache) {
        (MeasureKind::Bp, _) => qm.detected_block(i, q).iter().map(|&d| d as u8 as f64).collect(),
        (MeasureKind::Bc, _) => vec![qm.cluster_detected(i, q) as u8 as f64],
        (MeasureKind::Sr, RowCache::Ranks(ranks)) | (MeasureKind::Sq, RowCache::Quantiles(ranks)) => {
            vec![ranks[range].iter().sum()]
        }
        (MeasureKind::Mr, RowCache::Ranks(ranks)) | (MeasureKind::Mq, RowCache::Quantiles(ranks)) => {
            vec![ranks[range][argmax]]
        }
        (MeasureKind::Sl, _) => vec![y.iter().map(|v| v.ln()).sum()],
        (MeasureKind::Ml, _) => vec![y[argmax].ln()],
        _ => {
            let x = basis_values(y, &stats.pattern.l_bar[range], on);
            shape_components(kind, on, &x, y_bar)
        }
    }
}

/// The per-cluster sequence a shape measure operates on.
pub fn basis_values(y: &[f64], l_bar: &[f64], on: Basis) -> Vec<f64> {
    let l: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    match on {
        Basis::Y => y.to_vec(),
        Basis::L => l,
        Basis::S => shape_residuals(&l, l_bar).s,
        Basis::R => shape_residuals(&l, l_bar).r,
    }
}

/// Shape measure components for one sequence.
pub fn shape_components(kind: MeasureKind, on: Basis, x: &[f64], y_bar: &[f64]) -> Vec<f64> {
    match kind {
        MeasureKind::Ratios(selection) => {
            let mode = if matches!(on, Basis::Y | Basis::R) {
                PairMode::Ratio
            } else {
                PairMode::Difference
            };
            pairwise_measure(x, &select_pairs(x.len(), selection, y_bar), mode)
        }
        MeasureKind::RankVec => rank_vector(x),
        MeasureKind::InvRankVec(top) => {
            let mut v = inverse_rank_vector(x);
            if let Some(k) = top {
                v.truncate(k + 1);
            }
            v
        }
        MeasureKind::Mode => vec![mode_location(x)],
        MeasureKind::Cg => vec![distribution_shape(x).cg],
        MeasureKind::Spread => vec![distribution_shape(x).spread],
        MeasureKind::Skew => vec![distribution_shape(x).skewness],
        MeasureKind::Kurt => vec![distribution_shape(x).kurtosis],
        MeasureKind::Poly => {
            let (b, c) = polynomial_shape(x).unwrap_or((f64::NAN, f64::NAN));
            vec![b, c]
        }
        other => unreachable!("{other} is not a shape measure"),
    }
}

/// Replaces missing entries of a column by the mean of its observed
/// entries. Returns `None` when nothing was observed.
pub fn impute_shape(column: &[f64]) -> Option<Vec<f64>> {
    let observed: Vec<f64> = column.iter().copied().filter(|v| v.is_finite()).collect();
    if observed.is_empty() {
        return None;
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    Some(column.iter().map(|&v| if v.is_finite() { v } else { mean }).collect())
}

/// Column means of observed training entries, applied to any sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct Imputer {
    means: Vec<Option<f64>>,
}

impl Imputer {
    pub fn fit(train: &FeatureMatrix) -> Self {
        let means = (0..train.n_features())
            .map(|c| {
                let observed: Vec<f64> = train.values.column(c).iter().copied().filter(|v| v.is_finite()).collect();
                (!observed.is_empty()).then(|| observed.iter().sum::<f64>() / observed.len() as f64)
            })
            .collect();
        Self { means }
    }

    /// Fills missing entries; columns without any observed training value
    /// are dropped.
    pub fn apply(&self, m: &FeatureMatrix) -> FeatureMatrix {
        let keep: Vec<usize> = (0..m.n_features()).filter(|&c| self.means[c].is_some()).collect();
        for c in (0..m.n_features()).filter(|c| self.means[*c].is_none()) {
            warn!("dropping feature column {} ({}): no observed values", m.columns[c], m.kind);
        }
        let mut out = m.select_columns(&keep);
        for (k, &c) in keep.iter().enumerate() {
            let mean = self.means[c].expect("kept");
            for v in out.values.column_mut(k).iter_mut() {
                if !v.is_finite() {
                    *v = mean;
                }
            }
        }
        out
    }
}

/// Measure over every sample with statistics from every sample, imputed.
pub fn summarize(qm: &QuantifiedMatrix, spec: &MeasureSpec) -> Result<FeatureMatrix> {
    let rows: Vec<usize> = (0..qm.n_samples()).collect();
    let stats = ReferenceStats::fit(qm, &rows);
    let raw = compute_measure(qm, spec, &stats, &rows)?;
    Ok(Imputer::fit(&raw).apply(&raw))
}
