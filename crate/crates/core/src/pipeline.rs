//! End-to-end runs from a single configuration file: detect, cluster,
//! quantify, summarize and classify, with every stage's output written to
//! disk in the format the stage commands read.
//!
//! Classification has two phases. The resampled phase draws
//! `repetitions` plate-preserving random splits of all samples into halves
//! A and B, runs double cross-validation on A and validates the A rule on
//! B. The external phase does the same once with the calibration and
//! validation sets of the metadata table.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    evaluate_splits, lambda_grid, random_split, Cohort, CvConfig, CvReport, FeatureRecipe, InnerScheme,
    MeasureSource, Metrics, SplitSet, StatsScope,
};
use crate::cluster_id::{identify_clusters, ClusterParams, IsotopicCluster, PooledPeak, PruneMode};
use crate::error::{Error, Result};
use crate::measures::{summarize, MeasureSpec};
use crate::peak_detection::{detect, DetectionParams, SampleDetection};
use crate::quantify::{quantify_and_prune, QuantifiedMatrix, QuantifyParams};
use crate::spectrum_io::{
    parse_metadata, parse_spectrum, write_cluster_summary, write_clusters, write_feature_matrix, write_intervals,
    write_probabilities, write_quantified, ClusterFileHeader, MzRange, RawSpectrum, SampleSet, SampleTable,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub spectra: PathBuf,
    pub metadata: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub threshold: f64,
    pub neighbor_tol: f64,
    /// Reject spectra reaching outside this window.
    pub mz_range: Option<(f64, f64)>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        let d = DetectionParams::default();
        Self {
            threshold: d.threshold,
            neighbor_tol: d.neighbor_tol,
            mz_range: None,
        }
    }
}

impl DetectionConfig {
    pub fn params(&self) -> DetectionParams {
        DetectionParams {
            threshold: self.threshold,
            neighbor_tol: self.neighbor_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub delta: f64,
    pub delta_prime: f64,
    pub max_peaks: usize,
    pub prune_mode: PruneMode,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        let c = ClusterParams::default();
        Self {
            delta: c.delta,
            delta_prime: c.delta_prime,
            max_peaks: c.max_peaks,
            prune_mode: c.prune_mode,
        }
    }
}

impl ClusteringConfig {
    pub fn params(&self) -> ClusterParams {
        ClusterParams {
            delta: self.delta,
            delta_prime: self.delta_prime,
            max_peaks: self.max_peaks,
            prune_mode: self.prune_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeConfig {
    pub measures: Vec<String>,
    #[serde(default)]
    pub residualize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasuresConfig {
    /// Measure labels such as `sl`, `sr` or `cg@r`; each is one model.
    pub kinds: Vec<String>,
    /// Basis for shape kinds given without `@`.
    pub on: String,
    /// Multi-measure models.
    pub recipes: Vec<RecipeConfig>,
    /// Collapse replicate spectra of a sample before computing measures.
    pub average_replicates: bool,
}

impl Default for MeasuresConfig {
    fn default() -> Self {
        Self {
            kinds: vec!["sl".into(), "sr".into(), "cg".into()],
            on: "r".into(),
            recipes: Vec::new(),
            average_replicates: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseSelection {
    /// Resampled and external phases.
    #[default]
    Both,
    Resampled,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassificationConfig {
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_size: usize,
    /// `loo` or `kfold:K`.
    pub inner: String,
    pub seed: u64,
    pub repetitions: usize,
    pub phases: PhaseSelection,
    pub scope: StatsScope,
    pub prevalence_offset: bool,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        Self {
            grid_min: crate::classify::cv::DEFAULT_GRID_MIN,
            grid_max: crate::classify::cv::DEFAULT_GRID_MAX,
            grid_size: crate::classify::cv::DEFAULT_GRID_SIZE,
            inner: "loo".into(),
            seed: 0,
            repetitions: 10,
            phases: PhaseSelection::Both,
            scope: StatsScope::Training,
            prevalence_offset: true,
        }
    }
}

impl ClassificationConfig {
    pub fn cv_config(&self) -> Result<CvConfig> {
        Ok(CvConfig {
            grid: lambda_grid(self.grid_min, self.grid_max, self.grid_size)?,
            inner: self.inner.parse::<InnerScheme>()?,
            seed: self.seed,
            prevalence_offset: self.prevalence_offset,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub detection: DetectionConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub measures: MeasuresConfig,
    #[serde(default)]
    pub classification: ClassificationConfig,
}

impl PipelineConfig {
    /// Reads a TOML file; relative paths are taken relative to its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.paths.spectra, &mut config.paths.metadata, &mut config.paths.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    /// Every recipe the run evaluates, single kinds first.
    pub fn recipes(&self) -> Result<Vec<FeatureRecipe>> {
        let default_on = self.measures.on.parse()?;
        let spec = |label: &str| -> Result<MeasureSpec> {
            if label.contains('@') {
                label.parse()
            } else {
                MeasureSpec::new(label.trim().parse()?, default_on)
            }
        };
        let mut out: Vec<FeatureRecipe> = Vec::new();
        for k in &self.measures.kinds {
            out.push(FeatureRecipe::single(spec(k)?));
        }
        for r in &self.measures.recipes {
            let recipe = FeatureRecipe {
                measures: r.measures.iter().map(|m| spec(m)).collect::<Result<_>>()?,
                residualize: r.residualize,
            };
            recipe.validate()?;
            out.push(recipe);
        }
        if out.is_empty() {
            return Err(Error::Config("no measures requested".into()));
        }
        let mut labels: Vec<String> = out.iter().map(FeatureRecipe::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("a measure is requested twice".into()));
        }
        Ok(out)
    }

    /// Checks everything that can be checked without reading spectra.
    pub fn validate(&self) -> std::result::Result<(), StageError> {
        let config = |e: Error| StageError::new(Stage::Config, e);
        if !self.paths.metadata.is_file() {
            return Err(StageError::new(
                Stage::SpectrumIo,
                Error::Validation(format!("metadata file not found: {}", self.paths.metadata.display())),
            ));
        }
        if !self.paths.spectra.is_dir() {
            return Err(StageError::new(
                Stage::SpectrumIo,
                Error::Validation(format!("spectra directory not found: {}", self.paths.spectra.display())),
            ));
        }
        let d = &self.detection;
        if !(d.threshold.is_finite() && d.neighbor_tol >= 0.0) {
            return Err(config(Error::Config("detection threshold and tolerance must be finite and non-negative".into())));
        }
        if let Some((lo, hi)) = d.mz_range {
            if !(lo < hi) {
                return Err(config(Error::Config(format!("empty m/z range ({lo}, {hi})"))));
            }
        }
        let c = &self.clustering;
        if !(c.delta > 0.0 && c.delta_prime > 0.0 && c.max_peaks > 0) {
            return Err(config(Error::Config("clustering delta, delta_prime and max_peaks must be positive".into())));
        }
        self.recipes().map_err(config)?;
        self.classification.cv_config().map_err(config)?;
        Ok(())
    }
}

/// Pipeline stage, used to tag errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    SpectrumIo,
    PeakDetection,
    ClusterId,
    Quantify,
    Measures,
    Classify,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::SpectrumIo => "spectrum_io",
            Stage::PeakDetection => "peak_detection",
            Stage::ClusterId => "cluster_id",
            Stage::Quantify => "quantify",
            Stage::Measures => "measures",
            Stage::Classify => "classify",
        })
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

impl StageError {
    pub fn new(stage: Stage, source: Error) -> Self {
        Self { stage, source }
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

trait Tag<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> Tag<T> for Result<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|e| StageError::new(stage, e))
    }
}

/// Mean and standard error of the four metrics for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub n_samples: usize,
    pub mean: Metrics,
    pub standard_error: Option<Metrics>,
    /// Chosen penalties per repetition.
    pub lambdas: Vec<Vec<f64>>,
}

impl From<&CvReport> for PhaseResult {
    fn from(r: &CvReport) -> Self {
        Self {
            n_samples: r.n_samples,
            mean: r.mean,
            standard_error: r.standard_error,
            lambdas: r.runs.iter().map(|run| run.lambdas.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureResult {
    pub measure: String,
    pub n_features: usize,
    pub resampled_calibration: Option<PhaseResult>,
    pub resampled_validation: Option<PhaseResult>,
    pub external_calibration: Option<PhaseResult>,
    pub external_validation: Option<PhaseResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub n_spectra: usize,
    pub n_samples: usize,
    pub n_clusters_identified: usize,
    pub n_clusters_kept: usize,
    pub n_peaks: usize,
    pub undetected_fraction: f64,
    pub repetitions: usize,
    pub seed: u64,
    pub measures: Vec<MeasureResult>,
}

/// Output layout under the configured output directory.
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn detect_dir(&self) -> PathBuf {
        self.root.join("detect")
    }
    pub fn clusters(&self) -> PathBuf {
        self.root.join("clusters.csv")
    }
    pub fn quantified(&self) -> PathBuf {
        self.root.join("quantified.csv")
    }
    pub fn cluster_summary(&self) -> PathBuf {
        self.root.join("cluster_summary.csv")
    }
    pub fn features_dir(&self) -> PathBuf {
        self.root.join("features")
    }
    pub fn classify_dir(&self) -> PathBuf {
        self.root.join("classify")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
}

/// File names used for one spectrum's detection output.
pub fn detection_files(dir: &Path, spectrum_id: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{spectrum_id}.intervals.csv")),
        dir.join(format!("{spectrum_id}.peaks.csv")),
    )
}

/// Reads every spectrum listed in the metadata, in table order.
pub fn load_spectra(table: &SampleTable, dir: &Path, range: Option<MzRange>) -> Result<Vec<RawSpectrum>> {
    let paths = table.spectrum_paths(dir)?;
    paths
        .par_iter()
        .map(|p| {
            let s = parse_spectrum(p)?;
            if let Some(r) = range {
                s.check_range(r)?;
            }
            Ok(s)
        })
        .collect()
}

pub fn pool_peaks(detections: &[SampleDetection]) -> Vec<PooledPeak> {
    detections
        .iter()
        .flat_map(|d| {
            d.peaks.peaks.iter().map(|p| PooledPeak {
                sample_id: d.sample_id.clone(),
                apex_mz: p.apex_mz,
            })
        })
        .collect()
}

/// Replicate groups of a quantified matrix whose rows are spectra, in
/// first-appearance order.
pub fn replicate_groups(qm: &QuantifiedMatrix, table: &SampleTable) -> Result<Vec<(String, Vec<usize>)>> {
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, id) in qm.samples.iter().enumerate() {
        let record = table
            .find_spectrum(id)
            .ok_or_else(|| Error::Validation(format!("spectrum {id} is not listed in the metadata")))?;
        match groups.iter_mut().find(|g| g.0 == record.sample_id) {
            Some(g) => g.1.push(i),
            None => groups.push((record.sample_id.clone(), vec![i])),
        }
    }
    Ok(groups)
}

/// Cohort of rows labelled by spectrum ids or, after replicate averaging,
/// sample ids.
pub fn cohort_for(row_ids: &[String], table: &SampleTable) -> Result<Cohort> {
    let mut sample_ids = Vec::with_capacity(row_ids.len());
    let mut classes = Vec::with_capacity(row_ids.len());
    for id in row_ids {
        let record = table
            .find_spectrum(id)
            .or_else(|| table.rows.iter().find(|r| &r.sample_id == id))
            .ok_or_else(|| Error::Validation(format!("row {id} is not listed in the metadata")))?;
        sample_ids.push(record.sample_id.clone());
        classes.push(record.class);
    }
    Ok(Cohort::new(row_ids.to_vec(), sample_ids, classes))
}

/// Calibration and validation rows of the cohort: one pair per random
/// split, or the metadata sets when `repetitions` is `None`.
pub fn cohort_splits(
    cohort: &Cohort,
    table: &SampleTable,
    seed: u64,
    repetitions: Option<usize>,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    match repetitions {
        Some(r) => Ok(random_split(table, seed, r)?
            .iter()
            .map(|s| (cohort.rows_of(&s.members(SplitSet::A)), cohort.rows_of(&s.members(SplitSet::B))))
            .collect()),
        None => {
            let sets = sample_sets(table);
            let of = |set: SampleSet| -> Vec<usize> {
                (0..cohort.len()).filter(|&i| sets[cohort.sample_ids[i].as_str()] == set).collect()
            };
            Ok(vec![(of(SampleSet::Calibration), of(SampleSet::Validation))])
        }
    }
}

fn sample_sets(table: &SampleTable) -> BTreeMap<&str, SampleSet> {
    table.rows.iter().map(|r| (r.sample_id.as_str(), r.set)).collect()
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs every stage and writes the artifacts and report.
pub fn run_pipeline(config: &PipelineConfig) -> std::result::Result<PipelineReport, StageError> {
    config.validate()?;
    let out = OutputLayout {
        root: config.paths.output.clone(),
    };
    create_dir(&out.root).stage(Stage::Config)?;

    let table = parse_metadata(&config.paths.metadata).stage(Stage::SpectrumIo)?;
    let range = config.detection.mz_range.map(|(lo, hi)| MzRange { lo, hi });
    let spectra = load_spectra(&table, &config.paths.spectra, range).stage(Stage::SpectrumIo)?;
    info!("read {} spectra", spectra.len());

    let params = config.detection.params();
    let detections: Vec<SampleDetection> = spectra.par_iter().map(|s| detect(s, &params)).collect();
    create_dir(&out.detect_dir()).stage(Stage::PeakDetection)?;
    detections
        .par_iter()
        .map(|d| {
            let (intervals, peaks) = detection_files(&out.detect_dir(), &d.sample_id);
            write_intervals(&intervals, &d.sample_id, &d.intervals)?;
            write_intervals(&peaks, &d.sample_id, &d.peaks.peaks)
        })
        .collect::<Result<Vec<_>>>()
        .stage(Stage::PeakDetection)?;

    let cluster_params = config.clustering.params();
    let clusters: Vec<IsotopicCluster> = identify_clusters(&pool_peaks(&detections), &cluster_params);
    let header = ClusterFileHeader::from(&cluster_params);
    write_clusters(&out.clusters(), &header, &clusters).stage(Stage::ClusterId)?;
    info!("identified {} clusters", clusters.len());

    let quantify_params = QuantifyParams {
        max_peaks: cluster_params.max_peaks,
        prune_mode: cluster_params.prune_mode,
    };
    let mut qm = quantify_and_prune(&spectra, &detections, &clusters, &quantify_params).stage(Stage::Quantify)?;
    drop(spectra);
    write_quantified(&out.quantified(), &qm).stage(Stage::Quantify)?;
    write_cluster_summary(&out.cluster_summary(), &qm).stage(Stage::Quantify)?;
    if config.measures.average_replicates {
        let groups = replicate_groups(&qm, &table).stage(Stage::Quantify)?;
        qm = qm.average_replicates(&groups);
    }
    info!("kept {} clusters with {} peaks", qm.n_clusters(), qm.n_peaks());

    let recipes = config.recipes().stage(Stage::Measures)?;
    create_dir(&out.features_dir()).stage(Stage::Measures)?;
    let mut n_features: BTreeMap<String, usize> = BTreeMap::new();
    for recipe in &recipes {
        let mut total = 0;
        for spec in &recipe.measures {
            let fm = summarize(&qm, spec).stage(Stage::Measures)?;
            total += fm.n_features();
            let path = out.features_dir().join(format!("{}.csv", spec.label().replace([':', '@'], "_")));
            write_feature_matrix(&path, &fm).stage(Stage::Measures)?;
        }
        n_features.insert(recipe.label(), total);
    }

    let cohort = cohort_for(&qm.samples, &table).stage(Stage::Classify)?;
    let cv = config.classification.cv_config().stage(Stage::Classify)?;
    let phases = config.classification.phases;
    let resampled_splits = if phases != PhaseSelection::External {
        cohort_splits(&cohort, &table, cv.seed, Some(config.classification.repetitions)).stage(Stage::Classify)?
    } else {
        Vec::new()
    };
    let external_split = if phases != PhaseSelection::Resampled {
        cohort_splits(&cohort, &table, cv.seed, None).stage(Stage::Classify)?.pop()
    } else {
        None
    };

    create_dir(&out.classify_dir()).stage(Stage::Classify)?;
    let mut results = Vec::with_capacity(recipes.len());
    for recipe in recipes {
        let label = recipe.label();
        info!("classifying with {label}");
        let source = MeasureSource::new(&qm, recipe, config.classification.scope).stage(Stage::Classify)?;
        let file_stem = label.replace([':', '@', '|', '+'], "_");
        let mut result = MeasureResult {
            measure: label.clone(),
            n_features: n_features[&label],
            resampled_calibration: None,
            resampled_validation: None,
            external_calibration: None,
            external_validation: None,
        };
        if !resampled_splits.is_empty() {
            let (cal, val) = evaluate_splits(&source, &cohort, &resampled_splits, &cv).stage(Stage::Classify)?;
            write_probabilities(&out.classify_dir().join(format!("{file_stem}.resampled_calibration.csv")), &cal.predictions)
                .stage(Stage::Classify)?;
            result.resampled_calibration = Some(PhaseResult::from(&cal));
            if let Some(val) = val {
                write_probabilities(&out.classify_dir().join(format!("{file_stem}.resampled_validation.csv")), &val.predictions)
                    .stage(Stage::Classify)?;
                result.resampled_validation = Some(PhaseResult::from(&val));
            }
        }
        if let Some(split) = &external_split {
            let (cal, val) = evaluate_splits(&source, &cohort, std::slice::from_ref(split), &cv).stage(Stage::Classify)?;
            write_probabilities(&out.classify_dir().join(format!("{file_stem}.external_calibration.csv")), &cal.predictions)
                .stage(Stage::Classify)?;
            result.external_calibration = Some(PhaseResult::from(&cal));
            if let Some(val) = val {
                write_probabilities(&out.classify_dir().join(format!("{file_stem}.external_validation.csv")), &val.predictions)
                    .stage(Stage::Classify)?;
                result.external_validation = Some(PhaseResult::from(&val));
            }
        }
        results.push(result);
    }

    let report = PipelineReport {
        n_spectra: detections.len(),
        n_samples: table.rows.iter().map(|r| r.sample_id.as_str()).collect::<std::collections::BTreeSet<_>>().len(),
        n_clusters_identified: clusters.len(),
        n_clusters_kept: qm.n_clusters(),
        n_peaks: qm.n_peaks(),
        undetected_fraction: qm.undetected_fraction(),
        repetitions: config.classification.repetitions,
        seed: cv.seed,
        measures: results,
    };
    write_report(&out, &report).stage(Stage::Classify)?;
    Ok(report)
}

const METRIC_NAMES: [&str; 4] = ["error_rate", "brier", "deviance", "auc"];

fn metric_value(m: &Metrics, k: usize) -> Option<f64> {
    match k {
        0 => Some(m.error_rate),
        1 => Some(m.brier),
        2 => Some(m.deviance),
        _ => m.auc,
    }
}

/// One row per metric, one column per measure; cells read `mean (se)`.
pub fn metrics_table(results: &[MeasureResult], phase: impl Fn(&MeasureResult) -> Option<&PhaseResult>) -> String {
    let mut text = String::from("metric");
    for r in results {
        text.push(',');
        text.push_str(&r.measure);
    }
    text.push('\n');
    for (k, name) in METRIC_NAMES.iter().enumerate() {
        text.push_str(name);
        for r in results {
            text.push(',');
            let cell = phase(r).and_then(|p| {
                let mean = metric_value(&p.mean, k)?;
                Some(match p.standard_error.as_ref().and_then(|se| metric_value(se, k)) {
                    Some(se) => format!("{mean:.4} ({se:.4})"),
                    None => format!("{mean:.4}"),
                })
            });
            text.push_str(&cell.unwrap_or_else(|| "NA".into()));
        }
        text.push('\n');
    }
    text
}

fn write_report(out: &OutputLayout, report: &PipelineReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    fs::write(out.report(), json).map_err(|e| Error::io(out.report(), e))?;
    let tables: [(&str, fn(&MeasureResult) -> Option<&PhaseResult>); 4] = [
        ("table_resampled_calibration.csv", |r| r.resampled_calibration.as_ref()),
        ("table_resampled_validation.csv", |r| r.resampled_validation.as_ref()),
        ("table_external_calibration.csv", |r| r.external_calibration.as_ref()),
        ("table_external_validation.csv", |r| r.external_validation.as_ref()),
    ];
    for (name, phase) in tables {
        if report.measures.iter().any(|r| phase(r).is_some()) {
            let path = out.root.join(name);
            fs::write(&path, metrics_table(&report.measures, phase)).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}
