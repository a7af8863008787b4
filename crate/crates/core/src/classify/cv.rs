//! Penalty tuning and double (nested) cross-validation.
//!
//! The outer loop leaves out one sample group at a time (a sample with all
//! its replicate spectra); the inner loop picks the penalty by
//! cross-validated deviance on the remaining rows. Features are rebuilt for
//! every outer fold from that fold's training rows.
//!
//! With `prevalence_offset` (the default) every fitted model's intercept is
//! shifted by `logit(pi_ref) - logit(pi_train)`, where `pi_ref` is the case
//! fraction of the whole cohort being cross-validated and `pi_train` that of
//! the fold's training rows. Leaving out a case otherwise lowers the
//! training prevalence exactly for the case, which pushes held-out cases
//! below held-out controls whenever the slopes are shrunk towards zero.

use std::fmt;
use std::str::FromStr;

use log::{debug, warn};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::FeatureSource;
use super::metrics::{average_metrics, metrics, Metrics};
use super::ridge::{RidgeModel, RidgeProblem, RidgeSolution};
use crate::error::{Error, Result};
use crate::spectrum_io::ClassLabel;
use crate::stats::{logistic, logit};

pub const DEFAULT_GRID_MIN: f64 = 1e-4;
pub const DEFAULT_GRID_MAX: f64 = 1e4;
pub const DEFAULT_GRID_SIZE: usize = 50;
pub const MIN_DOUBLE_CV_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InnerScheme {
    #[default]
    Loo,
    KFold(usize),
}

impl FromStr for InnerScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "loo" {
            return Ok(InnerScheme::Loo);
        }
        match s.strip_prefix("kfold:").map(str::parse::<usize>) {
            Some(Ok(k)) if k >= 2 => Ok(InnerScheme::KFold(k)),
            _ => Err(Error::Config(format!("unknown inner scheme '{s}' (allowed: loo, kfold:K with K >= 2)"))),
        }
    }
}

impl fmt::Display for InnerScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InnerScheme::Loo => f.write_str("loo"),
            InnerScheme::KFold(k) => write!(f, "kfold:{k}"),
        }
    }
}

/// `size` log-spaced penalties from `min` to `max`.
pub fn lambda_grid(min: f64, max: f64, size: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max >= min && max.is_finite()) || size == 0 {
        return Err(Error::Config(format!(
            "invalid lambda grid: min {min}, max {max}, size {size}"
        )));
    }
    if size == 1 {
        return Ok(vec![min]);
    }
    let (a, b) = (min.ln(), max.ln());
    Ok((0..size)
        .map(|k| (a + (b - a) * k as f64 / (size - 1) as f64).exp())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub grid: Vec<f64>,
    pub inner: InnerScheme,
    pub seed: u64,
    pub prevalence_offset: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            grid: lambda_grid(DEFAULT_GRID_MIN, DEFAULT_GRID_MAX, DEFAULT_GRID_SIZE).expect("valid default"),
            inner: InnerScheme::Loo,
            seed: 0,
            prevalence_offset: true,
        }
    }
}

/// SplitMix64 finaliser, used to derive per-fold seeds.
pub(crate) fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Test-row index sets of the inner scheme. K-fold is stratified by label:
/// each class is shuffled and dealt round-robin, controls continuing where
/// cases stopped.
pub fn inner_folds(labels: &[f64], scheme: InnerScheme, seed: u64) -> Vec<Vec<usize>> {
    let n = labels.len();
    match scheme {
        InnerScheme::Loo => (0..n).map(|i| vec![i]).collect(),
        InnerScheme::KFold(k) if k >= n => (0..n).map(|i| vec![i]).collect(),
        InnerScheme::KFold(k) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut folds = vec![Vec::new(); k];
            let mut slot = 0;
            for class in [1.0, 0.0] {
                let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
                members.shuffle(&mut rng);
                for i in members {
                    folds[slot % k].push(i);
                    slot += 1;
                }
            }
            folds.iter_mut().for_each(|f| f.sort_unstable());
            folds
        }
    }
}

fn prevalence(labels: &[f64]) -> f64 {
    labels.iter().sum::<f64>() / labels.len() as f64
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let mut in_test = vec![false; n];
    test.iter().for_each(|&i| in_test[i] = true);
    (0..n).filter(|&i| !in_test[i]).collect()
}

fn pick(values: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| values[i]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub lambda: f64,
    /// Deduplicated grid in decreasing order with its summed held-out
    /// deviance; `None` where some fold failed to fit.
    pub path: Vec<(f64, Option<f64>)>,
}

fn unit_deviance(p: f64, c: f64) -> f64 {
    -2.0 * (1.0 - (p - c).abs()).ln()
}

/// Minimises cross-validated deviance over `config.grid`; ties go to the
/// larger penalty.
pub fn tune_lambda(x: &DMatrix<f64>, labels: &[f64], config: &CvConfig) -> Result<TuneResult> {
    let mut grid: Vec<f64> = config.grid.clone();
    if grid.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();
    if grid.len() == 1 {
        return Ok(TuneResult {
            lambda: grid[0],
            path: vec![(grid[0], None)],
        });
    }
    let n = labels.len();
    let reference = prevalence(labels);
    let mut total: Vec<Option<f64>> = vec![Some(0.0); grid.len()];
    for test in inner_folds(labels, config.inner, config.seed) {
        if test.is_empty() {
            continue;
        }
        let train = complement(n, &test);
        let c_train = pick(labels, &train);
        let problem = RidgeProblem::new(&x.select_rows(&train), &c_train)?;
        let offset = if config.prevalence_offset {
            logit(reference) - logit(problem.prevalence())
        } else {
            0.0
        };
        let x_test = x.select_rows(&test);
        let mut warm: Option<RidgeSolution> = None;
        for (g, &lambda) in grid.iter().enumerate() {
            if total[g].is_none() {
                continue;
            }
            match problem.solve(lambda, warm.as_ref().map(|s| &s.w)) {
                Ok(sol) => {
                    let model = problem.model(&sol, lambda);
                    let dev: f64 = test
                        .iter()
                        .enumerate()
                        .map(|(r, &i)| {
                            let row: Vec<f64> = x_test.row(r).iter().copied().collect();
                            unit_deviance(logistic(model.linear_predictor(&row) + offset), labels[i])
                        })
                        .sum();
                    total[g] = total[g].map(|t| t + dev);
                    warm = Some(sol);
                }
                Err(e) => {
                    debug!("skipping lambda {lambda:.3e}: {e}");
                    total[g] = None;
                }
            }
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for (g, t) in total.iter().enumerate() {
        if let Some(t) = *t {
            if best.is_none_or(|(_, b)| t < b) {
                best = Some((g, t));
            }
        }
    }
    let skipped = total.iter().filter(|t| t.is_none()).count();
    if skipped > 0 {
        warn!("{skipped} of {} grid points skipped after failed fits", grid.len());
    }
    let (g, _) = best.ok_or_else(|| Error::Validation("every lambda on the grid failed to fit".into()))?;
    Ok(TuneResult {
        lambda: grid[g],
        path: grid.into_iter().zip(total).collect(),
    })
}

/// Out-of-fold predictions from double cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    /// Rows cross-validated, in the order given.
    pub rows: Vec<usize>,
    pub probabilities: Vec<f64>,
    /// Penalty chosen in the outer fold that held each row out.
    pub lambdas: Vec<f64>,
    pub metrics: Metrics,
}

/// Leave-one-group-out over `rows` with inner tuning. `labels` and
/// `groups` are indexed like the source's samples; rows sharing a group id
/// are held out together.
pub fn double_cv(
    source: &dyn FeatureSource,
    labels: &[f64],
    groups: &[usize],
    rows: &[usize],
    config: &CvConfig,
) -> Result<CvOutcome> {
    if labels.len() != source.n_samples() || groups.len() != labels.len() {
        return Err(Error::Dimension {
            expected: source.n_samples(),
            found: labels.len().min(groups.len()),
        });
    }
    if rows.len() < MIN_DOUBLE_CV_SAMPLES {
        return Err(Error::Validation(format!(
            "double cross-validation needs at least {MIN_DOUBLE_CV_SAMPLES} samples, got {}",
            rows.len()
        )));
    }
    let mut folds: Vec<(usize, Vec<usize>)> = Vec::new();
    for &r in rows {
        match folds.iter_mut().find(|(g, _)| *g == groups[r]) {
            Some((_, members)) => members.push(r),
            None => folds.push((groups[r], vec![r])),
        }
    }
    let reference = prevalence(&pick(labels, rows));

    let results: Vec<(Vec<usize>, Vec<f64>, f64)> = folds
        .par_iter()
        .enumerate()
        .map(|(f, (_, test))| {
            let train: Vec<usize> = rows.iter().copied().filter(|r| !test.contains(r)).collect();
            let (x_train, x_test) = source.build(&train, test)?;
            let c_train = pick(labels, &train);
            let inner = CvConfig {
                seed: mix(config.seed, f as u64),
                ..config.clone()
            };
            let tuned = tune_lambda(&x_train, &c_train, &inner)?;
            let problem = RidgeProblem::new(&x_train, &c_train)?;
            let mut model = problem.fit(tuned.lambda)?;
            if config.prevalence_offset {
                model.shift_intercept(logit(reference) - logit(problem.prevalence()));
            }
            let p = super::ridge::predict(&model, &x_test)?;
            Ok((test.clone(), p, tuned.lambda))
        })
        .collect::<Result<Vec<_>>>()?;

    let position: std::collections::HashMap<usize, usize> = rows.iter().enumerate().map(|(k, &r)| (r, k)).collect();
    let mut probabilities = vec![f64::NAN; rows.len()];
    let mut lambdas = vec![f64::NAN; rows.len()];
    for (test, p, lambda) in results {
        for (r, v) in test.into_iter().zip(p) {
            probabilities[position[&r]] = v;
            lambdas[position[&r]] = lambda;
        }
    }
    let metrics = metrics(&probabilities, &pick(labels, rows))?;
    Ok(CvOutcome {
        rows: rows.to_vec(),
        probabilities,
        lambdas,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalOutcome {
    pub lambda: f64,
    pub model: RidgeModel,
    pub probabilities: Vec<f64>,
    pub metrics: Metrics,
}

/// Tunes and fits on the calibration rows, then predicts the validation
/// rows.
pub fn external_validate(
    x_cal: &DMatrix<f64>,
    c_cal: &[f64],
    x_val: &DMatrix<f64>,
    c_val: &[f64],
    config: &CvConfig,
) -> Result<ExternalOutcome> {
    if x_val.nrows() == 0 {
        return Err(Error::Validation("empty validation set".into()));
    }
    if x_val.nrows() != c_val.len() {
        return Err(Error::Dimension {
            expected: x_val.nrows(),
            found: c_val.len(),
        });
    }
    let tuned = tune_lambda(x_cal, c_cal, config)?;
    let model = RidgeProblem::new(x_cal, c_cal)?.fit(tuned.lambda)?;
    let probabilities = super::ridge::predict(&model, x_val)?;
    let metrics = metrics(&probabilities, c_val)?;
    Ok(ExternalOutcome {
        lambda: tuned.lambda,
        model,
        probabilities,
        metrics,
    })
}

/// One sample's predicted case probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub repetition: usize,
    pub sample_id: String,
    pub class: ClassLabel,
    pub probability: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub repetition: usize,
    pub metrics: Metrics,
    /// Chosen penalty per outer fold (one entry for external validation).
    pub lambdas: Vec<f64>,
}

/// Predictions and metrics of one evaluation, averaged over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub n_samples: usize,
    pub mean: Metrics,
    /// Sample sd / sqrt(R) across repetitions; absent for a single run.
    pub standard_error: Option<Metrics>,
    pub runs: Vec<RunSummary>,
    pub predictions: Vec<SamplePrediction>,
}

impl CvReport {
    pub fn from_runs(runs: Vec<RunSummary>, predictions: Vec<SamplePrediction>, n_samples: usize) -> Self {
        let all: Vec<Metrics> = runs.iter().map(|r| r.metrics).collect();
        let (mean, se) = average_metrics(&all);
        Self {
            n_samples,
            mean,
            standard_error: (runs.len() > 1).then_some(se),
            runs,
            predictions,
        }
    }
}

/// Sample ids, labels and replicate groups of the rows a feature source
/// produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    /// Row label (spectrum id).
    pub row_ids: Vec<String>,
    /// Biological sample of each row.
    pub sample_ids: Vec<String>,
    pub classes: Vec<ClassLabel>,
    pub labels: Vec<f64>,
    pub groups: Vec<usize>,
}

impl Cohort {
    pub fn new(row_ids: Vec<String>, sample_ids: Vec<String>, classes: Vec<ClassLabel>) -> Self {
        let mut distinct: Vec<&String> = Vec::new();
        let groups = sample_ids
            .iter()
            .map(|s| match distinct.iter().position(|d| *d == s) {
                Some(g) => g,
                None => {
                    distinct.push(s);
                    distinct.len() - 1
                }
            })
            .collect();
        Self {
            labels: classes.iter().map(|c| c.as_f64()).collect(),
            row_ids,
            sample_ids,
            classes,
            groups,
        }
    }

    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    /// Rows whose sample id is in `ids`.
    pub fn rows_of(&self, ids: &[&str]) -> Vec<usize> {
        (0..self.len()).filter(|&i| ids.contains(&self.sample_ids[i].as_str())).collect()
    }

    fn predictions(&self, repetition: usize, rows: &[usize], p: &[f64], lambdas: &[f64]) -> Vec<SamplePrediction> {
        rows.iter()
            .zip(p.iter().zip(lambdas))
            .map(|(&r, (&probability, &lambda))| SamplePrediction {
                repetition,
                sample_id: self.row_ids[r].clone(),
                class: self.classes[r],
                probability,
                lambda,
            })
            .collect()
    }
}

/// Double cross-validation on `calibration` and, when `validation` is
/// non-empty, external validation of the calibration rule on it.
pub fn evaluate_split(
    source: &dyn FeatureSource,
    cohort: &Cohort,
    calibration: &[usize],
    validation: &[usize],
    repetition: usize,
    config: &CvConfig,
) -> Result<(RunSummary, Vec<SamplePrediction>, Option<(RunSummary, Vec<SamplePrediction>)>)> {
    let cv = double_cv(source, &cohort.labels, &cohort.groups, calibration, config)?;
    let mut fold_lambdas: Vec<f64> = Vec::new();
    let mut seen_groups: Vec<usize> = Vec::new();
    for (k, &r) in calibration.iter().enumerate() {
        if !seen_groups.contains(&cohort.groups[r]) {
            seen_groups.push(cohort.groups[r]);
            fold_lambdas.push(cv.lambdas[k]);
        }
    }
    let cal = (
        RunSummary {
            repetition,
            metrics: cv.metrics,
            lambdas: fold_lambdas,
        },
        cohort.predictions(repetition, calibration, &cv.probabilities, &cv.lambdas),
    );
    let val = if validation.is_empty() {
        None
    } else {
        let (x_cal, x_val) = source.build(calibration, validation)?;
        let ext = external_validate(
            &x_cal,
            &pick(&cohort.labels, calibration),
            &x_val,
            &pick(&cohort.labels, validation),
            config,
        )?;
        let lambdas = vec![ext.lambda; validation.len()];
        Some((
            RunSummary {
                repetition,
                metrics: ext.metrics,
                lambdas: vec![ext.lambda],
            },
            cohort.predictions(repetition, validation, &ext.probabilities, &lambdas),
        ))
    };
    Ok((cal.0, cal.1, val))
}

/// Plain double cross-validation over all rows of the cohort.
pub fn evaluate_all(source: &dyn FeatureSource, cohort: &Cohort, config: &CvConfig) -> Result<CvReport> {
    let rows: Vec<usize> = (0..cohort.len()).collect();
    let (run, predictions, _) = evaluate_split(source, cohort, &rows, &[], 1, config)?;
    Ok(CvReport::from_runs(vec![run], predictions, cohort.len()))
}

/// Calibration (double CV) and validation reports over several splits;
/// each split is a pair of calibration and validation row sets.
pub fn evaluate_splits(
    source: &dyn FeatureSource,
    cohort: &Cohort,
    splits: &[(Vec<usize>, Vec<usize>)],
    config: &CvConfig,
) -> Result<(CvReport, Option<CvReport>)> {
    let mut cal_runs = Vec::new();
    let mut cal_pred = Vec::new();
    let mut val_runs = Vec::new();
    let mut val_pred = Vec::new();
    for (k, (cal, val)) in splits.iter().enumerate() {
        let rep_config = CvConfig {
            seed: mix(config.seed, 1_000_003 + k as u64),
            ..config.clone()
        };
        let (run, pred, ext) = evaluate_split(source, cohort, cal, val, k + 1, &rep_config)?;
        cal_runs.push(run);
        cal_pred.extend(pred);
        if let Some((run, pred)) = ext {
            val_runs.push(run);
            val_pred.extend(pred);
        }
    }
    let n_cal = splits.first().map_or(0, |s| s.0.len());
    let n_val = splits.first().map_or(0, |s| s.1.len());
    let validation = (!val_runs.is_empty()).then(|| CvReport::from_runs(val_runs, val_pred, n_val));
    Ok((CvReport::from_runs(cal_runs, cal_pred, n_cal), validation))
}
