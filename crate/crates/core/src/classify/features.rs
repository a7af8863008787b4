//! Building classifier inputs from measures, optionally combined and with
//! shape residualised on intensity.

use std::str::FromStr;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::spline::residualize_shape_on_intensity;
use crate::error::{Error, Result};
use crate::measures::{compute_measure, FeatureMatrix, Imputer, MeasureSpec, ReferenceStats};
use crate::quantify::QuantifiedMatrix;

/// Column-wise concatenation. Descriptors get the source kind as prefix
/// (unless they already carry one) so names stay distinct.
pub fn combine_features(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<FeatureMatrix> {
    if a.n_features() == 0 && a.samples.is_empty() {
        return Ok(b.clone());
    }
    if b.n_features() == 0 && b.samples.is_empty() {
        return Ok(a.clone());
    }
    if a.samples != b.samples {
        return Err(Error::Validation("combined feature matrices list different samples".into()));
    }
    let tag = |m: &FeatureMatrix| match m.on {
        Some(on) if m.kind != "combined" => format!("{}@{on}", m.kind),
        _ => m.kind.clone(),
    };
    let prefixed = |m: &FeatureMatrix| -> Vec<_> {
        let t = tag(m);
        m.columns
            .iter()
            .map(|c| {
                let mut c = c.clone();
                if c.prefix.is_none() {
                    c.prefix = Some(t.clone());
                }
                c
            })
            .collect()
    };
    let mut columns = prefixed(a);
    columns.extend(prefixed(b));
    let n = a.n_samples();
    let (pa, pb) = (a.n_features(), b.n_features());
    let values = DMatrix::from_fn(n, pa + pb, |i, c| if c < pa { a.values[(i, c)] } else { b.values[(i, c - pa)] });
    let missing_mask = DMatrix::from_fn(n, pa + pb, |i, c| {
        if c < pa {
            a.missing_mask[(i, c)]
        } else {
            b.missing_mask[(i, c - pa)]
        }
    });
    let unique: std::collections::HashSet<String> = columns.iter().map(|c| c.to_string()).collect();
    if unique.len() != columns.len() {
        return Err(Error::Validation("combined feature matrix has duplicate column names".into()));
    }
    Ok(FeatureMatrix {
        kind: "combined".into(),
        on: None,
        samples: a.samples.clone(),
        columns,
        values,
        missing_mask,
    })
}

/// Where cross-sample statistics come from inside cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsScope {
    /// Training samples of each fold only.
    #[default]
    Training,
    /// Every sample, held-out ones included.
    AllSamples,
}

impl FromStr for StatsScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "training" => Ok(StatsScope::Training),
            "all-samples" => Ok(StatsScope::AllSamples),
            other => Err(Error::Config(format!(
                "unknown statistics scope '{other}' (allowed: training, all-samples)"
            ))),
        }
    }
}

/// One model's inputs: a list of measures, concatenated. With
/// `residualize`, every shape measure column is replaced by its residual on
/// the first measure's column for the same cluster (the first measure must
/// then be a scalar intensity measure).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecipe {
    pub measures: Vec<MeasureSpec>,
    #[serde(default)]
    pub residualize: bool,
}

impl FeatureRecipe {
    pub fn single(spec: MeasureSpec) -> Self {
        Self {
            measures: vec![spec],
            residualize: false,
        }
    }

    pub fn label(&self) -> String {
        let names: Vec<String> = self.measures.iter().map(MeasureSpec::label).collect();
        let joined = names.join("+");
        if self.residualize {
            format!("{joined}|resid")
        } else {
            joined
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.measures.is_empty() {
            return Err(Error::Config("feature recipe without measures".into()));
        }
        for m in &self.measures {
            m.validate()?;
        }
        if self.residualize {
            use crate::measures::MeasureKind::*;
            let first = self.measures[0].kind;
            if !matches!(first, Sr | Mr | Sq | Mq | Sl | Ml | Bc) {
                return Err(Error::Config(format!(
                    "residualisation needs a scalar intensity measure first, got '{first}'"
                )));
            }
        }
        Ok(())
    }
}

/// Produces training and evaluation design matrices for a fold.
pub trait FeatureSource: Sync {
    fn n_samples(&self) -> usize;

    /// Rows `train` and `eval`, with every statistic estimated on `train`.
    fn build(&self, train: &[usize], eval: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)>;
}

/// Fixed feature values; folds only select rows.
impl FeatureSource for DMatrix<f64> {
    fn n_samples(&self) -> usize {
        self.nrows()
    }

    fn build(&self, train: &[usize], eval: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.select_rows(train), self.select_rows(eval)))
    }
}

/// Measures recomputed per fold from a quantified matrix.
pub struct MeasureSource<'a> {
    pub qm: &'a QuantifiedMatrix,
    pub recipe: FeatureRecipe,
    pub scope: StatsScope,
}

impl<'a> MeasureSource<'a> {
    pub fn new(qm: &'a QuantifiedMatrix, recipe: FeatureRecipe, scope: StatsScope) -> Result<Self> {
        recipe.validate()?;
        Ok(Self { qm, recipe, scope })
    }

    /// Imputed feature matrices for `train` and `eval` rows.
    pub fn matrices(&self, train: &[usize], eval: &[usize]) -> Result<(FeatureMatrix, FeatureMatrix)> {
        let stats = match self.scope {
            StatsScope::Training => ReferenceStats::fit(self.qm, train),
            StatsScope::AllSamples => ReferenceStats::fit_all(self.qm),
        };
        let rows: Vec<usize> = train.iter().chain(eval).copied().collect();
        let n_train = train.len();
        let train_idx: Vec<usize> = (0..n_train).collect();
        let eval_idx: Vec<usize> = (n_train..rows.len()).collect();

        let mut parts: Vec<FeatureMatrix> = Vec::with_capacity(self.recipe.measures.len());
        for spec in &self.recipe.measures {
            let raw = compute_measure(self.qm, spec, &stats, &rows)?;
            let imputer = Imputer::fit(&raw.select_rows(&train_idx));
            parts.push(imputer.apply(&raw));
        }
        if self.recipe.residualize {
            let (intensity, shapes) = parts.split_first_mut().expect("validated non-empty");
            for shape in shapes.iter_mut() {
                residualize_columns(shape, intensity, &train_idx)?;
            }
        }
        let mut combined = parts[0].clone();
        for part in &parts[1..] {
            combined = combine_features(&combined, part)?;
        }
        Ok((combined.select_rows(&train_idx), combined.select_rows(&eval_idx)))
    }
}

fn residualize_columns(shape: &mut FeatureMatrix, intensity: &FeatureMatrix, fit_rows: &[usize]) -> Result<()> {
    for c in 0..shape.n_features() {
        let id = shape.columns[c].cluster_id;
        let Some(ic) = intensity.columns.iter().position(|d| d.cluster_id == id) else {
            warn!("no intensity column for cluster {id}; shape column {} kept as is", shape.columns[c]);
            continue;
        };
        let s: Vec<f64> = shape.values.column(c).iter().copied().collect();
        let x: Vec<f64> = intensity.values.column(ic).iter().copied().collect();
        let r = residualize_shape_on_intensity(&s, &x, fit_rows)?;
        shape.values.column_mut(c).copy_from_slice(&r);
    }
    Ok(())
}

impl FeatureSource for MeasureSource<'_> {
    fn n_samples(&self) -> usize {
        self.qm.n_samples()
    }

    fn build(&self, train: &[usize], eval: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (a, b) = self.matrices(train, eval)?;
        Ok((a.values, b.values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{Basis, ColumnDescriptor};

    fn matrix(kind: &str, on: Option<Basis>, p: usize) -> FeatureMatrix {
        FeatureMatrix {
            kind: kind.into(),
            on,
            samples: vec!["a".into(), "b".into()],
            columns: (1..=p as u32).map(|q| ColumnDescriptor::new(q, None)).collect(),
            values: DMatrix::from_fn(2, p, |i, c| (i * 10 + c) as f64),
            missing_mask: DMatrix::from_element(2, p, false),
        }
    }

    #[test]
    fn concatenation_prefixes_columns() {
        let combined = combine_features(&matrix("sl", None, 3), &matrix("cg", Some(Basis::R), 3)).unwrap();
        assert_eq!(combined.n_features(), 6);
        assert_eq!(combined.kind, "combined");
        assert_eq!(combined.columns[0].to_string(), "sl/q1");
        assert_eq!(combined.columns[3].to_string(), "cg@r/q1");
        assert_eq!(combined.values[(1, 4)], 11.0);
    }

    #[test]
    fn empty_is_identity() {
        let a = matrix("sl", None, 2);
        let empty = FeatureMatrix {
            kind: "none".into(),
            on: None,
            samples: vec![],
            columns: vec![],
            values: DMatrix::zeros(0, 0),
            missing_mask: DMatrix::from_element(0, 0, false),
        };
        assert_eq!(combine_features(&a, &empty).unwrap(), a);
        assert_eq!(combine_features(&empty, &a).unwrap(), a);
    }

    #[test]
    fn sample_mismatch_rejected() {
        let a = matrix("sl", None, 2);
        let mut b = matrix("cg", Some(Basis::R), 2);
        b.samples.reverse();
        assert!(combine_features(&a, &b).is_err());
    }
}
