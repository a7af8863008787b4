//! Ridge logistic classification of feature matrices and its evaluation.

pub mod cv;
pub mod features;
pub mod metrics;
pub mod ridge;
pub mod split;
pub mod spline;

pub use cv::{
    double_cv, evaluate_all, evaluate_split, evaluate_splits, external_validate, inner_folds, lambda_grid,
    tune_lambda, Cohort, CvConfig, CvOutcome, CvReport, ExternalOutcome, InnerScheme, RunSummary, SamplePrediction,
    TuneResult,
};
pub use features::{combine_features, FeatureRecipe, FeatureSource, MeasureSource, StatsScope};
pub use metrics::{auc, average_metrics, metrics, Metrics};
pub use ridge::{
    fit_ridge, penalized_gradient, penalized_log_likelihood, predict, ColumnScale, RidgeModel, RidgeProblem,
    RidgeSolution,
};
pub use split::{random_split, SplitAssignment, SplitSet};
pub use spline::{residualize_shape_on_intensity, SplineFit};
