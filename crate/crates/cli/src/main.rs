use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;

use isoshape::classify::{
    evaluate_all, evaluate_splits, lambda_grid, combine_features, CvConfig, CvReport, FeatureRecipe, FeatureSource,
    InnerScheme, MeasureSource, StatsScope,
};
use isoshape::cluster_id::{identify_clusters, ClusterParams, PruneMode};
use isoshape::measures::{summarize, MeasureSpec};
use isoshape::peak_detection::{detect, DetectionParams, PeakList, SampleDetection};
use isoshape::pipeline::{cohort_for, cohort_splits, detection_files, load_spectra, pool_peaks, replicate_groups};
use isoshape::quantify::{quantify_and_prune, QuantifyParams};
use isoshape::spectrum_io::{
    parse_metadata, read_clusters, read_feature_matrix, read_intervals, read_quantified, write_cluster_summary,
    write_clusters, write_feature_matrix, write_intervals, write_probabilities, write_quantified, ClusterFileHeader,
    MzRange, SampleTable,
};
use isoshape::synthgen::{generate_corpus, read_config, write_corpus};
use isoshape::{run_pipeline, PipelineConfig, QuantifiedMatrix};

#[derive(Parser)]
#[command(name = "isoshape", version, about = "Isotopic cluster shape analysis of mass spectra")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Threshold spectra into intervals and keep isotopic apexes.
    Detect(DetectArgs),
    /// Group pooled apexes into isotopic clusters.
    Cluster(ClusterArgs),
    /// Measure every consensus peak in every spectrum.
    Quantify(QuantifyArgs),
    /// Compute feature matrices from quantified intensities.
    Summarize(SummarizeArgs),
    /// Evaluate ridge logistic regression on features.
    Classify(ClassifyArgs),
    /// Render a synthetic corpus.
    Simulate(SimulateArgs),
    /// Run every stage from a configuration file.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct CohortArgs {
    /// Cohort table (sample_id, class, plate, set, replicate[, file]).
    #[arg(long)]
    metadata: PathBuf,
    /// Directory holding the spectrum files.
    #[arg(long)]
    spectra: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    cohort: CohortArgs,
    #[arg(long, default_value_t = DetectionParams::default().threshold)]
    threshold: f64,
    #[arg(long, default_value_t = DetectionParams::default().neighbor_tol)]
    neighbor_tol: f64,
    /// Reject spectra outside LO,HI.
    #[arg(long, value_parser = parse_range)]
    mz_range: Option<MzRange>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    /// Output directory of `detect`.
    #[arg(long)]
    detections: PathBuf,
    /// Pool spectra in this table's order instead of file-name order.
    #[arg(long)]
    metadata: Option<PathBuf>,
    #[arg(long, default_value_t = ClusterParams::default().delta)]
    delta: f64,
    #[arg(long, default_value_t = ClusterParams::default().delta_prime)]
    delta_prime: f64,
    #[arg(long, default_value_t = ClusterParams::default().max_peaks)]
    max_peaks: usize,
    #[arg(long, default_value = "conjunctive")]
    prune_mode: PruneMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QuantifyArgs {
    #[command(flatten)]
    cohort: CohortArgs,
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    clusters: PathBuf,
    /// Geometric mean over replicate spectra of each sample.
    #[arg(long)]
    average_replicates: bool,
    /// Output directory for quantified.csv and cluster_summary.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QuantifiedArgs {
    #[arg(long)]
    quantified: PathBuf,
    /// Cluster summary written next to the quantified table.
    #[arg(long)]
    summary: Option<PathBuf>,
}

impl QuantifiedArgs {
    fn load(&self) -> Result<QuantifiedMatrix> {
        let summary = self
            .summary
            .clone()
            .unwrap_or_else(|| self.quantified.with_file_name("cluster_summary.csv"));
        Ok(read_quantified(&self.quantified, &summary)?)
    }
}

#[derive(Args)]
struct SummarizeArgs {
    #[command(flatten)]
    input: QuantifiedArgs,
    /// Measure labels such as sl, sr, cg@r or ratios:top-two@s.
    #[arg(long = "measure", required = true)]
    measures: Vec<String>,
    /// Basis for shape measures given without `@`.
    #[arg(long, default_value = "r")]
    on: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    DoubleCv,
    External,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Fixed feature matrices, combined column-wise.
    #[arg(long, num_args = 1.., conflicts_with = "quantified")]
    features: Vec<PathBuf>,
    /// Quantified table; measures are then recomputed inside every fold.
    #[arg(long)]
    quantified: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Measures to compute from --quantified.
    #[arg(long = "measure")]
    measures: Vec<String>,
    #[arg(long, default_value = "r")]
    on: String,
    /// Replace shape columns by residuals on the first (intensity) measure.
    #[arg(long)]
    residualize: bool,
    /// Cross-sample statistics from training rows or from all samples.
    #[arg(long, default_value = "training")]
    scope: StatsScope,
    #[arg(long)]
    metadata: PathBuf,
    #[arg(long, value_enum, default_value = "double-cv")]
    mode: Mode,
    #[arg(long, default_value_t = 1e-4)]
    grid_min: f64,
    #[arg(long, default_value_t = 1e4)]
    grid_max: f64,
    #[arg(long, default_value_t = 50)]
    grid_size: usize,
    /// loo or kfold:K.
    #[arg(long, default_value = "loo")]
    inner: InnerScheme,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random plate-preserving splits; 0 cross-validates all samples once.
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    /// Keep the fitted intercept instead of re-centring it on the cohort's
    /// case fraction.
    #[arg(long)]
    no_prevalence_offset: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Validate the configuration and exit.
    #[arg(long)]
    dry_run: bool,
    /// Overrides the classification seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_range(s: &str) -> std::result::Result<MzRange, String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("invalid number '{lo}'"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("invalid number '{hi}'"))?;
    if lo >= hi {
        return Err(format!("empty range {lo},{hi}"));
    }
    Ok(MzRange { lo, hi })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn run_detect(args: DetectArgs) -> Result<()> {
    let table = parse_metadata(&args.cohort.metadata)?;
    let spectra = load_spectra(&table, &args.cohort.spectra, args.mz_range)?;
    let params = DetectionParams {
        threshold: args.threshold,
        neighbor_tol: args.neighbor_tol,
    };
    create_dir(&args.out)?;
    spectra
        .par_iter()
        .map(|s| {
            let d = detect(s, &params);
            let (intervals, peaks) = detection_files(&args.out, &d.sample_id);
            write_intervals(&intervals, &d.sample_id, &d.intervals)?;
            write_intervals(&peaks, &d.sample_id, &d.peaks.peaks)?;
            Ok(())
        })
        .collect::<Result<Vec<_>>>()?;
    info!("wrote detections of {} spectra to {}", spectra.len(), args.out.display());
    Ok(())
}

/// Detection outputs in `dir`, in table order when given, else by file name.
fn read_detections(dir: &Path, table: Option<&SampleTable>) -> Result<Vec<SampleDetection>> {
    let ids: Vec<String> = match table {
        Some(t) => t.rows.iter().map(|r| r.spectrum_id()).collect(),
        None => {
            let mut ids: Vec<String> = fs::read_dir(dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .filter_map(|e| e.ok())
                .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".peaks.csv")).map(String::from))
                .collect();
            ids.sort();
            ids
        }
    };
    if ids.is_empty() {
        bail!("no detection files in {}", dir.display());
    }
    ids.par_iter()
        .map(|id| {
            let (intervals_path, peaks_path) = detection_files(dir, id);
            let (sample_id, intervals) = read_intervals(&intervals_path)?;
            let (_, peaks) = read_intervals(&peaks_path)?;
            Ok(SampleDetection {
                sample_id: sample_id.clone(),
                intervals,
                peaks: PeakList { sample_id, peaks },
            })
        })
        .collect()
}

fn run_cluster(args: ClusterArgs) -> Result<()> {
    let table = args.metadata.as_deref().map(parse_metadata).transpose()?;
    let detections = read_detections(&args.detections, table.as_ref())?;
    let params = ClusterParams {
        delta: args.delta,
        delta_prime: args.delta_prime,
        max_peaks: args.max_peaks,
        prune_mode: args.prune_mode,
    };
    let clusters = identify_clusters(&pool_peaks(&detections), &params);
    write_clusters(&args.out, &ClusterFileHeader::from(&params), &clusters)?;
    info!("{} clusters written to {}", clusters.len(), args.out.display());
    Ok(())
}

fn run_quantify(args: QuantifyArgs) -> Result<()> {
    let table = parse_metadata(&args.cohort.metadata)?;
    let spectra = load_spectra(&table, &args.cohort.spectra, None)?;
    let detections = read_detections(&args.detections, Some(&table))?;
    let (header, clusters) = read_clusters(&args.clusters)?;
    let params = QuantifyParams {
        max_peaks: header.max_peaks,
        prune_mode: header.prune_mode,
    };
    let mut qm = quantify_and_prune(&spectra, &detections, &clusters, &params)?;
    if args.average_replicates {
        qm = qm.average_replicates(&replicate_groups(&qm, &table)?);
    }
    create_dir(&args.out)?;
    write_quantified(&args.out.join("quantified.csv"), &qm)?;
    write_cluster_summary(&args.out.join("cluster_summary.csv"), &qm)?;
    info!(
        "{} of {} clusters kept; {:.1}% of entries undetected",
        qm.n_clusters(),
        clusters.len(),
        100.0 * qm.undetected_fraction()
    );
    Ok(())
}

fn parse_specs(labels: &[String], on: &str) -> Result<Vec<MeasureSpec>> {
    let default_on = on.parse()?;
    labels
        .iter()
        .map(|l| {
            Ok(if l.contains('@') {
                l.parse()?
            } else {
                MeasureSpec::new(l.trim().parse()?, default_on)?
            })
        })
        .collect()
}

fn file_label(label: &str) -> String {
    label.replace([':', '@', '|', '+'], "_")
}

fn run_summarize(args: SummarizeArgs) -> Result<()> {
    let qm = args.input.load()?;
    let specs = parse_specs(&args.measures, &args.on)?;
    create_dir(&args.out)?;
    for spec in specs {
        let fm = summarize(&qm, &spec)?;
        let path = args.out.join(format!("{}.csv", file_label(&spec.label())));
        write_feature_matrix(&path, &fm)?;
        info!("{}: {} features written to {}", spec.label(), fm.n_features(), path.display());
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct ClassifyReport<'a> {
    measure: String,
    mode: &'static str,
    repetitions: usize,
    seed: u64,
    calibration: &'a CvReport,
    validation: Option<&'a CvReport>,
}

fn run_classify(args: ClassifyArgs) -> Result<()> {
    let table = parse_metadata(&args.metadata)?;
    let config = CvConfig {
        grid: lambda_grid(args.grid_min, args.grid_max, args.grid_size)?,
        inner: args.inner,
        seed: args.seed,
        prevalence_offset: !args.no_prevalence_offset,
    };

    let qm_holder;
    let fixed;
    let (source, row_ids, label): (Box<dyn FeatureSource + '_>, Vec<String>, String) =
        if let Some(quantified) = &args.quantified {
            if args.measures.is_empty() {
                bail!("--quantified needs at least one --measure");
            }
            qm_holder = QuantifiedArgs {
                quantified: quantified.clone(),
                summary: args.summary.clone(),
            }
            .load()?;
            let recipe = FeatureRecipe {
                measures: parse_specs(&args.measures, &args.on)?,
                residualize: args.residualize,
            };
            let label = recipe.label();
            let source = MeasureSource::new(&qm_holder, recipe, args.scope)?;
            (Box::new(source), qm_holder.samples.clone(), label)
        } else {
            if args.features.is_empty() {
                bail!("give --features or --quantified");
            }
            let mut combined = read_feature_matrix(&args.features[0])?;
            for path in &args.features[1..] {
                combined = combine_features(&combined, &read_feature_matrix(path)?)?;
            }
            if combined.has_missing() {
                warn!("feature values marked missing are used as stored");
            }
            let label = if args.features.len() == 1 { combined.kind.clone() } else { "combined".into() };
            fixed = combined.values.clone();
            (Box::new(fixed.clone()), combined.samples.clone(), label)
        };
    let cohort = cohort_for(&row_ids, &table)?;

    let (calibration, validation, repetitions) = match (args.mode, args.repetitions) {
        (Mode::DoubleCv, 0) => (evaluate_all(source.as_ref(), &cohort, &config)?, None, 0),
        (Mode::DoubleCv, r) => {
            let splits = cohort_splits(&cohort, &table, config.seed, Some(r))?;
            let (cal, val) = evaluate_splits(source.as_ref(), &cohort, &splits, &config)?;
            (cal, val, r)
        }
        (Mode::External, _) => {
            let splits = cohort_splits(&cohort, &table, config.seed, None)?;
            if splits[0].1.is_empty() {
                bail!("external mode needs samples in the validation set");
            }
            let (cal, val) = evaluate_splits(source.as_ref(), &cohort, &splits, &config)?;
            (cal, val, 1)
        }
    };

    create_dir(&args.out)?;
    let report = ClassifyReport {
        measure: label,
        mode: match args.mode {
            Mode::DoubleCv => "double-cv",
            Mode::External => "external",
        },
        repetitions,
        seed: config.seed,
        calibration: &calibration,
        validation: validation.as_ref(),
    };
    write_json(&args.out.join("report.json"), &report)?;
    write_probabilities(&args.out.join("probabilities_calibration.csv"), &calibration.predictions)?;
    if let Some(v) = &validation {
        write_probabilities(&args.out.join("probabilities_validation.csv"), &v.predictions)?;
    }
    let auc = |r: &CvReport| r.mean.auc.map_or("NA".to_string(), |a| format!("{a:.3}"));
    info!(
        "{}: calibration AUC {}, error rate {:.3}",
        report.measure,
        auc(&calibration),
        calibration.mean.error_rate
    );
    if let Some(v) = &validation {
        info!("validation AUC {}, error rate {:.3}", auc(v), v.mean.error_rate);
    }
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let mut config = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let corpus = generate_corpus(&config)?;
    write_corpus(&corpus, &args.out)?;
    info!("{} spectra written to {}", corpus.spectra.len(), args.out.display());
    Ok(())
}

fn run_pipeline_command(args: PipelineArgs) -> std::result::Result<(), String> {
    let mut config = PipelineConfig::load(&args.config).map_err(|e| format!("[config] {e}"))?;
    if let Some(seed) = args.seed {
        config.classification.seed = seed;
    }
    if args.dry_run {
        config.validate().map_err(|e| e.to_string())?;
        println!("configuration is valid");
        return Ok(());
    }
    let report = run_pipeline(&config).map_err(|e| e.to_string())?;
    info!(
        "{} clusters kept; report written to {}",
        report.n_clusters_kept,
        config.paths.output.join("report.json").display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result: std::result::Result<(), String> = match cli.command {
        Command::Detect(a) => run_detect(a).map_err(|e| format!("[peak_detection] {e:#}")),
        Command::Cluster(a) => run_cluster(a).map_err(|e| format!("[cluster_id] {e:#}")),
        Command::Quantify(a) => run_quantify(a).map_err(|e| format!("[quantify] {e:#}")),
        Command::Summarize(a) => run_summarize(a).map_err(|e| format!("[measures] {e:#}")),
        Command::Classify(a) => run_classify(a).map_err(|e| format!("[classify] {e:#}")),
        Command::Simulate(a) => run_simulate(a).map_err(|e| format!("[synthgen] {e:#}")),
        Command::Pipeline(a) => run_pipeline_command(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
