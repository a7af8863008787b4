use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn isoshape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isoshape"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = isoshape(args);
    assert!(
        out.status.success(),
        "isoshape {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Writes a small simulated cohort and returns its directory.
fn simulate(root: &Path) -> PathBuf {
    let config = root.join("sim.toml");
    fs::write(
        &config,
        "n_cases = 10\nn_controls = 20\nn_clusters = 8\nmass_range = [1500.0, 1550.0]\nnoise_sd = 2000.0\n\
         intensity_effect = [0.6, 0.6]\nshape_effect = [0.0, 0.0, 0.0, 0.2]\nn_plates = 2\nseed = 3\n",
    )
    .unwrap();
    let data = root.join("data");
    ok(&["simulate", "--config", s(&config), "--out", s(&data)]);
    data
}

fn pipeline_config(root: &Path, data: &Path, output: &str, metadata: &str) -> PathBuf {
    let path = root.join(format!("{output}.toml"));
    fs::write(
        &path,
        format!(
            "[paths]\nspectra = \"{}\"\nmetadata = \"{}\"\noutput = \"{}\"\n\n\
             [measures]\nkinds = [\"sl\", \"cg\"]\n\n\
             [classification]\ngrid_size = 10\ninner = \"kfold:5\"\nrepetitions = 2\n",
            s(&data.join("spectra")),
            s(&data.join(metadata)),
            s(&root.join(output)),
        ),
    )
    .unwrap();
    path
}

fn read_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn simulate_writes_corpus_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    assert_eq!(fs::read_dir(data.join("spectra")).unwrap().count(), 30);
    let truth: serde_json::Value = serde_json::from_slice(&fs::read(data.join("ground_truth.json")).unwrap()).unwrap();
    assert_eq!(truth["clusters"].as_array().unwrap().len(), 8);
    let metadata = fs::read_to_string(data.join("metadata.csv")).unwrap();
    assert_eq!(metadata.lines().count(), 31);
}

#[test]
fn pipeline_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let one = pipeline_config(dir.path(), &data, "one", "metadata.csv");
    let four = pipeline_config(dir.path(), &data, "four", "metadata.csv");
    ok(&["--threads", "1", "pipeline", "--config", s(&one)]);
    ok(&["--threads", "4", "pipeline", "--config", s(&four)]);
    let a = read_tree(&dir.path().join("one"));
    let b = read_tree(&dir.path().join("four"));
    assert!(a.contains_key(Path::new("report.json")));
    assert!(a.contains_key(Path::new("table_external_validation.csv")));
    assert_eq!(a, b);

    let report: serde_json::Value = serde_json::from_slice(&a[Path::new("report.json")]).unwrap();
    assert_eq!(report["n_samples"], 30);
}

#[test]
fn dry_run_validates_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let config = pipeline_config(dir.path(), &data, "out", "metadata.csv");
    let out = ok(&["pipeline", "--config", s(&config), "--dry-run"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("valid"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_metadata_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let config = pipeline_config(dir.path(), &data, "out", "absent.csv");
    for extra in [&["--dry-run"][..], &[][..]] {
        let mut args = vec!["pipeline", "--config", s(&config)];
        args.extend_from_slice(extra);
        let out = isoshape(&args);
        assert!(!out.status.success());
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains("[spectrum_io]"), "{stderr}");
    }
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sim.toml");
    fs::write(&config, "n_cases = 10\nn_cluster = 8\n").unwrap();
    let out = isoshape(&["simulate", "--config", s(&config), "--out", s(&dir.path().join("x"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_cluster"));
}

#[test]
fn stages_compose() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = simulate(root);
    let metadata = data.join("metadata.csv");
    let spectra = data.join("spectra");
    let detections = root.join("detect");
    let clusters = root.join("clusters.csv");
    let quantified = root.join("quant");
    let features = root.join("features");

    ok(&["detect", "--metadata", s(&metadata), "--spectra", s(&spectra), "--out", s(&detections)]);
    assert_eq!(fs::read_dir(&detections).unwrap().count(), 60);
    ok(&["cluster", "--detections", s(&detections), "--metadata", s(&metadata), "--out", s(&clusters)]);
    ok(&[
        "quantify",
        "--metadata",
        s(&metadata),
        "--spectra",
        s(&spectra),
        "--detections",
        s(&detections),
        "--clusters",
        s(&clusters),
        "--out",
        s(&quantified),
    ]);
    let table = quantified.join("quantified.csv");
    ok(&["summarize", "--quantified", s(&table), "--measure", "sl", "--measure", "cg", "--out", s(&features)]);
    assert!(features.join("sl.csv").exists());
    assert!(features.join("cg_r.csv").exists());

    let fixed = root.join("fixed");
    ok(&[
        "classify",
        "--features",
        s(&features.join("sl.csv")),
        "--metadata",
        s(&metadata),
        "--inner",
        "kfold:5",
        "--grid-size",
        "10",
        "--out",
        s(&fixed),
    ]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(fixed.join("report.json")).unwrap()).unwrap();
    let auc = report["calibration"]["mean"]["auc"].as_f64().expect("auc in report");
    assert!((0.0..=1.0).contains(&auc));

    let refit = root.join("refit");
    ok(&[
        "classify",
        "--quantified",
        s(&table),
        "--measure",
        "cg",
        "--metadata",
        s(&metadata),
        "--mode",
        "external",
        "--inner",
        "kfold:5",
        "--grid-size",
        "10",
        "--out",
        s(&refit),
    ]);
    assert!(refit.join("probabilities_validation.csv").exists());
}
