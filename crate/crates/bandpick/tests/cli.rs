//! Black-box tests of the compiled binary: artifact shapes, selection
//! reuse, adaptive spectrum columns, and the exit-code contract
//! (0 success, 1 runtime, 2 usage).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use bandpick::cube_io::{read_manifest, write_manifest, Treatment};
use tempfile::TempDir;

fn bandpick(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bandpick"))
        .args(args)
        .output()
        .expect("spawn bandpick binary")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// One small generated dataset shared by the read-only tests, plus a
/// selection run on it.
struct Fixture {
    #[allow(dead_code)]
    keep: TempDir,
    data_dir: PathBuf,
    manifest: PathBuf,
    select_dir: PathBuf,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let keep = TempDir::new().expect("tempdir");
        let data_dir = keep.path().join("data");
        let out = bandpick(&[
            "gen-synth",
            "--stems-train", "8",
            "--stems-test", "4",
            "--rows", "6",
            "--cols", "128",
            "--n-bands", "24",
            "--planted-bands", "14,20",
            "--halfwidth", "1",
            "--lesion-min", "8",
            "--lesion-max", "16",
            "--lesion-quantum", "4",
            "--seed", "5",
            "--out", data_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "gen-synth failed: {}", stderr(&out));
        let manifest = data_dir.join("manifest.csv");

        let select_dir = keep.path().join("select");
        let out = bandpick(&[
            "select-bands",
            "--manifest", manifest.to_str().unwrap(),
            "--k", "2",
            "--population", "20",
            "--generations", "10",
            "--runs", "2",
            "--stall-window", "10",
            "--cv-folds", "4",
            "--patch-width", "16",
            "--seed", "5",
            "--out", select_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "select-bands failed: {}", stderr(&out));
        Fixture { keep, data_dir, manifest, select_dir }
    })
}

fn manifest_arg() -> String {
    fixture().manifest.to_str().unwrap().to_owned()
}

fn json(path: &Path) -> serde_json::Value {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn gen_synth_writes_manifest_truth_and_one_cube_per_stem() {
    let f = fixture();
    assert!(f.manifest.is_file());
    assert!(f.data_dir.join("truth.json").is_file());
    let cubes = fs::read_dir(&f.data_dir)
        .unwrap()
        .filter(|e| {
            e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".hsc")
        })
        .count();
    assert_eq!(cubes, 12);
    let manifest = read_manifest(&f.manifest).unwrap();
    assert_eq!(manifest.records.len(), 12);
    assert_eq!(manifest.scale_mm_per_px, 0.25);
}

#[test]
fn select_bands_emits_selection_json_and_history_csv() {
    let f = fixture();
    let sel = json(&f.select_dir.join("selection.json"));
    let bands: Vec<u64> = sel["band_indices"]
        .as_array()
        .expect("band_indices array")
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    // 3 fixed bands plus k=2 selected
    assert_eq!(bands.len(), 5);
    assert_eq!(&bands[..3], &[3, 6, 10], "fixed prefix should map to the rgb bands");
    assert_eq!(
        sel["band_wavelengths"].as_array().unwrap().len(),
        5,
        "one wavelength per band"
    );
    assert!(sel["test_report"]["f1"].is_number());
    assert!(sel["stem_report"]["f1"].is_number());

    let history = fs::read_to_string(f.select_dir.join("history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("run,generation,best_f1,mean_f1,best_bands"));
    let first = lines.next().expect("at least one generation row");
    assert!(first.starts_with("0,0,"), "history starts at run 0 generation 0: {first}");
}

#[test]
fn evaluate_reusing_the_selection_file_reproduces_its_test_report() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let selection_path = f.select_dir.join("selection.json");
    let out = bandpick(&[
        "evaluate",
        "--manifest", &manifest_arg(),
        "--selection", selection_path.to_str().unwrap(),
        "--patch-width", "16",
        "--seed", "5",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&dir.path().join("report.json"));
    let sel = json(&selection_path);
    assert_eq!(report["band_indices"], sel["band_indices"]);
    assert_eq!(report["patch_report"], sel["test_report"]);
    assert_eq!(report["stem_report"], sel["stem_report"]);
}

#[test]
fn evaluate_accepts_the_rgb_shorthand() {
    let dir = TempDir::new().unwrap();
    let out = bandpick(&[
        "evaluate",
        "--manifest", &manifest_arg(),
        "--bands", "rgb",
        "--patch-width", "16",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&dir.path().join("report.json"));
    let bands: Vec<u64> = report["band_indices"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(bands, vec![3, 6, 10]);
}

#[test]
fn predict_length_writes_lengths_csv_and_reports_mae() {
    let dir = TempDir::new().unwrap();
    let out = bandpick(&[
        "predict-length",
        "--manifest", &manifest_arg(),
        "--bands", "3,14,20",
        "--patch-width", "16",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(
        stdout(&out).contains("mean absolute error:"),
        "missing mae line in: {}",
        stdout(&out)
    );
    let lengths = fs::read_to_string(dir.path().join("lengths.csv")).unwrap();
    let mut lines = lengths.lines();
    assert_eq!(lines.next(), Some("stem_id,actual_interior_mm,predicted_mm"));
    // one row per test stem
    assert_eq!(lines.count(), 4);
}

#[test]
fn spectrum_emits_one_row_per_band_with_both_class_columns() {
    let dir = TempDir::new().unwrap();
    let out = bandpick(&[
        "spectrum",
        "--manifest", &manifest_arg(),
        "--patch-width", "16",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("wavelength,healthy_mean,infected_mean"));
    assert_eq!(lines.count(), 24);
}

#[test]
fn spectrum_drops_the_infected_column_when_no_stem_is_infected() {
    let f = fixture();
    // Re-manifest only the mock (healthy) stems against the same cubes.
    let source = read_manifest(&f.manifest).unwrap();
    let healthy: Vec<_> = source
        .records
        .iter()
        .filter(|r| r.treatment == Treatment::Mock)
        .cloned()
        .collect();
    assert!(!healthy.is_empty());
    let healthy_manifest = f.data_dir.join("healthy_only.csv");
    write_manifest(source.scale_mm_per_px, &healthy, &healthy_manifest).unwrap();

    let dir = TempDir::new().unwrap();
    let out = bandpick(&[
        "spectrum",
        "--manifest", healthy_manifest.to_str().unwrap(),
        "--patch-width", "16",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("wavelength,healthy_mean"));
    assert_eq!(lines.count(), 24);
}

// ------------------------------------------------------------ exit codes

#[test]
fn usage_errors_exit_2() {
    // unknown flag (clap)
    let out = bandpick(&["evaluate", "--definitely-not-a-flag"]);
    assert_eq!(code(&out), 2);

    // localized generation without planted bands
    let dir = TempDir::new().unwrap();
    let out = bandpick(&[
        "gen-synth",
        "--stems-train", "2",
        "--stems-test", "1",
        "--rows", "4",
        "--cols", "64",
        "--n-bands", "24",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    // planted band outside the axis
    let out = bandpick(&[
        "gen-synth",
        "--stems-train", "2",
        "--stems-test", "1",
        "--rows", "4",
        "--cols", "64",
        "--n-bands", "24",
        "--planted-bands", "99",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    // band source: both, neither, unparsable, out of range
    let m = manifest_arg();
    let sel = fixture().select_dir.join("selection.json");
    let out = bandpick(&[
        "evaluate",
        "--manifest", &m,
        "--bands", "rgb",
        "--selection", sel.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let out = bandpick(&["evaluate", "--manifest", &m]);
    assert_eq!(code(&out), 2);
    let out = bandpick(&["evaluate", "--manifest", &m, "--bands", "1,x", "--patch-width", "16"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let out = bandpick(&["evaluate", "--manifest", &m, "--bands", "999", "--patch-width", "16"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    // infeasible selection: more variable bands than the axis can host
    let out = bandpick(&[
        "select-bands",
        "--manifest", &m,
        "--k", "25",
        "--population", "10",
        "--generations", "2",
        "--runs", "1",
        "--cv-folds", "4",
        "--patch-width", "16",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn runtime_errors_exit_1() {
    // missing manifest file
    let out = bandpick(&["evaluate", "--manifest", "/nonexistent/manifest.csv", "--bands", "rgb"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));

    // selection file that is not json
    let dir = TempDir::new().unwrap();
    let bogus = dir.path().join("selection.json");
    fs::write(&bogus, "not json").unwrap();
    let out = bandpick(&[
        "evaluate",
        "--manifest", &manifest_arg(),
        "--selection", bogus.to_str().unwrap(),
        "--patch-width", "16",
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn successful_runs_print_the_artifact_path() {
    let dir = TempDir::new().unwrap();
    let out = bandpick(&[
        "evaluate",
        "--manifest", &manifest_arg(),
        "--bands", "3,14,20",
        "--patch-width", "16",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("report.json"), "stdout: {}", stdout(&out));
}
