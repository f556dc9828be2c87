use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gauss-bubbles"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().args(args).arg("--out-dir").arg(dir).output().expect("binary runs")
}

fn summary(dir: &Path, stem: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(format!("{stem}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .map(|rd| {
            rd.map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
            })
            .collect()
        })
        .unwrap_or_default();
    out.sort();
    out
}

#[test]
fn propeller_perimeter_report() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["perimeter", "--partition", "propeller3", "--samples", "1e6", "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path(), "perimeter");
    let total = s["results"]["total"].as_f64().unwrap();
    assert!((total - 0.598413).abs() < 0.006);
    assert!(s["wall_time_s"].is_null());
    for key in ["command", "spec", "results", "stderr", "wall_time_s"] {
        assert!(s.get(key).is_some(), "missing {key}");
    }
    let csv = std::fs::read_to_string(dir.path().join("perimeter.csv")).unwrap();
    assert!(csv.starts_with("i,j,mass,stderr,method\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn plurality_at_zero_correlation() {
    let dir = TempDir::new().unwrap();
    let out = run_in(
        dir.path(),
        &["discrete", "stability", "--m", "2", "--n", "3", "--rho", "0", "--function", "plurality", "--seed", "0"]
    );
    assert!(out.status.success());
    assert_eq!(summary(dir.path(), "discrete")["results"]["total"].as_f64(), Some(0.5));
}

#[test]
fn influences_of_majority() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["discrete", "influences", "--m", "2", "--n", "3", "--seed", "0"]);
    assert!(out.status.success());
    let s = summary(dir.path(), "discrete");
    // Majority of three: a coordinate is pivotal with probability 1/2, and
    // then each output coordinate deviates from its average by 1/2, so
    // Inf = 1/8 per output coordinate and 1/4 summed over both.
    for v in s["results"]["influence"].as_array().unwrap() {
        assert!((v.as_f64().unwrap() - 0.25).abs() < 1e-12);
    }
}

#[test]
fn symmetric_scan_contains_unit_radius_row() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["symmetric-scan", "--a", "0.39347", "--kmax", "3", "--seed", "0"]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("symmetric-scan.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("1,inside,")).unwrap();
    let cols: Vec<f64> = row.split(',').skip(2).map(|c| c.parse().unwrap()).collect();
    assert!((cols[0] - 1.0).abs() < 1e-4);
    assert!((cols[1] - 0.60653).abs() < 1e-4);
}

#[test]
fn regression_corpus_passes() {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus");
    let out = bin().arg("regression").arg(&corpus).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("3/3 cases passed"));
}

#[test]
fn empty_corpus_passes() {
    let dir = TempDir::new().unwrap();
    let out = bin().arg("regression").arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("0/0 cases passed"));
}

#[test]
fn wrong_expectation_fails_by_name() {
    let dir = TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"name": "deliberately wrong", "spec": {"command": "perimeter", "partition": "halfspace2",
            "samples": 1000, "seed": 1}, "expected": {"total": 0.5}, "tolerance": 1e-6}"#,
    )
    .unwrap();
    let out = bin().arg("regression").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL  deliberately wrong"));
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let out = bin().arg("regression").arg("/nonexistent/corpus").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_command_is_a_usage_error() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn error_paths_write_nothing() {
    let cases: &[(&[&str], i32)] = &[
        (&["noise-stability", "--rho", "1.0", "--seed", "1"], 2),
        (&["perimeter", "--method", "noise", "--samples", "1000", "--seed", "1", "--partition", "halfspace2"], 3),
        (&["discrete", "stability", "--m", "10", "--n", "8", "--rho", "0.5", "--seed", "1"], 3),
        (&["stability-check", "--partition", "propeller3", "--candidate", "halfspace2", "--epsilon", "1e-3", "--seed", "1", "--samples", "1e4"], 2),
        (&["noise-stability", "--seed", "1"], 1),
        (&["perimeter", "--samples", "0", "--seed", "1"], 1),
    ];
    for (args, code) in cases {
        let dir = TempDir::new().unwrap();
        let target = dir.path().join("out");
        let out = run_in(&target, args);
        assert_eq!(out.status.code(), Some(*code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(files(&target).is_empty(), "{args:?} wrote files");
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"command": "noise-stability", "partition": "halfspace2", "rho": 0.5, "samples": 20000, "seed": 3}"#)
        .unwrap();
    let out = run_in(dir.path(), &["noise-stability", "--config", spec.to_str().unwrap(), "--rho", "0.0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path(), "noise-stability");
    assert_eq!(s["spec"]["rho"].as_f64(), Some(0.0));
    assert_eq!(s["spec"]["seed"].as_u64(), Some(3));

    std::fs::write(&spec, r#"{"command": "noise-stability", "rho": 0.5}"#).unwrap();
    let out = run_in(&dir.path().join("none"), &["noise-stability", "--config", spec.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn timing_is_opt_in() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["penalty", "--samples", "1e4", "--seed", "2", "--timing"]);
    assert!(out.status.success());
    assert!(summary(dir.path(), "penalty")["wall_time_s"].as_f64().is_some());
}

#[test]
fn reports_are_identical_across_runs_and_thread_counts() {
    let runs: &[&[&str]] = &[
        &["perimeter", "--samples", "2e5", "--seed", "5"],
        &["perimeter", "--method", "minkowski", "--samples", "2e5", "--seed", "5"],
        &["noise-stability", "--rho", "0.7", "--samples", "2e5", "--seed", "5", "--antithetic"],
        &["penalty", "--samples", "2e5", "--seed", "5"],
        &["clt-crosscheck", "--n", "101", "--rho", "0.5", "--samples", "1e5", "--seed", "5"],
        &["stability-check", "--perturb", "0.1", "--epsilon", "1e-3", "--samples", "1e5", "--seed", "5"],
    ];
    for args in runs {
        let mut reference = None;
        for threads in [1, 4, 8, 8] {
            // Same relative output directory each time, since the summary
            // echoes the spec.
            let cwd = TempDir::new().unwrap();
            let out = bin()
                .args(*args)
                .args(["--out-dir", "out"])
                .current_dir(cwd.path())
                .env("GAUSS_BUBBLES_THREADS", threads.to_string())
                .output()
                .unwrap();
            assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
            let got = files(&cwd.path().join("out"));
            assert!(!got.is_empty());
            match &reference {
                None => reference = Some(got),
                Some(r) => assert!(r == &got, "{args:?} differs at {threads} threads"),
            }
        }
    }
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let mut cmd = bin();
    cmd.args(["penalty", "--seed", "1"]).arg("--out-dir").arg(dir.path());
    let out = cmd.env("GAUSS_BUBBLES_THREADS", "zero").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(files(dir.path()).is_empty());
}
