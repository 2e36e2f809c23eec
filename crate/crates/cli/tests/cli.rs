//! End-to-end tests of the `dpmd` binary.

use std::path::Path;
use std::process::{Command, Output};

fn dpmd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpmd"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn generate_then_denoise_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpmd(
        &[
            "generate", "--manifold", "circle", "--n", "2000", "--sigma", "0.1", "--seed", "1",
            "--query-count", "20", "--out", "refs.csv", "--clean-out", "clean.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("refs.csv").exists());
    assert!(dir.path().join("refs_queries.csv").exists());
    assert!(dir.path().join("clean.csv").exists());
    assert!(dir.path().join("clean_queries.csv").exists());

    let out = dpmd(
        &[
            "denoise", "--refs", "refs.csv", "--queries", "refs_queries.csv", "--d", "1", "--h",
            "auto", "--sigma", "0.1", "--epsilon", "1", "--delta", "0.1", "--seed", "7", "--out",
            "denoised.csv", "--report", "report.json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("denoised.csv").exists());
    assert!(dir.path().join("report.json").exists());
    assert!(dir.path().join("report.csv").exists());

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["queries"].as_array().unwrap().len(), 20);
    assert!(report["privacy"]["event_conditional_calibration"].as_bool().unwrap());
    let spent = report["privacy"]["rho_spent"].as_f64().unwrap();
    let total = report["privacy"]["rho_total"].as_f64().unwrap();
    assert!(spent >= 0.0 && spent <= total + 1e-12);
}

#[test]
fn denoise_rejects_dimension_mismatch_naming_both() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("r.csv"), "x0,x1,x2\n0,0,0\n1,0,0\n").unwrap();
    std::fs::write(dir.path().join("q.csv"), "x0,x1\n0,0\n").unwrap();
    let out = dpmd(
        &[
            "denoise", "--refs", "r.csv", "--queries", "q.csv", "--d", "1", "--h", "0.5",
            "--nonprivate", "--out", "o.csv", "--report", "rep.json",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains('3') && err.contains('2'), "diagnostic must name both dims: {err}");
}

#[test]
fn denoise_auto_bandwidth_requires_sigma() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("r.csv"), "x0,x1\n0,0\n1,0\n").unwrap();
    std::fs::write(dir.path().join("q.csv"), "x0,x1\n0,0\n").unwrap();
    let out = dpmd(
        &[
            "denoise", "--refs", "r.csv", "--queries", "q.csv", "--d", "1", "--h", "auto",
            "--nonprivate", "--out", "o.csv", "--report", "rep.json",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--sigma"));
}

#[test]
fn account_schedule_sums_to_converted_budget() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpmd(
        &[
            "account", "--epsilon", "1", "--delta", "0.1", "--queries", "3", "--steps", "3",
            "--theta", "0.5", "--n", "10000", "--h", "0.5", "--d", "2",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "query,step,rho_P,rho_m,sigma_P,sigma_m"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 9);
    let mut rho_sum = 0.0;
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 6);
        rho_sum += fields[2].parse::<f64>().unwrap() + fields[3].parse::<f64>().unwrap();
    }
    assert!((rho_sum - 0.089924).abs() < 1e-5, "rho sum {rho_sum}");
}

#[test]
fn sweep_runs_and_resumes_without_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "manifold": {"kind": "circle", "radius": 1.0, "ambient_dim": 2},
        "n_grid": [300],
        "sigma_grid": [0.1],
        "epsilon_grid": [0.5, 1.0],
        "repeats": 1,
        "fixed": {"query_count": 10, "seed": 3},
        "output": dir.path().join("rows.csv"),
    });
    std::fs::write(
        dir.path().join("sweep.json"),
        serde_json::to_string_pretty(&config).unwrap(),
    )
    .unwrap();

    let out = dpmd(&["sweep", "--config", "sweep.json"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("appended 6 rows"));

    let out = dpmd(&["sweep", "--config", "sweep.json"], dir.path());
    assert!(out.status.success());
    assert!(stdout(&out).contains("appended 0 rows"));

    let rows = std::fs::read_to_string(dir.path().join("rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 7); // header + 6 rows
}

#[test]
fn unknown_flags_and_malformed_files_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpmd(&["denoise", "--zebra", "1"], dir.path());
    assert!(!out.status.success());

    std::fs::write(dir.path().join("bad.csv"), "a,b\n1,2\n").unwrap();
    let out = dpmd(
        &[
            "denoise", "--refs", "bad.csv", "--queries", "bad.csv", "--d", "1", "--h", "0.5",
            "--nonprivate", "--out", "o.csv", "--report", "rep.json",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("error:"));
}
