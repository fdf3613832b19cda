//! Drives the `agmon-lab` binary: exit-status contract, output layout and
//! byte-level reproducibility.

use std::fs;
use std::path::Path;
use std::process::Command;

fn lab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_agmon-lab"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

const FLAT: &str = r#"{"experiments": [
    {"kind": "decay-sandwich", "model": "halfplane-unit", "h_sweep": [0.1, 0.05, 0.025]},
    {"kind": "halfplane-chain", "model": "halfplane-unit", "h_sweep": [0.1, 0.05], "rho_grid": [0.05, 0.1]},
    {"kind": "phase-residual", "model": "halfplane-unit", "h_sweep": [0.1], "order": 6}
]}"#;

#[test]
fn passing_run_exits_zero_and_writes_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), FLAT);
    let out = dir.path().join("out");
    let st = lab().arg("run").arg(&cfg).arg("--out").arg(&out).arg("--jobs").arg("2").output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    for stem in ["decay-sandwich", "halfplane-chain", "phase-residual"] {
        for ext in [".csv", "_curves.csv", ".json", ".svg"] {
            assert!(out.join(format!("{stem}{ext}")).is_file(), "{stem}{ext} missing");
        }
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("decay-sandwich.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["verdicts"], 3);
    for r in summary["records"].as_array().unwrap() {
        let v = &r["verdicts"][0];
        assert_eq!(v["tolerance"], 1e-6);
        assert!(v["margin"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn outputs_are_byte_identical_across_runs_and_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), FLAT);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(lab().arg("run").arg(&cfg).arg("--out").arg(&a).arg("--jobs").arg("1").status().unwrap().success());
    assert!(lab().arg("run").arg(&cfg).arg("--out").arg(&b).arg("--jobs").arg("4").status().unwrap().success());
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 12);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?} differs");
    }
}

#[test]
fn failing_verdict_exits_one_and_still_writes_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    // The Poisson-realized torus rate sits near −1 only to about 1e-3; 1e-12 cannot hold.
    let cfg = write_config(
        dir.path(),
        r#"{"kind": "decay-sandwich", "model": "separable-torus", "h_sweep": [0.04], "tolerance": 1e-12,
            "rho_grid": [0.02, 0.04, 0.06, 0.08], "grid": {"tangential": 8, "per_h": 20}}"#,
    );
    let st = lab().arg("run").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(st.status.code(), Some(1));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("decay-sandwich.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], false);
    assert_eq!(summary["failed"], 1);
}

#[test]
fn config_errors_exit_two_and_name_the_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"kind": "decay-sandwich", "model": "halfplane-unit", "h_sweep": [], "delta": -1}"#,
    );
    let st = lab().arg("run").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    let err = String::from_utf8_lossy(&st.stderr);
    assert!(err.contains("h_sweep") && err.contains("delta"), "{err}");
}

#[test]
fn only_selects_one_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), FLAT);
    let st = lab()
        .args(["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--only", "phase-residual"])
        .output()
        .unwrap();
    assert!(st.status.success());
    assert!(dir.path().join("phase-residual.json").is_file());
    assert!(!dir.path().join("decay-sandwich.json").exists());
    let bad = lab().args(["run", cfg.to_str().unwrap(), "--only", "nonsense"]).output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for e in fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "json") {
            for c in agmon_core::cli::load_config(&p).unwrap() {
                c.resolve().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
                seen += 1;
            }
        }
    }
    assert!(seen >= 7);
}
