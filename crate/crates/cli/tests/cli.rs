use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kamred"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn kamred")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn psi_scan_row_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "frequency = \"golden\"\n[psi]\nkmax = 50\n");
    let out = tmp.path().join("out");
    let o = run(&["psi-scan", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("psi.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 50);
    assert_eq!(&rows[1][0], "2");
    let psi2: f64 = rows[1][1].parse().unwrap();
    assert!((psi2 - 0.257518).abs() < 1e-6);
    assert_eq!(report(&out)["status"], "ok");
}

#[test]
fn conditions_with_preset_converge() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("conditions_gevrey.toml");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success());
    let r = report(out.path());
    assert_eq!(r["result"]["lambda_br"]["verdict"], "converges");
    assert!(out.path().join("conditions.csv").exists());
}

#[test]
fn reduce_golden_converges() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("reduce_golden.toml");
    let o = run(&["reduce", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(out.path());
    assert_eq!(r["status"], "ok");
    assert_eq!(r["result"]["converged"], true);
    assert!(r["result"]["completed_steps"].as_u64().unwrap() >= 6);
    let steps = csv::Reader::from_path(out.path().join("steps.csv")).unwrap().records().count();
    assert!(steps >= 6);
    let y = std::fs::read_to_string(out.path().join("y.fourier")).unwrap();
    assert!(kamred::fourier::FourierMatrixSeries::from_text(&y).is_ok());
    // The resolved config is embedded.
    assert_eq!(r["config"]["psi"]["kmax"], 3000);
    assert_eq!(r["config"]["command"], "reduce");
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "frequency = \"golden\"\n\n[psi]\nkmax = 10\nkmax_typo = 5\n");
    let out = tmp.path().join("out");
    let o = run(&["psi-scan", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let r = report(&out);
    assert_eq!(r["status"], "error");
    assert_eq!(r["error"]["kind"], "config");
    let msg = r["error"]["message"].as_str().unwrap();
    assert!(msg.contains("kmax_typo") && msg.contains("line 5"), "{msg}");
}

#[test]
fn downstream_errors_are_reported_verbatim() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "[psi]\nkmax = 40\npreset = \"exp:0.4\"\n");
    let out = tmp.path().join("out");
    let o = run(&["reduce", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(report(&out)["error"]["message"].as_str().unwrap().contains("psi.preset"));

    let cfg = write(tmp.path(), "d.toml", "frequency = \"1, 2\"\n");
    let o = run(&["psi-scan", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let r = report(&out);
    assert_eq!(r["error"]["kind"], "resonant");
}

#[test]
fn command_mismatch_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("psi_scan.toml");
    let o = run(&["rotation", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("psi-scan"));
}

#[test]
fn reports_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("lyapunov.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        assert!(run(&["run", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]).status.success());
    }
    let ra = std::fs::read_to_string(a.join("report.json")).unwrap();
    let rb = std::fs::read_to_string(b.join("report.json")).unwrap();
    assert_eq!(ra.replace(a.to_str().unwrap(), ""), rb.replace(b.to_str().unwrap(), ""));
    assert_eq!(std::fs::read(a.join("lyapunov.csv")).unwrap(), std::fs::read(b.join("lyapunov.csv")).unwrap());
}

#[test]
fn seed_changes_the_random_perturbation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("lyapunov.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&["run", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap(), "--seed", "1"]);
    run(&["run", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "2"]);
    assert_eq!(report(&a)["config"]["seed"], 1);
    assert_ne!(std::fs::read(a.join("lyapunov.csv")).unwrap(), std::fs::read(b.join("lyapunov.csv")).unwrap());
}

#[test]
fn counterexample_defeats_the_driver() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("counterexample_liouville.toml");
    let o = run(&["counterexample", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(out.path());
    assert_eq!(r["result"]["kam"]["converged"], false);
    assert_eq!(r["result"]["kam"]["failure"]["stage"], "schedule");
    assert!(r["result"]["evidence"]["max_deviation"].as_f64().unwrap() <= 1e-14);
    assert!(out.path().join("coefficients.csv").exists());
}

#[test]
fn batch_runs_every_config() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("batch.toml");
    let o = run(&["batch", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("batch.json")).unwrap()).unwrap();
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 5);
    for r in runs {
        assert_eq!(r["status"], "ok");
        assert!(Path::new(r["out"].as_str().unwrap()).join("report.json").exists());
    }
}
