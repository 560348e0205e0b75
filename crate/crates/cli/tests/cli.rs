use std::path::Path;
use std::process::{Command, Output};

fn gpae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpae"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn synth(kind: &str, n: &str, dir: &Path) {
    let out = gpae(&["synth", kind, n, "7", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth("two-gaussians", "1000", &a);
    synth("two-gaussians", "1000", &b);
    for f in ["data.csv", "schema.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn synth_rejects_bad_arguments() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(!gpae(&["synth", "spirals", "1000", "1", tmp.path().to_str().unwrap()]).status.success());
    assert_eq!(gpae(&["synth", "two-moons", "50", "1", tmp.path().to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gpae(&["run", tmp.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"dataset": {"csv_path": "missing.csv", "schema_path": "s.json"}, "output_dir": "out"}"#).unwrap();
    let out = gpae(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));

    assert_eq!(gpae(&["report", tmp.path().to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn stage_failure_exits_with_two_and_marks_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    synth("two-gaussians", "200", &tmp.path().join("d"));
    // corrupt one continuous cell
    let csv = tmp.path().join("d/data.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let rest: Vec<&str> = lines[1].splitn(2, ',').collect();
    lines[1] = format!("abc,{}", rest[1]);
    std::fs::write(&csv, lines.join("\n") + "\n").unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"dataset": {"csv_path": "d/data.csv", "schema_path": "d/schema.json"}, "output_dir": "out"}"#).unwrap();
    let out = gpae(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("load"));
    let manifest = std::fs::read_to_string(tmp.path().join("out/manifest.json")).unwrap();
    assert!(manifest.contains("\"FAILED\""));
}

#[test]
fn run_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    synth("two-gaussians", "600", &tmp.path().join("d"));
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{
  "dataset": {"csv_path": "d/data.csv", "schema_path": "d/schema.json"},
  "model": {"latent_dim": 2, "enc_features": 200, "dec_features": 200, "enc_bandwidth": "median"},
  "density": {"features": 128, "k_samples": 256, "max_steps": 200},
  "beta": {"fixed": 0.4},
  "methods": ["gpae", "logreg"],
  "n_queries": 30,
  "output_dir": "out"
}"#,
    )
    .unwrap();
    let out = gpae(&["run", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = gpae(&["report", tmp.path().join("out").to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["status OK", "classification", "gpae", "logreg", "l2", "im2", "validity", "converged"] {
        assert!(text.contains(needle), "missing {needle} in\n{text}");
    }
    assert!(!text.contains("wachter"));
}
