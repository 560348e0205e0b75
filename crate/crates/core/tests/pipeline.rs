use std::path::Path;

use gpae_core::betaselect::BetaConfig;
use gpae_core::cfsearch::SearchConfig;
use gpae_core::density::DensityConfig;
use gpae_core::gpae::{Bandwidth, TrainConfig};
use gpae_core::metrics::EvalConfig;
use gpae_core::pipeline::{self, BetaChoice, DatasetPaths, Method, RunConfig, RunError};
use gpae_core::synth::{make_synthetic, SynthKind};

const METRICS: [&str; 7] = ["l2", "diversity", "instability", "dispo", "im1", "im2", "validity"];

fn synthetic_config(kind: SynthKind, n: usize, dir: &Path) -> RunConfig {
    let (csv, schema) = make_synthetic(kind, n, 5).unwrap().write(dir.join("data")).unwrap();
    RunConfig {
        dataset: DatasetPaths {
            csv_path: csv,
            schema_path: schema,
        },
        model: TrainConfig {
            latent_dim: 2,
            enc_features: 300,
            dec_features: 300,
            enc_bandwidth: Bandwidth::Median,
            ..TrainConfig::default()
        },
        density: DensityConfig {
            features: 256,
            k_samples: 512,
            max_steps: 300,
            ..DensityConfig::default()
        },
        density_on: Default::default(),
        search: SearchConfig::default(),
        beta: BetaChoice::Fixed(0.4),
        methods: vec![Method::Gpae, Method::Logreg, Method::Wachter],
        mask: false,
        immutable: vec![],
        n_queries: 40,
        eval: EvalConfig::default(),
        logreg: Default::default(),
        wachter: Default::default(),
        output_dir: dir.join("run"),
        master_seed: 1,
    }
}

fn read_metric_names(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap()[0].to_string()).collect()
}

#[test]
fn missing_csv_is_a_config_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = synthetic_config(SynthKind::TwoGaussians, 200, tmp.path());
    cfg.dataset.csv_path = tmp.path().join("nowhere.csv");
    match pipeline::run(&cfg) {
        Err(RunError::Config(e)) => assert!(e.to_string().contains("nowhere.csv"), "{e}"),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn unknown_immutable_column_fails_the_load_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = synthetic_config(SynthKind::TwoGaussians, 200, tmp.path());
    cfg.immutable = vec!["no_such_column".into()];
    match pipeline::run(&cfg) {
        Err(RunError::Stage { stage, source }) => {
            assert_eq!(stage, "load");
            assert!(source.to_string().contains("no_such_column"));
        }
        other => panic!("expected stage failure, got {other:?}"),
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(cfg.output_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "FAILED");
    assert_eq!(manifest["failed_stage"], "load");
}

#[test]
fn config_hash_tracks_every_change() {
    let tmp = tempfile::tempdir().unwrap();
    let base = synthetic_config(SynthKind::TwoGaussians, 200, tmp.path());
    assert_eq!(base.hash(), base.clone().hash());
    let variants: Vec<RunConfig> = vec![
        RunConfig { master_seed: 2, ..base.clone() },
        RunConfig { mask: true, ..base.clone() },
        RunConfig { n_queries: 41, ..base.clone() },
        RunConfig { beta: BetaChoice::Fixed(0.5), ..base.clone() },
        RunConfig {
            beta: BetaChoice::Select(BetaConfig::default()),
            ..base.clone()
        },
        RunConfig {
            model: TrainConfig {
                lr_init: 2e-3,
                ..base.model.clone()
            },
            ..base.clone()
        },
        RunConfig {
            methods: vec![Method::Gpae],
            ..base.clone()
        },
    ];
    let mut hashes: Vec<String> = variants.iter().map(RunConfig::hash).collect();
    hashes.push(base.hash());
    let n = hashes.len();
    hashes.sort();
    hashes.dedup();
    assert_eq!(hashes.len(), n);
}

#[test]
fn relative_paths_resolve_against_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    make_synthetic(SynthKind::TwoGaussians, 200, 1).unwrap().write(tmp.path().join("d")).unwrap();
    let path = tmp.path().join("cfg.json");
    std::fs::write(
        &path,
        r#"{"dataset": {"csv_path": "d/data.csv", "schema_path": "d/schema.json"}, "output_dir": "out"}"#,
    )
    .unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.dataset.csv_path, tmp.path().join("d/data.csv"));
    assert_eq!(cfg.output_dir, tmp.path().join("out"));
    assert_eq!(cfg.methods, vec![Method::Gpae, Method::Logreg, Method::Wachter]);
    cfg.validate().unwrap();
}

#[test]
fn masked_lcd_run_writes_the_masked_table() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = synthetic_config(SynthKind::LcdLike, 2000, tmp.path());
    cfg.mask = true;
    cfg.immutable = vec!["interest_rate".into()];
    let manifest = pipeline::run(&cfg).unwrap();
    assert_eq!(manifest.status, "OK");
    assert_eq!(manifest.mask, "mask");
    let out = &cfg.output_dir;
    for m in ["gpae", "logreg", "wachter"] {
        assert_eq!(read_metric_names(&out.join(format!("report_{m}_mask.csv"))), {
            let mut v: Vec<String> = METRICS.iter().map(|s| s.to_string()).collect();
            v.extend(["n_queries".to_string(), "n_converged".to_string()]);
            v
        });
        let mut r = csv::Reader::from_path(out.join(format!("cf_{m}_mask.csv"))).unwrap();
        let col = r.headers().unwrap().iter().position(|h| h == "delta_2").unwrap();
        for rec in r.records() {
            assert_eq!(rec.unwrap()[col].parse::<f64>().unwrap(), 0.0);
        }
    }
    for f in ["model/gpae.json", "model/density.json", "model/logreg.json", "model/preprocessor.json", "classification.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let report = pipeline::format_report(out).unwrap();
    assert!(report.contains("counterfactuals (mask)"));
    assert!(report.contains("validity"));
}
