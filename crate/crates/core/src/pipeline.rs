//! Config-driven experiment runs: ingestion through evaluation, with every
//! artifact written under one output directory and a manifest recording
//! hashes, seeds and per-stage timings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{logreg_result, logreg_train, wachter_cf, LogRegConfig, LogRegModel, WachterConfig};
use crate::betaselect::{select_beta, BetaConfig, BetaSelection};
use crate::cfsearch::{generate_batch, write_results_csv, CfQuery, CfResult, SearchConfig};
use crate::dataio::{build_mask, fit_transform, load_dataset, Mask, Preprocessor, SchemaFile};
use crate::density::{self, DensityConfig, DensityModel};
use crate::error::{Error, Result};
use crate::gpae::{train, ModelFile, TrainConfig};
use crate::metrics::{classification_scores, evaluate_all, train_im_autoencoders, EvalConfig, EvalContext, MetricsReport};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gpae,
    Logreg,
    Wachter,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gpae => "gpae",
            Method::Logreg => "logreg",
            Method::Wachter => "wachter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub csv_path: PathBuf,
    pub schema_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaChoice {
    Fixed(f64),
    Select(BetaConfig),
}

impl Default for BetaChoice {
    fn default() -> Self {
        BetaChoice::Select(BetaConfig::default())
    }
}

/// Which latents the density is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityOn {
    /// Training rows whose true label is the target class.
    #[default]
    Target,
    All,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Gpae, Method::Logreg, Method::Wachter]
}

fn default_queries() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetPaths,
    #[serde(default)]
    pub model: TrainConfig,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default)]
    pub density_on: DensityOn,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub beta: BetaChoice,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Freeze the immutable columns during generation.
    #[serde(default)]
    pub mask: bool,
    /// Extra columns to treat as immutable, on top of the schema's flags.
    #[serde(default)]
    pub immutable: Vec<String>,
    /// Rejected-class test rows to explain.
    #[serde(default = "default_queries")]
    pub n_queries: usize,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub logreg: LogRegConfig,
    #[serde(default)]
    pub wachter: WachterConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
}

impl RunConfig {
    /// Parses a JSON config; relative paths are taken from the config's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset.csv_path, &mut cfg.dataset.schema_path, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("methods must not be empty".into()));
        }
        for p in [&self.dataset.csv_path, &self.dataset.schema_path] {
            if !p.is_file() {
                return Err(Error::InvalidArgument(format!("file not found: {}", p.display())));
            }
        }
        if self.n_queries < 2 {
            return Err(Error::InvalidArgument("n_queries must be >= 2".into()));
        }
        self.model.validate()?;
        self.search.validate()?;
        if let BetaChoice::Fixed(b) = self.beta {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::InvalidArgument(format!("fixed beta must be >= 0, got {b}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// `OK` or `FAILED`.
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub config_hash: String,
    pub schema_hash: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub versions: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub mask: String,
    pub methods: Vec<Method>,
    pub beta_star: Option<f64>,
    pub started_unix: u64,
}

/// Why a run stopped.
#[derive(Debug)]
pub enum RunError {
    /// The config could not be read or is inconsistent.
    Config(Error),
    Stage { stage: String, source: Error },
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "config error: {e}"),
            RunError::Stage { stage, source } => write!(f, "stage '{stage}' failed: {source}"),
        }
    }
}

impl std::error::Error for RunError {}

pub fn run_file(config_path: impl AsRef<Path>) -> std::result::Result<Manifest, RunError> {
    let cfg = RunConfig::load(config_path).map_err(RunError::Config)?;
    run(&cfg)
}

struct Stages {
    records: Vec<StageRecord>,
}

impl Stages {
    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> std::result::Result<T, RunError> {
        log::info!("stage {name}");
        let t = Instant::now();
        let out = f();
        self.records.push(StageRecord {
            name: name.into(),
            seconds: t.elapsed().as_secs_f64(),
            ok: out.is_ok(),
        });
        out.map_err(|source| RunError::Stage {
            stage: name.into(),
            source,
        })
    }
}

fn mask_tag(on: bool) -> &'static str {
    if on {
        "mask"
    } else {
        "nomask"
    }
}

/// Executes every stage, writing artifacts and the manifest into
/// `output_dir`. On a stage failure the manifest is still written, marked
/// `FAILED`, and earlier artifacts are left in place.
pub fn run(cfg: &RunConfig) -> std::result::Result<Manifest, RunError> {
    cfg.validate().map_err(RunError::Config)?;
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(out.join("model"))
        .map_err(|e| RunError::Config(Error::io(&out, e)))?;

    let seeds: BTreeMap<String, u64> = ["gpae", "density", "beta", "im_autoencoders"]
        .iter()
        .map(|s| (s.to_string(), derive_seed(cfg.master_seed, s, 0)))
        .collect();
    let mut manifest = Manifest {
        status: "OK".into(),
        failed_stage: None,
        error: None,
        config_hash: cfg.hash(),
        schema_hash: None,
        seeds: seeds.clone(),
        versions: BTreeMap::from([
            ("gpae-core".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("manifest_format".to_string(), "1".to_string()),
        ]),
        stages: Vec::new(),
        mask: mask_tag(cfg.mask).into(),
        methods: cfg.methods.clone(),
        beta_star: None,
        started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    let mut stages = Stages { records: Vec::new() };
    let result = run_stages(cfg, &seeds, &mut stages, &mut manifest);
    manifest.stages = stages.records;
    if let Err(e) = &result {
        manifest.status = "FAILED".into();
        manifest.error = Some(e.to_string());
        if let RunError::Stage { stage, .. } = e {
            manifest.failed_stage = Some(stage.clone());
        }
    }
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = out.join("manifest.json");
    std::fs::write(&path, text).map_err(|e| RunError::Stage {
        stage: "manifest".into(),
        source: Error::io(path, e),
    })?;
    result.map(|_| manifest)
}

fn resolve_mask(cfg: &RunConfig, schema_file: &SchemaFile) -> Result<Mask> {
    let mut schema = schema_file.schema.clone();
    for name in &cfg.immutable {
        let col = schema
            .columns
            .iter_mut()
            .find(|c| &c.name == name)
            .ok_or_else(|| Error::Schema(format!("immutable column '{name}' is not in the schema")))?;
        col.immutable = true;
    }
    Ok(if cfg.mask {
        build_mask(&schema)
    } else {
        Mask::all_mutable(schema.encoded_dim())
    })
}

fn rows_where(x: ArrayView2<f64>, labels: &[u8], want: u8, n: usize) -> Vec<usize> {
    (0..x.nrows()).filter(|&i| labels[i] == want).take(n).collect()
}

fn run_stages(
    cfg: &RunConfig,
    seeds: &BTreeMap<String, u64>,
    st: &mut Stages,
    manifest: &mut Manifest,
) -> std::result::Result<(), RunError> {
    let out = &cfg.output_dir;
    let tag = mask_tag(cfg.mask);

    let (schema_file, mask, train_set, val, test) = st.run("load", || {
        let sf = SchemaFile::load(&cfg.dataset.schema_path)?;
        let mask = resolve_mask(cfg, &sf)?;
        let raw = load_dataset(&cfg.dataset.csv_path, &sf.schema)?;
        let (tr, va, te) = fit_transform(&raw, &sf.schema, sf.splits, sf.seed)?;
        std::fs::write(out.join("model/preprocessor.json"), serde_json::to_string_pretty(&tr.prep)?)
            .map_err(|e| Error::io(out.join("model/preprocessor.json"), e))?;
        Ok((sf, mask, tr, va, te))
    })?;
    manifest.schema_hash = Some(schema_file.schema.hash());
    let prep: &Preprocessor = &train_set.prep;

    let model_cfg = TrainConfig {
        seed: seeds["gpae"],
        ..cfg.model.clone()
    };
    let model = st.run("train", || {
        let (model, log) = train(&train_set, &val, &model_cfg)?;
        log::info!("best epoch {} of {}", log.best_epoch, log.epochs.len());
        ModelFile::new(&model, &schema_file.schema.hash(), &model_cfg).save(out.join("model/gpae.json"))?;
        Ok(model)
    })?;

    let logreg: Option<LogRegModel> = if cfg.methods.contains(&Method::Logreg) {
        Some(st.run("logreg", || {
            let m = logreg_train(&train_set, &cfg.logreg)?;
            std::fs::write(out.join("model/logreg.json"), serde_json::to_string_pretty(&m)?)
                .map_err(|e| Error::io(out.join("model/logreg.json"), e))?;
            Ok(m)
        })?)
    } else {
        None
    };

    st.run("classification", || {
        let mut w = csv::Writer::from_path(out.join("classification.csv"))?;
        w.write_record(["model", "accuracy", "precision", "recall", "auc"])?;
        let mut emit = |name: &str, scores: &[f64], pred: &[u8]| -> Result<()> {
            let c = classification_scores(scores, pred, &test.y)?;
            w.write_record([
                name.to_string(),
                format!("{}", c.accuracy),
                format!("{}", c.precision),
                format!("{}", c.recall),
                format!("{}", c.auc),
            ])?;
            Ok(())
        };
        let p = model.predict_proba_batch(test.x.view())?;
        emit("gpae", p.as_slice().expect("contiguous"), &model.predict_labels(test.x.view())?)?;
        if let Some(lr) = &logreg {
            let p = lr.predict_proba(test.x.view());
            emit("logreg", p.as_slice().expect("contiguous"), &lr.predict_labels(test.x.view()))?;
        }
        w.flush().map_err(|e| Error::io(out.join("classification.csv"), e))
    })?;

    let needs_density = cfg.methods.contains(&Method::Gpae);
    let dm: Option<DensityModel> = if needs_density {
        Some(st.run("density", || {
            let rows = match cfg.density_on {
                DensityOn::Target => train_set.filter_label(1),
                DensityOn::All => train_set.clone(),
            };
            let lat = model.encode_batch(rows.x.view())?;
            let dcfg = DensityConfig {
                seed: seeds["density"],
                ..cfg.density.clone()
            };
            let (dm, log) = density::fit(lat.view(), &dcfg)?;
            log::info!("density: {} steps, converged {}", log.steps, log.converged);
            std::fs::write(out.join("model/density.json"), serde_json::to_string_pretty(&dm)?)
                .map_err(|e| Error::io(out.join("model/density.json"), e))?;
            Ok(dm)
        })?)
    } else {
        None
    };

    let beta = match (&cfg.beta, &dm) {
        (BetaChoice::Fixed(b), _) => *b,
        (BetaChoice::Select(bc), Some(dm)) => {
            let sel: BetaSelection = st.run("beta", || {
                let bc = BetaConfig {
                    seed: seeds["beta"],
                    ..bc.clone()
                };
                let sel = select_beta(&model, dm, val.x.view(), &mask, &cfg.search, &bc)?;
                sel.write_curve_csv(out.join("beta_curve.csv"))?;
                Ok(sel)
            })?;
            sel.beta_star
        }
        (BetaChoice::Select(_), None) => 0.0,
    };
    if needs_density {
        manifest.beta_star = Some(beta);
    }

    let gpae_labels = model.predict_labels(test.x.view()).map_err(|e| RunError::Stage {
        stage: "generate".into(),
        source: e,
    })?;
    let gpae_queries = rows_where(test.x.view(), &gpae_labels, 0, cfg.n_queries);
    let mut generated: Vec<(Method, Vec<usize>, Vec<CfResult>)> = Vec::new();
    for &method in &cfg.methods {
        let stage = format!("generate_{}", method.name());
        let (idx, results) = st.run(&stage, || {
            let (idx, results) = match method {
                Method::Gpae => {
                    let dm = dm.as_ref().expect("density fitted for gpae");
                    let queries = gpae_queries
                        .iter()
                        .map(|&i| CfQuery::new(test.x.row(i).to_owned(), mask.clone(), beta, 1, cfg.search.clone()))
                        .collect::<Result<Vec<_>>>()?;
                    let groups = test.schema().onehot_groups();
                    (gpae_queries.clone(), generate_batch(&model, dm, &queries, &groups)?)
                }
                Method::Wachter => {
                    let res = gpae_queries
                        .iter()
                        .map(|&i| wachter_cf(&model, test.x.row(i), &mask, 1, &cfg.wachter))
                        .collect::<Result<Vec<_>>>()?;
                    (gpae_queries.clone(), res)
                }
                Method::Logreg => {
                    let lr = logreg.as_ref().expect("logreg trained");
                    let labels = lr.predict_labels(test.x.view());
                    let idx = rows_where(test.x.view(), &labels, 0, cfg.n_queries);
                    let res = idx
                        .iter()
                        .map(|&i| logreg_result(lr, test.x.row(i), &mask, cfg.logreg.cf_step, 1))
                        .collect::<Result<Vec<_>>>()?;
                    (idx, res)
                }
            };
            write_results_csv(out.join(format!("cf_{}_{tag}.csv", method.name())), &results, prep)?;
            Ok((idx, results))
        })?;
        generated.push((method, idx, results));
    }

    let aes = st.run("im_autoencoders", || {
        let ae_cfg = TrainConfig {
            seed: seeds["im_autoencoders"],
            ..cfg.model.clone()
        };
        train_im_autoencoders(&train_set, &val, 0, &ae_cfg)
    })?;
    let continuous = test.schema().continuous_idx();
    for (method, idx, results) in &generated {
        let stage = format!("evaluate_{}", method.name());
        st.run(&stage, || {
            let report = match method {
                Method::Logreg => {
                    let lr = logreg.as_ref().expect("logreg trained");
                    let labels = lr.predict_labels(test.x.view());
                    let ctx = EvalContext {
                        pool: test.x.view(),
                        pool_labels: &labels,
                        continuous_idx: &continuous,
                        autoencoders: &aes,
                        config: &cfg.eval,
                    };
                    evaluate_all(&ctx, idx, results, |x| Ok(lr.predict_labels(x)), 1)?
                }
                _ => {
                    let ctx = EvalContext {
                        pool: test.x.view(),
                        pool_labels: &gpae_labels,
                        continuous_idx: &continuous,
                        autoencoders: &aes,
                        config: &cfg.eval,
                    };
                    evaluate_all(&ctx, idx, results, |x| model.predict_labels(x), 1)?
                }
            };
            report.write_csv(out.join(format!("report_{}_{tag}.csv", method.name())))
        })?;
    }
    Ok(())
}

/// Metric tables for a finished run directory, one column per method.
pub fn format_report(run_dir: impl AsRef<Path>) -> Result<String> {
    let dir = run_dir.as_ref();
    let mpath = dir.join("manifest.json");
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut s = String::new();
    let _ = writeln!(s, "run: {} (status {})", dir.display(), manifest.status);
    if let Some(e) = &manifest.error {
        let _ = writeln!(s, "error: {e}");
    }
    if let Some(b) = manifest.beta_star {
        let _ = writeln!(s, "beta: {b}");
    }
    let _ = writeln!(s, "logreg counterfactuals explain the logistic regression itself");

    let cpath = dir.join("classification.csv");
    if cpath.is_file() {
        let _ = writeln!(s, "\nclassification (test split)");
        let mut r = csv::Reader::from_path(&cpath)?;
        let _ = writeln!(s, "{:<10}{:>10}{:>11}{:>10}{:>10}", "model", "accuracy", "precision", "recall", "auc");
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| rec.get(i).and_then(|v| v.parse::<f64>().ok()).unwrap_or(f64::NAN);
            let _ = writeln!(
                s,
                "{:<10}{:>10.4}{:>11.4}{:>10.4}{:>10.4}",
                rec.get(0).unwrap_or(""),
                num(1),
                num(2),
                num(3),
                num(4)
            );
        }
    }

    let mut reports = Vec::new();
    for m in &manifest.methods {
        let p = dir.join(format!("report_{}_{}.csv", m.name(), manifest.mask));
        if p.is_file() {
            reports.push((m.name(), MetricsReport::read_csv(&p)?));
        }
    }
    if !reports.is_empty() {
        let _ = writeln!(s, "\ncounterfactuals ({})", manifest.mask);
        let _ = write!(s, "{:<12}", "metric");
        for (name, _) in &reports {
            let _ = write!(s, "{:>22}", name);
        }
        let _ = writeln!(s);
        for row in &reports[0].1.rows {
            let _ = write!(s, "{:<12}", row.metric);
            for (_, rep) in &reports {
                match rep.get(&row.metric) {
                    Some(r) => {
                        let _ = write!(s, "{:>22}", format!("{:.4} ± {:.4}", r.mean, r.stderr));
                    }
                    None => {
                        let _ = write!(s, "{:>22}", "-");
                    }
                }
            }
            let _ = writeln!(s);
        }
        let _ = write!(s, "{:<12}", "converged");
        for (_, rep) in &reports {
            let _ = write!(s, "{:>22}", format!("{}/{}", rep.n_converged, rep.n_queries));
        }
        let _ = writeln!(s);
    }
    Ok(s)
}
