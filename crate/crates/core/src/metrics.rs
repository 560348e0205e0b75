//! Counterfactual evaluation metrics and classifier scores.
//!
//! Distances are Euclidean in the standardized, encoded space unless noted.
//! Every metric has a `*_terms` form returning the per-item values that the
//! report averages.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::betaselect::mean_stderr;
use crate::cfsearch::CfResult;
use crate::dataio::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::gpae::{train, GpaeModel, TrainConfig};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Neighbors per side for discriminative power.
    pub k_dispo: usize,
    pub eps_im: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_dispo: 5,
            eps_im: 1e-8,
        }
    }
}

fn dist2(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    dist2(a, b).sqrt()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Squared distance over the continuous columns, per row.
pub fn l2_terms(x: ArrayView2<f64>, xcf: ArrayView2<f64>, continuous_idx: &[usize]) -> Result<Vec<f64>> {
    check_dim(x.nrows(), xcf.nrows())?;
    check_dim(x.ncols(), xcf.ncols())?;
    if x.nrows() == 0 {
        return Err(Error::Insufficient("l2 needs at least one row".into()));
    }
    Ok(x.rows()
        .into_iter()
        .zip(xcf.rows())
        .map(|(a, b)| continuous_idx.iter().map(|&j| (a[j] - b[j]).powi(2)).sum())
        .collect())
}

/// `(1/N) Σ ‖x_i − x_i^cf‖²` over the continuous columns.
pub fn l2_mean(x: ArrayView2<f64>, xcf: ArrayView2<f64>, continuous_idx: &[usize]) -> Result<f64> {
    Ok(mean(&l2_terms(x, xcf, continuous_idx)?))
}

/// Distances of all unordered pairs.
pub fn pair_distances(xcf: ArrayView2<f64>) -> Vec<f64> {
    let n = xcf.nrows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(dist(xcf.row(i), xcf.row(j)));
        }
    }
    d
}

/// `Σ_{i<j} d(x_i, x_j) / (N(N−1))`.
pub fn diversity(xcf: ArrayView2<f64>) -> Result<f64> {
    let n = xcf.nrows();
    if n < 2 {
        return Err(Error::Insufficient("diversity needs at least two counterfactuals".into()));
    }
    Ok(pair_distances(xcf).iter().sum::<f64>() / (n * (n - 1)) as f64)
}

/// Per-query `d(cf(i), cf(î)) / (1 + d(x_i, x_î))`, with `î` the nearest
/// other row sharing the predicted label (lowest index on ties).
pub fn instability_terms<F>(x: ArrayView2<f64>, y_pred: &[u8], cf: F) -> Result<Vec<f64>>
where
    F: Fn(usize) -> Result<Array1<f64>>,
{
    check_dim(x.nrows(), y_pred.len())?;
    for label in [0u8, 1] {
        let c = y_pred.iter().filter(|&&l| l == label).count();
        if c == 1 {
            return Err(Error::Insufficient(format!("label {label} has a single member")));
        }
    }
    if x.nrows() < 2 {
        return Err(Error::Insufficient("instability needs at least two rows".into()));
    }
    let mut out = Vec::with_capacity(x.nrows());
    for i in 0..x.nrows() {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..x.nrows() {
            if j == i || y_pred[j] != y_pred[i] {
                continue;
            }
            let d = dist(x.row(i), x.row(j));
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        let (dx, j) = best.expect("label classes checked above");
        let (a, b) = (cf(i)?, cf(j)?);
        out.push(dist(a.view(), b.view()) / (1.0 + dx));
    }
    Ok(out)
}

pub fn instability<F>(x: ArrayView2<f64>, y_pred: &[u8], cf: F) -> Result<f64>
where
    F: Fn(usize) -> Result<Array1<f64>>,
{
    Ok(mean(&instability_terms(x, y_pred, cf)?))
}

/// 1-NN accuracy with references `x` (label `fx`) and `x_cf` (label
/// `1 − fx`) on the `k` pool points nearest to `x` from each predicted
/// label. Ties go to `x`'s label.
pub fn discriminative_power(
    x: ArrayView1<f64>,
    x_cf: ArrayView1<f64>,
    pool: ArrayView2<f64>,
    pool_labels: &[u8],
    fx: u8,
    k: usize,
) -> Result<f64> {
    dispo_skipping(x, x_cf, pool, pool_labels, fx, k, None)
}

fn dispo_skipping(
    x: ArrayView1<f64>,
    x_cf: ArrayView1<f64>,
    pool: ArrayView2<f64>,
    pool_labels: &[u8],
    fx: u8,
    k: usize,
    skip: Option<usize>,
) -> Result<f64> {
    check_dim(pool.nrows(), pool_labels.len())?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let mut same = Vec::new();
    let mut other = Vec::new();
    for (i, row) in pool.rows().into_iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        let d = dist(x, row);
        if pool_labels[i] == fx {
            same.push((d, i));
        } else {
            other.push((d, i));
        }
    }
    if same.len() < k || other.len() < k {
        return Err(Error::Insufficient(format!(
            "pool needs {k} points per label, has {} and {}",
            same.len(),
            other.len()
        )));
    }
    let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    same.sort_by(by_dist);
    other.sort_by(by_dist);
    let mut correct = 0usize;
    for &(_, i) in same[..k].iter().chain(&other[..k]) {
        let p = pool.row(i);
        let assigned = if dist2(p, x) <= dist2(p, x_cf) { fx } else { 1 - fx };
        if assigned == pool_labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / (2 * k) as f64)
}

/// Per-sample IM1 and IM2 ratios.
pub fn im_terms<O, T, A>(xcf: ArrayView2<f64>, ae_o: O, ae_t: T, ae_full: A, eps: f64) -> Result<(Vec<f64>, Vec<f64>)>
where
    O: Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
    T: Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
    A: Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
{
    let (ro, rt, ra) = (ae_o(xcf)?, ae_t(xcf)?, ae_full(xcf)?);
    for r in [&ro, &rt, &ra] {
        check_dim(xcf.nrows(), r.nrows())?;
        check_dim(xcf.ncols(), r.ncols())?;
    }
    let mut im1 = Vec::with_capacity(xcf.nrows());
    let mut im2 = Vec::with_capacity(xcf.nrows());
    for i in 0..xcf.nrows() {
        let x = xcf.row(i);
        im1.push(dist2(x, rt.row(i)) / (dist2(x, ro.row(i)) + eps));
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        im2.push(dist2(rt.row(i), ra.row(i)) / (l1 + eps));
    }
    Ok((im1, im2))
}

pub fn im_scores<O, T, A>(xcf: ArrayView2<f64>, ae_o: O, ae_t: T, ae_full: A, eps: f64) -> Result<(f64, f64)>
where
    O: Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
    T: Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
    A: Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
{
    if xcf.nrows() == 0 {
        return Err(Error::Insufficient("im scores need at least one counterfactual".into()));
    }
    let (a, b) = im_terms(xcf, ae_o, ae_t, ae_full, eps)?;
    Ok((mean(&a), mean(&b)))
}

/// Fraction of labels equal to `target`.
pub fn validity(labels: &[u8], target: u8) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Insufficient("validity needs at least one counterfactual".into()));
    }
    Ok(labels.iter().filter(|&&l| l == target).count() as f64 / labels.len() as f64)
}

/// Reconstruction-only autoencoders for the IM scores.
#[derive(Debug, Clone)]
pub struct ImAutoencoders {
    pub original: GpaeModel,
    pub target: GpaeModel,
    pub full: GpaeModel,
}

/// Trains the three autoencoders with the classifier loss switched off:
/// on `original`-class rows, on `1 − original` rows, and on all rows.
pub fn train_im_autoencoders(train_set: &Dataset, val: &Dataset, original: u8, cfg: &TrainConfig) -> Result<ImAutoencoders> {
    let fit = |tr: &Dataset, va: &Dataset, idx: u64| -> Result<GpaeModel> {
        let c = TrainConfig {
            class_weight: 0.0,
            seed: derive_seed(cfg.seed, "im_autoencoder", idx),
            ..cfg.clone()
        };
        Ok(train(tr, va, &c)?.0)
    };
    let target = 1 - original;
    Ok(ImAutoencoders {
        original: fit(&train_set.filter_label(original), &val.filter_label(original), 0)?,
        target: fit(&train_set.filter_label(target), &val.filter_label(target), 1)?,
        full: fit(train_set, val, 2)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    pub n_queries: usize,
    pub n_converged: usize,
}

impl MetricsReport {
    pub fn get(&self, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    /// Columns `metric, mean, stderr, n`, with the query and convergence
    /// counts as the last two rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["metric", "mean", "stderr", "n"])?;
        for r in &self.rows {
            w.write_record([r.metric.clone(), format!("{}", r.mean), format!("{}", r.stderr), r.n.to_string()])?;
        }
        for (name, v) in [("n_queries", self.n_queries), ("n_converged", self.n_converged)] {
            w.write_record([name.to_string(), v.to_string(), "0".into(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        let mut rows = Vec::new();
        let (mut nq, mut nc) = (0, 0);
        for rec in r.deserialize::<MetricRow>() {
            let row = rec?;
            match row.metric.as_str() {
                "n_queries" => nq = row.n,
                "n_converged" => nc = row.n,
                _ => rows.push(row),
            }
        }
        Ok(MetricsReport {
            rows,
            n_queries: nq,
            n_converged: nc,
        })
    }
}

fn row(metric: &str, terms: &[f64]) -> MetricRow {
    let (mean, stderr) = mean_stderr(terms);
    MetricRow {
        metric: metric.into(),
        mean,
        stderr,
        n: terms.len(),
    }
}

/// Everything the seven metrics need besides the counterfactuals.
pub struct EvalContext<'a> {
    /// Evaluation pool, standardized; queries are rows of it.
    pub pool: ArrayView2<'a, f64>,
    /// Classifier labels of the pool rows.
    pub pool_labels: &'a [u8],
    pub continuous_idx: &'a [usize],
    pub autoencoders: &'a ImAutoencoders,
    pub config: &'a EvalConfig,
}

/// Scores one method. `query_idx[i]` is the pool row explained by
/// `results[i]`; `classify` is the classifier the method explains. Queries
/// that did not converge count against validity and are left out of the
/// distance-type metrics.
pub fn evaluate_all<C>(ctx: &EvalContext<'_>, query_idx: &[usize], results: &[CfResult], classify: C, target: u8) -> Result<MetricsReport>
where
    C: Fn(ArrayView2<f64>) -> Result<Vec<u8>>,
{
    check_dim(query_idx.len(), results.len())?;
    if results.is_empty() {
        return Err(Error::Insufficient("no counterfactuals to evaluate".into()));
    }
    let dim = ctx.pool.ncols();
    let conv: Vec<usize> = (0..results.len()).filter(|&i| results[i].converged).collect();
    if conv.len() < 2 {
        return Err(Error::Insufficient(format!(
            "only {} of {} queries converged",
            conv.len(),
            results.len()
        )));
    }

    let mut all_cf = Array2::zeros((results.len(), dim));
    for (mut r, res) in all_cf.rows_mut().into_iter().zip(results) {
        check_dim(dim, res.x_cf.len())?;
        r.assign(&res.x_cf);
    }
    let cf_labels = classify(all_cf.view())?;
    let valid: Vec<u8> = results
        .iter()
        .zip(&cf_labels)
        .map(|(r, &l)| if r.converged { l } else { 1 - target })
        .collect();
    let valid_terms: Vec<f64> = valid.iter().map(|&l| f64::from(u8::from(l == target))).collect();

    let xq = ctx.pool.select(ndarray::Axis(0), &conv.iter().map(|&i| query_idx[i]).collect::<Vec<_>>());
    let xcf = all_cf.select(ndarray::Axis(0), &conv);

    let l2 = l2_terms(xq.view(), xcf.view(), ctx.continuous_idx)?;
    // N(N−1)/2 pairs over a divisor of N(N−1): the diversity is half the mean pair distance
    let div_terms: Vec<f64> = pair_distances(xcf.view()).iter().map(|d| 0.5 * d).collect();

    let q_labels: Vec<u8> = conv.iter().map(|&i| ctx.pool_labels[query_idx[i]]).collect();
    let inst = instability_terms(xq.view(), &q_labels, |i| Ok(xcf.row(i).to_owned()))?;

    let mut dispo = Vec::with_capacity(conv.len());
    for (k, &i) in conv.iter().enumerate() {
        let qi = query_idx[i];
        dispo.push(dispo_skipping(
            xq.row(k),
            xcf.row(k),
            ctx.pool,
            ctx.pool_labels,
            ctx.pool_labels[qi],
            ctx.config.k_dispo,
            Some(qi),
        )?);
    }

    let ae = ctx.autoencoders;
    let (im1, im2) = im_terms(
        xcf.view(),
        |v| ae.original.reconstruct_batch(v),
        |v| ae.target.reconstruct_batch(v),
        |v| ae.full.reconstruct_batch(v),
        ctx.config.eps_im,
    )?;

    let rows = vec![
        row("l2", &l2),
        row("diversity", &div_terms),
        row("instability", &inst),
        row("dispo", &dispo),
        row("im1", &im1),
        row("im2", &im2),
        row("validity", &valid_terms),
    ];
    if let Some(bad) = rows.iter().find(|r| !(r.mean.is_finite() && r.stderr.is_finite())) {
        return Err(Error::NonFinite(format!("metric {}", bad.metric)));
    }
    Ok(MetricsReport {
        rows,
        n_queries: results.len(),
        n_converged: conv.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc: f64,
}

/// Accuracy, precision and recall at the hard labels, and ROC AUC from the
/// scores with tied scores sharing rank. Undefined ratios report 0.
pub fn classification_scores(scores: &[f64], pred: &[u8], truth: &[u8]) -> Result<ClassificationScores> {
    check_dim(truth.len(), pred.len())?;
    check_dim(truth.len(), scores.len())?;
    if truth.is_empty() {
        return Err(Error::Insufficient("no rows to score".into()));
    }
    let (mut tp, mut fp, mut fneg, mut correct) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            correct += 1.0;
        }
        match (p, t) {
            (1, 1) => tp += 1.0,
            (1, 0) => fp += 1.0,
            (0, 1) => fneg += 1.0,
            _ => {}
        }
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(ClassificationScores {
        accuracy: correct / truth.len() as f64,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
        auc: auc(scores, truth),
    })
}

fn auc(scores: &[f64], truth: &[u8]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    let n_pos = truth.iter().filter(|&&t| t == 1).count() as f64;
    let n_neg = truth.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return 0.0;
    }
    let rank_sum: f64 = ranks.iter().zip(truth).filter(|(_, &t)| t == 1).map(|(r, _)| r).sum();
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}
