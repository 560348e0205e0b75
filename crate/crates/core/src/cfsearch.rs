//! Boundary-constrained counterfactual search.
//!
//! Minimizes `½‖δ‖² − β·log p(f_e(x+δ))` subject to `θ_c·f_e(x+δ) + θ_0 = 0`
//! with a fixed-step primal-dual iteration on the Lagrangian
//! `L(δ, η) = ½‖δ‖² − β·log p(λ) + η·(θ_c·λ + θ_0)`.

use std::ops::Range;
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Mask, Preprocessor};
use crate::density::DensityModel;
use crate::error::{check_dim, Error, Result};
use crate::gpae::GpaeModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub step_delta: f64,
    pub step_eta: f64,
    pub max_iters: usize,
    pub tol_step: f64,
    pub tol_boundary: f64,
    /// Required probability margin past 0.5 after overshoot.
    pub overshoot_margin: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            step_delta: 0.05,
            step_eta: 0.05,
            max_iters: 2000,
            tol_step: 1e-6,
            tol_boundary: 1e-4,
            overshoot_margin: 0.05,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("step_delta", self.step_delta),
            ("step_eta", self.step_eta),
            ("tol_step", self.tol_step),
            ("tol_boundary", self.tol_boundary),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..0.5).contains(&self.overshoot_margin) {
            return Err(Error::InvalidArgument(format!(
                "overshoot_margin must be in [0, 0.5), got {}",
                self.overshoot_margin
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfQuery {
    /// Standardized, encoded query point.
    pub x: Array1<f64>,
    pub mask: Mask,
    pub beta: f64,
    /// Class the counterfactual should land in.
    pub target: u8,
    pub config: SearchConfig,
}

impl CfQuery {
    pub fn new(x: Array1<f64>, mask: Mask, beta: f64, target: u8, config: SearchConfig) -> Result<Self> {
        check_dim(x.len(), mask.len())?;
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be >= 0, got {beta}")));
        }
        if target > 1 {
            return Err(Error::InvalidArgument(format!("target must be 0 or 1, got {target}")));
        }
        config.validate()?;
        Ok(CfQuery { x, mask, beta, target, config })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfResult {
    pub x_cf: Array1<f64>,
    pub delta: Array1<f64>,
    pub lam_cf: Array1<f64>,
    pub eta: f64,
    pub iterations: usize,
    /// `θ_c·λ_cf + θ_0`.
    pub boundary_residual: f64,
    pub log_density_at_cf: f64,
    pub converged: bool,
    /// Hard label of `x_cf` equals the target.
    pub flipped: bool,
    /// Set when the query was aborted, e.g. on a non-finite iterate.
    pub failure: Option<String>,
}

impl CfResult {
    fn at(model: &GpaeModel, dm: &DensityModel, query: &CfQuery, delta: Array1<f64>) -> Result<Self> {
        let x_cf = &query.x + &delta;
        let lam_cf = model.encode(x_cf.view())?;
        let r = model.logit(lam_cf.view());
        Ok(CfResult {
            boundary_residual: r,
            log_density_at_cf: dm.log_density_unnorm(lam_cf.view())?,
            flipped: label_of(r) == query.target,
            x_cf,
            delta,
            lam_cf,
            eta: 0.0,
            iterations: 0,
            converged: false,
            failure: None,
        })
    }
}

fn label_of(logit: f64) -> u8 {
    u8::from(logit >= 0.0)
}

/// `L(δ, η)` evaluated directly.
pub fn lagrangian(model: &GpaeModel, dm: &DensityModel, query: &CfQuery, delta: ArrayView1<f64>, eta: f64) -> Result<f64> {
    let x_cf = &query.x + &delta;
    let lam = model.encode(x_cf.view())?;
    let mut l = 0.5 * delta.dot(&delta) + eta * model.logit(lam.view());
    if query.beta != 0.0 {
        l -= query.beta * dm.log_density_unnorm(lam.view())?;
    }
    Ok(l)
}

/// `∂L/∂δ = δ + J_eᵀ(η·θ_c − β·∇ log p(λ))`, unmasked.
pub fn grad_delta(model: &GpaeModel, dm: &DensityModel, query: &CfQuery, delta: ArrayView1<f64>, eta: f64) -> Result<Array1<f64>> {
    let x_cf = &query.x + &delta;
    let pt = model.linearize(x_cf.view())?;
    grad_delta_at(model, dm, query.beta, &pt, delta, eta)
}

fn grad_delta_at(
    model: &GpaeModel,
    dm: &DensityModel,
    beta: f64,
    pt: &crate::gpae::EncoderPoint,
    delta: ArrayView1<f64>,
    eta: f64,
) -> Result<Array1<f64>> {
    let mut v = &model.theta_c * eta;
    if beta != 0.0 {
        v.scaled_add(-beta, &dm.grad_log_density(pt.lam.view())?);
    }
    Ok(&delta + &pt.vjp(model, v.view())?)
}

/// `∂L/∂η = θ_c·f_e(x+δ) + θ_0`.
pub fn grad_eta(model: &GpaeModel, query: &CfQuery, delta: ArrayView1<f64>) -> Result<f64> {
    let x_cf = &query.x + &delta;
    Ok(model.logit(model.encode(x_cf.view())?.view()))
}

/// Runs the primal-dual iteration from `δ = 0`, `η = 0` with no overshoot.
pub fn search(model: &GpaeModel, dm: &DensityModel, query: &CfQuery) -> Result<CfResult> {
    check_dim(model.input_dim(), query.x.len())?;
    let cfg = &query.config;
    let mut delta = Array1::zeros(query.x.len());
    let mut eta = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut failure = None;

    for it in 1..=cfg.max_iters {
        iterations = it;
        let x_cf = &query.x + &delta;
        let pt = model.linearize(x_cf.view())?;
        let r = model.logit(pt.lam.view());
        if it > 1 {
            eta += cfg.step_eta * r;
        }
        let g = grad_delta_at(model, dm, query.beta, &pt, delta.view(), eta)?;
        let step = query.mask.apply(&(g * cfg.step_delta));
        let norm = step.dot(&step).sqrt();
        if !(norm.is_finite() && eta.is_finite()) {
            failure = Some(format!("non-finite iterate at iteration {it}"));
            break;
        }
        if norm <= cfg.tol_step && r.abs() <= cfg.tol_boundary {
            converged = true;
            break;
        }
        delta -= &step;
    }

    let mut res = CfResult::at(model, dm, query, delta)?;
    res.eta = eta;
    res.iterations = iterations;
    res.converged = converged;
    res.failure = failure;
    Ok(res)
}

/// Pushes a converged result past the boundary with Newton steps on the
/// logit along the masked input gradient, until the target-class probability
/// clears `0.5 + margin`. Gives up after 100 steps. A zero margin or a
/// non-converged result is returned unchanged.
pub fn overshoot(model: &GpaeModel, dm: &DensityModel, query: &CfQuery, result: &CfResult, mask: &Mask) -> Result<CfResult> {
    let margin = query.config.overshoot_margin;
    if !result.converged || margin == 0.0 {
        return Ok(result.clone());
    }
    let goal = ((0.5 + margin) / (0.5 - margin)).ln();
    let sign = if query.target == 1 { 1.0 } else { -1.0 };
    let mut delta = result.delta.clone();
    for _ in 0..100 {
        let x_cf = &query.x + &delta;
        let pt = model.linearize(x_cf.view())?;
        let r = sign * model.logit(pt.lam.view());
        if r >= goal {
            break;
        }
        let u = mask.apply(&pt.vjp(model, model.theta_c.view())?);
        let uu = u.dot(&u);
        if uu == 0.0 || !uu.is_finite() {
            break;
        }
        // aim slightly beyond the goal so curvature does not leave us short
        let target = goal * 1.05 + 1e-9;
        delta.scaled_add(sign * (target - r) / uu, &u);
    }
    let mut out = CfResult::at(model, dm, query, delta)?;
    out.eta = result.eta;
    out.iterations = result.iterations;
    out.converged = true;
    out.flipped = out.flipped && sign * out.boundary_residual >= goal;
    Ok(out)
}

/// Sets each fully mutable one-hot group of `x_cf` to the indicator of its
/// largest entry, recomputing the derived fields.
pub fn snap_onehot(model: &GpaeModel, dm: &DensityModel, query: &CfQuery, result: &CfResult, groups: &[Range<usize>]) -> Result<CfResult> {
    let mut delta = result.delta.clone();
    for g in groups {
        if !g.clone().all(|j| query.mask.is_mutable(j)) {
            continue;
        }
        let vals: Vec<f64> = g.clone().map(|j| result.x_cf[j]).collect();
        let k = crate::dataio::argmax(&vals);
        for (i, j) in g.clone().enumerate() {
            let v = if i == k { 1.0 } else { 0.0 };
            delta[j] = v - query.x[j];
        }
    }
    let mut out = CfResult::at(model, dm, query, delta)?;
    out.eta = result.eta;
    out.iterations = result.iterations;
    out.converged = result.converged;
    out.failure = result.failure.clone();
    Ok(out)
}

/// Search, overshoot, and one-hot snapping. If snapping undoes the label
/// flip, overshoot runs once more with the one-hot columns held fixed.
pub fn generate(model: &GpaeModel, dm: &DensityModel, query: &CfQuery, groups: &[Range<usize>]) -> Result<CfResult> {
    let res = search(model, dm, query)?;
    if !res.converged {
        return Ok(res);
    }
    let res = overshoot(model, dm, query, &res, &query.mask)?;
    if groups.is_empty() {
        return Ok(res);
    }
    let snapped = snap_onehot(model, dm, query, &res, groups)?;
    if snapped.flipped || query.config.overshoot_margin == 0.0 {
        return Ok(snapped);
    }
    let mut fixed = query.mask.0.clone();
    for g in groups {
        for j in g.clone() {
            fixed[j] = 0.0;
        }
    }
    overshoot(model, dm, query, &snapped, &Mask(fixed))
}

/// [`generate`] over a batch; results come back in query order.
pub fn generate_batch(model: &GpaeModel, dm: &DensityModel, queries: &[CfQuery], groups: &[Range<usize>]) -> Result<Vec<CfResult>> {
    queries.par_iter().map(|q| generate(model, dm, q, groups)).collect()
}

/// Search only, over a batch, in query order.
pub fn search_batch(model: &GpaeModel, dm: &DensityModel, queries: &[CfQuery]) -> Result<Vec<CfResult>> {
    queries.par_iter().map(|q| search(model, dm, q)).collect()
}

/// One row per query: id, status, encoded-space `δ`, and `x_cf` in original
/// units.
pub fn write_results_csv(path: impl AsRef<Path>, results: &[CfResult], prep: &Preprocessor) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let dim = prep.dim();
    let mut header = vec![
        "query_id".to_string(),
        "converged".into(),
        "flipped".into(),
        "iterations".into(),
        "boundary_residual".into(),
    ];
    header.extend((0..dim).map(|j| format!("delta_{j}")));
    header.extend(prep.schema.columns.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for (i, r) in results.iter().enumerate() {
        check_dim(dim, r.x_cf.len())?;
        let mut rec = vec![
            i.to_string(),
            r.converged.to_string(),
            r.flipped.to_string(),
            r.iterations.to_string(),
            format!("{}", r.boundary_residual),
        ];
        rec.extend(r.delta.iter().map(|v| format!("{v}")));
        let raw = prep.inverse_transform(r.x_cf.view())?;
        rec.extend(prep.render(&raw));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}
