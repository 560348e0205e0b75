//! Comparison methods: logistic regression explaining itself by projection
//! onto its own boundary, and gradient steps on the latent classifier's
//! probability in input space.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cfsearch::CfResult;
use crate::dataio::{Dataset, Mask};
use crate::error::{check_dim, Error, Result};
use crate::gpae::{sigmoid, GpaeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    #[serde(with = "crate::serde_arr")]
    pub w: Array1<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    pub lr: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    /// Multiplier on the distance to the boundary; 1 lands on it.
    pub cf_step: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            lr: 0.5,
            max_steps: 10_000,
            grad_tol: 1e-6,
            cf_step: 1.1,
        }
    }
}

impl LogRegModel {
    pub fn logit(&self, x: ArrayView1<f64>) -> f64 {
        self.w.dot(&x) + self.b
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.dot(&self.w) + self.b
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.logits(x).mapv_into(sigmoid)
    }

    pub fn predict_labels(&self, x: ArrayView2<f64>) -> Vec<u8> {
        self.logits(x).iter().map(|&z| u8::from(z >= 0.0)).collect()
    }
}

/// Full-batch gradient descent on the mean two-sided BCE from zero weights.
/// Stops when the gradient norm drops below `grad_tol` or after `max_steps`.
pub fn logreg_train(data: &Dataset, cfg: &LogRegConfig) -> Result<LogRegModel> {
    if data.is_empty() {
        return Err(Error::Insufficient("logistic regression needs training rows".into()));
    }
    let n = data.len() as f64;
    let y = Array1::from_iter(data.y.iter().map(|&v| f64::from(v)));
    let mut m = LogRegModel {
        w: Array1::zeros(data.dim()),
        b: 0.0,
    };
    for step in 0..cfg.max_steps {
        let r = m.predict_proba(data.x.view()) - &y;
        let gw = data.x.t().dot(&r) / n;
        let gb = r.sum() / n;
        let norm = (gw.dot(&gw) + gb * gb).sqrt();
        if !norm.is_finite() {
            return Err(Error::Diverged {
                epoch: step,
                loss: norm,
            });
        }
        if norm <= cfg.grad_tol {
            break;
        }
        m.w.scaled_add(-cfg.lr, &gw);
        m.b -= cfg.lr * gb;
    }
    Ok(m)
}

/// `x − step·((w·x + b)/‖w⊙M‖²)·(w⊙M)`: projection onto the boundary along
/// the mutable part of `w`, scaled by `step`.
pub fn logreg_cf(model: &LogRegModel, x: ArrayView1<f64>, mask: &Mask, step: f64) -> Result<Array1<f64>> {
    check_dim(model.w.len(), x.len())?;
    check_dim(model.w.len(), mask.len())?;
    let wm = mask.apply(&model.w);
    let nn = wm.dot(&wm);
    if nn == 0.0 {
        return Err(Error::InvalidArgument("no mutable weight to move along".into()));
    }
    let k = step * model.logit(x) / nn;
    Ok(&x - &(wm * k))
}

/// [`logreg_cf`] packaged like a search result.
pub fn logreg_result(model: &LogRegModel, x: ArrayView1<f64>, mask: &Mask, step: f64, target: u8) -> Result<CfResult> {
    let (x_cf, converged, failure) = match logreg_cf(model, x, mask, step) {
        Ok(v) => (v, true, None),
        Err(Error::InvalidArgument(msg)) => (x.to_owned(), false, Some(msg)),
        Err(e) => return Err(e),
    };
    let r = model.logit(x_cf.view());
    Ok(CfResult {
        delta: &x_cf - &x,
        lam_cf: Array1::zeros(0),
        eta: 0.0,
        iterations: 1,
        boundary_residual: r,
        log_density_at_cf: f64::NAN,
        converged,
        flipped: u8::from(r >= 0.0) == target,
        failure,
        x_cf,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WachterConfig {
    pub step: f64,
    pub max_iters: usize,
    /// Required probability margin past 0.5.
    pub margin: f64,
}

impl Default for WachterConfig {
    fn default() -> Self {
        WachterConfig {
            step: 0.05,
            max_iters: 2000,
            margin: 0.05,
        }
    }
}

/// `∂p/∂x = p(1 − p)·J_eᵀθ_c` for `p = classify(encode(x))`.
pub fn prob_grad(model: &GpaeModel, x: ArrayView1<f64>) -> Result<(f64, Array1<f64>)> {
    let pt = model.linearize(x)?;
    let p = model.classify(pt.lam.view());
    let g = pt.vjp(model, model.theta_c.view())? * (p * (1.0 - p));
    Ok((p, g))
}

fn past_margin(p: f64, target: u8, margin: f64) -> bool {
    if target == 1 {
        p >= 0.5 + margin
    } else {
        p <= 0.5 - margin
    }
}

/// Steps `x ← x + step·s·(∂p/∂x ⊙ M)` with `s = ±1` toward `target` until the
/// probability clears the margin; `converged = false` if it never does.
pub fn wachter_cf(model: &GpaeModel, x: ArrayView1<f64>, mask: &Mask, target: u8, cfg: &WachterConfig) -> Result<CfResult> {
    check_dim(model.input_dim(), x.len())?;
    check_dim(x.len(), mask.len())?;
    let sign = if target == 1 { 1.0 } else { -1.0 };
    let mut delta = Array1::zeros(x.len());
    let mut converged = false;
    let mut failure = None;
    let mut iterations = 0;
    loop {
        let x_cf = &x + &delta;
        let (p, g) = prob_grad(model, x_cf.view())?;
        if past_margin(p, target, cfg.margin) {
            converged = true;
            break;
        }
        if iterations == cfg.max_iters {
            break;
        }
        if !g.iter().all(|v| v.is_finite()) {
            failure = Some(format!("non-finite gradient at iteration {iterations}"));
            break;
        }
        delta.scaled_add(sign * cfg.step, &mask.apply(&g));
        iterations += 1;
    }
    let x_cf = &x + &delta;
    let lam_cf = model.encode(x_cf.view())?;
    let r = model.logit(lam_cf.view());
    Ok(CfResult {
        x_cf,
        delta,
        lam_cf,
        eta: 0.0,
        iterations,
        boundary_residual: r,
        log_density_at_cf: f64::NAN,
        converged,
        flipped: u8::from(r >= 0.0) == target,
        failure,
    })
}
