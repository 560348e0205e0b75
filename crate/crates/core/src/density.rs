//! Latent density `p(λ) ∝ exp(w·φ(λ)) · N(λ | μ, Σ)`.
//!
//! The Gaussian envelope is the empirical mean and diagonal covariance of the
//! fitting latents. The RFF weights `w` are fitted by stochastic gradient
//! ascent on the MAP objective, with the normalizer estimated by Monte Carlo
//! draws from the envelope itself: `Z = E_N[exp(w·φ(λ))]`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rff::{self, RffMap};
use crate::seed::{derive_seed, rng};

const VAR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityConfig {
    pub features: usize,
    pub bandwidth: f64,
    /// Normalizer sample count `K`.
    pub k_samples: usize,
    pub lr: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    /// Draw fresh normalizer samples every step. When false one sample set is
    /// frozen and steps that lower the objective are rejected with a halved
    /// step size.
    pub resample: bool,
    pub seed: u64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            features: 512,
            bandwidth: 1.0,
            k_samples: 1024,
            lr: 0.5,
            max_steps: 5000,
            grad_tol: 1e-5,
            resample: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    #[serde(rename = "rff_rho")]
    pub rff: RffMap,
    #[serde(with = "crate::serde_arr")]
    pub w: Array1<f64>,
    #[serde(with = "crate::serde_arr")]
    pub mu: Array1<f64>,
    #[serde(rename = "sigma_diag", with = "crate::serde_arr")]
    pub sigma: Array1<f64>,
    #[serde(rename = "K")]
    pub k_samples: usize,
}

/// Column means and unbiased diagonal variances (floored at 1e-8).
pub fn fit_envelope(latents: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    let n = latents.nrows();
    if n < 2 {
        return Err(Error::Insufficient(format!("envelope needs at least 2 latents, got {n}")));
    }
    let mu = latents.mean_axis(Axis(0)).expect("n >= 2");
    let mut var = Array1::zeros(latents.ncols());
    for row in latents.rows() {
        let d = &row - &mu;
        var += &(&d * &d);
    }
    var /= (n - 1) as f64;
    Ok((mu, var.mapv_into(|v| v.max(VAR_FLOOR))))
}

/// Diagonal Gaussian log-density.
pub fn gaussian_log_pdf(x: ArrayView1<f64>, mu: ArrayView1<f64>, var: ArrayView1<f64>) -> f64 {
    let d = x.len() as f64;
    let mut quad = 0.0;
    let mut log_det = 0.0;
    for ((&xi, &mi), &vi) in x.iter().zip(mu).zip(var) {
        quad += (xi - mi).powi(2) / vi;
        log_det += vi.ln();
    }
    -0.5 * (d * (2.0 * PI).ln() + log_det + quad)
}

/// `log mean exp(v)` with max subtraction.
pub fn log_mean_exp(v: ArrayView1<f64>) -> f64 {
    let m = v.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    m + (s / v.len() as f64).ln()
}

/// Softmax weights with max subtraction.
pub fn softmax(v: ArrayView1<f64>) -> Array1<f64> {
    let m = v.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut e = v.mapv(|x| (x - m).exp());
    let s = e.sum();
    e /= s;
    e
}

impl DensityModel {
    /// A model with `w = 0` on the given envelope.
    pub fn with_envelope(rff: RffMap, mu: Array1<f64>, sigma: Array1<f64>, k_samples: usize) -> Result<Self> {
        check_dim(rff.in_dim(), mu.len())?;
        check_dim(mu.len(), sigma.len())?;
        Ok(DensityModel {
            w: Array1::zeros(rff.features()),
            rff,
            mu,
            sigma: sigma.mapv_into(|v| v.max(VAR_FLOOR)),
            k_samples,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `f(λ) = w·φ(λ)`.
    pub fn score(&self, lam: ArrayView1<f64>) -> Result<f64> {
        Ok(self.rff.apply(lam)?.dot(&self.w))
    }

    pub fn log_density_unnorm(&self, lam: ArrayView1<f64>) -> Result<f64> {
        Ok(self.score(lam)? + gaussian_log_pdf(lam, self.mu.view(), self.sigma.view()))
    }

    /// `∇_λ [w·φ(λ) + log N(λ | μ, Σ)] = J_φ(λ)ᵀ w + Σ⁻¹(μ − λ)`.
    pub fn grad_log_density(&self, lam: ArrayView1<f64>) -> Result<Array1<f64>> {
        let mut g = self.rff.vjp(lam, self.w.view())?;
        for i in 0..g.len() {
            g[i] += (self.mu[i] - lam[i]) / self.sigma[i];
        }
        Ok(g)
    }

    /// `k` draws from the envelope `N(μ, Σ)`.
    pub fn sample_envelope(&self, k: usize, seed: u64) -> Array2<f64> {
        let mut r = rng(seed);
        let sd = self.sigma.mapv(f64::sqrt);
        let mut out = Array2::zeros((k, self.dim()));
        for mut row in out.rows_mut() {
            for j in 0..row.len() {
                let z: f64 = r.sample(StandardNormal);
                row[j] = self.mu[j] + sd[j] * z;
            }
        }
        out
    }

    /// Monte Carlo `log Z = log E_N[exp(w·φ(λ))]` from `K` envelope draws.
    pub fn estimate_log_z(&self, seed: u64) -> Result<f64> {
        self.estimate_log_z_with(self.k_samples, seed)
    }

    pub fn estimate_log_z_with(&self, k: usize, seed: u64) -> Result<f64> {
        if k == 0 {
            return Err(Error::InvalidArgument("normalizer needs K >= 1".into()));
        }
        let samples = self.sample_envelope(k, seed);
        let scores = self.rff.apply_batch(samples.view())?.dot(&self.w);
        Ok(log_mean_exp(scores.view()))
    }

    /// MAP objective divided by the number of data points `N`:
    /// `−‖w‖²/(2N) + mean_i w·φ(λ_i) − log mean_k exp(w·φ(λ_k))`.
    pub fn map_objective(&self, data_latents: ArrayView2<f64>, norm_samples: ArrayView2<f64>) -> Result<f64> {
        let data_phi = self.rff.apply_batch(data_latents)?;
        let norm_phi = self.rff.apply_batch(norm_samples)?;
        Ok(objective_from_features(&self.w, &mean_rows(&data_phi), data_latents.nrows(), &norm_phi))
    }

    /// `(1/N) ∂L/∂w = −w/N + mean_i φ(λ_i) − Σ_k q_k φ(λ_k)` with
    /// `q = softmax(w·φ(λ_k))`.
    pub fn map_gradient(&self, data_latents: ArrayView2<f64>, norm_samples: ArrayView2<f64>) -> Result<Array1<f64>> {
        if data_latents.nrows() == 0 || norm_samples.nrows() == 0 {
            return Err(Error::Insufficient("map gradient needs nonempty data and samples".into()));
        }
        let data_phi = self.rff.apply_batch(data_latents)?;
        let norm_phi = self.rff.apply_batch(norm_samples)?;
        Ok(gradient_from_features(&self.w, &mean_rows(&data_phi), data_latents.nrows(), &norm_phi))
    }
}

fn mean_rows(a: &Array2<f64>) -> Array1<f64> {
    a.mean_axis(Axis(0)).expect("nonempty")
}

fn objective_from_features(w: &Array1<f64>, data_mean: &Array1<f64>, n: usize, norm_phi: &Array2<f64>) -> f64 {
    let nf = n as f64;
    let scores = norm_phi.dot(w);
    -w.dot(w) / (2.0 * nf) + w.dot(data_mean) - log_mean_exp(scores.view())
}

fn gradient_from_features(w: &Array1<f64>, data_mean: &Array1<f64>, n: usize, norm_phi: &Array2<f64>) -> Array1<f64> {
    let q = softmax(norm_phi.dot(w).view());
    let mut g = data_mean - &norm_phi.t().dot(&q);
    g.scaled_add(-1.0 / n as f64, w);
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityFitLog {
    pub steps: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
}

/// Fits the envelope from `latents`, then runs gradient ascent on `w`.
pub fn fit(latents: ArrayView2<f64>, cfg: &DensityConfig) -> Result<(DensityModel, DensityFitLog)> {
    let (mu, sigma) = fit_envelope(latents)?;
    let rff = rff::sample_map(
        derive_seed(cfg.seed, "density_rff", 0),
        cfg.features,
        latents.ncols(),
        cfg.bandwidth,
    )?;
    let mut dm = DensityModel::with_envelope(rff, mu, sigma, cfg.k_samples)?;
    if cfg.k_samples == 0 {
        return Err(Error::InvalidArgument("normalizer needs K >= 1".into()));
    }
    let n = latents.nrows();
    let data_mean = mean_rows(&dm.rff.apply_batch(latents)?);

    let frozen = if cfg.resample {
        None
    } else {
        let s = dm.sample_envelope(cfg.k_samples, derive_seed(cfg.seed, "density_norm", 0));
        Some(dm.rff.apply_batch(s.view())?)
    };
    let mut lr = cfg.lr;
    let mut log = DensityFitLog {
        steps: 0,
        final_grad_norm: f64::INFINITY,
        converged: false,
    };
    for step in 0..cfg.max_steps {
        let owned;
        let norm_phi = match &frozen {
            Some(phi) => phi,
            None => {
                let s = dm.sample_envelope(cfg.k_samples, derive_seed(cfg.seed, "density_norm", step as u64));
                owned = dm.rff.apply_batch(s.view())?;
                &owned
            }
        };
        let g = gradient_from_features(&dm.w, &data_mean, n, norm_phi);
        let gnorm = g.dot(&g).sqrt();
        if !gnorm.is_finite() {
            return Err(Error::NonFinite(format!("density gradient at step {step}")));
        }
        log.steps = step + 1;
        log.final_grad_norm = gnorm;
        if gnorm <= cfg.grad_tol {
            log.converged = true;
            break;
        }
        if frozen.is_some() {
            let before = objective_from_features(&dm.w, &data_mean, n, norm_phi);
            loop {
                let cand = &dm.w + &(&g * lr);
                let after = objective_from_features(&cand, &data_mean, n, norm_phi);
                if !after.is_finite() {
                    return Err(Error::NonFinite(format!("density objective at step {step}")));
                }
                if after >= before {
                    dm.w = cand;
                    break;
                }
                lr *= 0.5;
                if lr < 1e-12 {
                    break;
                }
            }
        } else {
            dm.w.scaled_add(lr, &g);
        }
        if !dm.w.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("density weights at step {step}")));
        }
    }
    Ok((dm, log))
}
