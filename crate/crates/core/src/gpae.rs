//! The Gaussian process auto-encoder: an RFF encoder `λ = φ_e(x)ᵀ W_e`, an RFF
//! decoder `x̂ = φ_d(λ)ᵀ W_d` and a linear latent classifier
//! `p = sigmoid(λ·θ_c + θ_0)`. Only `W_e`, `W_d`, `θ_c` and `θ_0` are trained;
//! the cosine layers stay frozen.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::rff::{self, RffMap};
use crate::seed::{derive_seed, rng};

const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise distance of (up to 1000) training rows.
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub enc_features: usize,
    pub dec_features: usize,
    pub enc_bandwidth: Bandwidth,
    pub dec_bandwidth: f64,
    pub batch_size: usize,
    pub lr_init: f64,
    pub plateau_patience: usize,
    pub stop_patience: usize,
    pub lr_decay: f64,
    /// Relative validation improvement that counts as a significant decrease.
    pub min_rel_improvement: f64,
    pub max_epochs: usize,
    pub class_weight: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            latent_dim: 4,
            enc_features: 1000,
            dec_features: 1000,
            enc_bandwidth: Bandwidth::Fixed(1.0),
            dec_bandwidth: 1.0,
            batch_size: 512,
            lr_init: 1e-3,
            plateau_patience: 10,
            stop_patience: 20,
            lr_decay: 0.1,
            min_rel_improvement: 1e-4,
            max_epochs: 300,
            class_weight: 1.0,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.latent_dim > 0
            && self.enc_features > 0
            && self.dec_features > 0
            && self.batch_size > 0
            && self.lr_init > 0.0
            && self.plateau_patience > 0
            && self.max_epochs > 0
            && self.lr_decay > 0.0
            && self.dec_bandwidth > 0.0
            && self.class_weight >= 0.0;
        if !positive {
            return Err(Error::InvalidArgument("train config values must be positive".into()));
        }
        if self.stop_patience <= self.plateau_patience {
            return Err(Error::InvalidArgument(
                "stop_patience must exceed plateau_patience".into(),
            ));
        }
        if let Bandwidth::Fixed(b) = self.enc_bandwidth {
            if b <= 0.0 {
                return Err(Error::InvalidArgument("encoder bandwidth must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpaeModel {
    pub rff_enc: RffMap,
    /// `S_e × d`
    pub w_e: Array2<f64>,
    pub rff_dec: RffMap,
    /// `S_d × D`
    pub w_d: Array2<f64>,
    pub theta_c: Array1<f64>,
    pub theta_0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub recon: f64,
    pub class: f64,
    pub total: f64,
}

/// Gradients of the total loss, shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w_e: Array2<f64>,
    pub w_d: Array2<f64>,
    pub theta_c: Array1<f64>,
    pub theta_0: f64,
}

struct Forward {
    phi_e: Array2<f64>,
    lam: Array2<f64>,
    /// `sin` of the decoder phases, reused by the backward pass.
    sin_d: Array2<f64>,
    phi_d: Array2<f64>,
    xhat: Array2<f64>,
    logits: Array1<f64>,
}

/// Encoder output at a fixed input plus cached sine coefficients.
#[derive(Debug, Clone)]
pub struct EncoderPoint {
    pub lam: Array1<f64>,
    coef: Array1<f64>,
}

impl EncoderPoint {
    /// `J_eᵀ v` at the linearization point.
    pub fn vjp(&self, model: &GpaeModel, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim(model.latent_dim(), v.len())?;
        let u = model.w_e.dot(&v);
        model.rff_enc.vjp_from(&self.coef, u.view())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl GpaeModel {
    /// Samples both RFF maps and draws `W_e`, `W_d` i.i.d. standard normal;
    /// `θ_c` and `θ_0` start at zero.
    pub fn init(input_dim: usize, enc_bandwidth: f64, cfg: &TrainConfig) -> Result<Self> {
        let d = cfg.latent_dim;
        let rff_enc = rff::sample_map(
            derive_seed(cfg.seed, "rff_enc", 0),
            cfg.enc_features,
            input_dim,
            enc_bandwidth,
        )?;
        let rff_dec = rff::sample_map(
            derive_seed(cfg.seed, "rff_dec", 0),
            cfg.dec_features,
            d,
            cfg.dec_bandwidth,
        )?;
        let mut r = rng(derive_seed(cfg.seed, "init", 0));
        let w_e = Array2::from_shape_simple_fn((cfg.enc_features, d), || r.sample(StandardNormal));
        let w_d = Array2::from_shape_simple_fn((cfg.dec_features, input_dim), || {
            r.sample(StandardNormal)
        });
        Ok(GpaeModel {
            rff_enc,
            w_e,
            rff_dec,
            w_d,
            theta_c: Array1::zeros(d),
            theta_0: 0.0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.rff_enc.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.w_e.ncols()
    }

    pub fn encode(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self.rff_enc.apply(x)?.dot(&self.w_e))
    }

    pub fn decode(&self, lam: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self.rff_dec.apply(lam)?.dot(&self.w_d))
    }

    pub fn encode_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.rff_enc.apply_batch(x)?.dot(&self.w_e))
    }

    pub fn decode_batch(&self, lam: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.rff_dec.apply_batch(lam)?.dot(&self.w_d))
    }

    pub fn reconstruct_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let lam = self.encode_batch(x)?;
        self.decode_batch(lam.view())
    }

    /// Latent logit `λ·θ_c + θ_0`; zero on the decision boundary.
    pub fn logit(&self, lam: ArrayView1<f64>) -> f64 {
        lam.dot(&self.theta_c) + self.theta_0
    }

    pub fn classify(&self, lam: ArrayView1<f64>) -> f64 {
        sigmoid(self.logit(lam))
    }

    pub fn predict_proba(&self, x: ArrayView1<f64>) -> Result<f64> {
        Ok(self.classify(self.encode(x)?.view()))
    }

    /// Hard label: 1 iff the probability is at least 0.5.
    pub fn predict_label(&self, x: ArrayView1<f64>) -> Result<u8> {
        Ok(u8::from(self.logit(self.encode(x)?.view()) >= 0.0))
    }

    pub fn predict_proba_batch(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let lam = self.encode_batch(x)?;
        Ok((lam.dot(&self.theta_c) + self.theta_0).mapv_into(sigmoid))
    }

    pub fn predict_labels(&self, x: ArrayView2<f64>) -> Result<Vec<u8>> {
        let lam = self.encode_batch(x)?;
        Ok((lam.dot(&self.theta_c) + self.theta_0)
            .iter()
            .map(|&z| u8::from(z >= 0.0))
            .collect())
    }

    /// `d × D` Jacobian of the encoder, `W_eᵀ · J_φ(x)`.
    pub fn encoder_jacobian(&self, x: ArrayView1<f64>) -> Result<Array2<f64>> {
        Ok(self.w_e.t().dot(&self.rff_enc.jacobian(x)?))
    }

    /// `J_eᵀ v` for a latent-space vector `v`, computed as `J_φᵀ (W_e v)`.
    pub fn encoder_vjp(&self, x: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim(self.latent_dim(), v.len())?;
        let u = self.w_e.dot(&v);
        self.rff_enc.vjp(x, u.view())
    }

    /// Encodes `x` and keeps what is needed for later VJPs at the same point.
    pub fn linearize(&self, x: ArrayView1<f64>) -> Result<EncoderPoint> {
        let (phi, coef) = self.rff_enc.linearize(x)?;
        Ok(EncoderPoint {
            lam: phi.dot(&self.w_e),
            coef,
        })
    }

    fn forward(&self, x: ArrayView2<f64>) -> Result<Forward> {
        let phi_e = self.rff_enc.apply_batch(x)?;
        let lam = phi_e.dot(&self.w_e);
        let mut sin_d = self.rff_dec.phase_batch(lam.view())?;
        let mut phi_d = Array2::zeros(sin_d.raw_dim());
        let sd = self.rff_dec.scale();
        Zip::from(&mut sin_d).and(&mut phi_d).for_each(|a, p| {
            let (s, c) = a.sin_cos();
            *a = s;
            *p = sd * c;
        });
        let xhat = phi_d.dot(&self.w_d);
        let logits = lam.dot(&self.theta_c) + self.theta_0;
        Ok(Forward {
            phi_e,
            lam,
            sin_d,
            phi_d,
            xhat,
            logits,
        })
    }

    pub fn loss(&self, x: ArrayView2<f64>, y: &[u8], class_weight: f64) -> Result<Losses> {
        check_batch(x, y)?;
        check_dim(self.input_dim(), x.ncols())?;
        let lam = self.encode_batch(x)?;
        let xhat = self.decode_batch(lam.view())?;
        let logits = lam.dot(&self.theta_c) + self.theta_0;
        Ok(losses(x, &xhat, &logits, y, class_weight))
    }

    /// Analytic gradients of `L_recon + α·L_class` by backpropagation through
    /// the frozen cosine layers.
    pub fn gradients(&self, x: ArrayView2<f64>, y: &[u8], class_weight: f64) -> Result<(Losses, Grads)> {
        check_batch(x, y)?;
        let n = x.nrows() as f64;
        let f = self.forward(x)?;
        let l = losses(x, &f.xhat, &f.logits, y, class_weight);

        let g_xhat = (&f.xhat - &x) * (2.0 / n);
        let g_wd = f.phi_d.t().dot(&g_xhat);
        let mut g_phase_d = g_xhat.dot(&self.w_d.t());
        let sd = self.rff_dec.scale();
        Zip::from(&mut g_phase_d)
            .and(&f.sin_d)
            .for_each(|g, &s| *g *= -sd * s);
        let mut g_lam = g_phase_d.dot(&self.rff_dec.z()) / self.rff_dec.bandwidth();

        let g_logit = Array1::from_shape_fn(y.len(), |i| {
            let p = sigmoid(f.logits[i]);
            if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                0.0
            } else {
                class_weight * (p - f64::from(y[i])) / n
            }
        });
        let g_theta = f.lam.t().dot(&g_logit);
        let g_theta0 = g_logit.sum();
        for (mut row, &g) in g_lam.axis_iter_mut(Axis(0)).zip(&g_logit) {
            row.scaled_add(g, &self.theta_c);
        }
        let g_we = f.phi_e.t().dot(&g_lam);
        Ok((
            l,
            Grads {
                w_e: g_we,
                w_d: g_wd,
                theta_c: g_theta,
                theta_0: g_theta0,
            },
        ))
    }

    fn is_finite(&self) -> bool {
        self.w_e.iter().all(|v| v.is_finite())
            && self.w_d.iter().all(|v| v.is_finite())
            && self.theta_c.iter().all(|v| v.is_finite())
            && self.theta_0.is_finite()
    }
}

fn check_batch(x: ArrayView2<f64>, y: &[u8]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Insufficient("empty batch".into()));
    }
    check_dim(x.nrows(), y.len())
}

fn losses(x: ArrayView2<f64>, xhat: &Array2<f64>, logits: &Array1<f64>, y: &[u8], alpha: f64) -> Losses {
    let n = x.nrows() as f64;
    let recon = Zip::from(&x).and(xhat).fold(0.0, |acc, &a, &b| acc + (a - b).powi(2)) / n;
    let class = bce(logits, y);
    Losses {
        recon,
        class,
        total: recon + alpha * class,
    }
}

/// Two-sided binary cross-entropy with probabilities clamped to `[1e-12, 1-1e-12]`.
pub fn bce(logits: &Array1<f64>, y: &[u8]) -> f64 {
    let n = y.len() as f64;
    logits
        .iter()
        .zip(y)
        .map(|(&z, &t)| {
            let p = sigmoid(z).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if t == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_total: f64,
    pub val_recon: f64,
    pub val_class: f64,
    pub val_total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_total: f64,
}

struct AdamState {
    t: i32,
    m: Grads,
    v: Grads,
}

fn zeros_like(m: &GpaeModel) -> Grads {
    Grads {
        w_e: Array2::zeros(m.w_e.raw_dim()),
        w_d: Array2::zeros(m.w_d.raw_dim()),
        theta_c: Array1::zeros(m.theta_c.len()),
        theta_0: 0.0,
    }
}

fn apply_update(model: &mut GpaeModel, g: &Grads, lr: f64, kind: Optimizer, adam: &mut AdamState) {
    match kind {
        Optimizer::Sgd => {
            model.w_e.scaled_add(-lr, &g.w_e);
            model.w_d.scaled_add(-lr, &g.w_d);
            model.theta_c.scaled_add(-lr, &g.theta_c);
            model.theta_0 -= lr * g.theta_0;
        }
        Optimizer::Adam => {
            const B1: f64 = 0.9;
            const B2: f64 = 0.999;
            const EPS: f64 = 1e-8;
            adam.t += 1;
            let c1 = 1.0 - B1.powi(adam.t);
            let c2 = 1.0 - B2.powi(adam.t);
            let step = |p: f64, g: f64, m: &mut f64, v: &mut f64| -> f64 {
                *m = B1 * *m + (1.0 - B1) * g;
                *v = B2 * *v + (1.0 - B2) * g * g;
                p - lr * (*m / c1) / ((*v / c2).sqrt() + EPS)
            };
            Zip::from(&mut model.w_e)
                .and(&g.w_e)
                .and(&mut adam.m.w_e)
                .and(&mut adam.v.w_e)
                .for_each(|p, &g, m, v| *p = step(*p, g, m, v));
            Zip::from(&mut model.w_d)
                .and(&g.w_d)
                .and(&mut adam.m.w_d)
                .and(&mut adam.v.w_d)
                .for_each(|p, &g, m, v| *p = step(*p, g, m, v));
            Zip::from(&mut model.theta_c)
                .and(&g.theta_c)
                .and(&mut adam.m.theta_c)
                .and(&mut adam.v.theta_c)
                .for_each(|p, &g, m, v| *p = step(*p, g, m, v));
            model.theta_0 = step(model.theta_0, g.theta_0, &mut adam.m.theta_0, &mut adam.v.theta_0);
        }
    }
}

/// Mini-batch training on `L_recon + α·L_class` with a plateau schedule on
/// the validation loss. Returns the weights of the best validation epoch.
pub fn train(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<(GpaeModel, TrainLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Insufficient("empty train split".into()));
    }
    check_dim(train.dim(), val.dim())?;
    let val_set = if val.is_empty() { train } else { val };

    let b_enc = match cfg.enc_bandwidth {
        Bandwidth::Fixed(b) => b,
        Bandwidth::Median => rff::median_pairwise_distance(train.x.view(), 1000).max(1e-6),
    };
    let mut model = GpaeModel::init(train.dim(), b_enc, cfg)?;
    let mut adam = AdamState {
        t: 0,
        m: zeros_like(&model),
        v: zeros_like(&model),
    };

    let mut best = model.clone();
    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_total: model.loss(val_set.x.view(), &val_set.y, cfg.class_weight)?.total,
    };
    let mut lr = cfg.lr_init;
    let mut since_best = 0;
    let mut since_change = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng(derive_seed(cfg.seed, "shuffle", epoch as u64)));
        let mut train_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = train.x.select(Axis(0), chunk);
            let yb: Vec<u8> = chunk.iter().map(|&i| train.y[i]).collect();
            let (l, g) = model.gradients(xb.view(), &yb, cfg.class_weight)?;
            if !l.total.is_finite() {
                return Err(Error::Diverged { epoch, loss: l.total });
            }
            train_sum += l.total * chunk.len() as f64;
            apply_update(&mut model, &g, lr, cfg.optimizer, &mut adam);
        }
        if !model.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: f64::NAN,
            });
        }
        let v = model.loss(val_set.x.view(), &val_set.y, cfg.class_weight)?;
        if !v.total.is_finite() {
            return Err(Error::Diverged { epoch, loss: v.total });
        }
        log.epochs.push(EpochRecord {
            epoch,
            lr,
            train_total: train_sum / train.len() as f64,
            val_recon: v.recon,
            val_class: v.class,
            val_total: v.total,
        });
        log::debug!("epoch {epoch}: lr={lr:e} val_total={:.6}", v.total);

        if v.total < log.best_val_total - cfg.min_rel_improvement * log.best_val_total.abs() {
            log.best_val_total = v.total;
            log.best_epoch = epoch;
            best = model.clone();
            since_best = 0;
            since_change = 0;
        } else {
            since_best += 1;
            since_change += 1;
        }
        if since_best >= cfg.stop_patience {
            break;
        }
        if since_change >= cfg.plateau_patience {
            lr *= cfg.lr_decay;
            since_change = 0;
        }
    }
    Ok((best, log))
}

/// Model file layout: frozen maps by spec, weights as row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_hash: String,
    pub rff_enc: RffMap,
    pub rff_dec: RffMap,
    #[serde(rename = "W_e")]
    pub w_e: Vec<Vec<f64>>,
    #[serde(rename = "W_d")]
    pub w_d: Vec<Vec<f64>>,
    pub theta_c: Vec<f64>,
    pub theta_0: f64,
    pub train_config: TrainConfig,
}

pub(crate) fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<Array2<f64>> {
    let mut a = Array2::zeros((rows.len(), ncols));
    for (i, r) in rows.iter().enumerate() {
        check_dim(ncols, r.len())?;
        a.row_mut(i).assign(&ArrayView1::from(r.as_slice()));
    }
    Ok(a)
}

impl ModelFile {
    pub fn new(model: &GpaeModel, schema_hash: &str, cfg: &TrainConfig) -> Self {
        ModelFile {
            schema_hash: schema_hash.to_string(),
            rff_enc: model.rff_enc.clone(),
            rff_dec: model.rff_dec.clone(),
            w_e: to_rows(&model.w_e),
            w_d: to_rows(&model.w_d),
            theta_c: model.theta_c.to_vec(),
            theta_0: model.theta_0,
            train_config: cfg.clone(),
        }
    }

    pub fn into_model(self) -> Result<GpaeModel> {
        let d = self.theta_c.len();
        let w_e = from_rows(&self.w_e, d)?;
        check_dim(self.rff_enc.features(), w_e.nrows())?;
        let w_d = from_rows(&self.w_d, self.rff_enc.in_dim())?;
        check_dim(self.rff_dec.features(), w_d.nrows())?;
        check_dim(d, self.rff_dec.in_dim())?;
        Ok(GpaeModel {
            rff_enc: self.rff_enc,
            w_e,
            rff_dec: self.rff_dec,
            w_d,
            theta_c: Array1::from(self.theta_c),
            theta_0: self.theta_0,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rff::RffSpec;
    use ndarray::array;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            latent_dim: 2,
            enc_features: 16,
            dec_features: 12,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_weights_encode_and_decode_to_zero() {
        let mut m = GpaeModel::init(3, 1.0, &small_cfg()).unwrap();
        m.w_e.fill(0.0);
        m.w_d.fill(0.0);
        assert_eq!(m.encode(array![1.0, 2.0, 3.0].view()).unwrap(), array![0.0, 0.0]);
        assert_eq!(m.decode(array![0.5, -1.0].view()).unwrap(), Array1::<f64>::zeros(3));
        assert_eq!(m.encoder_jacobian(array![1.0, 2.0, 3.0].view()).unwrap(), Array2::<f64>::zeros((2, 3)));
    }

    #[test]
    fn encode_is_linear_in_weights() {
        let m = GpaeModel::init(3, 1.0, &small_cfg()).unwrap();
        let mut m2 = m.clone();
        m2.w_e *= 2.0;
        m2.w_d *= 2.0;
        let x = array![0.3, -0.1, 0.8];
        let a = m.encode(x.view()).unwrap();
        let b = m2.encode(x.view()).unwrap();
        let lam = array![0.2, 0.4];
        let c = m.decode(lam.view()).unwrap();
        let d = m2.decode(lam.view()).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((2.0 * u - v).abs() < 1e-12);
        }
        for (u, v) in c.iter().zip(&d) {
            assert!((2.0 * u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_multiplied_encode_decode() {
        let enc = RffMap::from_parts(
            RffSpec { seed: 0, features: 2, in_dim: 1, b: 1.0 },
            array![[1.0], [-0.5]],
            array![0.25, 1.0],
        );
        let dec = RffMap::from_parts(
            RffSpec { seed: 0, features: 2, in_dim: 1, b: 2.0 },
            array![[0.3], [2.0]],
            array![0.0, 0.5],
        );
        let m = GpaeModel {
            rff_enc: enc,
            w_e: array![[0.7], [-1.2]],
            rff_dec: dec,
            w_d: array![[1.5], [0.4]],
            theta_c: array![1.0],
            theta_0: 0.0,
        };
        let x = 0.6f64;
        let lam = (0.7 * (x + 0.25).cos() - 1.2 * (-0.5 * x + 1.0).cos()) * 1.0;
        let got = m.encode(array![x].view()).unwrap()[0];
        assert!((got - lam).abs() < 1e-12);
        let xh = 1.5 * (0.3 * lam / 2.0).cos() + 0.4 * (2.0 * lam / 2.0 + 0.5).cos();
        let got = m.decode(array![lam].view()).unwrap()[0];
        assert!((got - xh).abs() < 1e-12);
    }

    #[test]
    fn linearized_point_matches_direct_calls() {
        let m = GpaeModel::init(3, 0.8, &small_cfg()).unwrap();
        let x = array![0.4, -1.1, 0.2];
        let v = array![0.7, -0.3];
        let p = m.linearize(x.view()).unwrap();
        let lam = m.encode(x.view()).unwrap();
        let vjp = m.encoder_vjp(x.view(), v.view()).unwrap();
        for (a, b) in p.lam.iter().zip(&lam) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in p.vjp(&m, v.view()).unwrap().iter().zip(&vjp) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_cases() {
        let mut m = GpaeModel::init(2, 1.0, &small_cfg()).unwrap();
        assert_eq!(m.classify(array![3.0, -1.0].view()), 0.5);
        m.theta_c = array![2.0, -1.0];
        m.theta_0 = -1.0;
        assert_eq!(m.classify(array![1.0, 1.0].view()), 0.5);
        let mut last = 0.0;
        for k in 0..50 {
            let p = m.classify(array![k as f64, 0.0].view());
            assert!(p >= last);
            last = p;
        }
        assert!(m.classify(array![1e4, 0.0].view()) > 1.0 - 1e-12);
    }

    #[test]
    fn loss_cases() {
        let mut m = GpaeModel::init(2, 1.0, &small_cfg()).unwrap();
        m.w_d.fill(0.0);
        // x̂ = 0, so x - x̂ = x
        let x = array![[3.0, 4.0]];
        let l = m.loss(x.view(), &[1], 1.0).unwrap();
        assert!((l.recon - 25.0).abs() < 1e-12);
        // θ = 0 → ŷ = 0.5
        assert!((l.class - 2f64.ln()).abs() < 1e-12);
        assert!((l.total - (25.0 + 2f64.ln())).abs() < 1e-12);
        let x0 = Array2::<f64>::zeros((4, 2));
        let l = m.loss(x0.view(), &[0, 1, 0, 1], 0.0).unwrap();
        assert_eq!(l.recon, 0.0);
        assert_eq!(l.total, 0.0);
        assert!(m.loss(Array2::<f64>::zeros((0, 2)).view(), &[], 1.0).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let mut m = GpaeModel::init(3, 0.8, &small_cfg()).unwrap();
        m.theta_c = array![0.1, -0.3];
        m.theta_0 = 0.25;
        let file = ModelFile::new(&m, "abc", &small_cfg());
        let json = serde_json::to_string(&file).unwrap();
        assert!(json.contains("\"W_e\""));
        let back: ModelFile = serde_json::from_str(&json).unwrap();
        let m2 = back.into_model().unwrap();
        assert_eq!(m, m2);
        let x = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.0]];
        let l1 = m.loss(x.view(), &[0, 1], 1.0).unwrap();
        let l2 = m2.loss(x.view(), &[0, 1], 1.0).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.stop_patience = 10;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
