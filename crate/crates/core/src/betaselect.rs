//! Choosing the density weight `β`.
//!
//! Boundary counterfactual latents are projected into coordinates `γ` on the
//! affine decision boundary. A Gaussian mixture over those projections is
//! compared with the latent density restricted to the boundary by a Monte
//! Carlo KL estimate, and the grid value with the smallest KL wins.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cfsearch::{search_batch, CfQuery, SearchConfig};
use crate::dataio::Mask;
use crate::density::DensityModel;
use crate::error::{check_dim, Error, Result};
use crate::gpae::GpaeModel;
use crate::rff::median_pairwise_distance;
use crate::seed::{derive_seed, rng};

const GS_SKIP: f64 = 1e-8;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Orthonormal basis whose first column is the boundary normal.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    /// `d × d`, columns orthonormal.
    pub b: Array2<f64>,
    /// Columns `2..d` of `b`, spanning the boundary directions.
    pub a: Array2<f64>,
    /// Point on the boundary closest to the origin.
    pub offset: Array1<f64>,
}

pub fn gram_schmidt_basis(theta_c: ArrayView1<f64>, theta_0: f64) -> Result<ProjectionBasis> {
    let d = theta_c.len();
    let nn = theta_c.dot(&theta_c);
    if nn == 0.0 || !nn.is_finite() {
        return Err(Error::InvalidArgument("boundary normal must be nonzero and finite".into()));
    }
    let mut cols: Vec<Array1<f64>> = vec![&theta_c / nn.sqrt()];
    for k in 0..d {
        if cols.len() == d {
            break;
        }
        let mut v = Array1::zeros(d);
        v[k] = 1.0;
        for c in &cols {
            let p = c.dot(&v);
            v.scaled_add(-p, c);
        }
        let norm = v.dot(&v).sqrt();
        if norm < GS_SKIP {
            continue;
        }
        cols.push(v / norm);
    }
    let mut b = Array2::zeros((d, d));
    for (j, c) in cols.iter().enumerate() {
        b.column_mut(j).assign(c);
    }
    let a = b.slice(s![.., 1..]).to_owned();
    let offset = &theta_c * (-theta_0 / nn);
    Ok(ProjectionBasis { b, a, offset })
}

impl ProjectionBasis {
    pub fn boundary_dim(&self) -> usize {
        self.a.ncols()
    }

    /// `γ = Aᵀ(λ − offset)`.
    pub fn project(&self, lam: ArrayView1<f64>) -> Array1<f64> {
        self.a.t().dot(&(&lam - &self.offset))
    }

    /// `A γ + offset`.
    pub fn embed(&self, gamma: ArrayView1<f64>) -> Array1<f64> {
        self.a.dot(&gamma) + &self.offset
    }

    pub fn project_rows(&self, lam: ArrayView2<f64>) -> Array2<f64> {
        let centered = &lam - &self.offset.view().insert_axis(Axis(0));
        centered.dot(&self.a)
    }
}

pub fn project_to_boundary(basis: &ProjectionBasis, lam: ArrayView1<f64>) -> Array1<f64> {
    basis.project(lam)
}

/// Equal-weight isotropic Gaussian mixture on boundary coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMixture {
    pub centers: Array2<f64>,
    pub sigma_q: f64,
}

impl BoundaryMixture {
    pub fn new(centers: Array2<f64>, sigma_q: f64) -> Result<Self> {
        if centers.nrows() == 0 {
            return Err(Error::Insufficient("mixture needs at least one center".into()));
        }
        if !(sigma_q > 0.0 && sigma_q.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma_q must be positive, got {sigma_q}")));
        }
        Ok(BoundaryMixture { centers, sigma_q })
    }

    pub fn from_latents(latents: ArrayView2<f64>, basis: &ProjectionBasis, sigma_q: f64) -> Result<Self> {
        Self::new(basis.project_rows(latents), sigma_q)
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn log_pdf(&self, gamma: ArrayView1<f64>) -> Result<f64> {
        check_dim(self.dim(), gamma.len())?;
        let var = self.sigma_q * self.sigma_q;
        let norm = -0.5 * self.dim() as f64 * (LN_2PI + var.ln());
        let terms: Array1<f64> = self
            .centers
            .rows()
            .into_iter()
            .map(|c| {
                let diff = &gamma - &c;
                norm - diff.dot(&diff) / (2.0 * var)
            })
            .collect();
        Ok(crate::density::log_mean_exp(terms.view()))
    }

    pub fn sample<R: Rng>(&self, n: usize, r: &mut R) -> Array2<f64> {
        let k = self.centers.nrows();
        let mut out = Array2::zeros((n, self.dim()));
        for mut row in out.rows_mut() {
            let c = self.centers.row(r.random_range(0..k));
            for j in 0..row.len() {
                let z: f64 = r.sample(StandardNormal);
                row[j] = c[j] + self.sigma_q * z;
            }
        }
        out
    }
}

/// Log of the mixture density at `γ`, centers taken from `cf_latents`.
pub fn log_q_boundary(gamma: ArrayView1<f64>, cf_latents: ArrayView2<f64>, basis: &ProjectionBasis, sigma_q: f64) -> Result<f64> {
    BoundaryMixture::from_latents(cf_latents, basis, sigma_q)?.log_pdf(gamma)
}

/// Unnormalized latent log-density at the boundary point `A γ + offset`.
pub fn log_p_boundary_unnorm(gamma: ArrayView1<f64>, dm: &DensityModel, basis: &ProjectionBasis) -> Result<f64> {
    dm.log_density_unnorm(basis.embed(gamma).view())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlMode {
    /// Every sample contributes its own `ln q − ln p`.
    #[default]
    Standard,
    /// Each step averages its samples first and evaluates `ln q − ln p` once.
    MeanPoint,
}

impl FromStr for KlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(KlMode::Standard),
            "mean-point" => Ok(KlMode::MeanPoint),
            other => Err(Error::InvalidArgument(format!("unknown KL mode '{other}'"))),
        }
    }
}

impl fmt::Display for KlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KlMode::Standard => "standard",
            KlMode::MeanPoint => "mean-point",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    pub kl: f64,
    /// Standard error over the `L` per-step values.
    pub stderr: f64,
}

/// Monte Carlo `KL(q ‖ p)` with samples from `q`, `L` steps of `N` draws.
/// `log_p` may be unnormalized, which shifts the estimate by a constant.
pub fn mc_kl<P>(q: &BoundaryMixture, log_p: P, steps: usize, per_step: usize, seed: u64, mode: KlMode) -> Result<KlEstimate>
where
    P: Fn(ArrayView1<f64>) -> Result<f64>,
{
    if steps < 2 || per_step == 0 {
        return Err(Error::InvalidArgument(format!(
            "mc_kl needs L >= 2 and N >= 1, got L={steps}, N={per_step}"
        )));
    }
    let mut r = rng(seed);
    let mut vals = Vec::with_capacity(steps);
    for _ in 0..steps {
        let g = q.sample(per_step, &mut r);
        let v = match mode {
            KlMode::Standard => {
                let mut acc = 0.0;
                for row in g.rows() {
                    acc += q.log_pdf(row)? - log_p(row)?;
                }
                acc / per_step as f64
            }
            KlMode::MeanPoint => {
                let mean = g.mean_axis(Axis(0)).expect("per_step >= 1");
                q.log_pdf(mean.view())? - log_p(mean.view())?
            }
        };
        vals.push(v);
    }
    let (kl, stderr) = mean_stderr(&vals);
    if !kl.is_finite() {
        return Err(Error::NonFinite("KL estimate".into()));
    }
    Ok(KlEstimate { kl, stderr })
}

pub(crate) fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BetaConfig {
    pub grid: Vec<f64>,
    /// Monte Carlo steps `L`.
    pub mc_steps: usize,
    /// Rejected-class queries searched per grid value.
    pub n_queries: usize,
    /// `σ_q` as a multiple of the median pairwise distance of the centers.
    pub sigma_scale: f64,
    pub min_converged: usize,
    pub mode: KlMode,
    pub seed: u64,
}

impl Default for BetaConfig {
    fn default() -> Self {
        BetaConfig {
            grid: (1..=10).map(|k| k as f64 / 10.0).collect(),
            mc_steps: 200,
            n_queries: 200,
            sigma_scale: 0.1,
            min_converged: 10,
            mode: KlMode::Standard,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaPoint {
    pub beta: f64,
    /// `None` when too few queries converged.
    pub kl: Option<f64>,
    pub stderr: Option<f64>,
    pub n_converged: usize,
    pub sigma_q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSelection {
    pub points: Vec<BetaPoint>,
    pub beta_star: f64,
    pub mode: KlMode,
}

/// Smallest KL wins; ties go to the smaller `β`, then the earlier entry.
pub fn argmin_beta(points: &[BetaPoint]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for p in points {
        let Some(kl) = p.kl else { continue };
        let better = match best {
            None => true,
            Some((bk, bb)) => kl < bk || (kl == bk && p.beta < bb),
        };
        if better {
            best = Some((kl, p.beta));
        }
    }
    best.map(|(_, b)| b)
}

/// Runs the grid. `candidates` are standardized rows; the first
/// `n_queries` whose predicted label is 0 are searched toward class 1.
pub fn select_beta(
    model: &GpaeModel,
    dm: &DensityModel,
    candidates: ArrayView2<f64>,
    mask: &Mask,
    search: &SearchConfig,
    cfg: &BetaConfig,
) -> Result<BetaSelection> {
    if cfg.grid.is_empty() {
        return Err(Error::InvalidArgument("beta grid is empty".into()));
    }
    if model.latent_dim() < 2 {
        return Err(Error::InvalidArgument("beta selection needs latent_dim >= 2".into()));
    }
    let basis = gram_schmidt_basis(model.theta_c.view(), model.theta_0)?;
    let labels = model.predict_labels(candidates)?;
    let rows: Vec<Array1<f64>> = candidates
        .rows()
        .into_iter()
        .zip(&labels)
        .filter(|(_, &l)| l == 0)
        .take(cfg.n_queries)
        .map(|(r, _)| r.to_owned())
        .collect();

    let mut points = Vec::with_capacity(cfg.grid.len());
    for &beta in &cfg.grid {
        let queries = rows
            .iter()
            .map(|x| CfQuery::new(x.clone(), mask.clone(), beta, 1, search.clone()))
            .collect::<Result<Vec<_>>>()?;
        let results = search_batch(model, dm, &queries)?;
        let conv: Vec<&Array1<f64>> = results.iter().filter(|r| r.converged).map(|r| &r.lam_cf).collect();
        let mut point = BetaPoint {
            beta,
            kl: None,
            stderr: None,
            n_converged: conv.len(),
            sigma_q: None,
        };
        if conv.len() >= cfg.min_converged.max(2) {
            let mut lat = Array2::zeros((conv.len(), model.latent_dim()));
            for (mut row, l) in lat.rows_mut().into_iter().zip(&conv) {
                row.assign(l);
            }
            let centers = basis.project_rows(lat.view());
            let sigma_q = cfg.sigma_scale * median_pairwise_distance(centers.view(), usize::MAX);
            if sigma_q > 0.0 {
                let q = BoundaryMixture::new(centers, sigma_q)?;
                // same seed for every β: common random numbers across the grid
                let est = mc_kl(
                    &q,
                    |g| log_p_boundary_unnorm(g, dm, &basis),
                    cfg.mc_steps,
                    conv.len(),
                    derive_seed(cfg.seed, "mc_kl", 0),
                    cfg.mode,
                )?;
                point.kl = Some(est.kl);
                point.stderr = Some(est.stderr);
                point.sigma_q = Some(sigma_q);
            }
        }
        log::info!("beta {beta}: n_converged {} kl {:?}", point.n_converged, point.kl);
        points.push(point);
    }
    let beta_star = argmin_beta(&points)
        .ok_or_else(|| Error::Insufficient("no grid value had enough converged queries".into()))?;
    Ok(BetaSelection {
        points,
        beta_star,
        mode: cfg.mode,
    })
}

impl BetaSelection {
    /// Columns `beta, kl, stderr, n_converged`; missing estimates are empty.
    pub fn write_curve_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["beta", "kl", "stderr", "n_converged"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for p in &self.points {
            w.write_record([format!("{}", p.beta), opt(p.kl), opt(p.stderr), p.n_converged.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }
}
