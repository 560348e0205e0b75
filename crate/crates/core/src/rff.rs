//! Random Fourier feature maps for the RBF kernel.
//!
//! `φ(x)_s = √(2/S) · cos(z_s·x / b + c_s)` with `z_s ~ N(0, I)` and
//! `c_s ~ U[0, 2π)`. Inner products `φ(x)·φ(x')` converge to
//! `exp(-‖x - x'‖² / (2b²))` as `S` grows. Frequencies and phases are drawn
//! from a ChaCha stream keyed by the seed, so only `(seed, S, in_dim, b)` is
//! ever persisted.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::seed;

/// Persisted form of an [`RffMap`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RffSpec {
    pub seed: u64,
    #[serde(rename = "S")]
    pub features: usize,
    pub in_dim: usize,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "RffSpec", try_from = "RffSpec")]
pub struct RffMap {
    spec: RffSpec,
    /// `S × in_dim` frequencies.
    z: Array2<f64>,
    /// `S` phases.
    c: Array1<f64>,
    scale: f64,
}

impl From<RffMap> for RffSpec {
    fn from(m: RffMap) -> Self {
        m.spec
    }
}

impl TryFrom<RffSpec> for RffMap {
    type Error = Error;

    fn try_from(spec: RffSpec) -> Result<Self> {
        sample_map(spec.seed, spec.features, spec.in_dim, spec.b)
    }
}

pub fn sample_map(seed: u64, features: usize, in_dim: usize, b: f64) -> Result<RffMap> {
    if features == 0 || in_dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "rff map needs S >= 1 and in_dim >= 1 (got S={features}, in_dim={in_dim})"
        )));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidArgument(format!("rff bandwidth must be > 0, got {b}")));
    }
    let mut rng = seed::rng(seed);
    let z = Array2::from_shape_simple_fn((features, in_dim), || rng.sample(StandardNormal));
    let c = Array1::from_shape_simple_fn(features, || rng.random_range(0.0..2.0 * PI));
    Ok(RffMap::from_parts(
        RffSpec {
            seed,
            features,
            in_dim,
            b,
        },
        z,
        c,
    ))
}

impl RffMap {
    /// Builds a map from explicit frequencies and phases. The recorded seed is
    /// kept for bookkeeping only; such maps do not round-trip through serde.
    pub fn from_parts(spec: RffSpec, z: Array2<f64>, c: Array1<f64>) -> Self {
        assert_eq!(z.dim(), (spec.features, spec.in_dim));
        assert_eq!(c.len(), spec.features);
        let scale = (2.0 / spec.features as f64).sqrt();
        RffMap { spec, z, c, scale }
    }

    pub fn spec(&self) -> RffSpec {
        self.spec
    }

    pub fn features(&self) -> usize {
        self.spec.features
    }

    pub fn in_dim(&self) -> usize {
        self.spec.in_dim
    }

    pub fn bandwidth(&self) -> f64 {
        self.spec.b
    }

    pub fn z(&self) -> ArrayView2<'_, f64> {
        self.z.view()
    }

    pub fn c(&self) -> ArrayView1<'_, f64> {
        self.c.view()
    }

    /// `√(2/S)`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn phase(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut a = self.z.dot(&x) / self.spec.b;
        a += &self.c;
        a
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim(self.spec.in_dim, x.len())?;
        let s = self.scale;
        Ok(self.phase(x).mapv_into(|a| s * a.cos()))
    }

    /// Pre-activation phases for a batch: `X Zᵀ / b + c`, shape `n × S`.
    pub fn phase_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim(self.spec.in_dim, x.ncols())?;
        let mut a = x.dot(&self.z.t());
        let inv_b = 1.0 / self.spec.b;
        for mut row in a.rows_mut() {
            Zip::from(&mut row).and(&self.c).for_each(|v, &c| *v = *v * inv_b + c);
        }
        Ok(a)
    }

    /// Feature matrix for a batch, shape `n × S`.
    pub fn apply_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut a = self.phase_batch(x)?;
        let s = self.scale;
        a.mapv_inplace(|v| s * v.cos());
        Ok(a)
    }

    /// `S × in_dim` matrix with row `s` equal to `-(√(2/S)/b) sin(z_s·x/b + c_s) z_s`.
    pub fn jacobian(&self, x: ArrayView1<f64>) -> Result<Array2<f64>> {
        check_dim(self.spec.in_dim, x.len())?;
        let coef = self.sin_coefficients(x);
        let mut j = self.z.to_owned();
        for (mut row, &k) in j.axis_iter_mut(Axis(0)).zip(&coef) {
            row *= k;
        }
        Ok(j)
    }

    /// Vector-Jacobian product `Jᵀ u` without materializing `J`.
    pub fn vjp(&self, x: ArrayView1<f64>, u: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim(self.spec.in_dim, x.len())?;
        check_dim(self.spec.features, u.len())?;
        let mut coef = self.sin_coefficients(x);
        coef *= &u;
        Ok(self.z.t().dot(&coef))
    }

    /// Features and VJP coefficients from a single pass over the phases.
    pub fn linearize(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        check_dim(self.spec.in_dim, x.len())?;
        let a = self.phase(x);
        let k = -self.scale / self.spec.b;
        let mut phi = Array1::zeros(a.len());
        let mut coef = Array1::zeros(a.len());
        for i in 0..a.len() {
            let (s, c) = a[i].sin_cos();
            phi[i] = self.scale * c;
            coef[i] = k * s;
        }
        Ok((phi, coef))
    }

    /// `Jᵀ u` given coefficients from [`RffMap::linearize`].
    pub fn vjp_from(&self, coef: &Array1<f64>, u: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim(self.spec.features, u.len())?;
        Ok(self.z.t().dot(&(coef * &u)))
    }

    fn sin_coefficients(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let k = -self.scale / self.spec.b;
        self.phase(x).mapv_into(|a| k * a.sin())
    }
}

/// Median Euclidean distance over pairs drawn from the first `max_points`
/// rows. Used as an optional bandwidth heuristic for the input-space map.
pub fn median_pairwise_distance(x: ArrayView2<f64>, max_points: usize) -> f64 {
    let n = x.nrows().min(max_points);
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let diff = &x.row(i) - &x.row(j);
            d.push(diff.dot(&diff).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len() / 2;
    if d.len() % 2 == 1 {
        d[m]
    } else {
        0.5 * (d[m - 1] + d[m])
    }
}
