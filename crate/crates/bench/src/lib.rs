//! Fixtures shared by the benchmarks.

use gpae_core::density::DensityModel;
use gpae_core::gpae::{GpaeModel, TrainConfig};
use gpae_core::rff::sample_map;
use ndarray::{Array1, Array2};

/// Untrained model with a boundary through the encoding of `anchor(input)`.
pub fn model(input: usize, latent: usize, features: usize) -> GpaeModel {
    let cfg = TrainConfig {
        latent_dim: latent,
        enc_features: features,
        dec_features: features,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut m = GpaeModel::init(input, 2.0, &cfg).expect("model");
    m.w_e.mapv_inplace(|v| 0.1 * v);
    m.theta_c = Array1::from_shape_fn(latent, |k| 1.0 - 0.3 * k as f64);
    m.theta_0 = -m.theta_c.dot(&m.encode(anchor(input).view()).expect("encode"));
    m
}

pub fn density(latent: usize, features: usize) -> DensityModel {
    let map = sample_map(2, features, latent, 1.0).expect("map");
    let mut dm = DensityModel::with_envelope(map, Array1::zeros(latent), Array1::ones(latent), 1024).expect("density");
    dm.w = Array1::from_shape_fn(features, |k| 0.05 * ((k % 7) as f64 - 3.0));
    dm
}

pub fn anchor(input: usize) -> Array1<f64> {
    Array1::from_shape_fn(input, |j| 0.4 * (j as f64 + 1.0).sin())
}

pub fn rows(n: usize, input: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, input), |(i, j)| ((i * 31 + j * 17) % 97) as f64 / 48.5 - 1.0)
}
