use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use gpae_core::baselines::{logreg_cf, wachter_cf, LogRegModel, WachterConfig};
use gpae_core::betaselect::{argmin_beta, gram_schmidt_basis, mc_kl, BetaPoint, BoundaryMixture, KlMode};
use gpae_core::cfsearch::{generate, CfQuery, SearchConfig};
use gpae_core::dataio::Mask;
use gpae_core::density::DensityModel;
use gpae_core::gpae::{GpaeModel, TrainConfig};
use gpae_core::metrics::{im_scores, l2_terms, validity};
use gpae_core::rff::sample_map;

fn normal_vec(r: &mut ChaCha8Rng, n: usize, sd: f64) -> Array1<f64> {
    (0..n).map(|_| sd * r.sample::<f64, _>(StandardNormal)).collect()
}

fn toy(seed: u64, input: usize) -> (GpaeModel, DensityModel) {
    let cfg = TrainConfig {
        latent_dim: 2,
        enc_features: 40,
        dec_features: 8,
        seed,
        ..TrainConfig::default()
    };
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut m = GpaeModel::init(input, 1.5, &cfg).unwrap();
    m.w_e.mapv_inplace(|v| 0.3 * v);
    m.theta_c = normal_vec(&mut r, 2, 1.0);
    let x0 = normal_vec(&mut r, input, 1.0);
    m.theta_0 = -m.theta_c.dot(&m.encode(x0.view()).unwrap());
    let mut dm = DensityModel::with_envelope(sample_map(seed + 1, 16, 2, 1.0).unwrap(), Array1::zeros(2), Array1::ones(2), 32).unwrap();
    dm.w = normal_vec(&mut r, 16, 0.2);
    (m, dm)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn masked_coordinates_never_move(seed in 0u64..10_000, bits in proptest::collection::vec(any::<bool>(), 4), beta in 0.0f64..1.0) {
        let (m, dm) = toy(seed, 4);
        let mask = Mask(bits.iter().map(|&b| f64::from(u8::from(b))).collect());
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        let x = normal_vec(&mut r, 4, 1.0);
        let cfg = SearchConfig { max_iters: 300, ..SearchConfig::default() };
        let q = CfQuery::new(x.clone(), mask.clone(), beta, 1, cfg).unwrap();
        let res = generate(&m, &dm, &q, &[]).unwrap();
        let w = wachter_cf(&m, x.view(), &mask, 1, &WachterConfig { max_iters: 300, ..WachterConfig::default() }).unwrap();
        for j in 0..4 {
            if !bits[j] {
                prop_assert_eq!(res.delta[j].to_bits(), 0f64.to_bits());
                prop_assert_eq!(res.x_cf[j].to_bits(), x[j].to_bits());
                prop_assert_eq!(w.x_cf[j].to_bits(), x[j].to_bits());
            }
        }
    }

    #[test]
    fn converged_results_carry_the_target_label(seed in 0u64..10_000) {
        let (m, dm) = toy(seed, 3);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xaa);
        let x = normal_vec(&mut r, 3, 1.0);
        let target = 1 - m.predict_label(x.view()).unwrap();
        let q = CfQuery::new(x, Mask::all_mutable(3), 0.2, target, SearchConfig::default()).unwrap();
        let res = generate(&m, &dm, &q, &[]).unwrap();
        if res.converged {
            prop_assert_eq!(m.predict_label(res.x_cf.view()).unwrap(), target);
            prop_assert!(res.flipped);
        }
    }

    #[test]
    fn unit_step_projection_lands_on_the_boundary(w in proptest::collection::vec(-3.0f64..3.0, 5), b in -2.0f64..2.0, x in proptest::collection::vec(-5.0f64..5.0, 5)) {
        prop_assume!(w.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let m = LogRegModel { w: Array1::from(w), b };
        let xcf = logreg_cf(&m, Array1::from(x).view(), &Mask::all_mutable(5), 1.0).unwrap();
        let scale = 1.0 + m.w.iter().zip(xcf.iter()).map(|(a, c)| (a * c).abs()).sum::<f64>() + b.abs();
        prop_assert!(m.logit(xcf.view()).abs() <= 1e-10 * scale);
    }

    #[test]
    fn basis_is_orthonormal_and_projection_ignores_the_normal(theta in proptest::collection::vec(-2.0f64..2.0, 2..7), t0 in -3.0f64..3.0, t in -5.0f64..5.0, seed in 0u64..1000) {
        let theta = Array1::from(theta);
        prop_assume!(theta.dot(&theta) > 1e-2);
        let d = theta.len();
        let basis = gram_schmidt_basis(theta.view(), t0).unwrap();
        let gram = basis.b.t().dot(&basis.b) - Array2::<f64>::eye(d);
        prop_assert!(gram.iter().all(|v| v.abs() <= 1e-10));
        prop_assert!(basis.a.t().dot(&theta).iter().all(|v| v.abs() <= 1e-10));
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let lam = normal_vec(&mut r, d, 2.0);
        let moved = &lam + &(&theta * t);
        let diff = basis.project(lam.view()) - basis.project(moved.view());
        prop_assert!(diff.iter().all(|v| v.abs() <= 1e-10));
        let on = basis.embed(basis.project(lam.view()).view());
        let again = basis.embed(basis.project(on.view()).view());
        prop_assert!((&on - &again).iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn constant_shift_in_log_p_shifts_kl_and_keeps_argmin(shift in -10.0f64..10.0, seed in 0u64..1000) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let q = BoundaryMixture::new(Array2::from_shape_fn((3, 2), |_| r.sample::<f64, _>(StandardNormal)), 0.5).unwrap();
        let p_center = normal_vec(&mut r, 2, 1.0);
        let log_p = |g: ndarray::ArrayView1<f64>| Ok(-0.5 * (&g - &p_center).mapv(|v| v * v).sum());
        for mode in [KlMode::Standard, KlMode::MeanPoint] {
            let a = mc_kl(&q, log_p, 20, 10, seed, mode).unwrap();
            let b = mc_kl(&q, |g| log_p(g).map(|v| v + shift), 20, 10, seed, mode).unwrap();
            prop_assert!((a.kl - shift - b.kl).abs() <= 1e-9 * (1.0 + a.kl.abs() + shift.abs()));
        }
        let kls = normal_vec(&mut r, 6, 1.0);
        let points = |c: f64| -> Vec<BetaPoint> {
            kls.iter()
                .enumerate()
                .map(|(i, &k)| BetaPoint { beta: 0.1 * (i + 1) as f64, kl: Some(k + c), stderr: Some(0.0), n_converged: 20, sigma_q: Some(0.1) })
                .collect()
        };
        prop_assert_eq!(argmin_beta(&points(0.0)), argmin_beta(&points(-shift)));
    }

    #[test]
    fn im_scores_ignore_row_order(v in proptest::collection::vec(-3.0f64..3.0, 12..30), seed in 0u64..1000) {
        let n = v.len() / 3;
        let x = Array2::from_shape_vec((n, 3), v[..3 * n].to_vec()).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..n).rev() {
            order.swap(i, r.random_range(0..=i));
        }
        let p = x.select(ndarray::Axis(0), &order);
        let f = |v: ndarray::ArrayView2<f64>| -> gpae_core::Result<Array2<f64>> { Ok(v.mapv(|t| 0.5 * t + 0.1)) };
        let g = |v: ndarray::ArrayView2<f64>| -> gpae_core::Result<Array2<f64>> { Ok(v.mapv(|t| t.tanh())) };
        let h = |v: ndarray::ArrayView2<f64>| -> gpae_core::Result<Array2<f64>> { Ok(v.mapv(|t| 0.9 * t)) };
        let (a1, a2) = im_scores(x.view(), f, g, h, 1e-8).unwrap();
        let (b1, b2) = im_scores(p.view(), f, g, h, 1e-8).unwrap();
        prop_assert!((a1 - b1).abs() <= 1e-12 * (1.0 + a1.abs()));
        prop_assert!((a2 - b2).abs() <= 1e-12 * (1.0 + a2.abs()));

        let labels: Vec<u8> = (0..n).map(|i| u8::from(x[[i, 0]] > 0.0)).collect();
        let permuted: Vec<u8> = order.iter().map(|&i| labels[i]).collect();
        prop_assert_eq!(validity(&labels, 1).unwrap(), validity(&permuted, 1).unwrap());
        let xcf = x.mapv(|t| t + 1.0);
        let terms = l2_terms(x.view(), xcf.view(), &[0, 2]).unwrap();
        let pterms = l2_terms(p.view(), xcf.select(ndarray::Axis(0), &order).view(), &[0, 2]).unwrap();
        prop_assert_eq!(order.iter().map(|&i| terms[i]).collect::<Vec<_>>(), pterms);
    }
}
