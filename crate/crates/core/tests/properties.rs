use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pvfe_core::data::{save_patches, load_patches, whiten, zscore, PatchBatch, PreprocConfig};
use pvfe_core::math_dists::{
    f_cost, g_cost, kl_gaussian, kl_poisson, rectified_moment, std_normal_cdf, std_normal_pdf,
};
use pvfe_core::metrics::{overall_performance, proportion_zeros};
use pvfe_core::model::{
    free_energy, gradients, load_checkpoint, save_checkpoint, Family, ModelParams,
};
use pvfe_core::trainer::{clip_gradients, lr_at, TrainConfig};

fn rate() -> impl Strategy<Value = f64> {
    (-4.6f64..3.9).prop_map(f64::exp)
}

fn family() -> impl Strategy<Value = Family> {
    prop_oneof![Just(Family::Poisson), Just(Family::RectifiedGaussian)]
}

fn random_setup(family: Family, k: usize, m: usize, b: usize, seed: u64) -> (ModelParams, PatchBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::init(family, k, m, &mut rng).unwrap();
    let data = Array2::from_shape_fn((b, m), |(i, j)| ((i * 7 + j * 3 + seed as usize) % 11) as f64 / 5.0 - 1.0);
    (params, PatchBatch::from_rows(data))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn kl_is_nonnegative(lq in rate(), l0 in rate(), mu in -5.0f64..5.0, mu0 in -5.0f64..5.0, var in rate(), var0 in rate()) {
        prop_assert!(kl_poisson(&[lq], &[l0]).unwrap() >= 0.0);
        prop_assert!(kl_gaussian(&[mu], &[var], &[mu0], &[var0]).unwrap() >= 0.0);
    }
}

proptest! {
    #[test]
    fn kl_vanishes_at_the_prior(l0 in prop::collection::vec(rate(), 1..8), mu in -5.0f64..5.0, var in rate()) {
        prop_assert_eq!(kl_poisson(&l0, &l0).unwrap(), 0.0);
        prop_assert_eq!(kl_gaussian(&[mu], &[var], &[mu], &[var]).unwrap(), 0.0);
    }

    #[test]
    fn cost_functions_are_nonnegative(y in 0.0f64..100.0) {
        prop_assert!(f_cost(y).unwrap().value() >= 0.0);
        if y > 0.0 {
            prop_assert!(g_cost(y).unwrap().value() >= 0.0);
        }
    }

    #[test]
    fn rate_increases_cost_more_than_decreases(u in 1e-3f64..5.0) {
        prop_assert!(f_cost(u.exp()).unwrap().value() > f_cost((-u).exp()).unwrap().value());
    }

    #[test]
    fn second_order_taylor_bounds(u in -0.3f64..0.3) {
        let f = f_cost(u.exp()).unwrap().value();
        let g = g_cost(u.exp()).unwrap().value();
        prop_assert!((f - 0.5 * u * u).abs() <= u.abs().powi(3));
        prop_assert!((g - 0.5 * u * u).abs() <= u.abs().powi(3));
    }

    #[test]
    fn rectified_moments_are_bounded(mu in -10.0f64..10.0, sigma in 0.01f64..10.0) {
        let r = rectified_moment(mu, sigma);
        prop_assert!(r.m >= 0.0 && r.v >= 0.0);
        let z = mu / sigma;
        let abs_mean = sigma * 2.0 * std_normal_pdf(z) + mu * (2.0 * std_normal_cdf(z) - 1.0);
        prop_assert!(r.m <= abs_mean * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn free_energy_decomposes_exactly(fam in family(), k in 1usize..5, m in 1usize..7, b in 1usize..6, seed in any::<u64>(), beta in 0.0f64..10.0) {
        let (params, batch) = random_setup(fam, k, m, b, seed);
        let fe = free_energy(&params, &batch, beta).unwrap();
        prop_assert!(fe.mean_penalty >= 0.0 && fe.variance_penalty >= 0.0 && fe.kl >= 0.0);
        prop_assert_eq!(fe.total, fe.mean_penalty + fe.variance_penalty + beta * fe.kl);
        let more = free_energy(&params, &batch, beta + 1.0).unwrap();
        prop_assert!(more.total >= fe.total);
    }

    #[test]
    fn zero_encoder_has_zero_kl(fam in family(), k in 1usize..5, m in 1usize..7, seed in any::<u64>()) {
        let (params, batch) = random_setup(fam, k, m, 3, seed);
        let fe = free_energy(&params.with_zero_encoder(), &batch, 1.0).unwrap();
        prop_assert_eq!(fe.kl, 0.0);
    }

    #[test]
    fn clipped_norm_never_exceeds_bound(fam in family(), seed in any::<u64>(), max_norm in 1e-3f64..10.0) {
        let (params, batch) = random_setup(fam, 3, 5, 4, seed);
        let g = clip_gradients(gradients(&params, &batch, 1.0).unwrap(), max_norm).unwrap();
        prop_assert!(g.compute_norm() <= max_norm + 1e-9);
        prop_assert!(g.congruent_with(&params));
    }

    #[test]
    fn schedule_is_nonincreasing_after_warmup(epochs in 1usize..200, warmup in 0usize..10, lr in 1e-4f64..1.0) {
        prop_assume!(warmup < epochs);
        let cfg = TrainConfig { epochs, warmup_epochs: warmup, lr, ..TrainConfig::default() };
        if warmup > 0 {
            prop_assert!((lr_at(&cfg, 0).unwrap() - lr / warmup as f64).abs() <= 1e-15);
        }
        prop_assert_eq!(lr_at(&cfg, warmup).unwrap(), lr);
        for e in warmup + 1..cfg.total_epochs() {
            prop_assert!(lr_at(&cfg, e).unwrap() <= lr_at(&cfg, e - 1).unwrap());
        }
    }

    #[test]
    fn zero_fractions_sum_to_one(vals in prop::collection::vec(prop_oneof![Just(0.0f64), 0.0f64..5.0], 1..64)) {
        let n = vals.len();
        let h = Array2::from_shape_vec((1, n), vals).unwrap();
        let pz = proportion_zeros(h.view());
        let nonzero = h.iter().filter(|v| **v != 0.0).count() as f64 / n as f64;
        prop_assert_eq!(pz + nonzero, 1.0);
    }

    #[test]
    fn overall_is_nonincreasing_in_each_argument(r2 in -1.0f64..1.0, pz in 0.0f64..1.0, d in 0.0f64..0.5) {
        let base = overall_performance(r2, pz);
        prop_assert!(overall_performance((r2 + d).min(1.0), pz) <= base + 1e-15);
        prop_assert!(overall_performance(r2, (pz + d).min(1.0)) <= base + 1e-15);
    }

    #[test]
    fn zscore_is_idempotent(seed in any::<u64>(), n in 3usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array2::from_shape_fn((n, 16), |_| rand::Rng::random_range(&mut rng, -3.0..3.0));
        let once = zscore(&PatchBatch::new(data, 4).unwrap()).unwrap();
        let twice = zscore(&once).unwrap();
        for (a, b) in once.data.iter().zip(twice.data.iter()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn whitening_is_linear_with_zero_mean_patches(seed in any::<u64>(), a in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || Array2::from_shape_fn((3, 64), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let (x, y) = (draw(), draw());
        let cfg = PreprocConfig::default();
        let wx = whiten(&PatchBatch::new(x.clone(), 8).unwrap(), &cfg).unwrap();
        let wy = whiten(&PatchBatch::new(y.clone(), 8).unwrap(), &cfg).unwrap();
        let wxy = whiten(&PatchBatch::new(&x * a + &y, 8).unwrap(), &cfg).unwrap();
        for ((p, q), r) in wx.data.iter().zip(wy.data.iter()).zip(wxy.data.iter()) {
            prop_assert!((a * p + q - r).abs() <= 1e-9);
        }
        for row in wx.data.rows() {
            prop_assert!(row.mean().unwrap().abs() <= 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn patch_files_round_trip(vals in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let n = vals.len();
        let data = Array2::from_shape_fn((n, 4), |(i, j)| vals[(i + j) % n] as f64);
        let batch = PatchBatch::new(data, 2).unwrap();
        let path = dir.path().join("p.bin");
        save_patches(&batch, &path).unwrap();
        prop_assert_eq!(load_patches(&path).unwrap(), batch);
    }

    #[test]
    fn checkpoints_round_trip(fam in family(), k in 1usize..6, m in 1usize..9, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(fam, k, m, &mut rng).unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&params, &path).unwrap();
        prop_assert_eq!(load_checkpoint(&path).unwrap(), params);
    }
}
