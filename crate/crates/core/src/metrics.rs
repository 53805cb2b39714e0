//! Representation metrics on sampled latents.

use ndarray::{Array1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::PatchBatch;
use crate::error::{Error, Result};
use crate::model::{encode, sample_latents_row, Family, ModelParams};

pub const DEFAULT_SAMPLES_PER_DATUM: usize = 8;

/// Floor on the total sum of squares in [`r_squared`].
pub const SST_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub family: Family,
    pub k: usize,
    pub beta: f64,
    pub seed: u64,
    /// Mean activity per latent per draw.
    pub mc: f64,
    /// Fraction of exactly-zero latent activities.
    pub pz: f64,
    pub r2: f64,
    /// Distance of `(r2, pz)` from `(1, 1)` over `sqrt(2)`; lower is better.
    pub overall: f64,
}

/// Grand mean of a nonnegative representation.
pub fn metabolic_cost(h: ArrayView2<'_, f64>) -> Result<f64> {
    if h.is_empty() {
        return Err(Error::InvalidArgument("empty representation".into()));
    }
    if let Some(v) = h.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain { name: "activity", value: *v });
    }
    Ok(h.sum() / h.len() as f64)
}

pub fn proportion_zeros(h: ArrayView2<'_, f64>) -> f64 {
    if h.is_empty() {
        return 0.0;
    }
    h.iter().filter(|v| **v == 0.0).count() as f64 / h.len() as f64
}

/// `1 - SSE / SST` with SST taken around the grand mean of `x`.
pub fn r_squared(x: ArrayView2<'_, f64>, x_hat: ArrayView2<'_, f64>) -> Result<f64> {
    if x.dim() != x_hat.dim() {
        return Err(Error::Shape(format!("x is {:?} but x_hat is {:?}", x.dim(), x_hat.dim())));
    }
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mean = x.sum() / x.len() as f64;
    let sst: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sse: f64 = x.iter().zip(x_hat.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - sse / sst.max(SST_FLOOR))
}

pub fn overall_performance(r2: f64, pz: f64) -> f64 {
    ((1.0 - r2).powi(2) + (1.0 - pz).powi(2)).sqrt() / std::f64::consts::SQRT_2
}

/// Per-datum sums over all of its draws.
#[derive(Default, Clone, Copy)]
struct Tally {
    activity: f64,
    zeros: usize,
    sse: f64,
}

/// Samples `n_samples_per_datum` representations per validation patch,
/// decodes them and pools the metrics over all draws. Datum `i` draws from
/// its own generator stream, so results do not depend on thread count.
pub fn evaluate(
    model: &ModelParams,
    validation: &PatchBatch,
    beta: f64,
    seed: u64,
    n_samples_per_datum: usize,
) -> Result<MetricsRecord> {
    if validation.is_empty() {
        return Err(Error::InvalidArgument("validation set is empty".into()));
    }
    if n_samples_per_datum == 0 {
        return Err(Error::InvalidArgument("need at least one draw per datum".into()));
    }
    let post = encode(model, validation)?;
    let k = model.latent_dim();
    let x = &validation.data;
    let dict = &model.dictionary;

    let tallies: Vec<Tally> = (0..validation.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut h = Array1::zeros(k);
            let mut t = Tally::default();
            for _ in 0..n_samples_per_datum {
                sample_latents_row(&post, i, &mut rng, h.view_mut());
                t.activity += h.sum();
                t.zeros += h.iter().filter(|v| **v == 0.0).count();
                let x_hat = dict.dot(&h);
                t.sse += x.row(i).iter().zip(&x_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            t
        })
        .collect();

    let draws = (validation.len() * n_samples_per_datum) as f64;
    let mut total = Tally::default();
    for t in &tallies {
        total.activity += t.activity;
        total.zeros += t.zeros;
        total.sse += t.sse;
    }
    let mean = x.sum() / x.len() as f64;
    let sst: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let mc = total.activity / (draws * k as f64);
    let pz = total.zeros as f64 / (draws * k as f64);
    let r2 = 1.0 - total.sse / (n_samples_per_datum as f64 * sst.max(SST_FLOOR));
    Ok(MetricsRecord {
        family: model.family(),
        k,
        beta,
        seed,
        mc,
        pz,
        r2,
        overall: overall_performance(r2, pz),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math_dists::rectified_moment;
    use crate::model::Prior;
    use ndarray::{array, Array2};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn small_examples() {
        let h = array![[0.0, 2.0], [4.0, 0.0]];
        assert_eq!(metabolic_cost(h.view()).unwrap(), 1.5);
        assert_eq!(proportion_zeros(h.view()), 0.5);
        assert_eq!(metabolic_cost(Array2::zeros((3, 3)).view()).unwrap(), 0.0);
        assert!(metabolic_cost(array![[1.0, -0.5]].view()).is_err());
    }

    #[test]
    fn r_squared_examples() {
        let x = array![[1.0, 2.0], [3.0, 6.0]];
        assert_eq!(r_squared(x.view(), x.view()).unwrap(), 1.0);
        let mean = Array2::from_elem((2, 2), 3.0);
        assert_eq!(r_squared(x.view(), mean.view()).unwrap(), 0.0);
        let anti = x.mapv(|v| 6.0 - v);
        assert!((r_squared(x.view(), anti.view()).unwrap() + 3.0).abs() < 1e-12);
        assert!(r_squared(x.view(), Array2::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn overall_examples() {
        assert_eq!(overall_performance(1.0, 1.0), 0.0);
        assert!((overall_performance(0.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((overall_performance(1.0, 0.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn relu_of_standard_normal_is_half_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = Array2::from_shape_fn((2000, 50), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z.max(0.0)
        });
        assert!((proportion_zeros(h.view()) - 0.5).abs() < 0.01);
        let analytic = rectified_moment(0.0, 1.0).m;
        assert!((metabolic_cost(h.view()).unwrap() - analytic).abs() < 0.01);
    }

    fn zero_poisson(k: usize, m: usize, log_rate: f64) -> ModelParams {
        ModelParams {
            enc_weights: Array2::zeros((k, m)),
            dictionary: Array2::zeros((m, k)),
            prior: Prior::Poisson { log_rates: Array1::from_elem(k, log_rate) },
        }
    }

    fn batch(n: usize, m: usize, seed: u64) -> PatchBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PatchBatch::from_rows(Array2::from_shape_fn((n, m), |_| StandardNormal.sample(&mut rng)))
    }

    #[test]
    fn untrained_poisson_matches_prior() {
        let model = zero_poisson(10, 4, 0.0);
        let rec = evaluate(&model, &batch(500, 4, 2), 1.0, 7, 8).unwrap();
        assert!((rec.mc - 1.0).abs() < 0.02, "mc {}", rec.mc);
        assert!((rec.pz - (-1.0f64).exp()).abs() < 0.01, "pz {}", rec.pz);
        assert_eq!(rec.k, 10);
        let low = evaluate(&zero_poisson(10, 4, 0.01f64.ln()), &batch(500, 4, 2), 1.0, 7, 8).unwrap();
        assert!((low.pz - (-0.01f64).exp()).abs() < 0.003, "pz {}", low.pz);
    }

    #[test]
    fn evaluation_is_reproducible_and_thread_independent() {
        let model = ModelParams::init(Family::RectifiedGaussian, 6, 9, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let data = batch(64, 9, 4);
        let a = evaluate(&model, &data, 0.5, 11, 4).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| evaluate(&model, &data, 0.5, 11, 4).unwrap());
        assert_eq!(a, b);
        let c = evaluate(&model, &data, 0.5, 12, 4).unwrap();
        assert_ne!(a.mc, c.mc);
    }

    #[test]
    fn perfect_autoencoder_has_unit_r2() {
        // mean head = identity, dictionary = identity, sigma ~ 0 and x > 0.
        let m = 4;
        let mut enc = Array2::zeros((2 * m, m));
        for i in 0..m {
            enc[[i, i]] = 1.0;
        }
        let model = ModelParams {
            enc_weights: enc,
            dictionary: Array2::eye(m),
            prior: Prior::Gaussian { mu: Array1::zeros(m), log_sigma: Array1::from_elem(m, -30.0) },
        };
        let data = PatchBatch::from_rows(batch(20, m, 5).data.mapv(|v| v.abs() + 0.1));
        let rec = evaluate(&model, &data, 1.0, 1, 2).unwrap();
        assert!(1.0 - rec.r2 < 1e-12, "r2 {}", rec.r2);
        assert_eq!(rec.pz, 0.0);
    }
}
