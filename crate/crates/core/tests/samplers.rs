use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use pvfe_core::data::PatchBatch;
use pvfe_core::math_dists::{poisson_log_pmf, rectified_moment, sample_poisson};
use pvfe_core::metrics::metabolic_cost;
use pvfe_core::model::{encode, sample_latents, Family, ModelParams, PosteriorParams, Prior};

/// Chi-square statistic with the tail pooled into the last bin and bins
/// merged until every expected count is at least 5.
fn chi_square(rate: f64, n: usize, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = sample_poisson(&vec![rate; n], &mut rng).unwrap();
    let max = draws.iter().copied().max().unwrap() as usize;
    let mut observed = vec![0usize; max + 2];
    for d in draws {
        observed[d as usize] += 1;
    }
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc, mut cdf) = (0.0, 0.0, 0.0);
    for (z, &o) in observed.iter().enumerate().take(max + 1) {
        let p = poisson_log_pmf(z as u64, rate).exp();
        cdf += p;
        o_acc += o as f64;
        e_acc += p * n as f64;
        if e_acc >= 5.0 {
            bins.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    let tail = (1.0 - cdf).max(0.0) * n as f64;
    let last = bins.last_mut().unwrap();
    last.0 += o_acc;
    last.1 += e_acc + tail;
    let stat = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    (stat, bins.len() - 1)
}

#[test]
fn poisson_sampler_passes_chi_square() {
    for (i, rate) in [0.5, 2.0, 20.0].into_iter().enumerate() {
        let (stat, dof) = chi_square(rate, 200_000, 11 + i as u64);
        let p = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
        assert!(p > 1e-3, "rate {rate}: chi2 {stat} on {dof} dof, p = {p}");
    }
}

fn model_with_prior(family: Family, k: usize, m: usize, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::init(family, k, m, &mut rng).unwrap();
    p.enc_weights.mapv_inplace(|w| 0.5 * w);
    if let Prior::Gaussian { mu, log_sigma } = &mut p.prior {
        mu.iter_mut().enumerate().for_each(|(i, v)| *v = 0.4 * i as f64 - 1.0);
        log_sigma.iter_mut().enumerate().for_each(|(i, v)| *v = 0.2 * i as f64 - 0.5);
    }
    p
}

fn batch(n: usize, m: usize) -> PatchBatch {
    PatchBatch::from_rows(Array2::from_shape_fn((n, m), |(i, j)| ((i * 5 + j * 3) % 9) as f64 / 4.0 - 1.0))
}

/// Metabolic cost of `reps` independent draws against the analytic mean.
fn mc_z_score(family: Family, reps: usize) -> f64 {
    let (k, m) = (6, 9);
    let params = model_with_prior(family, k, m, 3);
    let x = batch(40, m);
    let post = encode(&params, &x).unwrap();
    let (mean, var): (Vec<f64>, Vec<f64>) = match &post {
        PosteriorParams::Poisson { rates, .. } => rates.iter().map(|&r| (r, r)).unzip(),
        PosteriorParams::Gaussian { mu, sigma, .. } => mu
            .iter()
            .zip(sigma.iter())
            .map(|(&mu, &s)| {
                let r = rectified_moment(mu, s);
                (r.m, r.v)
            })
            .unzip(),
    };
    let cells = mean.len() as f64;
    let expected = mean.iter().sum::<f64>() / cells;
    let se = (var.iter().sum::<f64>() / (cells * cells * reps as f64)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let estimate = (0..reps)
        .map(|_| metabolic_cost(sample_latents(&params, &x, &mut rng).unwrap().view()).unwrap())
        .sum::<f64>()
        / reps as f64;
    (estimate - expected) / se
}

#[test]
fn rectified_gaussian_cost_matches_analytic_mean() {
    let z = mc_z_score(Family::RectifiedGaussian, 64);
    assert!(z.abs() <= 4.0, "z = {z}");
}

#[test]
fn poisson_cost_converges_to_mean_rate() {
    let z = mc_z_score(Family::Poisson, 16);
    assert!(z.abs() <= 4.0, "z = {z}");
}
