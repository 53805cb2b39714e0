use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1, ArrayViewMut1};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{encode, Family, ModelParams, PosteriorParams, Prior};
use crate::data::PatchBatch;
use crate::error::{Error, Result};
use crate::math_dists::{g_unchecked, normal_log_pdf, poisson_draw};

/// Draws the decoder input `h` for every sample: Poisson counts, or
/// `relu(z)` for the Gaussian family.
pub fn sample_latents<R: Rng + ?Sized>(params: &ModelParams, batch: &PatchBatch, rng: &mut R) -> Result<Array2<f64>> {
    let post = encode(params, batch)?;
    let mut h = Array2::zeros((batch.len(), params.latent_dim()));
    for (i, row) in h.rows_mut().into_iter().enumerate() {
        sample_latents_row(&post, i, rng, row);
    }
    Ok(h)
}

/// Fills `out` with one draw of `h` for row `row` of an encoded batch.
pub fn sample_latents_row<R: Rng + ?Sized>(
    post: &PosteriorParams,
    row: usize,
    rng: &mut R,
    mut out: ArrayViewMut1<'_, f64>,
) {
    match post {
        PosteriorParams::Poisson { rates, .. } => {
            for (h, &lam) in out.iter_mut().zip(rates.row(row)) {
                *h = poisson_draw(lam, rng) as f64;
            }
        }
        PosteriorParams::Gaussian { mu, sigma, .. } => {
            for ((h, &m), &s) in out.iter_mut().zip(mu.row(row)).zip(sigma.row(row)) {
                let eps: f64 = rng.sample(StandardNormal);
                *h = (m + s * eps).max(0.0);
            }
        }
    }
}

/// Monte Carlo comparison of the two ways of writing the ELBO.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboCarving {
    /// `E_q[ln p(x|z)] - KL(q || p)` (reconstruction minus coding rate).
    pub lhs: f64,
    /// `E_q[ln p(x, z)] + H[q]` (negative energy plus entropy).
    pub rhs: f64,
    /// Standard error of `lhs - rhs`.
    pub mc_se: f64,
    /// Closed-form KL averaged over the batch.
    pub kl: f64,
}

/// Estimates both ELBO carvings from the same posterior draws. Sample `i`
/// conditions on datum `i mod B`. The Gaussian likelihood has
/// `2 sigma_dec^2 = 1`, so `-ln p(x|z) = ||x - Phi h||^2 + (M/2) ln pi`.
pub fn elbo_decomposition_check<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &PatchBatch,
    n_samples: usize,
    rng: &mut R,
) -> Result<ElboCarving> {
    if params.family() != Family::RectifiedGaussian {
        return Err(Error::Unsupported(
            "ELBO carving check needs a closed-form entropy (Gaussian family only)".into(),
        ));
    }
    if n_samples < 10_000 {
        return Err(Error::InvalidArgument(format!("n_samples = {n_samples} < 10000")));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let Prior::Gaussian { mu: mu0, log_sigma } = &params.prior else {
        unreachable!("family checked above")
    };
    let var0 = log_sigma.mapv(|s| (2.0 * s).exp());
    let PosteriorParams::Gaussian { mu, sigma, .. } = encode(params, batch)? else {
        unreachable!("family checked above")
    };
    let m_pixels = params.input_dim() as f64;
    let log_norm = 0.5 * m_pixels * PI.ln();
    let b = batch.len();

    let mut kl_rows = Vec::with_capacity(b);
    let mut entropy_rows = Vec::with_capacity(b);
    for i in 0..b {
        let (mut kl, mut ent) = (0.0, 0.0);
        for j in 0..mu.ncols() {
            let s2 = sigma[[i, j]] * sigma[[i, j]];
            let dm = mu[[i, j]] - mu0[j];
            kl += 0.5 * (dm * dm / var0[j] + g_unchecked(s2 / var0[j]));
            ent += 0.5 * (2.0 * PI * std::f64::consts::E * s2).ln();
        }
        kl_rows.push(kl);
        entropy_rows.push(ent);
    }

    let mut z = vec![0.0; params.latent_dim()];
    let mut h = ndarray::Array1::zeros(params.latent_dim());
    let (mut lhs_sum, mut rhs_sum) = (0.0, 0.0);
    let (mut d_sum, mut d_sq) = (0.0, 0.0);
    for n in 0..n_samples {
        let i = n % b;
        let mut log_prior = 0.0;
        for j in 0..z.len() {
            let eps: f64 = rng.sample(StandardNormal);
            z[j] = mu[[i, j]] + sigma[[i, j]] * eps;
            h[j] = z[j].max(0.0);
            log_prior += normal_log_pdf(z[j], mu0[j], var0[j]);
        }
        let log_lik = -sq_error(batch.row(i), &params.dictionary, h.view()) - log_norm;
        let lhs = log_lik - kl_rows[i];
        let rhs = log_lik + log_prior + entropy_rows[i];
        lhs_sum += lhs;
        rhs_sum += rhs;
        let d = lhs - rhs;
        d_sum += d;
        d_sq += d * d;
    }
    let n = n_samples as f64;
    let d_mean = d_sum / n;
    let d_var = (d_sq / n - d_mean * d_mean).max(0.0) * n / (n - 1.0);
    Ok(ElboCarving {
        lhs: lhs_sum / n,
        rhs: rhs_sum / n,
        mc_se: (d_var / n).sqrt(),
        kl: kl_rows.iter().sum::<f64>() / b as f64,
    })
}

fn sq_error(x: ArrayView1<'_, f64>, dict: &Array2<f64>, h: ArrayView1<'_, f64>) -> f64 {
    let xhat = dict.dot(&h);
    x.iter().zip(&xhat).map(|(a, b)| (a - b) * (a - b)).sum()
}
