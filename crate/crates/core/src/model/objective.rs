//! The closed-form free energy and its exact gradients.
//!
//! Per sample,
//!
//! ```text
//! F = ||x - Phi m||^2 + diag(Phi^T Phi)^T v + beta * KL
//! ```
//!
//! with all terms averaged over the batch. The gradients are the chain rule
//! through the residual parameterization; for the rectified Gaussian the
//! moment derivatives are
//!
//! ```text
//! dm/dmu = Phi(zeta)           dm/dsigma = phi(zeta)
//! dv/dmu = 2 m (1 - Phi(zeta)) dv/dsigma = 2 sigma Phi(zeta) - 2 m phi(zeta)
//! ```

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::{check_batch, dictionary_col_sq_norms, ModelParams, Prior, PARAM_FLOOR};
use crate::data::PatchBatch;
use crate::error::{Error, Result};
use crate::math_dists::{f_unchecked, rectified_moment, std_normal_cdf, std_normal_pdf};

/// Batch-averaged free energy split into its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeEnergyBreakdown {
    pub mean_penalty: f64,
    pub variance_penalty: f64,
    pub kl: f64,
    pub beta: f64,
    pub total: f64,
}

impl FreeEnergyBreakdown {
    pub fn new(mean_penalty: f64, variance_penalty: f64, kl: f64, beta: f64) -> Self {
        FreeEnergyBreakdown {
            mean_penalty,
            variance_penalty,
            kl,
            beta,
            total: mean_penalty + variance_penalty + beta * kl,
        }
    }

    /// Name of the first nonfinite component, if any.
    pub fn nonfinite_component(&self) -> Option<&'static str> {
        [
            ("mean_penalty", self.mean_penalty),
            ("variance_penalty", self.variance_penalty),
            ("kl", self.kl),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

/// Gradient of the batch-averaged total with respect to every parameter
/// tensor, laid out exactly like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub enc_weights: Array2<f64>,
    pub dictionary: Array2<f64>,
    pub prior: Prior,
    pub global_norm: f64,
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let prior = match &params.prior {
            Prior::Poisson { log_rates } => Prior::Poisson {
                log_rates: Array1::zeros(log_rates.len()),
            },
            Prior::Gaussian { mu, log_sigma } => Prior::Gaussian {
                mu: Array1::zeros(mu.len()),
                log_sigma: Array1::zeros(log_sigma.len()),
            },
        };
        GradientSet {
            enc_weights: Array2::zeros(params.enc_weights.raw_dim()),
            dictionary: Array2::zeros(params.dictionary.raw_dim()),
            prior,
            global_norm: 0.0,
        }
    }

    /// Same tensor order as [`ModelParams::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.enc_weights.as_slice().expect("standard layout"),
            self.dictionary.as_slice().expect("standard layout"),
        ];
        match &self.prior {
            Prior::Poisson { log_rates } => out.push(log_rates.as_slice().expect("contiguous")),
            Prior::Gaussian { mu, log_sigma } => {
                out.push(mu.as_slice().expect("contiguous"));
                out.push(log_sigma.as_slice().expect("contiguous"));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.enc_weights.as_slice_mut().expect("standard layout"),
            self.dictionary.as_slice_mut().expect("standard layout"),
        ];
        match &mut self.prior {
            Prior::Poisson { log_rates } => out.push(log_rates.as_slice_mut().expect("contiguous")),
            Prior::Gaussian { mu, log_sigma } => {
                out.push(mu.as_slice_mut().expect("contiguous"));
                out.push(log_sigma.as_slice_mut().expect("contiguous"));
            }
        }
        out
    }

    /// Global L2 norm over all tensors.
    pub fn compute_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn congruent_with(&self, params: &ModelParams) -> bool {
        let a = self.tensors();
        let b = params.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.len() == y.len())
            && self.enc_weights.dim() == params.enc_weights.dim()
            && self.dictionary.dim() == params.dictionary.dim()
    }
}

/// Closed-form free energy of a batch.
pub fn free_energy(params: &ModelParams, batch: &PatchBatch, beta: f64) -> Result<FreeEnergyBreakdown> {
    Ok(evaluate(params, batch.data.view(), beta, false)?.0)
}

/// Exact gradients of `free_energy(..).total`.
pub fn gradients(params: &ModelParams, batch: &PatchBatch, beta: f64) -> Result<GradientSet> {
    Ok(evaluate(params, batch.data.view(), beta, true)?
        .1
        .expect("requested gradients"))
}

/// Both at once, sharing the forward pass.
pub fn free_energy_and_gradients(
    params: &ModelParams,
    batch: &PatchBatch,
    beta: f64,
) -> Result<(FreeEnergyBreakdown, GradientSet)> {
    let (fe, g) = evaluate(params, batch.data.view(), beta, true)?;
    Ok((fe, g.expect("requested gradients")))
}

pub(crate) fn evaluate(
    params: &ModelParams,
    x: ArrayView2<'_, f64>,
    beta: f64,
    want_grad: bool,
) -> Result<(FreeEnergyBreakdown, Option<GradientSet>)> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::Domain { name: "beta", value: beta });
    }
    params.validate()?;
    check_batch(params, x)?;
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    match &params.prior {
        Prior::Poisson { log_rates } => Ok(poisson(params, log_rates, x, beta, want_grad)),
        Prior::Gaussian { mu, log_sigma } => Ok(gaussian(params, mu, log_sigma, x, beta, want_grad)),
    }
}

struct Recon {
    resid: Array2<f64>,
    col_sq: Array1<f64>,
    mean_penalty: f64,
    variance_penalty: f64,
}

fn recon(x: ArrayView2<'_, f64>, dict: &Array2<f64>, m: &Array2<f64>, v: &Array2<f64>) -> Recon {
    let b = x.nrows() as f64;
    let resid = &x - &m.dot(&dict.t());
    let col_sq = dictionary_col_sq_norms(dict.view());
    let mean_penalty = resid.iter().map(|r| r * r).sum::<f64>() / b;
    let variance_penalty = v.dot(&col_sq).sum() / b;
    Recon {
        resid,
        col_sq,
        mean_penalty,
        variance_penalty,
    }
}

/// `dPhi = (-2 R^T m + 2 Phi diag(sum_b v)) / B`.
fn dictionary_grad(dict: &Array2<f64>, r: &Recon, m: &Array2<f64>, v: &Array2<f64>, b: f64) -> Array2<f64> {
    let v_sum = v.sum_axis(Axis(0));
    let mut g = r.resid.t().dot(m);
    g *= -2.0 / b;
    Zip::from(g.rows_mut()).and(dict.rows()).for_each(|mut g_row, d_row| {
        Zip::from(&mut g_row)
            .and(&d_row)
            .and(&v_sum)
            .for_each(|g, &d, &vs| *g += 2.0 * d * vs / b);
    });
    g
}

fn poisson(
    params: &ModelParams,
    log_rates: &Array1<f64>,
    x: ArrayView2<'_, f64>,
    beta: f64,
    want_grad: bool,
) -> (FreeEnergyBreakdown, Option<GradientSet>) {
    let b = x.nrows() as f64;
    let dict = &params.dictionary;
    let u = x.dot(&params.enc_weights.t());
    let prior_rates = log_rates.mapv(f64::exp);
    let mut rates = &u + &log_rates.view().insert_axis(Axis(0));
    rates.mapv_inplace(|a| a.exp().max(PARAM_FLOOR));

    let r = recon(x, dict, &rates, &rates);

    let mut kl = 0.0;
    for row in rates.rows() {
        for (&lam, &l0) in row.iter().zip(&prior_rates) {
            kl += l0 * f_unchecked(lam / l0);
        }
    }
    kl /= b;
    let fe = FreeEnergyBreakdown::new(r.mean_penalty, r.variance_penalty, kl, beta);
    if !want_grad {
        return (fe, None);
    }

    // dF/dlambda = -2 Phi^T r + diag(Phi^T Phi) + beta ln(lambda / lambda0)
    let mut g_rates = r.resid.dot(dict);
    g_rates *= -2.0;
    Zip::from(g_rates.rows_mut()).and(rates.rows()).for_each(|mut g_row, lam_row| {
        Zip::from(&mut g_row)
            .and(&lam_row)
            .and(&r.col_sq)
            .and(log_rates)
            .for_each(|g, &lam, &d, &a| *g += d + beta * (lam.ln() - a));
    });
    // dF/du = dF/dlambda * lambda
    let g_u = &g_rates * &rates;

    let mut g_prior = g_u.sum_axis(Axis(0));
    let rate_sum = rates.sum_axis(Axis(0));
    Zip::from(&mut g_prior)
        .and(&prior_rates)
        .and(&rate_sum)
        .for_each(|g, &l0, &ls| *g = (*g + beta * (b * l0 - ls)) / b);

    let mut g_enc = g_u.t().dot(&x);
    g_enc /= b;
    let g_dict = dictionary_grad(dict, &r, &rates, &rates, b);

    let mut grads = GradientSet {
        enc_weights: g_enc,
        dictionary: g_dict,
        prior: Prior::Poisson { log_rates: g_prior },
        global_norm: 0.0,
    };
    grads.global_norm = grads.compute_norm();
    (fe, Some(grads))
}

fn gaussian(
    params: &ModelParams,
    mu0: &Array1<f64>,
    log_sigma0: &Array1<f64>,
    x: ArrayView2<'_, f64>,
    beta: f64,
    want_grad: bool,
) -> (FreeEnergyBreakdown, Option<GradientSet>) {
    let b = x.nrows() as f64;
    let k = params.latent_dim();
    let dict = &params.dictionary;
    let out = x.dot(&params.enc_weights.t());
    let delta_mu = out.slice(ndarray::s![.., ..k]);
    let delta_v = out.slice(ndarray::s![.., k..]);
    let inv_var0 = log_sigma0.mapv(|s| (-2.0 * s).exp());

    let shape = (x.nrows(), k);
    let mut mu = Array2::zeros(shape);
    let mut sigma = Array2::zeros(shape);
    let mut m = Array2::zeros(shape);
    let mut v = Array2::zeros(shape);
    let mut kl = 0.0;
    for i in 0..x.nrows() {
        for j in 0..k {
            let dm = delta_mu[[i, j]];
            let dv = delta_v[[i, j]];
            let mu_ij = mu0[j] + dm;
            let s_ij = (log_sigma0[j] + dv).exp().max(PARAM_FLOOR);
            let mom = rectified_moment(mu_ij, s_ij);
            mu[[i, j]] = mu_ij;
            sigma[[i, j]] = s_ij;
            m[[i, j]] = mom.m;
            v[[i, j]] = mom.v;
            // g(e^{2 dv}) = expm1(2 dv) - 2 dv
            kl += dm * dm * inv_var0[j] + ((2.0 * dv).exp_m1() - 2.0 * dv);
        }
    }
    kl *= 0.5 / b;

    let r = recon(x, dict, &m, &v);
    let fe = FreeEnergyBreakdown::new(r.mean_penalty, r.variance_penalty, kl, beta);
    if !want_grad {
        return (fe, None);
    }

    let g_m = r.resid.dot(dict) * -2.0;
    let mut g_out = Array2::zeros((x.nrows(), 2 * k));
    let mut g_mu0 = Array1::zeros(k);
    let mut g_ls0 = Array1::zeros(k);
    for i in 0..x.nrows() {
        for j in 0..k {
            let (mu_ij, s_ij) = (mu[[i, j]], sigma[[i, j]]);
            let zeta = mu_ij / s_ij;
            let cdf = std_normal_cdf(zeta);
            let pdf = std_normal_pdf(zeta);
            let (gm, gv) = (g_m[[i, j]], r.col_sq[j]);
            let mm = m[[i, j]];
            let d_mu = gm * cdf + gv * 2.0 * mm * (1.0 - cdf);
            let d_sigma = gm * pdf + gv * (2.0 * s_ij * cdf - 2.0 * mm * pdf);
            // sigma = exp(log_sigma0 + dv): dsigma/d(.) = sigma
            let d_logs = d_sigma * s_ij;
            let dm = delta_mu[[i, j]];
            let dv = delta_v[[i, j]];
            g_out[[i, j]] = d_mu + beta * dm * inv_var0[j];
            g_out[[i, k + j]] = d_logs + beta * (2.0 * dv).exp_m1();
            g_mu0[j] += d_mu;
            g_ls0[j] += d_logs - beta * dm * dm * inv_var0[j];
        }
    }
    g_mu0 /= b;
    g_ls0 /= b;
    let mut g_enc = g_out.t().dot(&x);
    g_enc /= b;
    let g_dict = dictionary_grad(dict, &r, &m, &v, b);

    let mut grads = GradientSet {
        enc_weights: g_enc,
        dictionary: g_dict,
        prior: Prior::Gaussian {
            mu: g_mu0,
            log_sigma: g_ls0,
        },
        global_norm: 0.0,
    };
    grads.global_norm = grads.compute_norm();
    (fe, Some(grads))
}
