//! Linear-encoder / linear-decoder VAEs with Poisson or rectified-Gaussian
//! latents, trained on a fully closed-form free energy.
//!
//! The encoder emits residuals relative to a learnable prior:
//!
//! * Poisson: `u = W x`, `lambda = lambda0 * exp(u)`.
//! * Gaussian: `[dmu; dv] = W x`, `mu = mu0 + dmu`, `sigma = sigma0 * exp(dv)`.
//!
//! The decoder reconstructs `x_hat = Phi h` with `h = z` (Poisson) or
//! `h = relu(z)` (Gaussian). Because the decoder is linear, the expected
//! squared error only needs the first two moments of `h`.

mod checkpoint;
mod objective;
mod sampling;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use objective::{free_energy, free_energy_and_gradients, gradients, FreeEnergyBreakdown, GradientSet};
pub use sampling::{elbo_decomposition_check, sample_latents, sample_latents_row, ElboCarving};

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::data::PatchBatch;
use crate::error::{Error, Result};
use crate::math_dists::rectified_moment;

/// Rates and scales are floored here inside the loss.
pub const PARAM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Poisson,
    RectifiedGaussian,
}

impl Family {
    pub fn tag(self) -> u8 {
        match self {
            Family::Poisson => 0,
            Family::RectifiedGaussian => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Family> {
        match tag {
            0 => Some(Family::Poisson),
            1 => Some(Family::RectifiedGaussian),
            _ => None,
        }
    }

    /// Short name used on the command line and in result files.
    pub fn name(self) -> &'static str {
        match self {
            Family::Poisson => "pvae",
            Family::RectifiedGaussian => "grelu",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Family> {
        match s {
            "pvae" | "poisson" => Ok(Family::Poisson),
            "grelu" | "gaussian" => Ok(Family::RectifiedGaussian),
            other => Err(Error::InvalidArgument(format!("unknown model family `{other}`"))),
        }
    }
}

/// Learnable prior parameters, always stored in log space where positivity
/// is required.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    Poisson { log_rates: Array1<f64> },
    Gaussian { mu: Array1<f64>, log_sigma: Array1<f64> },
}

impl Prior {
    pub fn family(&self) -> Family {
        match self {
            Prior::Poisson { .. } => Family::Poisson,
            Prior::Gaussian { .. } => Family::RectifiedGaussian,
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Prior::Poisson { log_rates } => log_rates.len(),
            Prior::Gaussian { mu, .. } => mu.len(),
        }
    }
}

/// Encoder weights, prior and dictionary. There are no bias terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `K x M` (Poisson) or `2K x M` (Gaussian: mean head stacked over the
    /// log-scale head).
    pub enc_weights: Array2<f64>,
    /// `M x K` dictionary.
    pub dictionary: Array2<f64>,
    pub prior: Prior,
}

impl ModelParams {
    /// Random initialization: encoder and dictionary entries `N(0, 1/M)`,
    /// dictionary columns then scaled to unit norm. Poisson log-rates are
    /// uniform on `[-1, 1]`; the Gaussian prior starts at `N(0, 1)`.
    pub fn init<R: Rng + ?Sized>(family: Family, k: usize, m: usize, rng: &mut R) -> Result<Self> {
        if k == 0 || m == 0 {
            return Err(Error::InvalidArgument(format!("latent dim {k} and input dim {m} must be positive")));
        }
        let normal = Normal::new(0.0, 1.0 / (m as f64).sqrt()).expect("valid std");
        let rows = match family {
            Family::Poisson => k,
            Family::RectifiedGaussian => 2 * k,
        };
        let enc_weights = Array2::from_shape_fn((rows, m), |_| normal.sample(rng));
        let mut dictionary = Array2::from_shape_fn((m, k), |_| normal.sample(rng));
        for mut col in dictionary.columns_mut() {
            let norm = col.dot(&col).sqrt();
            if norm > 0.0 {
                col /= norm;
            }
        }
        let prior = match family {
            Family::Poisson => {
                let unif = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
                Prior::Poisson {
                    log_rates: Array1::from_shape_fn(k, |_| unif.sample(rng)),
                }
            }
            Family::RectifiedGaussian => Prior::Gaussian {
                mu: Array1::zeros(k),
                log_sigma: Array1::zeros(k),
            },
        };
        Ok(ModelParams {
            enc_weights,
            dictionary,
            prior,
        })
    }

    /// All-zero encoder (posterior equals prior), for tests and baselines.
    pub fn with_zero_encoder(mut self) -> Self {
        self.enc_weights.fill(0.0);
        self
    }

    pub fn family(&self) -> Family {
        self.prior.family()
    }

    pub fn latent_dim(&self) -> usize {
        self.dictionary.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.dictionary.nrows()
    }

    /// Checks that every tensor agrees on `(K, M)`.
    pub fn validate(&self) -> Result<()> {
        let (m, k) = self.dictionary.dim();
        let rows = match self.family() {
            Family::Poisson => k,
            Family::RectifiedGaussian => 2 * k,
        };
        if self.enc_weights.dim() != (rows, m) {
            return Err(Error::Shape(format!(
                "encoder is {:?}, expected ({rows}, {m})",
                self.enc_weights.dim()
            )));
        }
        let prior_ok = match &self.prior {
            Prior::Poisson { log_rates } => log_rates.len() == k,
            Prior::Gaussian { mu, log_sigma } => mu.len() == k && log_sigma.len() == k,
        };
        if !prior_ok {
            return Err(Error::Shape(format!("prior length does not match K = {k}")));
        }
        Ok(())
    }

    /// Flat views of every parameter tensor in a fixed order:
    /// encoder, dictionary, then the prior tensors.
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
}

/// Per-sample posterior parameters together with the residuals that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub enum PosteriorParams {
    Poisson {
        /// `u = ln(lambda / lambda0)`.
        log_residual: Array2<f64>,
        rates: Array2<f64>,
    },
    Gaussian {
        delta_mu: Array2<f64>,
        /// `dv = ln(sigma / sigma0)`.
        log_scale_residual: Array2<f64>,
        mu: Array2<f64>,
        sigma: Array2<f64>,
    },
}

impl PosteriorParams {
    pub fn batch_size(&self) -> usize {
        match self {
            PosteriorParams::Poisson { rates, .. } => rates.nrows(),
            PosteriorParams::Gaussian { mu, .. } => mu.nrows(),
        }
    }
}

pub(crate) fn check_batch(params: &ModelParams, x: ArrayView2<'_, f64>) -> Result<()> {
    if x.ncols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "batch has {} pixels, model expects {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    Ok(())
}

/// Runs the encoder on a batch.
pub fn encode(params: &ModelParams, batch: &PatchBatch) -> Result<PosteriorParams> {
    encode_view(params, batch.data.view())
}

pub(crate) fn encode_view(params: &ModelParams, x: ArrayView2<'_, f64>) -> Result<PosteriorParams> {
    params.validate()?;
    check_batch(params, x)?;
    let out = x.dot(&params.enc_weights.t());
    let k = params.latent_dim();
    Ok(match &params.prior {
        Prior::Poisson { log_rates } => {
            let mut rates = &out + &log_rates.view().insert_axis(Axis(0));
            rates.mapv_inplace(|a| a.exp().max(PARAM_FLOOR));
            PosteriorParams::Poisson {
                log_residual: out,
                rates,
            }
        }
        Prior::Gaussian { mu: mu0, log_sigma } => {
            let delta_mu = out.slice(s![.., ..k]).to_owned();
            let log_scale_residual = out.slice(s![.., k..]).to_owned();
            let mu = &delta_mu + &mu0.view().insert_axis(Axis(0));
            let mut sigma = &log_scale_residual + &log_sigma.view().insert_axis(Axis(0));
            sigma.mapv_inplace(|a| a.exp().max(PARAM_FLOOR));
            PosteriorParams::Gaussian {
                delta_mu,
                log_scale_residual,
                mu,
                sigma,
            }
        }
    })
}

/// Mean and variance of the decoder input `h` under the posterior.
/// Poisson: `m = v = lambda`. Gaussian: rectified-normal moments.
pub fn decoder_input_moments(post: &PosteriorParams) -> (Array2<f64>, Array2<f64>) {
    match post {
        PosteriorParams::Poisson { rates, .. } => (rates.clone(), rates.clone()),
        PosteriorParams::Gaussian { mu, sigma, .. } => {
            let mut m = Array2::zeros(mu.raw_dim());
            let mut v = Array2::zeros(mu.raw_dim());
            ndarray::Zip::from(&mut m)
                .and(&mut v)
                .and(mu)
                .and(sigma)
                .for_each(|m, v, &mu, &s| {
                    let r = rectified_moment(mu, s);
                    *m = r.m;
                    *v = r.v;
                });
            (m, v)
        }
    }
}

/// Squared column norms of the dictionary, `diag(Phi^T Phi)`.
pub fn dictionary_col_sq_norms(dictionary: ArrayView2<'_, f64>) -> Array1<f64> {
    dictionary.map_axis(Axis(0), |col| col.dot(&col))
}

/// Batch-averaged `(||x - Phi m||^2, diag(Phi^T Phi)^T v)`.
pub fn recon_loss_diagonal(
    x: &PatchBatch,
    m: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    dictionary: ArrayView2<'_, f64>,
) -> Result<(f64, f64)> {
    recon_loss_diagonal_view(x.data.view(), m, v, dictionary)
}

pub(crate) fn recon_loss_diagonal_view(
    x: ArrayView2<'_, f64>,
    m: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    dictionary: ArrayView2<'_, f64>,
) -> Result<(f64, f64)> {
    let (pixels, k) = dictionary.dim();
    if x.ncols() != pixels || m.ncols() != k || m.dim() != v.dim() || m.nrows() != x.nrows() {
        return Err(Error::Shape(format!(
            "x {:?}, m {:?}, v {:?}, dictionary {:?}",
            x.dim(),
            m.dim(),
            v.dim(),
            dictionary.dim()
        )));
    }
    let b = x.nrows().max(1) as f64;
    let resid = &x - &m.dot(&dictionary.t());
    let mean_penalty = resid.iter().map(|r| r * r).sum::<f64>() / b;
    let d = dictionary_col_sq_norms(dictionary);
    let variance_penalty = v.dot(&d).sum() / b;
    Ok((mean_penalty, variance_penalty))
}

/// `||x - Phi m||^2 + Tr(Phi^T Phi Cov)` for one sample with a full latent
/// covariance.
pub fn recon_loss_trace(
    x: ArrayView1<'_, f64>,
    m: ArrayView1<'_, f64>,
    full_cov: ArrayView2<'_, f64>,
    dictionary: ArrayView2<'_, f64>,
) -> Result<f64> {
    let (pixels, k) = dictionary.dim();
    if x.len() != pixels || m.len() != k || full_cov.dim() != (k, k) {
        return Err(Error::Shape(format!(
            "x {}, m {}, cov {:?}, dictionary {:?}",
            x.len(),
            m.len(),
            full_cov.dim(),
            dictionary.dim()
        )));
    }
    for i in 0..k {
        for j in (i + 1)..k {
            let (a, b) = (full_cov[[i, j]], full_cov[[j, i]]);
            if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::InvalidArgument(format!(
                    "covariance is not symmetric at ({i}, {j}): {a} vs {b}"
                )));
            }
        }
    }
    let resid = &x - &dictionary.dot(&m);
    let gram = dictionary.t().dot(&dictionary);
    // Tr(A C) = sum_ij A_ij C_ji
    let trace: f64 = (&gram * &full_cov.t()).sum();
    Ok(resid.dot(&resid) + trace)
}
