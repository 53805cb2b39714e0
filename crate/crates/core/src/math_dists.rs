//! Special functions, closed-form divergences and samplers for the Poisson,
//! Gaussian and rectified-Gaussian latents.
//!
//! Everything here works in `f64` regardless of how parameters are stored.
//! The KL terms are written in terms of the residual cost functions
//!
//! ```text
//! f(y) = y ln y - y + 1      (Poisson, y = rate residual)
//! g(y) = y - 1 - ln y        (Gaussian, y = variance residual)
//! ```
//!
//! both of which vanish at the identity residual `y = 1`.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// 1/sqrt(2 pi)
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Upper-tail probability bound used to decide whether a Poisson series is
/// long enough.
const SERIES_TAIL_MASS: f64 = 1e-12;

/// Per-dimension KL cost in nats.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct CostFnValue(f64);

impl CostFnValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<CostFnValue> for f64 {
    fn from(c: CostFnValue) -> f64 {
        c.0
    }
}

/// Mean and variance of `relu(z)` for `z ~ N(mu, sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectifiedMoments {
    pub m: f64,
    pub v: f64,
    /// Standardized mean `mu / sigma`.
    pub zeta: f64,
}

/// `f(y) = y ln y - y + 1`, with `f(0) = 1` by continuity.
pub fn f_cost(y: f64) -> Result<CostFnValue> {
    if !(y >= 0.0) || !y.is_finite() {
        return Err(Error::Domain { name: "y", value: y });
    }
    Ok(CostFnValue(f_unchecked(y)))
}

/// `g(y) = y - 1 - ln y`.
pub fn g_cost(y: f64) -> Result<CostFnValue> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(Error::Domain { name: "y", value: y });
    }
    Ok(CostFnValue(g_unchecked(y)))
}

#[inline]
pub(crate) fn f_unchecked(y: f64) -> f64 {
    if y == 0.0 {
        return 1.0;
    }
    let t = y - 1.0;
    // y ln y - (y - 1), with ln y = ln_1p(t) to keep precision near y = 1
    (y * t.ln_1p() - t).max(0.0)
}

#[inline]
pub(crate) fn g_unchecked(y: f64) -> f64 {
    let t = y - 1.0;
    (t - t.ln_1p()).max(0.0)
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

fn check_positive(name: &'static str, xs: &[f64]) -> Result<()> {
    match xs.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
        Some(&value) => Err(Error::Domain { name, value }),
        None => Ok(()),
    }
}

/// KL(Pois(rates_q) || Pois(rates_prior)) summed over dimensions.
///
/// Each term is `lambda0 * f(lambda_q / lambda0)`, i.e.
/// `lambda_q ln(lambda_q / lambda0) - lambda_q + lambda0`.
pub fn kl_poisson(rates_q: &[f64], rates_prior: &[f64]) -> Result<f64> {
    check_len(rates_q.len(), rates_prior.len())?;
    check_positive("rates_q", rates_q)?;
    check_positive("rates_prior", rates_prior)?;
    Ok(rates_q
        .iter()
        .zip(rates_prior)
        .map(|(&lq, &l0)| l0 * f_unchecked(lq / l0))
        .sum())
}

/// KL between factorized Gaussians, `1/2 sum [dmu^2 / var0 + g(var / var0)]`.
pub fn kl_gaussian(mu: &[f64], var: &[f64], mu0: &[f64], var0: &[f64]) -> Result<f64> {
    let n = mu.len();
    check_len(n, var.len())?;
    check_len(n, mu0.len())?;
    check_len(n, var0.len())?;
    check_positive("var", var)?;
    check_positive("var0", var0)?;
    let mut acc = 0.0;
    for i in 0..n {
        let dmu = mu[i] - mu0[i];
        acc += dmu * dmu / var0[i] + g_unchecked(var[i] / var0[i]);
    }
    Ok(0.5 * acc)
}

/// Second-order Poisson KL in the log-residual `u = ln(lambda_q / lambda0)`:
/// `1/2 sum lambda0 u^2`.
pub fn kl_poisson_quadratic(log_residual: &[f64], rates_prior: &[f64]) -> Result<f64> {
    check_len(log_residual.len(), rates_prior.len())?;
    Ok(0.5
        * log_residual
            .iter()
            .zip(rates_prior)
            .map(|(&u, &l0)| l0 * u * u)
            .sum::<f64>())
}

/// Second-order Gaussian KL with the log *variance* residual
/// `v = ln(var / var0)`: `sum [1/2 dmu^2 / var0 + v^2 / 4]`.
pub fn kl_gaussian_quadratic(
    delta_mu: &[f64],
    log_var_residual: &[f64],
    var0: &[f64],
) -> Result<f64> {
    let n = delta_mu.len();
    check_len(n, log_var_residual.len())?;
    check_len(n, var0.len())?;
    check_positive("var0", var0)?;
    let mut acc = 0.0;
    for i in 0..n {
        let v = log_var_residual[i];
        acc += 0.5 * delta_mu[i] * delta_mu[i] / var0[i] + 0.25 * v * v;
    }
    Ok(acc)
}

/// Same approximation written with the log *scale* residual
/// `s = ln(sigma / sigma0)`: `sum [1/2 dmu^2 / var0 + s^2]`.
pub fn kl_gaussian_quadratic_log_scale(
    delta_mu: &[f64],
    log_scale_residual: &[f64],
    var0: &[f64],
) -> Result<f64> {
    let n = delta_mu.len();
    check_len(n, log_scale_residual.len())?;
    check_len(n, var0.len())?;
    check_positive("var0", var0)?;
    let mut acc = 0.0;
    for i in 0..n {
        let s = log_scale_residual[i];
        acc += 0.5 * delta_mu[i] * delta_mu[i] / var0[i] + s * s;
    }
    Ok(acc)
}

#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF as `erfc(-x / sqrt 2) / 2`.
///
/// `erfc` comes from `libm` (the FreeBSD msun implementation, < 1 ulp
/// error), which keeps the lower tail accurate in relative terms rather than
/// losing it to `1 - erf`.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Moments of `relu(z)`, `z ~ N(mu, sigma^2)`, for scalar inputs.
/// `sigma` must be positive; callers validate.
#[inline]
pub fn rectified_moment(mu: f64, sigma: f64) -> RectifiedMoments {
    let zeta = mu / sigma;
    let cdf = std_normal_cdf(zeta);
    let pdf = std_normal_pdf(zeta);
    let m = mu * cdf + sigma * pdf;
    let second = (mu * mu + sigma * sigma) * cdf + mu * sigma * pdf;
    let m = m.max(0.0);
    RectifiedMoments {
        m,
        v: (second - m * m).max(0.0),
        zeta,
    }
}

pub fn rectified_moments(mu: &[f64], sigma: &[f64]) -> Result<Vec<RectifiedMoments>> {
    check_len(mu.len(), sigma.len())?;
    check_positive("sigma", sigma)?;
    Ok(mu
        .iter()
        .zip(sigma)
        .map(|(&m, &s)| rectified_moment(m, s))
        .collect())
}

/// Below this rate the Poisson sampler uses sequential inversion.
const INVERSION_LIMIT: f64 = 10.0;

/// One Poisson draw. `rate` must be finite and nonnegative.
///
/// Inversion by sequential search for `rate < 10`, Hörmann's transformed
/// rejection with squeeze (PTRS) above.
pub fn poisson_draw<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    if rate < INVERSION_LIMIT {
        poisson_inversion(rate, rng)
    } else {
        poisson_ptrs(rate, rng)
    }
}

fn poisson_inversion<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let mut p = (-rate).exp();
    let mut cdf = p;
    let mut k = 0u64;
    // the cap only triggers when cdf saturates below u through roundoff
    while u > cdf && k < 256 {
        k += 1;
        p *= rate / k as f64;
        cdf += p;
    }
    k
}

fn poisson_ptrs<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    let slam = rate.sqrt();
    let loglam = rate.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + rate + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -rate + k * loglam - libm::lgamma(k + 1.0);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// Independent Poisson draws, one per rate.
pub fn sample_poisson<R: Rng + ?Sized>(rates: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    if let Some(&value) = rates.iter().find(|&&r| !r.is_finite() || r < 0.0) {
        return Err(Error::Domain {
            name: "rate",
            value,
        });
    }
    Ok(rates.iter().map(|&r| poisson_draw(r, rng)).collect())
}

/// `mu + sigma * eps` with `eps` from `rand_distr::StandardNormal`
/// (ziggurat). `sigma = 0` returns `mu` exactly.
pub fn sample_gaussian<R: Rng + ?Sized>(mu: &[f64], sigma: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    check_len(mu.len(), sigma.len())?;
    if let Some(&value) = sigma.iter().find(|&&s| !(s >= 0.0) || !s.is_finite()) {
        return Err(Error::Domain {
            name: "sigma",
            value,
        });
    }
    Ok(mu
        .iter()
        .zip(sigma)
        .map(|(&m, &s)| {
            let eps: f64 = rng.sample(StandardNormal);
            if s == 0.0 {
                m
            } else {
                m + s * eps
            }
        })
        .collect())
}

/// Smallest series length whose Poisson(rate) upper tail is below 1e-12,
/// using the Chernoff bound `P(Z > k) <= exp(-rate) (e rate / k)^k`.
pub fn poisson_series_cutoff(rate: f64) -> usize {
    let mut k = rate.ceil().max(1.0);
    loop {
        let log_bound = -rate + k * (1.0 + rate.ln() - k.ln());
        if log_bound < SERIES_TAIL_MASS.ln() {
            return k as usize;
        }
        k += 1.0;
    }
}

/// KL(Pois(lambda_q) || Pois(lambda_0)) by direct summation of
/// `p(z) [ln p(z; lambda_q) - ln p(z; lambda_0)]` over `z = 0..=cutoff`.
///
/// Independent of [`kl_poisson`]; used to verify it.
pub fn kl_poisson_series_oracle(lambda_q: f64, lambda_0: f64, cutoff: usize) -> Result<f64> {
    for (name, value) in [("lambda_q", lambda_q), ("lambda_0", lambda_0)] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::Domain { name, value });
        }
    }
    let required = poisson_series_cutoff(lambda_q);
    if cutoff < required {
        return Err(Error::InsufficientCutoff {
            cutoff,
            rate: lambda_q,
            required,
        });
    }
    let (lq, l0) = (lambda_q.ln(), lambda_0.ln());
    let mut acc = 0.0;
    for z in 0..=cutoff {
        let zf = z as f64;
        let lg = libm::lgamma(zf + 1.0);
        let log_q = zf * lq - lambda_q - lg;
        let log_p = zf * l0 - lambda_0 - lg;
        acc += log_q.exp() * (log_q - log_p);
    }
    Ok(acc)
}

/// Log-pmf of the Poisson distribution.
pub fn poisson_log_pmf(z: u64, rate: f64) -> f64 {
    let zf = z as f64;
    if rate == 0.0 {
        return if z == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    zf * rate.ln() - rate - libm::lgamma(zf + 1.0)
}

/// Log-density of `N(mean, var)`.
#[inline]
pub fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (d * d / var + (2.0 * PI * var).ln())
}
