//! Independent oracles (quadrature, Monte Carlo, finite differences) and
//! the verification suites built on them.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{prepare_dataset, synth_patches, whiten, PatchBatch, PreprocConfig};
use crate::error::Result;
use crate::math_dists::{
    f_cost, g_cost, kl_gaussian, kl_poisson, kl_poisson_series_oracle, normal_log_pdf, poisson_series_cutoff,
    rectified_moment, std_normal_cdf, INV_SQRT_2PI,
};
use crate::model::{elbo_decomposition_check, free_energy, gradients, Family, ModelParams, Prior};

/// Composite Simpson rule on `[a, b]` with `n` (rounded up to even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = n.max(2) + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// `KL(N(mu, var) || N(mu0, var0))` by quadrature of `q ln(q/p)` over
/// `mu +- 14 sd`.
pub fn kl_gaussian_quadrature(mu: f64, var: f64, mu0: f64, var0: f64) -> f64 {
    let sd = var.sqrt();
    simpson(
        |z| {
            let lq = normal_log_pdf(z, mu, var);
            lq.exp() * (lq - normal_log_pdf(z, mu0, var0))
        },
        mu - 14.0 * sd,
        mu + 14.0 * sd,
        20_000,
    )
}

/// Standard normal CDF by quadrature of the density from `-40`.
pub fn normal_cdf_quadrature(x: f64) -> f64 {
    if x < 0.0 {
        return 1.0 - normal_cdf_quadrature(-x);
    }
    0.5 + simpson(|t| INV_SQRT_2PI * (-0.5 * t * t).exp(), 0.0, x, 20_000)
}

/// Monte Carlo estimate of the mean and variance of `relu(N(mu, sigma^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub m: f64,
    pub v: f64,
    pub se_m: f64,
    pub se_v: f64,
}

pub fn rectified_moments_mc<R: Rng + ?Sized>(mu: f64, sigma: f64, n: usize, rng: &mut R) -> MomentEstimate {
    let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..n {
        let eps: f64 = StandardNormal.sample(rng);
        let h = (mu + sigma * eps).max(0.0);
        let h2 = h * h;
        s1 += h;
        s2 += h2;
        s3 += h2 * h;
        s4 += h2 * h2;
    }
    let nf = n as f64;
    let (e1, e2, e3, e4) = (s1 / nf, s2 / nf, s3 / nf, s4 / nf);
    let v = (e2 - e1 * e1) * nf / (nf - 1.0);
    // fourth central moment, for the standard error of the sample variance
    let mu4 = e4 - 4.0 * e3 * e1 + 6.0 * e2 * e1 * e1 - 3.0 * e1.powi(4);
    MomentEstimate {
        m: e1,
        v,
        se_m: (v / nf).sqrt(),
        se_v: ((mu4 - v * v).max(0.0) / nf).sqrt(),
    }
}

/// `E[relu(z)^k]` for `k = 0..=4` by quadrature over `z > 0`.
pub fn rectified_raw_moments_quadrature(mu: f64, sigma: f64) -> [f64; 5] {
    let (lo, hi) = ((mu - 14.0 * sigma).max(0.0), mu + 14.0 * sigma);
    let mut out = [0.0; 5];
    if hi <= 0.0 {
        return out;
    }
    for (k, o) in out.iter_mut().enumerate() {
        *o = simpson(
            |z| z.powi(k as i32) * INV_SQRT_2PI / sigma * (-0.5 * ((z - mu) / sigma).powi(2)).exp(),
            lo,
            hi,
            20_000,
        );
    }
    out
}

/// Standard errors of the `n`-sample mean and variance of `relu(z)`,
/// from its quadrature moments.
pub fn rectified_standard_errors(mu: f64, sigma: f64, n: usize) -> (f64, f64) {
    let [_, e1, e2, e3, e4] = rectified_raw_moments_quadrature(mu, sigma);
    let var = (e2 - e1 * e1).max(0.0);
    let mu4 = e4 - 4.0 * e3 * e1 + 6.0 * e2 * e1 * e1 - 3.0 * e1.powi(4);
    let nf = n as f64;
    ((var / nf).sqrt(), ((mu4 - var * var).max(0.0) / nf).sqrt())
}

/// Central differences of the batch free energy, one parameter at a time,
/// in the tensor order of [`ModelParams::tensors`].
pub fn finite_difference_gradients(params: &ModelParams, batch: &PatchBatch, beta: f64, h: f64) -> Result<Vec<Vec<f64>>> {
    let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut work = params.clone();
    let mut out = Vec::with_capacity(shapes.len());
    for (t, &len) in shapes.iter().enumerate() {
        let mut grad = vec![0.0; len];
        for (i, g) in grad.iter_mut().enumerate() {
            let orig = work.tensors()[t][i];
            work.tensors_mut()[t][i] = orig + h;
            let up = free_energy(&work, batch, beta)?.total;
            work.tensors_mut()[t][i] = orig - h;
            let down = free_energy(&work, batch, beta)?.total;
            work.tensors_mut()[t][i] = orig;
            *g = (up - down) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "{} {}: {} ({:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn timed(name: &'static str, limit_seconds: f64, body: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let result = body();
    let seconds = start.elapsed().as_secs_f64();
    let (passed, mut detail) = match result {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let in_time = seconds < limit_seconds;
    if !in_time {
        detail.push_str(&format!("; over the {limit_seconds} s limit"));
    }
    CheckOutcome { name, passed: passed && in_time, detail, seconds }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Closed-form KLs against the series sum and quadrature.
pub fn kl_oracles() -> CheckOutcome {
    timed("kl_oracles", 5.0, || {
        let mut worst_p: f64 = 0.0;
        for &lq in &log_grid(0.01, 50.0, 20) {
            for &l0 in &log_grid(0.01, 50.0, 10) {
                let oracle = kl_poisson_series_oracle(lq, l0, poisson_series_cutoff(lq))?;
                worst_p = worst_p.max((kl_poisson(&[lq], &[l0])? - oracle).abs());
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut worst_g: f64 = 0.0;
        for _ in 0..200 {
            let mu = rng.random_range(-3.0..3.0);
            let mu0 = rng.random_range(-3.0..3.0);
            let var = rng.random_range(-3.0f64..3.0).exp();
            let var0 = rng.random_range(-3.0f64..3.0).exp();
            let closed = kl_gaussian(&[mu], &[var], &[mu0], &[var0])?;
            worst_g = worst_g.max((closed - kl_gaussian_quadrature(mu, var, mu0, var0)).abs());
        }
        Ok((
            worst_p <= 1e-8 && worst_g <= 1e-6,
            format!("max |poisson - series| = {worst_p:.2e} (200 pts), max |gaussian - quadrature| = {worst_g:.2e}"),
        ))
    })
}

/// Erf-based CDF against quadrature of the density.
pub fn normal_cdf() -> CheckOutcome {
    timed("normal_cdf", 5.0, || {
        let mut worst: f64 = 0.0;
        for i in 0..=160 {
            let x = -8.0 + 0.1 * i as f64;
            worst = worst.max((std_normal_cdf(x) - normal_cdf_quadrature(x)).abs());
        }
        Ok((worst <= 1e-12, format!("max |cdf - quadrature| = {worst:.2e} on [-8, 8]")))
    })
}

/// `|diff| / se`, where a zero standard error (every draw rectified to 0)
/// only tolerates a difference below `1e-12`.
fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff.abs() / se
    } else if diff.abs() < 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Analytic rectified moments against `n`-sample Monte Carlo.
pub fn rectified_moments_vs_mc(n_samples: usize) -> CheckOutcome {
    timed("rectified_moments", 30.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let mut worst_z: f64 = 0.0;
        for _ in 0..20 {
            let mu = rng.random_range(-3.0..=3.0);
            let sigma = rng.random_range(0.2..=3.0);
            let exact = rectified_moment(mu, sigma);
            let est = rectified_moments_mc(mu, sigma, n_samples, &mut rng);
            let (se_m, se_v) = rectified_standard_errors(mu, sigma, n_samples);
            worst_z = worst_z.max(z_score(exact.m - est.m, se_m)).max(z_score(exact.v - est.v, se_v));
        }
        Ok((worst_z <= 4.0, format!("worst deviation {worst_z:.2} standard errors over 20 (mu, sigma)")))
    })
}

fn random_model<R: Rng>(family: Family, k: usize, m: usize, rng: &mut R) -> Result<ModelParams> {
    let mut p = ModelParams::init(family, k, m, rng)?;
    p.enc_weights.mapv_inplace(|_| rng.random_range(-0.6..0.6));
    p.dictionary.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    match &mut p.prior {
        Prior::Poisson { log_rates } => log_rates.mapv_inplace(|_| rng.random_range(-1.0..1.0)),
        Prior::Gaussian { mu, log_sigma } => {
            mu.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            log_sigma.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
    }
    Ok(p)
}

fn random_batch<R: Rng>(n: usize, m: usize, rng: &mut R) -> PatchBatch {
    PatchBatch::from_rows(Array2::from_shape_fn((n, m), |_| StandardNormal.sample(rng)))
}

/// Relative error with a small absolute floor in the denominator.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Analytic gradients against central differences with step `1e-5`.
pub fn gradient_check(instances_per_family: usize) -> CheckOutcome {
    timed("gradients", 60.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let mut worst: f64 = 0.0;
        for family in [Family::Poisson, Family::RectifiedGaussian] {
            for _ in 0..instances_per_family {
                let k = rng.random_range(1..=4);
                let m = rng.random_range(1..=6);
                let n = rng.random_range(1..=5);
                let beta = rng.random_range(0.1..4.0);
                let p = random_model(family, k, m, &mut rng)?;
                let batch = random_batch(n, m, &mut rng);
                let analytic = gradients(&p, &batch, beta)?;
                let numeric = finite_difference_gradients(&p, &batch, beta, 1e-5)?;
                for (a, b) in analytic.tensors().iter().zip(&numeric) {
                    for (x, y) in a.iter().zip(b) {
                        worst = worst.max(relative_error(*x, *y));
                    }
                }
            }
        }
        Ok((
            worst <= 1e-5,
            format!("max relative error {worst:.2e} over {instances_per_family} instances per family"),
        ))
    })
}

/// Cubic error bound of the quadratic KL approximations and the Poisson
/// KL curvature at the identity residual.
pub fn taylor_order() -> CheckOutcome {
    timed("taylor_order", 5.0, || {
        let mut bound_ok = true;
        let mut worst_ratio: f64 = 0.0;
        for i in 0..=120 {
            let u = -0.3 + 0.005 * i as f64;
            if u == 0.0 {
                continue;
            }
            let ef = (f_cost(u.exp())?.value() - 0.5 * u * u).abs();
            let eg = (g_cost(u.exp())?.value() - 0.5 * u * u).abs();
            let c = u.abs().powi(3);
            bound_ok &= ef <= c && eg <= c;
            worst_ratio = worst_ratio.max(ef / c).max(eg / c);
        }
        let h = 1e-4;
        let mut worst_curv: f64 = 0.0;
        for &l0 in &[0.05, 0.5, 1.0, 3.0, 20.0] {
            let kl = |u: f64| kl_poisson(&[l0 * u.exp()], &[l0]);
            let second = (kl(h)? - 2.0 * kl(0.0)? + kl(-h)?) / (h * h);
            worst_curv = worst_curv.max((second - l0).abs() / l0);
        }
        Ok((
            bound_ok && worst_curv <= 1e-4,
            format!(
                "max |err|/|u|^3 = {worst_ratio:.3} on |u| <= 0.3, curvature relative error {worst_curv:.2e}"
            ),
        ))
    })
}

/// The two ELBO carvings agree within Monte Carlo error on random models.
pub fn elbo_carving(n_samples: usize) -> CheckOutcome {
    timed("elbo_carving", 120.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let k = rng.random_range(1..=5);
            let m = rng.random_range(2..=8);
            let p = random_model(Family::RectifiedGaussian, k, m, &mut rng)?;
            let batch = random_batch(rng.random_range(1..=8), m, &mut rng);
            let c = elbo_decomposition_check(&p, &batch, n_samples, &mut rng)?;
            worst = worst.max(z_score(c.lhs - c.rhs, c.mc_se));
        }
        Ok((worst <= 4.0, format!("worst |lhs - rhs| = {worst:.2} standard errors over 10 models")))
    })
}

/// Constant patches whiten to zero; the full pipeline on `10^4` patches
/// is column-standardized and fast.
pub fn preprocessing_contract() -> CheckOutcome {
    timed("preprocessing", 10.0, || {
        let cfg = PreprocConfig::default();
        let constant = PatchBatch::new(Array2::from_elem((4, 256), 0.7), 16)?;
        let max_const = whiten(&constant, &cfg)?.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));

        let raw = synth_patches(10_001, 16, 2.0, 505)?;
        let start = Instant::now();
        let prepared = prepare_dataset(&raw, 1, &cfg)?;
        let pipeline_seconds = start.elapsed().as_secs_f64();
        let x = &prepared.train.data;
        let n = x.nrows() as f64;
        let (mut worst_mean, mut worst_std): (f64, f64) = (0.0, 0.0);
        for col in x.columns() {
            let mean = col.sum() / n;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            worst_mean = worst_mean.max(mean.abs());
            worst_std = worst_std.max((std - 1.0).abs());
        }
        Ok((
            max_const <= 1e-12 && worst_mean < 1e-6 && worst_std < 1e-6,
            format!(
                "constant patch -> {max_const:.1e}; column |mean| <= {worst_mean:.1e}, |std - 1| <= {worst_std:.1e}; pipeline on 10^4 patches {pipeline_seconds:.2}s"
            ),
        ))
    })
}

/// All numerical suites at their full sizes.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        kl_oracles(),
        normal_cdf(),
        rectified_moments_vs_mc(1_000_000),
        gradient_check(50),
        taylor_order(),
        elbo_carving(100_000),
        preprocessing_contract(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_for_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 6);
        assert!((v - 3.75).abs() < 1e-12, "{v}");
    }

    #[test]
    fn quadrature_oracles_hit_known_values() {
        assert!((kl_gaussian_quadrature(1.0, 1.0, 0.0, 1.0) - 0.5).abs() < 1e-10);
        assert!((kl_gaussian_quadrature(0.0, 4.0, 0.0, 1.0) - 0.806_852_819_440_054_7).abs() < 1e-10);
        assert!((normal_cdf_quadrature(1.959_964) - 0.975).abs() < 1e-7);
        assert_eq!(normal_cdf_quadrature(0.0), 0.5);
    }

    #[test]
    fn quadrature_moments_of_standard_normal() {
        let [p0, e1, e2, ..] = rectified_raw_moments_quadrature(0.0, 1.0);
        assert!((p0 - 0.5).abs() < 1e-12);
        assert!((e1 - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert!((e2 - 0.5).abs() < 1e-12);
        assert_eq!(rectified_raw_moments_quadrature(-30.0, 1.0), [0.0; 5]);
    }

    #[test]
    fn mc_moments_of_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = rectified_moments_mc(0.0, 1.0, 200_000, &mut rng);
        assert!((e.m - 0.398_942).abs() < 4.0 * e.se_m);
        assert!((e.v - 0.340_845).abs() < 4.0 * e.se_v);
    }

    #[test]
    fn finite_differences_of_a_quadratic_free_energy() {
        // Zero encoder, rates at the floor-free region: F is smooth in Phi.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_model(Family::Poisson, 2, 3, &mut rng).unwrap();
        let batch = random_batch(4, 3, &mut rng);
        let numeric = finite_difference_gradients(&p, &batch, 1.0, 1e-5).unwrap();
        let analytic = gradients(&p, &batch, 1.0).unwrap();
        for (a, b) in analytic.tensors().iter().zip(&numeric) {
            for (x, y) in a.iter().zip(b) {
                assert!(relative_error(*x, *y) < 1e-5, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn quick_suites_pass() {
        for o in [kl_oracles(), normal_cdf(), taylor_order(), rectified_moments_vs_mc(100_000), gradient_check(5)] {
            assert!(o.passed, "{}", o.line());
        }
    }
}
