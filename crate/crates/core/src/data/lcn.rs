use super::{PatchBatch, PreprocConfig};
use crate::error::Result;

/// Added under the square root of the local variance.
pub const LCN_EPS: f64 = 1e-6;

/// Normalized 1-D Gaussian of odd length `size`.
pub fn gaussian_kernel_1d(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Mirror index into `0..n` without repeating the edge sample
/// (`-1 -> 1`, `n -> n - 2`), folding as often as needed.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Separable convolution of an `n x n` image with a reflect-padded kernel.
fn blur(img: &[f64], n: usize, kernel: &[f64], out: &mut [f64]) {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            tmp[y * n + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * img[y * n + reflect(x as isize + k as isize - r, n)])
                .sum();
        }
    }
    for y in 0..n {
        for x in 0..n {
            out[y * n + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[reflect(y as isize + k as isize - r, n) * n + x])
                .sum();
        }
    }
}

/// `x' = (x - G*x) / sqrt(G*(x - G*x)^2 + eps)` per patch.
pub fn local_contrast_normalize(patches: &PatchBatch, cfg: &PreprocConfig) -> Result<PatchBatch> {
    cfg.validate()?;
    let side = patches.require_side()?;
    let kernel = gaussian_kernel_1d(cfg.lcn_kernel, cfg.lcn_sigma);
    patches.map_patches(|src, dst| {
        let mut local_mean = vec![0.0; side * side];
        blur(src, side, &kernel, &mut local_mean);
        let centered: Vec<f64> = src.iter().zip(&local_mean).map(|(x, m)| x - m).collect();
        let sq: Vec<f64> = centered.iter().map(|c| c * c).collect();
        let mut local_var = vec![0.0; side * side];
        blur(&sq, side, &kernel, &mut local_var);
        for ((d, c), v) in dst.iter_mut().zip(&centered).zip(&local_var) {
            *d = c / (v + LCN_EPS).sqrt();
        }
    })
}
