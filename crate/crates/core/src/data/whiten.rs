use std::f64::consts::PI;

use super::{PatchBatch, PreprocConfig};
use crate::error::Result;

/// Direct separable 2-D DFT for small square images.
///
/// For 16x16 patches this is a few thousand multiply-adds per pass.
#[derive(Debug, Clone)]
pub struct Dft2 {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Dft2 {
    pub fn new(n: usize) -> Self {
        let (cos, sin) = (0..n)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / n as f64;
                (a.cos(), a.sin())
            })
            .unzip();
        Dft2 { n, cos, sin }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Forward transform of a real row-major image into `(re, im)`.
    pub fn forward(&self, img: &[f64], re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        let mut tre = vec![0.0; n * n];
        let mut tim = vec![0.0; n * n];
        // rows: T[y, v] = sum_x img[y, x] e^{-2 pi i v x / n}
        for y in 0..n {
            let row = &img[y * n..(y + 1) * n];
            for v in 0..n {
                let (mut sr, mut si) = (0.0, 0.0);
                for (x, &p) in row.iter().enumerate() {
                    let t = (v * x) % n;
                    sr += p * self.cos[t];
                    si -= p * self.sin[t];
                }
                tre[y * n + v] = sr;
                tim[y * n + v] = si;
            }
        }
        // columns: X[u, v] = sum_y T[y, v] e^{-2 pi i u y / n}
        for u in 0..n {
            for v in 0..n {
                let (mut sr, mut si) = (0.0, 0.0);
                for y in 0..n {
                    let t = (u * y) % n;
                    let (c, s) = (self.cos[t], self.sin[t]);
                    let (a, b) = (tre[y * n + v], tim[y * n + v]);
                    sr += a * c + b * s;
                    si += b * c - a * s;
                }
                re[u * n + v] = sr;
                im[u * n + v] = si;
            }
        }
    }

    /// Inverse transform, returning only the real part.
    pub fn inverse_real(&self, re: &[f64], im: &[f64], out: &mut [f64]) {
        let n = self.n;
        let mut tre = vec![0.0; n * n];
        let mut tim = vec![0.0; n * n];
        // columns: T[y, v] = sum_u X[u, v] e^{+2 pi i u y / n}
        for y in 0..n {
            for v in 0..n {
                let (mut sr, mut si) = (0.0, 0.0);
                for u in 0..n {
                    let t = (u * y) % n;
                    let (c, s) = (self.cos[t], self.sin[t]);
                    let (a, b) = (re[u * n + v], im[u * n + v]);
                    sr += a * c - b * s;
                    si += a * s + b * c;
                }
                tre[y * n + v] = sr;
                tim[y * n + v] = si;
            }
        }
        let scale = 1.0 / (n * n) as f64;
        for y in 0..n {
            for x in 0..n {
                let mut sr = 0.0;
                for v in 0..n {
                    let t = (v * x) % n;
                    sr += tre[y * n + v] * self.cos[t] - tim[y * n + v] * self.sin[t];
                }
                out[y * n + x] = sr * scale;
            }
        }
    }
}

/// Radial frequency in cycles/pixel of DFT bin `(u, v)` on an `n x n` grid
/// (Nyquist = 0.5).
pub fn radial_frequency(u: usize, v: usize, n: usize) -> f64 {
    let signed = |k: usize| {
        if k <= n / 2 {
            k as f64 / n as f64
        } else {
            (k as f64 - n as f64) / n as f64
        }
    };
    signed(u).hypot(signed(v))
}

/// `R(f) = f exp(-(f / f0)^n)`: ramp whitening with a high-frequency
/// roll-off.
pub fn whitening_gain(f: f64, cfg: &PreprocConfig) -> f64 {
    f * (-(f / cfg.f0).powf(cfg.n_exp)).exp()
}

/// Filters every patch by [`whitening_gain`] in the frequency domain.
pub fn whiten(patches: &PatchBatch, cfg: &PreprocConfig) -> Result<PatchBatch> {
    cfg.validate()?;
    let side = patches.require_side()?;
    let dft = Dft2::new(side);
    let gain: Vec<f64> = (0..side * side)
        .map(|i| whitening_gain(radial_frequency(i / side, i % side, side), cfg))
        .collect();
    patches.map_patches(|src, dst| {
        let mut re = vec![0.0; side * side];
        let mut im = vec![0.0; side * side];
        dft.forward(src, &mut re, &mut im);
        for ((r, i), g) in re.iter_mut().zip(im.iter_mut()).zip(&gain) {
            *r *= g;
            *i *= g;
        }
        dft.inverse_real(&re, &im, dst);
    })
}
