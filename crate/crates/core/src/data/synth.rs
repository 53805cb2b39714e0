//! Offline stand-ins for natural image patches, tiled out of larger fields.
//!
//! * [`synth_patches`]: Gaussian random fields with a `1/f^alpha` power
//!   spectrum.
//! * [`dead_leaves_patches`]: occluding disks with power-law radii. The
//!   spectrum also falls roughly as `1/f^2`, but the images are made of
//!   flat regions and sharp edges, so they keep the sparse, heavy-tailed
//!   structure that Gaussian fields lack once whitened.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex64, FftPlanner};

use super::whiten::radial_frequency;
use super::PatchBatch;
use crate::error::{Error, Result};

/// Each field is this many patches wide.
const TILES_PER_SIDE: usize = 8;

fn fft_2d(buf: &mut [Complex64], n: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    for row in buf.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = buf[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            buf[y * n + x] = col[y];
        }
    }
}

/// `n` patches of `side x side` pixels cut from unit-variance fields whose
/// power spectrum falls as `f^-alpha` (DC removed). `alpha = 0` is white
/// noise.
pub fn synth_patches(n: usize, side: usize, alpha: f64, seed: u64) -> Result<PatchBatch> {
    if n == 0 || side == 0 {
        return Err(Error::InvalidArgument(format!("need n > 0 and side > 0, got {n} and {side}")));
    }
    if !alpha.is_finite() {
        return Err(Error::Domain { name: "alpha", value: alpha });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = side * TILES_PER_SIDE;
    let per_field = TILES_PER_SIDE * TILES_PER_SIDE;
    let amplitude: Vec<f64> = (0..field * field)
        .map(|i| {
            let f = radial_frequency(i / field, i % field, field);
            if f == 0.0 {
                0.0
            } else {
                f.powf(-alpha / 2.0)
            }
        })
        .collect();

    let mut planner = FftPlanner::new();
    let mut data = Array2::zeros((n, side * side));
    let mut buf = vec![Complex64::new(0.0, 0.0); field * field];
    let mut produced = 0;
    while produced < n {
        for c in buf.iter_mut() {
            *c = Complex64::new(StandardNormal.sample(&mut rng), 0.0);
        }
        fft_2d(&mut buf, field, &mut planner, false);
        for (c, a) in buf.iter_mut().zip(&amplitude) {
            *c *= *a;
        }
        fft_2d(&mut buf, field, &mut planner, true);
        let re: Vec<f64> = buf.iter().map(|c| c.re).collect();
        let mean = re.iter().sum::<f64>() / re.len() as f64;
        let var = re.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / re.len() as f64;
        let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };

        for tile in 0..per_field.min(n - produced) {
            let (ty, tx) = (tile / TILES_PER_SIDE, tile % TILES_PER_SIDE);
            let mut row = data.row_mut(produced);
            for y in 0..side {
                for x in 0..side {
                    let src = (ty * side + y) * field + tx * side + x;
                    row[y * side + x] = (re[src] - mean) * scale;
                }
            }
            produced += 1;
        }
    }
    PatchBatch::new(data, side)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadLeavesConfig {
    /// Smallest disk radius in pixels.
    pub radius_min: f64,
    /// Largest disk radius, in patch widths.
    pub radius_max_patches: f64,
    /// Gray levels are uniform on `[0, contrast]`.
    pub contrast: f64,
}

impl Default for DeadLeavesConfig {
    fn default() -> Self {
        DeadLeavesConfig {
            radius_min: 8.0,
            radius_max_patches: 8.0,
            contrast: 1e-3,
        }
    }
}

impl DeadLeavesConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("radius_min", self.radius_min),
            ("radius_max_patches", self.radius_max_patches),
            ("contrast", self.contrast),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Domain { name, value });
            }
        }
        Ok(())
    }
}

/// `n` patches cut from dead-leaves images: disks with radius density
/// `r^-3` and uniform gray levels, stacked until every pixel is covered.
pub fn dead_leaves_patches(n: usize, side: usize, cfg: &DeadLeavesConfig, seed: u64) -> Result<PatchBatch> {
    if n == 0 || side == 0 {
        return Err(Error::InvalidArgument(format!("need n > 0 and side > 0, got {n} and {side}")));
    }
    cfg.validate()?;
    let rmin = cfg.radius_min;
    let rmax = (cfg.radius_max_patches * side as f64).max(rmin);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = side * TILES_PER_SIDE;
    let per_field = TILES_PER_SIDE * TILES_PER_SIDE;
    let (a, b) = (rmin.powi(-2), rmax.powi(-2));
    let margin = rmax / 4.0;

    let mut data = Array2::zeros((n, side * side));
    let mut img = vec![f64::NAN; field * field];
    let mut produced = 0;
    while produced < n {
        // Front-to-back: each disk only paints pixels not yet covered.
        img.fill(f64::NAN);
        let mut uncovered = field * field;
        while uncovered > 0 {
            let u: f64 = rng.random();
            let r = (a - u * (a - b)).powf(-0.5);
            let cx = rng.random_range(-margin..field as f64 + margin);
            let cy = rng.random_range(-margin..field as f64 + margin);
            let gray = cfg.contrast * rng.random::<f64>();
            let y0 = (cy - r).floor().max(0.0) as usize;
            let y1 = ((cy + r).ceil().max(0.0) as usize).min(field);
            let x0 = (cx - r).floor().max(0.0) as usize;
            let x1 = ((cx + r).ceil().max(0.0) as usize).min(field);
            for y in y0..y1 {
                let dy = y as f64 - cy;
                for x in x0..x1 {
                    let dx = x as f64 - cx;
                    let px = &mut img[y * field + x];
                    if px.is_nan() && dx * dx + dy * dy <= r * r {
                        *px = gray;
                        uncovered -= 1;
                    }
                }
            }
        }
        for tile in 0..per_field.min(n - produced) {
            let (ty, tx) = (tile / TILES_PER_SIDE, tile % TILES_PER_SIDE);
            let mut row = data.row_mut(produced);
            for y in 0..side {
                for x in 0..side {
                    row[y * side + x] = img[(ty * side + y) * field + tx * side + x];
                }
            }
            produced += 1;
        }
    }
    PatchBatch::new(data, side)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dft2;

    /// Least-squares slope of radially averaged log power against log f.
    fn spectral_slope(batch: &PatchBatch) -> f64 {
        let side = batch.side().unwrap();
        let dft = Dft2::new(side);
        let bins = side / 2;
        let mut power = vec![0.0; bins + 1];
        let mut count = vec![0usize; bins + 1];
        let (mut re, mut im) = (vec![0.0; side * side], vec![0.0; side * side]);
        for row in batch.data.rows() {
            dft.forward(row.as_slice().unwrap(), &mut re, &mut im);
            for i in 0..side * side {
                let f = radial_frequency(i / side, i % side, side);
                let bin = (f * side as f64).round() as usize;
                if bin >= 1 && bin <= bins {
                    power[bin] += re[i] * re[i] + im[i] * im[i];
                    count[bin] += 1;
                }
            }
        }
        let pts: Vec<(f64, f64)> = (1..=bins)
            .map(|b| (((b as f64) / side as f64).ln(), (power[b] / count[b] as f64).ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }

    #[test]
    fn spectrum_slope_matches_alpha() {
        let b = synth_patches(10_000, 16, 2.0, 1).unwrap();
        let slope = spectral_slope(&b);
        assert!((slope + 2.0).abs() < 0.3, "slope {slope}");
        let w = synth_patches(2_000, 16, 0.0, 2).unwrap();
        let slope = spectral_slope(&w);
        assert!(slope.abs() < 0.3, "white slope {slope}");
    }

    #[test]
    fn deterministic_given_seed() {
        let a = synth_patches(100, 8, 2.0, 42).unwrap();
        let b = synth_patches(100, 8, 2.0, 42).unwrap();
        assert_eq!(a, b);
        let c = synth_patches(100, 8, 2.0, 43).unwrap();
        assert_ne!(a, c);
        assert!(synth_patches(0, 8, 2.0, 1).is_err());
    }

    #[test]
    fn dead_leaves_are_piecewise_constant_with_falling_spectrum() {
        let cfg = DeadLeavesConfig { radius_min: 1.0, radius_max_patches: 3.0, contrast: 1.0 };
        let b = dead_leaves_patches(2_000, 16, &cfg, 5).unwrap();
        assert!(b.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let slope = spectral_slope(&b);
        assert!(slope < -1.5 && slope > -3.0, "slope {slope}");
        // most horizontal neighbours share a disk
        let same = b
            .data
            .rows()
            .into_iter()
            .flat_map(|r| (0..16 * 16 - 1).filter(move |i| i % 16 != 15).map(move |i| r[i] == r[i + 1]))
            .filter(|s| *s)
            .count();
        assert!(same as f64 / (2_000.0 * 240.0) > 0.6);
        assert_eq!(b, dead_leaves_patches(2_000, 16, &cfg, 5).unwrap());
        assert!(dead_leaves_patches(10, 16, &DeadLeavesConfig { contrast: 0.0, ..cfg }, 5).is_err());
    }
}
