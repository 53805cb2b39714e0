//! Image patches and the preprocessing pipeline:
//! extract -> whiten -> local contrast normalization -> z-score.

mod io;
mod lcn;
mod synth;
mod whiten;

pub use io::{extract_pgm_patches, load_patches, save_patches, PATCH_MAGIC, PATCH_VERSION};
pub use lcn::{gaussian_kernel_1d, local_contrast_normalize, LCN_EPS};
pub use synth::{dead_leaves_patches, synth_patches, DeadLeavesConfig};
pub use whiten::{radial_frequency, whiten, whitening_gain, Dft2};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows are flattened (row-major) patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub data: Array2<f64>,
    side: Option<usize>,
}

impl PatchBatch {
    /// Square patches of `side x side` pixels.
    pub fn new(data: Array2<f64>, side: usize) -> Result<Self> {
        if side == 0 || data.ncols() != side * side {
            return Err(Error::Shape(format!(
                "{} columns cannot hold {side}x{side} patches",
                data.ncols()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain { name: "pixel", value: *v });
        }
        Ok(PatchBatch { data, side: Some(side) })
    }

    /// Arbitrary feature vectors. The batch is treated as square patches
    /// when the width is a perfect square.
    pub fn from_rows(data: Array2<f64>) -> Self {
        let m = data.ncols();
        let side = (m as f64).sqrt().round() as usize;
        let side = (side * side == m && m > 0).then_some(side);
        PatchBatch { data, side }
    }

    pub fn side(&self) -> Option<usize> {
        self.side
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn select(&self, rows: &[usize]) -> PatchBatch {
        PatchBatch {
            data: self.data.select(Axis(0), rows),
            side: self.side,
        }
    }

    /// First `n` rows and the remainder.
    pub fn split_at(&self, n: usize) -> (PatchBatch, PatchBatch) {
        let n = n.min(self.len());
        let head = self.data.slice(ndarray::s![..n, ..]).to_owned();
        let tail = self.data.slice(ndarray::s![n.., ..]).to_owned();
        (
            PatchBatch { data: head, side: self.side },
            PatchBatch { data: tail, side: self.side },
        )
    }

    fn require_side(&self) -> Result<usize> {
        self.side
            .ok_or_else(|| Error::Shape(format!("{} pixels per row is not a square patch", self.width())))
    }

    /// Applies `f` to every patch (as a `side x side` image) in parallel,
    /// keeping row order.
    pub(crate) fn map_patches<F>(&self, f: F) -> Result<PatchBatch>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let side = self.require_side()?;
        let mut out = Array2::zeros(self.data.raw_dim());
        let m = self.width();
        let src = self.data.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        out.as_slice_mut()
            .expect("standard layout")
            .par_chunks_mut(m)
            .zip(src.par_chunks(m))
            .for_each(|(dst, patch)| f(patch, dst));
        Ok(PatchBatch { data: out, side: Some(side) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocConfig {
    /// Whitening roll-off frequency, cycles/pixel (Nyquist = 0.5).
    pub f0: f64,
    /// Whitening roll-off exponent.
    pub n_exp: f64,
    /// Odd LCN kernel width in pixels.
    pub lcn_kernel: usize,
    pub lcn_sigma: f64,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        PreprocConfig {
            f0: 0.5,
            n_exp: 4.0,
            lcn_kernel: 13,
            lcn_sigma: 0.5,
        }
    }
}

impl PreprocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lcn_kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!("LCN kernel size {} must be odd", self.lcn_kernel)));
        }
        for (name, value) in [("f0", self.f0), ("n_exp", self.n_exp), ("lcn_sigma", self.lcn_sigma)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::Domain { name, value });
            }
        }
        Ok(())
    }
}

/// Standard-deviation floor used by [`zscore`].
pub const ZSCORE_STD_FLOOR: f64 = 1e-8;

/// Per-pixel-position mean and standard deviation, frozen from a training
/// set so the same transform can be applied to held-out data.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScoreStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl ZScoreStats {
    pub fn fit(batch: &PatchBatch) -> Result<Self> {
        if batch.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "z-scoring needs at least 2 patches, got {}",
                batch.len()
            )));
        }
        let mean = batch.data.mean_axis(Axis(0)).expect("nonempty");
        let std = batch.data.std_axis(Axis(0), 0.0).mapv(|s| s.max(ZSCORE_STD_FLOOR));
        Ok(ZScoreStats { mean, std })
    }

    pub fn apply(&self, batch: &PatchBatch) -> Result<PatchBatch> {
        if batch.width() != self.mean.len() {
            return Err(Error::Shape(format!(
                "stats for {} pixels applied to {}",
                self.mean.len(),
                batch.width()
            )));
        }
        let data = (&batch.data - &self.mean.view().insert_axis(Axis(0))) / &self.std.view().insert_axis(Axis(0));
        Ok(PatchBatch { data, side: batch.side })
    }
}

/// Standardizes each pixel position over the dataset (population std).
pub fn zscore(patches: &PatchBatch) -> Result<PatchBatch> {
    ZScoreStats::fit(patches)?.apply(patches)
}

/// Whitening followed by local contrast normalization. Z-scoring is left
/// to the caller so statistics can be fit on training data only.
pub fn preprocess(raw: &PatchBatch, cfg: &PreprocConfig) -> Result<PatchBatch> {
    local_contrast_normalize(&whiten(raw, cfg)?, cfg)
}

/// Train / validation pair produced by [`prepare_dataset`].
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: PatchBatch,
    pub validation: PatchBatch,
    pub stats: ZScoreStats,
}

/// Runs the whole pipeline, holding out the last `n_validation` patches.
/// Z-score statistics come from the training part only.
pub fn prepare_dataset(raw: &PatchBatch, n_validation: usize, cfg: &PreprocConfig) -> Result<PreparedData> {
    if n_validation >= raw.len() {
        return Err(Error::InvalidArgument(format!(
            "validation size {n_validation} leaves no training data out of {}",
            raw.len()
        )));
    }
    let filtered = preprocess(raw, cfg)?;
    let (train, validation) = filtered.split_at(raw.len() - n_validation);
    let stats = ZScoreStats::fit(&train)?;
    Ok(PreparedData {
        train: stats.apply(&train)?,
        validation: stats.apply(&validation)?,
        stats,
    })
}
