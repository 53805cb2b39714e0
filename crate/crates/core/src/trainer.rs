//! Minibatch Adamax with linear warmup, cosine annealing and global-norm
//! gradient clipping.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::PatchBatch;
use crate::error::{Error, Result};
use crate::model::{free_energy_and_gradients, save_checkpoint, GradientSet, ModelParams};

/// RNG stream reserved for minibatch shuffling.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Epochs of cosine annealing after warmup.
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub grad_clip: f64,
    pub beta: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.005,
            batch_size: 1000,
            epochs: 3000,
            warmup_epochs: 5,
            grad_clip: 500.0,
            beta: 1.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Warmup is added on top of `epochs`.
    pub fn total_epochs(&self) -> usize {
        self.warmup_epochs + self.epochs
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Domain { name: "lr", value: self.lr });
        }
        for (name, value) in [("grad_clip", self.grad_clip), ("eps", self.eps)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Domain { name, value });
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Domain { name: "beta", value: self.beta });
        }
        for (name, value) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(value > 0.0 && value < 1.0) {
                return Err(Error::Domain { name, value });
            }
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("batch_size and epochs must be positive".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::InvalidArgument(format!(
                "warmup_epochs ({}) must be less than epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        Ok(())
    }
}

/// Learning rate for a zero-based epoch index.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= config.total_epochs() {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} outside schedule of {} epochs",
            config.total_epochs()
        )));
    }
    if epoch < config.warmup_epochs {
        return Ok(config.lr * (epoch + 1) as f64 / config.warmup_epochs as f64);
    }
    let t = (epoch - config.warmup_epochs) as f64;
    Ok(config.lr * 0.5 * (1.0 + (PI * t / config.epochs as f64).cos()))
}

/// Rescales all tensors when their joint L2 norm exceeds `max_norm`.
/// `global_norm` is set to the norm after clipping.
pub fn clip_gradients(mut grads: GradientSet, max_norm: f64) -> Result<GradientSet> {
    if !(max_norm > 0.0) {
        return Err(Error::Domain { name: "max_norm", value: max_norm });
    }
    let norm = grads.compute_norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= scale);
        }
        grads.global_norm = grads.compute_norm();
    } else {
        grads.global_norm = norm;
    }
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<Vec<f64>>,
    pub inf_norm: Vec<Vec<f64>>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        OptimizerState {
            first_moment: zeros.clone(),
            inf_norm: zeros,
            step_count: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn for_config(params: &ModelParams, cfg: &TrainConfig) -> Self {
        Self::new(params, cfg.beta1, cfg.beta2, cfg.eps)
    }
}

pub fn adamax_step(
    params: &mut ModelParams,
    grads: &GradientSet,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    let congruent = grads.congruent_with(params)
        && state.first_moment.len() == grads.tensors().len()
        && state
            .first_moment
            .iter()
            .zip(grads.tensors())
            .all(|(m, g)| m.len() == g.len());
    if !congruent {
        return Err(Error::Shape("gradient, optimizer state and parameters are not congruent".into()));
    }
    state.step_count += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let step = lr / (1.0 - b1.powf(state.step_count as f64));
    for (((theta, g), m), u) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.first_moment.iter_mut())
        .zip(state.inf_norm.iter_mut())
    {
        for i in 0..theta.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            u[i] = (b2 * u[i]).max(g[i].abs());
            theta[i] -= step * m[i] / (u[i] + eps);
        }
    }
    Ok(())
}

/// Free energy averaged over the minibatches of one epoch, each evaluated
/// just before its update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub recon_mean: f64,
    pub recon_var: f64,
    pub kl: f64,
    pub total: f64,
    /// Mean pre-clip gradient norm over the epoch's minibatches.
    pub grad_norm: f64,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,lr,recon_mean,recon_var,kl,total,grad_norm";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.lr, self.recon_mean, self.recon_var, self.kl, self.total, self.grad_norm
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRAIN_LOG_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

/// Where training writes as it goes. Everything is optional.
#[derive(Default)]
pub struct TrainOutputs<'a> {
    /// CSV log, one row appended and flushed per epoch.
    pub log_path: Option<PathBuf>,
    /// Checkpoints go here as `epoch_NNNNN.ckpt` plus `final.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Checkpoint interval in epochs; defaults to a tenth of the schedule.
    pub checkpoint_every: Option<usize>,
    pub on_epoch: Option<Box<dyn FnMut(&EpochRecord) + 'a>>,
}

pub fn checkpoint_path(dir: &Path, epoch: Option<usize>) -> PathBuf {
    match epoch {
        Some(e) => dir.join(format!("epoch_{e:05}.ckpt")),
        None => dir.join("final.ckpt"),
    }
}

pub fn train(model: ModelParams, data: &PatchBatch, config: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    train_with_outputs(model, data, config, TrainOutputs::default())
}

pub fn train_with_outputs(
    mut model: ModelParams,
    data: &PatchBatch,
    config: &TrainConfig,
    mut out: TrainOutputs<'_>,
) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    model.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training data is empty".into()));
    }
    if data.width() != model.input_dim() {
        return Err(Error::Shape(format!(
            "model expects {} pixels, data has {}",
            model.input_dim(),
            data.width()
        )));
    }

    let total_epochs = config.total_epochs();
    let every = out.checkpoint_every.unwrap_or((total_epochs / 10).max(1)).max(1);
    let mut log_file = match &out.log_path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            let mut f = BufWriter::new(File::create(p)?);
            writeln!(f, "{TRAIN_LOG_HEADER}")?;
            f.flush()?;
            Some(f)
        }
        None => None,
    };

    let mut state = OptimizerState::for_config(&model, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..total_epochs {
        let lr = lr_at(config, epoch)?;
        order.shuffle(&mut rng);
        let mut norm_sum = 0.0;
        let mut n_batches = 0usize;
        let mut sums = [0.0; 4];
        for (batch_idx, idx) in order.chunks(config.batch_size).enumerate() {
            let batch = data.select(idx);
            let (fe, grads) = free_energy_and_gradients(&model, &batch, config.beta)?;
            let bad = fe.nonfinite_component().or_else(|| {
                grads
                    .tensors()
                    .iter()
                    .any(|t| t.iter().any(|g| !g.is_finite()))
                    .then_some("gradient")
            });
            if let Some(component) = bad {
                return Err(Error::NonFinite { epoch, batch: batch_idx, component });
            }
            let w = idx.len() as f64;
            sums[0] += w * fe.mean_penalty;
            sums[1] += w * fe.variance_penalty;
            sums[2] += w * fe.kl;
            sums[3] += w * fe.total;
            norm_sum += grads.compute_norm();
            n_batches += 1;
            let grads = clip_gradients(grads, config.grad_clip)?;
            adamax_step(&mut model, &grads, &mut state, lr)?;
        }

        let n = data.len() as f64;
        let rec = EpochRecord {
            epoch,
            lr,
            recon_mean: sums[0] / n,
            recon_var: sums[1] / n,
            kl: sums[2] / n,
            total: sums[3] / n,
            grad_norm: norm_sum / n_batches as f64,
        };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", rec.csv_row())?;
            f.flush()?;
        }
        if let Some(cb) = out.on_epoch.as_mut() {
            cb(&rec);
        }
        log.records.push(rec);
        if let Some(dir) = &out.checkpoint_dir {
            if (epoch + 1) % every == 0 && epoch + 1 < total_epochs {
                save_checkpoint(&model, &checkpoint_path(dir, Some(epoch + 1)))?;
            }
        }
    }
    if let Some(dir) = &out.checkpoint_dir {
        save_checkpoint(&model, &checkpoint_path(dir, None))?;
    }
    Ok((model, log))
}
