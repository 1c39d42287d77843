//! Fine-tuning of the prototype bank and head on frozen embeddings.
//!
//! AdamW with two parameter groups (prototypes; head weights and bias), a
//! linear-warmup cosine schedule per group, a non-negativity projection of the
//! head after every step, and checkpoint selection by validation loss.

use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{Augmenter, LabeledClip};
use crate::dsp::{standardize, DspConfig, LogMel, Waveform};
use crate::embed::{Backbone, EmbeddingMap};
use crate::error::{Error, Result};
use crate::objective::{total_loss_and_grads, LossConfig};
use crate::par;
use crate::protonet::{save_checkpoint, CheckpointMeta, PrototypeBank};

pub const SIDECAR_FILE: &str = "optimizer_state.json";
pub const CHECKPOINT_FILE: &str = "best.appb";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_prototypes: f64,
    pub lr_head: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub betas: (f64, f64),
    pub eps_adam: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            lr_prototypes: 0.05,
            lr_head: 5e-4,
            weight_decay: 1e-4,
            warmup_ratio: 0.05,
            betas: (0.9, 0.999),
            eps_adam: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config("warmup_ratio must be in [0, 1)".into()));
        }
        if !(self.lr_prototypes >= 0.0 && self.lr_head >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.eps_adam > 0.0) {
            return Err(Error::Config("weight_decay must be >= 0 and eps_adam > 0".into()));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config("betas must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// Learning rate at `step`: linear ramp from 0 over `ceil(warmup_ratio·total)`
/// steps, then half-cosine decay to 0 at `total`.
pub fn lr_at(step: usize, total: usize, base: f64, warmup_ratio: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("total_steps must be positive".into()));
    }
    let step = step.min(total);
    let warmup = (warmup_ratio * total as f64).ceil() as usize;
    if step < warmup {
        return Ok(base * step as f64 / warmup as f64);
    }
    if warmup >= total {
        return Ok(base);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// First and second Adam moments for one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

struct AdamStep {
    lr: f64,
    weight_decay: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    t: i32,
}

impl AdamStep {
    fn apply(&self, params: &mut [f64], grads: &[f64], mom: &mut Moments) {
        let bc1 = 1.0 - self.b1.powi(self.t);
        let bc2 = 1.0 - self.b2.powi(self.t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i];
            mom.m[i] = self.b1 * mom.m[i] + (1.0 - self.b1) * g;
            mom.v[i] = self.b2 * mom.v[i] + (1.0 - self.b2) * g * g;
            if self.lr != 0.0 {
                let mhat = mom.m[i] / bc1;
                let vhat = mom.v[i] / bc2;
                *p = *p * decay - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Completed epochs.
    pub epoch: usize,
    #[serde(with = "bank_serde")]
    pub bank: PrototypeBank,
    pub prototypes: Moments,
    pub head_weights: Moments,
    pub head_bias: Moments,
    pub best_val_loss: Option<f64>,
    /// Relative to the output directory, so relocated runs stay byte-identical.
    pub best_checkpoint_path: Option<PathBuf>,
}

mod bank_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::protonet::PrototypeBank;

    #[derive(Serialize, Deserialize)]
    struct Raw {
        num_classes: usize,
        per_class: usize,
        dim: usize,
        prototypes: Vec<f64>,
        head_weights: Vec<f64>,
        head_bias: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(b: &PrototypeBank, s: S) -> Result<S::Ok, S::Error> {
        Raw {
            num_classes: b.num_classes,
            per_class: b.per_class,
            dim: b.dim,
            prototypes: b.prototypes.clone(),
            head_weights: b.head_weights.clone(),
            head_bias: b.head_bias.clone(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<PrototypeBank, D::Error> {
        let r = Raw::deserialize(d)?;
        PrototypeBank::new(r.prototypes, r.head_weights, r.head_bias, r.num_classes, r.per_class, r.dim)
            .map_err(serde::de::Error::custom)
    }
}

impl TrainState {
    pub fn new(bank: PrototypeBank) -> Self {
        Self {
            step: 0,
            epoch: 0,
            prototypes: Moments::zeros(bank.prototypes.len()),
            head_weights: Moments::zeros(bank.head_weights.len()),
            head_bias: Moments::zeros(bank.head_bias.len()),
            bank,
            best_val_loss: None,
            best_checkpoint_path: None,
        }
    }

    pub fn save_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = serde_json::to_vec(self)?;
        fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load_sidecar(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// A labeled training or validation set that yields embeddings by index.
pub trait Dataset: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn id(&self, i: usize) -> &str;

    /// Embeddings and `len × C` labels for `indices`. With `augment` set the
    /// training-time augmentations for `epoch` are applied.
    fn batch(&self, indices: &[usize], epoch: usize, augment: bool) -> Result<(Vec<EmbeddingMap>, Vec<bool>)>;
}

/// Precomputed embeddings; augmentation does not apply.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingDataset {
    pub items: Vec<(String, EmbeddingMap, Vec<bool>)>,
}

impl Dataset for EmbeddingDataset {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn id(&self, i: usize) -> &str {
        &self.items[i].0
    }

    fn batch(&self, indices: &[usize], _epoch: usize, _augment: bool) -> Result<(Vec<EmbeddingMap>, Vec<bool>)> {
        let maps = indices.iter().map(|&i| self.items[i].1.clone()).collect();
        let labels = indices.iter().flat_map(|&i| self.items[i].2.iter().copied()).collect();
        Ok((maps, labels))
    }
}

/// One training clip together with the longer window it was cut from.
#[derive(Debug, Clone)]
pub struct AudioItem {
    pub id: String,
    pub clip: LabeledClip,
    pub context: Waveform,
}

/// Audio clips embedded on the fly through a frozen backbone, with online augmentation.
pub struct AudioDataset<'a> {
    pub items: Vec<AudioItem>,
    front: LogMel,
    dsp: DspConfig,
    backbone: &'a Backbone,
    augmenter: Augmenter,
}

impl<'a> AudioDataset<'a> {
    pub fn new(items: Vec<AudioItem>, dsp: &DspConfig, backbone: &'a Backbone, augmenter: Augmenter) -> Result<Self> {
        Ok(Self {
            items,
            front: LogMel::new(dsp)?,
            dsp: dsp.clone(),
            backbone,
            augmenter,
        })
    }
}

impl Dataset for AudioDataset<'_> {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn id(&self, i: usize) -> &str {
        &self.items[i].id
    }

    fn batch(&self, indices: &[usize], epoch: usize, augment: bool) -> Result<(Vec<EmbeddingMap>, Vec<bool>)> {
        let clips: Vec<LabeledClip> = if augment {
            let raw: Vec<LabeledClip> = indices.iter().map(|&i| self.items[i].clip.clone()).collect();
            let contexts: Vec<&Waveform> = indices.iter().map(|&i| &self.items[i].context).collect();
            let ids: Vec<u64> = indices.iter().map(|&i| i as u64).collect();
            self.augmenter.augment_waveforms(&raw, &contexts, &ids, epoch as u64)
        } else {
            indices.iter().map(|&i| self.items[i].clip.clone()).collect()
        };
        let slots: Vec<usize> = (0..indices.len()).collect();
        let maps = par::map_slice(&slots, |&k| {
            let s = standardize(&self.front.compute(&clips[k].waveform)?, &self.dsp)?;
            let s = if augment {
                self.augmenter.augment_spectrogram(&s, indices[k] as u64, epoch as u64)?
            } else {
                s
            };
            self.backbone.extract(&s)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let labels = clips.into_iter().flat_map(|c| c.labels).collect();
        Ok((maps, labels))
    }
}

/// One JSON line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub lr_prototypes: f64,
    pub lr_head: f64,
    pub asym: f64,
    pub ortho: f64,
    pub total: f64,
    pub grad_norm: f64,
}

/// Per-epoch outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub improved: bool,
}

/// Deterministic permutation of `0..n` for `epoch`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Runs one epoch of shuffled mini-batch updates and returns the mean batch loss.
pub fn train_epoch(
    state: &mut TrainState,
    data: &dyn Dataset,
    cfg: &TrainConfig,
    loss: &LossConfig,
    total_steps: usize,
    log: &mut dyn FnMut(&StepLog),
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let c = state.bank.num_classes;
    let order = epoch_permutation(data.len(), cfg.seed, state.epoch);
    let mut sum = 0.0;
    let mut batches = 0usize;
    for idx in order.chunks(cfg.batch_size) {
        let (maps, labels) = data.batch(idx, state.epoch, true)?;
        if labels.len() != maps.len() * c {
            return Err(Error::Shape(format!("labels must be {}x{c}", maps.len())));
        }
        let refs: Vec<&EmbeddingMap> = maps.iter().collect();
        let report = total_loss_and_grads(&refs, &labels, &state.bank, loss)?;
        if !report.total.is_finite() || report.grad_norm().is_nan() {
            return Err(Error::NonFiniteLoss {
                step: state.step,
                ids: idx.iter().map(|&i| data.id(i).to_string()).collect(),
            });
        }
        let lr_p = lr_at(state.step, total_steps, cfg.lr_prototypes, cfg.warmup_ratio)?;
        let lr_h = lr_at(state.step, total_steps, cfg.lr_head, cfg.warmup_ratio)?;
        let step = |lr, weight_decay| AdamStep {
            lr,
            weight_decay,
            b1: cfg.betas.0,
            b2: cfg.betas.1,
            eps: cfg.eps_adam,
            t: (state.step + 1).min(i32::MAX as usize) as i32,
        };
        step(lr_p, cfg.weight_decay).apply(&mut state.bank.prototypes, &report.grad_prototypes, &mut state.prototypes);
        step(lr_h, cfg.weight_decay).apply(&mut state.bank.head_weights, &report.grad_weights, &mut state.head_weights);
        step(lr_h, 0.0).apply(&mut state.bank.head_bias, &report.grad_bias, &mut state.head_bias);
        state.bank.project_nonnegative();
        log(&StepLog {
            epoch: state.epoch,
            step: state.step,
            lr_prototypes: lr_p,
            lr_head: lr_h,
            asym: report.asym,
            ortho: report.ortho,
            total: report.total,
            grad_norm: report.grad_norm(),
        });
        state.step += 1;
        sum += report.total;
        batches += 1;
    }
    state.epoch += 1;
    Ok(sum / batches as f64)
}

/// Total loss over the whole set without augmentation or parameter updates.
pub fn validate(bank: &PrototypeBank, data: &dyn Dataset, loss: &LossConfig, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let mut asym = 0.0;
    let mut total = 0.0;
    for idx in all.chunks(batch_size.max(1)) {
        let (maps, labels) = data.batch(idx, 0, false)?;
        let refs: Vec<&EmbeddingMap> = maps.iter().collect();
        let r = total_loss_and_grads(&refs, &labels, bank, loss)?;
        asym += r.asym * idx.len() as f64;
        total = r.total - r.asym;
    }
    Ok(asym / data.len() as f64 + total)
}

/// Outcome of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub epochs: Vec<EpochLog>,
    /// Bank with the lowest validation loss (the last one without a validation set).
    pub best_bank: PrototypeBank,
}

/// Trains for the configured number of epochs starting from `state.epoch`.
///
/// With `out_dir`, the checkpoint is rewritten only when the validation loss
/// improves and the optimizer sidecar is written after every epoch.
pub fn fit(
    state: &mut TrainState,
    train: &dyn Dataset,
    val: Option<&dyn Dataset>,
    cfg: &TrainConfig,
    loss: &LossConfig,
    out_dir: Option<&Path>,
    meta: &CheckpointMeta,
    log: &mut dyn FnMut(&StepLog),
) -> Result<FitSummary> {
    cfg.validate()?;
    loss.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total_steps = cfg.epochs * cfg.steps_per_epoch(train.len());
    let mut best_bank = state.bank.clone();
    let mut epochs = Vec::new();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let train_loss = train_epoch(state, train, cfg, loss, total_steps, log)?;
        let val_loss = match val {
            Some(v) => Some(validate(&state.bank, v, loss, cfg.batch_size)?),
            None => None,
        };
        let improved = match (val_loss, state.best_val_loss) {
            (Some(v), Some(b)) => v < b,
            (Some(_), None) => true,
            (None, _) => true,
        };
        if improved {
            if let Some(v) = val_loss {
                state.best_val_loss = Some(v);
            }
            best_bank = state.bank.clone();
            if let Some(dir) = out_dir {
                save_checkpoint(dir.join(CHECKPOINT_FILE), &state.bank, meta)?;
                state.best_checkpoint_path = Some(PathBuf::from(CHECKPOINT_FILE));
            }
        }
        if let Some(dir) = out_dir {
            state.save_sidecar(dir.join(SIDECAR_FILE))?;
        }
        info!("epoch {epoch}: train {train_loss:.6} val {val_loss:?} improved {improved}");
        debug!("step {}", state.step);
        epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            improved,
        });
    }
    Ok(FitSummary { epochs, best_bank })
}
