//! Stochastic training augmentations on waveforms and spectrograms.
//!
//! Order: time shift → background noise → colored noise → gain → mixup →
//! no-call swap → (log-mel) → frequency mask → time mask. Every random draw
//! comes from a ChaCha stream keyed by `(seed, epoch, instance)`, so results
//! do not depend on scheduling.

use log::warn;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{rms, Spectrogram, Waveform};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub p_time_shift: f64,
    pub p_background: f64,
    pub p_colored_noise: f64,
    pub p_gain: f64,
    pub p_mixup: f64,
    pub p_nocall: f64,
    pub p_freq_mask: f64,
    pub p_time_mask: f64,
    pub mixup_max_partners: usize,
    pub shift_window_seconds: f64,
    pub background_snr_db: (f64, f64),
    pub colored_snr_db: (f64, f64),
    pub colored_alpha: (f64, f64),
    pub gain_range_db: (f64, f64),
    pub mask_max_fraction: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_time_shift: 1.0,
            p_background: 0.5,
            p_colored_noise: 0.2,
            p_gain: 0.2,
            p_mixup: 0.8,
            p_nocall: 0.075,
            p_freq_mask: 0.5,
            p_time_mask: 0.3,
            mixup_max_partners: 3,
            shift_window_seconds: 8.0,
            background_snr_db: (3.0, 30.0),
            colored_snr_db: (10.0, 40.0),
            colored_alpha: (0.0, 2.0),
            gain_range_db: (-12.0, 12.0),
            mask_max_fraction: 0.2,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every augmentation switched off.
    pub fn disabled() -> Self {
        Self {
            p_time_shift: 0.0,
            p_background: 0.0,
            p_colored_noise: 0.0,
            p_gain: 0.0,
            p_mixup: 0.0,
            p_nocall: 0.0,
            p_freq_mask: 0.0,
            p_time_mask: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.p_time_shift,
            self.p_background,
            self.p_colored_noise,
            self.p_gain,
            self.p_mixup,
            self.p_nocall,
            self.p_freq_mask,
            self.p_time_mask,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("augmentation probabilities must be in [0, 1]".into()));
        }
        if self.mixup_max_partners < 2 {
            return Err(Error::Config("mixup_max_partners must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_max_fraction) {
            return Err(Error::Config("mask_max_fraction must be in [0, 1]".into()));
        }
        for (name, (lo, hi)) in [
            ("background_snr_db", self.background_snr_db),
            ("colored_snr_db", self.colored_snr_db),
            ("colored_alpha", self.colored_alpha),
            ("gain_range_db", self.gain_range_db),
        ] {
            if !(lo <= hi) {
                return Err(Error::Config(format!("{name} must be an ordered interval")));
            }
        }
        Ok(())
    }
}

/// A waveform with its binary class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub waveform: Waveform,
    pub labels: Vec<bool>,
}

/// Independent random stream for `(seed, epoch, instance)`.
pub fn instance_rng(seed: u64, epoch: u64, instance: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(instance.wrapping_mul(4).wrapping_add(stream));
    rng
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Uniformly random crop of `context` with the clip's length; labels unchanged.
pub fn time_shift(clip: &LabeledClip, context: &Waveform, rng: &mut impl Rng) -> LabeledClip {
    let len = clip.waveform.len();
    let mut ctx = context.samples.clone();
    if ctx.len() < len {
        ctx.resize(len, 0.0);
    }
    let start = rng.random_range(0..=ctx.len() - len);
    LabeledClip {
        waveform: Waveform {
            samples: ctx[start..start + len].to_vec(),
            sample_rate: clip.waveform.sample_rate,
        },
        labels: clip.labels.clone(),
    }
}

/// Random `len`-sample excerpt of `source`, tiled if it is shorter.
fn excerpt(source: &Waveform, len: usize, rng: &mut impl Rng) -> Vec<f32> {
    if source.is_empty() {
        return vec![0.0; len];
    }
    if source.len() >= len {
        let start = rng.random_range(0..=source.len() - len);
        return source.samples[start..start + len].to_vec();
    }
    source.samples.iter().copied().cycle().take(len).collect()
}

/// Gain applied to `noise` so that `signal` sits `snr_db` above it. Zero when either is silent.
pub fn gain_for_snr(signal: &[f32], noise: &[f32], snr_db: f64) -> f64 {
    let (ps, pn) = (rms(signal), rms(noise));
    if ps == 0.0 || pn == 0.0 {
        return 0.0;
    }
    ps / pn / 10f64.powf(snr_db / 20.0)
}

/// `signal + g·noise`.
pub fn add_scaled(signal: &[f32], noise: &[f32], g: f64) -> Vec<f32> {
    signal
        .iter()
        .zip(noise)
        .map(|(&s, &n)| (s as f64 + g * n as f64) as f32)
        .collect()
}

/// Adds a random excerpt from the background pool at a random SNR.
pub fn mix_background(
    clip: &LabeledClip,
    pool: &[Waveform],
    snr_db: (f64, f64),
    rng: &mut impl Rng,
) -> LabeledClip {
    if pool.is_empty() {
        warn!("background pool is empty; skipping background mix");
        return clip.clone();
    }
    let noise = excerpt(&pool[rng.random_range(0..pool.len())], clip.waveform.len(), rng);
    let g = gain_for_snr(&clip.waveform.samples, &noise, uniform(rng, snr_db));
    LabeledClip {
        waveform: Waveform {
            samples: add_scaled(&clip.waveform.samples, &noise, g),
            sample_rate: clip.waveform.sample_rate,
        },
        labels: clip.labels.clone(),
    }
}

/// Unit-RMS noise with power spectral density ∝ 1/f^alpha.
pub fn colored_noise_signal(len: usize, alpha: f64, rng: &mut impl Rng) -> Vec<f32> {
    if len < 2 {
        return vec![0.0; len];
    }
    let mut spec = vec![Complex::new(0.0, 0.0); len];
    for k in 1..=len / 2 {
        let amp = (k as f64).powf(-alpha / 2.0);
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = if 2 * k == len { 0.0 } else { StandardNormal.sample(rng) };
        spec[k] = Complex::new(re * amp, im * amp);
        if 2 * k != len {
            spec[len - k] = spec[k].conj();
        }
    }
    FftPlanner::new().plan_fft_inverse(len).process(&mut spec);
    let x: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let r = (x.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if r == 0.0 {
        return vec![0.0; len];
    }
    x.iter().map(|v| (v / r) as f32).collect()
}

/// Adds 1/f^α noise with α and SNR drawn from the configured ranges.
pub fn colored_noise(clip: &LabeledClip, cfg: &AugmentConfig, rng: &mut impl Rng) -> LabeledClip {
    let alpha = uniform(rng, cfg.colored_alpha);
    let snr = uniform(rng, cfg.colored_snr_db);
    let noise = colored_noise_signal(clip.waveform.len(), alpha, rng);
    let g = gain_for_snr(&clip.waveform.samples, &noise, snr);
    LabeledClip {
        waveform: Waveform {
            samples: add_scaled(&clip.waveform.samples, &noise, g),
            sample_rate: clip.waveform.sample_rate,
        },
        labels: clip.labels.clone(),
    }
}

pub fn apply_gain_db(samples: &[f32], db: f64) -> Vec<f32> {
    let k = 10f64.powf(db / 20.0);
    samples.iter().map(|&s| (s as f64 * k) as f32).collect()
}

/// Scales amplitude by a gain drawn uniformly in decibels.
pub fn gain(clip: &LabeledClip, range_db: (f64, f64), rng: &mut impl Rng) -> LabeledClip {
    LabeledClip {
        waveform: Waveform {
            samples: apply_gain_db(&clip.waveform.samples, uniform(rng, range_db)),
            sample_rate: clip.waveform.sample_rate,
        },
        labels: clip.labels.clone(),
    }
}

/// Weighted waveform sum with OR-ed labels.
pub fn mix_clips(parts: &[&LabeledClip], weights: &[f64]) -> LabeledClip {
    let len = parts[0].waveform.len();
    let mut samples = vec![0.0f64; len];
    let mut labels = vec![false; parts[0].labels.len()];
    for (p, &w) in parts.iter().zip(weights) {
        for (acc, &s) in samples.iter_mut().zip(&p.waveform.samples) {
            *acc += w * s as f64;
        }
        labels.iter_mut().zip(&p.labels).for_each(|(a, &b)| *a |= b);
    }
    LabeledClip {
        waveform: Waveform {
            samples: samples.into_iter().map(|v| v as f32).collect(),
            sample_rate: parts[0].waveform.sample_rate,
        },
        labels,
    }
}

/// Multi-label mixup: with probability `p_mixup` each instance is replaced by a
/// mix of itself and 1..`max_partners-1` other batch members, with weights
/// uniform on the simplex and hard (OR) labels.
pub fn mixup(batch: &[LabeledClip], cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<LabeledClip> {
    if batch.len() < 2 {
        return batch.to_vec();
    }
    batch
        .iter()
        .enumerate()
        .map(|(i, clip)| {
            if !rng.random_bool(cfg.p_mixup) {
                return clip.clone();
            }
            let k = rng.random_range(2..=cfg.mixup_max_partners).min(batch.len());
            let mut parts = vec![clip];
            for idx in sample(rng, batch.len() - 1, k - 1) {
                parts.push(&batch[if idx >= i { idx + 1 } else { idx }]);
            }
            let raw: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let total: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            mix_clips(&parts, &weights)
        })
        .collect()
}

/// Replaces the clip by a random no-call excerpt labeled with the zero vector.
pub fn nocall_swap(clip: &LabeledClip, pool: &[Waveform], rng: &mut impl Rng) -> LabeledClip {
    if pool.is_empty() {
        warn!("no-call pool is empty; skipping no-call swap");
        return clip.clone();
    }
    let source = &pool[rng.random_range(0..pool.len())];
    LabeledClip {
        waveform: Waveform {
            samples: excerpt(source, clip.waveform.len(), rng),
            sample_rate: clip.waveform.sample_rate,
        },
        labels: vec![false; clip.labels.len()],
    }
}

/// Zeroes mel rows `[start, start + width)` of a standardized spectrogram.
pub fn mask_frequencies(s: &mut Spectrogram, start: usize, width: usize) {
    for m in start..(start + width).min(s.mel_bins) {
        for t in 0..s.frames {
            *s.at_mut(m, t) = 0.0;
        }
    }
}

/// Zeroes frames `[start, start + width)` of a standardized spectrogram.
pub fn mask_time(s: &mut Spectrogram, start: usize, width: usize) {
    for m in 0..s.mel_bins {
        for t in start..(start + width).min(s.frames) {
            *s.at_mut(m, t) = 0.0;
        }
    }
}

fn random_band(extent: usize, max_fraction: f64, rng: &mut impl Rng) -> (usize, usize) {
    let max_width = (max_fraction * extent as f64).floor() as usize;
    let width = rng.random_range(0..=max_width);
    let start = rng.random_range(0..=extent - width);
    (start, width)
}

/// Frequency then time masking on a standardized spectrogram.
pub fn spec_masks(s: &Spectrogram, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Spectrogram> {
    if !s.standardized {
        return Err(Error::NotStandardized);
    }
    let mut out = s.clone();
    if rng.random_bool(cfg.p_freq_mask) {
        let (start, width) = random_band(s.mel_bins, cfg.mask_max_fraction, rng);
        mask_frequencies(&mut out, start, width);
    }
    if rng.random_bool(cfg.p_time_mask) {
        let (start, width) = random_band(s.frames, cfg.mask_max_fraction, rng);
        mask_time(&mut out, start, width);
    }
    Ok(out)
}

/// Augmentation pipeline with its noise pools.
#[derive(Debug, Clone, Default)]
pub struct Augmenter {
    pub config: AugmentConfig,
    pub background: Vec<Waveform>,
    pub nocall: Vec<Waveform>,
}

impl Augmenter {
    pub fn new(config: AugmentConfig, background: Vec<Waveform>, nocall: Vec<Waveform>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            background,
            nocall,
        })
    }

    /// Waveform-stage augmentations for one batch.
    ///
    /// `contexts[i]` is the longer recording window instance `i` was cut from
    /// (or the clip itself); `ids[i]` is the instance's stable index, used to
    /// key its random stream.
    pub fn augment_waveforms(
        &self,
        batch: &[LabeledClip],
        contexts: &[&Waveform],
        ids: &[u64],
        epoch: u64,
    ) -> Vec<LabeledClip> {
        let cfg = &self.config;
        let seed = cfg.seed;
        let idx: Vec<usize> = (0..batch.len()).collect();
        let pre: Vec<LabeledClip> = par::map_slice(&idx, |&i| {
            let mut rng = instance_rng(seed, epoch, ids[i], 0);
            let mut clip = batch[i].clone();
            if rng.random_bool(cfg.p_time_shift) {
                clip = time_shift(&clip, contexts[i], &mut rng);
            }
            if rng.random_bool(cfg.p_background) {
                clip = mix_background(&clip, &self.background, cfg.background_snr_db, &mut rng);
            }
            if rng.random_bool(cfg.p_colored_noise) {
                clip = colored_noise(&clip, cfg, &mut rng);
            }
            if rng.random_bool(cfg.p_gain) {
                clip = gain(&clip, cfg.gain_range_db, &mut rng);
            }
            clip
        });
        let first = ids.first().copied().unwrap_or(0);
        let mut batch_rng = instance_rng(seed, epoch, first, 1);
        let mixed = if cfg.p_mixup > 0.0 {
            mixup(&pre, cfg, &mut batch_rng)
        } else {
            pre
        };
        par::map_slice(&idx, |&i| {
            let mut rng = instance_rng(seed, epoch, ids[i], 2);
            if rng.random_bool(cfg.p_nocall) {
                nocall_swap(&mixed[i], &self.nocall, &mut rng)
            } else {
                mixed[i].clone()
            }
        })
    }

    /// Spectrogram-stage masks for instance `id`.
    pub fn augment_spectrogram(&self, s: &Spectrogram, id: u64, epoch: u64) -> Result<Spectrogram> {
        let mut rng = instance_rng(self.config.seed, epoch, id, 3);
        spec_masks(s, &self.config, &mut rng)
    }
}
