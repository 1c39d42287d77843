//! Waveforms, log-mel spectrograms and their inversion.
//!
//! The front end is a centered (reflect-padded) Hann STFT, an HTK-scale
//! triangular mel filterbank over the power spectrum, a natural log with a
//! floor of [`LOG_FLOOR`], and an optional z-score against fixed corpus
//! statistics.

mod griffin_lim;
mod mel;
mod stft;
mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use griffin_lim::{griffin_lim, griffin_lim_traced, mel_to_linear_power, GriffinLimTrace};
pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};
pub use stft::{frame_count, hann_window, power_stft, Stft};
pub use wav::{read_wav, write_wav};

/// Floor applied to mel power before the natural log.
pub const LOG_FLOOR: f64 = 1e-10;

/// Mono audio buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("waveform contains non-finite samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

pub(crate) fn rms(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let sum: f64 = x.iter().map(|&v| (v as f64) * (v as f64)).sum();
    (sum / x.len() as f64).sqrt()
}

/// Front-end parameters. Defaults reproduce the 32 kHz, 256-mel setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub stft_bins: usize,
    pub mel_bins: usize,
    pub sample_rate: u32,
    pub clip_seconds: f64,
    pub zscore_mean: f64,
    pub zscore_std: f64,
    pub griffin_lim_iterations: usize,
    pub nnls_iterations: usize,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            fft_size: 2048,
            hop: 256,
            stft_bins: 1025,
            mel_bins: 256,
            sample_rate: 32_000,
            clip_seconds: 5.0,
            zscore_mean: -13.369,
            zscore_std: 13.162,
            griffin_lim_iterations: 32,
            nnls_iterations: 50,
        }
    }
}

impl DspConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.fft_size < 4 || !self.fft_size.is_multiple_of(2) {
            return bad("fft_size must be an even number >= 4");
        }
        if self.stft_bins != self.fft_size / 2 + 1 {
            return bad("stft_bins must equal fft_size/2 + 1");
        }
        if self.hop == 0 || self.hop > self.fft_size / 2 {
            return bad("hop must be in 1..=fft_size/2");
        }
        if self.mel_bins == 0 {
            return bad("mel_bins must be positive");
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        if !(self.clip_seconds > 0.0) {
            return bad("clip_seconds must be positive");
        }
        if !(self.zscore_std > 0.0) || !self.zscore_mean.is_finite() {
            return bad("zscore_std must be positive and zscore_mean finite");
        }
        Ok(())
    }

    /// Number of samples in one clip.
    pub fn clip_samples(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64).round() as usize
    }

    /// Number of STFT frames for one clip.
    pub fn clip_frames(&self) -> usize {
        frame_count(self.clip_samples(), self.hop)
    }

    pub fn frame_hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }
}

/// Log-mel grid stored row-major as `values[mel * frames + frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f64>,
    pub mel_bins: usize,
    pub frames: usize,
    pub standardized: bool,
    pub frame_hop_seconds: f64,
    pub mel_edges: Vec<f64>,
}

impl Spectrogram {
    #[inline]
    pub fn at(&self, mel: usize, frame: usize) -> f64 {
        self.values[mel * self.frames + frame]
    }

    #[inline]
    pub fn at_mut(&mut self, mel: usize, frame: usize) -> &mut f64 {
        &mut self.values[mel * self.frames + frame]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.mel_bins, self.frames)
    }

    /// Copies the column range `[start, end)` into a new spectrogram.
    pub fn slice_frames(&self, start: usize, end: usize) -> Spectrogram {
        let end = end.min(self.frames);
        let start = start.min(end);
        let frames = end - start;
        let mut values = Vec::with_capacity(self.mel_bins * frames);
        for m in 0..self.mel_bins {
            let row = &self.values[m * self.frames..(m + 1) * self.frames];
            values.extend_from_slice(&row[start..end]);
        }
        Spectrogram {
            values,
            mel_bins: self.mel_bins,
            frames,
            standardized: self.standardized,
            frame_hop_seconds: self.frame_hop_seconds,
            mel_edges: self.mel_edges.clone(),
        }
    }
}

/// Splits a waveform into consecutive non-overlapping clips of `clip_seconds`.
/// The final partial clip is zero-padded to full length.
pub fn segment(w: &Waveform, clip_seconds: f64) -> Result<Vec<Waveform>> {
    if w.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(clip_seconds > 0.0) {
        return Err(Error::Config("clip_seconds must be positive".into()));
    }
    let clip = (clip_seconds * w.sample_rate as f64).round() as usize;
    if clip == 0 {
        return Err(Error::Config("clip shorter than one sample".into()));
    }
    Ok(w.samples
        .chunks(clip)
        .map(|c| {
            let mut samples = c.to_vec();
            samples.resize(clip, 0.0);
            Waveform {
                samples,
                sample_rate: w.sample_rate,
            }
        })
        .collect())
}

/// Computes the raw (unstandardized) log-mel spectrogram of one clip.
pub fn logmel(w: &Waveform, cfg: &DspConfig) -> Result<Spectrogram> {
    LogMel::new(cfg)?.compute(w)
}

/// Reusable log-mel front end holding the FFT plan and filterbank.
pub struct LogMel {
    cfg: DspConfig,
    stft: Stft,
    filterbank: MelFilterbank,
}

impl LogMel {
    pub fn new(cfg: &DspConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            stft: Stft::new(cfg.fft_size, cfg.hop),
            filterbank: MelFilterbank::htk(cfg.mel_bins, cfg.fft_size, cfg.sample_rate),
        })
    }

    pub fn config(&self) -> &DspConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Log-mel of exactly one clip; the length must equal the configured clip length.
    pub fn compute(&self, w: &Waveform) -> Result<Spectrogram> {
        if w.sample_rate != self.cfg.sample_rate {
            return Err(Error::SampleRate {
                expected: self.cfg.sample_rate,
                actual: w.sample_rate,
            });
        }
        let expected = self.cfg.clip_samples();
        if w.len() != expected {
            return Err(Error::ClipLength {
                expected,
                actual: w.len(),
            });
        }
        Ok(self.compute_any_length(&w.samples))
    }

    /// Log-mel of an arbitrary-length buffer at the configured sample rate.
    pub fn compute_any_length(&self, samples: &[f32]) -> Spectrogram {
        let power = self.stft.power(samples);
        let frames = power.len();
        let mel_bins = self.cfg.mel_bins;
        let mut values = vec![0.0; mel_bins * frames];
        for (t, spec) in power.iter().enumerate() {
            let mel = self.filterbank.apply(spec);
            for (m, p) in mel.into_iter().enumerate() {
                values[m * frames + t] = p.max(LOG_FLOOR).ln();
            }
        }
        Spectrogram {
            values,
            mel_bins,
            frames,
            standardized: false,
            frame_hop_seconds: self.cfg.frame_hop_seconds(),
            mel_edges: self.filterbank.edges_hz().to_vec(),
        }
    }
}

/// Z-scores a raw log-mel spectrogram with the configured corpus statistics.
pub fn standardize(s: &Spectrogram, cfg: &DspConfig) -> Result<Spectrogram> {
    if s.standardized {
        return Err(Error::AlreadyStandardized);
    }
    let mut out = s.clone();
    out.values
        .iter_mut()
        .for_each(|v| *v = (*v - cfg.zscore_mean) / cfg.zscore_std);
    out.standardized = true;
    Ok(out)
}

/// Inverse of [`standardize`].
pub fn unstandardize(s: &Spectrogram, cfg: &DspConfig) -> Result<Spectrogram> {
    if !s.standardized {
        return Err(Error::NotStandardized);
    }
    let mut out = s.clone();
    out.values
        .iter_mut()
        .for_each(|v| *v = *v * cfg.zscore_std + cfg.zscore_mean);
    out.standardized = false;
    Ok(out)
}

/// Running mean/std of raw log-mel values, for recomputing z-score constants.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogMelStats {
    pub count: u64,
    pub mean: f64,
    pub std: f64,
    #[serde(skip)]
    m2: f64,
}

impl LogMelStats {
    pub fn push_all(&mut self, values: &[f64]) {
        for &v in values {
            self.count += 1;
            let delta = v - self.mean;
            self.mean += delta / self.count as f64;
            self.m2 += delta * (v - self.mean);
        }
        self.std = if self.count > 0 {
            (self.m2 / self.count as f64).sqrt()
        } else {
            0.0
        };
    }
}
