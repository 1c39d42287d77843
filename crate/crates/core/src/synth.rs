//! Synthetic planted-motif corpus with known labels and motif locations.
//!
//! Eight motif classes with distinct spectro-temporal textures (sawtooth
//! sweeps, parallel tones, trills, noise bursts, band noise, click trains and
//! a tone comb), each drawn in mel coordinates at a random pitch and planted
//! into colored background noise. Clips may carry a second motif, possibly
//! overlapping the first, or the same motif twice.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::colored_noise_signal;
use crate::dsp::{hz_to_mel, mel_to_hz, standardize, DspConfig, LogMel, Spectrogram, Waveform};
use crate::embed::{Backbone, ConvLayerSpec, EmbeddingMap, ToyBackboneConfig};
use crate::error::Result;
use crate::explain::SpecBox;
use crate::par;

pub const NUM_CLASSES: usize = 8;

/// Texture period, deliberately not a divisor of the 64 ms backbone cell so
/// every motif covers all texture phases.
pub const PERIOD: f64 = 0.025;

/// Small front end: 16 kHz, 1 s clips, 64 mel bins, 126 frames, z-scored
/// with statistics measured on the default corpus.
pub fn dsp_config() -> DspConfig {
    DspConfig {
        fft_size: 512,
        hop: 128,
        stft_bins: 257,
        mel_bins: 64,
        sample_rate: 16_000,
        clip_seconds: 1.0,
        zscore_mean: -1.742,
        zscore_std: 3.871,
        ..DspConfig::default()
    }
}

/// Stride-8 backbone: zero-mean patchify stem, a 2×2 downsampling layer and
/// a padded 3×3 layer that lets each cell see its neighbours without moving
/// cell centers.
pub fn backbone_config() -> ToyBackboneConfig {
    let l = ConvLayerSpec::new;
    ToyBackboneConfig {
        layers: vec![l(4, 4, 15), l(2, 2, 64), l(3, 1, 64).padded(1)],
        seed: 0,
        zero_mean_stem: true,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub dsp: DspConfig,
    pub motif_seconds: f64,
    /// Motif height in mel bins.
    pub motif_bins: usize,
    /// Texture repetition period in seconds.
    pub period: f64,
    /// Probability of a second motif of another class.
    pub p_second: f64,
    /// Probability that the first motif is planted twice.
    pub p_repeat: f64,
    pub amplitude: (f64, f64),
    pub noise_rms: (f64, f64),
    /// Spectral tilt range of the background noise.
    pub noise_alpha: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dsp: dsp_config(),
            motif_seconds: 0.4,
            motif_bins: 32,
            period: PERIOD,
            p_second: 0.35,
            p_repeat: 0.15,
            amplitude: (0.2, 0.5),
            noise_rms: (0.003, 0.06),
            noise_alpha: (0.0, 2.0),
        }
    }
}

/// One planted motif occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedMotif {
    pub class: usize,
    pub start: usize,
    pub len: usize,
    /// Band edges in mel.
    pub mel_lo: f64,
    pub mel_hi: f64,
    /// Region in spectrogram coordinates.
    pub bbox: SpecBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub id: String,
    pub waveform: Waveform,
    pub labels: Vec<bool>,
    pub motifs: Vec<PlantedMotif>,
}

impl SynthClip {
    /// Whether class `c` is planted more than once.
    pub fn repeated(&self, c: usize) -> bool {
        self.motifs.iter().filter(|m| m.class == c).count() > 1
    }
}

/// Mel spacing between adjacent filter centers.
fn mel_step(dsp: &DspConfig) -> f64 {
    hz_to_mel(dsp.sample_rate as f64 / 2.0) / (dsp.mel_bins + 1) as f64
}

fn taper(i: usize, n: usize) -> f64 {
    let ramp = (n / 10).max(1);
    if i < ramp {
        0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos()
    } else if i >= n - ramp {
        0.5 - 0.5 * (PI * (n - 1 - i) as f64 / ramp as f64).cos()
    } else {
        1.0
    }
}

/// Waveform of a class-`c` motif of `len` samples spanning `[mel_lo, mel_hi]`.
///
/// Textures are defined on the mel axis so a motif looks the same at any
/// pitch; pooled similarity over an equivariant backbone cannot see absolute
/// position anyway. Textures repeat every `period` seconds and every few mel bins.
pub fn render_motif(
    c: usize,
    len: usize,
    mel_lo: f64,
    mel_hi: f64,
    period: f64,
    dsp: &DspConfig,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let sr = dsp.sample_rate as f64;
    let height = (mel_hi - mel_lo) / mel_step(dsp);
    let at = |u: f64| mel_to_hz(mel_lo + (mel_hi - mel_lo) * u.clamp(0.0, 1.0));
    // tones every `spacing` mel bins, centered in the band
    let stack = |spacing: f64| -> Vec<f64> {
        let n = ((height / spacing).floor() as usize).max(1);
        let pad = (height - (n - 1) as f64 * spacing) / 2.0;
        (0..n).map(|k| (pad + k as f64 * spacing) / height).collect()
    };
    let us = match c {
        2 => stack(3.0),
        4..=6 => stack(4.0),
        7 => stack(6.0),
        _ => vec![0.0],
    };
    // per-class frequency modulation of the stack, in band fractions
    let glide = 4.0 / height;
    let wobble = |t: f64| match c {
        5 => -glide * (t / period).fract(),
        6 => glide * (t / period).fract(),
        7 => 1.5 / height * (TAU * t / period).sin(),
        _ => 0.0,
    };
    let mut phases: Vec<f64> = us.iter().map(|_| rng.random_range(0.0..TAU)).collect();
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let t = i as f64 / sr;
        let v = match c {
            // full-band chirp trains, rising or falling, and a zigzag
            0 | 1 | 3 => {
                let u = match c {
                    0 => (t / period).fract(),
                    1 => 1.0 - (t / period).fract(),
                    _ => 0.05 + 0.9 * (1.0 - (2.0 * (t / period).fract() - 1.0).abs()),
                };
                phases[0] += TAU * at(u) / sr;
                phases[0].sin()
            }
            _ => {
                let w = wobble(t);
                let sum: f64 = us
                    .iter()
                    .zip(phases.iter_mut())
                    .map(|(&u, p)| {
                        *p += TAU * at(u + w) / sr;
                        p.sin()
                    })
                    .sum();
                let gate = if c == 4 { 0.5 - 0.5 * (TAU * t / period).cos() } else { 1.0 };
                gate * sum / (us.len() as f64).sqrt()
            }
        };
        out.push(v * taper(i, len));
    }
    out
}

/// Spectrogram box of a motif occupying `[start, start+len)` samples and mel band `[mel_lo, mel_hi]`.
pub fn planted_box(mel_lo: f64, mel_hi: f64, start: usize, len: usize, dsp: &DspConfig) -> SpecBox {
    let step = mel_step(dsp);
    // filter m is centered at (m + 1)·step
    let f_lo = ((mel_lo / step).ceil() as usize).saturating_sub(1).min(dsp.mel_bins - 1);
    let f_hi = ((mel_hi / step).floor() as usize).clamp(f_lo + 1, dsp.mel_bins);
    let frames = dsp.clip_frames();
    let t_lo = start.div_ceil(dsp.hop).min(frames - 1);
    let t_hi = ((start + len - 1) / dsp.hop + 1).clamp(t_lo + 1, frames);
    SpecBox { f_lo, f_hi, t_lo, t_hi }
}

fn place(c: usize, start: usize, len: usize, buf: &mut [f64], cfg: &SynthConfig, rng: &mut impl Rng) -> PlantedMotif {
    let step = mel_step(&cfg.dsp);
    let height = cfg.motif_bins.min(cfg.dsp.mel_bins - 2) as f64;
    let lo_bin = rng.random_range(1.0..=(cfg.dsp.mel_bins as f64 - height));
    let (mel_lo, mel_hi) = (lo_bin * step, (lo_bin + height) * step);
    let amp = rng.random_range(cfg.amplitude.0..=cfg.amplitude.1);
    let motif = render_motif(c, len, mel_lo, mel_hi, cfg.period, &cfg.dsp, rng);
    for (b, m) in buf[start..start + len].iter_mut().zip(motif) {
        *b += amp * m;
    }
    PlantedMotif {
        class: c,
        start,
        len,
        mel_lo,
        mel_hi,
        bbox: planted_box(mel_lo, mel_hi, start, len, &cfg.dsp),
    }
}

/// Generates one clip from `rng`.
pub fn generate_clip(id: String, cfg: &SynthConfig, rng: &mut impl Rng) -> SynthClip {
    let n = cfg.dsp.clip_samples();
    let len = ((cfg.motif_seconds * cfg.dsp.sample_rate as f64) as usize).min(n);
    // background: 1/f^α noise with random tilt and log-uniform level
    let level = rng.random_range(cfg.noise_rms.0.ln()..=cfg.noise_rms.1.ln()).exp();
    let alpha = rng.random_range(cfg.noise_alpha.0..=cfg.noise_alpha.1);
    let mut buf: Vec<f64> = colored_noise_signal(n, alpha, rng)
        .into_iter()
        .map(|v| level * v as f64)
        .collect();
    let first = rng.random_range(0..NUM_CLASSES);
    let mut motifs = Vec::new();
    if rng.random_bool(cfg.p_repeat) && 2 * len <= n {
        // two occurrences that do not overlap in time
        let a = rng.random_range(0..=n - 2 * len);
        let b = rng.random_range(a + len..=n - len);
        motifs.push(place(first, a, len, &mut buf, cfg, rng));
        motifs.push(place(first, b, len, &mut buf, cfg, rng));
    } else {
        let s = rng.random_range(0..=n - len);
        motifs.push(place(first, s, len, &mut buf, cfg, rng));
    }
    if rng.random_bool(cfg.p_second) {
        let second = (first + rng.random_range(1..NUM_CLASSES)) % NUM_CLASSES;
        let s = rng.random_range(0..=n - len);
        motifs.push(place(second, s, len, &mut buf, cfg, rng));
    }
    let mut labels = vec![false; NUM_CLASSES];
    for m in &motifs {
        labels[m.class] = true;
    }
    SynthClip {
        id,
        waveform: Waveform {
            samples: buf.into_iter().map(|v| v as f32).collect(),
            sample_rate: cfg.dsp.sample_rate,
        },
        labels,
        motifs,
    }
}

/// `n` clips with ids `{prefix}{index}`, each from its own substream of `seed`.
pub fn generate(cfg: &SynthConfig, n: usize, seed: u64, prefix: &str) -> Vec<SynthClip> {
    par::map_range(n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        generate_clip(format!("{prefix}{i:05}"), cfg, &mut rng)
    })
}

/// Standardized spectrogram and embedding of every clip.
pub fn featurize(clips: &[SynthClip], dsp: &DspConfig, backbone: &Backbone) -> Result<Vec<(Spectrogram, EmbeddingMap)>> {
    let front = LogMel::new(dsp)?;
    par::map_slice(clips, |c| {
        let s = standardize(&front.compute(&c.waveform)?, dsp)?;
        let z = backbone.extract(&s)?;
        Ok((s, z))
    })
    .into_iter()
    .collect()
}
