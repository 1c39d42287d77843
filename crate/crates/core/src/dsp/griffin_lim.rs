use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use super::{DspConfig, MelFilterbank, Spectrogram, Stft, Waveform, LOG_FLOOR};
use crate::error::{Error, Result};
use crate::par;

/// Per-iteration magnitude error `‖|STFT(x_i)| - S‖_F` of a Griffin-Lim run.
#[derive(Debug, Clone)]
pub struct GriffinLimTrace {
    pub errors: Vec<f64>,
}

/// Linear-frequency power for every frame of a raw log-mel spectrogram,
/// returned frame-major (`frames × stft_bins`).
pub fn mel_to_linear_power(s: &Spectrogram, cfg: &DspConfig) -> Result<Vec<Vec<f64>>> {
    if s.standardized {
        return Err(Error::UnstandardizeFirst);
    }
    cfg.validate()?;
    if s.mel_bins != cfg.mel_bins {
        return Err(Error::Shape(format!(
            "spectrogram has {} mel bins, config expects {}",
            s.mel_bins, cfg.mel_bins
        )));
    }
    let fb = MelFilterbank::htk(cfg.mel_bins, cfg.fft_size, cfg.sample_rate);
    let floor = LOG_FLOOR.ln() + 1e-9;
    Ok(par::map_range(s.frames, |t| {
        let mel: Vec<f64> = (0..s.mel_bins)
            .map(|m| {
                let v = s.at(m, t);
                if v <= floor {
                    0.0
                } else {
                    v.exp()
                }
            })
            .collect();
        fb.invert_nnls(&mel, cfg.nnls_iterations)
    }))
}

/// Renders a raw log-mel spectrogram as audio. Output length is `frames * hop`.
pub fn griffin_lim(
    s: &Spectrogram,
    cfg: &DspConfig,
    iterations: usize,
    seed: u64,
) -> Result<Waveform> {
    griffin_lim_traced(s, cfg, iterations, seed).map(|(w, _)| w)
}

pub fn griffin_lim_traced(
    s: &Spectrogram,
    cfg: &DspConfig,
    iterations: usize,
    seed: u64,
) -> Result<(Waveform, GriffinLimTrace)> {
    if iterations == 0 {
        return Err(Error::Config("griffin-lim needs at least one iteration".into()));
    }
    let power = mel_to_linear_power(s, cfg)?;
    let target: Vec<Vec<f64>> = power
        .iter()
        .map(|f| f.iter().map(|p| p.sqrt()).collect())
        .collect();
    let stft = Stft::new(cfg.fft_size, cfg.hop);
    let frames = s.frames;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phase: Vec<Vec<Complex<f64>>> = target
        .iter()
        .map(|f| {
            f.iter()
                .map(|_| Complex::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)))
                .collect()
        })
        .collect();

    let mut errors = Vec::with_capacity(iterations);
    let mut signal = Vec::new();
    for _ in 0..iterations {
        let spectra: Vec<Vec<Complex<f64>>> = target
            .iter()
            .zip(&phase)
            .map(|(mag, ph)| mag.iter().zip(ph).map(|(m, p)| p * *m).collect())
            .collect();
        signal = stft.synthesize(&spectra);
        let rebuilt = stft.analyze(&signal, frames);
        let mut err = 0.0;
        for ((re, mag), ph) in rebuilt.iter().zip(&target).zip(phase.iter_mut()) {
            for ((c, m), p) in re.iter().zip(mag).zip(ph.iter_mut()) {
                let norm = c.norm();
                err += (norm - m) * (norm - m);
                if norm > 0.0 {
                    *p = c / norm;
                }
            }
        }
        errors.push(err.sqrt());
    }

    let start = cfg.fft_size / 2;
    let len = frames * cfg.hop;
    let samples = signal[start..start + len].iter().map(|&v| v as f32).collect();
    Ok((
        Waveform {
            samples,
            sample_rate: cfg.sample_rate,
        },
        GriffinLimTrace { errors },
    ))
}
