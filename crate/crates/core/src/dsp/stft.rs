use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::par;

/// Frame count of a centered STFT: `1 + floor(len / hop)`.
pub fn frame_count(len: usize, hop: usize) -> usize {
    1 + len / hop
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Index into `0..n` reflecting about the edges without repeating them.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

/// Short-time Fourier transform with a fixed plan.
pub struct Stft {
    fft_size: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(fft_size: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            fft_size,
            hop,
            window: hann_window(fft_size),
            forward: planner.plan_fft_forward(fft_size),
            inverse: planner.plan_fft_inverse(fft_size),
        }
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Centered power spectrogram, one `Vec` of `bins()` values per frame.
    pub fn power(&self, samples: &[f32]) -> Vec<Vec<f64>> {
        let pad = self.fft_size / 2;
        let n = samples.len();
        let frames = frame_count(n, self.hop);
        par::map_range(frames, |t| {
            let mut buf: Vec<Complex<f64>> = (0..self.fft_size)
                .map(|i| {
                    let v = if n == 0 {
                        0.0
                    } else {
                        let src = (t * self.hop + i) as isize - pad as isize;
                        samples[reflect(src, n)] as f64
                    };
                    Complex::new(v * self.window[i], 0.0)
                })
                .collect();
            self.forward.process(&mut buf);
            buf[..self.bins()].iter().map(|c| c.norm_sqr()).collect()
        })
    }

    /// Uncentered complex STFT of a signal of length `(frames - 1) * hop + fft_size`.
    pub(crate) fn analyze(&self, x: &[f64], frames: usize) -> Vec<Vec<Complex<f64>>> {
        par::map_range(frames, |t| {
            let start = t * self.hop;
            let mut buf: Vec<Complex<f64>> = (0..self.fft_size)
                .map(|i| Complex::new(x[start + i] * self.window[i], 0.0))
                .collect();
            self.forward.process(&mut buf);
            buf.truncate(self.bins());
            buf
        })
    }

    /// Least-squares inverse of [`Stft::analyze`] from half spectra.
    pub(crate) fn synthesize(&self, spectra: &[Vec<Complex<f64>>]) -> Vec<f64> {
        let frames = spectra.len();
        let len = (frames.saturating_sub(1)) * self.hop + self.fft_size;
        let n = self.fft_size;
        let segments = par::map_range(frames, |t| {
            let half = &spectra[t];
            let mut buf = vec![Complex::new(0.0, 0.0); n];
            buf[..half.len()].copy_from_slice(half);
            for k in 1..n / 2 {
                buf[n - k] = half[k].conj();
            }
            // Hermitian symmetry requires real DC and Nyquist terms.
            buf[0].im = 0.0;
            buf[n / 2].im = 0.0;
            self.inverse.process(&mut buf);
            buf.iter()
                .zip(&self.window)
                .map(|(c, w)| c.re / n as f64 * w)
                .collect::<Vec<f64>>()
        });
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        for (t, seg) in segments.iter().enumerate() {
            let start = t * self.hop;
            for (i, v) in seg.iter().enumerate() {
                out[start + i] += v;
                norm[start + i] += self.window[i] * self.window[i];
            }
        }
        let peak = norm.iter().cloned().fold(0.0, f64::max);
        for (o, w) in out.iter_mut().zip(&norm) {
            if *w > 1e-10 * peak {
                *o /= w;
            } else {
                *o = 0.0;
            }
        }
        out
    }
}

/// One-shot centered power spectrogram.
pub fn power_stft(samples: &[f32], fft_size: usize, hop: usize) -> Vec<Vec<f64>> {
    Stft::new(fft_size, hop).power(samples)
}
