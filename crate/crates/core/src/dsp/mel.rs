/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank stored as sparse rows over FFT bins.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    rows: Vec<(usize, Vec<f64>)>,
    fft_bins: usize,
    edges_hz: Vec<f64>,
    lipschitz: f64,
}

impl MelFilterbank {
    /// `mel_bins` unit-peak triangles spanning 0 Hz to Nyquist on the HTK scale.
    pub fn htk(mel_bins: usize, fft_size: usize, sample_rate: u32) -> Self {
        let fft_bins = fft_size / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges_hz: Vec<f64> = (0..mel_bins + 2)
            .map(|i| mel_to_hz(top * i as f64 / (mel_bins + 1) as f64))
            .collect();
        let bin_hz = |k: usize| k as f64 * sample_rate as f64 / fft_size as f64;
        let rows = (0..mel_bins)
            .map(|m| {
                let (lo, mid, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
                let weights: Vec<(usize, f64)> = (0..fft_bins)
                    .filter_map(|k| {
                        let f = bin_hz(k);
                        let up = (f - lo) / (mid - lo);
                        let down = (hi - f) / (hi - mid);
                        let w = up.min(down).max(0.0);
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                match (weights.first(), weights.last()) {
                    (Some(&(first, _)), Some(&(last, _))) => {
                        let mut dense = vec![0.0; last - first + 1];
                        for (k, w) in weights {
                            dense[k - first] = w;
                        }
                        (first, dense)
                    }
                    _ => (0, Vec::new()),
                }
            })
            .collect();
        let mut fb = Self {
            rows,
            fft_bins,
            edges_hz,
            lipschitz: 0.0,
        };
        fb.lipschitz = fb.gram_spectral_norm();
        fb
    }

    pub fn mel_bins(&self) -> usize {
        self.rows.len()
    }

    pub fn fft_bins(&self) -> usize {
        self.fft_bins
    }

    pub fn edges_hz(&self) -> &[f64] {
        &self.edges_hz
    }

    /// Weight of FFT bin `k` in filter `m`.
    pub fn weight(&self, m: usize, k: usize) -> f64 {
        let (start, w) = &self.rows[m];
        if k >= *start && k < start + w.len() {
            w[k - start]
        } else {
            0.0
        }
    }

    /// Projects a linear power spectrum onto the mel filters.
    pub fn apply(&self, spectrum: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|(start, w)| {
                w.iter()
                    .zip(&spectrum[*start..start + w.len()])
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Transpose of [`MelFilterbank::apply`].
    pub fn apply_transpose(&self, mel: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.fft_bins];
        for ((start, w), &y) in self.rows.iter().zip(mel) {
            for (i, a) in w.iter().enumerate() {
                out[start + i] += a * y;
            }
        }
        out
    }

    /// Largest eigenvalue of `MᵀM`, by power iteration.
    fn gram_spectral_norm(&self) -> f64 {
        let mut v = vec![1.0 / (self.fft_bins as f64).sqrt(); self.fft_bins];
        let mut lambda = 0.0;
        for _ in 0..100 {
            let u = self.apply_transpose(&self.apply(&v));
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm;
            v = u.into_iter().map(|x| x / norm).collect();
        }
        lambda
    }

    /// Non-negative least-squares inversion of mel power back to linear power,
    /// by accelerated projected gradient.
    pub fn invert_nnls(&self, mel: &[f64], iterations: usize) -> Vec<f64> {
        if self.lipschitz == 0.0 {
            return vec![0.0; self.fft_bins];
        }
        let col_sum = self.apply_transpose(&vec![1.0; self.rows.len()]);
        let back = self.apply_transpose(mel);
        let mut x: Vec<f64> = back
            .iter()
            .zip(&col_sum)
            .map(|(b, c)| if *c > 0.0 { (b / c).max(0.0) } else { 0.0 })
            .collect();
        let mut y = x.clone();
        let mut t = 1.0f64;
        let step = 1.0 / self.lipschitz;
        for _ in 0..iterations {
            let residual: Vec<f64> = self
                .apply(&y)
                .iter()
                .zip(mel)
                .map(|(a, b)| a - b)
                .collect();
            let grad = self.apply_transpose(&residual);
            let next: Vec<f64> = y
                .iter()
                .zip(&grad)
                .map(|(v, g)| (v - step * g).max(0.0))
                .collect();
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / t_next;
            y = next
                .iter()
                .zip(&x)
                .map(|(n, o)| (n + beta * (n - o)).max(0.0))
                .collect();
            x = next;
            t = t_next;
        }
        x
    }
}
