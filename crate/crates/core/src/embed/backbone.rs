use std::hash::{DefaultHasher, Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::EmbeddingMap;
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::par;

/// One convolution: square `kernel`, equal stride on both axes, `channels` outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
    /// Zeros added on every side. A stride-1 layer with `kernel = 2·pad + 1`
    /// keeps the grid and its cell centers where they were.
    #[serde(default)]
    pub pad: usize,
}

impl ConvLayerSpec {
    /// Unpadded layer.
    pub fn new(kernel: usize, stride: usize, channels: usize) -> Self {
        Self {
            kernel,
            stride,
            channels,
            pad: 0,
        }
    }

    pub fn padded(self, pad: usize) -> Self {
        Self { pad, ..self }
    }

    fn output_len(&self, n: usize) -> Option<usize> {
        let n = n + 2 * self.pad;
        (n >= self.kernel).then(|| (n - self.kernel) / self.stride + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyBackboneConfig {
    pub layers: Vec<ConvLayerSpec>,
    pub seed: u64,
    /// Draws first-layer filters orthogonal to the constant patch, so the
    /// stem ignores the local mean level.
    pub zero_mean_stem: bool,
}

impl Default for ToyBackboneConfig {
    /// Patchify stem followed by three 2×2 downsampling convolutions:
    /// cumulative stride 32, channels 16 → 32 → 64 → 128.
    fn default() -> Self {
        let l = ConvLayerSpec::new;
        Self {
            layers: vec![l(4, 4, 16), l(2, 2, 32), l(2, 2, 64), l(2, 2, 128)],
            seed: 0,
            zero_mean_stem: false,
        }
    }
}

impl ToyBackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("backbone needs at least one layer".into()));
        }
        if self
            .layers
            .iter()
            .any(|l| l.kernel == 0 || l.stride == 0 || l.channels == 0)
        {
            return Err(Error::Config("kernel, stride and channels must be >= 1".into()));
        }
        if self.layers.iter().any(|l| l.pad >= l.kernel) {
            return Err(Error::Config("padding must be smaller than the kernel".into()));
        }
        let stem = self.layers[0];
        if self.zero_mean_stem && stem.channels >= stem.kernel * stem.kernel {
            return Err(Error::Config(
                "a zero-mean stem needs fewer channels than kernel taps".into(),
            ));
        }
        Ok(())
    }

    pub fn cumulative_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.channels)
    }

    /// Output grid for an input of `(rows, cols)`, or `None` if too small.
    pub fn output_shape(&self, rows: usize, cols: usize) -> Option<(usize, usize)> {
        self.layers
            .iter()
            .try_fold((rows, cols), |(r, c), l| Some((l.output_len(r)?, l.output_len(c)?)))
    }

    /// Smallest input extent that yields a 1×1 output.
    pub fn receptive_field(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .fold(1, |need, l| ((need - 1) * l.stride + l.kernel).saturating_sub(2 * l.pad).max(1))
    }
}

struct Layer {
    spec: ConvLayerSpec,
    in_channels: usize,
    /// `[out][in][ky][kx]`
    weights: Vec<f32>,
}

/// Frozen convolutional feature extractor with valid padding.
///
/// Rectifiers sit between layers; the last layer is linear so cells can
/// point in any direction of the embedding space.
pub struct Backbone {
    config: ToyBackboneConfig,
    layers: Vec<Layer>,
}

impl Backbone {
    pub fn new(config: &ToyBackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut in_channels = 1;
        let mut layers = Vec::with_capacity(config.layers.len());
        for (i, spec) in config.layers.iter().enumerate() {
            let fan_in = in_channels * spec.kernel * spec.kernel;
            let weights = if i == 0 && config.zero_mean_stem {
                orthogonal_to_constant(spec.channels, fan_in, &mut rng)
            } else {
                orthogonal(spec.channels, fan_in, &mut rng)
            };
            layers.push(Layer {
                spec: *spec,
                in_channels,
                weights,
            });
            in_channels = spec.channels;
        }
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &ToyBackboneConfig {
        &self.config
    }

    /// Hash of every weight bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for l in &self.layers {
            for w in &l.weights {
                w.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Embeds a standardized spectrogram.
    pub fn extract(&self, s: &Spectrogram) -> Result<EmbeddingMap> {
        if !s.standardized {
            return Err(Error::NotStandardized);
        }
        if self.config.output_shape(s.mel_bins, s.frames).is_none() {
            let rf = self.config.receptive_field();
            return Err(Error::TooSmall {
                got: (s.mel_bins, s.frames),
                need: (rf, rf),
            });
        }
        let mut act: Vec<f32> = s.values.iter().map(|&v| v as f32).collect();
        let (mut rows, mut cols) = (s.mel_bins, s.frames);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, r, c) = conv(layer, &act, rows, cols, i != last);
            act = out;
            rows = r;
            cols = c;
        }
        let d = self.config.output_dim();
        // [d][h][w] -> [h][w][d]
        let mut values = vec![0.0f32; d * rows * cols];
        for ch in 0..d {
            for y in 0..rows {
                for x in 0..cols {
                    values[(y * cols + x) * d + ch] = act[(ch * rows + y) * cols + x];
                }
            }
        }
        let stride = self.config.cumulative_stride();
        EmbeddingMap::new(values, rows, cols, d, stride, stride)
    }
}

fn conv(layer: &Layer, input: &[f32], rows: usize, cols: usize, relu: bool) -> (Vec<f32>, usize, usize) {
    let ConvLayerSpec {
        kernel: k,
        stride: s,
        channels,
        pad,
    } = layer.spec;
    let padded;
    let (input, rows, cols) = if pad == 0 {
        (input, rows, cols)
    } else {
        let (pr, pc) = (rows + 2 * pad, cols + 2 * pad);
        let mut buf = vec![0.0f32; layer.in_channels * pr * pc];
        for ic in 0..layer.in_channels {
            for y in 0..rows {
                let src = &input[(ic * rows + y) * cols..][..cols];
                buf[(ic * pr + y + pad) * pc + pad..][..cols].copy_from_slice(src);
            }
        }
        padded = buf;
        (&padded[..], pr, pc)
    };
    let out_r = (rows - k) / s + 1;
    let out_c = (cols - k) / s + 1;
    let plane = out_r * out_c;
    let mut out = vec![0.0f32; channels * plane];
    let cin = layer.in_channels;
    par::for_each_chunk_mut(&mut out, plane, |oc, dst| {
        let w = &layer.weights[oc * cin * k * k..(oc + 1) * cin * k * k];
        for y in 0..out_r {
            for x in 0..out_c {
                let mut acc = 0.0f32;
                for ic in 0..cin {
                    let base = ic * rows * cols;
                    let wk = &w[ic * k * k..(ic + 1) * k * k];
                    for ky in 0..k {
                        let row = base + (y * s + ky) * cols + x * s;
                        for kx in 0..k {
                            acc += wk[ky * k + kx] * input[row + kx];
                        }
                    }
                }
                dst[y * out_c + x] = if relu { acc.max(0.0) } else { acc };
            }
        }
    });
    (out, out_r, out_c)
}

/// `rows × cols` matrix whose rows (or columns, if `rows > cols`) are orthonormal.
fn orthogonal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let (n, m) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let q = gram_schmidt(Vec::new(), n, m, rng);
    let mut out = vec![0.0f32; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = if rows <= cols { q[r][c] } else { q[c][r] } as f32;
        }
    }
    out
}

/// Orthonormal rows that also sum to zero; needs `rows < cols`.
fn orthogonal_to_constant(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let ones = vec![1.0 / (cols as f64).sqrt(); cols];
    let q = gram_schmidt(vec![ones], rows + 1, cols, rng);
    q[1..].iter().flatten().map(|&v| v as f32).collect()
}

/// Extends `q` with random Gaussian directions to `n` orthonormal vectors of length `m`.
fn gram_schmidt(mut q: Vec<Vec<f64>>, n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    while q.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for u in &q {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    q
}
