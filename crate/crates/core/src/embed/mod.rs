//! Frozen embedding maps: a built-in toy convolutional backbone and the
//! binary embedding store used to ingest features from external models.

mod backbone;
mod store;

pub use backbone::{Backbone, ConvLayerSpec, ToyBackboneConfig};
pub use store::{load_embeddings, save_embeddings, write_embeddings, EmbeddingReader, EMBED_MAGIC};

use crate::error::{Error, Result};

/// `h × w × d` feature grid stored row-major in `(h, w, d)` order.
///
/// `h` runs along frequency, `w` along time. Each cell covers a
/// `stride_freq × stride_time` patch of the source spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMap {
    pub values: Vec<f32>,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub stride_freq: usize,
    pub stride_time: usize,
}

impl EmbeddingMap {
    pub fn new(
        values: Vec<f32>,
        h: usize,
        w: usize,
        d: usize,
        stride_freq: usize,
        stride_time: usize,
    ) -> Result<Self> {
        if h == 0 || w == 0 || d == 0 {
            return Err(Error::Shape("embedding dimensions must be >= 1".into()));
        }
        let n = h
            .checked_mul(w)
            .and_then(|x| x.checked_mul(d))
            .ok_or_else(|| Error::DimensionOverflow(format!("{h}x{w}x{d}")))?;
        if values.len() != n {
            return Err(Error::Shape(format!(
                "expected {n} values for {h}x{w}x{d}, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("embedding contains non-finite values".into()));
        }
        Ok(Self {
            values,
            h,
            w,
            d,
            stride_freq,
            stride_time,
        })
    }

    #[inline]
    pub fn cell(&self, h: usize, w: usize) -> &[f32] {
        let start = (h * self.w + w) * self.d;
        &self.values[start..start + self.d]
    }

    pub fn cells(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.d)
    }
}
