//! Prototype projection, activation heatmaps, percentile boxes and local
//! explanations of single predictions.

mod render;

pub use render::{
    box_audio, render_box_png, render_heatmap_png, viridis, write_artifacts, write_box_csv, write_index,
    ArtifactPaths, CSV_HEADER,
};

use std::cmp::Ordering;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::embed::EmbeddingMap;
use crate::error::{Error, Result};
use crate::par;
use crate::protonet::{similarity, PrototypeBank, SimilarityResult};

/// Percentile used for boxes unless stated otherwise.
pub const BOX_QUANTILE: f64 = 0.95;

/// Half-open spectrogram rectangle: mel rows `f_lo..f_hi`, frames `t_lo..t_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpecBox {
    pub f_lo: usize,
    pub f_hi: usize,
    pub t_lo: usize,
    pub t_hi: usize,
}

impl SpecBox {
    pub fn area(&self) -> usize {
        (self.f_hi - self.f_lo) * (self.t_hi - self.t_lo)
    }

    pub fn contains(&self, f: usize, t: usize) -> bool {
        (self.f_lo..self.f_hi).contains(&f) && (self.t_lo..self.t_hi).contains(&t)
    }

    /// `self ⊆ other`
    pub fn within(&self, other: &SpecBox) -> bool {
        self.f_lo >= other.f_lo && self.f_hi <= other.f_hi && self.t_lo >= other.t_lo && self.t_hi <= other.t_hi
    }

    pub fn intersection(&self, other: &SpecBox) -> usize {
        let f = self.f_hi.min(other.f_hi).saturating_sub(self.f_lo.max(other.f_lo));
        let t = self.t_hi.min(other.t_hi).saturating_sub(self.t_lo.max(other.t_lo));
        f * t
    }

    pub fn iou(&self, other: &SpecBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Similarity map of one prototype upscaled to spectrogram size.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// `[mel][frame]`
    pub values: Vec<f64>,
    pub mel_bins: usize,
    pub frames: usize,
    pub prototype: (usize, usize),
    pub instance_id: String,
}

impl Heatmap {
    pub fn at(&self, mel: usize, frame: usize) -> f64 {
        self.values[mel * self.frames + frame]
    }

    /// First maximum in row-major order.
    pub fn peak(&self) -> (usize, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, &v) in self.values.iter().enumerate() {
            if v > best.0 {
                best = (v, i);
            }
        }
        (best.1 / self.frames, best.1 % self.frames)
    }
}

/// Pixel offset of cell 0's center along an axis with this stride.
pub fn cell_center(index: usize, stride: usize) -> usize {
    index * stride + stride / 2
}

/// Cell containing a spectrogram pixel along an axis with `cells` cells.
pub fn pixel_to_cell(pixel: usize, stride: usize, cells: usize) -> usize {
    (pixel / stride).min(cells - 1)
}

fn axis_weights(len: usize, stride: usize, cells: usize) -> Vec<(usize, usize, f64)> {
    let off = (stride / 2) as f64;
    (0..len)
        .map(|p| {
            let u = ((p as f64 - off) / stride as f64).clamp(0.0, (cells - 1) as f64);
            let i0 = u.floor() as usize;
            let i1 = (i0 + 1).min(cells - 1);
            (i0, i1, u - i0 as f64)
        })
        .collect()
}

/// Bilinear upscaling of an `h × w` map to `mel_bins × frames`; cell centers
/// land on pixel `i·stride + stride/2` and values are clamped past the edges.
pub fn upscale(
    map: &[f64],
    h: usize,
    w: usize,
    stride_freq: usize,
    stride_time: usize,
    mel_bins: usize,
    frames: usize,
) -> Result<Vec<f64>> {
    if stride_freq == 0 || stride_time == 0 {
        return Err(Error::MissingStride);
    }
    if map.len() != h * w || h == 0 || w == 0 {
        return Err(Error::Shape(format!("map of {} values for {h}x{w}", map.len())));
    }
    let rows = axis_weights(mel_bins, stride_freq, h);
    let cols = axis_weights(frames, stride_time, w);
    let mut out = Vec::with_capacity(mel_bins * frames);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = lerp(map[r0 * w + c0], map[r0 * w + c1], fc);
            let bottom = lerp(map[r1 * w + c0], map[r1 * w + c1], fc);
            out.push(lerp(top, bottom, fr));
        }
    }
    Ok(out)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

fn heatmap_from(
    sim: &SimilarityResult,
    z: &EmbeddingMap,
    c: usize,
    j: usize,
    shape: (usize, usize),
    instance_id: &str,
) -> Result<Heatmap> {
    let values = upscale(sim.map(c, j), z.h, z.w, z.stride_freq, z.stride_time, shape.0, shape.1)?;
    Ok(Heatmap {
        values,
        mel_bins: shape.0,
        frames: shape.1,
        prototype: (c, j),
        instance_id: instance_id.to_string(),
    })
}

/// Activation heatmap of prototype `(c, j)` over spectrogram `s`, where `z` was extracted from `s`.
pub fn heatmap(s: &Spectrogram, z: &EmbeddingMap, bank: &PrototypeBank, c: usize, j: usize) -> Result<Heatmap> {
    if c >= bank.num_classes || j >= bank.per_class {
        return Err(Error::Shape(format!("prototype ({c}, {j}) out of range")));
    }
    if z.stride_freq == 0 || z.stride_time == 0 {
        return Err(Error::MissingStride);
    }
    let sim = similarity(z, bank)?;
    heatmap_from(&sim, z, c, j, s.shape(), "")
}

/// Linear-interpolation order statistic of `values` at `q ∈ [0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    lerp(v[lo], v[hi], pos - lo as f64)
}

/// Tight box around the heatmap pixels strictly above its `q` quantile.
///
/// When nothing exceeds the threshold (e.g. `q = 1`) the pixels equal to it
/// are boxed; a constant heatmap yields the full frame.
pub fn percentile_box(h: &Heatmap, q: f64) -> SpecBox {
    let full = SpecBox {
        f_lo: 0,
        f_hi: h.mel_bins,
        t_lo: 0,
        t_hi: h.frames,
    };
    let (min, max) = h
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if min == max {
        warn!("constant heatmap for prototype {:?}; using the full frame", h.prototype);
        return full;
    }
    let thr = quantile(&h.values, q);
    let strict = bounding_box(h, |v| v > thr);
    strict.or_else(|| bounding_box(h, |v| v >= thr)).unwrap_or(full)
}

fn bounding_box(h: &Heatmap, keep: impl Fn(f64) -> bool) -> Option<SpecBox> {
    let mut b: Option<SpecBox> = None;
    for m in 0..h.mel_bins {
        for t in 0..h.frames {
            if keep(h.at(m, t)) {
                let e = b.get_or_insert(SpecBox {
                    f_lo: m,
                    f_hi: m + 1,
                    t_lo: t,
                    t_hi: t + 1,
                });
                e.f_lo = e.f_lo.min(m);
                e.f_hi = e.f_hi.max(m + 1);
                e.t_lo = e.t_lo.min(t);
                e.t_hi = e.t_hi.max(t + 1);
            }
        }
    }
    b
}

/// Number of 4-connected regions of pixels strictly above the `q` quantile.
pub fn components_above(h: &Heatmap, q: f64) -> usize {
    let thr = quantile(&h.values, q);
    let (rows, cols) = (h.mel_bins, h.frames);
    let mut seen = vec![false; rows * cols];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..rows * cols {
        if seen[start] || h.values[start] <= thr {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / cols, i % cols);
            let mut visit = |n: usize| {
                if !seen[n] && h.values[n] > thr {
                    seen[n] = true;
                    stack.push(n);
                }
            };
            if r > 0 {
                visit(i - cols);
            }
            if r + 1 < rows {
                visit(i + cols);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < cols {
                visit(i + 1);
            }
        }
    }
    count
}

/// One of the K nearest training instances of a prototype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionEntry {
    pub class: usize,
    pub prototype: usize,
    pub rank: usize,
    pub instance_id: String,
    /// Position of the instance in the searched collection.
    pub instance_index: usize,
    pub similarity: f64,
    pub argmax_cell: (usize, usize),
    #[serde(rename = "box")]
    pub bbox: SpecBox,
}

struct Candidate {
    similarity: f64,
    index: usize,
    id: String,
    argmax: (usize, usize),
    map: Vec<f64>,
    h: usize,
    w: usize,
    strides: (usize, usize),
}

fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.id.cmp(&b.id))
        .then_with(|| a.index.cmp(&b.index))
}

/// Items searched per parallel shard during projection.
const PROJECT_SHARD: usize = 64;

/// The `k` training instances most similar to each prototype, streamed once.
///
/// Entries are grouped by prototype in `(c, j)` order and ranked by pooled
/// similarity descending, ties broken by instance id then position. `shape`
/// is the spectrogram size `(mel_bins, frames)` used for the boxes.
pub fn project<I>(bank: &PrototypeBank, items: I, k: usize, shape: (usize, usize)) -> Result<Vec<ProjectionEntry>>
where
    I: IntoIterator<Item = Result<(String, EmbeddingMap)>>,
{
    if k == 0 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    let protos = bank.num_prototypes();
    let mut best: Vec<Vec<Candidate>> = (0..protos).map(|_| Vec::new()).collect();
    let mut seen = 0usize;
    let mut iter = items.into_iter();
    loop {
        let shard: Vec<(String, EmbeddingMap)> = iter.by_ref().take(PROJECT_SHARD).collect::<Result<_>>()?;
        if shard.is_empty() {
            break;
        }
        let sims = par::map_slice(&shard, |(_, z)| similarity(z, bank))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        for (offset, ((id, z), sim)) in shard.iter().zip(&sims).enumerate() {
            for (p, list) in best.iter_mut().enumerate() {
                let (c, j) = (p / bank.per_class, p % bank.per_class);
                let cand = Candidate {
                    similarity: sim.pooled[p],
                    index: seen + offset,
                    id: id.clone(),
                    argmax: sim.argmax[p],
                    map: Vec::new(),
                    h: z.h,
                    w: z.w,
                    strides: (z.stride_freq, z.stride_time),
                };
                let at = list.partition_point(|e| rank_order(e, &cand) == Ordering::Less);
                if at < k {
                    let mut cand = cand;
                    cand.map = sim.map(c, j).to_vec();
                    list.insert(at, cand);
                    list.truncate(k);
                }
            }
        }
        seen += shard.len();
    }
    if seen == 0 {
        return Err(Error::EmptyInput);
    }
    if k > seen {
        warn!("K = {k} exceeds the {seen} available instances; returning all");
    }
    let mut out = Vec::with_capacity(protos * k.min(seen));
    for (p, list) in best.into_iter().enumerate() {
        for (rank, cand) in list.into_iter().enumerate() {
            let values = upscale(&cand.map, cand.h, cand.w, cand.strides.0, cand.strides.1, shape.0, shape.1)?;
            let hm = Heatmap {
                values,
                mel_bins: shape.0,
                frames: shape.1,
                prototype: (p / bank.per_class, p % bank.per_class),
                instance_id: cand.id.clone(),
            };
            out.push(ProjectionEntry {
                class: p / bank.per_class,
                prototype: p % bank.per_class,
                rank,
                instance_id: cand.id,
                instance_index: cand.index,
                similarity: cand.similarity,
                argmax_cell: cand.argmax,
                bbox: percentile_box(&hm, BOX_QUANTILE),
            });
        }
    }
    Ok(out)
}

/// Contribution of one prototype to one class logit.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub class: usize,
    pub prototype: usize,
    pub similarity: f64,
    pub weight: f64,
    /// `weight · similarity`
    pub contribution: f64,
    pub argmax_cell: (usize, usize),
    pub heatmap: Heatmap,
    pub bbox: SpecBox,
    /// Stored nearest training instances of this prototype.
    pub exemplars: Vec<ProjectionEntry>,
}

/// Local explanation of one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub logits: Vec<f64>,
    pub confidences: Vec<f64>,
    /// Top contributions across all classes, largest first.
    pub top: Vec<Contribution>,
}

/// Ranks every prototype by `weight · similarity` on spectrogram `s` (with
/// embedding `z`) and returns the `top_m` largest with heatmaps, boxes and
/// the exemplars found in `projections`.
pub fn explain_prediction(
    s: &Spectrogram,
    z: &EmbeddingMap,
    bank: &PrototypeBank,
    top_m: usize,
    projections: &[ProjectionEntry],
) -> Result<Explanation> {
    if z.stride_freq == 0 || z.stride_time == 0 {
        return Err(Error::MissingStride);
    }
    let sim = similarity(z, bank)?;
    let mut order: Vec<usize> = (0..bank.num_prototypes()).collect();
    let contrib = |p: usize| bank.head_weights[p] * sim.pooled[p];
    order.sort_by(|&a, &b| contrib(b).total_cmp(&contrib(a)).then(a.cmp(&b)));
    let mut top = Vec::new();
    for &p in order.iter().take(top_m) {
        let (c, j) = (p / bank.per_class, p % bank.per_class);
        let hm = heatmap_from(&sim, z, c, j, s.shape(), "")?;
        let bbox = percentile_box(&hm, BOX_QUANTILE);
        top.push(Contribution {
            class: c,
            prototype: j,
            similarity: sim.pooled[p],
            weight: bank.head_weights[p],
            contribution: contrib(p),
            argmax_cell: sim.argmax[p],
            heatmap: hm,
            bbox,
            exemplars: projections
                .iter()
                .filter(|e| e.class == c && e.prototype == j)
                .cloned()
                .collect(),
        });
    }
    let pred = crate::protonet::predict(&sim, bank)?;
    Ok(Explanation {
        logits: pred.logits,
        confidences: pred.confidences,
        top,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hm(values: Vec<f64>, rows: usize, cols: usize) -> Heatmap {
        Heatmap {
            values,
            mel_bins: rows,
            frames: cols,
            prototype: (0, 0),
            instance_id: String::new(),
        }
    }

    #[test]
    fn constant_map_upscales_to_constant() {
        let out = upscale(&[0.3; 6], 2, 3, 4, 4, 9, 13).unwrap();
        assert!(out.iter().all(|&v| v == 0.3));
        assert!(matches!(upscale(&[0.3; 6], 2, 3, 0, 4, 9, 13), Err(Error::MissingStride)));
    }

    #[test]
    fn upscale_hits_cell_centers() {
        let map = [0.1, -0.4, 0.9, 0.2];
        let out = upscale(&map, 2, 2, 4, 4, 8, 8).unwrap();
        for h in 0..2 {
            for w in 0..2 {
                assert_eq!(out[cell_center(h, 4) * 8 + cell_center(w, 4)], map[h * 2 + w]);
            }
        }
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max, 0.9);
    }

    #[test]
    fn spike_box() {
        let mut v = vec![0.0; 20];
        v[7] = 1.0;
        let b = percentile_box(&hm(v, 4, 5), 0.95);
        assert_eq!(b, SpecBox { f_lo: 1, f_hi: 2, t_lo: 2, t_hi: 3 });
    }

    #[test]
    fn corner_spikes_box_spans_both() {
        let mut v = vec![0.0; 20];
        v[0] = 1.0;
        v[19] = 1.0;
        let b = percentile_box(&hm(v, 4, 5), 0.95);
        assert_eq!(b, SpecBox { f_lo: 0, f_hi: 4, t_lo: 0, t_hi: 5 });
    }

    #[test]
    fn q_zero_boxes_everything_above_min() {
        let mut v = vec![0.5; 20];
        v[0] = 0.0;
        v[19] = 0.0;
        v[4] = 0.0;
        let b = percentile_box(&hm(v, 4, 5), 0.0);
        assert_eq!(b, SpecBox { f_lo: 0, f_hi: 4, t_lo: 0, t_hi: 5 });
        let mut v = vec![0.0; 20];
        v[6] = 0.2;
        v[13] = 0.1;
        let b = percentile_box(&hm(v, 4, 5), 0.0);
        assert_eq!(b, SpecBox { f_lo: 1, f_hi: 3, t_lo: 1, t_hi: 4 });
    }

    #[test]
    fn constant_heatmap_full_frame() {
        let b = percentile_box(&hm(vec![0.2; 12], 3, 4), 0.95);
        assert_eq!(b.area(), 12);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0], 1.0), 4.0);
        assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0], 0.0), 1.0);
    }

    #[test]
    fn components() {
        let mut v = vec![0.0; 40];
        v[0] = 1.0;
        v[1] = 1.0;
        v[39] = 1.0;
        assert_eq!(components_above(&hm(v, 4, 10), 0.9), 2);
    }

    #[test]
    fn iou() {
        let a = SpecBox { f_lo: 0, f_hi: 2, t_lo: 0, t_hi: 2 };
        let b = SpecBox { f_lo: 1, f_hi: 3, t_lo: 0, t_hi: 2 };
        assert!((a.iou(&b) - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(a.iou(&a), 1.0);
    }
}
