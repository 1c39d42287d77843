//! Prototype layer and class-wired head.
//!
//! Each class `c` owns `J` prototypes of dimension `D`. A prototype is compared
//! to every embedding cell by cosine similarity, the resulting map is
//! max-pooled, and the class logit is a non-negative weighted sum of its own
//! prototypes' pooled similarities plus a bias.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embed::EmbeddingMap;
use crate::error::{Error, Result};
use crate::par;

/// Minimum prototype norm; below this a prototype counts as zero.
pub const MIN_PROTOTYPE_NORM: f64 = 1e-8;
/// Initial head weight for every prototype.
pub const INIT_WEIGHT: f64 = 1.0;
/// Initial bias for every class.
pub const INIT_BIAS: f64 = -2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    /// `[C][J][D]`
    pub prototypes: Vec<f64>,
    /// `[C][J]`, kept non-negative.
    pub head_weights: Vec<f64>,
    /// `[C]`
    pub head_bias: Vec<f64>,
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
}

impl PrototypeBank {
    pub fn new(
        prototypes: Vec<f64>,
        head_weights: Vec<f64>,
        head_bias: Vec<f64>,
        num_classes: usize,
        per_class: usize,
        dim: usize,
    ) -> Result<Self> {
        if num_classes == 0 || per_class == 0 || dim == 0 {
            return Err(Error::Config("C, J and D must all be >= 1".into()));
        }
        let cj = num_classes * per_class;
        if prototypes.len() != cj * dim || head_weights.len() != cj || head_bias.len() != num_classes {
            return Err(Error::Shape("prototype bank buffers do not match C, J, D".into()));
        }
        if head_weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Config("head weights must be non-negative".into()));
        }
        let bank = Self {
            prototypes,
            head_weights,
            head_bias,
            num_classes,
            per_class,
            dim,
        };
        bank.check_norms()?;
        Ok(bank)
    }

    /// Seeded bank: unit prototypes uniform on the sphere, weights 1, biases -2.
    pub fn init(num_classes: usize, per_class: usize, dim: usize, seed: u64) -> Result<Self> {
        if num_classes == 0 || per_class == 0 || dim == 0 {
            return Err(Error::Config("C, J and D must all be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut prototypes = Vec::with_capacity(num_classes * per_class * dim);
        for _ in 0..num_classes * per_class {
            loop {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-6 {
                    prototypes.extend(v.into_iter().map(|x| x / norm));
                    break;
                }
            }
        }
        Ok(Self {
            prototypes,
            head_weights: vec![INIT_WEIGHT; num_classes * per_class],
            head_bias: vec![INIT_BIAS; num_classes],
            num_classes,
            per_class,
            dim,
        })
    }

    pub fn num_prototypes(&self) -> usize {
        self.num_classes * self.per_class
    }

    #[inline]
    pub fn prototype(&self, c: usize, j: usize) -> &[f64] {
        let k = c * self.per_class + j;
        &self.prototypes[k * self.dim..(k + 1) * self.dim]
    }

    pub fn prototype_mut(&mut self, c: usize, j: usize) -> &mut [f64] {
        let k = c * self.per_class + j;
        &mut self.prototypes[k * self.dim..(k + 1) * self.dim]
    }

    #[inline]
    pub fn weight(&self, c: usize, j: usize) -> f64 {
        self.head_weights[c * self.per_class + j]
    }

    pub fn check_norms(&self) -> Result<()> {
        for (k, p) in self.prototypes.chunks_exact(self.dim).enumerate() {
            if norm(p) < MIN_PROTOTYPE_NORM {
                return Err(Error::ZeroPrototype {
                    class: k / self.per_class,
                    index: k % self.per_class,
                });
            }
        }
        Ok(())
    }

    /// Clamps head weights at zero.
    pub fn project_nonnegative(&mut self) {
        self.head_weights.iter_mut().for_each(|w| *w = w.max(0.0));
    }

    /// Unit-normalized prototypes `[C·J][D]`.
    pub(crate) fn unit_prototypes(&self) -> Vec<f64> {
        let mut out = self.prototypes.clone();
        for p in out.chunks_exact_mut(self.dim) {
            let n = norm(p);
            p.iter_mut().for_each(|x| *x /= n);
        }
        out
    }
}

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Unit-normalized embedding cells in f64; zero-norm cells stay all-zero.
pub(crate) fn unit_cells(z: &EmbeddingMap) -> Vec<f64> {
    let mut out: Vec<f64> = z.values.iter().map(|&v| v as f64).collect();
    for c in out.chunks_exact_mut(z.d) {
        let n = norm(c);
        if n > 0.0 {
            c.iter_mut().for_each(|x| *x /= n);
        }
    }
    out
}

/// Cosine-similarity maps, their global max and its location.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityResult {
    /// `[C][J][H][W]`
    pub maps: Vec<f64>,
    /// `[C][J]`
    pub pooled: Vec<f64>,
    /// `[C][J]` cell coordinates `(h, w)` of the first maximum in row-major order.
    pub argmax: Vec<(usize, usize)>,
    pub num_classes: usize,
    pub per_class: usize,
    pub h: usize,
    pub w: usize,
}

impl SimilarityResult {
    pub fn map(&self, c: usize, j: usize) -> &[f64] {
        let k = c * self.per_class + j;
        let n = self.h * self.w;
        &self.maps[k * n..(k + 1) * n]
    }

    pub fn pooled_at(&self, c: usize, j: usize) -> f64 {
        self.pooled[c * self.per_class + j]
    }
}

/// Pooled similarities only, without the full maps.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledSimilarity {
    pub pooled: Vec<f64>,
    pub argmax: Vec<(usize, usize)>,
}

fn check_dim(z: &EmbeddingMap, bank: &PrototypeBank) -> Result<()> {
    if z.d != bank.dim {
        return Err(Error::Shape(format!(
            "embedding depth {} does not match prototype dim {}",
            z.d, bank.dim
        )));
    }
    Ok(())
}

fn max_first(map: impl Iterator<Item = f64>, w: usize) -> (f64, (usize, usize)) {
    let mut best = f64::NEG_INFINITY;
    let mut at = 0;
    for (i, v) in map.enumerate() {
        if v > best {
            best = v;
            at = i;
        }
    }
    (best, (at / w, at % w))
}

/// Full similarity maps of every prototype against every cell of `z`.
pub fn similarity(z: &EmbeddingMap, bank: &PrototypeBank) -> Result<SimilarityResult> {
    check_dim(z, bank)?;
    let cells = unit_cells(z);
    let protos = bank.unit_prototypes();
    let n = z.h * z.w;
    let mut maps = Vec::with_capacity(bank.num_prototypes() * n);
    let mut pooled = Vec::with_capacity(bank.num_prototypes());
    let mut argmax = Vec::with_capacity(bank.num_prototypes());
    for p in protos.chunks_exact(bank.dim) {
        let start = maps.len();
        maps.extend(cells.chunks_exact(z.d).map(|c| dot(p, c)));
        let (best, at) = max_first(maps[start..].iter().copied(), z.w);
        pooled.push(best);
        argmax.push(at);
    }
    Ok(SimilarityResult {
        maps,
        pooled,
        argmax,
        num_classes: bank.num_classes,
        per_class: bank.per_class,
        h: z.h,
        w: z.w,
    })
}

/// Same maxima as [`similarity`] without materializing the maps.
pub fn pooled_similarity(z: &EmbeddingMap, bank: &PrototypeBank) -> Result<PooledSimilarity> {
    check_dim(z, bank)?;
    Ok(pooled_with_units(&unit_cells(z), z.w, z.d, &bank.unit_prototypes()))
}

pub(crate) fn pooled_with_units(cells: &[f64], w: usize, d: usize, protos: &[f64]) -> PooledSimilarity {
    let (pooled, argmax) = protos
        .chunks_exact(d)
        .map(|p| max_first(cells.chunks_exact(d).map(|c| dot(p, c)), w))
        .unzip();
    PooledSimilarity { pooled, argmax }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub confidences: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Class logits from `[C][J]` pooled similarities.
pub fn logits_from_pooled(pooled: &[f64], bank: &PrototypeBank) -> Vec<f64> {
    (0..bank.num_classes)
        .map(|c| {
            let j0 = c * bank.per_class;
            let s: f64 = (0..bank.per_class)
                .map(|j| bank.head_weights[j0 + j] * pooled[j0 + j])
                .sum();
            s + bank.head_bias[c]
        })
        .collect()
}

pub fn predict_pooled(pooled: &[f64], bank: &PrototypeBank) -> Result<Prediction> {
    if pooled.len() != bank.num_prototypes() {
        return Err(Error::Shape("pooled similarities do not match the bank".into()));
    }
    let logits = logits_from_pooled(pooled, bank);
    let confidences = logits.iter().map(|&l| sigmoid(l)).collect();
    Ok(Prediction {
        logits,
        confidences,
    })
}

pub fn predict(sim: &SimilarityResult, bank: &PrototypeBank) -> Result<Prediction> {
    if sim.num_classes != bank.num_classes || sim.per_class != bank.per_class {
        return Err(Error::Shape("similarity result does not match the bank".into()));
    }
    predict_pooled(&sim.pooled, bank)
}

/// Embedding → confidences for a batch, parallel over instances.
pub fn predict_batch(maps: &[&EmbeddingMap], bank: &PrototypeBank) -> Result<Vec<Prediction>> {
    let protos = bank.unit_prototypes();
    par::map_slice(maps, |z| {
        check_dim(z, bank)?;
        let p = pooled_with_units(&unit_cells(z), z.w, z.d, &protos);
        predict_pooled(&p.pooled, bank)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(cells: &[&[f32]], h: usize, w: usize) -> EmbeddingMap {
        let d = cells[0].len();
        EmbeddingMap::new(cells.concat(), h, w, d, 1, 1).unwrap()
    }

    fn bank_with(protos: Vec<f64>, c: usize, j: usize, d: usize) -> PrototypeBank {
        PrototypeBank::new(protos, vec![1.0; c * j], vec![-2.0; c], c, j, d).unwrap()
    }

    #[test]
    fn hand_computed_cosines() {
        let z = map(&[&[1.0, 1.0], &[2.0, 0.0]], 1, 2);
        let bank = bank_with(vec![1.0, 0.0], 1, 1, 2);
        let s = similarity(&z, &bank).unwrap();
        assert!((s.maps[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        assert!((s.maps[1] - 1.0).abs() < 1e-12);
        assert_eq!(s.pooled, vec![1.0]);
        assert_eq!(s.argmax, vec![(0, 1)]);
    }

    #[test]
    fn parallel_and_orthogonal() {
        let z = map(&[&[0.0, 3.0], &[0.0, -1.0]], 2, 1);
        let s = similarity(&z, &bank_with(vec![1.0, 0.0, 0.0, 5.0], 2, 1, 2)).unwrap();
        assert_eq!(s.pooled_at(0, 0), 0.0);
        assert!((s.pooled_at(1, 0) - 1.0).abs() < 1e-12);
        assert_eq!(s.argmax[1], (0, 0));
    }

    #[test]
    fn zero_cell_scores_zero() {
        let z = map(&[&[0.0, 0.0], &[-1.0, 0.0]], 1, 2);
        let s = similarity(&z, &bank_with(vec![1.0, 0.0], 1, 1, 2)).unwrap();
        assert_eq!(s.maps, vec![0.0, -1.0]);
        assert_eq!(s.pooled, vec![0.0]);
        assert_eq!(s.argmax, vec![(0, 0)]);
    }

    #[test]
    fn ties_take_first_cell() {
        let z = map(&[&[1.0], &[2.0], &[3.0], &[4.0]], 2, 2);
        let s = similarity(&z, &bank_with(vec![1.0], 1, 1, 1)).unwrap();
        assert_eq!(s.argmax, vec![(0, 0)]);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let z = map(&[&[1.0, 0.0, 0.0]], 1, 1);
        assert!(matches!(
            similarity(&z, &bank_with(vec![1.0, 0.0], 1, 1, 2)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn pooled_matches_full() {
        let bank = PrototypeBank::init(3, 2, 4, 5).unwrap();
        let vals: Vec<f32> = (0..3 * 4 * 4).map(|i| ((i * 37) % 11) as f32 - 5.0).collect();
        let z = EmbeddingMap::new(vals, 3, 4, 4, 1, 1).unwrap();
        let full = similarity(&z, &bank).unwrap();
        let fast = pooled_similarity(&z, &bank).unwrap();
        assert_eq!(full.pooled, fast.pooled);
        assert_eq!(full.argmax, fast.argmax);
    }

    #[test]
    fn predict_examples() {
        let bank = bank_with(vec![1.0, 0.0, 0.0, 1.0], 2, 1, 2);
        let p = predict_pooled(&[0.0, 0.0], &bank).unwrap();
        for c in &p.confidences {
            assert!((c - 0.11920292202211755).abs() < 1e-12);
        }
        let p = predict_pooled(&[1.0, 0.0], &bank).unwrap();
        assert!((p.logits[0] + 1.0).abs() < 1e-12);
        assert!((p.confidences[0] - 0.2689414213699951).abs() < 1e-12);

        let mut doubled = bank.clone();
        doubled.head_weights[1] = 2.0;
        let q = predict_pooled(&[1.0, 0.0], &doubled).unwrap();
        assert_eq!(q.logits[1], p.logits[1]);
    }

    #[test]
    fn init_contract() {
        let a = PrototypeBank::init(4, 3, 7, 11).unwrap();
        assert!(a.head_weights.iter().all(|&w| w == 1.0));
        assert!(a.head_bias.iter().all(|&b| b == -2.0));
        for p in a.prototypes.chunks_exact(7) {
            assert!((norm(p) - 1.0).abs() < 1e-6);
        }
        assert_eq!(a, PrototypeBank::init(4, 3, 7, 11).unwrap());
        assert_ne!(a, PrototypeBank::init(4, 3, 7, 12).unwrap());
        assert!(PrototypeBank::init(0, 1, 1, 0).is_err());
        assert!(PrototypeBank::init(1, 0, 1, 0).is_err());
        assert!(PrototypeBank::init(1, 1, 0, 0).is_err());
    }

    #[test]
    fn bank_validation() {
        assert!(matches!(
            PrototypeBank::new(vec![0.0, 0.0], vec![1.0], vec![0.0], 1, 1, 2),
            Err(Error::ZeroPrototype { class: 0, index: 0 })
        ));
        assert!(PrototypeBank::new(vec![1.0, 0.0], vec![-1.0], vec![0.0], 1, 1, 2).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
