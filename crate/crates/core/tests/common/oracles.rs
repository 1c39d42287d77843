//! Independent reference implementations used by the test targets.

use protoaudio::embed::EmbeddingMap;
use protoaudio::objective::{total_loss_and_grads, LossConfig};
use protoaudio::protonet::{similarity, sigmoid, PrototypeBank};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Pairwise-count AUROC of one class: wins plus half ties over all pairs.
pub fn brute_auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut num, mut pairs) = (0.0, 0usize);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (k, &sk) in scores.iter().enumerate() {
            if labels[k] {
                continue;
            }
            pairs += 1;
            if si > sk {
                num += 1.0;
            } else if si == sk {
                num += 0.5;
            }
        }
    }
    (pairs > 0).then(|| num / pairs as f64)
}

/// Mean precision at the rank of every positive; ranks by score descending,
/// ties by index ascending.
pub fn brute_ap(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // insertion sort keeps the reference independent of the library's sort
    for a in 1..order.len() {
        let mut b = a;
        while b > 0 {
            let (x, y) = (order[b - 1], order[b]);
            if scores[y] > scores[x] || (scores[y] == scores[x] && y < x) {
                order.swap(b - 1, b);
                b -= 1;
            } else {
                break;
            }
        }
    }
    let mut precisions = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            let hits = order[..=rank].iter().filter(|&&k| labels[k]).count();
            precisions.push(hits as f64 / (rank + 1) as f64);
        }
    }
    (!precisions.is_empty()).then(|| precisions.iter().sum::<f64>() / precisions.len() as f64)
}

/// Column `k` of a row-major `n × c` table.
pub fn column<T: Copy>(table: &[T], c: usize, k: usize) -> Vec<T> {
    table.iter().skip(k).step_by(c).copied().collect()
}

/// Macro AUROC over classes with both label values.
pub fn brute_macro_auroc(scores: &[f64], labels: &[bool], c: usize) -> Option<f64> {
    let vals: Vec<f64> = (0..c)
        .filter_map(|k| brute_auroc(&column(scores, c, k), &column(labels, c, k)))
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn brute_cmap(scores: &[f64], labels: &[bool], c: usize) -> Option<f64> {
    let vals: Vec<f64> = (0..c)
        .filter_map(|k| brute_ap(&column(scores, c, k), &column(labels, c, k)))
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Hit rate of the first maximal class over instances with a true class.
pub fn brute_top1(scores: &[f64], labels: &[bool], c: usize) -> Option<f64> {
    let (mut hits, mut counted) = (0, 0);
    for (row_s, row_l) in scores.chunks(c).zip(labels.chunks(c)) {
        if !row_l.contains(&true) {
            continue;
        }
        counted += 1;
        let mut best = 0;
        for k in 1..c {
            if row_s[k] > row_s[best] {
                best = k;
            }
        }
        if row_l[best] {
            hits += 1;
        }
    }
    (counted > 0).then(|| hits as f64 / counted as f64)
}

/// Random `n × c` table with per-class prevalence and deliberate score ties.
pub fn random_table(n: usize, c: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let prevalence: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..0.5)).collect();
    let coarse = rng.random_bool(0.5);
    let mut scores = Vec::with_capacity(n * c);
    let mut labels = Vec::with_capacity(n * c);
    for _ in 0..n {
        for &p in &prevalence {
            let y = rng.random_bool(p);
            let raw: f64 = rng.random_range(0.0..1.0) * 0.7 + if y { 0.3 } else { 0.0 };
            scores.push(if coarse { (raw * 10.0).round() / 10.0 } else { raw });
            labels.push(y);
        }
    }
    (scores, labels)
}

/// Mean binary cross-entropy with the same confidence clamp as the library.
pub fn mean_bce(conf: &[f64], labels: &[bool]) -> f64 {
    let eps = protoaudio::objective::CONF_CLAMP;
    conf.iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / conf.len() as f64
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_map(h: usize, w: usize, d: usize, rng: &mut ChaCha8Rng) -> EmbeddingMap {
    let values = (0..h * w * d).map(|_| gaussian(rng) as f32).collect();
    EmbeddingMap::new(values, h, w, d, 1, 1).unwrap()
}

/// Bank with Gaussian prototypes of random length, positive weights and Gaussian biases.
pub fn random_bank(c: usize, j: usize, d: usize, rng: &mut ChaCha8Rng) -> PrototypeBank {
    let prototypes = (0..c * j * d).map(|_| gaussian(rng)).collect();
    let weights = (0..c * j).map(|_| rng.random_range(0.2..2.0)).collect();
    let bias = (0..c).map(|_| gaussian(rng)).collect();
    PrototypeBank::new(prototypes, weights, bias, c, j, d).unwrap()
}

/// One finite-difference gradient problem.
pub struct GradProblem {
    pub maps: Vec<EmbeddingMap>,
    pub labels: Vec<bool>,
    pub bank: PrototypeBank,
    pub cfg: LossConfig,
}

impl GradProblem {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let c = rng.random_range(1..=4);
        let j = rng.random_range(1..=3);
        let d = rng.random_range(2..=8);
        let (h, w) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let n = rng.random_range(1..=4);
        let maps = (0..n).map(|_| random_map(h, w, d, rng)).collect();
        let labels = (0..n * c).map(|_| rng.random_bool(0.4)).collect();
        let bank = random_bank(c, j, d, rng);
        let cfg = LossConfig {
            lambda1: rng.random_range(0.0..1.0),
            ..LossConfig::default()
        };
        Self { maps, labels, bank, cfg }
    }

    pub fn loss(&self, bank: &PrototypeBank) -> f64 {
        let refs: Vec<&EmbeddingMap> = self.maps.iter().collect();
        total_loss_and_grads(&refs, &self.labels, bank, &self.cfg).unwrap().total
    }

    /// Whether a step of `h` can cross a kink: a max-pool argmax change, the
    /// negative clip threshold or the confidence clamp.
    pub fn near_kink(&self, h: f64) -> bool {
        let margin = 50.0 * h;
        let b = &self.bank;
        let scale = b.prototypes.chunks(b.dim).map(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt());
        let min_norm = scale.fold(f64::INFINITY, f64::min);
        let sim_margin = margin / min_norm.min(1.0);
        for (i, z) in self.maps.iter().enumerate() {
            let sim = similarity(z, b).unwrap();
            for p in 0..b.num_prototypes() {
                let map = &sim.maps[p * z.h * z.w..(p + 1) * z.h * z.w];
                let best = sim.pooled[p];
                if map.iter().filter(|&&v| best - v < sim_margin).count() > 1 {
                    return true;
                }
            }
            for k in 0..b.num_classes {
                let logit: f64 = (0..b.per_class)
                    .map(|q| b.head_weights[k * b.per_class + q] * sim.pooled[k * b.per_class + q])
                    .sum::<f64>()
                    + b.head_bias[k];
                let p = sigmoid(logit);
                let y = self.labels[i * b.num_classes + k];
                if !y && (p - self.cfg.clip_m).abs() < margin {
                    return true;
                }
                if !(1e-6..=1.0 - 1e-6).contains(&p) {
                    return true;
                }
            }
        }
        false
    }
}

/// Relative disagreement between an analytic and a numeric derivative;
/// entries where both are below `floor` count as agreeing.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < floor {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
