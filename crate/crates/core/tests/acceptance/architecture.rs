use protoaudio::embed::EmbeddingMap;
use protoaudio::objective::LossConfig;
use protoaudio::protonet::{predict, similarity, PrototypeBank};
use protoaudio::trainer::{train_epoch, EmbeddingDataset, TrainConfig, TrainState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::oracles::{gaussian, random_bank, random_map};
use crate::Outcome;

fn similarity_bounds(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..200 {
        let d = rng.random_range(1..10);
        let z = random_map(rng.random_range(1..6), rng.random_range(1..6), d, rng);
        let bank = random_bank(rng.random_range(1..4), rng.random_range(1..4), d, rng);
        for &s in &similarity(&z, &bank).unwrap().maps {
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    (lo, hi)
}

/// Largest similarity change after rescaling prototypes by arbitrary
/// positive factors and embeddings by powers of two (exact in f32).
fn scaling_drift(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(2..9);
        let z = random_map(4, 5, d, rng);
        let bank = random_bank(3, 2, d, rng);
        let mut scaled = bank.clone();
        for p in scaled.prototypes.chunks_mut(d) {
            let a = rng.random_range(1e-3..1e3);
            p.iter_mut().for_each(|v| *v *= a);
        }
        let k = 2f32.powi(rng.random_range(-8..8));
        let zs = EmbeddingMap::new(z.values.iter().map(|v| v * k).collect(), z.h, z.w, d, 1, 1).unwrap();
        let a = similarity(&z, &bank).unwrap();
        let b = similarity(&zs, &scaled).unwrap();
        for (x, y) in a.maps.iter().zip(&b.maps) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// Whether perturbing one class's prototypes, weights and bias leaves every
/// other class logit bit-identical.
fn class_isolation(rng: &mut ChaCha8Rng) -> bool {
    for _ in 0..100 {
        let d = 6;
        let z = random_map(3, 3, d, rng);
        let bank = random_bank(4, 3, d, rng);
        let target = rng.random_range(0..4);
        let mut moved = bank.clone();
        for j in 0..3 {
            moved.prototype_mut(target, j).iter_mut().for_each(|v| *v = gaussian(rng));
            moved.head_weights[target * 3 + j] = rng.random_range(0.0..3.0);
        }
        moved.head_bias[target] += 1.5;
        let a = predict(&similarity(&z, &bank).unwrap(), &bank).unwrap();
        let b = predict(&similarity(&z, &moved).unwrap(), &moved).unwrap();
        for k in (0..4).filter(|&k| k != target) {
            if a.logits[k].to_bits() != b.logits[k].to_bits() {
                return false;
            }
        }
    }
    true
}

/// Trains with an aggressive head rate on all-negative labels, one step per
/// epoch, and returns (steps, smallest weight seen, steps where the clamp fired).
fn nonnegative_weights(rng: &mut ChaCha8Rng) -> (usize, f64, usize) {
    let (c, j, d) = (3, 2, 5);
    let items = (0..12)
        .map(|i| (format!("n{i}"), random_map(3, 3, d, rng), vec![false; c]))
        .collect();
    let data = EmbeddingDataset { items };
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 12,
        lr_head: 0.5,
        warmup_ratio: 0.0,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(PrototypeBank::init(c, j, d, 3).unwrap());
    let (mut min_w, mut clamped) = (f64::INFINITY, 0);
    for _ in 0..cfg.epochs {
        train_epoch(&mut state, &data, &cfg, &LossConfig::default(), cfg.epochs, &mut |_| {}).unwrap();
        let w = state.bank.head_weights.iter().copied().fold(f64::INFINITY, f64::min);
        min_w = min_w.min(w);
        if w == 0.0 {
            clamped += 1;
        }
    }
    (state.step, min_w, clamped)
}

fn zero_similarity_confidence() -> f64 {
    let d = 4;
    // prototypes in span{e0, e1}, every cell along e2
    let protos = vec![1.0, 0.0, 0.0, 0.0, 0.3, -2.0, 0.0, 0.0];
    let bank = PrototypeBank::new(protos, vec![1.0, 1.0], vec![-2.0], 1, 2, d).unwrap();
    let cells: Vec<f32> = (0..6).flat_map(|i| [0.0, 0.0, 1.0 + i as f32, 0.0]).collect();
    let z = EmbeddingMap::new(cells, 2, 3, d, 1, 1).unwrap();
    predict(&similarity(&z, &bank).unwrap(), &bank).unwrap().confidences[0]
}

pub fn check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let (lo, hi) = similarity_bounds(&mut rng);
    let drift = scaling_drift(&mut rng);
    let isolated = class_isolation(&mut rng);
    let (steps, min_w, clamped) = nonnegative_weights(&mut rng);
    let conf = zero_similarity_confidence();
    let pass = lo >= -1.0
        && hi <= 1.0
        && drift < 1e-12
        && isolated
        && min_w >= 0.0
        && clamped > 0
        && (conf - 0.1192).abs() < 1e-4;
    Outcome::new(
        pass,
        format!(
            "similarity range [{lo:.6}, {hi:.6}]; scaling drift {drift:.1e}; class isolation {}; min head weight {min_w} over {steps} steps (clamp active on {clamped}); confidence at zero similarity {conf:.6}",
            if isolated { "exact" } else { "violated" }
        ),
    )
}
