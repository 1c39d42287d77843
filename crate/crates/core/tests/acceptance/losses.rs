use protoaudio::objective::{asym_loss, ortho_loss, LossConfig};
use protoaudio::protonet::PrototypeBank;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::oracles::{gaussian, mean_bce};
use crate::Outcome;

/// Per class, the first `j` rows of a random rotation of the identity.
fn orthonormal_bank(c: usize, j: usize, d: usize, rng: &mut ChaCha8Rng) -> PrototypeBank {
    let mut protos = Vec::new();
    for _ in 0..c {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        while basis.len() < j {
            let mut v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
            for u in &basis {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-3 {
                // arbitrary positive lengths: the loss only sees directions
                let len = rng.random_range(0.5..3.0);
                basis.push(v.iter().map(|x| x / n).collect());
                protos.extend(v.iter().map(|x| x / n * len));
            }
        }
    }
    PrototypeBank::new(protos, vec![1.0; c * j], vec![-2.0; c], c, j, d).unwrap()
}

pub fn check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (ortho_zero, _) = ortho_loss(&orthonormal_bank(3, 4, 6, &mut rng)).unwrap();

    let p: Vec<f64> = (0..5).map(|_| gaussian(&mut rng)).collect();
    let pair = PrototypeBank::new([p.clone(), p].concat(), vec![1.0; 2], vec![-2.0], 1, 2, 5).unwrap();
    let (ortho_pair, _) = ortho_loss(&pair).unwrap();

    let plain = LossConfig {
        gamma_pos: 0.0,
        gamma_neg: 0.0,
        clip_m: 0.0,
        lambda1: 0.0,
    };
    let mut bce_gap = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..40) * 7;
        let conf: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let (asym, _) = asym_loss(&conf, &labels, &plain).unwrap();
        bce_gap = bce_gap.max((asym - mean_bce(&conf, &labels)).abs());
    }

    let pass = ortho_zero.abs() < 1e-12 && (ortho_pair - 0.5).abs() < 1e-12 && bce_gap < 1e-9;
    Outcome::new(
        pass,
        format!(
            "ortho(orthonormal) = {ortho_zero:.1e}, ortho(duplicated pair) = {ortho_pair:.12}, max |asym(0,0,0) - BCE| = {bce_gap:.1e} over 50 tables"
        ),
    )
}
