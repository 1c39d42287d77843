use protoaudio::eval::{auroc, cmap, top1, EvalTable};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::common::oracles::{brute_cmap, brute_macro_auroc, brute_top1, random_table};
use crate::Outcome;

const TABLES: usize = 200;
const N: usize = 50;
const C: usize = 20;

fn gap(lib: Option<f64>, oracle: Option<f64>) -> f64 {
    match (lib, oracle) {
        (Some(a), Some(b)) => (a - b).abs(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    }
}

pub fn check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7_001);
    let mut worst = [0.0f64; 3];
    for _ in 0..TABLES {
        let (scores, labels) = random_table(N, C, &mut rng);
        let t = EvalTable::new(labels.clone(), scores.clone(), N, C).unwrap();
        worst[0] = worst[0].max(gap(auroc(&t).ok(), brute_macro_auroc(&scores, &labels, C)));
        worst[1] = worst[1].max(gap(cmap(&t), brute_cmap(&scores, &labels, C)));
        worst[2] = worst[2].max(gap(top1(&t).accuracy, brute_top1(&scores, &labels, C)));
    }
    let pass = worst.iter().all(|&w| w <= 1e-12);
    Outcome::new(
        pass,
        format!(
            "{TABLES} tables of {N}x{C}; max |lib - brute force|: auroc {:.1e}, cmap {:.1e}, top1 {:.1e} (<= 1e-12)",
            worst[0], worst[1], worst[2]
        ),
    )
}
