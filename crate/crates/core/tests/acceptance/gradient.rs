use protoaudio::embed::EmbeddingMap;
use protoaudio::objective::total_loss_and_grads;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::common::oracles::{rel_err, GradProblem};
use crate::Outcome;

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-3;
const TRIALS: usize = 100;

/// Worst relative error over every gradient entry of one problem.
pub fn worst_error(p: &GradProblem) -> (f64, usize) {
    let refs: Vec<&EmbeddingMap> = p.maps.iter().collect();
    let report = total_loss_and_grads(&refs, &p.labels, &p.bank, &p.cfg).unwrap();
    let mut worst = 0.0f64;
    let mut entries = 0;
    let mut probe = |get: &dyn Fn(&mut protoaudio::protonet::PrototypeBank) -> &mut f64, analytic: f64| {
        let mut plus = p.bank.clone();
        *get(&mut plus) += STEP;
        let mut minus = p.bank.clone();
        *get(&mut minus) -= STEP;
        let numeric = (p.loss(&plus) - p.loss(&minus)) / (2.0 * STEP);
        worst = worst.max(rel_err(analytic, numeric, 1e-7));
        entries += 1;
    };
    for (i, &g) in report.grad_prototypes.iter().enumerate() {
        probe(&|b| &mut b.prototypes[i], g);
    }
    for (i, &g) in report.grad_weights.iter().enumerate() {
        probe(&|b| &mut b.head_weights[i], g);
    }
    for (i, &g) in report.grad_bias.iter().enumerate() {
        probe(&|b| &mut b.head_bias[i], g);
    }
    (worst, entries)
}

pub fn check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let (mut worst, mut entries, mut skipped, mut trials) = (0.0f64, 0, 0, 0);
    while trials < TRIALS {
        let p = GradProblem::random(&mut rng);
        if p.near_kink(STEP) {
            skipped += 1;
            continue;
        }
        let (w, n) = worst_error(&p);
        worst = worst.max(w);
        entries += n;
        trials += 1;
    }
    Outcome::new(
        worst < TOL,
        format!(
            "{trials} trials, {entries} entries, max relative error {worst:.2e} (< {TOL:.0e}); {skipped} draws within a step of a kink redrawn"
        ),
    )
}
