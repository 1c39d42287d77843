use protoaudio::explain::{components_above, heatmap, percentile_box, BOX_QUANTILE};
use protoaudio::protonet::{similarity, PrototypeBank};

use crate::common::{corpus, metrics, train, train_config, Corpus};
use crate::Outcome;

const EPOCHS: usize = 30;
const MIN_AUROC: f64 = 0.95;
const MIN_CMAP: f64 = 0.80;
const MAX_AUROC_DROP: f64 = 0.02;
const MIN_IOU: f64 = 0.5;
const MIN_FRACTION: f64 = 0.70;

/// One corpus trained at J = 1 and J = 5.
pub struct Run {
    corpus: Corpus,
    single: (PrototypeBank, f64, f64),
    multi: (PrototypeBank, f64, f64),
}

impl Run {
    pub fn train() -> Self {
        let corpus = corpus(400, 100, 7);
        let cfg = train_config(EPOCHS, 0);
        let fit = |j| {
            let bank = train(&corpus, j, &cfg);
            let (a, m) = metrics(&corpus, &bank);
            (bank, a, m)
        };
        let single = fit(1);
        let multi = fit(5);
        Run { corpus, single, multi }
    }

    pub fn sweep_outcome(&self) -> Outcome {
        let (_, a1, m1) = self.single;
        let (_, a5, m5) = self.multi;
        let pass = a1 >= MIN_AUROC && a5 >= MIN_AUROC && m1 >= MIN_CMAP && m5 >= MIN_CMAP && a5 >= a1 - MAX_AUROC_DROP;
        Outcome::new(
            pass,
            format!(
                "{EPOCHS} epochs on 400 synthetic clips, 100 held out: J=1 AUROC {a1:.3} cmAP {m1:.3}; J=5 AUROC {a5:.3} cmAP {m5:.3} (need AUROC >= {MIN_AUROC}, cmAP >= {MIN_CMAP}, J=5 within {MAX_AUROC_DROP} of J=1)"
            ),
        )
    }

    /// Box overlap with planted motifs and component counts for repeated
    /// motifs, using each positive class's strongest J=5 prototype.
    pub fn fidelity_outcome(&self) -> Outcome {
        let bank = &self.multi.0;
        let (mut cases, mut hits, mut repeats, mut split) = (0, 0, 0, 0);
        let mut iou_sum = 0.0;
        for (clip, (s, z)) in self.corpus.test.iter().zip(&self.corpus.test_feats) {
            let sim = similarity(z, bank).unwrap();
            for c in (0..bank.num_classes).filter(|&c| clip.labels[c]) {
                let j = (0..bank.per_class)
                    .max_by(|&a, &b| {
                        let ea = bank.weight(c, a) * sim.pooled_at(c, a);
                        let eb = bank.weight(c, b) * sim.pooled_at(c, b);
                        ea.total_cmp(&eb).then(b.cmp(&a))
                    })
                    .unwrap();
                let h = heatmap(s, z, bank, c, j).unwrap();
                let b = percentile_box(&h, BOX_QUANTILE);
                let iou = clip
                    .motifs
                    .iter()
                    .filter(|m| m.class == c)
                    .map(|m| b.iou(&m.bbox))
                    .fold(0.0, f64::max);
                cases += 1;
                iou_sum += iou;
                if iou >= MIN_IOU {
                    hits += 1;
                }
                if clip.repeated(c) {
                    repeats += 1;
                    if components_above(&h, BOX_QUANTILE) >= 2 {
                        split += 1;
                    }
                }
            }
        }
        let frac = hits as f64 / cases.max(1) as f64;
        let split_frac = split as f64 / repeats.max(1) as f64;
        Outcome::new(
            cases > 0 && frac >= MIN_FRACTION && split_frac >= MIN_FRACTION,
            format!(
                "box IoU >= {MIN_IOU} in {hits}/{cases} ({:.1}%, need {:.0}%), mean IoU {:.3}; repeated motifs with >= 2 components {split}/{repeats}",
                100.0 * frac,
                100.0 * MIN_FRACTION,
                iou_sum / cases.max(1) as f64
            ),
        )
    }
}
