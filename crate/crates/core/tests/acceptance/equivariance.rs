use protoaudio::dsp::{standardize, LogMel};
use protoaudio::embed::Backbone;
use protoaudio::explain::heatmap;
use protoaudio::protonet::{similarity, PrototypeBank};
use protoaudio::synth::{self, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::common::oracles::gaussian;
use crate::Outcome;

/// Shifts a synthetic clip by one backbone time stride and tracks prototypes
/// built from interior cells of the unshifted embedding.
pub fn check() -> Outcome {
    let cfg = SynthConfig::default();
    let dsp = &cfg.dsp;
    let backbone = Backbone::new(&synth::backbone_config()).unwrap();
    let stride = backbone.config().cumulative_stride();
    let front = LogMel::new(dsp).unwrap();
    let clips = synth::generate(&cfg, 6, 31, "eq");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut cases, mut cell_ok, mut peak_ok, mut drift) = (0, 0, 0, 0.0f64);
    for clip in &clips {
        let shift = stride * dsp.hop;
        let len = clip.waveform.len() - shift;
        let a = &clip.waveform.samples[..len];
        let b = &clip.waveform.samples[shift..];
        let sa = standardize(&front.compute_any_length(a), dsp).unwrap();
        let sb = standardize(&front.compute_any_length(b), dsp).unwrap();
        let za = backbone.extract(&sa).unwrap();
        let zb = backbone.extract(&sb).unwrap();
        let d = za.d;
        // prototypes: noisy copies of interior cells of `za`
        let mut protos = Vec::new();
        for x in (3..za.w - 3).step_by(2) {
            let y = (x * 5) % za.h;
            let cell = za.cell(y, x);
            let n = cell.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            protos.extend(cell.iter().map(|&v| v as f64 + 0.2 * n / (d as f64).sqrt() * gaussian(&mut rng)));
        }
        let j = protos.len() / d;
        let bank = PrototypeBank::new(protos, vec![1.0; j], vec![-2.0], 1, j, d).unwrap();
        let (ra, rb) = (similarity(&za, &bank).unwrap(), similarity(&zb, &bank).unwrap());
        for p in 0..j {
            let (ya, xa) = ra.argmax[p];
            if xa < 2 || xa + 2 >= za.w {
                continue;
            }
            cases += 1;
            if rb.argmax[p] == (ya, xa - 1) {
                cell_ok += 1;
            }
            drift = drift.max((ra.pooled[p] - rb.pooled[p]).abs());
            let (ha, hb) = (heatmap(&sa, &za, &bank, 0, p).unwrap(), heatmap(&sb, &zb, &bank, 0, p).unwrap());
            let (pa, pb) = (ha.peak(), hb.peak());
            if pb.0 == pa.0 && pa.1 == pb.1 + stride {
                peak_ok += 1;
            }
        }
    }
    let pass = cases > 0 && cell_ok == cases && peak_ok == cases && drift < 1e-5;
    Outcome::new(
        pass,
        format!(
            "{cases} interior prototypes over {} clips shifted by {stride} frames: argmax moved one cell in {cell_ok}, heatmap peak moved {stride} columns in {peak_ok}, max pooled drift {drift:.1e}",
            clips.len()
        ),
    )
}
