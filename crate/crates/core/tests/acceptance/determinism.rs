use std::fs;
use std::path::Path;

use protoaudio::embed::Backbone;
use protoaudio::eval::evaluate;
use protoaudio::objective::LossConfig;
use protoaudio::protonet::{CheckpointMeta, PrototypeBank};
use protoaudio::synth::{self, SynthConfig, NUM_CLASSES};
use protoaudio::trainer::{fit, TrainState, CHECKPOINT_FILE, SIDECAR_FILE};

use crate::common::{dataset, train_config};
use crate::Outcome;

/// Synthesis, featurization, training with validation and checkpointing,
/// then evaluation. Returns (checkpoint, sidecar, report) bytes.
fn pipeline(dir: &Path) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let cfg = SynthConfig::default();
    let backbone = Backbone::new(&synth::backbone_config()).unwrap();
    let split = |n, seed, prefix| {
        let clips = synth::generate(&cfg, n, seed, prefix);
        let feats = synth::featurize(&clips, &cfg.dsp, &backbone).unwrap();
        (clips, feats)
    };
    let (train, train_f) = split(96, 11, "train-");
    let (val, val_f) = split(32, 12, "val-");
    let (test, test_f) = split(32, 13, "test-");
    let names: Vec<String> = (0..NUM_CLASSES).map(|c| format!("class{c}")).collect();
    let meta = CheckpointMeta {
        class_names: names.clone(),
        ..CheckpointMeta::default()
    };
    let bank = PrototypeBank::init(NUM_CLASSES, 3, train_f[0].1.d, 0).unwrap();
    let mut state = TrainState::new(bank);
    let summary = fit(
        &mut state,
        &dataset(&train, &train_f),
        Some(&dataset(&val, &val_f)),
        &train_config(4, 0),
        &LossConfig::default(),
        Some(dir),
        &meta,
        &mut |_| {},
    )
    .unwrap();
    let instances: Vec<_> = test.iter().zip(&test_f).map(|(c, (_, z))| (z, c.labels.as_slice())).collect();
    let report = evaluate(&instances, &summary.best_bank, &[true; NUM_CLASSES], &names, "test").unwrap();
    (
        fs::read(dir.join(CHECKPOINT_FILE)).unwrap(),
        fs::read(dir.join(SIDECAR_FILE)).unwrap(),
        serde_json::to_vec(&report).unwrap(),
    )
}

pub fn check() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    let same = [first.0 == second.0, first.1 == second.1, first.2 == second.2];
    Outcome::new(
        same.iter().all(|&s| s),
        format!(
            "two seeded runs: checkpoint ({} bytes) {}, optimizer state {}, report {}",
            first.0.len(),
            if same[0] { "identical" } else { "differs" },
            if same[1] { "identical" } else { "differs" },
            if same[2] { "identical" } else { "differs" }
        ),
    )
}
