#![allow(dead_code)]

pub mod oracles;

use protoaudio::dsp::Spectrogram;
use protoaudio::embed::{Backbone, EmbeddingMap};
use protoaudio::eval::{self, EvalTable};
use protoaudio::objective::LossConfig;
use protoaudio::protonet::{predict_batch, CheckpointMeta, PrototypeBank};
use protoaudio::synth::{self, SynthClip, SynthConfig, NUM_CLASSES};
use protoaudio::trainer::{fit, EmbeddingDataset, TrainConfig, TrainState};

pub struct Corpus {
    pub train: Vec<SynthClip>,
    pub test: Vec<SynthClip>,
    pub train_feats: Vec<(Spectrogram, EmbeddingMap)>,
    pub test_feats: Vec<(Spectrogram, EmbeddingMap)>,
    pub backbone: Backbone,
}

pub fn corpus(n_train: usize, n_test: usize, seed: u64) -> Corpus {
    corpus_with(n_train, n_test, seed, &synth::backbone_config())
}

pub fn corpus_with(n_train: usize, n_test: usize, seed: u64, bcfg: &protoaudio::embed::ToyBackboneConfig) -> Corpus {
    corpus_cfg(n_train, n_test, seed, bcfg, &SynthConfig::default())
}

pub fn corpus_cfg(
    n_train: usize,
    n_test: usize,
    seed: u64,
    bcfg: &protoaudio::embed::ToyBackboneConfig,
    cfg: &SynthConfig,
) -> Corpus {
    let train = synth::generate(cfg, n_train, seed, "train-");
    let test = synth::generate(cfg, n_test, seed + 1, "test-");
    let backbone = Backbone::new(bcfg).unwrap();
    let train_feats = synth::featurize(&train, &cfg.dsp, &backbone).unwrap();
    let test_feats = synth::featurize(&test, &cfg.dsp, &backbone).unwrap();
    Corpus {
        train,
        test,
        train_feats,
        test_feats,
        backbone,
    }
}

pub fn dataset(clips: &[SynthClip], feats: &[(Spectrogram, EmbeddingMap)]) -> EmbeddingDataset {
    EmbeddingDataset {
        items: clips
            .iter()
            .zip(feats)
            .map(|(c, (_, z))| (c.id.clone(), z.clone(), c.labels.clone()))
            .collect(),
    }
}

pub fn train_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        seed,
        ..TrainConfig::default()
    }
}

pub fn train(c: &Corpus, per_class: usize, cfg: &TrainConfig) -> PrototypeBank {
    let d = c.train_feats[0].1.d;
    let bank = PrototypeBank::init(NUM_CLASSES, per_class, d, cfg.seed).unwrap();
    let mut state = TrainState::new(bank);
    let train = dataset(&c.train, &c.train_feats);
    let out = fit(
        &mut state,
        &train,
        None,
        cfg,
        &LossConfig::default(),
        None,
        &CheckpointMeta::default(),
        &mut |_| {},
    )
    .unwrap();
    out.best_bank
}

pub fn test_table(c: &Corpus, bank: &PrototypeBank) -> EvalTable {
    let maps: Vec<&EmbeddingMap> = c.test_feats.iter().map(|(_, z)| z).collect();
    let preds = predict_batch(&maps, bank).unwrap();
    let labels = c.test.iter().flat_map(|t| t.labels.clone()).collect();
    let scores = preds.into_iter().flat_map(|p| p.confidences).collect();
    EvalTable::new(labels, scores, c.test.len(), NUM_CLASSES).unwrap()
}

pub fn metrics(c: &Corpus, bank: &PrototypeBank) -> (f64, f64) {
    let t = test_table(c, bank);
    (eval::auroc(&t).unwrap(), eval::cmap(&t).unwrap())
}
