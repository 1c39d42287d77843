use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use protoaudio::augment::AugmentConfig;
use protoaudio::dsp::DspConfig;
use protoaudio::embed::ToyBackboneConfig;
use protoaudio::objective::LossConfig;
use protoaudio::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Prototypes per class.
    pub per_class: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { per_class: 5 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Newline-separated class names; all classes when absent.
    pub mask: Option<PathBuf>,
}

/// Everything a run needs, read from one TOML document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub classes: Vec<String>,
    /// Overrides the seeds of the trainer, the augmenter and prototype initialization.
    pub seed: Option<u64>,
    /// Embedding store to read instead of the one `preprocess` writes into the run directory.
    pub store: Option<PathBuf>,
    /// Train from audio through the frozen backbone with waveform and
    /// spectrogram augmentation; otherwise train on the stored embeddings.
    pub online_augmentation: bool,
    /// Directories of WAV files for background mixing and no-call swaps.
    pub background_dir: Option<PathBuf>,
    pub nocall_dir: Option<PathBuf>,
    pub dsp: DspConfig,
    pub augment: AugmentConfig,
    pub backbone: ToyBackboneConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Reads and validates a config; relative paths resolve against its directory.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.store, &mut cfg.background_dir, &mut cfg.nocall_dir, &mut cfg.eval.mask]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if seed.is_some() {
            cfg.seed = seed;
        }
        if let Some(s) = cfg.seed {
            cfg.train.seed = s;
            cfg.augment.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            bail!("config lists no classes");
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.classes.iter().find(|c| !seen.insert(c.as_str())) {
            bail!("class {dup:?} is listed twice");
        }
        if self.model.per_class == 0 {
            bail!("model.per_class must be positive");
        }
        self.dsp.validate()?;
        self.augment.validate()?;
        self.backbone.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Resolved config as pretty JSON.
    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.json");
        fs::write(&path, serde_json::to_vec_pretty(self)?).with_context(|| format!("writing {}", path.display()))
    }
}
