use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use protoaudio::augment::{Augmenter, LabeledClip};
use protoaudio::dsp::{read_wav, segment, standardize, write_wav, LogMel, LogMelStats, Spectrogram, Waveform};
use protoaudio::embed::{save_embeddings, Backbone, EmbeddingMap, EmbeddingReader};
use protoaudio::eval::{evaluate, load_class_mask};
use protoaudio::explain::{
    box_audio, explain_prediction, heatmap, project, render_box_png, render_heatmap_png, write_artifacts, write_index,
    ArtifactPaths, ProjectionEntry, SpecBox,
};
use protoaudio::par;
use protoaudio::protonet::{load_checkpoint, CheckpointMeta, PrototypeBank};
use protoaudio::trainer::{
    fit, AudioDataset, AudioItem, Dataset, EmbeddingDataset, TrainState, CHECKPOINT_FILE, SIDECAR_FILE,
};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::manifest::{segment_id, Manifest, Split};

pub const STORE_FILE: &str = "embeddings.apem";
pub const STATS_FILE: &str = "preprocess_stats.json";
pub const PROJECTION_FILE: &str = "projection.json";
pub const REPORT_FILE: &str = "report.json";

/// Inputs shared by every command.
pub struct Run {
    pub cfg: RunConfig,
    pub manifest: Manifest,
    pub out: PathBuf,
}

impl Run {
    pub fn open(config: &Path, manifest: &Path, out: &Path, seed: Option<u64>) -> Result<Self> {
        let cfg = RunConfig::load(config, seed)?;
        let manifest = Manifest::load(manifest, &cfg.classes)?;
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            cfg,
            manifest,
            out: out.to_path_buf(),
        })
    }

    fn store_path(&self) -> PathBuf {
        self.cfg.store.clone().unwrap_or_else(|| self.out.join(STORE_FILE))
    }

    fn checkpoint_path(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf).unwrap_or_else(|| self.out.join(CHECKPOINT_FILE))
    }

    fn load_bank(&self, flag: Option<&Path>) -> Result<PrototypeBank> {
        let path = self.checkpoint_path(flag);
        let (bank, meta) = load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
        if bank.num_classes != self.cfg.classes.len() {
            bail!("checkpoint has {} classes, config lists {}", bank.num_classes, self.cfg.classes.len());
        }
        if !meta.class_names.is_empty() && meta.class_names != self.cfg.classes {
            bail!("checkpoint class names differ from the config class list");
        }
        Ok(bank)
    }

    /// Stored embeddings of one split with their labels, in store order.
    fn split_items(&self, split: Split) -> Result<Vec<(String, EmbeddingMap, Vec<bool>)>> {
        let path = self.store_path();
        let reader = EmbeddingReader::open(&path).with_context(|| format!("opening store {}", path.display()))?;
        let mut out = Vec::new();
        for rec in reader {
            let (id, z) = rec?;
            match self.manifest.resolve(&id) {
                Some((i, _)) if self.manifest.records[i].split == split => {
                    out.push((id, z, self.manifest.targets[i].clone()));
                }
                Some(_) => {}
                None => warn!("store id {id:?} is not in the manifest; skipped"),
            }
        }
        Ok(out)
    }

    fn front(&self) -> Result<LogMel> {
        Ok(LogMel::new(&self.cfg.dsp)?)
    }

    /// Audio segments of a record, read and split once.
    fn segments(&self, i: usize) -> Result<Vec<Waveform>> {
        let r = &self.manifest.records[i];
        let path = r.audio_path.as_ref().with_context(|| format!("record {:?} has no audio", r.id))?;
        let w = read_wav(path).with_context(|| format!("reading {}", path.display()))?;
        if w.sample_rate != self.cfg.dsp.sample_rate {
            bail!(
                "{}: sample rate {} Hz, config expects {} Hz",
                path.display(),
                w.sample_rate,
                self.cfg.dsp.sample_rate
            );
        }
        Ok(segment(&w, self.cfg.dsp.clip_seconds)?)
    }

    /// Raw log-mel of the audio segment behind a store id, if it has audio.
    fn raw_spectrogram(&self, store_id: &str, cache: &mut HashMap<usize, Vec<Waveform>>) -> Result<Option<Spectrogram>> {
        let Some((i, Some(k))) = self.manifest.resolve(store_id) else {
            return Ok(None);
        };
        if let std::collections::hash_map::Entry::Vacant(slot) = cache.entry(i) {
            slot.insert(self.segments(i)?);
        }
        let seg = cache[&i].get(k).with_context(|| format!("{store_id}: segment out of range"))?;
        Ok(Some(self.front()?.compute(seg)?))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Directory-safe form of a name.
fn safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

fn wav_pool(dir: Option<&Path>) -> Result<Vec<Waveform>> {
    let Some(dir) = dir else { return Ok(Vec::new()) };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_wav(p).with_context(|| format!("reading {}", p.display()))).collect()
}

pub fn preprocess(run: &Run) -> Result<()> {
    let cfg = &run.cfg;
    run.cfg.write_snapshot(&run.out)?;
    let store = run.out.join(STORE_FILE);
    if run.manifest.is_empty() {
        warn!("manifest is empty; writing an empty store");
    }
    let backbone = Backbone::new(&cfg.backbone)?;
    let front = run.front()?;
    let audio: Vec<usize> = (0..run.manifest.records.len())
        .filter(|&i| run.manifest.records[i].audio_path.is_some())
        .collect();
    let skipped = run.manifest.records.len() - audio.len();
    if skipped > 0 {
        info!("{skipped} records reference stored embeddings and are not preprocessed");
    }
    // per record: raw log-mel values and embeddings of every segment
    type Featurized = Vec<(String, Vec<f64>, EmbeddingMap)>;
    let results: Vec<Result<Featurized>> = par::map_slice(&audio, |&i| {
        let id = &run.manifest.records[i].id;
        run.segments(i)?
            .iter()
            .enumerate()
            .map(|(k, seg)| {
                let raw = front.compute(seg)?;
                let z = backbone.extract(&standardize(&raw, &cfg.dsp)?)?;
                Ok((segment_id(id, k), raw.values, z))
            })
            .collect()
    });
    let mut stats = LogMelStats::default();
    let mut items = Vec::new();
    let mut errors = Vec::new();
    for (&i, res) in audio.iter().zip(results) {
        match res {
            Ok(segs) => {
                for (id, raw, z) in segs {
                    stats.push_all(&raw);
                    items.push((id, z));
                }
            }
            Err(e) => errors.push(format!("{}: {e:#}", run.manifest.records[i].id)),
        }
    }
    save_embeddings(&store, &items)?;
    write_json(
        &run.out.join(STATS_FILE),
        &json!({
            "count": stats.count,
            "mean": stats.mean,
            "std": stats.std,
            "clips": items.len(),
            "records": audio.len() - errors.len(),
            "errors": errors,
        }),
    )?;
    info!("wrote {} clips to {}", items.len(), store.display());
    if !errors.is_empty() {
        for e in &errors {
            eprintln!("error: {e}");
        }
        bail!("{} of {} records failed", errors.len(), audio.len());
    }
    Ok(())
}

/// Training clips cut from their recordings, each with a context window for time shifting.
fn audio_items(run: &Run) -> Result<Vec<AudioItem>> {
    let dsp = &run.cfg.dsp;
    let mut items = Vec::new();
    for (i, r) in run.manifest.records.iter().enumerate() {
        if r.split != Split::Train {
            continue;
        }
        if r.audio_path.is_none() {
            bail!("record {:?} has no audio; set online_augmentation = false to train on stored embeddings", r.id);
        }
        let segs = run.segments(i)?;
        let whole: Vec<f32> = segs.iter().flat_map(|s| s.samples.iter().copied()).collect();
        let clip_len = segs[0].len();
        let window = ((run.cfg.augment.shift_window_seconds * dsp.sample_rate as f64) as usize).max(clip_len);
        for (k, seg) in segs.into_iter().enumerate() {
            let center = k * clip_len + clip_len / 2;
            let lo = center.saturating_sub(window / 2).min(whole.len().saturating_sub(window));
            let hi = (lo + window).min(whole.len());
            items.push(AudioItem {
                id: segment_id(&r.id, k),
                clip: LabeledClip {
                    waveform: seg,
                    labels: run.manifest.targets[i].clone(),
                },
                context: Waveform {
                    samples: whole[lo..hi].to_vec(),
                    sample_rate: dsp.sample_rate,
                },
            });
        }
    }
    Ok(items)
}

pub fn train(run: &Run, resume: bool) -> Result<()> {
    let cfg = &run.cfg;
    cfg.write_snapshot(&run.out)?;
    let val = EmbeddingDataset {
        items: run.split_items(Split::Val)?,
    };
    let backbone = Backbone::new(&cfg.backbone)?;
    let stored;
    let audio;
    let (train_set, dim): (&dyn Dataset, usize) = if cfg.online_augmentation {
        let mut aug_cfg = cfg.augment.clone();
        let background = wav_pool(cfg.background_dir.as_deref())?;
        let nocall = wav_pool(cfg.nocall_dir.as_deref())?;
        if background.is_empty() && aug_cfg.p_background > 0.0 {
            warn!("no background pool configured; background mixing disabled");
            aug_cfg.p_background = 0.0;
        }
        if nocall.is_empty() && aug_cfg.p_nocall > 0.0 {
            warn!("no no-call pool configured; no-call swaps disabled");
            aug_cfg.p_nocall = 0.0;
        }
        let augmenter = Augmenter::new(aug_cfg, background, nocall)?;
        audio = AudioDataset::new(audio_items(run)?, &cfg.dsp, &backbone, augmenter)?;
        (&audio, cfg.backbone.output_dim())
    } else {
        stored = EmbeddingDataset {
            items: run.split_items(Split::Train)?,
        };
        let dim = stored.items.first().map_or(0, |(_, z, _)| z.d);
        (&stored, dim)
    };
    if train_set.is_empty() {
        bail!("no training instances in the manifest");
    }
    let sidecar = run.out.join(SIDECAR_FILE);
    let mut state = if resume && sidecar.exists() {
        info!("resuming from {}", sidecar.display());
        TrainState::load_sidecar(&sidecar)?
    } else {
        TrainState::new(PrototypeBank::init(cfg.classes.len(), cfg.model.per_class, dim, cfg.train.seed)?)
    };
    if state.bank.dim != dim {
        bail!("embedding dimension {dim} does not match the resumed bank ({})", state.bank.dim);
    }
    let meta = CheckpointMeta {
        class_names: cfg.classes.clone(),
        metadata: json!({ "seed": cfg.train.seed, "per_class": cfg.model.per_class, "dim": dim }),
    };
    let log_path = run.out.join("train_log.jsonl");
    let mut log = BufWriter::new(
        fs::OpenOptions::new()
            .create(true)
            .append(resume)
            .write(true)
            .truncate(!resume)
            .open(&log_path)
            .with_context(|| format!("opening {}", log_path.display()))?,
    );
    let mut log_err = None;
    let summary = fit(
        &mut state,
        train_set,
        (!val.is_empty()).then_some(&val as &dyn Dataset),
        &cfg.train,
        &cfg.loss,
        Some(&run.out),
        &meta,
        &mut |step| {
            if let Err(e) = serde_json::to_writer(&mut log, step).map_err(anyhow::Error::from).and_then(|_| Ok(writeln!(log)?)) {
                log_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = log_err {
        return Err(e.context("writing the training log"));
    }
    log.flush()?;
    write_json(&run.out.join("train_summary.json"), &summary.epochs)?;
    if let Some(last) = summary.epochs.last() {
        info!("epoch {}: train loss {:.6}, val loss {:?}", last.epoch, last.train_loss, last.val_loss);
    }
    Ok(())
}

pub fn eval(run: &Run, checkpoint: Option<&Path>, mask: Option<&Path>) -> Result<()> {
    let bank = run.load_bank(checkpoint)?;
    let classes = &run.cfg.classes;
    let mask = match mask.or(run.cfg.eval.mask.as_deref()) {
        Some(p) => load_class_mask(p, classes).with_context(|| format!("reading mask {}", p.display()))?,
        None => vec![true; classes.len()],
    };
    let items = run.split_items(Split::Test)?;
    if items.is_empty() {
        bail!("no test instances in the store");
    }
    let instances: Vec<(&EmbeddingMap, &[bool])> = items.iter().map(|(_, z, y)| (z, y.as_slice())).collect();
    let report = evaluate(&instances, &bank, &mask, classes, "test")?;
    write_json(&run.out.join(REPORT_FILE), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub fn project_cmd(run: &Run, checkpoint: Option<&Path>, k: usize) -> Result<()> {
    let bank = run.load_bank(checkpoint)?;
    let train_ids: HashSet<String> = run.split_items(Split::Train)?.into_iter().map(|(id, _, _)| id).collect();
    let path = run.store_path();
    let reader = EmbeddingReader::open(&path)?;
    let shape = (run.cfg.dsp.mel_bins, run.cfg.dsp.clip_frames());
    let stream = reader.filter(|r| r.as_ref().map_or(true, |(id, _)| train_ids.contains(id)));
    let entries = project(&bank, stream, k, shape)?;

    // artifacts need the exemplars' embeddings and spectrograms
    let wanted: HashSet<&str> = entries.iter().map(|e| e.instance_id.as_str()).collect();
    let mut maps = HashMap::new();
    for rec in EmbeddingReader::open(&path)? {
        let (id, z) = rec?;
        if wanted.contains(id.as_str()) {
            maps.insert(id, z);
        }
    }
    let root = run.out.join("prototypes");
    let mut cache = HashMap::new();
    let mut artifacts: Vec<Option<ArtifactPaths>> = Vec::with_capacity(entries.len());
    for e in &entries {
        let Some(raw) = run.raw_spectrogram(&e.instance_id, &mut cache)? else {
            artifacts.push(None);
            continue;
        };
        let s = standardize(&raw, &run.cfg.dsp)?;
        let h = heatmap(&s, &maps[&e.instance_id], &bank, e.class, e.prototype)?;
        artifacts.push(Some(write_artifacts(&root, &safe(&run.cfg.classes[e.class]), e, &s, &h, None)?));
    }
    write_index(run.out.join(PROJECTION_FILE), &entries, &run.cfg.classes, &artifacts)?;
    info!("projected {} prototypes onto {} training clips", bank.num_prototypes(), train_ids.len());
    Ok(())
}

#[derive(Serialize)]
struct ContributionOut<'a> {
    class: &'a str,
    prototype: usize,
    similarity: f64,
    weight: f64,
    contribution: f64,
    argmax_cell: (usize, usize),
    #[serde(rename = "box")]
    bbox: SpecBox,
    heatmap_png: String,
    box_png: String,
    exemplars: Vec<String>,
}

pub fn explain_cmd(run: &Run, checkpoint: Option<&Path>, top_m: usize, ids: &[String]) -> Result<()> {
    let bank = run.load_bank(checkpoint)?;
    let projection_path = run.out.join(PROJECTION_FILE);
    let projections: Vec<ProjectionEntry> = if projection_path.exists() {
        serde_json::from_slice(&fs::read(&projection_path)?).context("reading the projection index")?
    } else {
        warn!("no {PROJECTION_FILE} in the run directory; explanations carry no exemplars");
        Vec::new()
    };
    let wanted: Option<HashSet<&str>> = (!ids.is_empty()).then(|| ids.iter().map(String::as_str).collect());
    let items: Vec<(String, EmbeddingMap)> = match &wanted {
        None => run.split_items(Split::Test)?.into_iter().map(|(id, z, _)| (id, z)).collect(),
        Some(w) => EmbeddingReader::open(run.store_path())?
            .filter(|r| r.as_ref().map_or(true, |(id, _)| w.contains(id.as_str())))
            .collect::<protoaudio::Result<_>>()?,
    };
    if let Some(w) = &wanted {
        let found: HashSet<&str> = items.iter().map(|(id, _)| id.as_str()).collect();
        if let Some(missing) = w.iter().find(|id| !found.contains(*id)) {
            bail!("clip {missing:?} is not in the store");
        }
    }
    let dir = run.out.join("explanations");
    fs::create_dir_all(&dir)?;
    let mut cache = HashMap::new();
    for (id, z) in &items {
        let raw = run
            .raw_spectrogram(id, &mut cache)?
            .with_context(|| format!("clip {id:?} has no audio to explain against"))?;
        let s = standardize(&raw, &run.cfg.dsp)?;
        let ex = explain_prediction(&s, z, &bank, top_m, &projections)?;
        let stem = safe(id);
        let mut top = Vec::new();
        for (rank, t) in ex.top.iter().enumerate() {
            let heat = format!("{stem}_top{rank}.png");
            let boxed = format!("{stem}_top{rank}_box.png");
            render_heatmap_png(dir.join(&heat), &s, &t.heatmap)?;
            render_box_png(dir.join(&boxed), &s, &t.heatmap, &t.bbox)?;
            top.push(ContributionOut {
                class: &run.cfg.classes[t.class],
                prototype: t.prototype,
                similarity: t.similarity,
                weight: t.weight,
                contribution: t.contribution,
                argmax_cell: t.argmax_cell,
                bbox: t.bbox,
                heatmap_png: heat,
                box_png: boxed,
                exemplars: t.exemplars.iter().map(|e| e.instance_id.clone()).collect(),
            });
        }
        let doc = json!({
            "id": id,
            "logits": ex.logits,
            "confidences": run.cfg.classes.iter().zip(&ex.confidences).map(|(c, p)| json!({"class": c, "confidence": p})).collect::<Vec<_>>(),
            "top": top,
        });
        write_json(&dir.join(format!("{stem}.json")), &doc)?;
    }
    info!("explained {} clips into {}", items.len(), dir.display());
    Ok(())
}

pub fn render_audio(run: &Run, k: Option<usize>) -> Result<()> {
    let path = run.out.join(PROJECTION_FILE);
    let entries: Vec<ProjectionEntry> = serde_json::from_slice(
        &fs::read(&path).with_context(|| format!("reading {}; run `project` first", path.display()))?,
    )?;
    let dsp = &run.cfg.dsp;
    let mut cache = HashMap::new();
    let mut written = 0;
    for e in entries.iter().filter(|e| k.is_none_or(|k| e.rank < k)) {
        let Some(raw) = run.raw_spectrogram(&e.instance_id, &mut cache)? else {
            warn!("{}: no audio behind this exemplar; skipped", e.instance_id);
            continue;
        };
        let audio = box_audio(&raw, &e.bbox, dsp, dsp.griffin_lim_iterations, run.cfg.train.seed)?;
        let dir = run
            .out
            .join("prototypes")
            .join(safe(&run.cfg.classes[e.class]))
            .join(format!("proto_{}", e.prototype));
        fs::create_dir_all(&dir)?;
        let wav = dir.join(format!("rank_{}.wav", e.rank));
        write_wav(&wav, &audio)?;
        written += 1;
    }
    info!("rendered {written} prototype regions");
    Ok(())
}
