//! Multi-label evaluation with logit masking: macro AUROC, class-wise mean
//! average precision (cmAP) and top-1 accuracy.
//!
//! Conventions:
//! - AUROC counts a (positive, negative) pair as correct when the positive
//!   scores strictly higher; ties earn half credit.
//! - AP ranks by descending score, breaking ties by ascending instance index.
//! - Classes that are degenerate for a metric are skipped and listed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{segment, standardize, DspConfig, LogMel, Waveform};
use crate::embed::{Backbone, EmbeddingMap};
use crate::error::{Error, Result};
use crate::par;
use crate::protonet::{predict_batch, PrototypeBank};

/// Paired `N × C` labels and scores, with a class mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub labels: Vec<bool>,
    pub scores: Vec<f64>,
    pub n: usize,
    pub c: usize,
    pub class_mask: Vec<bool>,
    pub class_names: Vec<String>,
}

impl EvalTable {
    pub fn new(labels: Vec<bool>, scores: Vec<f64>, n: usize, c: usize) -> Result<Self> {
        if labels.len() != n * c || scores.len() != n * c {
            return Err(Error::Shape(format!("table must be {n}x{c}")));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0 || *s > 1.0) {
            return Err(Error::Shape("scores must be finite and within [0, 1]".into()));
        }
        Ok(Self {
            labels,
            scores,
            n,
            c,
            class_mask: vec![true; c],
            class_names: (0..c).map(|i| format!("class_{i}")).collect(),
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.c {
            return Err(Error::Shape(format!("{} class names for {} classes", names.len(), self.c)));
        }
        self.class_names = names;
        Ok(self)
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.c {
            return Err(Error::Shape(format!("mask has {} entries for {} classes", mask.len(), self.c)));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptyMask);
        }
        self.class_mask = mask;
        Ok(self)
    }

    pub fn active_classes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.c).filter(|&k| self.class_mask[k])
    }

    fn column(&self, k: usize) -> (Vec<f64>, Vec<bool>) {
        (0..self.n)
            .map(|i| (self.scores[i * self.c + k], self.labels[i * self.c + k]))
            .unzip()
    }
}

/// Probability that a random positive outscores a random negative.
/// `None` if either label value is missing.
pub fn class_auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mann-Whitney: sum of (1-based, tie-averaged) ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut end = i + 1;
        while end < order.len() && scores[order[end]] == scores[order[i]] {
            end += 1;
        }
        let avg_rank = (i + 1 + end) as f64 / 2.0;
        let tied_pos = order[i..end].iter().filter(|&&k| labels[k]).count();
        rank_sum += avg_rank * tied_pos as f64;
        i = end;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

/// Mean over positives of precision at that positive's rank. `None` without positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        if labels[k] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / pos as f64)
}

fn per_class<F>(t: &EvalTable, metric: F) -> Vec<(usize, Option<f64>)>
where
    F: Fn(&[f64], &[bool]) -> Option<f64> + Sync + Send,
{
    let classes: Vec<usize> = t.active_classes().collect();
    par::map_slice(&classes, |&k| {
        let (s, y) = t.column(k);
        (k, metric(&s, &y))
    })
}

fn macro_mean(values: &[(usize, Option<f64>)]) -> Option<f64> {
    let valid: Vec<f64> = values.iter().filter_map(|(_, v)| *v).collect();
    (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64)
}

/// Macro AUROC over masked-in classes with both label values.
pub fn auroc(t: &EvalTable) -> Result<f64> {
    macro_mean(&per_class(t, class_auroc)).ok_or(Error::UndefinedAuroc)
}

/// Class-wise mean average precision over masked-in classes with a positive.
pub fn cmap(t: &EvalTable) -> Option<f64> {
    macro_mean(&per_class(t, average_precision))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Top1 {
    /// `None` when no instance has a true class among the active classes.
    pub accuracy: Option<f64>,
    pub counted: usize,
    pub excluded: usize,
}

/// Fraction of instances whose highest-scoring active class is a true class.
pub fn top1(t: &EvalTable) -> Top1 {
    let active: Vec<usize> = t.active_classes().collect();
    let (mut hits, mut counted) = (0usize, 0usize);
    for i in 0..t.n {
        let row = i * t.c;
        if !active.iter().any(|&k| t.labels[row + k]) {
            continue;
        }
        counted += 1;
        let mut best = active[0];
        for &k in &active[1..] {
            if t.scores[row + k] > t.scores[row + best] {
                best = k;
            }
        }
        if t.labels[row + best] {
            hits += 1;
        }
    }
    Top1 {
        accuracy: (counted > 0).then(|| hits as f64 / counted as f64),
        counted,
        excluded: t.n - counted,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub positives: usize,
    pub auroc: Option<f64>,
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedClass {
    pub class: String,
    pub metric: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: String,
    pub n_instances: usize,
    pub n_classes_evaluated: usize,
    pub auroc: Option<f64>,
    pub cmap: Option<f64>,
    pub top1: Option<f64>,
    pub top1_excluded_instances: usize,
    pub per_class: Vec<ClassReport>,
    pub skipped_classes: Vec<SkippedClass>,
}

/// All metrics plus a per-class breakdown.
pub fn report(t: &EvalTable, dataset: &str) -> Report {
    let aurocs = per_class(t, class_auroc);
    let aps = per_class(t, average_precision);
    let mut per = Vec::new();
    let mut skipped = Vec::new();
    for ((k, au), (_, ap)) in aurocs.iter().zip(&aps) {
        let name = t.class_names[*k].clone();
        let positives = (0..t.n).filter(|&i| t.labels[i * t.c + k]).count();
        if au.is_none() {
            skipped.push(SkippedClass {
                class: name.clone(),
                metric: "auroc".into(),
                reason: if positives == 0 { "no positives" } else { "no negatives" }.into(),
            });
        }
        if ap.is_none() {
            skipped.push(SkippedClass {
                class: name.clone(),
                metric: "ap".into(),
                reason: "no positives".into(),
            });
        }
        per.push(ClassReport {
            class: name,
            positives,
            auroc: *au,
            ap: *ap,
        });
    }
    let t1 = top1(t);
    Report {
        dataset: dataset.to_string(),
        n_instances: t.n,
        n_classes_evaluated: per.len(),
        auroc: macro_mean(&aurocs),
        cmap: macro_mean(&aps),
        top1: t1.accuracy,
        top1_excluded_instances: t1.excluded,
        per_class: per,
        skipped_classes: skipped,
    }
}

/// Scores labeled embeddings with `bank` and reports metrics over the masked classes.
pub fn evaluate(
    instances: &[(&EmbeddingMap, &[bool])],
    bank: &PrototypeBank,
    mask: &[bool],
    class_names: &[String],
    dataset: &str,
) -> Result<Report> {
    let c = bank.num_classes;
    if mask.len() != c || class_names.len() != c {
        return Err(Error::Shape("mask and class names must cover every class".into()));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    let maps: Vec<&EmbeddingMap> = instances.iter().map(|(z, _)| *z).collect();
    let preds = predict_batch(&maps, bank)?;
    let mut labels = Vec::with_capacity(instances.len() * c);
    for (_, y) in instances {
        if y.len() != c {
            return Err(Error::Shape(format!("label vector of length {} for {c} classes", y.len())));
        }
        labels.extend_from_slice(y);
    }
    let scores = preds.into_iter().flat_map(|p| p.confidences).collect();
    let table = EvalTable::new(labels, scores, instances.len(), c)?
        .with_class_names(class_names.to_vec())?
        .with_mask(mask.to_vec())?;
    Ok(report(&table, dataset))
}

/// Segments labeled recordings into clips and evaluates every clip.
pub fn evaluate_recordings(
    recordings: &[(Waveform, Vec<bool>)],
    dsp: &DspConfig,
    backbone: &Backbone,
    bank: &PrototypeBank,
    mask: &[bool],
    class_names: &[String],
    dataset: &str,
) -> Result<Report> {
    let front = LogMel::new(dsp)?;
    let mut clips = Vec::new();
    for (w, y) in recordings {
        for clip in segment(w, dsp.clip_seconds)? {
            clips.push((clip, y.as_slice()));
        }
    }
    let maps = par::map_slice(&clips, |(clip, _)| {
        let s = standardize(&front.compute(clip)?, dsp)?;
        backbone.extract(&s)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let instances: Vec<(&EmbeddingMap, &[bool])> = maps.iter().zip(&clips).map(|(z, (_, y))| (z, *y)).collect();
    evaluate(&instances, bank, mask, class_names, dataset)
}

/// Reads a newline-separated class list and turns it into a mask over `class_names`.
pub fn load_class_mask(path: impl AsRef<Path>, class_names: &[String]) -> Result<Vec<bool>> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    parse_class_mask(&text, class_names)
}

pub fn parse_class_mask(text: &str, class_names: &[String]) -> Result<Vec<bool>> {
    let mut mask = vec![false; class_names.len()];
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let k = class_names
            .iter()
            .position(|n| n == line)
            .ok_or_else(|| Error::Config(format!("mask names unknown class {line:?}")))?;
        mask[k] = true;
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    Ok(mask)
}
