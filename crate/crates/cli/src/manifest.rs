use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    #[serde(default)]
    pub audio_path: Option<PathBuf>,
    #[serde(default)]
    pub embedding_id: Option<String>,
    pub labels: Vec<String>,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub records: Vec<Record>,
    /// Label vector of every record over the config class list.
    pub targets: Vec<Vec<bool>>,
    by_key: HashMap<String, usize>,
}

/// Store id of segment `k` of an audio record.
pub fn segment_id(record: &str, k: usize) -> String {
    format!("{record}#{k}")
}

impl Manifest {
    /// Parses a JSON-lines manifest and validates it against `classes`.
    /// Relative audio paths resolve against the manifest's directory.
    pub fn load(path: &Path, classes: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut r: Record =
                serde_json::from_str(line).with_context(|| format!("{}:{}: bad record", path.display(), i + 1))?;
            if let Some(p) = &mut r.audio_path {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            records.push(r);
        }
        Self::new(records, classes)
    }

    pub fn new(records: Vec<Record>, classes: &[String]) -> Result<Self> {
        let mut ids = HashSet::new();
        let mut by_key = HashMap::new();
        let mut targets = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if !ids.insert(r.id.as_str()) {
                bail!("duplicate manifest id {:?}", r.id);
            }
            if r.audio_path.is_none() && r.embedding_id.is_none() {
                bail!("record {:?} has neither audio_path nor embedding_id", r.id);
            }
            let mut y = vec![false; classes.len()];
            for l in &r.labels {
                let k = classes
                    .iter()
                    .position(|c| c == l)
                    .with_context(|| format!("record {:?} uses unknown class {l:?}", r.id))?;
                y[k] = true;
            }
            targets.push(y);
            let key = r.embedding_id.clone().unwrap_or_else(|| r.id.clone());
            if by_key.insert(key.clone(), i).is_some() {
                bail!("store id {key:?} claimed by two records");
            }
        }
        Ok(Self { records, targets, by_key })
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record and segment index behind a store id.
    pub fn resolve(&self, store_id: &str) -> Option<(usize, Option<usize>)> {
        if let Some(&i) = self.by_key.get(store_id) {
            if self.records[i].embedding_id.is_some() {
                return Some((i, None));
            }
        }
        let (rec, k) = store_id.rsplit_once('#')?;
        let i = *self.by_key.get(rec)?;
        let r = &self.records[i];
        (r.audio_path.is_some() && r.embedding_id.is_none()).then_some(())?;
        Some((i, Some(k.parse().ok()?)))
    }
}
