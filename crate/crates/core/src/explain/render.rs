//! Explanation artifacts: heatmap and box PNGs, box CSVs, boxed-region audio
//! and the index of everything written.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{Heatmap, ProjectionEntry, SpecBox};
use crate::dsp::{griffin_lim, write_wav, DspConfig, Spectrogram, Waveform, LOG_FLOOR};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "c,j,instance,similarity,f_lo,f_hi,t_lo,t_hi";

const VIRIDIS: [[f64; 3]; 9] = [
    [68.0, 1.0, 84.0],
    [71.0, 44.0, 122.0],
    [59.0, 81.0, 139.0],
    [44.0, 113.0, 142.0],
    [33.0, 144.0, 141.0],
    [39.0, 173.0, 129.0],
    [92.0, 200.0, 99.0],
    [170.0, 220.0, 50.0],
    [253.0, 231.0, 37.0],
];

/// Viridis color for `t ∈ [0, 1]`.
pub fn viridis(t: f64) -> [u8; 3] {
    let x = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for (k, o) in out.iter_mut().enumerate() {
        *o = (VIRIDIS[i][k] + (VIRIDIS[i + 1][k] - VIRIDIS[i][k]) * f).round() as u8;
    }
    out
}

fn normalized(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    values
        .iter()
        .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 })
        .collect()
}

/// RGB raster, low frequencies at the bottom, heatmap blended over the spectrogram.
fn compose(s: &Spectrogram, h: &Heatmap) -> Result<Vec<u8>> {
    if s.shape() != (h.mel_bins, h.frames) {
        return Err(Error::Shape("heatmap and spectrogram sizes differ".into()));
    }
    let gray = normalized(&s.values);
    let heat = normalized(&h.values);
    let (rows, cols) = s.shape();
    let mut px = vec![0u8; rows * cols * 3];
    for m in 0..rows {
        let y = rows - 1 - m;
        for t in 0..cols {
            let i = m * cols + t;
            let color = viridis(heat[i]);
            let g = gray[i] * 255.0;
            for k in 0..3 {
                px[(y * cols + t) * 3 + k] = (0.6 * color[k] as f64 + 0.4 * g).round() as u8;
            }
        }
    }
    Ok(px)
}

fn write_png(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()?;
    Ok(())
}

/// Heatmap over spectrogram, one pixel per spectrogram cell.
pub fn render_heatmap_png(path: impl AsRef<Path>, s: &Spectrogram, h: &Heatmap) -> Result<()> {
    let px = compose(s, h)?;
    write_png(path.as_ref(), s.frames, s.mel_bins, &px)
}

/// As [`render_heatmap_png`] with the box outlined in red.
pub fn render_box_png(path: impl AsRef<Path>, s: &Spectrogram, h: &Heatmap, b: &SpecBox) -> Result<()> {
    let mut px = compose(s, h)?;
    let (rows, cols) = s.shape();
    if b.f_hi > rows || b.t_hi > cols || b.area() == 0 {
        return Err(Error::Shape(format!("box {b:?} outside {rows}x{cols}")));
    }
    let mut paint = |m: usize, t: usize| {
        let at = ((rows - 1 - m) * cols + t) * 3;
        px[at..at + 3].copy_from_slice(&[255, 0, 0]);
    };
    for t in b.t_lo..b.t_hi {
        paint(b.f_lo, t);
        paint(b.f_hi - 1, t);
    }
    for m in b.f_lo..b.f_hi {
        paint(m, b.t_lo);
        paint(m, b.t_hi - 1);
    }
    write_png(path.as_ref(), cols, rows, &px)
}

/// One CSV row per entry under [`CSV_HEADER`].
pub fn write_box_csv(path: impl AsRef<Path>, entries: &[ProjectionEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for e in entries {
        let id = if e.instance_id.contains([',', '"', '\n']) {
            format!("\"{}\"", e.instance_id.replace('"', "\"\""))
        } else {
            e.instance_id.clone()
        };
        let b = e.bbox;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.class, e.prototype, id, e.similarity, b.f_lo, b.f_hi, b.t_lo, b.t_hi
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Griffin-Lim audio of the boxed region of a raw log-mel spectrogram: frames
/// `t_lo..t_hi`, with mel rows outside the box silenced.
pub fn box_audio(raw: &Spectrogram, b: &SpecBox, cfg: &DspConfig, iterations: usize, seed: u64) -> Result<Waveform> {
    if raw.standardized {
        return Err(Error::UnstandardizeFirst);
    }
    if b.f_hi > raw.mel_bins || b.t_hi > raw.frames || b.area() == 0 {
        return Err(Error::Shape(format!("box {b:?} outside spectrogram")));
    }
    let mut patch = raw.slice_frames(b.t_lo, b.t_hi);
    let silent = LOG_FLOOR.ln();
    for m in (0..b.f_lo).chain(b.f_hi..raw.mel_bins) {
        for t in 0..patch.frames {
            *patch.at_mut(m, t) = silent;
        }
    }
    griffin_lim(&patch, cfg, iterations, seed)
}

/// Paths written for one ranked exemplar.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactPaths {
    pub heatmap_png: PathBuf,
    pub box_png: PathBuf,
    pub csv: PathBuf,
    pub wav: Option<PathBuf>,
}

/// Writes `<root>/<class_name>/proto_<j>/rank_<k>.{png,csv[,wav]}` and `rank_<k>_box.png`.
///
/// `s` is the standardized spectrogram of the exemplar; `raw`, when given, is
/// its unstandardized counterpart used for the audio rendering.
pub fn write_artifacts(
    root: impl AsRef<Path>,
    class_name: &str,
    entry: &ProjectionEntry,
    s: &Spectrogram,
    h: &Heatmap,
    raw: Option<(&Spectrogram, &DspConfig)>,
) -> Result<ArtifactPaths> {
    let dir = root.as_ref().join(class_name).join(format!("proto_{}", entry.prototype));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let stem = format!("rank_{}", entry.rank);
    let paths = ArtifactPaths {
        heatmap_png: dir.join(format!("{stem}.png")),
        box_png: dir.join(format!("{stem}_box.png")),
        csv: dir.join(format!("{stem}.csv")),
        wav: raw.map(|_| dir.join(format!("{stem}.wav"))),
    };
    render_heatmap_png(&paths.heatmap_png, s, h)?;
    render_box_png(&paths.box_png, s, h, &entry.bbox)?;
    write_box_csv(&paths.csv, std::slice::from_ref(entry))?;
    if let (Some((raw, cfg)), Some(wav)) = (raw, &paths.wav) {
        let audio = box_audio(raw, &entry.bbox, cfg, cfg.griffin_lim_iterations, 0)?;
        write_wav(wav, &audio)?;
    }
    Ok(paths)
}

#[derive(Serialize)]
struct IndexRow<'a> {
    #[serde(flatten)]
    entry: &'a ProjectionEntry,
    class_name: &'a str,
    artifacts: Option<&'a ArtifactPaths>,
}

/// JSON index of all projection entries and their artifacts.
pub fn write_index(
    path: impl AsRef<Path>,
    entries: &[ProjectionEntry],
    class_names: &[String],
    artifacts: &[Option<ArtifactPaths>],
) -> Result<()> {
    let path = path.as_ref();
    let rows: Vec<IndexRow> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| IndexRow {
            entry: e,
            class_name: class_names.get(e.class).map(String::as_str).unwrap_or(""),
            artifacts: artifacts.get(i).and_then(Option::as_ref),
        })
        .collect();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &rows)?;
    w.flush().map_err(|e| Error::io(path, e))
}
