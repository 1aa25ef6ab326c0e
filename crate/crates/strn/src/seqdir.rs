//! MOTChallenge-shaped sequence directories:
//! `seqinfo.ini`, `gt/gt.txt`, `det/det.txt` and `feat/feat.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use strn_core::appearance::FeatureTable;
use strn_core::geometry::Detection;
use strn_core::metrics::Tracks;
use strn_core::pair::SequenceMeta;
use strn_core::synth::{SynthConfig, SynthSequence};

use crate::dataio::{self, MotKind};
use crate::error::{Error, Result};
use crate::features;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn seqinfo_path(dir: &Path) -> PathBuf {
    dir.join("seqinfo.ini")
}

pub fn gt_path(dir: &Path) -> PathBuf {
    dir.join("gt").join("gt.txt")
}

pub fn det_path(dir: &Path) -> PathBuf {
    dir.join("det").join("det.txt")
}

pub fn feat_path(dir: &Path) -> PathBuf {
    dir.join("feat").join("feat.txt")
}

pub fn write_sequence(dir: &Path, seq: &SynthSequence) -> Result<()> {
    write_text(&seqinfo_path(dir), &dataio::write_seqinfo(&seq.meta))?;
    write_text(&gt_path(dir), &dataio::write_tracks(&seq.gt))?;
    write_text(&det_path(dir), &dataio::write_detections(&seq.detections))?;
    write_text(&feat_path(dir), &features::write_features(&seq.features))
}

pub fn read_meta(dir: &Path) -> Result<SequenceMeta> {
    let path = seqinfo_path(dir);
    dataio::parse_seqinfo(&read_text(&path)?).map_err(|e| e.in_file(&path))
}

pub fn read_gt(path: &Path) -> Result<Tracks> {
    let text = read_text(path)?;
    Ok(dataio::parse_mot_file(&text, MotKind::GroundTruth).map_err(|e| e.in_file(path))?.tracks())
}

/// Detections grouped by frame, in frame order.
pub type Frames = Vec<(u32, Vec<Detection>)>;

/// Detections plus the number of degenerate rows skipped.
pub fn read_detections(path: &Path) -> Result<(Frames, usize)> {
    let text = read_text(path)?;
    let file = dataio::parse_mot_file(&text, MotKind::Detections).map_err(|e| e.in_file(path))?;
    Ok((file.detections(), file.skipped))
}

pub fn read_features(path: &Path) -> Result<FeatureTable> {
    features::parse_features(&read_text(path)?).map_err(|e| e.in_file(path))
}

/// A sequence directory loaded for training or tracking.
#[derive(Debug, Clone)]
pub struct SequenceData {
    pub meta: SequenceMeta,
    pub detections: Vec<(u32, Vec<Detection>)>,
    pub features: FeatureTable,
    pub skipped: usize,
}

/// Reads meta, detections and features; `features` overrides `feat/feat.txt`.
pub fn read_sequence(dir: &Path, features: Option<&Path>) -> Result<SequenceData> {
    let meta = read_meta(dir)?;
    let (detections, skipped) = read_detections(&det_path(dir))?;
    let feat_file = features.map_or_else(|| feat_path(dir), Path::to_path_buf);
    let table = read_features(&feat_file)?;
    features::check_completeness(&table, &detections).map_err(|e| e.in_file(&feat_file))?;
    Ok(SequenceData { meta, detections, features: table, skipped })
}

/// Flat `key = value` generator config. Blank lines and `#` comments are
/// skipped; values may be quoted.
pub fn parse_gen_config(text: &str, base: SynthConfig) -> Result<SynthConfig> {
    let mut cfg = base;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with('[') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::parse(n + 1, format!("expected key = value, got {line:?}")))?;
        let v = v.trim().trim_matches('"');
        cfg.set(k.trim(), v).map_err(|e| Error::parse(n + 1, e.to_string()))?;
    }
    Ok(cfg)
}
