//! MOTChallenge text formats and `seqinfo.ini`.
//!
//! Files use the top-left box convention; everything in memory is
//! center-based. Conversion happens only here.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use strn_core::geometry::{BBox, Detection};
use strn_core::metrics::Tracks;
use strn_core::pair::SequenceMeta;
use strn_core::tracker::TrackResult;

use crate::error::{Error, Result};

pub fn parse_seqinfo(text: &str) -> Result<SequenceMeta> {
    let mut values: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with(['#', ';', '[']) {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::parse(n + 1, format!("expected key=value, got {line:?}")))?;
        values.insert(k.trim(), (n + 1, v.trim()));
    }
    let get = |key: &str| values.get(key).copied().ok_or_else(|| Error::MissingKey(key.into()));
    let number = |key: &str| -> Result<f64> {
        let (line, v) = get(key)?;
        v.parse::<f64>().map_err(|_| Error::parse(line, format!("{key} is not a number: {v:?}")))
    };
    let width = number("imWidth")?;
    let height = number("imHeight")?;
    let frame_rate = number("frameRate")?;
    let (line, len) = get("seqLength")?;
    let length: i64 = len.parse().map_err(|_| Error::parse(line, format!("seqLength is not an integer: {len:?}")))?;
    let (_, name) = get("name")?;
    let length = u32::try_from(length).unwrap_or(0);
    Ok(SequenceMeta::new(name, width, height, frame_rate, length)?)
}

pub fn write_seqinfo(meta: &SequenceMeta) -> String {
    format!(
        "[Sequence]\nname={}\nframeRate={}\nseqLength={}\nimWidth={}\nimHeight={}\n",
        meta.name, meta.frame_rate, meta.length, meta.width, meta.height
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotKind {
    Detections,
    /// Ground truth or tracker results: every row carries a positive id.
    GroundTruth,
}

/// One parsed row, kept in the file's top-left convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRecord {
    pub frame: u32,
    pub id: i64,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub confidence: f64,
}

impl MotRecord {
    pub fn bbox(&self) -> BBox {
        BBox { x: self.left + self.width / 2.0, y: self.top + self.height / 2.0, w: self.width, h: self.height }
    }
}

/// Rows grouped by frame. Within a frame rows keep their file order, which
/// is the detection index used to key appearance features.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MotFile {
    pub frames: BTreeMap<u32, Vec<MotRecord>>,
    /// Rows dropped for a non-positive width or height.
    pub skipped: usize,
}

impl MotFile {
    pub fn len(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn detections(&self) -> Vec<(u32, Vec<Detection>)> {
        self.frames
            .iter()
            .map(|(f, rows)| (*f, rows.iter().map(|r| Detection::new(r.bbox(), r.confidence)).collect()))
            .collect()
    }

    /// Boxes by frame and id. Meaningful for ground-truth files.
    pub fn tracks(&self) -> Tracks {
        self.frames
            .iter()
            .map(|(f, rows)| (*f, rows.iter().map(|r| (r.id.max(0) as u64, r.bbox())).collect()))
            .collect()
    }
}

fn integral(field: &str, line: usize, what: &str) -> Result<i64> {
    let v: f64 = field.parse().map_err(|_| Error::parse(line, format!("{what} is not a number: {field:?}")))?;
    if v.fract() != 0.0 || v.abs() > 9.0e15 {
        return Err(Error::parse(line, format!("{what} must be an integer, got {field}")));
    }
    Ok(v as i64)
}

pub fn parse_mot_file(text: &str, kind: MotKind) -> Result<MotFile> {
    let mut out = MotFile::default();
    let mut seen = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() < 7 {
            return Err(Error::parse(line, format!("expected at least 7 comma-separated fields, got {}", fields.len())));
        }
        let frame = integral(fields[0], line, "frame")?;
        let frame = u32::try_from(frame)
            .ok()
            .filter(|f| *f >= 1)
            .ok_or_else(|| Error::parse(line, format!("frame must be >= 1, got {frame}")))?;
        let id = integral(fields[1], line, "id")?;
        if kind == MotKind::GroundTruth && id <= 0 {
            return Err(Error::parse(line, format!("ground-truth id must be positive, got {id}")));
        }
        let mut num = [0.0; 5];
        for (k, name) in ["bb_left", "bb_top", "bb_width", "bb_height", "confidence"].iter().enumerate() {
            let f = fields[2 + k];
            num[k] = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(line, format!("{name} is not a finite number: {f:?}")))?;
        }
        let [left, top, width, height, confidence] = num;
        if width <= 0.0 || height <= 0.0 {
            out.skipped += 1;
            continue;
        }
        if kind == MotKind::GroundTruth {
            if let Some(prev) = seen.insert((frame, id), line) {
                return Err(Error::parse(line, format!("id {id} already has a box in frame {frame} (line {prev})")));
            }
        }
        let rec = MotRecord { frame, id, left, top, width, height, confidence };
        out.frames.entry(frame).or_default().push(rec);
    }
    Ok(out)
}

/// Two decimals, never `-0.00`.
fn fmt2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn push_row(out: &mut String, frame: u32, id: &str, b: &BBox, confidence: &str) {
    let _ = writeln!(
        out,
        "{frame},{id},{},{},{},{},{confidence},-1,-1,-1",
        fmt2(b.left()),
        fmt2(b.top()),
        fmt2(b.w),
        fmt2(b.h)
    );
}

/// Results rows `frame,id,left,top,w,h,1,-1,-1,-1`, sorted by `(frame, id)`.
pub fn write_results(result: &TrackResult) -> String {
    let mut boxes: Vec<_> = result.boxes.iter().map(|b| (b.frame, b.id, b.bbox)).collect();
    boxes.sort_by_key(|b| (b.0, b.1));
    let mut out = String::new();
    for (frame, id, b) in boxes {
        push_row(&mut out, frame, &id.to_string(), &b, "1");
    }
    out
}

/// Ground truth in the results layout.
pub fn write_tracks(tracks: &Tracks) -> String {
    let mut out = String::new();
    for (frame, boxes) in tracks {
        let mut boxes = boxes.clone();
        boxes.sort_by_key(|b| b.0);
        for (id, b) in boxes {
            push_row(&mut out, *frame, &id.to_string(), &b, "1");
        }
    }
    out
}

/// Detection rows with id `-1`, in frame order and index order within a frame.
pub fn write_detections(frames: &[(u32, Vec<Detection>)]) -> String {
    let mut frames: Vec<_> = frames.iter().collect();
    frames.sort_by_key(|f| f.0);
    let mut out = String::new();
    for (frame, dets) in frames {
        for d in dets {
            push_row(&mut out, *frame, "-1", &d.bbox, &d.confidence.to_string());
        }
    }
    out
}
