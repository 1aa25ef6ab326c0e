//! Tracklet-by-detection score matrices and their gated optimal assignment.

use alloc::format;
use alloc::vec::Vec;

use crate::assignment::min_cost_assignment;
use crate::error::{invalid, validation, Result};
use crate::geometry::BBox;
use crate::model::{StrnModel, TrackletSide};
use crate::pair::{self, SequenceMeta};

/// A live tracklet offered for matching in the current frame.
#[derive(Debug, Clone)]
pub struct Candidate<'a> {
    pub id: u64,
    /// Aggregated tracklet feature.
    pub feature: &'a [f64],
    pub last_box: BBox,
    pub gap: u32,
}

/// A current-frame detection after spatial enhancement.
#[derive(Debug, Clone)]
pub struct EnhancedDetection<'a> {
    pub bbox: BBox,
    pub feature: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub tracklet_ids: Vec<u64>,
    pub gaps: Vec<u32>,
    rows: usize,
    cols: usize,
    scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn from_scores(tracklet_ids: Vec<u64>, gaps: Vec<u32>, cols: usize, scores: Vec<f64>) -> Result<Self> {
        let rows = tracklet_ids.len();
        if gaps.len() != rows || scores.len() != rows * cols {
            return Err(invalid(format!("score matrix {rows}x{cols} got {} scores", scores.len())));
        }
        let mut sorted = tracklet_ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("duplicate tracklet id in score matrix"));
        }
        Ok(ScoreMatrix { tracklet_ids, gaps, rows, cols, scores })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.scores[r * self.cols + c]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Scores every candidate against every detection.
pub fn build_score_matrix(
    candidates: &[Candidate<'_>],
    detections: &[EnhancedDetection<'_>],
    meta: &SequenceMeta,
    model: &StrnModel,
) -> Result<ScoreMatrix> {
    let params = model.scoring_params();
    let det_proj: Vec<_> = detections.iter().map(|d| params.project_detection(d.feature)).collect();
    let mut scores = Vec::with_capacity(candidates.len() * detections.len());
    for c in candidates {
        let t_proj = params.project_tracklet(c.feature);
        let side = TrackletSide { feature: c.feature, last_box: c.last_box, gap: c.gap };
        for (d, dp) in detections.iter().zip(&det_proj) {
            let pf = model.pair_from_projections(&t_proj, dp, &side, &d.bbox, meta)?;
            scores.push(pair::score_pair(&pf, params)?);
        }
    }
    ScoreMatrix::from_scores(
        candidates.iter().map(|c| c.id).collect(),
        candidates.iter().map(|c| c.gap).collect(),
        detections.len(),
        scores,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub tracklet_id: u64,
    pub detection: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssignmentResult {
    pub matches: Vec<Match>,
    pub unmatched_tracklets: Vec<u64>,
    pub unmatched_detections: Vec<usize>,
}

/// Maximum-total-score matching as `(row, col)` pairs, before any gating.
pub fn optimal_matching(matrix: &ScoreMatrix) -> Result<Vec<(usize, usize)>> {
    if let Some(s) = matrix.scores.iter().find(|s| !s.is_finite()) {
        return Err(validation(format!("score matrix entry is not finite: {s}")));
    }
    let cost: Vec<f64> = matrix.scores.iter().map(|s| 1.0 - s).collect();
    let rows = min_cost_assignment(matrix.rows, matrix.cols, &cost, 1.0);
    Ok(rows.into_iter().enumerate().filter_map(|(r, c)| c.map(|c| (r, c))).collect())
}

/// Optimal matching, then demotion of pairs scoring below `threshold`.
pub fn solve(matrix: &ScoreMatrix, threshold: f64) -> Result<AssignmentResult> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(invalid(format!("match threshold must lie in [0, 1), got {threshold}")));
    }
    let pairs = optimal_matching(matrix)?;
    let mut row_used = alloc::vec![false; matrix.rows];
    let mut col_used = alloc::vec![false; matrix.cols];
    let mut matches = Vec::new();
    for (r, c) in pairs {
        let score = matrix.get(r, c);
        if score >= threshold {
            row_used[r] = true;
            col_used[c] = true;
            matches.push(Match { tracklet_id: matrix.tracklet_ids[r], detection: c, score });
        }
    }
    Ok(AssignmentResult {
        matches,
        unmatched_tracklets: (0..matrix.rows).filter(|r| !row_used[*r]).map(|r| matrix.tracklet_ids[r]).collect(),
        unmatched_detections: (0..matrix.cols).filter(|c| !col_used[*c]).collect(),
    })
}
