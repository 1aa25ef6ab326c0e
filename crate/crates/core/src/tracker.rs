//! Online tracking loop: association, births, false-alarm pruning, retirement.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use crate::appearance::FeatureProvider;
use crate::association::{self, Candidate, EnhancedDetection, ScoreMatrix};
use crate::error::{invalid, Error, Result};
use crate::geometry::{BBox, Detection};
use crate::model::StrnModel;
use crate::pair::SequenceMeta;
use crate::relation::{SceneObject, SpatialOutput, TrackletWindow};

const CEIL_SLACK: f64 = 1e-9;

/// `⌈0.3F⌉`: matches a tracklet needs within its first `F` frames.
pub fn prune_threshold(frame_rate: f64) -> u32 {
    libm::ceil(0.3 * frame_rate - CEIL_SLACK) as u32
}

/// `⌈1.25F⌉`: the longest observation gap a tracklet survives.
pub fn retention_frames(frame_rate: f64) -> u32 {
    libm::ceil(1.25 * frame_rate - CEIL_SLACK) as u32
}

/// Length of the false-alarm window in frames, `⌈F⌉`.
pub fn prune_window(frame_rate: f64) -> u32 {
    libm::ceil(frame_rate - CEIL_SLACK) as u32
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    /// Temporal window length.
    pub tau1: usize,
    /// Largest frame gap at which a tracklet is still a candidate.
    pub tau2: u32,
    pub match_threshold: f64,
    /// Detections below this confidence are ignored entirely.
    pub min_confidence: f64,
    /// Unmatched detections below this confidence do not start tracklets.
    pub min_birth_confidence: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig { tau1: 10, tau2: 10, match_threshold: 0.5, min_confidence: 0.0, min_birth_confidence: 0.0 }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau1 == 0 || self.tau2 == 0 {
            return Err(invalid(format!("tau1 and tau2 must be >= 1, got {} and {}", self.tau1, self.tau2)));
        }
        if !(0.0..1.0).contains(&self.match_threshold) {
            return Err(invalid(format!("match threshold must lie in [0, 1), got {}", self.match_threshold)));
        }
        if !self.min_confidence.is_finite() || !self.min_birth_confidence.is_finite() {
            return Err(invalid("confidence filters must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackletState {
    Active,
    /// Not seen within the retention horizon; its boxes stay in the output.
    Retired,
    /// Failed the false-alarm rule; its boxes are removed from the output.
    Pruned,
}

#[derive(Debug, Clone)]
pub struct Tracklet {
    id: u64,
    observations: Vec<(u32, BBox)>,
    window: TrackletWindow,
    feature: Vec<f64>,
    state: TrackletState,
    prune_checked: bool,
}

impl Tracklet {
    pub fn id(&self) -> u64 {
        self.id
    }

    /// `(frame, box)` for every observation, frames strictly increasing.
    pub fn observations(&self) -> &[(u32, BBox)] {
        &self.observations
    }

    pub fn first_frame(&self) -> u32 {
        self.observations[0].0
    }

    pub fn last_frame(&self) -> u32 {
        self.observations[self.observations.len() - 1].0
    }

    pub fn last_box(&self) -> BBox {
        self.observations[self.observations.len() - 1].1
    }

    /// Recent spatially enhanced features.
    pub fn window(&self) -> &TrackletWindow {
        &self.window
    }

    /// Cached aggregate of [`Self::window`].
    pub fn feature(&self) -> &[f64] {
        &self.feature
    }

    pub fn state(&self) -> TrackletState {
        self.state
    }

    pub fn is_active(&self) -> bool {
        self.state == TrackletState::Active
    }
}

/// One emitted box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackBox {
    pub frame: u32,
    pub id: u64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackResult {
    /// Final boxes sorted by `(frame, id)`.
    pub boxes: Vec<TrackBox>,
    /// Everything emitted online, before false-alarm deletion.
    pub provisional: Vec<TrackBox>,
    pub pruned_ids: Vec<u64>,
}

/// Tracklets, id allocation and the provisional output buffer.
#[derive(Debug, Clone, Default)]
pub struct TrackerState {
    tracklets: Vec<Tracklet>,
    next_id: u64,
    last_frame: Option<u32>,
    provisional: Vec<TrackBox>,
}

impl TrackerState {
    pub fn new() -> Self {
        TrackerState { next_id: 1, ..Default::default() }
    }

    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    pub fn tracklet(&self, id: u64) -> Option<&Tracklet> {
        self.index(id).map(|i| &self.tracklets[i])
    }

    pub fn last_frame(&self) -> Option<u32> {
        self.last_frame
    }

    pub fn provisional(&self) -> &[TrackBox] {
        &self.provisional
    }

    fn index(&self, id: u64) -> Option<usize> {
        self.tracklets.binary_search_by_key(&id, |t| t.id).ok()
    }

    fn advance(&mut self, frame: u32) -> Result<()> {
        if frame == 0 {
            return Err(invalid("frames are 1-based"));
        }
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(invalid(format!("frame {frame} is not after previous frame {last}")));
            }
        }
        self.last_frame = Some(frame);
        Ok(())
    }

    /// Starts a tracklet; `feature` is the aggregate of its one-entry window.
    pub fn spawn(&mut self, frame: u32, bbox: BBox, enhanced: Vec<f64>, feature: Vec<f64>, tau1: usize) -> Result<u64> {
        let id = self.next_id;
        let mut window = TrackletWindow::new(tau1)?;
        window.push(frame, enhanced)?;
        self.tracklets.push(Tracklet {
            id,
            observations: alloc::vec![(frame, bbox)],
            window,
            feature,
            state: TrackletState::Active,
            prune_checked: false,
        });
        self.next_id += 1;
        self.provisional.push(TrackBox { frame, id, bbox });
        Ok(id)
    }

    /// Appends an observation and recomputes the cached aggregate.
    pub fn extend(
        &mut self,
        id: u64,
        frame: u32,
        bbox: BBox,
        enhanced: Vec<f64>,
        aggregate: impl FnOnce(&TrackletWindow) -> Result<Vec<f64>>,
    ) -> Result<()> {
        let i = self.index(id).ok_or_else(|| invalid(format!("no tracklet {id}")))?;
        let t = &mut self.tracklets[i];
        if !t.is_active() {
            return Err(invalid(format!("tracklet {id} is no longer active")));
        }
        if frame <= t.last_frame() {
            return Err(invalid(format!("tracklet {id} already observed at or after frame {frame}")));
        }
        t.window.push(frame, enhanced)?;
        t.feature = aggregate(&t.window)?;
        t.observations.push((frame, bbox));
        self.provisional.push(TrackBox { frame, id, bbox });
        Ok(())
    }

    /// Applies the false-alarm rule to every tracklet whose first `⌈F⌉`
    /// frames have elapsed by `t`. Observations in `[first, first + ⌈F⌉]`,
    /// the initial one included, must number at least `⌈0.3F⌉`. Each
    /// tracklet is judged once; failures are removed from the output.
    pub fn prune_false_alarms(&mut self, t: u32, frame_rate: f64) -> Vec<u64> {
        let window = prune_window(frame_rate);
        let need = prune_threshold(frame_rate) as usize;
        let mut removed = Vec::new();
        for tr in self.tracklets.iter_mut().filter(|tr| !tr.prune_checked && tr.state != TrackletState::Pruned) {
            let first = tr.first_frame();
            if first + window > t {
                continue;
            }
            tr.prune_checked = true;
            let count = tr.observations.iter().take_while(|(f, _)| *f <= first + window).count();
            if count < need {
                tr.state = TrackletState::Pruned;
                removed.push(tr.id);
            }
        }
        if !removed.is_empty() {
            let gone: BTreeSet<u64> = removed.iter().copied().collect();
            self.provisional.retain(|b| !gone.contains(&b.id));
        }
        removed
    }

    /// Retires active tracklets unseen for more than `⌈1.25F⌉` frames.
    pub fn retire_stale(&mut self, t: u32, frame_rate: f64) -> Vec<u64> {
        let horizon = retention_frames(frame_rate);
        let mut retired = Vec::new();
        for tr in self.tracklets.iter_mut().filter(|tr| tr.is_active()) {
            if t.saturating_sub(tr.last_frame()) > horizon {
                tr.state = TrackletState::Retired;
                retired.push(tr.id);
            }
        }
        retired
    }

    pub fn finalize(self) -> TrackResult {
        let mut boxes = self.provisional.clone();
        boxes.sort_by_key(|b| (b.frame, b.id));
        let mut provisional = Vec::new();
        let mut pruned_ids = Vec::new();
        for tr in &self.tracklets {
            if tr.state == TrackletState::Pruned {
                pruned_ids.push(tr.id);
            }
            provisional.extend(tr.observations.iter().map(|(frame, bbox)| TrackBox { frame: *frame, id: tr.id, bbox: *bbox }));
        }
        provisional.sort_by_key(|b| (b.frame, b.id));
        TrackResult { boxes, provisional, pruned_ids }
    }
}

/// Per-frame association detail, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct FrameDiagnostics {
    pub frame: u32,
    /// Indices into the frame's detection list that passed the confidence filter.
    pub kept: Vec<usize>,
    pub spatial: Option<SpatialOutput>,
    pub scores: ScoreMatrix,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    /// `(detection index, tracklet id)` for every detection that was emitted.
    pub assigned: Vec<(usize, u64)>,
    pub births: Vec<u64>,
    pub diagnostics: FrameDiagnostics,
}

/// Processes one frame: enhance, associate, extend matches, spawn births.
pub fn step(
    state: &mut TrackerState,
    t: u32,
    detections: &[Detection],
    features: &[Vec<f64>],
    model: &StrnModel,
    meta: &SequenceMeta,
    config: &TrackerConfig,
) -> Result<StepOutput> {
    config.validate()?;
    if features.len() != detections.len() {
        return Err(invalid(format!(
            "frame {t}: {} features for {} detections",
            features.len(),
            detections.len()
        )));
    }
    state.advance(t)?;

    let kept: Vec<usize> = (0..detections.len()).filter(|&i| detections[i].confidence >= config.min_confidence).collect();
    let spatial = if kept.is_empty() {
        None
    } else {
        let objects: Vec<SceneObject> = kept
            .iter()
            .map(|&i| SceneObject { appearance: features[i].clone(), bbox: detections[i].bbox })
            .collect();
        Some(model.enhance(&objects)?)
    };
    let enhanced: &[Vec<f64>] = spatial.as_ref().map_or(&[], |s| s.features.as_slice());

    let candidates: Vec<Candidate<'_>> = state
        .tracklets
        .iter()
        .filter(|tr| tr.is_active())
        .filter_map(|tr| {
            let gap = t - tr.last_frame();
            (gap <= config.tau2).then(|| Candidate { id: tr.id, feature: &tr.feature, last_box: tr.last_box(), gap })
        })
        .collect();
    let dets: Vec<EnhancedDetection<'_>> = kept
        .iter()
        .zip(enhanced)
        .map(|(&i, f)| EnhancedDetection { bbox: detections[i].bbox, feature: f })
        .collect();
    let scores = association::build_score_matrix(&candidates, &dets, meta, model)?;
    let result = association::solve(&scores, config.match_threshold)?;

    let mut assigned = Vec::with_capacity(kept.len());
    for m in &result.matches {
        let i = kept[m.detection];
        state.extend(m.tracklet_id, t, detections[i].bbox, enhanced[m.detection].clone(), |w| model.aggregate(w))?;
        assigned.push((i, m.tracklet_id));
    }
    let mut births = Vec::new();
    for &c in &result.unmatched_detections {
        let i = kept[c];
        if detections[i].confidence < config.min_birth_confidence {
            continue;
        }
        let mut window = TrackletWindow::new(config.tau1)?;
        window.push(t, enhanced[c].clone())?;
        let feature = model.aggregate(&window)?;
        let id = state.spawn(t, detections[i].bbox, enhanced[c].clone(), feature, config.tau1)?;
        assigned.push((i, id));
        births.push(id);
    }
    assigned.sort_unstable();
    Ok(StepOutput { assigned, births, diagnostics: FrameDiagnostics { frame: t, kept, spatial, scores } })
}

/// Tracks a whole sequence. `frames` holds `(frame, detections)` in
/// increasing frame order; frames without detections may be omitted.
pub fn run_sequence(
    frames: &[(u32, Vec<Detection>)],
    provider: &dyn FeatureProvider,
    model: &StrnModel,
    meta: &SequenceMeta,
    config: &TrackerConfig,
) -> Result<TrackResult> {
    run_sequence_until(frames, provider, model, meta, config, None).map(|(state, _)| state.finalize())
}

/// Like [`run_sequence`] but stops after `stop_at` (inclusive) and returns the
/// live state plus the diagnostics of the last stepped frame.
pub fn run_sequence_until(
    frames: &[(u32, Vec<Detection>)],
    provider: &dyn FeatureProvider,
    model: &StrnModel,
    meta: &SequenceMeta,
    config: &TrackerConfig,
    stop_at: Option<u32>,
) -> Result<(TrackerState, Option<FrameDiagnostics>)> {
    config.validate()?;
    let mut state = TrackerState::new();
    let mut last_diag = None;
    let end = frames.last().map_or(0, |(f, _)| *f).max(meta.length);
    let end = stop_at.map_or(end, |s| s.min(end));
    let mut next = 0;
    for t in 1..=end {
        let out = if next < frames.len() && frames[next].0 == t {
            let dets = &frames[next].1;
            next += 1;
            let feats = provider.features_for(t, dets).map_err(|e| with_frame(e, t))?;
            Some(step(&mut state, t, dets, &feats, model, meta, config).map_err(|e| with_frame(e, t))?)
        } else if next < frames.len() && frames[next].0 < t {
            return Err(invalid(format!("frame {} is out of order", frames[next].0)));
        } else {
            step(&mut state, t, &[], &[], model, meta, config)?;
            None
        };
        if stop_at == Some(t) {
            last_diag = out.map(|o| o.diagnostics);
        }
        state.prune_false_alarms(t, meta.frame_rate);
        state.retire_stale(t, meta.frame_rate);
    }
    Ok((state, last_diag))
}

fn with_frame(e: Error, frame: u32) -> Error {
    match e {
        Error::InvalidArgument(m) if !m.starts_with("frame ") => Error::InvalidArgument(format!("frame {frame}: {m}")),
        Error::Validation(m) if !m.starts_with("frame ") => Error::Validation(format!("frame {frame}: {m}")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::appearance::{synthesize_identity_feature, FeatureTable};
    use crate::model::{init_params, Ablation, ModelDims, TrackletSide};
    use crate::pair::RELATION_DIM;
    use alloc::vec;
    use alloc::vec::Vec;

    fn bx(x: f64) -> BBox {
        BBox::new(x, 100.0, 20.0, 50.0).unwrap()
    }

    /// State holding one tracklet observed at exactly `frames`.
    fn trace(frames: &[u32]) -> TrackerState {
        let mut s = TrackerState::new();
        let id = s.spawn(frames[0], bx(0.0), vec![1.0], vec![1.0], 10).unwrap();
        for &f in &frames[1..] {
            s.extend(id, f, bx(0.0), vec![1.0], |w| Ok(w.last().unwrap().to_vec())).unwrap();
        }
        s
    }

    #[test]
    fn rule_thresholds() {
        assert_eq!(prune_threshold(30.0), 9);
        assert_eq!(prune_threshold(10.0), 3);
        assert_eq!(retention_frames(30.0), 38);
        assert_eq!(retention_frames(25.0), 32);
        assert_eq!(prune_window(30.0), 30);
    }

    #[test]
    fn sparse_tracklet_is_pruned_at_window_end() {
        let mut s = trace(&[10, 15, 20, 25, 30]);
        assert!(s.prune_false_alarms(39, 30.0).is_empty());
        assert_eq!(s.prune_false_alarms(40, 30.0), vec![1]);
        assert_eq!(s.tracklet(1).unwrap().state(), TrackletState::Pruned);
        assert!(s.provisional().is_empty());
        assert!(s.clone().finalize().boxes.is_empty());
        assert_eq!(s.finalize().pruned_ids, vec![1]);
    }

    #[test]
    fn dense_tracklet_survives_every_check() {
        let frames: Vec<u32> = (1..=200).collect();
        let mut s = trace(&frames);
        for t in 1..=400 {
            assert!(s.prune_false_alarms(t, 30.0).is_empty());
        }
        assert_eq!(s.finalize().boxes.len(), 200);
    }

    #[test]
    fn prune_boundary_at_ten_fps() {
        // three matches inside [first, first + 10] survive, two do not
        let mut keep = trace(&[5, 9, 15]);
        assert!(keep.prune_false_alarms(15, 10.0).is_empty());
        let mut kill = trace(&[5, 9, 16]);
        assert_eq!(kill.prune_false_alarms(15, 10.0), vec![1]);
    }

    #[test]
    fn retirement_boundary() {
        let mut s = trace(&[10]);
        assert!(s.retire_stale(48, 30.0).is_empty());
        assert_eq!(s.retire_stale(49, 30.0), vec![1]);
        assert_eq!(s.tracklet(1).unwrap().state(), TrackletState::Retired);
        assert_eq!(s.provisional().len(), 1);
        assert!(s.extend(1, 50, bx(0.0), vec![1.0], |w| Ok(w.last().unwrap().to_vec())).is_err());
        let mut fresh = trace(&[10, 48]);
        assert!(fresh.retire_stale(49, 30.0).is_empty());
    }

    /// Head reads only the projected cosine: score = sigmoid(20 relu(cos) - 10).
    fn cosine_model(dims: &ModelDims, ablation: Ablation) -> StrnModel {
        let mut store = init_params(dims, 11).unwrap();
        let w1 = store.index_of("head.Ws1").unwrap();
        let p = store.param_mut(w1);
        p.data.iter_mut().for_each(|w| *w = 0.0);
        p.data[RELATION_DIM] = 1.0;
        let w2 = store.index_of("head.Ws2").unwrap();
        store.param_mut(w2).data[0] = 20.0;
        let b2 = store.index_of("head.bs2").unwrap();
        store.param_mut(b2).data[0] = -10.0;
        StrnModel::new(store, ablation).unwrap()
    }

    fn dims() -> ModelDims {
        ModelDims { app: 16, heads: 1, key: 8, hidden: 8 }
    }

    fn meta() -> SequenceMeta {
        SequenceMeta::new("t", 640.0, 480.0, 30.0, 100).unwrap()
    }

    fn feat(id: u64) -> Vec<f64> {
        synthesize_identity_feature(id, 1, 0.0, 0, 16).unwrap()
    }

    fn dets(xs: &[f64]) -> Vec<Detection> {
        xs.iter().map(|&x| Detection::new(bx(x), 1.0)).collect()
    }

    #[test]
    fn cold_start_then_persistence() {
        let model = cosine_model(&dims(), Ablation::ALST);
        let cfg = TrackerConfig::default();
        let mut s = TrackerState::new();
        let d = dets(&[100.0, 300.0, 500.0]);
        let f: Vec<Vec<f64>> = (0..3).map(feat).collect();
        let out = step(&mut s, 1, &d, &f, &model, &meta(), &cfg).unwrap();
        assert_eq!(out.assigned, vec![(0, 1), (1, 2), (2, 3)]);
        assert_eq!(out.births, vec![1, 2, 3]);

        // oracle: every same-identity pair clears the threshold
        for tr in s.tracklets() {
            let side = TrackletSide { feature: tr.feature(), last_box: tr.last_box(), gap: 1 };
            let k = (tr.id() - 1) as usize;
            let det_feat = &model.enhance(&d.iter().zip(&f).map(|(d, f)| SceneObject { appearance: f.clone(), bbox: d.bbox }).collect::<Vec<_>>()).unwrap().features[k];
            assert!(model.score(&side, det_feat, &d[k].bbox, &meta()).unwrap() >= 0.5);
        }
        let out = step(&mut s, 2, &d, &f, &model, &meta(), &cfg).unwrap();
        assert_eq!(out.assigned, vec![(0, 1), (1, 2), (2, 3)]);
        assert!(out.births.is_empty());
        assert_eq!(out.diagnostics.scores.rows(), 3);
    }

    #[test]
    fn ordering_and_count_errors() {
        let model = cosine_model(&dims(), Ablation::ALST);
        let cfg = TrackerConfig::default();
        let mut s = TrackerState::new();
        step(&mut s, 3, &[], &[], &model, &meta(), &cfg).unwrap();
        assert!(step(&mut s, 3, &[], &[], &model, &meta(), &cfg).is_err());
        assert!(step(&mut s, 4, &dets(&[1.0]), &[], &model, &meta(), &cfg).is_err());
        let bad = TrackerConfig { tau1: 0, ..cfg };
        assert!(step(&mut s, 5, &[], &[], &model, &meta(), &bad).is_err());
    }

    #[test]
    fn gap_beyond_tau2_starts_new_identity() {
        let model = cosine_model(&dims(), Ablation::ALST);
        let cfg = TrackerConfig::default();
        for (gap, expect_same) in [(10u32, true), (11, false)] {
            let mut s = TrackerState::new();
            step(&mut s, 1, &dets(&[200.0]), &[feat(0)], &model, &meta(), &cfg).unwrap();
            let out = step(&mut s, 1 + gap, &dets(&[200.0]), &[feat(0)], &model, &meta(), &cfg).unwrap();
            assert_eq!(out.assigned[0].1 == 1, expect_same, "gap {gap}");
        }
    }

    #[test]
    fn confidence_filters() {
        let model = cosine_model(&dims(), Ablation::ALST);
        let cfg = TrackerConfig { min_confidence: 0.3, min_birth_confidence: 0.6, ..Default::default() };
        let mut s = TrackerState::new();
        let d = vec![
            Detection::new(bx(100.0), 0.2),
            Detection::new(bx(300.0), 0.5),
            Detection::new(bx(500.0), 0.9),
        ];
        let out = step(&mut s, 1, &d, &[feat(0), feat(1), feat(2)], &model, &meta(), &cfg).unwrap();
        assert_eq!(out.assigned, vec![(2, 1)]);
        assert_eq!(out.diagnostics.kept, vec![1, 2]);
    }

    fn table(frames: &[(u32, Vec<Detection>)], ids: &[Vec<u64>]) -> FeatureTable {
        let mut t = FeatureTable::new(16).unwrap();
        for ((f, d), fid) in frames.iter().zip(ids) {
            for (i, id) in fid.iter().enumerate().take(d.len()) {
                t.insert(*f, i, feat(*id)).unwrap();
            }
        }
        t
    }

    #[test]
    fn spurious_burst_is_suppressed() {
        let model = cosine_model(&dims(), Ablation::ALST);
        let mut frames = Vec::new();
        let mut ids = Vec::new();
        for t in 1..=60u32 {
            let mut xs = vec![100.0 + t as f64];
            let mut id = vec![0];
            if (20..23).contains(&t) {
                xs.push(400.0);
                id.push(9);
            }
            frames.push((t, dets(&xs)));
            ids.push(id);
        }
        let provider = table(&frames, &ids);
        let r = run_sequence(&frames, &provider, &model, &meta(), &TrackerConfig::default()).unwrap();
        assert_eq!(r.pruned_ids, vec![2]);
        assert!(r.boxes.iter().all(|b| b.id == 1));
        assert_eq!(r.boxes.len(), 60);
        assert_eq!(r.provisional.len(), 63);
        assert_eq!(r, run_sequence(&frames, &provider, &model, &meta(), &TrackerConfig::default()).unwrap());
    }

    #[test]
    fn empty_and_missing_features() {
        let model = cosine_model(&dims(), Ablation::A);
        let provider = FeatureTable::new(16).unwrap();
        let empty = SequenceMeta::new("e", 640.0, 480.0, 30.0, 0).unwrap_or_else(|_| meta());
        let r = run_sequence(&[], &provider, &model, &empty, &TrackerConfig::default()).unwrap();
        assert!(r.boxes.is_empty());
        let err = run_sequence(&[(2, dets(&[5.0]))], &provider, &model, &meta(), &TrackerConfig::default()).unwrap_err();
        assert_eq!(err, Error::ProviderMiss { frame: 2, index: 0 });
    }

    #[test]
    fn unique_frame_id_pairs_and_fresh_ids() {
        let model = cosine_model(&dims(), Ablation::ALSMax);
        let mut frames = Vec::new();
        let mut ids: Vec<Vec<u64>> = Vec::new();
        for t in 1..=40u32 {
            let xs: Vec<f64> = (0..4).map(|k| 80.0 * k as f64 + 50.0 + (t % 7) as f64).collect();
            // identities swap feature roles every 13 frames to force births
            ids.push((0..4).map(|k| k + (t / 13) as u64 * 4).collect());
            frames.push((t, dets(&xs)));
        }
        // orthogonal identities, so no swapped identity can continue an old tracklet
        let mut provider = FeatureTable::new(16).unwrap();
        for ((f, d), fid) in frames.iter().zip(&ids) {
            for (i, id) in fid.iter().enumerate().take(d.len()) {
                provider.insert(*f, i, (0..16).map(|k| if k as u64 == *id { 1.0 } else { 0.0 }).collect()).unwrap();
            }
        }
        let r = run_sequence(&frames, &provider, &model, &meta(), &TrackerConfig::default()).unwrap();
        let mut seen = BTreeSet::new();
        for b in &r.provisional {
            assert!(seen.insert((b.frame, b.id)));
        }
        let max_id = r.provisional.iter().map(|b| b.id).max().unwrap();
        assert_eq!(max_id, 16);
        // ids are handed out densely and never reused
        let ids: BTreeSet<u64> = r.provisional.iter().map(|b| b.id).collect();
        assert_eq!(ids, (1..=max_id).collect());
    }
}
