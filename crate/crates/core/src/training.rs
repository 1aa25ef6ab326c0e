//! Supervised training of all model parameters from labeled tracklet-detection pairs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::appearance::FeatureProvider;
use crate::assignment::max_weight_assignment;
use crate::error::{invalid, validation, Result};
use crate::geometry::{iou, BBox, Detection};
use crate::metrics::Tracks;
use crate::model::{BoundModel, StrnModel, TrackletSide};
use crate::numeric::{self, NodeId, Tape};
use crate::pair::SequenceMeta;
use crate::relation::{SceneObject, TrackletWindow};

/// Ground-truth identity of each detection: maximum-IoU matching restricted
/// to pairs overlapping by at least `iou_thr`.
pub fn label_detections(gt: &[(u64, BBox)], detections: &[Detection], iou_thr: f64) -> Vec<Option<u64>> {
    let mut w = Vec::with_capacity(gt.len() * detections.len());
    for d in detections {
        for (_, g) in gt {
            let o = iou(&d.bbox, g);
            w.push(if o >= iou_thr { o } else { 0.0 });
        }
    }
    max_weight_assignment(detections.len(), gt.len(), &w)
        .into_iter()
        .enumerate()
        .map(|(i, c)| c.filter(|&c| w[i * gt.len() + c] > 0.0).map(|c| gt[c].0))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub objects: Vec<SceneObject>,
    pub labels: Vec<Option<u64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSequence {
    pub meta: SequenceMeta,
    pub frames: BTreeMap<u32, LabeledFrame>,
}

pub fn prepare_sequence(
    meta: SequenceMeta,
    gt: &Tracks,
    detections: &[(u32, Vec<Detection>)],
    features: &dyn FeatureProvider,
    iou_thr: f64,
) -> Result<TrainSequence> {
    let mut frames = BTreeMap::new();
    for (f, dets) in detections {
        if dets.is_empty() {
            continue;
        }
        let feats = features.features_for(*f, dets)?;
        let labels = label_detections(gt.get(f).map_or(&[][..], Vec::as_slice), dets, iou_thr);
        let objects = dets.iter().zip(feats).map(|(d, appearance)| SceneObject { appearance, bbox: d.bbox }).collect();
        if frames.insert(*f, LabeledFrame { objects, labels }).is_some() {
            return Err(invalid(format!("frame {f} listed twice")));
        }
    }
    Ok(TrainSequence { meta, frames })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairConfig {
    pub tau1: usize,
    pub tau2: u32,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig { tau1: 10, tau2: 10 }
    }
}

/// A ground-truth tracklet cut at its observation in frame `t - k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackletRef {
    pub id: u64,
    /// `(frame, detection index)` oldest first; the last entry is at `t - k`.
    pub window: Vec<(u32, usize)>,
}

/// Every tracklet last observed at `frame - gap`, paired with every detection at `frame`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGroup {
    pub seq: usize,
    pub frame: u32,
    pub gap: u32,
    pub tracklets: Vec<TrackletRef>,
    /// `(tracklet, detection)` positions of same-identity pairs.
    pub positives: Vec<(usize, usize)>,
    pub detections: usize,
}

impl AnchorGroup {
    pub fn pair_count(&self) -> usize {
        self.tracklets.len() * self.detections
    }
}

/// One `(tracklet window, detection)` example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairExample<'a> {
    pub seq: usize,
    pub window: &'a [(u32, usize)],
    pub frame: u32,
    pub index: usize,
    pub gap: u32,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairSet {
    pub groups: Vec<AnchorGroup>,
}

impl PairSet {
    pub fn positives(&self) -> usize {
        self.groups.iter().map(|g| g.positives.len()).sum()
    }

    pub fn negatives(&self) -> usize {
        self.groups.iter().map(|g| g.pair_count() - g.positives.len()).sum()
    }

    /// True when one of the two classes is absent.
    pub fn single_class(&self) -> bool {
        self.positives() == 0 || self.negatives() == 0
    }

    pub fn examples(&self) -> impl Iterator<Item = PairExample<'_>> + '_ {
        self.groups.iter().flat_map(|g| {
            let pos: BTreeSet<(usize, usize)> = g.positives.iter().copied().collect();
            (0..g.tracklets.len()).flat_map(move |r| {
                let pos = pos.clone();
                (0..g.detections).map(move |c| PairExample {
                    seq: g.seq,
                    window: &g.tracklets[r].window,
                    frame: g.frame,
                    index: c,
                    gap: g.gap,
                    label: pos.contains(&(r, c)),
                })
            })
        })
    }

    /// Up to `n` groups chosen without replacement, in original order.
    pub fn sample(&self, n: usize, seed: u64) -> PairSet {
        if n >= self.groups.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..self.groups.len()).collect();
        idx.partial_shuffle(&mut rng, n);
        idx.truncate(n);
        idx.sort_unstable();
        PairSet { groups: idx.into_iter().map(|i| self.groups[i].clone()).collect() }
    }
}

/// Enumerates anchor groups over every frame `t` and gap `1 <= k <= tau2`.
pub fn build_pairs(seqs: &[TrainSequence], cfg: &PairConfig) -> Result<PairSet> {
    if cfg.tau1 == 0 || cfg.tau2 == 0 {
        return Err(invalid("tau1 and tau2 must be >= 1"));
    }
    let mut groups = Vec::new();
    for (si, seq) in seqs.iter().enumerate() {
        // per identity: observations in frame order
        let mut tracks: BTreeMap<u64, Vec<(u32, usize)>> = BTreeMap::new();
        for (f, fr) in &seq.frames {
            for (i, l) in fr.labels.iter().enumerate() {
                if let Some(id) = l {
                    tracks.entry(*id).or_default().push((*f, i));
                }
            }
        }
        let mut at_frame: BTreeMap<u32, Vec<(u64, usize)>> = BTreeMap::new();
        for (id, obs) in &tracks {
            for (pos, (f, _)) in obs.iter().enumerate() {
                at_frame.entry(*f).or_default().push((*id, pos));
            }
        }
        for (&t, fr) in &seq.frames {
            for k in 1..=cfg.tau2 {
                let Some(anchor) = t.checked_sub(k).and_then(|s| at_frame.get(&s)) else { continue };
                let tracklets: Vec<TrackletRef> = anchor
                    .iter()
                    .map(|(id, pos)| {
                        let obs = &tracks[id];
                        let lo = (pos + 1).saturating_sub(cfg.tau1);
                        TrackletRef { id: *id, window: obs[lo..=*pos].to_vec() }
                    })
                    .collect();
                let mut positives = Vec::new();
                for (r, tr) in tracklets.iter().enumerate() {
                    for (c, l) in fr.labels.iter().enumerate() {
                        if *l == Some(tr.id) {
                            positives.push((r, c));
                        }
                    }
                }
                groups.push(AnchorGroup { seq: si, frame: t, gap: k, tracklets, positives, detections: fr.labels.len() });
            }
        }
    }
    if groups.is_empty() {
        return Err(validation("sequences are too short to form any tracklet-detection pair"));
    }
    Ok(PairSet { groups })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSchedule {
    pub iterations: usize,
    pub base_lr: f64,
    /// Rate for the final `⌈N/3⌉` iterations.
    pub decayed_lr: f64,
    pub batch_size: usize,
    /// OHEM negatives kept per positive.
    pub neg_per_pos: usize,
    pub momentum: f64,
    /// Optimize the batch sum of losses rather than the mean.
    pub sum_loss: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            iterations: 10_000,
            base_lr: 1e-3,
            decayed_lr: 1e-4,
            batch_size: 45,
            neg_per_pos: 3,
            momentum: 0.9,
            sum_loss: true,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.iterations != 0 && self.iterations < 3 {
            return Err(invalid(format!("need 0 or at least 3 iterations, got {}", self.iterations)));
        }
        if !(self.base_lr > 0.0 && self.decayed_lr > 0.0) {
            return Err(invalid("learning rates must be positive"));
        }
        if self.batch_size < self.neg_per_pos + 1 {
            return Err(invalid("batch must fit at least one positive and its negatives"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn lr(&self, iteration: usize) -> f64 {
        let decay_from = self.iterations - self.iterations.div_ceil(3);
        if iteration >= decay_from {
            self.decayed_lr
        } else {
            self.base_lr
        }
    }
}

/// Tape nodes for one anchor group: every pair's logit.
struct GroupGraph {
    logits: Vec<NodeId>,
}

fn record_group(
    tape: &mut Tape,
    bound: &BoundModel<'_>,
    seq: &TrainSequence,
    g: &AnchorGroup,
    rows: &[usize],
) -> Result<GroupGraph> {
    let mut frames: BTreeSet<u32> = rows.iter().flat_map(|&r| g.tracklets[r].window.iter().map(|(f, _)| *f)).collect();
    frames.insert(g.frame);
    let mut enhanced: BTreeMap<u32, Vec<NodeId>> = BTreeMap::new();
    for f in frames {
        enhanced.insert(f, bound.enhance(tape, &seq.frames[&f].objects));
    }
    let det_frame = &seq.frames[&g.frame];
    let mut logits = Vec::with_capacity(rows.len() * g.detections);
    let dets: Vec<_> = enhanced[&g.frame][..g.detections].iter().map(|d| bound.project_detection(tape, *d)).collect();
    for &r in rows {
        let tr = &g.tracklets[r];
        let window: Vec<NodeId> = tr.window.iter().map(|(f, i)| enhanced[f][*i]).collect();
        let feat = bound.aggregate(tape, &window);
        let side = bound.project_tracklet(tape, feat);
        let (lf, li) = tr.window[tr.window.len() - 1];
        let last_box = seq.frames[&lf].objects[li].bbox;
        for (c, det) in dets.iter().enumerate() {
            logits.push(bound.pair_logit_projected(tape, &side, det, &last_box, &det_frame.objects[c].bbox, g.gap, &seq.meta)?);
        }
    }
    Ok(GroupGraph { logits })
}

fn bce(logit: f64, label: bool) -> f64 {
    numeric::bce_with_logit(logit, if label { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: StrnModel,
    /// Mean binary cross-entropy of each iteration's batch.
    pub losses: Vec<f64>,
}

/// Minibatch SGD with momentum on binary cross-entropy with online hard
/// example mining. Each batch comes from one anchor group: up to
/// `batch / (1 + ratio)` positives and the highest-loss negatives at
/// `ratio` per positive.
pub fn train(model: StrnModel, seqs: &[TrainSequence], pairs: &PairSet, schedule: &TrainSchedule, seed: u64) -> Result<TrainOutcome> {
    schedule.validate()?;
    if pairs.single_class() {
        return Err(validation(format!(
            "training needs both classes, got {} positive and {} negative pairs",
            pairs.positives(),
            pairs.negatives()
        )));
    }
    if let Some(g) = pairs.groups.iter().find(|g| g.seq >= seqs.len()) {
        return Err(invalid(format!("pair group refers to sequence {} of {}", g.seq, seqs.len())));
    }
    let usable: Vec<usize> = (0..pairs.groups.len()).filter(|&i| !pairs.groups[i].positives.is_empty()).collect();
    let ablation = model.ablation();
    let mut store = model.into_store();
    let mut velocity: Vec<Vec<f64>> = store.iter().map(|p| alloc::vec![0.0; p.len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_pos = schedule.batch_size / (1 + schedule.neg_per_pos);
    let mut losses = Vec::with_capacity(schedule.iterations);

    for it in 0..schedule.iterations {
        let model = StrnModel::new(store.clone(), ablation)?;
        let g = &pairs.groups[usable[rng.random_range(0..usable.len())]];
        let seq = &seqs[g.seq];
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&model, &store, &mut tape)?;
        let rows: Vec<usize> = (0..g.tracklets.len()).collect();
        let graph = record_group(&mut tape, &bound, seq, g, &rows)?;

        let mut pos = g.positives.clone();
        if pos.len() > max_pos {
            pos.shuffle(&mut rng);
            pos.truncate(max_pos);
            pos.sort_unstable();
        }
        let pos_set: BTreeSet<(usize, usize)> = g.positives.iter().copied().collect();
        let mut neg: Vec<(f64, usize)> = (0..graph.logits.len())
            .filter(|k| !pos_set.contains(&(k / g.detections, k % g.detections)))
            .map(|k| (bce(tape.scalar(graph.logits[k]), false), k))
            .collect();
        neg.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        neg.truncate((schedule.neg_per_pos * pos.len()).min(schedule.batch_size - pos.len()));

        let mut terms = Vec::with_capacity(pos.len() + neg.len());
        for (r, c) in &pos {
            terms.push(tape.bce_with_logit(graph.logits[r * g.detections + c], 1.0));
        }
        for (_, k) in &neg {
            terms.push(tape.bce_with_logit(graph.logits[*k], 0.0));
        }
        let total = tape.sum(&terms);
        let n = terms.len() as f64;
        let mean = tape.scalar(total) / n;
        if !mean.is_finite() {
            return Err(validation(format!(
                "non-finite loss at iteration {it} (sequence {}, frame {}, gap {})",
                g.seq, g.frame, g.gap
            )));
        }
        losses.push(mean);
        let mut grads = tape.backward(total, &store);
        if !schedule.sum_loss {
            grads.scale(1.0 / n);
        }
        let lr = schedule.lr(it);
        for (i, v) in velocity.iter_mut().enumerate() {
            let p = store.param_mut(i);
            if p.is_frozen() {
                continue;
            }
            for ((w, vi), gi) in p.data.iter_mut().zip(v.iter_mut()).zip(grads.get(i)) {
                *vi = schedule.momentum * *vi + gi;
                *w -= lr * *vi;
            }
        }
    }
    Ok(TrainOutcome { model: StrnModel::new(store, ablation)?, losses })
}

/// Scores of every pair in `pairs` under `model`, with labels.
pub fn score_pairs(model: &StrnModel, seqs: &[TrainSequence], pairs: &PairSet) -> Result<Vec<(f64, bool)>> {
    let mut cache: BTreeMap<(usize, u32), Vec<Vec<f64>>> = BTreeMap::new();
    let mut out = Vec::new();
    for g in &pairs.groups {
        let seq = seqs.get(g.seq).ok_or_else(|| invalid(format!("no sequence {}", g.seq)))?;
        let mut frames: BTreeSet<u32> = g.tracklets.iter().flat_map(|t| t.window.iter().map(|(f, _)| *f)).collect();
        frames.insert(g.frame);
        for f in frames {
            if let alloc::collections::btree_map::Entry::Vacant(e) = cache.entry((g.seq, f)) {
                e.insert(model.enhance(&seq.frames[&f].objects)?.features);
            }
        }
        let pos: BTreeSet<(usize, usize)> = g.positives.iter().copied().collect();
        let det_frame = &seq.frames[&g.frame];
        for (r, tr) in g.tracklets.iter().enumerate() {
            let window = TrackletWindow::from_entries(tr.window.len(), tr.window.iter().map(|(f, i)| (*f, cache[&(g.seq, *f)][*i].clone())))?;
            let feat = model.aggregate(&window)?;
            let (lf, li) = tr.window[tr.window.len() - 1];
            let side = TrackletSide { feature: &feat, last_box: seq.frames[&lf].objects[li].bbox, gap: g.gap };
            for (c, (det, obj)) in cache[&(g.seq, g.frame)].iter().zip(&det_frame.objects).take(g.detections).enumerate() {
                let s = model.score(&side, det, &obj.bbox, &seq.meta)?;
                out.push((s, pos.contains(&(r, c))));
            }
        }
    }
    Ok(out)
}

/// Fraction of pairs on the right side of 0.5.
pub fn accuracy(scored: &[(f64, bool)]) -> f64 {
    if scored.is_empty() {
        return 0.0;
    }
    scored.iter().filter(|(s, l)| (*s >= 0.5) == *l).count() as f64 / scored.len() as f64
}

/// Area under the ROC curve from ranks; tied scores count half.
pub fn auc(scored: &[(f64, bool)]) -> f64 {
    let pos = scored.iter().filter(|(_, l)| *l).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return 0.5;
    }
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0;
        rank_sum += avg_rank * sorted[i..j].iter().filter(|(_, l)| *l).count() as f64;
        i = j;
    }
    (rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64
}

/// `(accuracy at 0.5, AUC)` over every pair in `pairs`.
pub fn evaluate_pairs(model: &StrnModel, seqs: &[TrainSequence], pairs: &PairSet) -> Result<(f64, f64)> {
    let scored = score_pairs(model, seqs, pairs)?;
    Ok((accuracy(&scored), auc(&scored)))
}
