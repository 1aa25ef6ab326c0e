//! The complete similarity model: parameter layout, ablation modes, an
//! inference path over plain vectors, and the same computation recorded on
//! a [`Tape`] for training.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embed::{geometric_frequencies, sinusoidal_embed};
use crate::error::{invalid, Error, Result};
use crate::geometry::BBox;
use crate::numeric::{NodeId, ParamStore, Tape};
use crate::pair::{self, PairFeature, Projection, ScoringParams, SequenceMeta};
use crate::pair::{COSINE_PROJ_DIM, EMBED_DIM, LOCATION_DIM, MOTION_DIM, PAIR_DIM, RELATION_DIM};
use crate::relation::{self, RelationParams, SceneObject, SpatialOutput, TemporalPooling, TrackletWindow};
use crate::numeric::Mat;

/// Input scale of the geometric and motion embeddings (log-ratio inputs).
pub const LOG_RATIO_EMBED_SCALE: f64 = 10.0;
/// Input scale of the location embedding (inputs normalized by image size).
pub const LOCATION_EMBED_SCALE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Appearance feature dimension.
    pub app: usize,
    pub heads: usize,
    /// Query/key projection dimension.
    pub key: usize,
    /// Hidden width of the similarity head.
    pub hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims { app: 64, heads: 1, key: 64, hidden: 64 }
    }
}

impl ModelDims {
    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let q = store.require("spatial.Wq.h0")?;
        let mut heads = 0;
        while store.get(&format!("spatial.Wq.h{heads}")).is_some() {
            heads += 1;
        }
        Ok(ModelDims {
            app: q.shape[1],
            heads,
            key: q.shape[0],
            hidden: store.require("head.Ws1")?.shape[0],
        })
    }
}

/// Shrinks the initial value projections so spatial enhancement starts
/// close to the identity.
pub const VALUE_INIT_SCALE: f64 = 0.0;

/// Builds a freshly initialized store.
///
/// Matrices are Glorot-uniform. Biases start at zero except the geometric
/// gate bias, which starts at 1 so every gate is open. The output row of
/// the head starts at zero, so every initial score is exactly 0.5.
pub fn init_params(dims: &ModelDims, seed: u64) -> Result<ParamStore> {
    let ModelDims { app, heads, key, hidden } = *dims;
    if app == 0 || heads == 0 || key == 0 || hidden == 0 || app % heads != 0 {
        return Err(invalid(format!("invalid model dims {dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new(seed);
    for h in 0..heads {
        s.insert_glorot(&format!("spatial.Wq.h{h}"), key, app, &mut rng)?;
        s.insert_glorot(&format!("spatial.Wk.h{h}"), key, app, &mut rng)?;
        let v = s.insert_glorot(&format!("spatial.Wv.h{h}"), app / heads, app, &mut rng)?;
        s.param_mut(v).data.iter_mut().for_each(|w| *w *= VALUE_INIT_SCALE);
    }
    s.insert("geo.embed", &[8], geometric_frequencies(8, LOG_RATIO_EMBED_SCALE))?;
    s.insert_glorot("geo.linear", 1, EMBED_DIM, &mut rng)?;
    s.insert("geo.linear.b", &[1], vec![1.0])?;
    let lim = libm::sqrt(6.0 / (app + 1) as f64);
    let wt: Vec<f64> = {
        use rand::Rng;
        (0..app).map(|_| rng.random_range(-lim..lim)).collect()
    };
    s.insert("temporal.wT", &[app], wt)?;
    s.insert_glorot("pair.Wr", RELATION_DIM, 2 * app, &mut rng)?;
    s.insert_glorot("pair.Wc", COSINE_PROJ_DIM, app, &mut rng)?;
    s.insert("loc.embed", &[4], geometric_frequencies(4, LOCATION_EMBED_SCALE))?;
    s.insert_glorot("loc.Wl", LOCATION_DIM, EMBED_DIM, &mut rng)?;
    s.insert("mot.embed", &[8], geometric_frequencies(8, LOG_RATIO_EMBED_SCALE))?;
    s.insert_glorot("mot.Wm", MOTION_DIM, EMBED_DIM, &mut rng)?;
    s.insert_glorot("head.Ws1", hidden, PAIR_DIM, &mut rng)?;
    s.insert_zeros("head.bs1", &[hidden])?;
    s.insert_zeros("head.Ws2", &[1, hidden])?;
    s.insert_zeros("head.bs2", &[1])?;
    Ok(s)
}

/// Which cues the model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    /// Appearance only: relation and cosine features of raw appearance, last observation as tracklet feature.
    A,
    /// Appearance plus location and motion.
    AL,
    /// Adds spatial relation reasoning.
    ALS,
    /// Adds temporal attention: the full model.
    #[default]
    ALST,
    /// Spatial reasoning with uniform temporal averaging.
    ALSAvg,
    /// Spatial reasoning with elementwise temporal max pooling.
    ALSMax,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [Ablation::A, Ablation::AL, Ablation::ALS, Ablation::ALST, Ablation::ALSAvg, Ablation::ALSMax];

    pub fn uses_location(self) -> bool {
        !matches!(self, Ablation::A)
    }

    pub fn uses_spatial(self) -> bool {
        !matches!(self, Ablation::A | Ablation::AL)
    }

    pub fn pooling(self) -> TemporalPooling {
        match self {
            Ablation::A | Ablation::AL | Ablation::ALS => TemporalPooling::Last,
            Ablation::ALST => TemporalPooling::Attention,
            Ablation::ALSAvg => TemporalPooling::Average,
            Ablation::ALSMax => TemporalPooling::Max,
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::A => "A",
            Ablation::AL => "A+L",
            Ablation::ALS => "A+L+S",
            Ablation::ALST => "A+L+S+T",
            Ablation::ALSAvg => "A+L+S+Avg",
            Ablation::ALSMax => "A+L+S+Max",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| {
                let name = format!("{a}");
                name.eq_ignore_ascii_case(s.trim())
            })
            .ok_or_else(|| invalid(format!("unknown ablation {s:?}; expected one of A, A+L, A+L+S, A+L+S+T, A+L+S+Avg, A+L+S+Max")))
    }
}

/// Everything needed to score a tracklet against a detection.
#[derive(Debug, Clone)]
pub struct TrackletSide<'a> {
    /// Aggregated tracklet feature.
    pub feature: &'a [f64],
    pub last_box: BBox,
    /// Frames since the tracklet's last observation.
    pub gap: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrnModel {
    store: ParamStore,
    dims: ModelDims,
    relation: RelationParams,
    scoring: ScoringParams,
    ablation: Ablation,
}

impl StrnModel {
    pub fn new(store: ParamStore, ablation: Ablation) -> Result<Self> {
        let dims = ModelDims::from_store(&store)?;
        let relation = RelationParams::from_store(&store)?;
        let scoring = ScoringParams::from_store(&store)?;
        if relation.app_dim() != scoring.app_dim() {
            return Err(invalid("relation and scoring parameters disagree on appearance dim"));
        }
        Ok(StrnModel { store, dims, relation, scoring, ablation })
    }

    pub fn init(dims: &ModelDims, ablation: Ablation, seed: u64) -> Result<Self> {
        StrnModel::new(init_params(dims, seed)?, ablation)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn into_store(self) -> ParamStore {
        self.store
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation
    }

    pub fn relation_params(&self) -> &RelationParams {
        &self.relation
    }

    pub fn scoring_params(&self) -> &ScoringParams {
        &self.scoring
    }

    /// Spatially enhanced features for one frame. Without spatial reasoning
    /// the features pass through and attention is reported as the identity.
    pub fn enhance(&self, objects: &[SceneObject]) -> Result<SpatialOutput> {
        if self.ablation.uses_spatial() {
            return relation::spatial_attention(objects, &self.relation);
        }
        if let Some(o) = objects.iter().find(|o| o.appearance.len() != self.dims.app) {
            return Err(invalid(format!("object feature has dim {}, expected {}", o.appearance.len(), self.dims.app)));
        }
        let n = objects.len();
        Ok(SpatialOutput {
            features: objects.iter().map(|o| o.appearance.clone()).collect(),
            attention: (0..self.dims.heads).map(|_| Mat::identity(n.max(1))).collect(),
            gates: Mat::zeros(n.max(1), n.max(1)),
        })
    }

    pub fn aggregate(&self, window: &TrackletWindow) -> Result<Vec<f64>> {
        relation::pool_window(window, &self.relation.temporal, self.ablation.pooling())
    }

    pub fn temporal_weights(&self, window: &TrackletWindow) -> Result<Vec<f64>> {
        match self.ablation.pooling() {
            TemporalPooling::Attention => relation::temporal_weights(window, &self.relation.temporal),
            TemporalPooling::Average => Ok(vec![1.0 / window.len() as f64; window.len()]),
            _ => {
                let mut w = vec![0.0; window.len()];
                if let Some(last) = w.last_mut() {
                    *last = 1.0;
                }
                Ok(w)
            }
        }
    }

    /// Pair feature with disabled cues zeroed.
    pub fn pair_feature(&self, tracklet: &TrackletSide<'_>, detection: &[f64], det_box: &BBox, meta: &SequenceMeta) -> Result<PairFeature> {
        let t = self.scoring.project_tracklet(tracklet.feature);
        let d = self.scoring.project_detection(detection);
        self.pair_from_projections(&t, &d, tracklet, det_box, meta)
    }

    pub fn pair_from_projections(
        &self,
        t: &Projection,
        d: &Projection,
        tracklet: &TrackletSide<'_>,
        det_box: &BBox,
        meta: &SequenceMeta,
    ) -> Result<PairFeature> {
        let (relation, cosine) = t.combine(d);
        let (location, motion) = if self.ablation.uses_location() {
            (
                pair::location_feature(&tracklet.last_box, det_box, meta, &self.scoring),
                pair::motion_feature(&tracklet.last_box, det_box, tracklet.gap, &self.scoring)?,
            )
        } else {
            (vec![0.0; LOCATION_DIM], vec![0.0; MOTION_DIM])
        };
        Ok(PairFeature { relation, cosine, location, motion })
    }

    pub fn score(&self, tracklet: &TrackletSide<'_>, detection: &[f64], det_box: &BBox, meta: &SequenceMeta) -> Result<f64> {
        pair::score_pair(&self.pair_feature(tracklet, detection, det_box, meta)?, &self.scoring)
    }
}

/// Parameter nodes of one model bound to one tape.
pub struct BoundModel<'m> {
    model: &'m StrnModel,
    heads: Vec<[NodeId; 3]>,
    geo_w: NodeId,
    geo_b: NodeId,
    w_t: NodeId,
    wr: NodeId,
    wc: NodeId,
    wl: NodeId,
    wm: NodeId,
    ws1: NodeId,
    bs1: NodeId,
    ws2: NodeId,
    bs2: NodeId,
}

impl<'m> BoundModel<'m> {
    pub fn bind(model: &'m StrnModel, store: &ParamStore, tape: &mut Tape) -> Result<Self> {
        let mut p = |name: &str| -> Result<NodeId> {
            let idx = store.index_of(name).ok_or_else(|| invalid(format!("missing parameter {name}")))?;
            Ok(tape.param(store, idx))
        };
        let mut heads = Vec::new();
        for h in 0..model.dims.heads {
            heads.push([
                p(&format!("spatial.Wq.h{h}"))?,
                p(&format!("spatial.Wk.h{h}"))?,
                p(&format!("spatial.Wv.h{h}"))?,
            ]);
        }
        Ok(BoundModel {
            model,
            heads,
            geo_w: p("geo.linear")?,
            geo_b: p("geo.linear.b")?,
            w_t: p("temporal.wT")?,
            wr: p("pair.Wr")?,
            wc: p("pair.Wc")?,
            wl: p("loc.Wl")?,
            wm: p("mot.Wm")?,
            ws1: p("head.Ws1")?,
            bs1: p("head.bs1")?,
            ws2: p("head.Ws2")?,
            bs2: p("head.bs2")?,
        })
    }

    /// Records spatial enhancement of one frame; returns one node per object.
    pub fn enhance(&self, tape: &mut Tape, objects: &[SceneObject]) -> Vec<NodeId> {
        let inputs: Vec<NodeId> = objects.iter().map(|o| tape.constant(o.appearance.clone())).collect();
        if !self.model.ablation.uses_spatial() || objects.is_empty() {
            return inputs;
        }
        let n = objects.len();
        let rel = &self.model.relation;
        let gate_rows: Vec<NodeId> = objects
            .iter()
            .map(|oi| {
                let mut emb = Vec::with_capacity(n * 8 * rel.geo_freqs.len());
                for oj in objects {
                    emb.extend(sinusoidal_embed(&relation::relative_geometry(&oi.bbox, &oj.bbox), &rel.geo_freqs));
                }
                let e = tape.constant_matrix(n, emb.len() / n, emb);
                let g = tape.matvec(e, self.geo_w);
                let g = tape.add_scalar(g, self.geo_b);
                tape.relu(g)
            })
            .collect();
        let mut per_head: Vec<Vec<NodeId>> = Vec::new();
        for [wq, wk, wv] in &self.heads {
            let d_key = tape.value(*wq).len() / self.model.dims.app;
            let scale = 1.0 / libm::sqrt(d_key as f64);
            let q: Vec<NodeId> = inputs.iter().map(|x| tape.matvec(*wq, *x)).collect();
            let k: Vec<NodeId> = inputs.iter().map(|x| tape.matvec(*wk, *x)).collect();
            let v: Vec<NodeId> = inputs.iter().map(|x| tape.matvec(*wv, *x)).collect();
            let outs = (0..n)
                .map(|i| {
                    let logits = tape.dot_many(q[i], &k, scale);
                    let w = tape.weighted_softmax(logits, gate_rows[i]);
                    tape.weighted_sum(w, &v)
                })
                .collect();
            per_head.push(outs);
        }
        (0..n)
            .map(|i| {
                let parts: Vec<NodeId> = per_head.iter().map(|h| h[i]).collect();
                let attended = if parts.len() == 1 { parts[0] } else { tape.concat(&parts) };
                tape.add(inputs[i], attended)
            })
            .collect()
    }

    /// Records temporal pooling of a window of enhanced-feature nodes (oldest first).
    pub fn aggregate(&self, tape: &mut Tape, window: &[NodeId]) -> NodeId {
        match self.model.ablation.pooling() {
            TemporalPooling::Last => *window.last().expect("empty temporal window"),
            TemporalPooling::Attention => {
                let logits = tape.dot_many(self.w_t, window, 1.0);
                let w = tape.softmax(logits);
                tape.weighted_sum(w, window)
            }
            TemporalPooling::Average => {
                let w = tape.constant(vec![1.0 / window.len() as f64; window.len()]);
                tape.weighted_sum(w, window)
            }
            TemporalPooling::Max => tape.max_pool(window),
        }
    }

    /// Records the projections of a tracklet feature that do not depend on the detection.
    pub fn project_tracklet(&self, tape: &mut Tape, feature: NodeId) -> PairSide {
        PairSide { relation: tape.matvec_cols(self.wr, feature, 0), cosine: tape.matvec(self.wc, feature) }
    }

    /// Records the projections of a detection feature that do not depend on the tracklet.
    pub fn project_detection(&self, tape: &mut Tape, feature: NodeId) -> PairSide {
        let offset = self.model.dims.app;
        PairSide { relation: tape.matvec_cols(self.wr, feature, offset), cosine: tape.matvec(self.wc, feature) }
    }

    /// Records the pre-sigmoid similarity of `(tracklet, detection)`.
    #[allow(clippy::too_many_arguments)]
    pub fn pair_logit(
        &self,
        tape: &mut Tape,
        tracklet: NodeId,
        detection: NodeId,
        last_box: &BBox,
        det_box: &BBox,
        gap: u32,
        meta: &SequenceMeta,
    ) -> Result<NodeId> {
        let t = self.project_tracklet(tape, tracklet);
        let d = self.project_detection(tape, detection);
        self.pair_logit_projected(tape, &t, &d, last_box, det_box, gap, meta)
    }

    /// Like [`BoundModel::pair_logit`] from projections recorded once per node.
    #[allow(clippy::too_many_arguments)]
    pub fn pair_logit_projected(
        &self,
        tape: &mut Tape,
        tracklet: &PairSide,
        detection: &PairSide,
        last_box: &BBox,
        det_box: &BBox,
        gap: u32,
        meta: &SequenceMeta,
    ) -> Result<NodeId> {
        let scoring = &self.model.scoring;
        let rel = tape.add(tracklet.relation, detection.relation);
        let cos = tape.cosine(tracklet.cosine, detection.cosine);
        let (loc, mot) = if self.model.ablation.uses_location() {
            let le = tape.constant(pair::location_embedding(last_box, det_box, meta, scoring));
            let me = tape.constant(pair::motion_embedding(last_box, det_box, gap, scoring)?);
            (tape.matvec(self.wl, le), tape.matvec(self.wm, me))
        } else {
            (tape.constant(vec![0.0; LOCATION_DIM]), tape.constant(vec![0.0; MOTION_DIM]))
        };
        let x = tape.concat(&[rel, cos, loc, mot]);
        let h = tape.matvec(self.ws1, x);
        let h = tape.add(h, self.bs1);
        let h = tape.relu(h);
        let z = tape.matvec(self.ws2, h);
        Ok(tape.add(z, self.bs2))
    }
}

/// Per-node projections feeding the relation and cosine features.
#[derive(Debug, Clone, Copy)]
pub struct PairSide {
    relation: NodeId,
    cosine: NodeId,
}
