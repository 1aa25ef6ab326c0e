//! Tracklet-object pair representation and the similarity head.
//!
//! A pair is described by a fused relation feature (32-d), the cosine of
//! the two projected appearance features (1-d), an embedded location
//! feature (16-d) and an embedded motion feature (16-d). The 65-d
//! concatenation goes through a two-layer ReLU network and a sigmoid.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::embed::sinusoidal_embed;
use crate::error::{invalid, Result};
use crate::geometry::BBox;
use crate::numeric::{self, apply_linear, LinearLayer, Mat, ParamStore};
use crate::relation::EPS_GEO;

pub const RELATION_DIM: usize = 32;
pub const COSINE_PROJ_DIM: usize = 128;
pub const LOCATION_DIM: usize = 16;
pub const MOTION_DIM: usize = 16;
pub const EMBED_DIM: usize = 64;
pub const PAIR_DIM: usize = RELATION_DIM + 1 + LOCATION_DIM + MOTION_DIM;

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMeta {
    pub name: String,
    pub width: f64,
    pub height: f64,
    /// Frames per second.
    pub frame_rate: f64,
    pub length: u32,
}

impl SequenceMeta {
    pub fn new(name: &str, width: f64, height: f64, frame_rate: f64, length: u32) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && frame_rate > 0.0 && length > 0) {
            return Err(crate::error::validation(format!(
                "sequence meta must be positive: {width}x{height}, {frame_rate} fps, {length} frames"
            )));
        }
        Ok(SequenceMeta { name: name.into(), width, height, frame_rate, length })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairFeature {
    pub relation: Vec<f64>,
    pub cosine: f64,
    pub location: Vec<f64>,
    pub motion: Vec<f64>,
}

impl PairFeature {
    pub fn concat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(PAIR_DIM);
        v.extend_from_slice(&self.relation);
        v.push(self.cosine);
        v.extend_from_slice(&self.location);
        v.extend_from_slice(&self.motion);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringParams {
    pub relation: Mat,
    pub cosine: Mat,
    pub loc_freqs: Vec<f64>,
    pub location: Mat,
    pub mot_freqs: Vec<f64>,
    pub motion: Mat,
    pub hidden: LinearLayer,
    pub output: LinearLayer,
}

impl ScoringParams {
    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let p = ScoringParams {
            relation: store.matrix("pair.Wr")?,
            cosine: store.matrix("pair.Wc")?,
            loc_freqs: store.vector("loc.embed")?,
            location: store.matrix("loc.Wl")?,
            mot_freqs: store.vector("mot.embed")?,
            motion: store.matrix("mot.Wm")?,
            hidden: LinearLayer::new(store.matrix("head.Ws1")?, Some(store.vector("head.bs1")?))?,
            output: LinearLayer::new(store.matrix("head.Ws2")?, Some(store.vector("head.bs2")?))?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn app_dim(&self) -> usize {
        self.cosine.cols()
    }

    fn validate(&self) -> Result<()> {
        let d = self.app_dim();
        let checks = [
            ("pair.Wr", self.relation.rows() == RELATION_DIM && self.relation.cols() == 2 * d),
            ("pair.Wc", self.cosine.rows() == COSINE_PROJ_DIM),
            ("loc.embed", 2 * 8 * self.loc_freqs.len() == EMBED_DIM),
            ("loc.Wl", self.location.rows() == LOCATION_DIM && self.location.cols() == EMBED_DIM),
            ("mot.embed", 2 * 4 * self.mot_freqs.len() == EMBED_DIM),
            ("mot.Wm", self.motion.rows() == MOTION_DIM && self.motion.cols() == EMBED_DIM),
            ("head.Ws1", self.hidden.in_dim() == PAIR_DIM),
            ("head.Ws2", self.output.out_dim() == 1 && self.output.in_dim() == self.hidden.out_dim()),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(invalid(format!("parameter {name} has the wrong shape"))),
            None => Ok(()),
        }
    }

    /// Tracklet-side halves of the relation and cosine features.
    pub fn project_tracklet(&self, tracklet: &[f64]) -> Projection {
        Projection {
            relation: self.relation.matvec_cols(0, tracklet),
            cosine: self.cosine.matvec(tracklet),
        }
    }

    /// Detection-side halves of the relation and cosine features.
    pub fn project_detection(&self, detection: &[f64]) -> Projection {
        Projection {
            relation: self.relation.matvec_cols(self.app_dim(), detection),
            cosine: self.cosine.matvec(detection),
        }
    }
}

/// One side of a pair after the linear maps that act on each side separately.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub relation: Vec<f64>,
    pub cosine: Vec<f64>,
}

impl Projection {
    /// Relation and cosine features of the pair `(self, detection)`.
    pub fn combine(&self, detection: &Projection) -> (Vec<f64>, f64) {
        let relation = self.relation.iter().zip(&detection.relation).map(|(a, b)| a + b).collect();
        (relation, numeric::cosine_unchecked(&self.cosine, &detection.cosine))
    }
}

fn check_dims(tracklet: &[f64], detection: &[f64], d: usize) -> Result<()> {
    if tracklet.len() != d || detection.len() != d {
        return Err(invalid(format!(
            "pair features need dim {d}, got {} and {}",
            tracklet.len(),
            detection.len()
        )));
    }
    Ok(())
}

/// `W_R · [tracklet; detection]`.
pub fn relation_feature(tracklet: &[f64], detection: &[f64], params: &ScoringParams) -> Result<Vec<f64>> {
    check_dims(tracklet, detection, params.app_dim())?;
    let mut x = Vec::with_capacity(2 * tracklet.len());
    x.extend_from_slice(tracklet);
    x.extend_from_slice(detection);
    Ok(params.relation.matvec(&x))
}

/// Cosine of `W_C · tracklet` and `W_C · detection`.
pub fn cosine_feature(tracklet: &[f64], detection: &[f64], params: &ScoringParams) -> Result<f64> {
    check_dims(tracklet, detection, params.app_dim())?;
    numeric::cosine(&params.cosine.matvec(tracklet), &params.cosine.matvec(detection))
}

/// Box center and size normalized by the image size. Not clamped.
pub fn bare_location(b: &BBox, meta: &SequenceMeta) -> [f64; 4] {
    [b.x / meta.width, b.y / meta.height, b.w / meta.width, b.h / meta.height]
}

/// `W_L · embed([loc(tracklet box); loc(detection box)])`.
pub fn location_feature(tracklet_box: &BBox, detection_box: &BBox, meta: &SequenceMeta, params: &ScoringParams) -> Vec<f64> {
    params.location.matvec(&location_embedding(tracklet_box, detection_box, meta, params))
}

pub(crate) fn location_embedding(bi: &BBox, bj: &BBox, meta: &SequenceMeta, params: &ScoringParams) -> Vec<f64> {
    let mut raw = [0.0; 8];
    raw[..4].copy_from_slice(&bare_location(bi, meta));
    raw[4..].copy_from_slice(&bare_location(bj, meta));
    sinusoidal_embed(&raw, &params.loc_freqs)
}

/// Per-frame displacement and size change from the tracklet's last box to the detection, in log space.
pub fn motion_raw(tracklet_box: &BBox, detection_box: &BBox, gap: u32) -> [f64; 4] {
    let (bi, bj, k) = (tracklet_box, detection_box, gap as f64);
    [
        libm::log(f64::max(libm::fabs(bi.x - bj.x) / (k * bi.w), EPS_GEO)),
        libm::log(f64::max(libm::fabs(bi.y - bj.y) / (k * bi.h), EPS_GEO)),
        libm::log(bj.w / (k * bi.w)),
        libm::log(bj.h / (k * bi.h)),
    ]
}

/// `W_M · embed(motion_raw)`.
pub fn motion_feature(tracklet_box: &BBox, detection_box: &BBox, gap: u32, params: &ScoringParams) -> Result<Vec<f64>> {
    Ok(params.motion.matvec(&motion_embedding(tracklet_box, detection_box, gap, params)?))
}

pub(crate) fn motion_embedding(bi: &BBox, bj: &BBox, gap: u32, params: &ScoringParams) -> Result<Vec<f64>> {
    if gap == 0 {
        return Err(invalid("motion feature needs a frame gap of at least 1"));
    }
    Ok(sinusoidal_embed(&motion_raw(bi, bj, gap), &params.mot_freqs))
}

/// Pre-sigmoid output of the similarity head.
pub fn score_logit(pf: &PairFeature, params: &ScoringParams) -> Result<f64> {
    let x = pf.concat();
    if x.len() != PAIR_DIM {
        return Err(invalid(format!("pair feature has dim {}, expected {PAIR_DIM}", x.len())));
    }
    let h: Vec<f64> = apply_linear(&params.hidden, &x)?.into_iter().map(numeric::relu).collect();
    Ok(apply_linear(&params.output, &h)?[0])
}

/// Similarity in `(0, 1)`.
pub fn score_pair(pf: &PairFeature, params: &ScoringParams) -> Result<f64> {
    // sigmoid saturates to exactly 0 or 1 in f64 beyond |z| ~ 37
    Ok(numeric::sigmoid(score_logit(pf, params)?).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}
