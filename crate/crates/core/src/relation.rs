//! Spatial relation reasoning within a frame and temporal aggregation over a tracklet.
//!
//! Within a frame every object attends to every object (itself included).
//! The attention logit is a scaled dot product of query/key projections of
//! the appearance features, and the exponentials are gated by a small
//! network on the relative box geometry. The enhanced feature is the input
//! plus the attended value projections, concatenated over heads.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::embed::sinusoidal_embed;
use crate::error::{invalid, Result};
use crate::geometry::BBox;
use crate::numeric::{self, Mat, ParamStore};

/// Lower clamp applied to center offsets before taking logarithms.
pub const EPS_GEO: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub appearance: Vec<f64>,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub query: Mat,
    pub key: Mat,
    pub value: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationParams {
    pub heads: Vec<AttentionHead>,
    pub geo_freqs: Vec<f64>,
    pub geo_weight: Vec<f64>,
    pub geo_bias: f64,
    pub temporal: Vec<f64>,
}

impl RelationParams {
    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let mut heads = Vec::new();
        while let Some(q) = store.get(&format!("spatial.Wq.h{}", heads.len())) {
            let i = heads.len();
            let query = store.matrix(&q.name)?;
            let key = store.matrix(&format!("spatial.Wk.h{i}"))?;
            let value = store.matrix(&format!("spatial.Wv.h{i}"))?;
            heads.push(AttentionHead { query, key, value });
        }
        if heads.is_empty() {
            return Err(invalid("store has no spatial attention heads"));
        }
        let geo_linear = store.matrix("geo.linear")?;
        let params = RelationParams {
            heads,
            geo_freqs: store.vector("geo.embed")?,
            geo_weight: geo_linear.data().to_vec(),
            geo_bias: store.vector("geo.linear.b")?[0],
            temporal: store.vector("temporal.wT")?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn app_dim(&self) -> usize {
        self.temporal.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.app_dim();
        let h = self.heads.len();
        if h == 0 || !d.is_multiple_of(h) {
            return Err(invalid(format!("{h} heads do not divide appearance dim {d}")));
        }
        for (i, head) in self.heads.iter().enumerate() {
            let ok = head.query.cols() == d
                && head.key.cols() == d
                && head.query.rows() == head.key.rows()
                && head.value.cols() == d
                && head.value.rows() == d / h;
            if !ok {
                return Err(invalid(format!("attention head {i} has inconsistent shapes")));
            }
        }
        if self.geo_weight.len() != 8 * self.geo_freqs.len() {
            return Err(invalid("geometric net width does not match its embedding"));
        }
        Ok(())
    }
}

/// `log(max(|Δx|/w_j, ε), max(|Δy|/h_j, ε), w_i/w_j, h_i/h_j)`.
pub fn relative_geometry(bi: &BBox, bj: &BBox) -> [f64; 4] {
    [
        libm::log(f64::max(libm::fabs(bi.x - bj.x) / bj.w, EPS_GEO)),
        libm::log(f64::max(libm::fabs(bi.y - bj.y) / bj.h, EPS_GEO)),
        libm::log(bi.w / bj.w),
        libm::log(bi.h / bj.h),
    ]
}

/// `ReLU(w · embed(rel) + b)`.
pub fn geometric_weight(rel: &[f64; 4], params: &RelationParams) -> f64 {
    let e = sinusoidal_embed(rel, &params.geo_freqs);
    numeric::relu(numeric::dot(&params.geo_weight, &e) + params.geo_bias)
}

/// Enhanced features plus the attention used to build them.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialOutput {
    pub features: Vec<Vec<f64>>,
    /// One `n x n` row-stochastic matrix per head; row `i` holds object `i`'s weights.
    pub attention: Vec<Mat>,
    /// `gates[(i, j)]` is the geometric weight of `j` as seen from `i`.
    pub gates: Mat,
}

pub fn spatial_enhance(objects: &[SceneObject], params: &RelationParams) -> Result<Vec<Vec<f64>>> {
    Ok(spatial_attention(objects, params)?.features)
}

pub fn spatial_attention(objects: &[SceneObject], params: &RelationParams) -> Result<SpatialOutput> {
    if objects.is_empty() {
        return Err(invalid("spatial relation over an empty object set"));
    }
    let d = params.app_dim();
    if let Some(o) = objects.iter().find(|o| o.appearance.len() != d) {
        return Err(invalid(format!(
            "object feature has dim {}, expected {d}",
            o.appearance.len()
        )));
    }
    let n = objects.len();
    let mut gates = Mat::zeros(n, n);
    for (i, oi) in objects.iter().enumerate() {
        for (j, oj) in objects.iter().enumerate() {
            gates.set(i, j, geometric_weight(&relative_geometry(&oi.bbox, &oj.bbox), params));
        }
    }

    let mut features: Vec<Vec<f64>> = objects.iter().map(|o| o.appearance.clone()).collect();
    let mut attention = Vec::with_capacity(params.heads.len());
    let slice = d / params.heads.len();
    for (h, head) in params.heads.iter().enumerate() {
        let scale = 1.0 / libm::sqrt(head.query.rows() as f64);
        let q: Vec<Vec<f64>> = objects.iter().map(|o| head.query.matvec(&o.appearance)).collect();
        let k: Vec<Vec<f64>> = objects.iter().map(|o| head.key.matvec(&o.appearance)).collect();
        let v: Vec<Vec<f64>> = objects.iter().map(|o| head.value.matvec(&o.appearance)).collect();
        let mut att = Mat::zeros(n, n);
        for i in 0..n {
            let logits: Vec<f64> = k.iter().map(|kj| scale * numeric::dot(&q[i], kj)).collect();
            let w = numeric::weighted_softmax(&logits, gates.row(i))?;
            let out = &mut features[i][h * slice..(h + 1) * slice];
            for (j, wj) in w.iter().enumerate() {
                numeric::axpy(out, *wj, &v[j]);
                att.set(i, j, *wj);
            }
        }
        attention.push(att);
    }
    Ok(SpatialOutput { features, attention, gates })
}

/// The most recent spatially enhanced features of one tracklet.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackletWindow {
    capacity: usize,
    entries: VecDeque<(u32, Vec<f64>)>,
}

impl TrackletWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("temporal window capacity must be at least 1"));
        }
        Ok(TrackletWindow { capacity, entries: VecDeque::with_capacity(capacity) })
    }

    pub fn from_entries(capacity: usize, entries: impl IntoIterator<Item = (u32, Vec<f64>)>) -> Result<Self> {
        let mut w = TrackletWindow::new(capacity)?;
        for (f, v) in entries {
            w.push(f, v)?;
        }
        Ok(w)
    }

    /// Appends an observation, evicting the oldest once full.
    pub fn push(&mut self, frame: u32, feature: Vec<f64>) -> Result<()> {
        if let Some((last, _)) = self.entries.back() {
            if frame <= *last {
                return Err(invalid(format!("window frame {frame} does not follow {last}")));
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((frame, feature));
        Ok(())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frames(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|(f, _)| *f)
    }

    pub fn features(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.entries.iter().map(|(_, v)| v.as_slice())
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.entries.back().map(|(_, v)| v.as_slice())
    }
}

/// How a tracklet window is pooled into one feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalPooling {
    /// Softmax attention on `<w_T, φ>`.
    Attention,
    Average,
    /// Elementwise maximum.
    Max,
    /// Most recent feature only.
    Last,
}

pub fn temporal_weights(window: &TrackletWindow, w_t: &[f64]) -> Result<Vec<f64>> {
    if window.is_empty() {
        return Err(invalid("temporal weights of an empty window"));
    }
    let logits: Vec<f64> = window.features().map(|f| numeric::dot(w_t, f)).collect();
    numeric::softmax(&logits)
}

pub fn temporal_aggregate(window: &TrackletWindow, w_t: &[f64]) -> Result<Vec<f64>> {
    pool_window(window, w_t, TemporalPooling::Attention)
}

pub fn pool_window(window: &TrackletWindow, w_t: &[f64], pooling: TemporalPooling) -> Result<Vec<f64>> {
    if window.is_empty() {
        return Err(invalid("temporal aggregation of an empty window"));
    }
    let d = window.last().map_or(0, |f| f.len());
    Ok(match pooling {
        TemporalPooling::Attention => {
            let w = temporal_weights(window, w_t)?;
            let mut out = vec![0.0; d];
            for (wk, f) in w.iter().zip(window.features()) {
                numeric::axpy(&mut out, *wk, f);
            }
            out
        }
        TemporalPooling::Average => {
            let n = window.len() as f64;
            let mut out = vec![0.0; d];
            for f in window.features() {
                numeric::axpy(&mut out, 1.0 / n, f);
            }
            out
        }
        TemporalPooling::Max => {
            let mut out = vec![f64::NEG_INFINITY; d];
            for f in window.features() {
                for (o, x) in out.iter_mut().zip(f) {
                    if *x > *o {
                        *o = *x;
                    }
                }
            }
            out
        }
        TemporalPooling::Last => window.last().map(|f| f.to_vec()).unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelDims};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64, dims: ModelDims) -> RelationParams {
        RelationParams::from_store(&init_params(&dims, seed).unwrap()).unwrap()
    }

    fn small_dims() -> ModelDims {
        ModelDims { app: 8, heads: 1, key: 4, hidden: 6 }
    }

    fn random_objects(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<SceneObject> {
        (0..n)
            .map(|_| SceneObject {
                appearance: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                bbox: BBox::new(
                    rng.random_range(0.0..500.0),
                    rng.random_range(0.0..400.0),
                    rng.random_range(10.0..60.0),
                    rng.random_range(20.0..120.0),
                )
                .unwrap(),
            })
            .collect()
    }

    // Direct evaluation of the attention formulas with explicit loops.
    fn oracle_gate(bi: &BBox, bj: &BBox, p: &RelationParams) -> f64 {
        let dx = f64::max((bi.x - bj.x).abs() / bj.w, 1e-3).ln();
        let dy = f64::max((bi.y - bj.y).abs() / bj.h, 1e-3).ln();
        let rel = [dx, dy, (bi.w / bj.w).ln(), (bi.h / bj.h).ln()];
        let mut acc = p.geo_bias;
        let mut k = 0;
        for r in rel {
            for f in &p.geo_freqs {
                acc += p.geo_weight[k] * (r * f).sin();
                acc += p.geo_weight[k + 1] * (r * f).cos();
                k += 2;
            }
        }
        acc.max(0.0)
    }

    fn oracle_enhance(objs: &[SceneObject], p: &RelationParams) -> Vec<Vec<f64>> {
        let n = objs.len();
        let d = p.app_dim();
        let hcount = p.heads.len();
        let mut out: Vec<Vec<f64>> = objs.iter().map(|o| o.appearance.clone()).collect();
        for (h, head) in p.heads.iter().enumerate() {
            let dk = head.query.rows();
            let proj = |m: &Mat, x: &[f64]| -> Vec<f64> {
                (0..m.rows()).map(|r| (0..m.cols()).map(|c| m.get(r, c) * x[c]).sum()).collect()
            };
            for i in 0..n {
                let qi = proj(&head.query, &objs[i].appearance);
                let mut num = vec![0.0; n];
                for j in 0..n {
                    let kj = proj(&head.key, &objs[j].appearance);
                    let a: f64 = qi.iter().zip(&kj).map(|(x, y)| x * y).sum::<f64>() / (dk as f64).sqrt();
                    num[j] = oracle_gate(&objs[i].bbox, &objs[j].bbox, p) * a.exp();
                }
                let z: f64 = num.iter().sum();
                for j in 0..n {
                    let w = if z > 0.0 { num[j] / z } else { 1.0 / n as f64 };
                    let vj = proj(&head.value, &objs[j].appearance);
                    for c in 0..d / hcount {
                        out[i][h * (d / hcount) + c] += w * vj[c];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn relative_geometry_examples() {
        let b = BBox::new(10.0, 10.0, 4.0, 8.0).unwrap();
        let r = relative_geometry(&b, &b);
        assert_eq!(r, [libm::log(1e-3), libm::log(1e-3), 0.0, 0.0]);
        let bi = BBox::new(12.0, 10.0, 4.0, 8.0).unwrap();
        let r = relative_geometry(&bi, &b);
        let expect = [-core::f64::consts::LN_2, -6.90776, 0.0, 0.0];
        for (a, e) in r.iter().zip(expect) {
            assert!((a - e).abs() < 1e-5);
        }
        assert_eq!(relative_geometry(&bi.scaled(2.0), &b.scaled(2.0)), r);
    }

    #[test]
    fn geometric_weight_examples() {
        let mut p = params(3, small_dims());
        let rel = [-core::f64::consts::LN_2, -6.90776, 0.0, 0.0];
        let seeded = geometric_weight(&rel, &p);
        let bi = BBox::new(12.0, 10.0, 4.0, 8.0).unwrap();
        let bj = BBox::new(10.0, 10.0, 4.0, 8.0).unwrap();
        let exact = geometric_weight(&relative_geometry(&bi, &bj), &p);
        assert!((exact - oracle_gate(&bi, &bj, &p)).abs() < 1e-10);
        assert!(seeded >= 0.0);
        p.geo_weight.iter_mut().for_each(|w| *w = 0.0);
        p.geo_bias = 0.0;
        assert_eq!(geometric_weight(&rel, &p), 0.0);
        p.geo_bias = 1.0;
        assert_eq!(geometric_weight(&rel, &p), 1.0);
    }

    #[test]
    fn zero_value_projection_is_identity() {
        let mut p = params(4, small_dims());
        for h in &mut p.heads {
            h.value = Mat::zeros(h.value.rows(), h.value.cols());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let objs = random_objects(&mut rng, 5, 8);
        let out = spatial_enhance(&objs, &p).unwrap();
        for (o, f) in objs.iter().zip(&out) {
            assert_eq!(&o.appearance, f);
        }
    }

    #[test]
    fn singleton_attends_to_itself() {
        let p = params(5, small_dims());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let objs = random_objects(&mut rng, 1, 8);
        let out = spatial_enhance(&objs, &p).unwrap();
        let v = p.heads[0].value.matvec(&objs[0].appearance);
        for c in 0..8 {
            assert!((out[0][c] - (objs[0].appearance[c] + v[c])).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_brute_force_oracle() {
        for (seed, heads) in [(11, 1), (12, 2), (13, 4)] {
            let p = params(seed, ModelDims { app: 8, heads, key: 4, hidden: 6 });
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for n in [2, 3, 6] {
                let objs = random_objects(&mut rng, n, 8);
                let got = spatial_enhance(&objs, &p).unwrap();
                let want = oracle_enhance(&objs, &p);
                for (g, w) in got.iter().zip(&want) {
                    for (a, b) in g.iter().zip(w) {
                        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn spatial_errors() {
        let p = params(1, small_dims());
        assert!(spatial_enhance(&[], &p).is_err());
        let bad = SceneObject { appearance: vec![0.0; 3], bbox: BBox::new(1.0, 1.0, 1.0, 1.0).unwrap() };
        assert!(spatial_enhance(&[bad], &p).is_err());
    }

    #[test]
    fn temporal_examples() {
        let w_t = vec![0.5, -1.0, 2.0];
        let one = TrackletWindow::from_entries(10, [(3, vec![1.0, 2.0, 3.0])]).unwrap();
        assert_eq!(temporal_weights(&one, &w_t).unwrap(), vec![1.0]);
        assert_eq!(temporal_aggregate(&one, &w_t).unwrap(), vec![1.0, 2.0, 3.0]);

        let two = TrackletWindow::from_entries(10, [(1, vec![1.0, 0.0, 4.0]), (4, vec![3.0, 2.0, 0.0])]).unwrap();
        assert_eq!(temporal_aggregate(&two, &[0.0; 3]).unwrap(), vec![2.0, 1.0, 2.0]);

        let feats = [vec![0.2, 0.4, -0.1], vec![-0.3, 0.9, 0.5], vec![1.2, -0.6, 0.3]];
        let three = TrackletWindow::from_entries(10, (0..3).map(|k| (k as u32 + 1, feats[k].clone()))).unwrap();
        let w = temporal_weights(&three, &w_t).unwrap();
        let logits: Vec<f64> = feats.iter().map(|f| f.iter().zip(&w_t).map(|(a, b)| a * b).sum()).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for (wk, l) in w.iter().zip(&logits) {
            assert!((wk - l.exp() / z).abs() < 1e-10);
        }
        let agg = temporal_aggregate(&three, &w_t).unwrap();
        for c in 0..3 {
            let want: f64 = (0..3).map(|k| w[k] * feats[k][c]).sum();
            assert!((agg[c] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn window_rules() {
        let mut w = TrackletWindow::new(2).unwrap();
        assert!(temporal_weights(&w, &[1.0]).is_err());
        w.push(1, vec![1.0]).unwrap();
        w.push(2, vec![2.0]).unwrap();
        w.push(5, vec![3.0]).unwrap();
        assert_eq!(w.frames().collect::<Vec<_>>(), vec![2, 5]);
        assert!(w.push(5, vec![0.0]).is_err());
        assert!(TrackletWindow::new(0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn geometry_invariant_to_scale_and_shift(
            x in -500.0f64..500.0, y in -500.0f64..500.0, w in 1.0f64..80.0, h in 1.0f64..80.0,
            x2 in -500.0f64..500.0, y2 in -500.0f64..500.0, w2 in 1.0f64..80.0, h2 in 1.0f64..80.0,
            s in 0.25f64..8.0, dx in -100.0f64..100.0, dy in -100.0f64..100.0,
        ) {
            let a = BBox::new(x, y, w, h).unwrap();
            let b = BBox::new(x2, y2, w2, h2).unwrap();
            let base = relative_geometry(&a, &b);
            let scaled = relative_geometry(&a.scaled(s), &b.scaled(s));
            let moved = relative_geometry(&a.translated(dx, dy), &b.translated(dx, dy));
            for k in 0..4 {
                prop_assert!((base[k] - scaled[k]).abs() < 1e-9);
                prop_assert!((base[k] - moved[k]).abs() < 1e-6);
            }
        }

        #[test]
        fn spatial_is_permutation_equivariant(seed in 0u64..1000, n in 2usize..7) {
            let p = params(seed % 7, small_dims());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let objs = random_objects(&mut rng, n, 8);
            let perm: Vec<usize> = (0..n).rev().collect();
            let permuted: Vec<SceneObject> = perm.iter().map(|i| objs[*i].clone()).collect();
            let a = spatial_enhance(&objs, &p).unwrap();
            let b = spatial_enhance(&permuted, &p).unwrap();
            for (k, i) in perm.iter().enumerate() {
                for (x, y) in a[*i].iter().zip(&b[k]) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn aggregate_is_convex(seed in 0u64..1000, n in 1usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w_t: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let feats: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let win = TrackletWindow::from_entries(10, feats.iter().cloned().enumerate().map(|(k, f)| (k as u32, f))).unwrap();
            let agg = temporal_aggregate(&win, &w_t).unwrap();
            for c in 0..5 {
                let lo = feats.iter().map(|f| f[c]).fold(f64::INFINITY, f64::min);
                let hi = feats.iter().map(|f| f[c]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(agg[c] >= lo - 1e-12 && agg[c] <= hi + 1e-12);
            }
            let w = temporal_weights(&win, &w_t).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
