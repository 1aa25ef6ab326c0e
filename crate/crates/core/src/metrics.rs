//! CLEAR-MOT, identity (IDF1) and coverage metrics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::assignment::max_weight_assignment;
use crate::error::{invalid, Result};
pub use crate::geometry::iou;
use crate::geometry::BBox;
use crate::tracker::TrackBox;

/// Boxes per frame as `(identity, box)`.
pub type Tracks = BTreeMap<u32, Vec<(u64, BBox)>>;

pub fn tracks_from_boxes(boxes: &[TrackBox]) -> Tracks {
    let mut t = Tracks::new();
    for b in boxes {
        t.entry(b.frame).or_default().push((b.id, b.bbox));
    }
    t
}

fn check_thr(iou_thr: f64) -> Result<()> {
    if iou_thr > 0.0 && iou_thr < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("IoU threshold must lie in (0, 1), got {iou_thr}")))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClearCounts {
    pub fp: u64,
    pub fn_: u64,
    pub ids: u64,
    pub frag: u64,
    pub iou_sum: f64,
    pub matches: u64,
    pub gt_total: u64,
    pub hyp_total: u64,
    /// Per ground-truth identity: `(matched frames, present frames)`.
    pub coverage: BTreeMap<u64, (u64, u64)>,
}

impl ClearCounts {
    pub fn mota(&self) -> f64 {
        1.0 - (self.fp + self.fn_ + self.ids) as f64 / self.gt_total.max(1) as f64
    }

    /// Mean IoU of matched pairs.
    pub fn motp(&self) -> f64 {
        if self.matches == 0 {
            0.0
        } else {
            self.iou_sum / self.matches as f64
        }
    }
}

#[derive(Default)]
struct GtHistory {
    last_hyp: Option<u64>,
    was_matched: bool,
    broken: bool,
}

/// Frame-by-frame CLEAR-MOT correspondence.
///
/// A ground truth keeps last frame's hypothesis when both still overlap by
/// at least `iou_thr` and neither has been matched to anyone else since.
/// The rest are matched by maximum total IoU over pairs at or above the
/// threshold. Fragmentations are counted over frames where the ground truth
/// is present.
pub fn clear_mot(gt: &Tracks, hyp: &Tracks, iou_thr: f64) -> Result<ClearCounts> {
    check_thr(iou_thr)?;
    let mut c = ClearCounts::default();
    let mut hist: BTreeMap<u64, GtHistory> = BTreeMap::new();
    let mut hyp_last_gt: BTreeMap<u64, u64> = BTreeMap::new();
    let frames: BTreeSet<u32> = gt.keys().chain(hyp.keys()).copied().collect();
    let empty = Vec::new();
    for f in frames {
        let g = gt.get(&f).unwrap_or(&empty);
        let h = hyp.get(&f).unwrap_or(&empty);
        c.gt_total += g.len() as u64;
        c.hyp_total += h.len() as u64;

        let mut g_used = alloc::vec![false; g.len()];
        let mut h_used = alloc::vec![false; h.len()];
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        for (gi, (gid, gb)) in g.iter().enumerate() {
            let Some(last) = hist.get(gid).and_then(|s| s.last_hyp) else { continue };
            if hyp_last_gt.get(&last) != Some(gid) {
                continue;
            }
            if let Some(hi) = h.iter().position(|(hid, _)| *hid == last) {
                let o = iou(gb, &h[hi].1);
                if o >= iou_thr && !h_used[hi] {
                    g_used[gi] = true;
                    h_used[hi] = true;
                    pairs.push((gi, hi, o));
                }
            }
        }

        let gr: Vec<usize> = (0..g.len()).filter(|i| !g_used[*i]).collect();
        let hr: Vec<usize> = (0..h.len()).filter(|i| !h_used[*i]).collect();
        if !gr.is_empty() && !hr.is_empty() {
            let mut w = Vec::with_capacity(gr.len() * hr.len());
            for &gi in &gr {
                for &hi in &hr {
                    let o = iou(&g[gi].1, &h[hi].1);
                    w.push(if o >= iou_thr { o } else { 0.0 });
                }
            }
            for (r, col) in max_weight_assignment(gr.len(), hr.len(), &w).into_iter().enumerate() {
                if let Some(k) = col {
                    let o = w[r * hr.len() + k];
                    if o > 0.0 {
                        pairs.push((gr[r], hr[k], o));
                    }
                }
            }
        }

        let mut matched_gt = alloc::vec![false; g.len()];
        for &(gi, hi, o) in &pairs {
            matched_gt[gi] = true;
            let gid = g[gi].0;
            let hid = h[hi].0;
            let s = hist.entry(gid).or_default();
            if s.last_hyp.is_some_and(|l| l != hid) {
                c.ids += 1;
            }
            if s.broken {
                c.frag += 1;
                s.broken = false;
            }
            s.last_hyp = Some(hid);
            s.was_matched = true;
            hyp_last_gt.insert(hid, gid);
            c.iou_sum += o;
        }
        for (gi, (gid, _)) in g.iter().enumerate() {
            let cov = c.coverage.entry(*gid).or_insert((0, 0));
            cov.1 += 1;
            if matched_gt[gi] {
                cov.0 += 1;
            } else {
                let s = hist.entry(*gid).or_default();
                if s.was_matched {
                    s.broken = true;
                }
                s.was_matched = false;
            }
        }
        c.matches += pairs.len() as u64;
        c.fn_ += (g.len() - pairs.len()) as u64;
        c.fp += (h.len() - pairs.len()) as u64;
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IdentityCounts {
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
}

impl IdentityCounts {
    pub fn idf1(&self) -> f64 {
        ratio(2 * self.idtp, 2 * self.idtp + self.idfp + self.idfn)
    }

    pub fn idp(&self) -> f64 {
        ratio(self.idtp, self.idtp + self.idfp)
    }

    pub fn idr(&self) -> f64 {
        ratio(self.idtp, self.idtp + self.idfn)
    }
}

fn ratio(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Count per `(gt id, hyp id)`.
pub type PairCounts = BTreeMap<(u64, u64), u64>;

/// Frames on which each `(gt id, hyp id)` pair overlaps by at least `iou_thr`,
/// plus the per-identity box totals of both sides.
pub fn identity_overlaps(gt: &Tracks, hyp: &Tracks, iou_thr: f64) -> (PairCounts, BTreeMap<u64, u64>, BTreeMap<u64, u64>) {
    let mut overlap = BTreeMap::new();
    let mut g_len = BTreeMap::new();
    let mut h_len = BTreeMap::new();
    for boxes in gt.values() {
        for (id, _) in boxes {
            *g_len.entry(*id).or_insert(0) += 1;
        }
    }
    for (f, boxes) in hyp {
        for (hid, hb) in boxes {
            *h_len.entry(*hid).or_insert(0) += 1;
            for (gid, gb) in gt.get(f).map_or(&[][..], Vec::as_slice) {
                if iou(gb, hb) >= iou_thr {
                    *overlap.entry((*gid, *hid)).or_insert(0) += 1;
                }
            }
        }
    }
    (overlap, g_len, h_len)
}

/// Identity-level counts under the one-to-one identity pairing that
/// maximizes identity true positives.
pub fn identity_metrics(gt: &Tracks, hyp: &Tracks, iou_thr: f64) -> Result<IdentityCounts> {
    check_thr(iou_thr)?;
    let (overlap, g_len, h_len) = identity_overlaps(gt, hyp, iou_thr);
    let g_ids: Vec<u64> = g_len.keys().copied().collect();
    let h_ids: Vec<u64> = h_len.keys().copied().collect();
    let mut w = Vec::with_capacity(g_ids.len() * h_ids.len());
    for g in &g_ids {
        for h in &h_ids {
            w.push(overlap.get(&(*g, *h)).copied().unwrap_or(0) as f64);
        }
    }
    let idtp: u64 = max_weight_assignment(g_ids.len(), h_ids.len(), &w)
        .into_iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| w[r * h_ids.len() + c] as u64))
        .sum();
    let g_total: u64 = g_len.values().sum();
    let h_total: u64 = h_len.values().sum();
    Ok(IdentityCounts { idtp, idfp: h_total - idtp, idfn: g_total - idtp })
}

/// Fractions of ground-truth trajectories mostly tracked (coverage >= 0.8)
/// and mostly lost (coverage <= 0.2).
pub fn coverage_stats(gt: &Tracks, hyp: &Tracks, iou_thr: f64) -> Result<(f64, f64)> {
    Ok(coverage_from(&clear_mot(gt, hyp, iou_thr)?))
}

fn coverage_from(c: &ClearCounts) -> (f64, f64) {
    if c.coverage.is_empty() {
        return (0.0, 0.0);
    }
    let n = c.coverage.len() as f64;
    // integer comparisons keep the 80% / 20% boundaries exact
    let mt = c.coverage.values().filter(|(m, t)| 5 * m >= 4 * t).count() as f64;
    let ml = c.coverage.values().filter(|(m, t)| 5 * m <= *t).count() as f64;
    (mt / n, ml / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mota: f64,
    pub motp: f64,
    pub idf1: f64,
    pub idp: f64,
    pub idr: f64,
    pub mt: f64,
    pub ml: f64,
    pub fp: u64,
    pub fn_: u64,
    pub ids: u64,
    pub frag: u64,
    pub gt_total: u64,
}

pub fn evaluate(gt: &Tracks, hyp: &Tracks, iou_thr: f64) -> Result<MetricsReport> {
    let c = clear_mot(gt, hyp, iou_thr)?;
    let id = identity_metrics(gt, hyp, iou_thr)?;
    let (mt, ml) = coverage_from(&c);
    Ok(MetricsReport {
        mota: c.mota(),
        motp: c.motp(),
        idf1: id.idf1(),
        idp: id.idp(),
        idr: id.idr(),
        mt,
        ml,
        fp: c.fp,
        fn_: c.fn_,
        ids: c.ids,
        frag: c.frag,
        gt_total: c.gt_total,
    })
}

impl MetricsReport {
    fn fields(&self) -> [(&'static str, String); 12] {
        let r = |v: f64| format!("{v:.3}");
        [
            ("MOTA", r(self.mota)),
            ("MOTP", r(self.motp)),
            ("IDF1", r(self.idf1)),
            ("IDP", r(self.idp)),
            ("IDR", r(self.idr)),
            ("MT", r(self.mt)),
            ("ML", r(self.ml)),
            ("FP", format!("{}", self.fp)),
            ("FN", format!("{}", self.fn_)),
            ("IDS", format!("{}", self.ids)),
            ("Frag", format!("{}", self.frag)),
            ("GT", format!("{}", self.gt_total)),
        ]
    }

    /// One `key=value` line per field.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Header row and value row, right-aligned.
    pub fn to_table(&self) -> String {
        let fields = self.fields();
        let mut head = String::new();
        let mut vals = String::new();
        for (k, v) in &fields {
            let w = k.len().max(v.len());
            let _ = write!(head, "{k:>w$} ");
            let _ = write!(vals, "{v:>w$} ");
        }
        format!("{}\n{}\n", head.trim_end(), vals.trim_end())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b(x: f64) -> BBox {
        BBox::new(x, 0.0, 10.0, 10.0).unwrap()
    }

    fn single(frames: core::ops::RangeInclusive<u32>, id: u64, x: f64) -> Tracks {
        frames.map(|f| (f, vec![(id, b(x))])).collect()
    }

    fn merge(mut a: Tracks, b: Tracks) -> Tracks {
        for (f, v) in b {
            a.entry(f).or_default().extend(v);
        }
        a
    }

    #[test]
    fn iou_example() {
        let a = BBox::new(1.0, 1.0, 2.0, 2.0).unwrap();
        assert!((iou(&a, &BBox::new(2.0, 1.0, 2.0, 2.0).unwrap()) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &a.translated(5.0, 0.0)), 0.0);
    }

    #[test]
    fn self_evaluation() {
        let gt = merge(single(1..=10, 1, 0.0), single(3..=8, 2, 50.0));
        let r = evaluate(&gt, &gt, 0.5).unwrap();
        assert_eq!((r.fp, r.fn_, r.ids, r.frag), (0, 0, 0, 0));
        assert_eq!((r.mota, r.motp, r.idf1, r.idp, r.idr, r.mt, r.ml), (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0));
        assert_eq!(r.gt_total, 16);
        assert!(evaluate(&gt, &gt, 1.0).is_err());
        assert!(evaluate(&gt, &gt, 0.0).is_err());
    }

    #[test]
    fn handover_is_one_switch_no_fragment() {
        let gt = single(1..=10, 1, 0.0);
        let hyp = merge(single(1..=5, 7, 0.0), single(6..=10, 8, 0.0));
        let c = clear_mot(&gt, &hyp, 0.5).unwrap();
        assert_eq!((c.ids, c.frag, c.fp, c.fn_), (1, 0, 0, 0));
        let id = identity_metrics(&gt, &hyp, 0.5).unwrap();
        assert_eq!((id.idtp, id.idfp, id.idfn), (5, 5, 5));
    }

    #[test]
    fn split_identity_idf1() {
        let gt = single(1..=10, 1, 0.0);
        let hyp = merge(single(1..=6, 7, 0.0), single(7..=10, 8, 0.0));
        let id = identity_metrics(&gt, &hyp, 0.5).unwrap();
        assert_eq!(id.idtp, 6);
        assert!((id.idf1() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn gap_then_same_id_is_a_fragment() {
        let gt = single(1..=10, 1, 0.0);
        let mut hyp = single(1..=10, 7, 0.0);
        hyp.remove(&4);
        hyp.remove(&5);
        let c = clear_mot(&gt, &hyp, 0.5).unwrap();
        assert_eq!((c.ids, c.frag, c.fn_), (0, 1, 2));
        // a gap that never resumes is not a fragment
        let tail = single(1..=6, 7, 0.0);
        assert_eq!(clear_mot(&gt, &tail, 0.5).unwrap().frag, 0);
    }

    #[test]
    fn mota_arithmetic() {
        // 20 GT boxes over two identities; 3 misses, 2 false positives, 1 switch
        let gt = merge(single(1..=10, 1, 0.0), single(1..=10, 2, 100.0));
        let mut hyp = merge(single(1..=10, 7, 0.0), merge(single(1..=4, 8, 100.0), single(8..=10, 9, 100.0)));
        hyp.entry(2).or_default().push((20, b(300.0)));
        hyp.entry(3).or_default().push((21, b(400.0)));
        let c = clear_mot(&gt, &hyp, 0.5).unwrap();
        assert_eq!((c.gt_total, c.fp, c.fn_, c.ids, c.frag), (20, 2, 3, 1, 1));
        assert!((c.mota() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn carry_over_beats_better_overlap() {
        // hyp 7 tracks gt 1; from frame 2 hyp 8 fits better but 7 still passes
        let gt = single(1..=3, 1, 0.0);
        let mut hyp = single(1..=3, 7, 2.0);
        for f in 2..=3 {
            hyp.get_mut(&f).unwrap().push((8, b(0.0)));
        }
        let c = clear_mot(&gt, &hyp, 0.5).unwrap();
        assert_eq!((c.ids, c.fp), (0, 2));
    }

    #[test]
    fn coverage_boundaries() {
        let gt = single(1..=10, 1, 0.0);
        let eight = single(1..=8, 7, 0.0);
        assert_eq!(coverage_stats(&gt, &eight, 0.5).unwrap(), (1.0, 0.0));
        let two = single(1..=2, 7, 0.0);
        assert_eq!(coverage_stats(&gt, &two, 0.5).unwrap(), (0.0, 1.0));
        assert_eq!(coverage_stats(&gt, &Tracks::new(), 0.5).unwrap(), (0.0, 1.0));
        let r = evaluate(&gt, &Tracks::new(), 0.5).unwrap();
        assert_eq!((r.idr, r.idf1, r.fn_), (0.0, 0.0, 10));
    }

    #[test]
    fn report_formats() {
        let gt = single(1..=3, 1, 0.0);
        let r = evaluate(&gt, &gt, 0.5).unwrap();
        let kv = r.to_key_values();
        assert!(kv.starts_with("MOTA=1.000\nMOTP=1.000\n"));
        assert_eq!(kv.lines().count(), 12);
        let table = r.to_table();
        assert_eq!(table.lines().count(), 2);
        assert!(table.lines().next().unwrap().split_whitespace().eq(["MOTA", "MOTP", "IDF1", "IDP", "IDR", "MT", "ML", "FP", "FN", "IDS", "Frag", "GT"]));
    }

    fn random_tracks(rng: &mut ChaCha8Rng, ids: u64, frames: u32, id_base: u64) -> Tracks {
        let mut t = Tracks::new();
        for id in 0..ids {
            let x0 = rng.random_range(0.0..60.0);
            let start = rng.random_range(1..=frames);
            let end = rng.random_range(start..=frames);
            for f in start..=end {
                if rng.random_bool(0.85) {
                    let x = x0 + rng.random_range(-4.0..4.0);
                    t.entry(f).or_default().push((id + id_base, b(x)));
                }
            }
        }
        t
    }

    /// Best identity pairing by exhaustive search.
    fn brute_idtp(overlap: &BTreeMap<(u64, u64), u64>, g: &[u64], h: &[u64]) -> u64 {
        fn rec(i: usize, g: &[u64], h: &[u64], used: &mut Vec<bool>, ov: &BTreeMap<(u64, u64), u64>) -> u64 {
            if i == g.len() {
                return 0;
            }
            let mut best = rec(i + 1, g, h, used, ov);
            for j in 0..h.len() {
                if !used[j] {
                    used[j] = true;
                    let v = ov.get(&(g[i], h[j])).copied().unwrap_or(0) + rec(i + 1, g, h, used, ov);
                    best = best.max(v);
                    used[j] = false;
                }
            }
            best
        }
        rec(0, g, h, &mut vec![false; h.len()], overlap)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn counts_balance(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = random_tracks(&mut rng, 4, 12, 1);
            let hyp = random_tracks(&mut rng, 5, 12, 100);
            let c = clear_mot(&gt, &hyp, 0.5).unwrap();
            prop_assert_eq!(c.fp + c.matches, c.hyp_total);
            prop_assert_eq!(c.fn_ + c.matches, c.gt_total);
            let r = evaluate(&gt, &hyp, 0.5).unwrap();
            prop_assert!(r.mota <= 1.0);
            for v in [r.motp, r.idf1, r.idp, r.idr, r.mt, r.ml] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let own = evaluate(&gt, &gt, 0.5).unwrap();
            prop_assert_eq!((own.fp, own.fn_, own.ids, own.frag), (0, 0, 0, 0));
            prop_assert_eq!(own.mota, 1.0);
            if own.gt_total > 0 {
                prop_assert_eq!(own.idf1, 1.0);
            }
        }

        #[test]
        fn identity_matches_exhaustive(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (ng, nh) = (rng.random_range(1..=6), rng.random_range(1..=6));
            let gt = random_tracks(&mut rng, ng, 10, 1);
            let hyp = random_tracks(&mut rng, nh, 10, 100);
            let (ov, gl, hl) = identity_overlaps(&gt, &hyp, 0.5);
            let g: Vec<u64> = gl.keys().copied().collect();
            let h: Vec<u64> = hl.keys().copied().collect();
            prop_assert_eq!(identity_metrics(&gt, &hyp, 0.5).unwrap().idtp, brute_idtp(&ov, &g, &h));
        }
    }
}
