//! Deterministic synthetic sequences: trajectories, noisy detections, features.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};

use crate::appearance::{identity_base, noisy_unit, random_unit_feature, FeatureTable};
use crate::error::{invalid, validation, Result};
use crate::geometry::{BBox, Detection};
use crate::metrics::Tracks;
use crate::numeric;
use crate::pair::SequenceMeta;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub name: String,
    pub identities: usize,
    pub frame_rate: f64,
    pub length: u32,
    pub width: f64,
    pub height: f64,
    /// Speed range in pixels per frame.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Per-frame probability of a heading change.
    pub direction_change: f64,
    /// Staggered entries and exits; otherwise everyone is present throughout.
    pub entry_exit: bool,
    /// Chance that a close encounter becomes an occlusion.
    pub occlusion_prob: f64,
    pub occlusion_duration: u32,
    pub miss_rate: f64,
    /// Expected false positives per present identity per frame.
    pub fp_rate: f64,
    /// Box jitter standard deviation in pixels.
    pub jitter: f64,
    pub feature_noise: f64,
    pub feature_dim: usize,
    /// Share of appearance common to identity pairs (2k-1, 2k); 0 keeps
    /// identities independent.
    pub appearance_overlap: f64,
    /// Norm of an appearance shift shared by every detection of a frame.
    pub frame_drift: f64,
    /// Probability that a true detection's crop is degraded: its identity
    /// signal is diluted and a common quality direction is added.
    pub degraded_rate: f64,
    /// Weight of overlapping neighbours' appearance mixed into a crop, per
    /// unit of the crop covered by the neighbour.
    pub crop_contamination: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            name: "synth".into(),
            identities: 20,
            frame_rate: 30.0,
            length: 600,
            width: 1280.0,
            height: 720.0,
            speed_min: 0.5,
            speed_max: 3.0,
            direction_change: 0.01,
            entry_exit: true,
            occlusion_prob: 0.0,
            occlusion_duration: 10,
            miss_rate: 0.0,
            fp_rate: 0.0,
            jitter: 0.0,
            feature_noise: 0.0,
            feature_dim: 64,
            appearance_overlap: 0.0,
            frame_drift: 0.0,
            degraded_rate: 0.0,
            crop_contamination: 0.0,
            seed: 0,
        }
    }
}

fn parse<T: core::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| invalid(format!("bad value for {key}: {value:?}")))
}

impl SynthConfig {
    /// The noisy setting used for ablation comparisons.
    pub fn noisy(seed: u64) -> Self {
        SynthConfig {
            miss_rate: 0.1,
            fp_rate: 0.05,
            jitter: 2.0,
            feature_noise: 0.3,
            occlusion_prob: 0.3,
            seed,
            ..Default::default()
        }
    }

    /// Sets one field from its textual key and value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "name" => self.name = value.trim().into(),
            "identities" => self.identities = parse(key, value)?,
            "frame_rate" => self.frame_rate = parse(key, value)?,
            "length" => self.length = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "height" => self.height = parse(key, value)?,
            "speed_min" => self.speed_min = parse(key, value)?,
            "speed_max" => self.speed_max = parse(key, value)?,
            "direction_change" => self.direction_change = parse(key, value)?,
            "entry_exit" => self.entry_exit = parse(key, value)?,
            "occlusion_prob" => self.occlusion_prob = parse(key, value)?,
            "occlusion_duration" => self.occlusion_duration = parse(key, value)?,
            "miss_rate" => self.miss_rate = parse(key, value)?,
            "fp_rate" => self.fp_rate = parse(key, value)?,
            "jitter" => self.jitter = parse(key, value)?,
            "feature_noise" => self.feature_noise = parse(key, value)?,
            "feature_dim" => self.feature_dim = parse(key, value)?,
            "appearance_overlap" => self.appearance_overlap = parse(key, value)?,
            "frame_drift" => self.frame_drift = parse(key, value)?,
            "degraded_rate" => self.degraded_rate = parse(key, value)?,
            "crop_contamination" => self.crop_contamination = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.identities == 0 {
            return Err(validation("synthetic sequence needs at least one identity"));
        }
        if self.length == 0 || self.frame_rate.is_nan() || self.frame_rate < 1.0 {
            return Err(validation("length and frame rate must be >= 1"));
        }
        if !(self.width > 0.0 && self.height > 0.0) || self.feature_dim == 0 {
            return Err(validation("image size and feature dim must be positive"));
        }
        if !(0.0 <= self.speed_min && self.speed_min <= self.speed_max && self.speed_max.is_finite()) {
            return Err(validation("speed range must satisfy 0 <= min <= max"));
        }
        for (k, v) in [
            ("direction_change", self.direction_change),
            ("occlusion_prob", self.occlusion_prob),
            ("miss_rate", self.miss_rate),
            ("fp_rate", self.fp_rate),
            ("degraded_rate", self.degraded_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(validation(format!("{k} must lie in [0, 1], got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.appearance_overlap) {
            return Err(validation("appearance_overlap must lie in [0, 1)"));
        }
        if ![self.jitter, self.feature_noise, self.frame_drift, self.crop_contamination].iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return Err(validation("jitter, feature noise, frame drift and contamination must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub meta: SequenceMeta,
    pub gt: Tracks,
    /// Detections of every frame that has any, in frame order.
    pub detections: Vec<(u32, Vec<Detection>)>,
    /// Source identity of each detection; `None` for false positives.
    pub truth: BTreeMap<(u32, usize), Option<u64>>,
    pub features: FeatureTable,
}

struct Walker {
    id: u64,
    start: u32,
    end: u32,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    vx: f64,
    vy: f64,
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn key(a: u64, b: u64, c: u64) -> u64 {
    a.wrapping_mul(0x100_0000_01B3) ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ c.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

fn walkers(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Walker> {
    (1..=cfg.identities as u64)
        .map(|id| {
            let (start, end) = if cfg.entry_exit && cfg.length > 1 {
                let min_len = (cfg.length / 3).max(1);
                let start = rng.random_range(1..=cfg.length - min_len + 1);
                let end = rng.random_range(start + min_len - 1..=cfg.length);
                (start, end)
            } else {
                (1, cfg.length)
            };
            let w = rng.random_range(0.03..0.06) * cfg.width.min(cfg.height * 16.0 / 9.0);
            let h = w * rng.random_range(2.0..3.0);
            let speed = rng.random_range(cfg.speed_min..=cfg.speed_max);
            let angle = rng.random_range(0.0..2.0 * PI);
            Walker {
                id,
                start,
                end,
                x: rng.random_range(0.1..0.9) * cfg.width,
                y: rng.random_range(0.2..0.8) * cfg.height,
                w,
                h,
                vx: speed * libm::cos(angle),
                vy: speed * libm::sin(angle),
            }
        })
        .collect()
}

fn bounce(pos: &mut f64, vel: &mut f64, extent: f64) {
    let (lo, hi) = (-0.25 * extent, 1.25 * extent);
    if *pos < lo {
        *pos = 2.0 * lo - *pos;
        *vel = -*vel;
    } else if *pos > hi {
        *pos = 2.0 * hi - *pos;
        *vel = -*vel;
    }
    *pos = pos.clamp(lo, hi);
}

/// Share of `a`'s area covered by `b`.
fn covered_fraction(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x + a.w / 2.0).min(b.x + b.w / 2.0) - (a.x - a.w / 2.0).max(b.x - b.w / 2.0);
    let h = (a.y + a.h / 2.0).min(b.y + b.h / 2.0) - (a.y - a.h / 2.0).max(b.y - b.h / 2.0);
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h / a.area()
    }
}

/// Generates a full sequence from `cfg`; identical configs give identical output.
pub fn generate(cfg: &SynthConfig) -> Result<SynthSequence> {
    cfg.validate()?;
    let meta = SequenceMeta::new(&cfg.name, cfg.width, cfg.height, cfg.frame_rate, cfg.length)?;
    let mut motion = seeded(cfg.seed, 1);
    let mut detect = seeded(cfg.seed, 2);
    let mut walkers = walkers(cfg, &mut motion);
    let jitter = Normal::new(0.0, cfg.jitter).map_err(|e| invalid(format!("jitter: {e}")))?;

    let bases: Vec<Vec<f64>> = walkers
        .iter()
        .map(|wk| {
            let own = identity_base(wk.id, cfg.seed, cfg.feature_dim);
            if cfg.appearance_overlap == 0.0 {
                return own;
            }
            let group = identity_base(u64::MAX - wk.id.div_ceil(2), cfg.seed, cfg.feature_dim);
            let (a, b) = (libm::sqrt(cfg.appearance_overlap), libm::sqrt(1.0 - cfg.appearance_overlap));
            own.iter().zip(&group).map(|(o, g)| b * o + a * g).collect()
        })
        .collect();

    let quality = random_unit_feature(key(cfg.seed, u64::MAX, 0x9A11), cfg.feature_dim);

    let mut gt = Tracks::new();
    let mut detections = Vec::new();
    let mut truth = BTreeMap::new();
    let mut features = FeatureTable::new(cfg.feature_dim)?;
    let mut occluded_until: Vec<u32> = alloc::vec![0; walkers.len()];
    let mut in_contact: BTreeMap<(usize, usize), bool> = BTreeMap::new();

    for f in 1..=cfg.length {
        let present: Vec<usize> = (0..walkers.len()).filter(|&i| walkers[i].start <= f && f <= walkers[i].end).collect();
        for &i in &present {
            let wk = &mut walkers[i];
            if f > wk.start {
                if motion.random_bool(cfg.direction_change) {
                    let turn = motion.random_range(-PI / 2.0..PI / 2.0);
                    let (c, s) = (libm::cos(turn), libm::sin(turn));
                    let (vx, vy) = (wk.vx * c - wk.vy * s, wk.vx * s + wk.vy * c);
                    wk.vx = vx;
                    wk.vy = vy;
                }
                wk.x += wk.vx;
                wk.y += wk.vy;
                bounce(&mut wk.x, &mut wk.vx, cfg.width);
                bounce(&mut wk.y, &mut wk.vy, cfg.height);
            }
        }

        // an encounter starts when two centers come within half a box width
        for (a, &i) in present.iter().enumerate() {
            for &j in &present[a + 1..] {
                let (wi, wj) = (&walkers[i], &walkers[j]);
                let close = libm::hypot(wi.x - wj.x, wi.y - wj.y) < 0.5 * wi.w.max(wj.w);
                let was = in_contact.insert((i, j), close).unwrap_or(false);
                if close && !was && motion.random_bool(cfg.occlusion_prob) {
                    // the smaller box is farther from the camera
                    let hidden = if wi.h < wj.h { i } else { j };
                    occluded_until[hidden] = occluded_until[hidden].max(f + cfg.occlusion_duration.saturating_sub(1));
                }
            }
        }

        let mut frame_dets: Vec<(Detection, Option<u64>)> = Vec::new();
        for &i in &present {
            let wk = &walkers[i];
            let bbox = BBox::new(wk.x, wk.y, wk.w, wk.h)?;
            gt.entry(f).or_default().push((wk.id, bbox));
            if occluded_until[i] >= f || detect.random_bool(cfg.miss_rate) {
                continue;
            }
            let noisy = if cfg.jitter > 0.0 {
                BBox::new(
                    wk.x + jitter.sample(&mut detect),
                    wk.y + jitter.sample(&mut detect),
                    (wk.w + jitter.sample(&mut detect)).max(2.0),
                    (wk.h + jitter.sample(&mut detect)).max(2.0),
                )?
            } else {
                bbox
            };
            let conf = detect.random_range(0.5..=1.0);
            frame_dets.push((Detection::new(noisy, conf), Some(wk.id)));
        }
        let n_fp = if cfg.fp_rate > 0.0 && !present.is_empty() {
            Binomial::new(present.len() as u64, cfg.fp_rate)
                .map_err(|e| invalid(format!("fp rate: {e}")))?
                .sample(&mut detect)
        } else {
            0
        };
        for _ in 0..n_fp {
            let w = detect.random_range(0.03..0.06) * cfg.width.min(cfg.height * 16.0 / 9.0);
            let h = w * detect.random_range(2.0..3.0);
            let bbox = BBox::new(detect.random_range(0.0..cfg.width), detect.random_range(0.0..cfg.height), w, h)?;
            let conf = detect.random_range(0.5..=1.0);
            frame_dets.push((Detection::new(bbox, conf), None));
        }
        frame_dets.shuffle(&mut detect);

        if frame_dets.is_empty() {
            continue;
        }
        let drift: Vec<f64> = random_unit_feature(key(cfg.seed, f as u64, u64::MAX), cfg.feature_dim)
            .into_iter()
            .map(|v| v * cfg.frame_drift)
            .collect();
        let mut dets = Vec::with_capacity(frame_dets.len());
        for (idx, (d, who)) in frame_dets.into_iter().enumerate() {
            let noise_seed = key(cfg.seed, f as u64, idx as u64);
            let feat = match who {
                Some(id) => {
                    let mut shifted: Vec<f64> = bases[(id - 1) as usize].iter().zip(&drift).map(|(b, g)| b + g).collect();
                    if cfg.crop_contamination > 0.0 {
                        let own = gt[&f].iter().find(|(g, _)| *g == id).map(|(_, b)| *b).unwrap_or(d.bbox);
                        for (other, ob) in &gt[&f] {
                            let c = cfg.crop_contamination * covered_fraction(&own, ob);
                            if *other != id && c > 0.0 {
                                numeric::axpy(&mut shifted, c, &bases[(*other - 1) as usize]);
                            }
                        }
                    }
                    let clean = noisy_unit(shifted, cfg.feature_noise, noise_seed)?;
                    if cfg.degraded_rate > 0.0 && detect.random_bool(cfg.degraded_rate) {
                        let clutter = random_unit_feature(noise_seed ^ 0xC1A7, cfg.feature_dim);
                        let mixed = (0..cfg.feature_dim)
                            .map(|k| 0.4 * clean[k] + 0.6 * clutter[k] + 0.6 * quality[k])
                            .collect();
                        noisy_unit(mixed, 0.0, 0)?
                    } else {
                        clean
                    }
                }
                None => {
                    let r = random_unit_feature(noise_seed ^ 0xFA15E, cfg.feature_dim);
                    noisy_unit(r.iter().zip(&drift).map(|(a, g)| a + g).collect(), 0.0, 0)?
                }
            };
            debug_assert!((numeric::norm(&feat) - 1.0).abs() < 1e-9);
            features.insert(f, idx, feat)?;
            truth.insert((f, idx), who);
            dets.push(d);
        }
        detections.push((f, dets));
    }
    Ok(SynthSequence { meta, gt, detections, truth, features })
}
