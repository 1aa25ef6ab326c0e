use std::collections::BTreeSet;

use proptest::prelude::*;

use strn_core::association::{optimal_matching, solve, ScoreMatrix};
use strn_core::geometry::BBox;
use strn_core::metrics::{clear_mot, evaluate, identity_metrics};
use strn_core::model::{init_params, Ablation, ModelDims, StrnModel};
use strn_core::relation::{spatial_attention, RelationParams, SceneObject};
use strn_core::synth::{generate, SynthConfig};
use strn_core::tracker::{run_sequence, TrackerConfig};

fn best_total(rows: usize, cols: usize, w: &[f64], r: usize, used: &mut [bool]) -> f64 {
    if r == rows {
        return 0.0;
    }
    let mut best = best_total(rows, cols, w, r + 1, used);
    for c in 0..cols {
        if !used[c] {
            used[c] = true;
            best = best.max(w[r * cols + c] + best_total(rows, cols, w, r + 1, used));
            used[c] = false;
        }
    }
    best
}

fn matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..=6, 1usize..=6).prop_flat_map(|(r, c)| (Just(r), Just(c), proptest::collection::vec(0.0..1.0f64, r * c)))
}

proptest! {
    #[test]
    fn assignment_reaches_brute_force_total((rows, cols, w) in matrix(), theta in 0.0..1.0f64) {
        let m = ScoreMatrix::from_scores((1..=rows as u64).collect(), vec![1; rows], cols, w.clone()).unwrap();
        let pairs = optimal_matching(&m).unwrap();
        let total: f64 = pairs.iter().map(|(r, c)| w[r * cols + c]).sum();
        prop_assert!((total - best_total(rows, cols, &w, 0, &mut vec![false; cols])).abs() < 1e-12);

        let res = solve(&m, theta).unwrap();
        prop_assert!(res.matches.iter().all(|x| x.score >= theta));
        let rows_used: BTreeSet<u64> = res.matches.iter().map(|x| x.tracklet_id).collect();
        let cols_used: BTreeSet<usize> = res.matches.iter().map(|x| x.detection).collect();
        prop_assert_eq!(rows_used.len(), res.matches.len());
        prop_assert_eq!(cols_used.len(), res.matches.len());
    }

    #[test]
    fn attention_rows_are_distributions(seed in 0u64..500, n in 1usize..12) {
        let dims = ModelDims { app: 8, heads: 2, key: 4, hidden: 4 };
        let store = init_params(&dims, seed).unwrap();
        let params = RelationParams::from_store(&store).unwrap();
        let objects: Vec<SceneObject> = (0..n)
            .map(|i| SceneObject {
                appearance: (0..8).map(|k| ((seed as f64 + 1.0) * (i * 8 + k + 1) as f64).sin()).collect(),
                bbox: BBox::new(40.0 * i as f64 + 10.0, 100.0 + (seed % 7) as f64 * i as f64, 20.0, 50.0).unwrap(),
            })
            .collect();
        let out = spatial_attention(&objects, &params).unwrap();
        prop_assert_eq!(out.features.len(), n);
        for a in &out.attention {
            for r in 0..a.rows() {
                prop_assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(a.row(r).iter().all(|x| *x >= 0.0));
            }
        }
        for r in 0..out.gates.rows() {
            prop_assert!(out.gates.row(r).iter().all(|g| *g >= 0.0));
        }
    }

    #[test]
    fn ground_truth_scores_perfectly_against_itself(seed in 0u64..1000) {
        let seq = generate(&SynthConfig { identities: 6, length: 60, seed, ..SynthConfig::noisy(seed) }).unwrap();
        let c = clear_mot(&seq.gt, &seq.gt, 0.5).unwrap();
        prop_assert_eq!((c.fp, c.fn_, c.ids, c.frag), (0, 0, 0, 0));
        prop_assert_eq!(identity_metrics(&seq.gt, &seq.gt, 0.5).unwrap().idf1(), 1.0);
    }
}

#[test]
fn tracker_output_is_well_formed_and_repeatable() {
    let seq = generate(&SynthConfig { identities: 8, length: 120, ..SynthConfig::noisy(4) }).unwrap();
    let model = StrnModel::init(&ModelDims { app: 64, heads: 4, key: 16, hidden: 16 }, Ablation::ALST, 3).unwrap();
    let run = || run_sequence(&seq.detections, &seq.features, &model, &seq.meta, &TrackerConfig::default()).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.boxes, b.boxes);
    let mut seen = BTreeSet::new();
    for tb in &a.boxes {
        assert!(seen.insert((tb.frame, tb.id)), "id {} twice in frame {}", tb.id, tb.frame);
    }
    let report = evaluate(&seq.gt, &strn_core::metrics::tracks_from_boxes(&a.boxes), 0.5).unwrap();
    assert!(report.mota <= 1.0 && report.idf1 <= 1.0);
}
