//! Evaluator checks against a brute-force reference that re-matches every
//! score cut from scratch and interpolates precision directly.

use iafa_core::evaluation::{
    ap_11, ap_40, evaluate_frames, Criterion, Difficulty, DifficultyFilter, FrameData, GtBox, Metric, PrCurve,
    ScoredBox, IOU_THRESHOLD,
};
use iafa_core::geometry::Box3D;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod oracles;
use oracles::{random_frames, reference_ap, reference_counts};

fn filters() -> Vec<DifficultyFilter> {
    let mut out: Vec<DifficultyFilter> = Difficulty::ALL.iter().map(|d| d.filter()).collect();
    out.push(DifficultyFilter::all());
    out
}

#[test]
fn matcher_equals_reference_at_every_cut() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let frames = random_frames(&mut rng, 5, 10, 40);
    for metric in [Metric::Box3d, Metric::Bev] {
        for filter in filters() {
            let curve = evaluate_frames(&frames, metric, IOU_THRESHOLD, &filter);
            if filter == DifficultyFilter::all() {
                assert!(curve.tp.last().copied().unwrap_or(0) > 0, "fixture should produce true positives");
            }
            for (k, &cut) in curve.thresholds.iter().enumerate() {
                let r = reference_counts(&frames, metric, &filter, cut);
                assert_eq!((curve.tp[k], curve.fp[k], curve.num_gt - curve.tp[k]), (r.tp, r.fp, r.fn_), "cut {cut}");
            }
        }
    }
}

#[test]
fn ap_equals_reference_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    let mut nonzero = 0;
    for trial in 0..100 {
        let (nf, ng, nd) = (rng.gen_range(1..4), rng.gen_range(0..8), rng.gen_range(0..20));
        let frames = random_frames(&mut rng, nf, ng, nd);
        let metric = if trial % 2 == 0 { Metric::Box3d } else { Metric::Bev };
        for filter in filters() {
            let curve = evaluate_frames(&frames, metric, IOU_THRESHOLD, &filter);
            for criterion in [Criterion::Points11, Criterion::Points40] {
                let ap = criterion.ap(&curve);
                nonzero += usize::from(ap > 0.0);
                worst = worst.max((ap - reference_ap(&frames, metric, &filter, criterion)).abs());
            }
        }
    }
    assert!(worst <= 1e-9, "worst AP disagreement {worst:e}");
    assert!(nonzero > 200, "only {nonzero} of 800 evaluations had a positive AP");
}

#[test]
fn adding_a_top_scored_true_positive_never_lowers_ap() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let mut frames = random_frames(&mut rng, 2, 6, 10);
        let filter = DifficultyFilter::all();
        // far from every random box, so no other detection can reach it
        let extra = Box3D::new([100.0, 1.65, 200.0], [3.9, 1.6, 1.5], rng.gen_range(-3.0..3.0)).unwrap();
        frames[0].gts.push(GtBox { box3d: extra, bbox: [0.0, 0.0, 10.0, 50.0], occlusion: 0, truncation: 0.0 });
        let after_gt = evaluate_frames(&frames, Metric::Box3d, IOU_THRESHOLD, &filter);
        frames[0].dets.push(ScoredBox { box3d: extra, bbox: [0.0, 0.0, 10.0, 50.0], score: 2.0 });
        let after = evaluate_frames(&frames, Metric::Box3d, IOU_THRESHOLD, &filter);
        for ap in [ap_11, ap_40] {
            assert!(ap(&after) >= ap(&after_gt) - 1e-12);
        }
    }
}

#[test]
fn criteria_agree_on_long_curves() {
    // soft property: logged, not bounded
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let frames = random_frames(&mut rng, 10, 20, 40);
        let curve = evaluate_frames(&frames, Metric::Bev, IOU_THRESHOLD, &DifficultyFilter::all());
        if curve.thresholds.len() >= 200 {
            worst = worst.max((ap_11(&curve) - ap_40(&curve)).abs());
        }
    }
    println!("largest |AP11 - AP40| over long curves: {worst:.4}");
}

fn curve_with_scores(frames: &[FrameData], map: impl Fn(f64) -> f64) -> PrCurve {
    let mapped: Vec<FrameData> = frames
        .iter()
        .map(|f| FrameData {
            dets: f.dets.iter().map(|d| ScoredBox { score: map(d.score), ..*d }).collect(),
            ..f.clone()
        })
        .collect();
    evaluate_frames(&mapped, Metric::Box3d, IOU_THRESHOLD, &Difficulty::Moderate.filter())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn increasing_score_maps_leave_ap_unchanged(seed in 0u64..10_000, kind in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = random_frames(&mut rng, 2, 5, 12);
        let base = curve_with_scores(&frames, |s| s);
        let mapped = match kind {
            0 => curve_with_scores(&frames, |s| 3.0 * s - 7.0),
            1 => curve_with_scores(&frames, |s| s.exp()),
            _ => curve_with_scores(&frames, |s| 1.0 / (1.0 + (-10.0 * s).exp())),
        };
        prop_assert_eq!(ap_11(&base), ap_11(&mapped));
        prop_assert_eq!(ap_40(&base), ap_40(&mapped));
        prop_assert_eq!(&base.tp, &mapped.tp);
    }
}
