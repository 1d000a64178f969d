mod common;

use firecl::cube::{extract_patches, PatchMode};
use firecl::diagnostics::{
    auroc, confusion_metrics, feature_diff_report, latent_distance_report, latent_distances, FeatureDiffConfig,
};
use firecl::samplers::{SamplerMaps, Strategy};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn auroc_equals_pair_counting(
        data in prop::collection::vec((0u8..6, 0u8..2), 1..=50)
    ) {
        // coarse scores force plenty of ties
        let scores: Vec<f64> = data.iter().map(|&(s, _)| s as f64 / 5.0).collect();
        let labels: Vec<u8> = data.iter().map(|&(_, y)| y).collect();
        let got = auroc(&scores, &labels).unwrap();
        match common::auroc_pairs(&scores, &labels) {
            Some(v) => prop_assert!((got.unwrap() - v).abs() < 1e-12),
            None => prop_assert!(got.is_none()),
        }
    }

    #[test]
    fn f1_consistent_with_counts(preds in prop::collection::vec(0u8..2, 1..60), seed in 0u64..1000) {
        let labels: Vec<u8> = preds.iter().enumerate().map(|(k, &p)| if (seed >> (k % 60)) & 1 == 1 { 1 - p } else { p }).collect();
        let r = confusion_metrics(&preds, &labels).unwrap();
        for c in &r.per_class {
            if let (Some(p), Some(rc), Some(f1)) = (c.precision, c.recall, c.f1) {
                if p + rc > 0.0 {
                    prop_assert!((f1 - 2.0 * p * rc / (p + rc)).abs() < 1e-12);
                }
                let direct = 2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64;
                prop_assert!((f1 - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn latent_report_matches_double_loop(seed in 0u64..100_000) {
        let mut r = common::rng(seed);
        let z: Vec<Vec<f64>> = (0..40).map(|_| common::randn_vec(&mut r, 8, 1.0)).collect();
        let labels: Vec<u8> = (0..40).map(|k| u8::from(k % 3 == 0)).collect();
        let rep = latent_distances(&z, &labels).unwrap();
        let (intra, inter) = common::naive_latent(&z, &labels);
        prop_assert!((rep.intra - intra).abs() < 1e-10);
        prop_assert!((rep.inter - inter).abs() < 1e-10);
    }

    #[test]
    fn latent_report_ignores_uniform_rescaling(seed in 0u64..100_000, c in 0.001f64..1000.0) {
        let mut r = common::rng(seed);
        let z: Vec<Vec<f64>> = (0..20).map(|_| common::randn_vec(&mut r, 5, 1.0)).collect();
        let labels: Vec<u8> = (0..20).map(|k| u8::from(k % 2 == 0)).collect();
        let scaled: Vec<Vec<f64>> = z.iter().map(|v| v.iter().map(|x| x * c).collect()).collect();
        let a = latent_distance_report(&z, &labels, Some(6), &mut common::rng(seed)).unwrap();
        let b = latent_distance_report(&scaled, &labels, Some(6), &mut common::rng(seed)).unwrap();
        prop_assert!((a.intra - b.intra).abs() < 1e-12);
        prop_assert!((a.inter - b.inter).abs() < 1e-12);
    }
}

#[test]
fn confusion_hand_cases() {
    // tp=2 fp=1 fn=1 tn=2 for class 1
    let r = confusion_metrics(&[1, 1, 1, 0, 0, 0], &[1, 1, 0, 1, 0, 0]).unwrap();
    let c1 = &r.per_class[1];
    assert_eq!((c1.tp, c1.fp, c1.fn_, c1.tn), (2, 1, 1, 2));
    assert!((c1.precision.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((c1.iou.unwrap() - 0.5).abs() < 1e-12);
    // no predicted positives: precision undefined, recall 0
    let r = confusion_metrics(&[0, 0, 0], &[1, 0, 0]).unwrap();
    assert_eq!(r.per_class[1].precision, None);
    assert_eq!(r.per_class[1].recall, Some(0.0));
    // no positives at all: recall undefined
    let r = confusion_metrics(&[0, 0], &[0, 0]).unwrap();
    assert_eq!(r.per_class[1].recall, None);
    assert_eq!(r.per_class[1].f1, None);
}

#[test]
fn historical_pairs_under_static_dynamics_have_zero_ap() {
    // dynamics constant in time, so a cell's own history is identical
    let mut cube = common::random_cube(5, 8, 4, 4, 2, 1, 0.0);
    for t in 1..cube.t_len {
        for f in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    let v = cube.dyn_at(0, f, i, j);
                    let k = cube.dyn_index(t, f, i, j);
                    cube.dyn_data[k] = v;
                }
            }
        }
    }
    for t in [3, 5, 7] {
        cube.set_fire(t, 1, 1, 1);
        cube.set_fire(t, 2, 2, 1);
    }
    let set = extract_patches(&cube, PatchMode::SlidingCenter, 1, 1, 2).unwrap();
    let maps = SamplerMaps::build(&set, Strategy::Historical).unwrap();
    let rep = feature_diff_report(&set, &cube.dyn_names, &maps, Strategy::Historical, &FeatureDiffConfig::default()).unwrap();
    assert!(rep.n_anchors > 0);
    for row in &rep.rows {
        assert_eq!(row.ap_mean, 0.0);
    }
}
