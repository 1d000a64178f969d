mod common;

use std::collections::{HashMap, HashSet};

use firecl::balance::{pseudo_balance_detailed, BalanceConfig};
use proptest::prelude::*;

fn labels_strategy() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(prop::bool::weighted(0.3).prop_map(u8::from), 4..80)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_negative_obeys_the_bin_rule(labels in labels_strategy(), seed in 0u64..10_000, n_bins in 1usize..12, k in 1usize..4) {
        prop_assume!(labels.iter().any(|&y| y == 0));
        let set = common::random_patch_set(seed, &labels, 1, 2, 1);
        let cfg = BalanceConfig { proxy_feature_index: 1, n_bins, neg_per_pos: k, seed };
        let out = pseudo_balance_detailed(&set, &cfg).unwrap();
        let bins = common::oracle_bins(&set, 1, n_bins);
        let neg_ids: HashSet<u64> = set.patches.iter().filter(|p| p.label == 0).map(|p| p.id).collect();
        let mut neg_count = vec![0usize; n_bins];
        for id in &neg_ids { neg_count[bins[id]] += 1; }

        let n_pos = labels.iter().filter(|&&y| y == 1).count();
        let mut per_positive: HashMap<u64, Vec<u64>> = HashMap::new();
        for pair in &out.pairs {
            prop_assert!(neg_ids.contains(&pair.negative_source_id));
            let pb = bins[&pair.positive_id];
            let nb = bins[&pair.negative_source_id];
            prop_assert_eq!(pb, pair.positive_bin);
            prop_assert_eq!(nb, pair.negative_bin);
            if neg_count[pb] > 0 {
                prop_assert_eq!(nb, pb);
            } else {
                // exhaustive scan over all non-empty bins
                let best = (0..n_bins).filter(|&b| neg_count[b] > 0).map(|b| b.abs_diff(pb)).min().unwrap();
                prop_assert_eq!(nb.abs_diff(pb), best);
            }
            per_positive.entry(pair.positive_id).or_default().push(pair.negative_source_id);
        }
        // no repeats within one positive's draws
        for draws in per_positive.values() {
            let uniq: HashSet<_> = draws.iter().collect();
            prop_assert_eq!(uniq.len(), draws.len());
        }
        // ratio holds whenever every chosen bin had enough negatives
        let supply_ok = out.pairs.iter().all(|p| neg_count[p.negative_bin] >= k);
        let out_pos = out.set.patches.iter().filter(|p| p.label == 1).count();
        let out_neg = out.set.len() - out_pos;
        prop_assert_eq!(out_pos, n_pos);
        if supply_ok {
            prop_assert_eq!(out_neg, k * n_pos);
        }
        prop_assert!(out.set.has_unique_ids());
    }
}

#[test]
fn ratio_exact_with_ample_supply() {
    let mut labels = vec![1u8; 10];
    labels.extend(vec![0u8; 200]);
    let set = common::random_patch_set(3, &labels, 1, 1, 1);
    let cfg = BalanceConfig {
        n_bins: 1,
        neg_per_pos: 3,
        ..Default::default()
    };
    let out = pseudo_balance_detailed(&set, &cfg).unwrap();
    assert_eq!(out.set.len(), 40);
    assert_eq!(out.set.n_positive(), 10);
}
