//! Pseudo-balancing: every positive patch is matched with negatives drawn
//! from the same bin of a proxy static feature.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cube::{Patch, PatchGeometry, PatchSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceConfig {
    /// Index of the static feature used as similarity proxy.
    pub proxy_feature_index: usize,
    pub n_bins: usize,
    pub neg_per_pos: usize,
    pub seed: u64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            proxy_feature_index: 0,
            n_bins: 10,
            neg_per_pos: 1,
            seed: 0,
        }
    }
}

impl BalanceConfig {
    pub fn validate(&self, geometry: &PatchGeometry) -> Result<()> {
        if self.n_bins == 0 {
            return Err(Error::Config("balance.n_bins must be >= 1".into()));
        }
        if self.neg_per_pos == 0 {
            return Err(Error::Config("balance.neg_per_pos must be >= 1".into()));
        }
        if self.proxy_feature_index >= geometry.n_stat {
            return Err(Error::Config(format!(
                "balance.proxy_feature_index {} out of range for {} static features",
                self.proxy_feature_index, geometry.n_stat
            )));
        }
        Ok(())
    }
}

/// `min(floor(value * n_bins), n_bins - 1)` for a value rescaled to `[0, 1]`.
pub fn assign_bin(value: f64, n_bins: usize) -> Result<usize> {
    if !value.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite proxy value {value}")));
    }
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be >= 1".into()));
    }
    let b = (value.clamp(0.0, 1.0) * n_bins as f64).floor() as usize;
    Ok(b.min(n_bins - 1))
}

/// Mean of one static feature over the patch cells.
pub fn proxy_value(patch: &Patch, geometry: &PatchGeometry, feature: usize) -> f64 {
    let area = geometry.w * geometry.h;
    let cells = &patch.stat_data[feature * area..(feature + 1) * area];
    cells.iter().map(|&v| v as f64).sum::<f64>() / area as f64
}

/// Nearest bin holding at least one negative; ties go to the lower index.
pub fn nearest_nonempty_bin(target: usize, counts: &[usize]) -> Option<usize> {
    (0..counts.len())
        .filter(|&b| counts[b] > 0)
        .min_by_key(|&b| (b.abs_diff(target), b))
}

/// One positive/negative pairing made by [`pseudo_balance_detailed`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BalancePair {
    pub positive_id: u64,
    /// Id of the negative in the input set.
    pub negative_source_id: u64,
    /// Id of the negative in the output set; differs from the source id when
    /// the same negative serves several positives.
    pub negative_id: u64,
    pub positive_bin: usize,
    pub negative_bin: usize,
}

#[derive(Debug, Clone)]
pub struct Balanced {
    pub set: PatchSet,
    pub pairs: Vec<BalancePair>,
    /// Bin of every input negative, keyed by position in the input set.
    pub negative_bins: Vec<(u64, usize)>,
}

pub fn pseudo_balance(patches: &PatchSet, cfg: &BalanceConfig) -> Result<PatchSet> {
    pseudo_balance_detailed(patches, cfg).map(|b| b.set)
}

/// Pseudo-balances `patches` and reports every pairing that was made.
///
/// Output order: all positives by ascending id, then the negatives in the
/// order they were drawn.
pub fn pseudo_balance_detailed(patches: &PatchSet, cfg: &BalanceConfig) -> Result<Balanced> {
    cfg.validate(&patches.geometry)?;
    let geom = &patches.geometry;
    let proxies: Vec<f64> = patches
        .patches
        .iter()
        .map(|p| proxy_value(p, geom, cfg.proxy_feature_index))
        .collect();
    let lo = proxies.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = proxies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let rescale = |v: f64| if range > 0.0 { (v - lo) / range } else { 0.0 };

    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.sort_by_key(|&k| patches.patches[k].id);

    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_bins];
    let mut negative_bins = Vec::new();
    let mut positives = Vec::new();
    for &k in &order {
        let p = &patches.patches[k];
        let b = assign_bin(rescale(proxies[k]), cfg.n_bins)?;
        if p.label == 1 {
            positives.push((k, b));
        } else {
            bins[b].push(k);
            negative_bins.push((p.id, b));
        }
    }
    if negative_bins.is_empty() {
        return Err(Error::NoNegatives);
    }
    let counts: Vec<usize> = bins.iter().map(Vec::len).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut next_id = patches.patches.iter().map(|p| p.id).max().unwrap_or(0) + 1;
    let mut emitted = std::collections::HashSet::new();
    let mut out: Vec<Patch> = positives
        .iter()
        .map(|&(k, _)| patches.patches[k].clone())
        .collect();
    let mut negatives = Vec::new();
    let mut pairs = Vec::new();
    for &(k, pos_bin) in &positives {
        // at least one bin is non-empty
        let nb = nearest_nonempty_bin(pos_bin, &counts).expect("negatives exist");
        let pool = &bins[nb];
        let take = cfg.neg_per_pos.min(pool.len());
        for slot in index::sample(&mut rng, pool.len(), take).into_iter() {
            let src = &patches.patches[pool[slot]];
            let mut neg = src.clone();
            if !emitted.insert(src.id) {
                neg.id = next_id;
                next_id += 1;
            }
            pairs.push(BalancePair {
                positive_id: patches.patches[k].id,
                negative_source_id: src.id,
                negative_id: neg.id,
                positive_bin: pos_bin,
                negative_bin: nb,
            });
            negatives.push(neg);
        }
    }
    out.extend(negatives);
    Ok(Balanced {
        set: PatchSet {
            patches: out,
            split: patches.split,
            geometry: patches.geometry,
        },
        pairs,
        negative_bins,
    })
}
