//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls into the code under test except to
//! build inputs.
#![allow(dead_code)]

use std::collections::HashMap;

use firecl::cube::{DataCube, Patch, PatchGeometry, PatchMode, PatchSet, SplitTag};
use firecl::model::{
    objective_parts, objective_value, BatchItem, ContrastiveKind, InputGeometry, ModelParams, Objective,
};
use firecl::losses::{adaptive_gamma, LossConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn pnorm(v: impl Iterator<Item = f64>, p: f64) -> f64 {
    v.map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Scalar hinge `max(0, |a-p|_p - |a-n|_p + m)`.
pub fn naive_triplet(a: &[f64], p: &[f64], n: &[f64], margin: f64, norm: f64) -> f64 {
    let dp = pnorm(a.iter().zip(p).map(|(x, y)| x - y), norm);
    let dn = pnorm(a.iter().zip(n).map(|(x, y)| x - y), norm);
    let v = dp - dn + margin;
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Supervised contrastive loss by direct summation over every (i, p, a)
/// triple, with normalized inputs. `None` when no anchor has a positive.
pub fn naive_scl(z: &[Vec<f64>], labels: &[u8], tau: f64) -> Option<f64> {
    let unit: Vec<Vec<f64>> = z
        .iter()
        .map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    let dot = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..z.len() {
        let mut denom = 0.0;
        for a in 0..z.len() {
            if a != i {
                denom += (dot(&unit[i], &unit[a]) / tau).exp();
            }
        }
        let mut sum = 0.0;
        let mut count = 0;
        for p in 0..z.len() {
            if p != i && labels[p] == labels[i] {
                sum += -((dot(&unit[i], &unit[p]) / tau).exp() / denom).ln();
                count += 1;
            }
        }
        if count > 0 {
            total += sum / count as f64;
            anchors += 1;
        }
    }
    (anchors > 0).then(|| total / anchors as f64)
}

/// AUROC as the fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half. `None` for single-class input.
pub fn auroc_pairs(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let (mut good, mut pairs) = (0.0, 0usize);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1;
                if scores[i] > scores[j] {
                    good += 1.0;
                } else if scores[i] == scores[j] {
                    good += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| good / pairs as f64)
}

/// Mean distance over ordered same-class and cross-class pairs of
/// unit-normalized latents.
pub fn naive_latent(latents: &[Vec<f64>], labels: &[u8]) -> (f64, f64) {
    let unit: Vec<Vec<f64>> = latents
        .iter()
        .map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    let (mut si, mut ni, mut sx, mut nx) = (0.0, 0.0, 0.0, 0.0);
    for a in 0..unit.len() {
        for b in 0..unit.len() {
            if a == b {
                continue;
            }
            let d = unit[a].iter().zip(&unit[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            if labels[a] == labels[b] {
                si += d;
                ni += 1.0;
            } else {
                sx += d;
                nx += 1.0;
            }
        }
    }
    (si / ni, sx / nx)
}

pub fn random_cube(seed: u64, t_len: usize, h: usize, w: usize, n_dyn: usize, n_stat: usize, rate: f64) -> DataCube {
    let mut r = rng(seed);
    let cells = h * w;
    DataCube {
        t_len,
        height: h,
        width: w,
        n_dyn,
        n_stat,
        dyn_data: (0..t_len * n_dyn * cells).map(|_| r.random_range(-3.0f32..3.0)).collect(),
        stat_data: (0..n_stat * cells).map(|_| r.random_range(-3.0f32..3.0)).collect(),
        fire: (0..t_len * cells).map(|_| u8::from(r.random::<f64>() < rate)).collect(),
        dyn_names: (0..n_dyn).map(|f| format!("d{f}")).collect(),
        stat_names: (0..n_stat).map(|f| format!("s{f}")).collect(),
        train_end: None,
        val_end: None,
    }
}

/// A set of random 1x1 patches with given labels and anchor coordinates.
pub fn random_patch_set(seed: u64, labels: &[u8], n_dyn: usize, n_stat: usize, hist_len: usize) -> PatchSet {
    let mut r = rng(seed);
    let geometry = PatchGeometry {
        mode: PatchMode::SlidingCenter,
        w: 1,
        h: 1,
        hist_len,
        n_dyn,
        n_stat,
    };
    let patches = labels
        .iter()
        .enumerate()
        .map(|(k, &label)| Patch {
            id: k as u64,
            t: r.random_range(0..6),
            i: r.random_range(0..4),
            j: r.random_range(0..4),
            label,
            dyn_data: (0..geometry.dyn_len()).map(|_| r.random_range(-1.0f32..1.0)).collect(),
            stat_data: (0..geometry.stat_len()).map(|_| r.random_range(-1.0f32..1.0)).collect(),
        })
        .collect();
    PatchSet {
        patches,
        split: SplitTag::Train,
        geometry,
    }
}

pub fn geometry_of(set: &PatchSet) -> InputGeometry {
    InputGeometry::from(&set.geometry)
}

/// Smallest distance of any rectifier pre-activation or triplet hinge to its
/// kink, over every patch the objective touches. Norms that the losses
/// divide by (SCL latents, triplet distances) are singular at zero with
/// curvature growing like `1/|z|^3`, so they count at a tenth of their size.
pub fn kink_margin(params: &ModelParams, batch: &[BatchItem], obj: &Objective) -> f64 {
    let mut m = f64::INFINITY;
    for item in batch {
        let norm = |z: &[f64]| z.iter().map(|x| x * x).sum::<f64>().sqrt();
        let ta = params.forward(item.anchor).unwrap();
        m = m.min(ta.min_kink_distance());
        if let Some((p, n)) = item.triplet {
            let tp = params.forward(p).unwrap();
            let tn = params.forward(n).unwrap();
            m = m.min(tp.min_kink_distance()).min(tn.min_kink_distance());
            if obj.contrastive == Some(ContrastiveKind::Scl) {
                m = m.min(0.1 * norm(&ta.z_d)).min(0.1 * norm(&tp.z_d)).min(0.1 * norm(&tn.z_d));
            }
            if obj.contrastive == Some(ContrastiveKind::Triplet) {
                let dp = pnorm(ta.z_d.iter().zip(&tp.z_d).map(|(x, y)| x - y), obj.loss.p);
                let dn = pnorm(ta.z_d.iter().zip(&tn.z_d).map(|(x, y)| x - y), obj.loss.p);
                m = m.min((dp - dn + obj.loss.margin).abs()).min(0.1 * dp).min(0.1 * dn);
            }
        }
    }
    m
}

/// Worst relative error between the analytic gradient of `CE + gamma * CL`
/// (gamma fixed at the base point) and central differences, over every
/// parameter. Relative error is `|a - n| / max(|a|, |n|, 1e-6)`; the floor
/// only matters for gradients that are numerically zero.
pub fn gradcheck(params: &ModelParams, batch: &[BatchItem], obj: &Objective, h: f64) -> f64 {
    let parts = objective_parts(params, batch, obj).unwrap();
    let gamma = adaptive_gamma(parts.ce, parts.cl);
    let mut worst: f64 = 0.0;
    let mut p = params.clone();
    for k in 0..params.data.len() {
        let analytic = parts.grad_ce.data[k] + gamma * parts.grad_cl.data[k];
        let orig = p.data[k];
        p.data[k] = orig + h;
        let up = objective_value(&p, batch, obj, gamma).unwrap();
        p.data[k] = orig - h;
        let down = objective_value(&p, batch, obj, gamma).unwrap();
        p.data[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

pub fn loss_cfg(margin: f64, p: f64, tau: f64) -> LossConfig {
    LossConfig { margin, p, tau }
}

/// Bin of every patch recomputed from scratch: mean of the proxy feature,
/// min-max rescaled over the pool, `floor(v * n)` clamped to the last bin.
pub fn oracle_bins(set: &PatchSet, feature: usize, n_bins: usize) -> HashMap<u64, usize> {
    let area = set.geometry.w * set.geometry.h;
    let vals: Vec<f64> = set
        .patches
        .iter()
        .map(|p| {
            let s: f64 = p.stat_data[feature * area..(feature + 1) * area].iter().map(|&v| v as f64).sum();
            s / area as f64
        })
        .collect();
    let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
    let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
    set.patches
        .iter()
        .zip(&vals)
        .map(|(p, &v)| {
            let x = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            let b = ((x * n_bins as f64).floor() as usize).min(n_bins - 1);
            (p.id, b)
        })
        .collect()
}

