//! Classification metrics and latent/feature-space diagnostics.
//!
//! Undefined values (zero denominators, AUROC on a single class) are `None`
//! and print as `NA`. Aggregates are macro means over the two classes that
//! skip undefined entries.

use std::fmt::Write as _;
use std::io::Write;

use rand::seq::index;
use rand::Rng;

use crate::cube::{PatchGeometry, PatchSet};
use crate::error::{Error, Result};
use crate::samplers::{anchor_rng, sample_triplet, CurriculumSchedule, SamplerMaps, Strategy};

pub const UNDEFINED: &str = "NA";

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub iou: Option<f64>,
    pub f1: Option<f64>,
}

impl ClassMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            iou: ratio(tp, tp + fp + fn_),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }
}

fn macro_mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.into_iter().flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionReport {
    /// Index 0 is the negative class, index 1 the positive class.
    pub per_class: [ClassMetrics; 2],
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub macro_iou: Option<f64>,
    pub macro_f1: Option<f64>,
}

pub fn confusion_metrics(preds: &[u8], labels: &[u8]) -> Result<ConfusionReport> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Empty("predictions".into()));
    }
    let mut c = [[0usize; 2]; 2]; // [label][pred]
    for (&p, &y) in preds.iter().zip(labels) {
        c[(y == 1) as usize][(p == 1) as usize] += 1;
    }
    let class1 = ClassMetrics::from_counts(c[1][1], c[0][1], c[1][0], c[0][0]);
    let class0 = ClassMetrics::from_counts(c[0][0], c[1][0], c[0][1], c[1][1]);
    let per_class = [class0, class1];
    Ok(ConfusionReport {
        macro_precision: macro_mean(per_class.iter().map(|m| m.precision)),
        macro_recall: macro_mean(per_class.iter().map(|m| m.recall)),
        macro_iou: macro_mean(per_class.iter().map(|m| m.iou)),
        macro_f1: macro_mean(per_class.iter().map(|m| m.f1)),
        per_class,
    })
}

/// Mann-Whitney AUROC with midranks; `None` unless both classes are present.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k + 1;
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            end += 1;
        }
        // ranks k+1 ..= end share their mean
        let mid = (k + 1 + end) as f64 / 2.0;
        rank_sum_pos += mid * order[k..end].iter().filter(|&&i| labels[i] == 1).count() as f64;
        k = end;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(u / (n_pos as f64 * n_neg as f64)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub confusion: ConfusionReport,
    pub auroc: Option<f64>,
    pub n: usize,
}

impl MetricsReport {
    pub fn from_scores(probabilities: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        let preds: Vec<u8> = probabilities.iter().map(|&p| u8::from(p >= threshold)).collect();
        Ok(Self {
            confusion: confusion_metrics(&preds, labels)?,
            auroc: auroc(probabilities, labels)?,
            n: labels.len(),
        })
    }

    pub fn macro_f1(&self) -> Option<f64> {
        self.confusion.macro_f1
    }

    /// Rows `class_0`, `class_1`, `macro`. AUROC is symmetric in the classes.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["scope", "precision", "recall", "auroc", "iou", "f1", "tp", "fp", "fn", "tn"])?;
        for (k, m) in self.confusion.per_class.iter().enumerate() {
            out.write_record([
                format!("class_{k}"),
                fmt_opt(m.precision),
                fmt_opt(m.recall),
                fmt_opt(self.auroc),
                fmt_opt(m.iou),
                fmt_opt(m.f1),
                m.tp.to_string(),
                m.fp.to_string(),
                m.fn_.to_string(),
                m.tn.to_string(),
            ])?;
        }
        let c = &self.confusion;
        out.write_record([
            "macro".to_string(),
            fmt_opt(c.macro_precision),
            fmt_opt(c.macro_recall),
            fmt_opt(self.auroc),
            fmt_opt(c.macro_iou),
            fmt_opt(c.macro_f1),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
        out.flush().map_err(|e| Error::io("csv output", e))?;
        Ok(())
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => UNDEFINED.to_string(),
    }
}

/// Mean absolute difference per dynamic feature, averaged over history and cells.
pub fn feature_abs_diff(a: &[f32], b: &[f32], geom: &PatchGeometry) -> Vec<f64> {
    let area = geom.w * geom.h;
    let mut out = vec![0.0; geom.n_dyn];
    for l in 0..geom.hist_len {
        for (f, acc) in out.iter_mut().enumerate() {
            let s = (l * geom.n_dyn + f) * area;
            *acc += a[s..s + area]
                .iter()
                .zip(&b[s..s + area])
                .map(|(x, y)| (*x as f64 - *y as f64).abs())
                .sum::<f64>();
        }
    }
    let denom = (geom.hist_len * area) as f64;
    out.iter_mut().for_each(|v| *v /= denom);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDiffRow {
    pub feature: String,
    pub ap_mean: f64,
    pub ap_std: f64,
    pub an_mean: f64,
    pub an_std: f64,
    /// `an_mean / max(ap_mean, 1e-12)`
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDiffReport {
    pub strategy: Strategy,
    pub rows: Vec<FeatureDiffRow>,
    pub n_anchors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureDiffConfig {
    pub n_pairs: usize,
    /// Curriculum percentile used for the draws.
    pub percentile: f64,
    pub max_anchors: Option<usize>,
    pub seed: u64,
}

impl Default for FeatureDiffConfig {
    fn default() -> Self {
        Self {
            n_pairs: 10,
            percentile: 0.1,
            max_anchors: None,
            seed: 0,
        }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

/// Anchor-positive vs anchor-negative dynamic-feature differences under one
/// sampling strategy. Anchors whose candidate lists are empty are skipped.
pub fn feature_diff_report(
    patches: &PatchSet,
    feature_names: &[String],
    maps: &SamplerMaps,
    strategy: Strategy,
    cfg: &FeatureDiffConfig,
) -> Result<FeatureDiffReport> {
    if !maps.has(strategy) {
        return Err(Error::MissingMap(strategy.as_str().into()));
    }
    let geom = &patches.geometry;
    if feature_names.len() != geom.n_dyn {
        return Err(Error::Shape("feature names do not match dynamic features".into()));
    }
    let by_id = patches.index_by_id();
    let schedule = CurriculumSchedule {
        q0: cfg.percentile,
        q1: cfg.percentile,
        epochs: 1,
    };
    let mut per_anchor_ap: Vec<Vec<f64>> = Vec::new();
    let mut per_anchor_an: Vec<Vec<f64>> = Vec::new();
    let limit = cfg.max_anchors.unwrap_or(usize::MAX);
    for anchor in &patches.patches {
        if per_anchor_ap.len() >= limit {
            break;
        }
        let mut rng = anchor_rng(cfg.seed, 0, anchor.id);
        let mut ap = vec![0.0; geom.n_dyn];
        let mut an = vec![0.0; geom.n_dyn];
        let mut drawn = 0;
        for _ in 0..cfg.n_pairs {
            let Some((p, n)) = sample_triplet(strategy, anchor, 0, maps, &schedule, &mut rng)? else {
                break;
            };
            let pp = &patches.patches[by_id[&p]];
            let nn = &patches.patches[by_id[&n]];
            let dp = feature_abs_diff(&anchor.dyn_data, &pp.dyn_data, geom);
            let dn = feature_abs_diff(&anchor.dyn_data, &nn.dyn_data, geom);
            ap.iter_mut().zip(&dp).for_each(|(a, b)| *a += b);
            an.iter_mut().zip(&dn).for_each(|(a, b)| *a += b);
            drawn += 1;
        }
        if drawn == 0 {
            continue;
        }
        ap.iter_mut().for_each(|v| *v /= drawn as f64);
        an.iter_mut().for_each(|v| *v /= drawn as f64);
        per_anchor_ap.push(ap);
        per_anchor_an.push(an);
    }
    if per_anchor_ap.is_empty() {
        return Err(Error::Insufficient(format!(
            "no anchor yielded a {} triplet",
            strategy.as_str()
        )));
    }
    let rows = feature_names
        .iter()
        .enumerate()
        .map(|(f, name)| {
            let ap: Vec<f64> = per_anchor_ap.iter().map(|v| v[f]).collect();
            let an: Vec<f64> = per_anchor_an.iter().map(|v| v[f]).collect();
            let (ap_mean, ap_std) = mean_std(&ap);
            let (an_mean, an_std) = mean_std(&an);
            FeatureDiffRow {
                feature: name.clone(),
                ap_mean,
                ap_std,
                an_mean,
                an_std,
                ratio: an_mean / ap_mean.max(1e-12),
            }
        })
        .collect();
    Ok(FeatureDiffReport {
        strategy,
        rows,
        n_anchors: per_anchor_ap.len(),
    })
}

/// One row per feature with AP, AN and ratio column groups per strategy.
pub fn write_feature_diff_csv<W: Write>(reports: &[FeatureDiffReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["feature".to_string()];
    for group in ["ap_mean", "ap_std", "an_mean", "an_std", "ratio"] {
        for r in reports {
            header.push(format!("{group}_{}", r.strategy.as_str()));
        }
    }
    out.write_record(&header)?;
    let n_feat = reports.first().map_or(0, |r| r.rows.len());
    for f in 0..n_feat {
        let mut rec = vec![reports[0].rows[f].feature.clone()];
        let pick: [fn(&FeatureDiffRow) -> f64; 5] = [
            |r| r.ap_mean,
            |r| r.ap_std,
            |r| r.an_mean,
            |r| r.an_std,
            |r| r.ratio,
        ];
        for g in pick {
            for r in reports {
                rec.push(format!("{:.6}", g(&r.rows[f])));
            }
        }
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("csv output", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentDistanceReport {
    /// Mean pairwise distance over same-class pairs, both classes pooled.
    pub intra: f64,
    pub inter: f64,
    /// `inter / max(intra, 1e-12)`
    pub ratio: f64,
    /// Set when `intra` is zero and the ratio is governed by the guard.
    pub intra_zero: bool,
    pub n_pos: usize,
    pub n_neg: usize,
}

pub const RATIO_EPS: f64 = 1e-12;

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// Pooled intra-class and inter-class mean distances of L2-normalized latents.
pub fn latent_distances(latents: &[Vec<f64>], labels: &[u8]) -> Result<LatentDistanceReport> {
    if latents.len() != labels.len() {
        return Err(Error::Shape("latents and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos < 2 || n_neg < 2 {
        return Err(Error::Insufficient(format!(
            "latent report needs >= 2 per class, got {n_pos} positive / {n_neg} negative"
        )));
    }
    let u: Vec<Vec<f64>> = latents.iter().map(|v| normalized(v)).collect();
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..u.len() {
        for j in i + 1..u.len() {
            let d = u[i]
                .iter()
                .zip(&u[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if labels[i] == labels[j] {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    let intra = intra / n_intra as f64;
    let inter = inter / n_inter as f64;
    Ok(LatentDistanceReport {
        intra,
        inter,
        ratio: inter / intra.max(RATIO_EPS),
        intra_zero: intra == 0.0,
        n_pos,
        n_neg,
    })
}

/// Subsamples all positives (up to `sample_cap`) plus an equal-size random
/// draw of negatives, then computes [`latent_distances`].
pub fn latent_distance_report<R: Rng + ?Sized>(
    latents: &[Vec<f64>],
    labels: &[u8],
    sample_cap: Option<usize>,
    rng: &mut R,
) -> Result<LatentDistanceReport> {
    if latents.len() != labels.len() {
        return Err(Error::Shape("latents and labels differ in length".into()));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&k| labels[k] == 1).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&k| labels[k] != 1).collect();
    let n_pos = pos.len().min(sample_cap.unwrap_or(usize::MAX));
    let pos_sel: Vec<usize> = if n_pos < pos.len() {
        index::sample(rng, pos.len(), n_pos).into_iter().map(|k| pos[k]).collect()
    } else {
        pos
    };
    let n_neg = n_pos.min(neg.len());
    let neg_sel: Vec<usize> = index::sample(rng, neg.len(), n_neg).into_iter().map(|k| neg[k]).collect();
    let chosen: Vec<usize> = pos_sel.into_iter().chain(neg_sel).collect();
    let l: Vec<Vec<f64>> = chosen.iter().map(|&k| latents[k].clone()).collect();
    let y: Vec<u8> = chosen.iter().map(|&k| labels[k]).collect();
    latent_distances(&l, &y)
}

pub fn write_latent_csv<W: Write>(rows: &[(String, LatentDistanceReport)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["model", "intra_pooled", "inter", "ratio", "intra_zero", "n_pos", "n_neg"])?;
    for (name, r) in rows {
        out.write_record([
            name.clone(),
            format!("{:.6}", r.intra),
            format!("{:.6}", r.inter),
            format!("{:.6}", r.ratio),
            r.intra_zero.to_string(),
            r.n_pos.to_string(),
            r.n_neg.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("csv output", e))?;
    Ok(())
}

/// Number of input elements of one patch: `L*D_d*w*h + D_s*w*h`.
pub fn input_cost(w: usize, h: usize, hist_len: usize, n_dyn: usize, n_stat: usize) -> u64 {
    let area = (w * h) as u64;
    hist_len as u64 * n_dyn as u64 * area + n_stat as u64 * area
}

/// Grouped bar chart of the AN/AP ratio per feature and strategy.
pub fn feature_ratio_svg(reports: &[FeatureDiffReport]) -> String {
    let n_feat = reports.first().map_or(0, |r| r.rows.len());
    let (bar, gap, height, pad) = (14.0, 18.0, 220.0, 40.0);
    let group_w = bar * reports.len() as f64 + gap;
    let width = pad * 2.0 + group_w * n_feat as f64;
    let max = reports
        .iter()
        .flat_map(|r| r.rows.iter().map(|row| row.ratio))
        .filter(|v| v.is_finite())
        .fold(1.0f64, f64::max);
    let colors = ["#4c72b0", "#dd8452", "#55a868"];
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{:.0}" font-family="sans-serif" font-size="10">"#,
        height + 2.0 * pad
    );
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{y}" x2="{x2:.1}" y2="{y}" stroke="black"/>"#,
        y = height + pad,
        x2 = width - pad
    );
    for f in 0..n_feat {
        let x0 = pad + f as f64 * group_w;
        for (k, r) in reports.iter().enumerate() {
            let v = r.rows[f].ratio.min(max);
            let hgt = height * v / max;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{bar}" height="{hgt:.1}" fill="{}"><title>{} {} {:.3}</title></rect>"#,
                x0 + k as f64 * bar,
                pad + height - hgt,
                colors[k % colors.len()],
                r.rows[f].feature,
                r.strategy.as_str(),
                r.rows[f].ratio
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            x0,
            height + pad + 14.0,
            reports[0].rows[f].feature
        );
    }
    for (k, r) in reports.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="{}">{}</text>"#,
            pad + 90.0 * k as f64,
            pad - 10.0,
            colors[k % colors.len()],
            r.strategy.as_str()
        );
    }
    s.push_str("</svg>\n");
    s
}
