//! Triplet sampling strategies.
//!
//! * **label**: positives and negatives drawn uniformly from the whole set by label.
//! * **historical**: candidates come from the anchor cell's own time series,
//!   widened to the 8 neighbouring cells when that history has none.
//! * **curriculum**: candidates ranked by morphology score (L2 distance of
//!   standardized static tensors); the admissible prefix grows with the epoch.
//!
//! Every draw uses a dedicated RNG stream keyed by `(seed, epoch, anchor id)`,
//! so results do not depend on the order in which anchors are processed.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cube::{Patch, PatchSet};
use crate::error::{Error, Result};
use crate::sidecar::Sidecar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Label,
    Historical,
    Curriculum,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Label, Strategy::Historical, Strategy::Curriculum];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Label => "label",
            Strategy::Historical => "historical",
            Strategy::Curriculum => "curriculum",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label" => Ok(Strategy::Label),
            "historical" => Ok(Strategy::Historical),
            "curriculum" => Ok(Strategy::Curriculum),
            other => Err(Error::InvalidArgument(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Euclidean norm of the difference of two standardized static tensors.
pub fn morphology_score(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "static tensors differ in size: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// Score-ordered candidates of one anchor for one label relation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateList {
    pub ids: Vec<u64>,
    pub scores: Vec<f64>,
    /// Length before any memory cap was applied.
    pub full_len: usize,
}

impl CandidateList {
    /// Number of admissible entries at percentile `q`: `ceil(q * full_len)`,
    /// limited to the stored prefix.
    pub fn window_len(&self, q: f64) -> usize {
        if self.ids.is_empty() {
            return 0;
        }
        // guard against q*len landing a hair above an integer
        let raw = (q.clamp(0.0, 1.0) * self.full_len as f64 - 1e-9).ceil().max(1.0) as usize;
        raw.min(self.ids.len())
    }

    pub fn window(&self, q: f64) -> &[u64] {
        &self.ids[..self.window_len(q)]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreEntry {
    pub same: CandidateList,
    pub diff: CandidateList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreMapConfig {
    /// Sets larger than this keep only `keep_k` candidates per list.
    pub cap_threshold: usize,
    pub keep_k: usize,
}

impl Default for ScoreMapConfig {
    fn default() -> Self {
        Self {
            cap_threshold: 20_000,
            keep_k: 256,
        }
    }
}

/// Per-anchor candidate lists sorted by ascending morphology score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreMap {
    pub entries: BTreeMap<u64, ScoreEntry>,
}

pub fn build_curriculum_map(patches: &PatchSet) -> Result<ScoreMap> {
    build_curriculum_map_with(patches, &ScoreMapConfig::default())
}

pub fn build_curriculum_map_with(patches: &PatchSet, cfg: &ScoreMapConfig) -> Result<ScoreMap> {
    if patches.len() < 2 {
        return Err(Error::Insufficient("curriculum map needs at least 2 patches".into()));
    }
    let npos = patches.n_positive();
    if npos == 0 || npos == patches.len() {
        return Err(Error::SingleClass);
    }
    let cap = (patches.len() > cfg.cap_threshold).then_some(cfg.keep_k);
    let all = &patches.patches;
    let build_one = |anchor: &Patch| -> Result<(u64, ScoreEntry)> {
        let mut same = Vec::new();
        let mut diff = Vec::new();
        for c in all {
            if c.id == anchor.id {
                continue;
            }
            let s = morphology_score(&anchor.stat_data, &c.stat_data)?;
            if c.label == anchor.label {
                same.push((s, c.id));
            } else {
                diff.push((s, c.id));
            }
        }
        Ok((anchor.id, ScoreEntry {
            same: into_list(same, cap),
            diff: into_list(diff, cap),
        }))
    };
    let built: Result<Vec<(u64, ScoreEntry)>> = if crate::parallel_enabled() {
        all.par_iter().map(build_one).collect()
    } else {
        all.iter().map(build_one).collect()
    };
    Ok(ScoreMap {
        entries: built?.into_iter().collect(),
    })
}

fn into_list(mut v: Vec<(f64, u64)>, cap: Option<usize>) -> CandidateList {
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let full_len = v.len();
    if let Some(k) = cap {
        v.truncate(k);
    }
    CandidateList {
        ids: v.iter().map(|e| e.1).collect(),
        scores: v.iter().map(|e| e.0).collect(),
        full_len,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HistoricalEntry {
    pub positives: Vec<u64>,
    pub negatives: Vec<u64>,
}

/// Historical candidate sets for every positive anchor.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HistoricalMap {
    pub entries: BTreeMap<u64, HistoricalEntry>,
}

pub fn build_historical_map(patches: &PatchSet) -> Result<HistoricalMap> {
    let (si, sj) = patches.geometry.stride();
    let mut by_cell: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (k, p) in patches.patches.iter().enumerate() {
        by_cell.entry((p.i, p.j)).or_default().push(k);
    }
    let mut entries = BTreeMap::new();
    for anchor in patches.patches.iter().filter(|p| p.label == 1) {
        let own = by_cell.get(&(anchor.i, anchor.j)).map(Vec::as_slice).unwrap_or(&[]);
        let collect = |cells: &[usize], label: u8, same_cell: bool| -> Vec<u64> {
            let mut ids: Vec<u64> = cells
                .iter()
                .map(|&k| &patches.patches[k])
                .filter(|c| c.id != anchor.id && c.label == label && (!same_cell || c.t != anchor.t))
                .map(|c| c.id)
                .collect();
            ids.sort_unstable();
            ids
        };
        let ring: Vec<usize> = ring_cells(anchor.i, anchor.j, si, sj)
            .into_iter()
            .filter_map(|c| by_cell.get(&c))
            .flatten()
            .copied()
            .collect();
        let mut positives = collect(own, 1, true);
        if positives.is_empty() {
            positives = collect(&ring, 1, false);
        }
        let mut negatives = collect(own, 0, true);
        if negatives.is_empty() {
            negatives = collect(&ring, 0, false);
        }
        entries.insert(anchor.id, HistoricalEntry {
            positives,
            negatives,
        });
    }
    if entries.is_empty() {
        return Err(Error::Insufficient("historical map needs at least one positive patch".into()));
    }
    Ok(HistoricalMap { entries })
}

/// The 8 neighbouring anchor positions at Chebyshev distance 1 (in strides).
fn ring_cells(i: usize, j: usize, si: usize, sj: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(8);
    for di in -1i64..=1 {
        for dj in -1i64..=1 {
            if di == 0 && dj == 0 {
                continue;
            }
            let ni = i as i64 + di * si as i64;
            let nj = j as i64 + dj * sj as i64;
            if ni >= 0 && nj >= 0 {
                out.push((ni as usize, nj as usize));
            }
        }
    }
    out
}

/// Chebyshev distance between two anchors in stride units.
pub fn chebyshev_steps(a: &Patch, b: &Patch, stride: (usize, usize)) -> usize {
    let di = a.i.abs_diff(b.i) / stride.0;
    let dj = a.j.abs_diff(b.j) / stride.1;
    di.max(dj)
}

/// Linear widening of the admissible percentile from `q0` to `q1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumSchedule {
    pub q0: f64,
    pub q1: f64,
    pub epochs: usize,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self {
            q0: 0.1,
            q1: 1.0,
            epochs: 1,
        }
    }
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.q0 > 0.0 && self.q0 <= self.q1 && self.q1 <= 1.0) {
            return Err(Error::Config(format!(
                "curriculum requires 0 < q0 <= q1 <= 1, got q0={} q1={}",
                self.q0, self.q1
            )));
        }
        Ok(())
    }

    pub fn percentile(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.q1;
        }
        let e = epoch.min(self.epochs - 1) as f64;
        self.q0 + (self.q1 - self.q0) * e / (self.epochs - 1) as f64
    }
}

/// Label-partitioned ids of a set, sorted ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelIndex {
    pub positives: Vec<u64>,
    pub negatives: Vec<u64>,
}

impl LabelIndex {
    pub fn build(patches: &PatchSet) -> Self {
        let mut idx = LabelIndex::default();
        for p in &patches.patches {
            if p.label == 1 {
                idx.positives.push(p.id);
            } else {
                idx.negatives.push(p.id);
            }
        }
        idx.positives.sort_unstable();
        idx.negatives.sort_unstable();
        idx
    }

    fn lists(&self, label: u8) -> (&[u64], &[u64]) {
        if label == 1 {
            (&self.positives, &self.negatives)
        } else {
            (&self.negatives, &self.positives)
        }
    }
}

/// All precomputed sampler state for one patch set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SamplerMaps {
    pub label: LabelIndex,
    pub historical: Option<HistoricalMap>,
    pub curriculum: Option<ScoreMap>,
}

impl SamplerMaps {
    /// Builds the label index plus the map `strategy` requires.
    pub fn build(patches: &PatchSet, strategy: Strategy) -> Result<Self> {
        Self::build_with(patches, strategy, &ScoreMapConfig::default())
    }

    pub fn build_with(patches: &PatchSet, strategy: Strategy, cfg: &ScoreMapConfig) -> Result<Self> {
        let mut maps = SamplerMaps {
            label: LabelIndex::build(patches),
            ..Default::default()
        };
        maps.ensure_with(patches, strategy, cfg)?;
        Ok(maps)
    }

    pub fn ensure(&mut self, patches: &PatchSet, strategy: Strategy) -> Result<()> {
        self.ensure_with(patches, strategy, &ScoreMapConfig::default())
    }

    pub fn ensure_with(&mut self, patches: &PatchSet, strategy: Strategy, cfg: &ScoreMapConfig) -> Result<()> {
        match strategy {
            Strategy::Label => {}
            Strategy::Historical if self.historical.is_none() => {
                self.historical = Some(build_historical_map(patches)?);
            }
            Strategy::Curriculum if self.curriculum.is_none() => {
                self.curriculum = Some(build_curriculum_map_with(patches, cfg)?);
            }
            _ => {}
        }
        Ok(())
    }

    pub fn has(&self, strategy: Strategy) -> bool {
        match strategy {
            Strategy::Label => true,
            Strategy::Historical => self.historical.is_some(),
            Strategy::Curriculum => self.curriculum.is_some(),
        }
    }

    pub fn to_sidecar(&self) -> Sidecar {
        let mut s = Sidecar::new();
        s.set_meta("kind", "sampler_maps");
        s.push_u64("label.positives", self.label.positives.clone());
        s.push_u64("label.negatives", self.label.negatives.clone());
        if let Some(h) = &self.historical {
            s.set_meta("historical", "true");
            let (anchors, pos_off, pos, neg_off, neg) = flatten_hist(h);
            s.push_u64("historical.anchors", anchors);
            s.push_u64("historical.pos_offsets", pos_off);
            s.push_u64("historical.pos_ids", pos);
            s.push_u64("historical.neg_offsets", neg_off);
            s.push_u64("historical.neg_ids", neg);
        }
        if let Some(c) = &self.curriculum {
            s.set_meta("curriculum", "true");
            s.push_u64("curriculum.anchors", c.entries.keys().copied().collect());
            for (tag, pick) in [("same", 0usize), ("diff", 1)] {
                let mut off = vec![0u64];
                let mut ids = Vec::new();
                let mut scores = Vec::new();
                let mut full = Vec::new();
                for e in c.entries.values() {
                    let l = if pick == 0 { &e.same } else { &e.diff };
                    ids.extend_from_slice(&l.ids);
                    scores.extend_from_slice(&l.scores);
                    full.push(l.full_len as u64);
                    off.push(ids.len() as u64);
                }
                s.push_u64(&format!("curriculum.{tag}_offsets"), off);
                s.push_u64(&format!("curriculum.{tag}_ids"), ids);
                s.push_f64(&format!("curriculum.{tag}_scores"), scores);
                s.push_u64(&format!("curriculum.{tag}_full_len"), full);
            }
        }
        s
    }

    pub fn from_sidecar(s: &Sidecar) -> Result<Self> {
        if s.meta("kind")? != "sampler_maps" {
            return Err(Error::Sidecar("not a sampler map sidecar".into()));
        }
        let mut maps = SamplerMaps {
            label: LabelIndex {
                positives: s.u64s("label.positives")?.to_vec(),
                negatives: s.u64s("label.negatives")?.to_vec(),
            },
            ..Default::default()
        };
        if s.meta.get("historical").is_some() {
            let anchors = s.u64s("historical.anchors")?;
            let pos = split_by_offsets(s.u64s("historical.pos_offsets")?, s.u64s("historical.pos_ids")?, anchors.len())?;
            let neg = split_by_offsets(s.u64s("historical.neg_offsets")?, s.u64s("historical.neg_ids")?, anchors.len())?;
            let entries = anchors
                .iter()
                .zip(pos.into_iter().zip(neg))
                .map(|(&a, (p, n))| {
                    (a, HistoricalEntry {
                        positives: p.to_vec(),
                        negatives: n.to_vec(),
                    })
                })
                .collect();
            maps.historical = Some(HistoricalMap { entries });
        }
        if s.meta.get("curriculum").is_some() {
            let anchors = s.u64s("curriculum.anchors")?;
            let mut lists: Vec<Vec<CandidateList>> = Vec::new();
            for tag in ["same", "diff"] {
                let offs = s.u64s(&format!("curriculum.{tag}_offsets"))?;
                let ids = split_by_offsets(offs, s.u64s(&format!("curriculum.{tag}_ids"))?, anchors.len())?;
                let scores_all = s.f64s(&format!("curriculum.{tag}_scores"))?;
                let full = s.u64s(&format!("curriculum.{tag}_full_len"))?;
                if full.len() != anchors.len() || scores_all.len() != *offs.last().unwrap_or(&0) as usize {
                    return Err(Error::Sidecar("curriculum arrays inconsistent".into()));
                }
                lists.push(
                    ids.iter()
                        .enumerate()
                        .map(|(k, ids)| CandidateList {
                            ids: ids.to_vec(),
                            scores: scores_all[offs[k] as usize..offs[k + 1] as usize].to_vec(),
                            full_len: full[k] as usize,
                        })
                        .collect(),
                );
            }
            let diff = lists.pop().unwrap_or_default();
            let same = lists.pop().unwrap_or_default();
            let entries = anchors
                .iter()
                .zip(same.into_iter().zip(diff))
                .map(|(&a, (same, diff))| (a, ScoreEntry { same, diff }))
                .collect();
            maps.curriculum = Some(ScoreMap { entries });
        }
        Ok(maps)
    }
}

type FlatHist = (Vec<u64>, Vec<u64>, Vec<u64>, Vec<u64>, Vec<u64>);

fn flatten_hist(h: &HistoricalMap) -> FlatHist {
    let mut anchors = Vec::new();
    let (mut pos_off, mut neg_off) = (vec![0u64], vec![0u64]);
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (&a, e) in &h.entries {
        anchors.push(a);
        pos.extend_from_slice(&e.positives);
        neg.extend_from_slice(&e.negatives);
        pos_off.push(pos.len() as u64);
        neg_off.push(neg.len() as u64);
    }
    (anchors, pos_off, pos, neg_off, neg)
}

fn split_by_offsets<'a>(offsets: &[u64], data: &'a [u64], n: usize) -> Result<Vec<&'a [u64]>> {
    if offsets.len() != n + 1 || offsets.last().copied().unwrap_or(0) as usize != data.len() {
        return Err(Error::Sidecar("offset table inconsistent".into()));
    }
    offsets
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0] as usize, w[1] as usize);
            if a > b {
                Err(Error::Sidecar("offsets not monotone".into()))
            } else {
                Ok(&data[a..b])
            }
        })
        .collect()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG stream for one anchor at one epoch.
pub fn anchor_rng(seed: u64, epoch: usize, anchor_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(epoch as u64)));
    rng.set_stream(anchor_id);
    rng
}

fn pick<R: Rng + ?Sized>(list: &[u64], rng: &mut R) -> Option<u64> {
    if list.is_empty() {
        None
    } else {
        Some(list[rng.random_range(0..list.len())])
    }
}

/// Uniform draw from a sorted list, excluding `exclude` if present.
fn pick_excluding<R: Rng + ?Sized>(list: &[u64], exclude: u64, rng: &mut R) -> Option<u64> {
    match list.binary_search(&exclude) {
        Ok(pos) => {
            if list.len() < 2 {
                return None;
            }
            let k = rng.random_range(0..list.len() - 1);
            Some(list[if k >= pos { k + 1 } else { k }])
        }
        Err(_) => pick(list, rng),
    }
}

/// Draws one `(positive, negative)` pair for `anchor`, or `None` when a
/// required candidate list is empty.
pub fn sample_triplet<R: Rng + ?Sized>(
    strategy: Strategy,
    anchor: &Patch,
    epoch: usize,
    maps: &SamplerMaps,
    schedule: &CurriculumSchedule,
    rng: &mut R,
) -> Result<Option<(u64, u64)>> {
    match strategy {
        Strategy::Label => {
            let (same, other) = maps.label.lists(anchor.label);
            let Some(p) = pick_excluding(same, anchor.id, rng) else {
                return Ok(None);
            };
            Ok(pick(other, rng).map(|n| (p, n)))
        }
        Strategy::Historical => {
            let map = maps
                .historical
                .as_ref()
                .ok_or_else(|| Error::MissingMap("historical".into()))?;
            let Some(e) = map.entries.get(&anchor.id) else {
                return Ok(None);
            };
            let Some(p) = pick(&e.positives, rng) else {
                return Ok(None);
            };
            Ok(pick(&e.negatives, rng).map(|n| (p, n)))
        }
        Strategy::Curriculum => {
            let map = maps
                .curriculum
                .as_ref()
                .ok_or_else(|| Error::MissingMap("curriculum".into()))?;
            let Some(e) = map.entries.get(&anchor.id) else {
                return Ok(None);
            };
            let q = schedule.percentile(epoch);
            let Some(p) = pick(e.same.window(q), rng) else {
                return Ok(None);
            };
            Ok(pick(e.diff.window(q), rng).map(|n| (p, n)))
        }
    }
}
