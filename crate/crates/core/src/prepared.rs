//! Prepared data: balanced train/val/test patch sets and sampler maps.
//!
//! On disk a split is stored as a patch index (ids, anchors, labels and the
//! geometry) rather than raw tensors; tensors are re-extracted from the cube.

use std::path::Path;

use crate::balance::{pseudo_balance, BalanceConfig};
use crate::config::RunConfig;
use crate::cube::{extract_at, extract_patches, DataCube, PatchGeometry, PatchMode, PatchSet, SplitTag};
use crate::error::{Error, Result};
use crate::samplers::{SamplerMaps, Strategy};
use crate::sidecar::Sidecar;

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: PatchSet,
    pub val: PatchSet,
    pub test: PatchSet,
    /// Maps over the training split.
    pub maps: SamplerMaps,
}

impl Prepared {
    pub fn split(&self, tag: SplitTag) -> &PatchSet {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Val => &self.val,
            SplitTag::Test => &self.test,
        }
    }
}

fn balance_split(set: PatchSet, cfg: &BalanceConfig, offset: u64) -> Result<PatchSet> {
    if set.is_empty() {
        return Ok(set);
    }
    let cfg = BalanceConfig {
        seed: cfg.seed.wrapping_add(offset),
        ..cfg.clone()
    };
    pseudo_balance(&set, &cfg)
}

/// Extracts, splits by label time and pseudo-balances every split, then
/// builds sampler maps over the training split for `strategies`.
pub fn prepare(cube: &DataCube, cfg: &RunConfig, strategies: &[Strategy]) -> Result<Prepared> {
    let (train_end, val_end) = match (cube.train_end, cube.val_end) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Manifest(
                "cube manifest lacks train_end/val_end split boundaries".into(),
            ))
        }
    };
    let p = &cfg.patch;
    let all = extract_patches(cube, p.mode, p.w, p.h, p.hist_len)?;
    let (train, val, test) = all.split_temporal(train_end, val_end);
    let train = balance_split(train, &cfg.balance, 0)?;
    let val = balance_split(val, &cfg.balance, 1)?;
    let test = balance_split(test, &cfg.balance, 2)?;
    if train.is_empty() {
        return Err(Error::Empty("training split".into()));
    }
    let mut maps = SamplerMaps::build_with(&train, Strategy::Label, &cfg.sampler)?;
    for &s in strategies {
        maps.ensure_with(&train, s, &cfg.sampler)?;
    }
    Ok(Prepared { train, val, test, maps })
}

pub fn index_to_sidecar(set: &PatchSet) -> Sidecar {
    let g = &set.geometry;
    let mut s = Sidecar::new();
    s.set_meta("kind", "patch_index");
    s.set_meta("split", set.split.as_str());
    s.set_meta("mode", g.mode.as_str());
    s.set_meta("w", g.w);
    s.set_meta("h", g.h);
    s.set_meta("hist_len", g.hist_len);
    s.set_meta("n_dyn", g.n_dyn);
    s.set_meta("n_stat", g.n_stat);
    s.push_u64("id", set.patches.iter().map(|p| p.id).collect());
    s.push_u64("t", set.patches.iter().map(|p| p.t as u64).collect());
    s.push_u64("i", set.patches.iter().map(|p| p.i as u64).collect());
    s.push_u64("j", set.patches.iter().map(|p| p.j as u64).collect());
    s.push_u8("label", set.patches.iter().map(|p| p.label).collect());
    s
}

/// Rebuilds a patch set from its index by re-extracting from `cube`.
pub fn index_from_sidecar(s: &Sidecar, cube: &DataCube) -> Result<PatchSet> {
    if s.meta("kind")? != "patch_index" {
        return Err(Error::Sidecar("not a patch index sidecar".into()));
    }
    let geometry = PatchGeometry {
        mode: s.meta_parse::<PatchMode>("mode")?,
        w: s.meta_parse("w")?,
        h: s.meta_parse("h")?,
        hist_len: s.meta_parse("hist_len")?,
        n_dyn: s.meta_parse("n_dyn")?,
        n_stat: s.meta_parse("n_stat")?,
    };
    if geometry.n_dyn != cube.n_dyn || geometry.n_stat != cube.n_stat {
        return Err(Error::Shape("patch index feature counts differ from the cube".into()));
    }
    let split: SplitTag = s.meta_parse("split")?;
    let ids = s.u64s("id")?;
    let (t, i, j) = (s.u64s("t")?, s.u64s("i")?, s.u64s("j")?);
    let labels = s.u8s("label")?;
    let n = ids.len();
    if [t.len(), i.len(), j.len(), labels.len()].iter().any(|&l| l != n) {
        return Err(Error::Sidecar("patch index arrays differ in length".into()));
    }
    let coords: Vec<(usize, usize, usize)> = (0..n).map(|k| (t[k] as usize, i[k] as usize, j[k] as usize)).collect();
    let mut set = extract_at(cube, geometry.mode, geometry.w, geometry.h, geometry.hist_len, &coords, ids)?;
    set.split = split;
    if let Some(k) = (0..n).find(|&k| set.patches[k].label != labels[k]) {
        return Err(Error::Sidecar(format!("label of patch {} disagrees with the cube", ids[k])));
    }
    Ok(set)
}

/// Split index file name inside a prepared directory.
pub fn split_file(tag: SplitTag) -> String {
    format!("{}.idx", tag.as_str())
}

pub const MAPS_FILE: &str = "maps.bin";

pub fn write_prepared(p: &Prepared, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for tag in [SplitTag::Train, SplitTag::Val, SplitTag::Test] {
        let path = dir.join(split_file(tag));
        index_to_sidecar(p.split(tag)).write(&path)?;
        written.push(path);
    }
    let path = dir.join(MAPS_FILE);
    p.maps.to_sidecar().write(&path)?;
    written.push(path);
    Ok(written)
}

pub fn read_prepared(dir: &Path, cube: &DataCube) -> Result<Prepared> {
    let read = |tag: SplitTag| -> Result<PatchSet> {
        let s = Sidecar::read(&dir.join(split_file(tag)))?;
        index_from_sidecar(&s, cube)
    };
    let maps = SamplerMaps::from_sidecar(&Sidecar::read(&dir.join(MAPS_FILE))?)?;
    Ok(Prepared {
        train: read(SplitTag::Train)?,
        val: read(SplitTag::Val)?,
        test: read(SplitTag::Test)?,
        maps,
    })
}
