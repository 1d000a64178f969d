//! Spatio-temporal data cube, its on-disk format, and patch extraction.
//!
//! A cube directory holds a UTF-8 `manifest.txt` plus three flat arrays:
//!
//! * dynamic features: little-endian `f32`, row-major `[T, D_d, H, W]`
//! * static features: little-endian `f32`, row-major `[D_s, H, W]`
//! * fire mask: `u8` in `{0, 1}`, row-major `[T, H, W]`
//!
//! Manifest lines are `key = value`; blank lines and `#` comments are
//! ignored. Recognised keys are listed in [`MANIFEST_KEYS`]. When
//! `standardize = true` the loader rescales every feature to zero mean and
//! unit variance. Dynamic statistics use timesteps `[0, train_end)` only and
//! are written to a `stats.txt` sidecar next to the manifest, which later
//! loads reuse verbatim.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const STATS_FILE: &str = "stats.txt";

pub const MANIFEST_KEYS: &[&str] = &[
    "version",
    "t_len",
    "height",
    "width",
    "n_dynamic",
    "n_static",
    "dtype",
    "dynamic_file",
    "static_file",
    "fire_file",
    "dynamic_names",
    "static_names",
    "standardize",
    "train_end",
    "val_end",
];

/// Dense `(T, H, W)` cube of dynamic features, per-cell statics and a fire mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCube {
    pub t_len: usize,
    pub height: usize,
    pub width: usize,
    pub n_dyn: usize,
    pub n_stat: usize,
    /// `[T, D_d, H, W]`
    pub dyn_data: Vec<f32>,
    /// `[D_s, H, W]`
    pub stat_data: Vec<f32>,
    /// `[T, H, W]`, entries in `{0, 1}`
    pub fire: Vec<u8>,
    pub dyn_names: Vec<String>,
    pub stat_names: Vec<String>,
    /// Exclusive end of the training time range (label time), if declared.
    pub train_end: Option<usize>,
    /// Exclusive end of the validation time range (label time), if declared.
    pub val_end: Option<usize>,
}

impl DataCube {
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn dyn_index(&self, t: usize, f: usize, i: usize, j: usize) -> usize {
        ((t * self.n_dyn + f) * self.height + i) * self.width + j
    }

    #[inline]
    pub fn dyn_at(&self, t: usize, f: usize, i: usize, j: usize) -> f32 {
        self.dyn_data[self.dyn_index(t, f, i, j)]
    }

    #[inline]
    pub fn stat_at(&self, f: usize, i: usize, j: usize) -> f32 {
        self.stat_data[(f * self.height + i) * self.width + j]
    }

    #[inline]
    pub fn fire_at(&self, t: usize, i: usize, j: usize) -> u8 {
        self.fire[(t * self.height + i) * self.width + j]
    }

    #[inline]
    pub fn set_fire(&mut self, t: usize, i: usize, j: usize, v: u8) {
        let idx = (t * self.height + i) * self.width + j;
        self.fire[idx] = v;
    }

    /// Checks every structural invariant of the cube.
    pub fn validate(&self) -> Result<()> {
        let (t, h, w) = (self.t_len, self.height, self.width);
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::Manifest("cube dimensions must be positive".into()));
        }
        check_len("dynamic", self.dyn_data.len(), t * self.n_dyn * h * w)?;
        check_len("static", self.stat_data.len(), self.n_stat * h * w)?;
        check_len("fire", self.fire.len(), t * h * w)?;
        if self.dyn_names.len() != self.n_dyn || self.stat_names.len() != self.n_stat {
            return Err(Error::Manifest(
                "feature name count does not match feature dimension".into(),
            ));
        }
        check_finite("dynamic", &self.dyn_data)?;
        check_finite("static", &self.stat_data)?;
        if let Some((index, &value)) = self.fire.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::InvalidMask { value, index });
        }
        Ok(())
    }

    /// Per-feature statistics: dynamics over `[0, train_end)`, statics over all cells.
    pub fn compute_stats(&self) -> Standardization {
        let t_end = self.train_end.unwrap_or(self.t_len).clamp(1, self.t_len);
        let cells = self.cells();
        let mut dyn_mean = Vec::with_capacity(self.n_dyn);
        let mut dyn_std = Vec::with_capacity(self.n_dyn);
        for f in 0..self.n_dyn {
            let values = (0..t_end).flat_map(|t| {
                let start = self.dyn_index(t, f, 0, 0);
                self.dyn_data[start..start + cells].iter().copied()
            });
            let (m, s) = mean_std(values);
            dyn_mean.push(m);
            dyn_std.push(s);
        }
        let mut stat_mean = Vec::with_capacity(self.n_stat);
        let mut stat_std = Vec::with_capacity(self.n_stat);
        for f in 0..self.n_stat {
            let (m, s) = mean_std(self.stat_data[f * cells..(f + 1) * cells].iter().copied());
            stat_mean.push(m);
            stat_std.push(s);
        }
        Standardization {
            dyn_mean,
            dyn_std,
            stat_mean,
            stat_std,
        }
    }

    /// Applies `(x - mean) / std` feature-wise in place.
    pub fn apply_stats(&mut self, stats: &Standardization) -> Result<()> {
        if stats.dyn_mean.len() != self.n_dyn || stats.stat_mean.len() != self.n_stat {
            return Err(Error::Manifest(
                "standardization sidecar does not match feature counts".into(),
            ));
        }
        let cells = self.cells();
        for t in 0..self.t_len {
            for f in 0..self.n_dyn {
                let start = self.dyn_index(t, f, 0, 0);
                let (m, s) = (stats.dyn_mean[f], stats.dyn_std[f]);
                for v in &mut self.dyn_data[start..start + cells] {
                    *v = ((*v as f64 - m) / s) as f32;
                }
            }
        }
        for f in 0..self.n_stat {
            let (m, s) = (stats.stat_mean[f], stats.stat_std[f]);
            for v in &mut self.stat_data[f * cells..(f + 1) * cells] {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
        Ok(())
    }
}

fn check_len(name: &str, found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::Shape(format!(
            "{name} tensor has {found} elements, expected {expected}"
        )));
    }
    Ok(())
}

fn check_finite(name: &str, data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            tensor: name.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

fn mean_std(values: impl Iterator<Item = f32>) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0f64;
    let mut sq = 0.0f64;
    for v in values {
        let v = v as f64;
        n += 1;
        sum += v;
        sq += v * v;
    }
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0);
    let std = var.sqrt();
    (mean, if std < 1e-12 { 1.0 } else { std })
}

/// Feature-wise standardization statistics, persisted as a text sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub dyn_mean: Vec<f64>,
    pub dyn_std: Vec<f64>,
    pub stat_mean: Vec<f64>,
    pub stat_std: Vec<f64>,
}

impl Standardization {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# kind index mean std\n");
        for (f, (m, s)) in self.dyn_mean.iter().zip(&self.dyn_std).enumerate() {
            let _ = writeln!(out, "dynamic {f} {m} {s}");
        }
        for (f, (m, s)) in self.stat_mean.iter().zip(&self.stat_std).enumerate() {
            let _ = writeln!(out, "static {f} {m} {s}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut stats = Standardization {
            dyn_mean: Vec::new(),
            dyn_std: Vec::new(),
            stat_mean: Vec::new(),
            stat_std: Vec::new(),
        };
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Manifest(format!("malformed stats line `{line}`"));
            if parts.len() != 4 {
                return Err(bad());
            }
            let m: f64 = parts[2].parse().map_err(|_| bad())?;
            let s: f64 = parts[3].parse().map_err(|_| bad())?;
            if !(m.is_finite() && s.is_finite() && s > 0.0) {
                return Err(bad());
            }
            match parts[0] {
                "dynamic" => {
                    stats.dyn_mean.push(m);
                    stats.dyn_std.push(s);
                }
                "static" => {
                    stats.stat_mean.push(m);
                    stats.stat_std.push(s);
                }
                _ => return Err(bad()),
            }
        }
        Ok(stats)
    }
}

/// Parsed manifest contents.
#[derive(Debug, Clone)]
struct Manifest {
    t_len: usize,
    height: usize,
    width: usize,
    n_dyn: usize,
    n_stat: usize,
    dynamic_file: String,
    static_file: String,
    fire_file: String,
    dyn_names: Vec<String>,
    stat_names: Vec<String>,
    standardize: bool,
    train_end: Option<usize>,
    val_end: Option<usize>,
}

fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut kv = BTreeMap::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Manifest(format!("expected `key = value`, got `{line}`")))?;
        let k = k.trim();
        if !MANIFEST_KEYS.contains(&k) {
            return Err(Error::UnknownManifestKey(k.to_string()));
        }
        kv.insert(k.to_string(), v.trim().to_string());
    }
    let get = |k: &str| -> Result<&String> {
        kv.get(k)
            .ok_or_else(|| Error::Manifest(format!("missing key `{k}`")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Manifest(format!("key `{k}` is not a non-negative integer")))
    };
    let opt_num = |k: &str| -> Result<Option<usize>> {
        match kv.get(k) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Manifest(format!("key `{k}` is not a non-negative integer"))),
        }
    };
    if let Some(v) = kv.get("version") {
        if v != "1" {
            return Err(Error::Manifest(format!("unsupported version {v}")));
        }
    }
    if let Some(d) = kv.get("dtype") {
        if d != "f32" {
            return Err(Error::Manifest(format!("unsupported dtype {d}")));
        }
    }
    let n_dyn = num("n_dynamic")?;
    let n_stat = num("n_static")?;
    let names = |k: &str, n: usize, prefix: &str| -> Vec<String> {
        match kv.get(k) {
            Some(v) if !v.is_empty() => v.split(',').map(|s| s.trim().to_string()).collect(),
            _ => (0..n).map(|i| format!("{prefix}{i}")).collect(),
        }
    };
    let standardize = match kv.get("standardize").map(String::as_str) {
        None | Some("false") => false,
        Some("true") => true,
        Some(other) => {
            return Err(Error::Manifest(format!(
                "standardize must be true or false, got {other}"
            )))
        }
    };
    Ok(Manifest {
        t_len: num("t_len")?,
        height: num("height")?,
        width: num("width")?,
        n_dyn,
        n_stat,
        dynamic_file: get("dynamic_file")?.clone(),
        static_file: get("static_file")?.clone(),
        fire_file: get("fire_file")?.clone(),
        dyn_names: names("dynamic_names", n_dyn, "dyn"),
        stat_names: names("static_names", n_stat, "stat"),
        standardize,
        train_end: opt_num("train_end")?,
        val_end: opt_num("val_end")?,
    })
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_f32_file(dir: &Path, name: &str, count: usize) -> Result<Vec<f32>> {
    let bytes = read_bytes(&dir.join(name))?;
    if bytes.len() != count * 4 {
        return Err(Error::DimMismatch {
            file: name.to_string(),
            expected: count * 4,
            found: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Loads a cube from a manifest file or a directory containing `manifest.txt`.
///
/// With `standardize = true`, statistics are read from `stats.txt` when it
/// exists and computed (then written) otherwise.
pub fn load_cube(path: &Path) -> Result<DataCube> {
    let mpath = manifest_path(path);
    let text = String::from_utf8(read_bytes(&mpath)?)
        .map_err(|_| Error::Manifest("manifest is not valid UTF-8".into()))?;
    let m = parse_manifest(&text)?;
    let dir = mpath.parent().unwrap_or_else(|| Path::new("."));
    let (t, h, w) = (m.t_len, m.height, m.width);

    let dyn_data = read_f32_file(dir, &m.dynamic_file, t * m.n_dyn * h * w)?;
    let stat_data = read_f32_file(dir, &m.static_file, m.n_stat * h * w)?;
    let fire = read_bytes(&dir.join(&m.fire_file))?;
    if fire.len() != t * h * w {
        return Err(Error::DimMismatch {
            file: m.fire_file.clone(),
            expected: t * h * w,
            found: fire.len(),
        });
    }
    let mut cube = DataCube {
        t_len: t,
        height: h,
        width: w,
        n_dyn: m.n_dyn,
        n_stat: m.n_stat,
        dyn_data,
        stat_data,
        fire,
        dyn_names: m.dyn_names,
        stat_names: m.stat_names,
        train_end: m.train_end,
        val_end: m.val_end,
    };
    cube.validate()?;
    if m.standardize {
        let spath = dir.join(STATS_FILE);
        let stats = if spath.exists() {
            let text = fs::read_to_string(&spath).map_err(|e| Error::io(&spath, e))?;
            Standardization::from_text(&text)?
        } else {
            let stats = cube.compute_stats();
            fs::write(&spath, stats.to_text()).map_err(|e| Error::io(&spath, e))?;
            stats
        };
        cube.apply_stats(&stats)?;
    }
    Ok(cube)
}

/// Writes `cube` to `dir` in the manifest format.
pub fn save_cube(cube: &DataCube, dir: &Path, standardize: bool) -> Result<()> {
    cube.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    let f32_bytes = |v: &[f32]| -> Vec<u8> { v.iter().flat_map(|x| x.to_le_bytes()).collect() };
    write("dynamic.f32", &f32_bytes(&cube.dyn_data))?;
    write("static.f32", &f32_bytes(&cube.stat_data))?;
    write("fire.u8", &cube.fire)?;

    let mut m = String::from("# spatio-temporal cube manifest\n");
    let _ = writeln!(m, "version = 1");
    let _ = writeln!(m, "t_len = {}", cube.t_len);
    let _ = writeln!(m, "height = {}", cube.height);
    let _ = writeln!(m, "width = {}", cube.width);
    let _ = writeln!(m, "n_dynamic = {}", cube.n_dyn);
    let _ = writeln!(m, "n_static = {}", cube.n_stat);
    let _ = writeln!(m, "dtype = f32");
    let _ = writeln!(m, "dynamic_file = dynamic.f32");
    let _ = writeln!(m, "static_file = static.f32");
    let _ = writeln!(m, "fire_file = fire.u8");
    let _ = writeln!(m, "dynamic_names = {}", cube.dyn_names.join(","));
    let _ = writeln!(m, "static_names = {}", cube.stat_names.join(","));
    let _ = writeln!(m, "standardize = {standardize}");
    if let Some(v) = cube.train_end {
        let _ = writeln!(m, "train_end = {v}");
    }
    if let Some(v) = cube.val_end {
        let _ = writeln!(m, "val_end = {v}");
    }
    // a stale sidecar would silently override new data
    let spath = dir.join(STATS_FILE);
    if spath.exists() {
        fs::remove_file(&spath).map_err(|e| Error::io(&spath, e))?;
    }
    write(MANIFEST_FILE, m.as_bytes())
}

/// How patch labels are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchMode {
    /// Overlapping windows labelled by their central cell.
    SlidingCenter,
    /// Non-overlapping tiles labelled positive if any cell burns.
    Grid,
}

impl PatchMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PatchMode::SlidingCenter => "sliding_center",
            PatchMode::Grid => "grid",
        }
    }
}

impl std::str::FromStr for PatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sliding_center" | "sliding" => Ok(PatchMode::SlidingCenter),
            "grid" => Ok(PatchMode::Grid),
            other => Err(Error::InvalidArgument(format!("unknown patch mode `{other}`"))),
        }
    }
}

/// Patch extent and history length shared by every patch of a set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub mode: PatchMode,
    /// Extent along rows.
    pub w: usize,
    /// Extent along columns.
    pub h: usize,
    pub hist_len: usize,
    pub n_dyn: usize,
    pub n_stat: usize,
}

impl PatchGeometry {
    pub fn dyn_len(&self) -> usize {
        self.hist_len * self.n_dyn * self.w * self.h
    }

    pub fn stat_len(&self) -> usize {
        self.n_stat * self.w * self.h
    }

    /// Spatial step between neighbouring anchors, in cells.
    pub fn stride(&self) -> (usize, usize) {
        match self.mode {
            PatchMode::SlidingCenter => (1, 1),
            PatchMode::Grid => (self.w, self.h),
        }
    }
}

/// One training example.
///
/// `(i, j)` is the central cell for sliding patches and the top-left cell
/// for grid tiles. `dyn_data` is `[L, D_d, w, h]` covering `t-L+1 ..= t`;
/// `label` refers to time `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub id: u64,
    pub t: usize,
    pub i: usize,
    pub j: usize,
    pub label: u8,
    pub dyn_data: Vec<f32>,
    pub stat_data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
    pub split: SplitTag,
    pub geometry: PatchGeometry,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.patches.iter().filter(|p| p.label == 1).count()
    }

    pub fn has_unique_ids(&self) -> bool {
        let mut ids: Vec<u64> = self.patches.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        ids.windows(2).all(|w| w[0] != w[1])
    }

    /// Position of every patch keyed by id.
    pub fn index_by_id(&self) -> std::collections::HashMap<u64, usize> {
        self.patches
            .iter()
            .enumerate()
            .map(|(k, p)| (p.id, k))
            .collect()
    }

    /// Splits by label time `t + 1`: `< train_end` train, `< val_end` val, rest test.
    pub fn split_temporal(self, train_end: usize, val_end: usize) -> (PatchSet, PatchSet, PatchSet) {
        let geometry = self.geometry;
        let mut train = Vec::new();
        let mut val = Vec::new();
        let mut test = Vec::new();
        for p in self.patches {
            let label_t = p.t + 1;
            if label_t < train_end {
                train.push(p);
            } else if label_t < val_end {
                val.push(p);
            } else {
                test.push(p);
            }
        }
        let mk = |patches, split| PatchSet {
            patches,
            split,
            geometry,
        };
        (
            mk(train, SplitTag::Train),
            mk(val, SplitTag::Val),
            mk(test, SplitTag::Test),
        )
    }
}

fn validate_geometry(cube: &DataCube, mode: PatchMode, w: usize, h: usize, hist_len: usize) -> Result<()> {
    if w == 0 || h == 0 || w > cube.height || h > cube.width {
        return Err(Error::Geometry(format!(
            "window {w}x{h} larger than cube {}x{}",
            cube.height, cube.width
        )));
    }
    if mode == PatchMode::SlidingCenter && (w % 2 == 0 || h % 2 == 0) {
        return Err(Error::Geometry(format!(
            "sliding_center requires odd window, got {w}x{h}"
        )));
    }
    if hist_len == 0 || hist_len + 1 > cube.t_len {
        return Err(Error::Geometry(format!(
            "history length {hist_len} too large for {} timesteps",
            cube.t_len
        )));
    }
    Ok(())
}

/// All anchor coordinates `(t, i, j)` valid for the given geometry, in id order.
pub fn anchor_coords(cube: &DataCube, mode: PatchMode, w: usize, h: usize, hist_len: usize) -> Result<Vec<(usize, usize, usize)>> {
    validate_geometry(cube, mode, w, h, hist_len)?;
    let spatial: Vec<(usize, usize)> = match mode {
        PatchMode::SlidingCenter => {
            let (ri, rj) = (w / 2, h / 2);
            (ri..cube.height - ri)
                .flat_map(|i| (rj..cube.width - rj).map(move |j| (i, j)))
                .collect()
        }
        PatchMode::Grid => (0..cube.height / w)
            .flat_map(|bi| (0..cube.width / h).map(move |bj| (bi * w, bj * h)))
            .collect(),
    };
    Ok((hist_len - 1..=cube.t_len - 2)
        .flat_map(|t| spatial.iter().map(move |&(i, j)| (t, i, j)))
        .collect())
}

fn build_patch(cube: &DataCube, geom: &PatchGeometry, id: u64, t: usize, i: usize, j: usize) -> Patch {
    let (w, h, l_len) = (geom.w, geom.h, geom.hist_len);
    let (i0, j0) = match geom.mode {
        PatchMode::SlidingCenter => (i - w / 2, j - h / 2),
        PatchMode::Grid => (i, j),
    };
    let mut dyn_data = Vec::with_capacity(geom.dyn_len());
    for l in 0..l_len {
        let tt = t + 1 + l - l_len;
        for f in 0..cube.n_dyn {
            for x in 0..w {
                let start = cube.dyn_index(tt, f, i0 + x, j0);
                dyn_data.extend_from_slice(&cube.dyn_data[start..start + h]);
            }
        }
    }
    let mut stat_data = Vec::with_capacity(geom.stat_len());
    for f in 0..cube.n_stat {
        for x in 0..w {
            for y in 0..h {
                stat_data.push(cube.stat_at(f, i0 + x, j0 + y));
            }
        }
    }
    let label = match geom.mode {
        PatchMode::SlidingCenter => cube.fire_at(t + 1, i, j),
        PatchMode::Grid => {
            let any = (0..w).any(|x| (0..h).any(|y| cube.fire_at(t + 1, i0 + x, j0 + y) == 1));
            u8::from(any)
        }
    };
    Patch {
        id,
        t,
        i,
        j,
        label,
        dyn_data,
        stat_data,
    }
}

/// Extracts every valid patch of the cube. Ids follow `(t, i, j)` order.
pub fn extract_patches(cube: &DataCube, mode: PatchMode, w: usize, h: usize, hist_len: usize) -> Result<PatchSet> {
    let coords = anchor_coords(cube, mode, w, h, hist_len)?;
    let ids: Vec<u64> = (0..coords.len() as u64).collect();
    extract_at(cube, mode, w, h, hist_len, &coords, &ids)
}

/// Extracts patches at explicit anchors with explicit ids.
pub fn extract_at(
    cube: &DataCube,
    mode: PatchMode,
    w: usize,
    h: usize,
    hist_len: usize,
    coords: &[(usize, usize, usize)],
    ids: &[u64],
) -> Result<PatchSet> {
    validate_geometry(cube, mode, w, h, hist_len)?;
    if coords.len() != ids.len() {
        return Err(Error::InvalidArgument("coords and ids differ in length".into()));
    }
    let geometry = PatchGeometry {
        mode,
        w,
        h,
        hist_len,
        n_dyn: cube.n_dyn,
        n_stat: cube.n_stat,
    };
    for &(t, i, j) in coords {
        let ok_t = t + 1 >= hist_len && t + 1 < cube.t_len;
        let ok_s = match mode {
            PatchMode::SlidingCenter => {
                i >= w / 2 && i + w / 2 < cube.height && j >= h / 2 && j + h / 2 < cube.width
            }
            PatchMode::Grid => i + w <= cube.height && j + h <= cube.width,
        };
        if !(ok_t && ok_s) {
            return Err(Error::Geometry(format!("anchor ({t},{i},{j}) outside the cube")));
        }
    }
    let build = |(&(t, i, j), &id): (&(usize, usize, usize), &u64)| build_patch(cube, &geometry, id, t, i, j);
    let patches: Vec<Patch> = if crate::parallel_enabled() {
        coords.par_iter().zip(ids.par_iter()).map(build).collect()
    } else {
        coords.iter().zip(ids.iter()).map(build).collect()
    };
    Ok(PatchSet {
        patches,
        split: SplitTag::Train,
        geometry,
    })
}
