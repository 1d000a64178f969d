//! Run configuration: flat `key = value` text grouped by `[section]`.
//!
//! ```text
//! # comment
//! [synth]
//! seed = 3
//! regime_scales = 1, 5
//! [train]
//! protocol = full
//! ```
//!
//! Unknown sections or keys are rejected. `section.key=value` overrides
//! (from the command line) are applied after the file.

use std::path::Path;
use std::str::FromStr;

use crate::balance::BalanceConfig;
use crate::cube::PatchMode;
use crate::error::{Error, Result};
use crate::model::{ContrastiveKind, ModelConfig};
use crate::samplers::{ScoreMapConfig, Strategy};
use crate::synth::SynthConfig;
use crate::trainer::{Protocol, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PatchConfig {
    pub mode: PatchMode,
    pub w: usize,
    pub h: usize,
    pub hist_len: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            mode: PatchMode::SlidingCenter,
            w: 3,
            h: 3,
            hist_len: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub patch: PatchConfig,
    pub balance: BalanceConfig,
    pub sampler: ScoreMapConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub const SECTIONS: [&str; 6] = ["synth", "patch", "balance", "sampler", "model", "train"];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("cannot parse `{value}` for `{key}` as a boolean"))),
    }
}

fn parse_opt_f64(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|s| parse(key, s.trim())).collect()
}

impl RunConfig {
    /// Sets one field addressed as `section.key`.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let full = format!("{section}.{key}");
        let k = full.as_str();
        let v = value.trim();
        match (section, key) {
            ("synth", "t_len") => self.synth.t_len = parse(k, v)?,
            ("synth", "height") => self.synth.height = parse(k, v)?,
            ("synth", "width") => self.synth.width = parse(k, v)?,
            ("synth", "n_dyn") => self.synth.n_dyn = parse(k, v)?,
            ("synth", "n_stat") => self.synth.n_stat = parse(k, v)?,
            ("synth", "n_regimes") => self.synth.n_regimes = parse(k, v)?,
            ("synth", "regime_scales") => self.synth.regime_scales = parse_list(k, v)?,
            ("synth", "regime_offset") => self.synth.regime_offset = parse(k, v)?,
            ("synth", "threshold") => self.synth.threshold = parse(k, v)?,
            ("synth", "noise") => self.synth.noise = parse(k, v)?,
            ("synth", "driver_weight") => self.synth.driver_weight = parse(k, v)?,
            ("synth", "ar_coef") => self.synth.ar_coef = parse(k, v)?,
            ("synth", "label_noise") => self.synth.label_noise = parse(k, v)?,
            ("synth", "train_frac") => self.synth.train_frac = parse(k, v)?,
            ("synth", "val_frac") => self.synth.val_frac = parse(k, v)?,
            ("synth", "seed") => self.synth.seed = parse(k, v)?,

            ("patch", "mode") => self.patch.mode = parse(k, v)?,
            ("patch", "w") => self.patch.w = parse(k, v)?,
            ("patch", "h") => self.patch.h = parse(k, v)?,
            ("patch", "hist_len") => self.patch.hist_len = parse(k, v)?,

            ("balance", "proxy_feature_index") => self.balance.proxy_feature_index = parse(k, v)?,
            ("balance", "n_bins") => self.balance.n_bins = parse(k, v)?,
            ("balance", "neg_per_pos") => self.balance.neg_per_pos = parse(k, v)?,
            ("balance", "seed") => self.balance.seed = parse(k, v)?,

            ("sampler", "cap_threshold") => self.sampler.cap_threshold = parse(k, v)?,
            ("sampler", "keep_k") => self.sampler.keep_k = parse(k, v)?,

            ("model", "latent_dim") => self.model.latent_dim = parse(k, v)?,
            ("model", "dyn_hidden") => self.model.dyn_hidden = parse(k, v)?,
            ("model", "stat_hidden") => self.model.stat_hidden = parse(k, v)?,
            ("model", "head_hidden") => self.model.head_hidden = parse(k, v)?,
            ("model", "modulation") => self.model.modulation = parse_bool(k, v)?,

            ("train", "protocol") => self.train.protocol = v.parse::<Protocol>().map_err(|e| Error::Config(e.to_string()))?,
            ("train", "strategy") => self.train.strategy = v.parse::<Strategy>().map_err(|e| Error::Config(e.to_string()))?,
            ("train", "loss") => self.train.loss = v.parse::<ContrastiveKind>().map_err(|e| Error::Config(e.to_string()))?,
            ("train", "epochs_pre") => self.train.epochs_pre = parse(k, v)?,
            ("train", "epochs_cl") => self.train.epochs_cl = parse(k, v)?,
            ("train", "lr_pre") => self.train.lr_pre = parse(k, v)?,
            ("train", "lr_cl") => self.train.lr_cl = parse_opt_f64(k, v)?,
            ("train", "margin") => self.train.margin = parse_opt_f64(k, v)?,
            ("train", "tau") => self.train.tau = parse(k, v)?,
            ("train", "norm_p") => self.train.norm_p = parse(k, v)?,
            ("train", "batch_size") => self.train.batch_size = parse(k, v)?,
            ("train", "seed") => self.train.seed = parse(k, v)?,
            ("train", "q0") => self.train.q0 = parse(k, v)?,
            ("train", "q1") => self.train.q1 = parse(k, v)?,
            _ => return Err(Error::UnknownConfigKey(full)),
        }
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::UnknownConfigKey(path.trim().to_string()))?;
        self.set(section, key, value)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::UnknownConfigKey(format!("[{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let sec = section
                .as_deref()
                .ok_or_else(|| Error::Config(format!("line {}: key outside of a section", n + 1)))?;
            cfg.set(sec, key.trim(), value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Loads `path` if given, then applies overrides in order.
    pub fn load_with(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        for o in overrides {
            cfg.apply_override(o)?;
        }
        Ok(cfg)
    }
}
