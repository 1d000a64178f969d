//! Training protocols.
//!
//! * `ce_only`: cross-entropy for `epochs_pre` epochs at `lr_pre`.
//! * `finetune`: the `ce_only` phase, then `epochs_cl` epochs of
//!   `CE + gamma * CL` at `lr_cl` over the strategy's anchor set.
//! * `full`: `CE + gamma * CL` at `lr_cl` for `epochs_pre + epochs_cl` epochs.
//!
//! Every random choice derives from the run seed and the epoch index, so an
//! epoch can be replayed from a checkpoint with identical results.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cube::{Patch, PatchSet};
use crate::diagnostics::{fmt_opt, MetricsReport};
use crate::error::{Error, Result};
use crate::losses::{combined_objective, sigmoid, LossConfig};
use crate::model::{
    init_params, objective_parts, sgd_step, BatchItem, ContrastiveKind, Gradients, InputGeometry, ModelConfig,
    ModelParams, Objective,
};
use crate::samplers::{anchor_rng, sample_triplet, CurriculumSchedule, SamplerMaps, Strategy};

/// Fine-tuning epochs allowed for label sampling with the triplet loss.
pub const LABEL_FINETUNE_CAP: usize = 5;
/// Margin used by the historical and curriculum strategies when unset.
pub const DEFAULT_MARGIN_MORPHOLOGY: f64 = 5.0;
/// Margin used by label sampling when unset.
pub const DEFAULT_MARGIN_LABEL: f64 = 20.0;
/// `lr_cl = LR_BUMP * lr_pre` when unset.
pub const LR_BUMP: f64 = 10.0;
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    CeOnly,
    Finetune,
    Full,
}

impl Protocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::CeOnly => "ce_only",
            Protocol::Finetune => "finetune",
            Protocol::Full => "full",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce_only" => Ok(Protocol::CeOnly),
            "finetune" => Ok(Protocol::Finetune),
            "full" => Ok(Protocol::Full),
            other => Err(Error::InvalidArgument(format!("unknown protocol `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub protocol: Protocol,
    pub strategy: Strategy,
    pub loss: ContrastiveKind,
    pub epochs_pre: usize,
    pub epochs_cl: usize,
    pub lr_pre: f64,
    /// Defaults to `LR_BUMP * lr_pre`.
    pub lr_cl: Option<f64>,
    /// Defaults per strategy.
    pub margin: Option<f64>,
    pub tau: f64,
    pub norm_p: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub q0: f64,
    pub q1: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Full,
            strategy: Strategy::Curriculum,
            loss: ContrastiveKind::Triplet,
            epochs_pre: 15,
            epochs_cl: 5,
            lr_pre: 5e-3,
            lr_cl: None,
            margin: None,
            tau: 0.1,
            norm_p: 2.0,
            batch_size: 32,
            seed: 0,
            q0: 0.1,
            q1: 1.0,
        }
    }
}

/// A config with every default filled in and every invariant checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub protocol: Protocol,
    pub strategy: Strategy,
    pub loss: ContrastiveKind,
    pub epochs_pre: usize,
    pub epochs_cl: usize,
    pub lr_pre: f64,
    pub lr_cl: f64,
    pub loss_cfg: LossConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: CurriculumSchedule,
    pub warnings: Vec<String>,
}

impl ResolvedConfig {
    pub fn total_epochs(&self) -> usize {
        match self.protocol {
            Protocol::CeOnly => self.epochs_pre,
            Protocol::Finetune | Protocol::Full => self.epochs_pre + self.epochs_cl,
        }
    }

    /// Whether `epoch` trains with the contrastive term, and its index
    /// within the contrastive phase.
    pub fn cl_epoch(&self, epoch: usize) -> Option<usize> {
        match self.protocol {
            Protocol::CeOnly => None,
            Protocol::Full => Some(epoch),
            Protocol::Finetune => epoch.checked_sub(self.epochs_pre),
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.cl_epoch(epoch).is_some() {
            self.lr_cl
        } else {
            self.lr_pre
        }
    }
}

impl TrainConfig {
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let mut warnings = Vec::new();
        if self.protocol == Protocol::Full && self.strategy == Strategy::Historical {
            return Err(Error::Config(
                "forbidden combination protocol=full with strategy=historical: historical sampling only supports the finetune protocol".into(),
            ));
        }
        if matches!(self.protocol, Protocol::Finetune | Protocol::CeOnly) && self.epochs_pre == 0 {
            return Err(Error::Config(format!(
                "protocol={} requires epochs_pre > 0",
                self.protocol.as_str()
            )));
        }
        if self.protocol == Protocol::Full && self.epochs_pre + self.epochs_cl == 0 {
            return Err(Error::Config("protocol=full requires at least one epoch".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr_pre >= 0.0 && self.lr_pre.is_finite()) {
            return Err(Error::Config("lr_pre must be a finite non-negative number".into()));
        }
        let mut epochs_cl = self.epochs_cl;
        if self.protocol == Protocol::Finetune
            && self.strategy == Strategy::Label
            && self.loss == ContrastiveKind::Triplet
            && epochs_cl > LABEL_FINETUNE_CAP
        {
            warnings.push(format!(
                "epochs_cl clamped from {epochs_cl} to {LABEL_FINETUNE_CAP} for label-sampled triplet fine-tuning"
            ));
            epochs_cl = LABEL_FINETUNE_CAP;
        }
        let margin = self.margin.unwrap_or(match self.strategy {
            Strategy::Label => DEFAULT_MARGIN_LABEL,
            Strategy::Historical | Strategy::Curriculum => DEFAULT_MARGIN_MORPHOLOGY,
        });
        let lr_cl = self.lr_cl.unwrap_or(LR_BUMP * self.lr_pre);
        if !(lr_cl >= 0.0 && lr_cl.is_finite()) {
            return Err(Error::Config("lr_cl must be a finite non-negative number".into()));
        }
        let loss_cfg = LossConfig {
            margin,
            p: self.norm_p,
            tau: self.tau,
        };
        loss_cfg.validate()?;
        let cl_epochs = match self.protocol {
            Protocol::Full => self.epochs_pre + epochs_cl,
            _ => epochs_cl,
        };
        let schedule = CurriculumSchedule {
            q0: self.q0,
            q1: self.q1,
            epochs: cl_epochs,
        };
        schedule.validate()?;
        Ok(ResolvedConfig {
            protocol: self.protocol,
            strategy: self.strategy,
            loss: self.loss,
            epochs_pre: self.epochs_pre,
            epochs_cl,
            lr_pre: self.lr_pre,
            lr_cl,
            loss_cfg,
            batch_size: self.batch_size,
            seed: self.seed,
            schedule,
            warnings,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    /// `ce` or `cl`.
    pub phase: &'static str,
    pub ce: f64,
    pub cl: f64,
    pub gamma: f64,
    pub val_f1: Option<f64>,
    pub val_auroc: Option<f64>,
    /// Curriculum percentile in force, for curriculum CL epochs.
    pub window_q: Option<f64>,
    /// Batch items that received a contrastive sample.
    pub n_triplets: usize,
}

pub const HISTORY_COLUMNS: [&str; 8] = ["epoch", "phase", "ce", "cl", "gamma", "val_f1", "val_auroc", "window_q"];

pub fn write_history_csv<W: Write>(rows: &[HistoryRow], w: W) -> Result<()> {
    write_history_rows(rows, w, true)
}

/// Writes history rows, optionally preceded by the header line.
pub fn write_history_rows<W: Write>(rows: &[HistoryRow], w: W, header: bool) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if header {
        out.write_record(HISTORY_COLUMNS)?;
    }
    for r in rows {
        out.write_record([
            r.epoch.to_string(),
            r.phase.to_string(),
            format!("{}", r.ce),
            format!("{}", r.cl),
            format!("{}", r.gamma),
            fmt_opt(r.val_f1),
            fmt_opt(r.val_auroc),
            r.window_q.map_or_else(|| "NA".to_string(), |q| format!("{q}")),
        ])?;
    }
    out.flush().map_err(|e| Error::io("history csv", e))?;
    Ok(())
}

fn mix(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_add(0xD1B5_4A32_D192_ED03)
}

/// Runs epochs of one training configuration over fixed data.
pub struct Trainer<'a> {
    pub cfg: ResolvedConfig,
    train: &'a PatchSet,
    val: Option<&'a PatchSet>,
    maps: SamplerMaps,
    by_id: HashMap<u64, usize>,
    /// Train indices used as anchors during the contrastive phase.
    cl_anchors: Vec<usize>,
}

impl<'a> Trainer<'a> {
    /// `maps` may be supplied precomputed; missing strategy maps are built.
    pub fn new(train: &'a PatchSet, val: Option<&'a PatchSet>, cfg: &TrainConfig, maps: Option<SamplerMaps>) -> Result<Self> {
        let cfg = cfg.resolve()?;
        if train.is_empty() {
            return Err(Error::Empty("training split".into()));
        }
        let mut maps = match maps {
            Some(m) => m,
            None => SamplerMaps::build(train, Strategy::Label)?,
        };
        if cfg.protocol != Protocol::CeOnly {
            maps.ensure(train, cfg.strategy)?;
        }
        let by_id = train.index_by_id();
        let cl_anchors: Vec<usize> = match (cfg.protocol, cfg.strategy) {
            (Protocol::CeOnly, _) => Vec::new(),
            (_, Strategy::Historical) => {
                let hist = maps.historical.as_ref().ok_or_else(|| Error::MissingMap("historical".into()))?;
                train
                    .patches
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| {
                        hist.entries
                            .get(&p.id)
                            .is_some_and(|e| !e.positives.is_empty() && !e.negatives.is_empty())
                    })
                    .map(|(k, _)| k)
                    .collect()
            }
            _ => (0..train.len()).collect(),
        };
        if cfg.protocol != Protocol::CeOnly && cl_anchors.is_empty() {
            return Err(Error::Insufficient(format!(
                "no anchors available for {} sampling",
                cfg.strategy.as_str()
            )));
        }
        Ok(Self {
            cfg,
            train,
            val,
            maps,
            by_id,
            cl_anchors,
        })
    }

    pub fn maps(&self) -> &SamplerMaps {
        &self.maps
    }

    pub fn total_epochs(&self) -> usize {
        self.cfg.total_epochs()
    }

    pub fn init(&self, model: &ModelConfig) -> Result<ModelParams> {
        init_params(model, InputGeometry::from(&self.train.geometry), self.cfg.seed)
    }

    pub fn run_epoch(&self, params: &mut ModelParams, epoch: usize) -> Result<HistoryRow> {
        let cl_epoch = self.cfg.cl_epoch(epoch);
        let lr = self.cfg.lr_at(epoch);
        let mut order: Vec<usize> = match cl_epoch {
            Some(_) => self.cl_anchors.clone(),
            None => (0..self.train.len()).collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.cfg.seed, epoch));
        order.shuffle(&mut rng);
        let objective = Objective {
            contrastive: cl_epoch.map(|_| self.cfg.loss),
            loss: self.cfg.loss_cfg,
        };
        let (mut ce_sum, mut cl_sum, mut gamma_sum) = (0.0, 0.0, 0.0);
        let mut n_batches = 0usize;
        let mut n_triplets = 0usize;
        for chunk in order.chunks(self.cfg.batch_size) {
            let mut items = Vec::with_capacity(chunk.len());
            for &k in chunk {
                let anchor = &self.train.patches[k];
                let triplet = match cl_epoch {
                    Some(e) => self.draw(anchor, e)?,
                    None => None,
                };
                n_triplets += usize::from(triplet.is_some());
                items.push(BatchItem { anchor, triplet });
            }
            let parts = objective_parts(params, &items, &objective)?;
            let combined = combined_objective(parts.ce, &parts.grad_ce.data, parts.cl, &parts.grad_cl.data)?;
            sgd_step(params, &Gradients { data: combined.grads }, lr)?;
            ce_sum += parts.ce;
            cl_sum += parts.cl;
            gamma_sum += combined.gamma;
            n_batches += 1;
        }
        if params.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: format!("params after epoch {epoch}"),
                index: params.data.iter().position(|v| !v.is_finite()).unwrap_or(0),
            });
        }
        let nb = n_batches.max(1) as f64;
        let (val_f1, val_auroc) = match self.val {
            Some(v) if !v.is_empty() => {
                let m = evaluate(params, v)?;
                (m.macro_f1(), m.auroc)
            }
            _ => (None, None),
        };
        let window_q = match (cl_epoch, self.cfg.strategy) {
            (Some(e), Strategy::Curriculum) => Some(self.cfg.schedule.percentile(e)),
            _ => None,
        };
        Ok(HistoryRow {
            epoch,
            phase: if cl_epoch.is_some() { "cl" } else { "ce" },
            ce: ce_sum / nb,
            cl: cl_sum / nb,
            gamma: gamma_sum / nb,
            val_f1,
            val_auroc,
            window_q,
            n_triplets,
        })
    }

    fn draw(&self, anchor: &'a Patch, cl_epoch: usize) -> Result<Option<(&'a Patch, &'a Patch)>> {
        let mut rng = anchor_rng(self.cfg.seed, cl_epoch, anchor.id);
        let pair = sample_triplet(self.cfg.strategy, anchor, cl_epoch, &self.maps, &self.cfg.schedule, &mut rng)?;
        Ok(pair.map(|(p, n)| (&self.train.patches[self.by_id[&p]], &self.train.patches[self.by_id[&n]])))
    }

    /// Runs epochs `start..end`, calling `on_epoch` after each one.
    pub fn run<F>(&self, params: &mut ModelParams, start: usize, end: usize, mut on_epoch: F) -> Result<Vec<HistoryRow>>
    where
        F: FnMut(&ModelParams, &HistoryRow) -> Result<()>,
    {
        let end = end.min(self.total_epochs());
        let mut rows = Vec::with_capacity(end.saturating_sub(start));
        for epoch in start..end {
            let row = self.run_epoch(params, epoch)?;
            on_epoch(params, &row)?;
            rows.push(row);
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<HistoryRow>,
    pub warnings: Vec<String>,
}

/// Trains from a fresh initialization seeded by `cfg.seed`.
pub fn train(train: &PatchSet, val: Option<&PatchSet>, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let trainer = Trainer::new(train, val, cfg, None)?;
    let mut params = trainer.init(model)?;
    let history = trainer.run(&mut params, 0, trainer.total_epochs(), |_, _| Ok(()))?;
    Ok(TrainOutcome {
        params,
        history,
        warnings: trainer.cfg.warnings.clone(),
    })
}

/// Sigmoid probabilities of every patch, in set order.
pub fn predict(params: &ModelParams, patches: &PatchSet) -> Result<Vec<f64>> {
    let f = |p: &Patch| params.forward(p).map(|t| sigmoid(t.logit));
    if crate::parallel_enabled() {
        patches.patches.par_iter().map(f).collect()
    } else {
        patches.patches.iter().map(f).collect()
    }
}

/// Dynamic latents `z_d` of every patch, in set order.
pub fn latents(params: &ModelParams, patches: &PatchSet) -> Result<Vec<Vec<f64>>> {
    let f = |p: &Patch| params.forward(p).map(|t| t.z_d);
    if crate::parallel_enabled() {
        patches.patches.par_iter().map(f).collect()
    } else {
        patches.patches.iter().map(f).collect()
    }
}

pub fn evaluate(params: &ModelParams, patches: &PatchSet) -> Result<MetricsReport> {
    if patches.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let probs = predict(params, patches)?;
    let labels: Vec<u8> = patches.patches.iter().map(|p| p.label).collect();
    MetricsReport::from_scores(&probs, &labels, DECISION_THRESHOLD)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_historical_rejected() {
        let cfg = TrainConfig {
            protocol: Protocol::Full,
            strategy: Strategy::Historical,
            ..Default::default()
        };
        match cfg.resolve() {
            Err(Error::Config(m)) => assert!(m.contains("protocol=full") && m.contains("historical")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn label_triplet_finetune_clamped() {
        let cfg = TrainConfig {
            protocol: Protocol::Finetune,
            strategy: Strategy::Label,
            loss: ContrastiveKind::Triplet,
            epochs_cl: 7,
            ..Default::default()
        };
        let r = cfg.resolve().unwrap();
        assert_eq!(r.epochs_cl, 5);
        assert_eq!(r.warnings.len(), 1);
        // scl is not clamped
        let r = TrainConfig {
            loss: ContrastiveKind::Scl,
            ..cfg
        }
        .resolve()
        .unwrap();
        assert_eq!(r.epochs_cl, 7);
    }

    #[test]
    fn defaults_margin_and_lr() {
        let base = TrainConfig {
            lr_pre: 3e-5,
            ..Default::default()
        };
        let label = TrainConfig {
            strategy: Strategy::Label,
            ..base.clone()
        }
        .resolve()
        .unwrap();
        assert_eq!(label.loss_cfg.margin, 20.0);
        let curr = base.resolve().unwrap();
        assert_eq!(curr.loss_cfg.margin, 5.0);
        assert!((curr.lr_cl - 3e-4).abs() < 1e-18);
        let hist = TrainConfig {
            protocol: Protocol::Finetune,
            strategy: Strategy::Historical,
            ..base
        }
        .resolve()
        .unwrap();
        assert_eq!(hist.loss_cfg.margin, 5.0);
    }

    #[test]
    fn finetune_needs_pretraining() {
        let cfg = TrainConfig {
            protocol: Protocol::Finetune,
            epochs_pre: 0,
            ..Default::default()
        };
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn epoch_phases() {
        let r = TrainConfig {
            protocol: Protocol::Finetune,
            epochs_pre: 3,
            epochs_cl: 2,
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(r.total_epochs(), 5);
        assert_eq!(r.cl_epoch(2), None);
        assert_eq!(r.cl_epoch(3), Some(0));
        assert_eq!(r.lr_at(3), 10.0 * r.lr_at(0));
    }
}
