//! Dual-branch classifier with hand-written reverse-mode gradients.
//!
//! ```text
//! x_d --dyn1--> a1 --FiLM(scale, shift)--> h1 --relu--> r1 --dyn2--> z_d --+
//!                        ^                                                  |-- concat --head1--relu--head2--> logit
//! x_s --stat1--relu--> s1 --stat2--> z_s -----------------------------------+
//!                       \--film--> (scale - 1, shift)
//! ```
//!
//! All weights live in one flat `f64` buffer; [`Layout`] records where each
//! tensor starts. Gradients share the same layout, so the optimizer step is
//! a single fused loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cube::{Patch, PatchGeometry};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig};
use crate::sidecar::Sidecar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub dyn_hidden: usize,
    pub stat_hidden: usize,
    pub head_hidden: usize,
    pub modulation: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            dyn_hidden: 32,
            stat_hidden: 16,
            head_hidden: 16,
            modulation: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 2 {
            return Err(Error::Config("model.latent_dim must be >= 2".into()));
        }
        if self.dyn_hidden == 0 || self.stat_hidden == 0 || self.head_hidden == 0 {
            return Err(Error::Config("model hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// Flattened input sizes of the two branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputGeometry {
    pub dyn_in: usize,
    pub stat_in: usize,
}

impl From<&PatchGeometry> for InputGeometry {
    fn from(g: &PatchGeometry) -> Self {
        Self {
            dyn_in: g.dyn_len(),
            stat_in: g.stat_len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub n_out: usize,
    pub n_in: usize,
    pub offset: usize,
}

impl LayerSpec {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.n_out * self.n_in
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let s = self.offset + self.n_out * self.n_in;
        s..s + self.n_out
    }

    pub fn len(&self) -> usize {
        self.n_out * (self.n_in + 1)
    }
}

pub const DYN1: usize = 0;
pub const DYN2: usize = 1;
pub const STAT1: usize = 2;
pub const STAT2: usize = 3;
pub const FILM: usize = 4;
pub const HEAD1: usize = 5;
pub const HEAD2: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub layers: [LayerSpec; 7],
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig, geom: &InputGeometry) -> Self {
        let k = cfg.latent_dim;
        let shapes = [
            ("dyn1", cfg.dyn_hidden, geom.dyn_in),
            ("dyn2", k, cfg.dyn_hidden),
            ("stat1", cfg.stat_hidden, geom.stat_in),
            ("stat2", k, cfg.stat_hidden),
            ("film", 2 * cfg.dyn_hidden, cfg.stat_hidden),
            ("head1", cfg.head_hidden, 2 * k),
            ("head2", 1, cfg.head_hidden),
        ];
        let mut offset = 0;
        let layers = shapes.map(|(name, n_out, n_in)| {
            let spec = LayerSpec {
                name,
                n_out,
                n_in,
                offset,
            };
            offset += spec.len();
            spec
        });
        Layout {
            layers,
            total: offset,
        }
    }

    /// Index ranges of parameters belonging to the classifier head.
    pub fn head_ranges(&self) -> [std::ops::Range<usize>; 2] {
        let h1 = &self.layers[HEAD1];
        let h2 = &self.layers[HEAD2];
        [h1.offset..h1.offset + h1.len(), h2.offset..h2.offset + h2.len()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub geom: InputGeometry,
    pub layout: Layout,
    pub data: Vec<f64>,
}

/// Same layout as [`ModelParams::data`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub data: Vec<f64>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Self { data: vec![0.0; n] }
    }
}

/// Xavier-uniform weights, zero biases.
pub fn init_params(cfg: &ModelConfig, geom: InputGeometry, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    if geom.dyn_in == 0 || geom.stat_in == 0 {
        return Err(Error::Geometry("model inputs must be non-empty".into()));
    }
    let layout = Layout::new(cfg, &geom);
    let mut data = vec![0.0; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for spec in &layout.layers {
        let a = xavier_bound(spec.n_in, spec.n_out);
        for v in &mut data[spec.weight_range()] {
            *v = rng.random_range(-a..=a);
        }
    }
    Ok(ModelParams {
        cfg: *cfg,
        geom,
        layout,
        data,
    })
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn affine(data: &[f64], spec: &LayerSpec, x: &[f64]) -> Vec<f64> {
    let w = &data[spec.weight_range()];
    let b = &data[spec.bias_range()];
    (0..spec.n_out)
        .map(|o| {
            let row = &w[o * spec.n_in..(o + 1) * spec.n_in];
            b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
        })
        .collect()
}

/// Accumulates weight/bias gradients and returns the input gradient.
fn affine_backward(data: &[f64], spec: &LayerSpec, x: &[f64], dy: &[f64], grads: &mut [f64], need_dx: bool) -> Vec<f64> {
    let wr = spec.weight_range();
    let br = spec.bias_range();
    {
        let gw = &mut grads[wr.clone()];
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &mut gw[o * spec.n_in..(o + 1) * spec.n_in];
            row.iter_mut().zip(x).for_each(|(g, xi)| *g += d * xi);
        }
    }
    grads[br].iter_mut().zip(dy).for_each(|(g, d)| *g += d);
    if !need_dx {
        return Vec::new();
    }
    let w = &data[wr];
    let mut dx = vec![0.0; spec.n_in];
    for (o, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &w[o * spec.n_in..(o + 1) * spec.n_in];
        dx.iter_mut().zip(row).for_each(|(g, wi)| *g += d * wi);
    }
    dx
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

fn relu_mask(pre: &[f64], d: &[f64]) -> Vec<f64> {
    pre.iter().zip(d).map(|(p, g)| if *p > 0.0 { *g } else { 0.0 }).collect()
}

/// Values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub logit: f64,
    pub z_d: Vec<f64>,
    pub z_s: Vec<f64>,
    x_d: Vec<f64>,
    x_s: Vec<f64>,
    a1: Vec<f64>,
    scale: Vec<f64>,
    h1: Vec<f64>,
    r1: Vec<f64>,
    s_pre: Vec<f64>,
    s_act: Vec<f64>,
    concat: Vec<f64>,
    g_pre: Vec<f64>,
    g_act: Vec<f64>,
}

impl ForwardTrace {
    /// Smallest |pre-activation| over every rectifier; used to keep
    /// finite-difference checks away from kinks.
    pub fn min_kink_distance(&self) -> f64 {
        self.h1
            .iter()
            .chain(&self.s_pre)
            .chain(&self.g_pre)
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

impl ModelParams {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn check_patch(&self, patch: &Patch) -> Result<()> {
        if patch.dyn_data.len() != self.geom.dyn_in || patch.stat_data.len() != self.geom.stat_in {
            return Err(Error::Geometry(format!(
                "patch {} has inputs ({}, {}), model expects ({}, {})",
                patch.id,
                patch.dyn_data.len(),
                patch.stat_data.len(),
                self.geom.dyn_in,
                self.geom.stat_in
            )));
        }
        Ok(())
    }

    pub fn forward(&self, patch: &Patch) -> Result<ForwardTrace> {
        self.check_patch(patch)?;
        let x_d: Vec<f64> = patch.dyn_data.iter().map(|&v| v as f64).collect();
        let x_s: Vec<f64> = patch.stat_data.iter().map(|&v| v as f64).collect();
        Ok(self.forward_raw(x_d, x_s))
    }

    pub fn forward_raw(&self, x_d: Vec<f64>, x_s: Vec<f64>) -> ForwardTrace {
        let l = &self.layout.layers;
        let d = &self.data;
        let hd = self.cfg.dyn_hidden;

        let s_pre = affine(d, &l[STAT1], &x_s);
        let s_act = relu(&s_pre);
        let z_s = affine(d, &l[STAT2], &s_act);

        let a1 = affine(d, &l[DYN1], &x_d);
        let (scale, h1) = if self.cfg.modulation {
            let m = affine(d, &l[FILM], &s_act);
            let scale: Vec<f64> = m[..hd].iter().map(|v| 1.0 + v).collect();
            let h1 = (0..hd).map(|k| scale[k] * a1[k] + m[hd + k]).collect();
            (scale, h1)
        } else {
            (vec![1.0; hd], a1.clone())
        };
        let r1 = relu(&h1);
        let z_d = affine(d, &l[DYN2], &r1);

        let mut concat = z_d.clone();
        concat.extend_from_slice(&z_s);
        let g_pre = affine(d, &l[HEAD1], &concat);
        let g_act = relu(&g_pre);
        let logit = affine(d, &l[HEAD2], &g_act)[0];
        ForwardTrace {
            logit,
            z_d,
            z_s,
            x_d,
            x_s,
            a1,
            scale,
            h1,
            r1,
            s_pre,
            s_act,
            concat,
            g_pre,
            g_act,
        }
    }

    /// Backpropagates `d_logit` through the head and `d_zd` directly into the
    /// dynamic latent, accumulating into `grads`.
    pub fn backward_trace(&self, trace: &ForwardTrace, d_logit: f64, d_zd: Option<&[f64]>, grads: &mut Gradients) {
        let l = &self.layout.layers;
        let d = &self.data;
        let g = &mut grads.data;
        let k = self.cfg.latent_dim;
        let hd = self.cfg.dyn_hidden;

        let mut dz_d = vec![0.0; k];
        let mut dz_s = vec![0.0; k];
        if d_logit != 0.0 {
            let dg_act = affine_backward(d, &l[HEAD2], &trace.g_act, &[d_logit], g, true);
            let dg_pre = relu_mask(&trace.g_pre, &dg_act);
            let dconcat = affine_backward(d, &l[HEAD1], &trace.concat, &dg_pre, g, true);
            dz_d.copy_from_slice(&dconcat[..k]);
            dz_s.copy_from_slice(&dconcat[k..]);
        }
        if let Some(extra) = d_zd {
            dz_d.iter_mut().zip(extra).for_each(|(a, b)| *a += b);
        }

        let dr1 = affine_backward(d, &l[DYN2], &trace.r1, &dz_d, g, true);
        let dh1 = relu_mask(&trace.h1, &dr1);
        let mut ds_act = vec![0.0; self.cfg.stat_hidden];
        let da1 = if self.cfg.modulation {
            let mut dm = vec![0.0; 2 * hd];
            for j in 0..hd {
                dm[j] = dh1[j] * trace.a1[j];
                dm[hd + j] = dh1[j];
            }
            let back = affine_backward(d, &l[FILM], &trace.s_act, &dm, g, true);
            ds_act.iter_mut().zip(&back).for_each(|(a, b)| *a += b);
            dh1.iter().zip(&trace.scale).map(|(a, s)| a * s).collect()
        } else {
            dh1
        };
        affine_backward(d, &l[DYN1], &trace.x_d, &da1, g, false);

        let back = affine_backward(d, &l[STAT2], &trace.s_act, &dz_s, g, true);
        ds_act.iter_mut().zip(&back).for_each(|(a, b)| *a += b);
        let ds_pre = relu_mask(&trace.s_pre, &ds_act);
        affine_backward(d, &l[STAT1], &trace.x_s, &ds_pre, g, false);
    }

    pub fn to_sidecar(&self) -> Sidecar {
        let mut s = Sidecar::new();
        s.set_meta("kind", "model_params");
        s.set_meta("latent_dim", self.cfg.latent_dim);
        s.set_meta("dyn_hidden", self.cfg.dyn_hidden);
        s.set_meta("stat_hidden", self.cfg.stat_hidden);
        s.set_meta("head_hidden", self.cfg.head_hidden);
        s.set_meta("modulation", self.cfg.modulation);
        s.set_meta("dyn_in", self.geom.dyn_in);
        s.set_meta("stat_in", self.geom.stat_in);
        for spec in &self.layout.layers {
            s.push(
                &format!("{}.weight", spec.name),
                vec![spec.n_out as u64, spec.n_in as u64],
                crate::sidecar::ArrayData::F64(self.data[spec.weight_range()].to_vec()),
            );
            s.push_f64(&format!("{}.bias", spec.name), self.data[spec.bias_range()].to_vec());
        }
        s
    }

    pub fn from_sidecar(s: &Sidecar) -> Result<Self> {
        if s.meta("kind")? != "model_params" {
            return Err(Error::Sidecar("not a model parameter sidecar".into()));
        }
        let cfg = ModelConfig {
            latent_dim: s.meta_parse("latent_dim")?,
            dyn_hidden: s.meta_parse("dyn_hidden")?,
            stat_hidden: s.meta_parse("stat_hidden")?,
            head_hidden: s.meta_parse("head_hidden")?,
            modulation: s.meta_parse("modulation")?,
        };
        cfg.validate()?;
        let geom = InputGeometry {
            dyn_in: s.meta_parse("dyn_in")?,
            stat_in: s.meta_parse("stat_in")?,
        };
        let layout = Layout::new(&cfg, &geom);
        let mut data = vec![0.0; layout.total];
        for spec in &layout.layers {
            let w = s.f64s(&format!("{}.weight", spec.name))?;
            let b = s.f64s(&format!("{}.bias", spec.name))?;
            if w.len() != spec.n_out * spec.n_in || b.len() != spec.n_out {
                return Err(Error::Shape(format!("layer {} has wrong size", spec.name)));
            }
            data[spec.weight_range()].copy_from_slice(w);
            data[spec.bias_range()].copy_from_slice(b);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: "params".into(),
                index: data.iter().position(|v| !v.is_finite()).unwrap_or(0),
            });
        }
        Ok(ModelParams {
            cfg,
            geom,
            layout,
            data,
        })
    }
}

/// `p <- p - lr * g`.
pub fn sgd_step(params: &mut ModelParams, grads: &Gradients, lr: f64) -> Result<()> {
    if grads.data.len() != params.data.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries, params {}",
            grads.data.len(),
            params.data.len()
        )));
    }
    params
        .data
        .iter_mut()
        .zip(&grads.data)
        .for_each(|(p, g)| *p -= lr * g);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastiveKind {
    Triplet,
    Scl,
}

impl ContrastiveKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ContrastiveKind::Triplet => "triplet",
            ContrastiveKind::Scl => "scl",
        }
    }
}

impl std::str::FromStr for ContrastiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplet" => Ok(ContrastiveKind::Triplet),
            "scl" => Ok(ContrastiveKind::Scl),
            other => Err(Error::InvalidArgument(format!("unknown loss `{other}`"))),
        }
    }
}

/// Which terms enter the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub contrastive: Option<ContrastiveKind>,
    pub loss: LossConfig,
}

impl Objective {
    pub fn ce_only() -> Self {
        Self {
            contrastive: None,
            loss: LossConfig::default(),
        }
    }
}

/// One batch element: the anchor and, when sampling succeeded, its positive
/// and negative.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub anchor: &'a Patch,
    pub triplet: Option<(&'a Patch, &'a Patch)>,
}

/// Loss values and separate gradients of the two objective terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveParts {
    pub ce: f64,
    pub cl: f64,
    pub grad_ce: Gradients,
    pub grad_cl: Gradients,
    /// Number of contrastive samples that entered the CL term.
    pub n_contrastive: usize,
}

/// Evaluates CE over the anchors and the configured CL term over the
/// dynamic latents, returning each term's gradient separately.
pub fn objective_parts(params: &ModelParams, batch: &[BatchItem], objective: &Objective) -> Result<ObjectiveParts> {
    if batch.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    let n = params.len();
    let mut grad_ce = Gradients::zeros(n);
    let mut grad_cl = Gradients::zeros(n);
    let inv_b = 1.0 / batch.len() as f64;
    let mut ce = 0.0;
    let mut anchors = Vec::with_capacity(batch.len());
    for item in batch {
        let tr = params.forward(item.anchor)?;
        let (v, g) = losses::binary_cross_entropy(tr.logit, item.anchor.label);
        ce += v * inv_b;
        params.backward_trace(&tr, g * inv_b, None, &mut grad_ce);
        anchors.push(tr);
    }
    let Some(kind) = objective.contrastive else {
        return Ok(ObjectiveParts {
            ce,
            cl: 0.0,
            grad_ce,
            grad_cl,
            n_contrastive: 0,
        });
    };
    let mut extra = Vec::new();
    let mut members = Vec::new();
    for (k, item) in batch.iter().enumerate() {
        if let Some((p, q)) = item.triplet {
            extra.push((params.forward(p)?, params.forward(q)?));
            members.push(k);
        }
    }
    let (cl, n_contrastive) = match kind {
        ContrastiveKind::Triplet => {
            if members.is_empty() {
                (0.0, 0)
            } else {
                let triples: Vec<(&[f64], &[f64], &[f64])> = members
                    .iter()
                    .zip(&extra)
                    .map(|(&k, (p, q))| (anchors[k].z_d.as_slice(), p.z_d.as_slice(), q.z_d.as_slice()))
                    .collect();
                let (value, outs) = losses::triplet_margin_loss_batch(&triples, &objective.loss)?;
                for ((&k, (p, q)), o) in members.iter().zip(&extra).zip(&outs) {
                    params.backward_trace(&anchors[k], 0.0, Some(&o.grad_anchor), &mut grad_cl);
                    params.backward_trace(p, 0.0, Some(&o.grad_positive), &mut grad_cl);
                    params.backward_trace(q, 0.0, Some(&o.grad_negative), &mut grad_cl);
                }
                (value, members.len())
            }
        }
        ContrastiveKind::Scl => {
            let mut z: Vec<Vec<f64>> = anchors.iter().map(|t| t.z_d.clone()).collect();
            let mut labels: Vec<u8> = batch.iter().map(|b| b.anchor.label).collect();
            for (&k, (p, q)) in members.iter().zip(&extra) {
                let (pp, qq) = batch[k].triplet.expect("member has a triplet");
                z.push(p.z_d.clone());
                labels.push(pp.label);
                z.push(q.z_d.clone());
                labels.push(qq.label);
            }
            if z.len() < 2 {
                (0.0, 0)
            } else {
                let out = losses::supervised_contrastive_loss(&z, &labels, &objective.loss)?;
                if out.defined {
                    let traces = anchors.iter().chain(extra.iter().flat_map(|(p, q)| [p, q]));
                    for (tr, g) in traces.zip(&out.grads) {
                        params.backward_trace(tr, 0.0, Some(g), &mut grad_cl);
                    }
                }
                (out.value, out.valid_anchors)
            }
        }
    };
    Ok(ObjectiveParts {
        ce,
        cl,
        grad_ce,
        grad_cl,
        n_contrastive,
    })
}

/// Scalar objective `CE + gamma * CL` at fixed `gamma`, without gradients.
pub fn objective_value(params: &ModelParams, batch: &[BatchItem], objective: &Objective, gamma: f64) -> Result<f64> {
    let parts = objective_parts(params, batch, objective)?;
    Ok(parts.ce + gamma * parts.cl)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(id: u64, geom: &InputGeometry, seed: u64, label: u8) -> Patch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Patch {
            id,
            t: 0,
            i: 0,
            j: 0,
            label,
            dyn_data: (0..geom.dyn_in).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            stat_data: (0..geom.stat_in).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        }
    }

    fn geom() -> InputGeometry {
        InputGeometry { dyn_in: 6, stat_in: 3 }
    }

    #[test]
    fn init_deterministic_and_bounded() {
        let cfg = ModelConfig::default();
        let a = init_params(&cfg, geom(), 1).unwrap();
        let b = init_params(&cfg, geom(), 1).unwrap();
        let c = init_params(&cfg, geom(), 2).unwrap();
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
        assert_eq!(xavier_bound(3, 3), 1.0);
        for spec in &a.layout.layers {
            let bound = xavier_bound(spec.n_in, spec.n_out);
            assert!(a.data[spec.weight_range()].iter().all(|v| v.abs() <= bound));
            assert!(a.data[spec.bias_range()].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_static_branch_gives_zero_zs() {
        let cfg = ModelConfig {
            modulation: false,
            ..Default::default()
        };
        let mut p = init_params(&cfg, geom(), 3).unwrap();
        for idx in [STAT1, STAT2] {
            let spec = p.layout.layers[idx];
            p.data[spec.offset..spec.offset + spec.len()].fill(0.0);
        }
        let mut x = patch(0, &geom(), 4, 1);
        x.stat_data.fill(0.0);
        let tr = p.forward(&x).unwrap();
        assert!(tr.z_s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_modulation_matches_off() {
        let on = ModelConfig::default();
        let mut p_on = init_params(&on, geom(), 5).unwrap();
        let film = p_on.layout.layers[FILM];
        p_on.data[film.offset..film.offset + film.len()].fill(0.0);
        let mut p_off = p_on.clone();
        p_off.cfg.modulation = false;
        let x = patch(0, &geom(), 6, 0);
        assert_eq!(p_on.forward(&x).unwrap().logit, p_off.forward(&x).unwrap().logit);
    }

    #[test]
    fn forward_is_deterministic_and_checks_geometry() {
        let p = init_params(&ModelConfig::default(), geom(), 7).unwrap();
        let x = patch(0, &geom(), 8, 0);
        assert_eq!(p.forward(&x).unwrap(), p.forward(&x).unwrap());
        let mut bad = x.clone();
        bad.dyn_data.push(0.0);
        assert!(matches!(p.forward(&bad), Err(Error::Geometry(_))));
    }

    #[test]
    fn sgd_examples() {
        let mut p = init_params(&ModelConfig::default(), geom(), 9).unwrap();
        let orig = p.clone();
        let g = Gradients {
            data: (0..p.len()).map(|k| (k as f64 * 0.37).sin()).collect(),
        };
        sgd_step(&mut p, &g, 0.0).unwrap();
        assert_eq!(p, orig);
        sgd_step(&mut p, &g, 0.1).unwrap();
        let neg = Gradients {
            data: g.data.iter().map(|v| -v).collect(),
        };
        sgd_step(&mut p, &neg, 0.1).unwrap();
        for (a, b) in p.data.iter().zip(&orig.data) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut one = p.clone();
        one.data.iter_mut().for_each(|v| *v = 1.0);
        let twos = Gradients::zeros(one.len());
        let twos = Gradients {
            data: twos.data.iter().map(|_| 2.0).collect(),
        };
        sgd_step(&mut one, &twos, 0.1).unwrap();
        assert!(one.data.iter().all(|&v| (v - 0.8).abs() < 1e-15));
        assert!(sgd_step(&mut one, &Gradients::zeros(3), 0.1).is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let p = init_params(&ModelConfig::default(), geom(), 10).unwrap();
        let back = ModelParams::from_sidecar(&Sidecar::from_bytes(&p.to_sidecar().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn cl_gradient_skips_head() {
        let g = geom();
        let p = init_params(&ModelConfig::default(), g, 11).unwrap();
        let xs: Vec<Patch> = (0..6).map(|k| patch(k, &g, 100 + k, (k % 2) as u8)).collect();
        let batch = vec![
            BatchItem {
                anchor: &xs[0],
                triplet: Some((&xs[2], &xs[1])),
            },
            BatchItem {
                anchor: &xs[1],
                triplet: Some((&xs[3], &xs[4])),
            },
        ];
        let obj = Objective {
            contrastive: Some(ContrastiveKind::Triplet),
            loss: LossConfig {
                margin: 20.0,
                ..Default::default()
            },
        };
        let parts = objective_parts(&p, &batch, &obj).unwrap();
        assert!(parts.cl > 0.0);
        for r in p.layout.head_ranges() {
            assert!(parts.grad_cl.data[r].iter().all(|&v| v == 0.0));
        }
        let film = p.layout.layers[FILM];
        assert!(parts.grad_cl.data[film.offset..film.offset + film.len()].iter().any(|&v| v != 0.0));
        let dyn1 = p.layout.layers[DYN1];
        assert!(parts.grad_cl.data[dyn1.offset..dyn1.offset + dyn1.len()].iter().any(|&v| v != 0.0));
    }
}
