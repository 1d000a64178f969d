//! Contrastive and classification losses with analytic gradients.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Triplet margin `m`.
    pub margin: f64,
    /// Order of the distance norm.
    pub p: f64,
    /// Temperature of the supervised contrastive loss.
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 5.0,
            p: 2.0,
            tau: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::Config(format!("norm order p must be >= 1, got {}", self.p)));
        }
        Ok(())
    }
}

/// `||x||_p` and its gradient with respect to `x` (zero at the origin).
fn pnorm_with_grad(x: &[f64], p: f64) -> (f64, Vec<f64>) {
    if p == 2.0 {
        let d = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if d == 0.0 {
            return (0.0, vec![0.0; x.len()]);
        }
        return (d, x.iter().map(|v| v / d).collect());
    }
    let d = x.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p);
    if d == 0.0 {
        return (0.0, vec![0.0; x.len()]);
    }
    let scale = d.powf(p - 1.0);
    let g = x
        .iter()
        .map(|v| v.signum() * v.abs().powf(p - 1.0) / scale)
        .collect();
    (d, g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletOutput {
    pub value: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negative: Vec<f64>,
}

/// `max(d(a, p) - d(a, n) + m, 0)` with `d` the `p`-norm distance.
///
/// The hinge is treated as inactive when its argument is exactly zero.
pub fn triplet_margin_loss(za: &[f64], zp: &[f64], zn: &[f64], cfg: &LossConfig) -> Result<TripletOutput> {
    if za.len() != zp.len() || za.len() != zn.len() {
        return Err(Error::Shape(format!(
            "triplet vectors differ in length: {}, {}, {}",
            za.len(),
            zp.len(),
            zn.len()
        )));
    }
    let ap: Vec<f64> = za.iter().zip(zp).map(|(a, b)| a - b).collect();
    let an: Vec<f64> = za.iter().zip(zn).map(|(a, b)| a - b).collect();
    let (d_ap, g_ap) = pnorm_with_grad(&ap, cfg.p);
    let (d_an, g_an) = pnorm_with_grad(&an, cfg.p);
    let arg = d_ap - d_an + cfg.margin;
    let n = za.len();
    if arg <= 0.0 {
        return Ok(TripletOutput {
            value: 0.0,
            grad_anchor: vec![0.0; n],
            grad_positive: vec![0.0; n],
            grad_negative: vec![0.0; n],
        });
    }
    Ok(TripletOutput {
        value: arg,
        grad_anchor: g_ap.iter().zip(&g_an).map(|(a, b)| a - b).collect(),
        grad_positive: g_ap.iter().map(|v| -v).collect(),
        grad_negative: g_an,
    })
}

/// Mean triplet loss over a batch; gradients carry the `1/n` factor.
pub fn triplet_margin_loss_batch(triplets: &[(&[f64], &[f64], &[f64])], cfg: &LossConfig) -> Result<(f64, Vec<TripletOutput>)> {
    if triplets.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut total = 0.0;
    let mut outs = Vec::with_capacity(triplets.len());
    for (a, p, n) in triplets {
        let mut o = triplet_margin_loss(a, p, n, cfg)?;
        total += o.value;
        for g in [&mut o.grad_anchor, &mut o.grad_positive, &mut o.grad_negative] {
            g.iter_mut().for_each(|v| *v *= scale);
        }
        outs.push(o);
    }
    Ok((total * scale, outs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SclOutput {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
    /// Anchors with at least one positive; the average runs over these.
    pub valid_anchors: usize,
    /// False when no anchor had a positive; value and gradients are then zero.
    pub defined: bool,
}

/// Embeddings shorter than this are treated as the zero vector: they enter
/// the similarities as zero and receive no gradient.
pub const ZERO_NORM: f64 = 1e-12;

/// Supervised contrastive loss over a batch of embeddings.
///
/// Embeddings are L2-normalized before the dot products. Anchors without
/// any same-label partner are left out of the average.
pub fn supervised_contrastive_loss(z: &[Vec<f64>], labels: &[u8], cfg: &LossConfig) -> Result<SclOutput> {
    let b = z.len();
    if b < 2 {
        return Err(Error::InvalidArgument(format!("batch size must be >= 2, got {b}")));
    }
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for {b} embeddings", labels.len())));
    }
    let dim = z[0].len();
    if z.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape("embeddings differ in length".into()));
    }
    let tau = cfg.tau;
    let norms: Vec<f64> = z
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let u: Vec<Vec<f64>> = z
        .iter()
        .zip(&norms)
        .map(|(v, &n)| {
            if n < ZERO_NORM {
                vec![0.0; dim]
            } else {
                v.iter().map(|x| x / n).collect()
            }
        })
        .collect();
    let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
    let sim: Vec<Vec<f64>> = (0..b)
        .map(|i| (0..b).map(|k| dot(&u[i], &u[k]) / tau).collect())
        .collect();

    let positives: Vec<Vec<usize>> = (0..b)
        .map(|i| (0..b).filter(|&j| j != i && labels[j] == labels[i]).collect())
        .collect();
    let valid = positives.iter().filter(|p| !p.is_empty()).count();
    if valid == 0 {
        return Ok(SclOutput {
            value: 0.0,
            grads: vec![vec![0.0; dim]; b],
            valid_anchors: 0,
            defined: false,
        });
    }
    let c = 1.0 / valid as f64;
    let mut value = 0.0;
    // coefficient matrix dL/dsim
    let mut coef = vec![vec![0.0; b]; b];
    for i in 0..b {
        let pos = &positives[i];
        if pos.is_empty() {
            continue;
        }
        let max = (0..b).filter(|&k| k != i).map(|k| sim[i][k]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..b).filter(|&k| k != i).map(|k| (sim[i][k] - max).exp()).sum();
        let lse = max + denom.ln();
        let inv_p = 1.0 / pos.len() as f64;
        value += c * inv_p * pos.iter().map(|&j| lse - sim[i][j]).sum::<f64>();
        for k in (0..b).filter(|&k| k != i) {
            coef[i][k] += c * (sim[i][k] - lse).exp();
        }
        for &j in pos {
            coef[i][j] -= c * inv_p;
        }
    }
    let mut gu = vec![vec![0.0; dim]; b];
    for i in 0..b {
        for k in 0..b {
            let g = coef[i][k] / tau;
            if g == 0.0 {
                continue;
            }
            for d in 0..dim {
                gu[i][d] += g * u[k][d];
                gu[k][d] += g * u[i][d];
            }
        }
    }
    let grads = (0..b)
        .map(|i| {
            if norms[i] < ZERO_NORM {
                return vec![0.0; dim];
            }
            let proj = dot(&u[i], &gu[i]);
            (0..dim).map(|d| (gu[i][d] - u[i][d] * proj) / norms[i]).collect()
        })
        .collect();
    Ok(SclOutput {
        value,
        grads,
        valid_anchors: valid,
        defined: true,
    })
}

/// Logistic sigmoid evaluated without overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `softplus(logit) - y * logit` and its derivative `sigmoid(logit) - y`.
pub fn binary_cross_entropy(logit: f64, y: u8) -> (f64, f64) {
    let softplus = logit.max(0.0) + (-logit.abs()).exp().ln_1p();
    let y = f64::from(y);
    (softplus - y * logit, sigmoid(logit) - y)
}

/// `|l_ce| / |l_cl|`, or zero when the contrastive term vanishes.
pub fn adaptive_gamma(l_ce: f64, l_cl: f64) -> f64 {
    if l_cl.abs() > 0.0 {
        l_ce.abs() / l_cl.abs()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Combined {
    pub value: f64,
    pub gamma: f64,
    pub grads: Vec<f64>,
}

/// `l_ce + gamma * l_cl` with `gamma` held constant during differentiation.
pub fn combined_objective(l_ce: f64, grad_ce: &[f64], l_cl: f64, grad_cl: &[f64]) -> Result<Combined> {
    if grad_ce.len() != grad_cl.len() {
        return Err(Error::Shape("gradient vectors differ in length".into()));
    }
    if !(l_ce.is_finite() && l_cl.is_finite()) {
        return Err(Error::InvalidArgument("loss values must be finite".into()));
    }
    let gamma = adaptive_gamma(l_ce, l_cl);
    Ok(Combined {
        value: l_ce + gamma * l_cl,
        gamma,
        grads: grad_ce.iter().zip(grad_cl).map(|(a, b)| a + gamma * b).collect(),
    })
}
