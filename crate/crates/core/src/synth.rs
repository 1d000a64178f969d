//! Synthetic cubes with regime-dependent dynamics.
//!
//! Cells are split into vertical bands, one per regime. Static feature 0
//! holds the regime index; the others are smooth spatial fields. Each
//! dynamic feature is `mu[r][f] + scale[r] * (g[t][f] + x[t][f][i][j])`,
//! where `g` is a shared AR(1) driver and `x` a per-cell AR(1) process.
//! A cell burns at `t + 1` when the regime-normalized anomaly
//! `sum_f w_f * (dyn - mu) / scale` at `t` exceeds the ignition threshold;
//! labels are then flipped with the configured noise rate.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cube::{save_cube, DataCube};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub t_len: usize,
    pub height: usize,
    pub width: usize,
    pub n_dyn: usize,
    pub n_stat: usize,
    pub n_regimes: usize,
    /// One multiplier per regime.
    pub regime_scales: Vec<f64>,
    /// Spread of the per-regime feature means.
    pub regime_offset: f64,
    pub threshold: f64,
    pub noise: f64,
    /// Relative strength of the shared temporal driver.
    pub driver_weight: f64,
    pub ar_coef: f64,
    pub label_noise: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            t_len: 60,
            height: 24,
            width: 24,
            n_dyn: 6,
            n_stat: 4,
            n_regimes: 2,
            regime_scales: vec![1.0, 5.0],
            regime_offset: 2.0,
            threshold: 3.0,
            noise: 1.0,
            driver_weight: 0.5,
            ar_coef: 0.8,
            label_noise: 0.0,
            train_frac: 0.7,
            val_frac: 0.15,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.t_len < 3 || self.height == 0 || self.width == 0 {
            return err("synth dimensions too small".into());
        }
        if self.n_dyn == 0 || self.n_stat == 0 {
            return err("synth needs at least one dynamic and one static feature".into());
        }
        if self.n_regimes < 2 {
            return err(format!("synth.n_regimes must be >= 2, got {}", self.n_regimes));
        }
        if self.regime_scales.len() != self.n_regimes {
            return err(format!(
                "synth.regime_scales has {} entries for {} regimes",
                self.regime_scales.len(),
                self.n_regimes
            ));
        }
        if self.regime_scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return err("synth.regime_scales must be positive".into());
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return err(format!("synth.label_noise must lie in [0, 0.5), got {}", self.label_noise));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return err("synth.noise must be >= 0".into());
        }
        if !(self.ar_coef.abs() < 1.0) {
            return err("synth.ar_coef must lie in (-1, 1)".into());
        }
        if !(self.train_frac > 0.0 && self.val_frac >= 0.0 && self.train_frac + self.val_frac < 1.0) {
            return err("synth split fractions must satisfy 0 < train, 0 <= val, train + val < 1".into());
        }
        Ok(())
    }

    pub fn regime_of(&self, j: usize) -> usize {
        (j * self.n_regimes / self.width).min(self.n_regimes - 1)
    }

    /// Unit-norm weights of the ignition functional.
    pub fn ignition_weights(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.n_dyn).map(|f| 1.0 + 0.5 * (f % 3) as f64).collect();
        let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        raw.iter().map(|v| v / n).collect()
    }
}

pub fn generate_cube(cfg: &SynthConfig) -> Result<DataCube> {
    cfg.validate()?;
    let (t_len, h, w, nd, ns) = (cfg.t_len, cfg.height, cfg.width, cfg.n_dyn, cfg.n_stat);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mu: Vec<Vec<f64>> = (0..cfg.n_regimes)
        .map(|_| (0..nd).map(|_| cfg.regime_offset * normal(&mut rng)).collect())
        .collect();

    let mut stat_data = vec![0.0f32; ns * h * w];
    let phases: Vec<(f64, f64, f64, f64)> = (0..ns)
        .map(|_| {
            (
                rng.random_range(0.1..0.5),
                rng.random_range(0.1..0.5),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    for f in 0..ns {
        for i in 0..h {
            for j in 0..w {
                let r = cfg.regime_of(j);
                let v = if f == 0 {
                    r as f64
                } else {
                    let (a, b, p, q) = phases[f];
                    (a * i as f64 + p).sin() * (b * j as f64 + q).cos() + 0.5 * r as f64
                };
                stat_data[(f * h + i) * w + j] = v as f32;
            }
        }
    }

    let rho = cfg.ar_coef;
    let stationary = cfg.noise / (1.0 - rho * rho).sqrt();
    let mut driver = vec![0.0f64; nd];
    let mut local = vec![0.0f64; nd * h * w];
    for v in driver.iter_mut() {
        *v = cfg.driver_weight * stationary * normal(&mut rng);
    }
    for v in local.iter_mut() {
        *v = stationary * normal(&mut rng);
    }
    let weights = cfg.ignition_weights();
    let mut dyn_data = vec![0.0f32; t_len * nd * h * w];
    let mut fire = vec![0u8; t_len * h * w];
    for t in 0..t_len {
        if t > 0 {
            for v in driver.iter_mut() {
                *v = rho * *v + cfg.driver_weight * cfg.noise * normal(&mut rng);
            }
            for v in local.iter_mut() {
                *v = rho * *v + cfg.noise * normal(&mut rng);
            }
        }
        for i in 0..h {
            for j in 0..w {
                let r = cfg.regime_of(j);
                let scale = cfg.regime_scales[r];
                let mut anomaly = 0.0;
                for f in 0..nd {
                    let z = driver[f] + local[(f * h + i) * w + j];
                    dyn_data[((t * nd + f) * h + i) * w + j] = (mu[r][f] + scale * z) as f32;
                    anomaly += weights[f] * z;
                }
                if t + 1 < t_len {
                    let mut y = u8::from(anomaly > cfg.threshold);
                    if cfg.label_noise > 0.0 && rng.random::<f64>() < cfg.label_noise {
                        y ^= 1;
                    }
                    fire[((t + 1) * h + i) * w + j] = y;
                }
            }
        }
    }

    let train_end = ((cfg.train_frac * t_len as f64).round() as usize).clamp(1, t_len);
    let val_end = (((cfg.train_frac + cfg.val_frac) * t_len as f64).round() as usize).clamp(train_end, t_len);
    let mut stat_names = vec!["regime".to_string()];
    stat_names.extend((1..ns).map(|f| format!("morph_{f}")));
    let cube = DataCube {
        t_len,
        height: h,
        width: w,
        n_dyn: nd,
        n_stat: ns,
        dyn_data,
        stat_data,
        fire,
        dyn_names: (0..nd).map(|f| format!("dyn_{f}")).collect(),
        stat_names,
        train_end: Some(train_end),
        val_end: Some(val_end),
    };
    cube.validate()?;
    Ok(cube)
}

/// Generates a cube and writes it with `standardize = true`.
pub fn write_synthetic(cfg: &SynthConfig, dir: &Path) -> Result<DataCube> {
    let cube = generate_cube(cfg)?;
    save_cube(&cube, dir, true)?;
    Ok(cube)
}
