//! Pointwise Wald intervals and uniform inference over a delta grid via the
//! multiplier bootstrap, including the supremum test of no direct effect.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EffectReport, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplier {
    Rademacher,
    Gaussian,
}

/// Configuration for uniform inference over a delta grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniformInferenceConfig {
    pub delta_grid: Vec<f64>,
    pub n_boot: usize,
    pub multiplier: Multiplier,
    pub alpha: f64,
    pub seed: u64,
}

impl UniformInferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta_grid.is_empty() {
            return Err(Error::domain("delta grid is empty"));
        }
        if self.delta_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("delta grid must be strictly increasing"));
        }
        if self.delta_grid[0] <= 0.0 {
            return Err(Error::domain("delta grid values must be positive"));
        }
        if self.n_boot == 0 {
            return Err(Error::domain("need at least one multiplier draw"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::domain("alpha must lie in (0,1)"));
        }
        Ok(())
    }

    /// Evenly log-spaced grid, the default for odds-multiplier interventions.
    pub fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
        if k == 1 {
            return vec![lo];
        }
        let (llo, lhi) = (lo.ln(), hi.ln());
        (0..k)
            .map(|i| (llo + (lhi - llo) * i as f64 / (k - 1) as f64).exp())
            .collect()
    }
}

impl Default for UniformInferenceConfig {
    fn default() -> UniformInferenceConfig {
        UniformInferenceConfig {
            delta_grid: UniformInferenceConfig::log_grid(0.5, 2.0, 10),
            n_boot: 2000,
            multiplier: Multiplier::Rademacher,
            alpha: 0.05,
            seed: 0,
        }
    }
}

/// Inverse standard normal CDF (Acklam's rational approximation, absolute
/// error below 1.2e-9).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0,1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

/// Wald confidence interval: estimate ± z_{1-alpha/2} * sigma / sqrt(n).
pub fn wald_ci(theta_hat: f64, sigma_hat: f64, n: usize, alpha: f64) -> (f64, f64) {
    if sigma_hat == 0.0 {
        return (theta_hat, theta_hat);
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    let half = z * sigma_hat / (n as f64).sqrt();
    (theta_hat - half, theta_hat + half)
}

/// Outcome of the multiplier bootstrap over a delta grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapOutcome {
    pub critical_value: f64,
    pub sup_stat: f64,
    pub p_value: f64,
    pub band_lo: Vec<f64>,
    pub band_hi: Vec<f64>,
}

/// Multiplier bootstrap for the supremum of the standardized direct-effect
/// process. `s_values` is n x K (rows: observations, columns: grid deltas);
/// each bootstrap draw samples one multiplier per observation and reuses it
/// across the whole grid.
pub fn multiplier_bootstrap(
    s_values: &Matrix,
    beta_hat: &[f64],
    sigma_hat: &[f64],
    cfg: &UniformInferenceConfig,
) -> Result<BootstrapOutcome> {
    let n = s_values.nrows();
    let k = s_values.ncols();
    if k != beta_hat.len() || k != sigma_hat.len() {
        return Err(Error::domain("grid lengths do not match"));
    }
    for (j, &s) in sigma_hat.iter().enumerate() {
        if s < 1e-12 {
            return Err(Error::DegenerateVariance(
                *cfg.delta_grid.get(j).unwrap_or(&f64::NAN),
            ));
        }
    }
    let sqrt_n = (n as f64).sqrt();

    // centered, standardized residual matrix
    let resid: Vec<f64> = (0..n)
        .flat_map(|i| {
            (0..k).map(move |j| (s_values.get(i, j) - beta_hat[j]) / sigma_hat[j])
        })
        .collect();

    let sups: Vec<f64> = (0..cfg.n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(b as u64 + 1);
            let mut acc = vec![0.0f64; k];
            for i in 0..n {
                let xi = match cfg.multiplier {
                    Multiplier::Rademacher => {
                        if rng.gen::<bool>() {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    Multiplier::Gaussian => rng.sample::<f64, _>(rand_distr::StandardNormal),
                };
                let row = &resid[i * k..(i + 1) * k];
                for (a, r) in acc.iter_mut().zip(row) {
                    *a += xi * r;
                }
            }
            acc.iter().map(|a| (a / sqrt_n).abs()).fold(0.0, f64::max)
        })
        .collect();

    let mut sorted = sups.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((1.0 - cfg.alpha) * cfg.n_boot as f64).ceil() as usize;
    let critical_value = sorted[idx.clamp(1, cfg.n_boot) - 1];

    let sup_stat = beta_hat
        .iter()
        .zip(sigma_hat)
        .map(|(b, s)| (b * sqrt_n / s).abs())
        .fold(0.0, f64::max);
    let exceed = sups.iter().filter(|&&s| s >= sup_stat).count();
    let p_value = exceed as f64 / cfg.n_boot as f64;

    let band_lo: Vec<f64> = beta_hat
        .iter()
        .zip(sigma_hat)
        .map(|(b, s)| b - critical_value * s / sqrt_n)
        .collect();
    let band_hi: Vec<f64> = beta_hat
        .iter()
        .zip(sigma_hat)
        .map(|(b, s)| b + critical_value * s / sqrt_n)
        .collect();

    Ok(BootstrapOutcome {
        critical_value,
        sup_stat,
        p_value,
        band_lo,
        band_hi,
    })
}

/// P-value for the null hypothesis of no direct effect uniformly over the
/// grid.
pub fn test_no_direct_effect(
    s_values: &Matrix,
    beta_hat: &[f64],
    sigma_hat: &[f64],
    cfg: &UniformInferenceConfig,
) -> Result<f64> {
    Ok(multiplier_bootstrap(s_values, beta_hat, sigma_hat, cfg)?.p_value)
}

/// Attach uniform bands and the sup-test p-value to a decomposition report.
pub fn attach_uniform_inference(
    report: &mut EffectReport,
    s_direct: &Matrix,
    cfg: &UniformInferenceConfig,
) -> Result<()> {
    cfg.validate()?;
    let n = s_direct.nrows() as f64;
    let sigma_scaled: Vec<f64> = report.se.iter().map(|se| se * n.sqrt()).collect();
    let out = multiplier_bootstrap(s_direct, &report.direct, &sigma_scaled, cfg)?;
    report.band_lo = Some(out.band_lo);
    report.band_hi = Some(out.band_hi);
    report.sup_test_p = Some(out.p_value);
    Ok(())
}
