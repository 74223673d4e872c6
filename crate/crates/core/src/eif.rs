//! Per-observation efficient influence function contributions: the outcome
//! residual term, the mediator/covariate integral term, and the
//! intervention-specific exposure score.

use rayon::prelude::*;

use crate::crossfit::FitsProvider;
use crate::error::{Error, Result};
use crate::interventions::{
    ips_gdelta, tilt_density_on_support, tilt_mass_binary, ShiftPolicyEval, Support,
};
use crate::learners::{GFit, MFit, PhiFit};
use crate::model::{EifRecord, InterventionSpec, ObservedDataset};
use crate::numeric::{mean, pairwise_sum, pop_variance};

/// Truncation floor and ratio cap applied to density ratios.
#[derive(Debug, Clone, Copy)]
pub struct WeightPolicy {
    pub floor: f64,
    pub cap: f64,
}

impl Default for WeightPolicy {
    fn default() -> WeightPolicy {
        WeightPolicy {
            floor: 1e-3,
            cap: 1e4,
        }
    }
}

/// Evaluator of the post-intervention exposure distribution derived from a
/// fitted g and an intervention. For exponential tilts this also exposes the
/// normalizer c(w).
pub struct GdeltaEval<'a> {
    pub g: &'a GFit,
    pub intervention: &'a InterventionSpec,
    pub support: &'a Support,
}

impl<'a> GdeltaEval<'a> {
    pub fn new(
        g: &'a GFit,
        intervention: &'a InterventionSpec,
        support: &'a Support,
    ) -> GdeltaEval<'a> {
        GdeltaEval {
            g,
            intervention,
            support,
        }
    }

    /// g(a|w) on the support points.
    pub fn g_values(&self, w: &[f64]) -> Vec<f64> {
        match self.support {
            Support::Binary => {
                let p = self.g.mass1(w);
                vec![1.0 - p, p]
            }
            Support::Lattice(pts) | Support::Grid(pts) => {
                pts.iter().map(|&a| self.g.density(a, w)).collect()
            }
        }
    }

    /// g_delta(a|w) on the support points.
    pub fn values(&self, w: &[f64]) -> Result<Vec<f64>> {
        match self.intervention {
            InterventionSpec::IncrementalPropensity { delta_prime } => {
                let p = ips_gdelta(self.g.mass1(w), *delta_prime)?;
                Ok(vec![1.0 - p, p])
            }
            InterventionSpec::ExponentialTilt { delta } => match self.support {
                Support::Binary => {
                    let (p, _) = tilt_mass_binary(self.g.mass1(w), *delta)?;
                    Ok(vec![1.0 - p, p])
                }
                _ => {
                    let (vals, _) =
                        tilt_density_on_support(&self.g_values(w), self.support, *delta)?;
                    Ok(vals)
                }
            },
            InterventionSpec::ShiftPolicy { delta, bounds } => {
                let (l, u) = bounds
                    .ok_or_else(|| Error::domain("shift policy bounds are unresolved"))?;
                let ev = ShiftPolicyEval::new(l, u, *delta);
                Ok(self
                    .support
                    .points()
                    .iter()
                    .map(|&a| ev.density(|x| self.g.density(x, w), a))
                    .collect())
            }
        }
    }

    /// g_delta at a single exposure value.
    pub fn at(&self, a: f64, w: &[f64]) -> Result<f64> {
        match self.intervention {
            InterventionSpec::IncrementalPropensity { delta_prime } => {
                let p = ips_gdelta(self.g.mass1(w), *delta_prime)?;
                Ok(if a == 1.0 { p } else { 1.0 - p })
            }
            InterventionSpec::ExponentialTilt { delta } => match self.support {
                Support::Binary => {
                    let (p, _) = tilt_mass_binary(self.g.mass1(w), *delta)?;
                    Ok(if a == 1.0 { p } else { 1.0 - p })
                }
                _ => {
                    let c = self.normalizer(w)?;
                    Ok((delta * a).exp() * self.g.density(a, w) * c)
                }
            },
            InterventionSpec::ShiftPolicy { delta, bounds } => {
                let (l, u) = bounds
                    .ok_or_else(|| Error::domain("shift policy bounds are unresolved"))?;
                let ev = ShiftPolicyEval::new(l, u, *delta);
                Ok(ev.density(|x| self.g.density(x, w), a))
            }
        }
    }

    /// Tilt normalizer c(w); 1 for non-tilt interventions.
    pub fn normalizer(&self, w: &[f64]) -> Result<f64> {
        match self.intervention {
            InterventionSpec::ExponentialTilt { delta } => match self.support {
                Support::Binary => Ok(tilt_mass_binary(self.g.mass1(w), *delta)?.1),
                _ => Ok(tilt_density_on_support(&self.g_values(w), self.support, *delta)?.1),
            },
            _ => Ok(1.0),
        }
    }
}

/// Outcome-residual component: (g_delta / e) (y - m), floored and capped.
/// Returns the value and whether the ratio was capped.
pub fn eif_y(y: f64, m_azw: f64, gdelta_aw: f64, e_azw: f64, wp: WeightPolicy) -> (f64, bool) {
    let mut ratio = gdelta_aw / e_azw.max(wp.floor);
    let capped = ratio > wp.cap;
    if capped {
        ratio = wp.cap;
    }
    (ratio * (y - m_azw), capped)
}

/// Mediator/covariate component: the integral of m(a, z, w) against
/// g_delta(a|w). `m_vals` and `gdelta_vals` are aligned with the support.
pub fn eif_zw(m_vals: &[f64], gdelta_vals: &[f64], support: &Support) -> Result<f64> {
    let mass = support.integrate(gdelta_vals);
    // trapezoid slop on step densities (histogram fits) is O(grid spacing)
    // per jump; discrete supports must be exact
    let tol = if support.is_discrete() { 1e-9 } else { 5e-2 };
    if (mass - 1.0).abs() > tol {
        return Err(Error::Quadrature(format!(
            "post-intervention distribution integrates to {mass}, not 1"
        )));
    }
    let prods: Vec<f64> = m_vals
        .iter()
        .zip(gdelta_vals)
        .map(|(m, g)| m * g)
        .collect();
    Ok(support.integrate(&prods))
}

/// Convenience row-level form of [`eif_zw`].
pub fn eif_zw_row(m: &MFit, gd: &GdeltaEval, z: &[f64], w: &[f64]) -> Result<f64> {
    let m_vals: Vec<f64> = gd
        .support
        .points()
        .iter()
        .map(|&a| m.predict(a, z, w))
        .collect();
    eif_zw(&m_vals, &gd.values(w)?, gd.support)
}

/// Exposure score for modified treatment policies:
/// phi(a, w) minus its g-average over the support.
pub fn eif_a_mtp(phi: &PhiFit, g: &GFit, a: f64, w: &[f64], support: &Support) -> Result<f64> {
    let phi_vals: Vec<f64> = support.points().iter().map(|&p| phi.eval(p, w)).collect();
    let g_vals: Vec<f64> = match support {
        Support::Binary => {
            let p = g.mass1(w);
            vec![1.0 - p, p]
        }
        _ => support.points().iter().map(|&p| g.density(p, w)).collect(),
    };
    let prods: Vec<f64> = phi_vals.iter().zip(&g_vals).map(|(p, gv)| p * gv).collect();
    Ok(phi.eval(a, w) - support.integrate(&prods))
}

/// Exposure score for exponential tilts: the density ratio times the
/// g_delta-centered phi.
pub fn eif_a_tilt(
    phi: &PhiFit,
    g: &GFit,
    gd: &GdeltaEval,
    a: f64,
    w: &[f64],
    floor: f64,
) -> Result<f64> {
    let support = gd.support;
    let phi_vals: Vec<f64> = support.points().iter().map(|&p| phi.eval(p, w)).collect();
    let gd_vals = gd.values(w)?;
    let prods: Vec<f64> = phi_vals.iter().zip(&gd_vals).map(|(p, gv)| p * gv).collect();
    let centered = phi.eval(a, w) - support.integrate(&prods);
    let ratio = gd.at(a, w)? / g.density(a, w).max(floor);
    Ok(ratio * centered)
}

/// Closed-form exposure score for incremental propensity score
/// interventions on a binary exposure.
pub fn eif_a_ips(phi_w: f64, g1w: f64, delta_prime: f64, a: f64) -> f64 {
    let denom = delta_prime * g1w + 1.0 - g1w;
    delta_prime * phi_w * (a - g1w) / (denom * denom)
}

/// Influence-function contributions for a batch of observations, plus the
/// moments used by the estimators: the mean of totals (the one-step theta)
/// and the empirical variances of D and of S = D - y.
#[derive(Debug, Clone)]
pub struct EifComponentsBatch {
    pub records: Vec<EifRecord>,
    pub theta: f64,
    pub sigma2: f64,
    pub s_values: Vec<f64>,
    pub s_mean: f64,
    pub s_sigma2: f64,
    pub capped: usize,
}

/// Assemble per-observation influence contributions with the
/// intervention-appropriate exposure score. In randomized-trial mode
/// (`known_g` supplied at fitting time and `zero_exposure_score` set), the
/// exposure score is identically zero.
pub fn assemble_eif<P: FitsProvider + Sync>(
    data: &ObservedDataset,
    provider: &P,
    intervention: &InterventionSpec,
    support: &Support,
    wp: WeightPolicy,
    zero_exposure_score: bool,
) -> Result<EifComponentsBatch> {
    let n = data.n();
    let rows: Vec<Result<(EifRecord, bool)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let fits = provider.fits_for(i);
            let (w, z, a, y) = (data.w().row(i), data.z().row(i), data.a()[i], data.y()[i]);
            let gd = GdeltaEval::new(&fits.g, intervention, support);

            let m_at = fits.m.predict(a, z, w);
            let gdelta_at = gd.at(a, w)?;
            let e_at = fits.e.density(a, z, w);
            let (d_y, capped) = eif_y(y, m_at, gdelta_at, e_at, wp);

            let d_zw = eif_zw_row(&fits.m, &gd, z, w)?;

            let d_a = if zero_exposure_score {
                0.0
            } else {
                match intervention {
                    InterventionSpec::IncrementalPropensity { delta_prime } => {
                        eif_a_ips(fits.phi.eval(a, w), fits.g.mass1(w), *delta_prime, a)
                    }
                    InterventionSpec::ExponentialTilt { .. } => {
                        eif_a_tilt(&fits.phi, &fits.g, &gd, a, w, wp.floor)?
                    }
                    InterventionSpec::ShiftPolicy { .. } => {
                        eif_a_mtp(&fits.phi, &fits.g, a, w, support)?
                    }
                }
            };
            Ok((EifRecord::new(d_y, d_a, d_zw), capped))
        })
        .collect();

    let mut records = Vec::with_capacity(n);
    let mut capped = 0usize;
    for r in rows {
        let (rec, c) = r?;
        records.push(rec);
        if c {
            capped += 1;
        }
    }
    let totals: Vec<f64> = records.iter().map(|r| r.total).collect();
    let s_values: Vec<f64> = records
        .iter()
        .zip(data.y())
        .map(|(r, y)| r.total - y)
        .collect();
    Ok(EifComponentsBatch {
        theta: mean(&totals),
        sigma2: pop_variance(&totals),
        s_mean: mean(&s_values),
        s_sigma2: pop_variance(&s_values),
        records,
        s_values,
        capped,
    })
}

/// Weighted mean of `values` against probabilities `probs` (testing aid).
pub fn expectation(values: &[f64], probs: &[f64]) -> f64 {
    let prods: Vec<f64> = values.iter().zip(probs).map(|(v, p)| v * p).collect();
    pairwise_sum(&prods)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn eif_y_hand_values() {
        let wp = WeightPolicy::default();
        // residual zero regardless of weights
        assert_abs_diff_eq!(eif_y(0.4, 0.4, 0.9, 0.2, wp).0, 0.0, epsilon = 1e-15);
        // (0.6 / 0.3) * (1 - 0.4) = 1.2
        assert_abs_diff_eq!(eif_y(1.0, 0.4, 0.6, 0.3, wp).0, 1.2, epsilon = 1e-12);
        // outside the intervened support
        assert_abs_diff_eq!(eif_y(1.0, 0.4, 0.0, 0.3, wp).0, 0.0, epsilon = 1e-15);
        // capping flags
        let (v, capped) = eif_y(1.0, 0.0, 1.0, 1e-9, WeightPolicy { floor: 1e-9, cap: 10.0 });
        assert!(capped);
        assert_abs_diff_eq!(v, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn eif_zw_binary_and_constant() {
        let support = Support::Binary;
        // m constant c integrates to c
        assert_abs_diff_eq!(
            eif_zw(&[3.25, 3.25], &[0.4, 0.6], &support).unwrap(),
            3.25,
            epsilon = 1e-12
        );
        // m(1) = 2, m(0) = 0, gdelta(1) = 0.25
        assert_abs_diff_eq!(
            eif_zw(&[0.0, 2.0], &[0.75, 0.25], &support).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        // normalization violation is an error
        assert!(eif_zw(&[1.0, 1.0], &[0.4, 0.4], &support).is_err());
    }

    #[test]
    fn eif_zw_continuous_linear() {
        // m(a) = a against Uniform(0,1): integral 1/2 (trapezoid is exact
        // for linear integrands)
        let support = Support::grid_over(0.0, 1.0, 512);
        let m_vals: Vec<f64> = support.points().to_vec();
        let g_vals = vec![1.0; 512];
        assert_abs_diff_eq!(
            eif_zw(&m_vals, &g_vals, &support).unwrap(),
            0.5,
            epsilon = 1e-4
        );
    }

    #[test]
    fn eif_a_mtp_binary_toy() {
        // phi(1, w) = 2, phi(0, w) = 0, g(1|w) = 0.5
        let phi = PhiFit::from_fn_of_aw(|a, _| 2.0 * a);
        let g = GFit::from_mass1_fn(|_| 0.5);
        let support = Support::Binary;
        assert_abs_diff_eq!(
            eif_a_mtp(&phi, &g, 1.0, &[0.0], &support).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            eif_a_mtp(&phi, &g, 0.0, &[0.0], &support).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
        // constant phi centers to zero
        let phi_c = PhiFit::from_fn_of_aw(|_, _| 7.0);
        assert_abs_diff_eq!(
            eif_a_mtp(&phi_c, &g, 1.0, &[0.0], &support).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn eif_a_mtp_mean_zero_under_g() {
        // E_{a ~ g(.|w)}[ D^A ] = 0 exactly on a lattice
        let phi = PhiFit::from_fn_of_aw(|a, w| a * a + w[0]);
        let g = GFit::new(
            crate::learners::FittedExposure::from_density_fn(|a, _| match a as i64 {
                0 => 0.2,
                1 => 0.3,
                _ => 0.5,
            }),
            std::sync::Arc::new(|w| w.to_vec()),
        );
        let support = Support::Lattice(vec![0.0, 1.0, 2.0]);
        let w = [0.5];
        let masses = [0.2, 0.3, 0.5];
        let mut e = 0.0;
        for (k, &a) in [0.0, 1.0, 2.0].iter().enumerate() {
            e += masses[k] * eif_a_mtp(&phi, &g, a, &w, &support).unwrap();
        }
        assert_abs_diff_eq!(e, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn eif_a_ips_hand_values() {
        // (phi = 1, g = 0.5, delta' = 2, a = 1): 2 * 0.5 / 2.25
        assert_abs_diff_eq!(eif_a_ips(1.0, 0.5, 2.0, 1.0), 2.0 * 0.5 / 2.25, epsilon = 1e-12);
        // delta' = 1 reduces to phi (a - g)
        assert_abs_diff_eq!(eif_a_ips(0.7, 0.3, 1.0, 1.0), 0.7 * 0.7, epsilon = 1e-12);
        // mean zero over a ~ Bernoulli(g)
        let g = 0.35;
        let e = g * eif_a_ips(1.3, g, 2.0, 1.0) + (1.0 - g) * eif_a_ips(1.3, g, 2.0, 0.0);
        assert_abs_diff_eq!(e, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn tilt_matches_ips_on_binary() {
        // binary exposure: tilt score with delta = ln(delta') equals the
        // closed-form IPS score for any phi pair
        let support = Support::Binary;
        for &g1 in &[0.1_f64, 0.3, 0.5, 0.8] {
            for &dp in &[0.25_f64, 0.5, 1.0, 2.0, 4.0] {
                for &a in &[0.0, 1.0] {
                    let phi1 = 1.3;
                    let phi0 = 0.4;
                    let phi = PhiFit::from_fn_of_aw(move |av, _| {
                        if av == 1.0 {
                            phi1
                        } else {
                            phi0
                        }
                    });
                    let g = GFit::from_mass1_fn(move |_| g1);
                    let spec = InterventionSpec::ExponentialTilt { delta: dp.ln() };
                    let gd = GdeltaEval::new(&g, &spec, &support);
                    let tilt = eif_a_tilt(&phi, &g, &gd, a, &[0.0], 1e-12).unwrap();
                    let ips = eif_a_ips(phi1 - phi0, g1, dp, a);
                    assert_abs_diff_eq!(tilt, ips, epsilon = 1e-10);
                }
            }
        }
    }
}
