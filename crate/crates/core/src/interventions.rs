//! Post-intervention exposure distributions g_delta for the three
//! intervention kinds, plus the support/quadrature machinery shared by the
//! score and estimator modules.

use crate::error::{Error, Result};
use crate::numeric::trapezoid;

/// Exponent cap before `exp` in the tilt normalizer.
pub const TILT_EXP_CAP: f64 = 30.0;

/// Number of quadrature points for continuous-exposure integrals.
pub const QUADRATURE_POINTS: usize = 512;

/// Integration support for the exposure.
#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    /// Binary exposure {0, 1} under counting measure.
    Binary,
    /// Discrete exposure atoms under counting measure.
    Lattice(Vec<f64>),
    /// Evenly spaced grid under Lebesgue measure; integrals use the
    /// trapezoid rule.
    Grid(Vec<f64>),
}

impl Support {
    /// Evenly spaced grid of `QUADRATURE_POINTS` points covering the sample
    /// range widened by `pad` on each side.
    pub fn grid_for(a: &[f64], pad: f64) -> Support {
        let lo = a.iter().cloned().fold(f64::INFINITY, f64::min) - pad;
        let hi = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + pad;
        Support::grid_over(lo, hi, QUADRATURE_POINTS)
    }

    pub fn grid_over(lo: f64, hi: f64, points: usize) -> Support {
        let step = (hi - lo) / (points - 1) as f64;
        Support::Grid((0..points).map(|k| lo + step * k as f64).collect())
    }

    pub fn points(&self) -> &[f64] {
        const BIN: [f64; 2] = [0.0, 1.0];
        match self {
            Support::Binary => &BIN,
            Support::Lattice(p) | Support::Grid(p) => p,
        }
    }

    /// Integrate `values` (aligned with `points()`) against the support's
    /// dominating measure.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        match self {
            Support::Binary | Support::Lattice(_) => values.iter().sum(),
            Support::Grid(grid) => trapezoid(values, grid),
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, Support::Grid(_))
    }
}

/// Post-intervention propensity under an incremental propensity score
/// intervention: delta' g / (delta' g + 1 - g).
pub fn ips_gdelta(g1w: f64, delta_prime: f64) -> Result<f64> {
    if !(g1w > 0.0 && g1w < 1.0) {
        return Err(Error::domain(format!(
            "propensity must lie in (0,1), got {g1w}"
        )));
    }
    if !(delta_prime > 0.0) {
        return Err(Error::domain("odds multiplier must be > 0"));
    }
    Ok(delta_prime * g1w / (delta_prime * g1w + 1.0 - g1w))
}

/// Tilted Bernoulli mass at a = 1 together with the normalizer c(w).
pub fn tilt_mass_binary(g1w: f64, delta: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&g1w) {
        return Err(Error::domain("mass outside [0,1]"));
    }
    if delta.abs() > TILT_EXP_CAP {
        return Err(Error::NormalizerOverflow(delta.abs(), TILT_EXP_CAP));
    }
    let norm = delta.exp() * g1w + (1.0 - g1w);
    Ok((delta.exp() * g1w / norm, 1.0 / norm))
}

/// Tilted density values on a support, with the normalizer c(w).
///
/// `g_vals` are evaluations of g(a|w) on `support.points()`. The output
/// integrates to one against the support measure by construction.
pub fn tilt_density_on_support(
    g_vals: &[f64],
    support: &Support,
    delta: f64,
) -> Result<(Vec<f64>, f64)> {
    let points = support.points();
    debug_assert_eq!(points.len(), g_vals.len());
    for &a in points {
        if (delta * a).abs() > TILT_EXP_CAP {
            return Err(Error::NormalizerOverflow((delta * a).abs(), TILT_EXP_CAP));
        }
    }
    let tilted: Vec<f64> = points
        .iter()
        .zip(g_vals)
        .map(|(&a, &g)| (delta * a).exp() * g)
        .collect();
    let total = support.integrate(&tilted);
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Quadrature(format!(
            "tilt normalizer is not positive and finite: {total}"
        )));
    }
    let c = 1.0 / total;
    Ok((tilted.into_iter().map(|v| v * c).collect(), c))
}

/// Unit-level policy map d(a, w) of the shift intervention: subtract delta
/// where there is room above the lower support bound.
pub fn apply_policy(a: f64, l: f64, delta: f64) -> f64 {
    if a > l + delta {
        a - delta
    } else {
        a
    }
}

/// Density of the shifted exposure at `a`, given the natural density `g`.
pub fn shift_gdelta(g: impl Fn(f64) -> f64, l: f64, u: f64, delta: f64, a: f64) -> Result<f64> {
    if !(l < u) || !(delta > 0.0 && delta < u - l) {
        return Err(Error::domain(format!(
            "shift delta must lie in (0, {}), got {delta}",
            u - l
        )));
    }
    Ok(ShiftPolicyEval::new(l, u, delta).density(g, a))
}

/// One invertible piece of a piecewise policy: the pre-image map
/// h_j(a) = a + offset with unit derivative, contributing on [lo, hi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyPiece {
    pub offset: f64,
    pub lo: f64,
    pub hi: f64,
}

impl PolicyPiece {
    pub fn inverse(&self, a: f64) -> f64 {
        a + self.offset
    }

    pub fn inverse_derivative(&self) -> f64 {
        1.0
    }

    pub fn contributes(&self, a: f64) -> bool {
        a >= self.lo && a <= self.hi
    }
}

/// Two-piece shift policy with its inverse-map pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftPolicyEval {
    pub lower: f64,
    pub upper: f64,
    pub delta: f64,
    pieces: [PolicyPiece; 2],
}

impl ShiftPolicyEval {
    pub fn new(lower: f64, upper: f64, delta: f64) -> ShiftPolicyEval {
        // Identity piece below lower + delta; shifted piece elsewhere, whose
        // post-intervention mass at a comes from a + delta.
        let pieces = [
            PolicyPiece {
                offset: 0.0,
                lo: lower,
                hi: lower + delta,
            },
            PolicyPiece {
                offset: delta,
                lo: lower,
                hi: upper - delta,
            },
        ];
        ShiftPolicyEval {
            lower,
            upper,
            delta,
            pieces,
        }
    }

    pub fn pieces(&self) -> &[PolicyPiece; 2] {
        &self.pieces
    }

    pub fn apply(&self, a: f64) -> f64 {
        apply_policy(a, self.lower, self.delta)
    }

    /// g_delta(a|w) assembled from the piecewise inverses.
    pub fn density(&self, g: impl Fn(f64) -> f64, a: f64) -> f64 {
        self.pieces
            .iter()
            .filter(|p| p.contributes(a))
            .map(|p| g(p.inverse(a)) * p.inverse_derivative())
            .sum()
    }
}
