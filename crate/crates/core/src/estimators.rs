//! Point estimators of the mediated mean theta(delta) and the
//! direct/indirect/total effect decomposition.

use serde::{Deserialize, Serialize};

use crate::crossfit::{
    crossfit_nuisances, fit_nuisances, resolve, support_for, EstimationConfig,
    FoldFits, FoldPlan, FullSampleFits, LearnerSet,
};
use crate::eif::{assemble_eif, eif_zw_row, EifComponentsBatch, GdeltaEval, WeightPolicy};
use crate::error::Result;
use crate::learners::{FeatureMaps, NuisanceFits};
use crate::model::{EffectReport, InterventionSpec, Matrix, ObservedDataset};
use crate::numeric::{mean, pop_variance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Substitution,
    Reweighted,
    OneStep,
}

/// Substitution estimator: the empirical mean over observations of the
/// integral of the fitted outcome regression against the fitted
/// post-intervention exposure distribution.
pub fn estimate_substitution(
    data: &ObservedDataset,
    fits: &NuisanceFits,
    intervention: &InterventionSpec,
    cfg: &EstimationConfig,
) -> Result<f64> {
    let _ = cfg;
    let intervention = resolve(intervention, data)?;
    let support = support_for(data, &intervention);
    let vals: Vec<f64> = (0..data.n())
        .map(|i| {
            let gd = GdeltaEval::new(&fits.g, &intervention, &support);
            eif_zw_row(&fits.m, &gd, data.z().row(i), data.w().row(i))
        })
        .collect::<Result<_>>()?;
    Ok(mean(&vals))
}

/// Reweighted estimator: the empirical mean of (g_delta / e) * Y with
/// floored denominators and capped ratios. Returns the estimate and the
/// number of capped weights.
pub fn estimate_reweighted(
    data: &ObservedDataset,
    fits: &NuisanceFits,
    intervention: &InterventionSpec,
    cfg: &EstimationConfig,
) -> Result<(f64, usize)> {
    let (summands, capped) = reweighted_summands(data, fits, intervention, cfg)?;
    Ok((mean(&summands), capped))
}

fn reweighted_summands(
    data: &ObservedDataset,
    fits: &NuisanceFits,
    intervention: &InterventionSpec,
    cfg: &EstimationConfig,
) -> Result<(Vec<f64>, usize)> {
    let intervention = resolve(intervention, data)?;
    let support = support_for(data, &intervention);
    let mut capped = 0usize;
    let vals: Vec<f64> = (0..data.n())
        .map(|i| {
            let (w, z, a, y) = (
                data.w().row(i),
                data.z().row(i),
                data.a()[i],
                data.y()[i],
            );
            let gd = GdeltaEval::new(&fits.g, &intervention, &support);
            let gdelta_at = gd.at(a, w)?;
            let e_at = fits.e.density(a, z, w);
            let mut ratio = gdelta_at / e_at.max(cfg.floor);
            if ratio > cfg.weight_cap {
                ratio = cfg.weight_cap;
                capped += 1;
            }
            Ok(ratio * y)
        })
        .collect::<Result<_>>()?;
    Ok((vals, capped))
}

/// Cross-fitted one-step estimate with its influence-function batch.
#[derive(Debug)]
pub struct OneStepEstimate {
    pub theta: f64,
    pub sigma: f64,
    pub batch: EifComponentsBatch,
    pub fold_fits: FoldFits,
}

/// Cross-fitted efficient one-step estimator: the empirical mean of the
/// influence contributions evaluated out of fold.
pub fn estimate_onestep(
    data: &ObservedDataset,
    intervention: &InterventionSpec,
    learners: &LearnerSet,
    maps: &FeatureMaps,
    plan: &FoldPlan,
    cfg: &EstimationConfig,
) -> Result<OneStepEstimate> {
    let intervention = resolve(intervention, data)?;
    let fold_fits = crossfit_nuisances(data, &intervention, learners, maps, plan, cfg)?;
    let support = support_for(data, &intervention);
    let batch = assemble_eif(
        data,
        &fold_fits,
        &intervention,
        &support,
        WeightPolicy {
            floor: cfg.floor,
            cap: cfg.weight_cap,
        },
        cfg.known_g.is_some(),
    )?;
    Ok(OneStepEstimate {
        theta: batch.theta,
        sigma: batch.sigma2.sqrt(),
        batch,
        fold_fits,
    })
}

/// Effect decomposition over a delta grid, with per-delta standard errors.
///
/// Also carries the per-observation direct-effect influence values
/// (one column per grid delta) used for uniform inference.
#[derive(Debug)]
pub struct Decomposition {
    pub report: EffectReport,
    pub s_direct: Matrix,
}

struct PathEstimate {
    theta: f64,
    /// per-observation summands of theta_hat - ybar
    s_values: Vec<f64>,
    capped: usize,
}

/// Estimate theta(delta) and the total-effect functional psi(delta) for
/// every delta on the grid, and decompose: direct = theta - ybar,
/// total = psi - ybar, indirect = total - direct.
///
/// The total-effect functional is estimated by rerunning the same machinery
/// with the mediator set dropped, under which e collapses to g and m to the
/// mediator-marginal outcome regression b.
#[allow(clippy::too_many_arguments)]
pub fn decompose_effects(
    data: &ObservedDataset,
    intervention: &InterventionSpec,
    deltas: &[f64],
    kind: EstimatorKind,
    learners: &LearnerSet,
    maps: &FeatureMaps,
    plan: &FoldPlan,
    cfg: &EstimationConfig,
) -> Result<Decomposition> {
    let resolved = resolve(intervention, data)?;
    let reduced = data.without_mediators();
    let n = data.n();
    let ybar = data.ybar();

    // Nuisances other than g_delta do not depend on delta for tilt and
    // incremental interventions, so one fit serves the whole grid. The shift
    // policy's phi regresses pseudo-outcomes built from d(A, W), which moves
    // with delta, so those are refit per grid point.
    let delta_free = !matches!(resolved, InterventionSpec::ShiftPolicy { .. });

    enum Fitted {
        Full(Box<NuisanceFits>, Box<NuisanceFits>),
        Folds(Box<FoldFits>, Box<FoldFits>),
    }

    let fit_for = |spec: &InterventionSpec| -> Result<Fitted> {
        Ok(match kind {
            EstimatorKind::OneStep => Fitted::Folds(
                Box::new(crossfit_nuisances(data, spec, learners, maps, plan, cfg)?),
                Box::new(crossfit_nuisances(&reduced, spec, learners, maps, plan, cfg)?),
            ),
            _ => Fitted::Full(
                Box::new(fit_nuisances(data, spec, learners, maps, cfg)?),
                Box::new(fit_nuisances(&reduced, spec, learners, maps, cfg)?),
            ),
        })
    };

    let shared = if delta_free {
        Some(fit_for(&resolved)?)
    } else {
        None
    };

    let wp = WeightPolicy {
        floor: cfg.floor,
        cap: cfg.weight_cap,
    };
    let support = support_for(data, &resolved);

    let mut report = EffectReport::empty(deltas.to_vec(), ybar);
    let mut s_direct = Vec::with_capacity(n * deltas.len());
    let mut s_direct_cols: Vec<Vec<f64>> = Vec::new();

    for &delta in deltas {
        let spec_d = resolved.with_delta(delta);
        let owned;
        let fitted = match &shared {
            Some(f) => f,
            None => {
                owned = fit_for(&spec_d)?;
                &owned
            }
        };

        let path = |path_data: &ObservedDataset, which_theta: bool| -> Result<PathEstimate> {
            match (fitted, kind) {
                (Fitted::Folds(ft, fp), EstimatorKind::OneStep) => {
                    let ff = if which_theta { ft } else { fp };
                    let batch = assemble_eif(
                        path_data,
                        ff.as_ref(),
                        &spec_d,
                        &support,
                        wp,
                        cfg.known_g.is_some(),
                    )?;
                    Ok(PathEstimate {
                        theta: batch.theta,
                        s_values: batch.s_values,
                        capped: batch.capped,
                    })
                }
                (Fitted::Full(ft, fp), EstimatorKind::Substitution) => {
                    let fits = if which_theta { ft } else { fp };
                    let theta = estimate_substitution(path_data, fits, &spec_d, cfg)?;
                    // influence-function-based dispersion proxy for the SE
                    let batch = assemble_eif(
                        path_data,
                        &FullSampleFits(fits),
                        &spec_d,
                        &support,
                        wp,
                        cfg.known_g.is_some(),
                    )?;
                    let shift = theta - batch.theta;
                    Ok(PathEstimate {
                        theta,
                        s_values: batch.s_values.iter().map(|s| s + shift).collect(),
                        capped: batch.capped,
                    })
                }
                (Fitted::Full(ft, fp), EstimatorKind::Reweighted) => {
                    let fits = if which_theta { ft } else { fp };
                    let (summands, capped) =
                        reweighted_summands(path_data, fits, &spec_d, cfg)?;
                    let s_values: Vec<f64> = summands
                        .iter()
                        .zip(path_data.y())
                        .map(|(s, y)| s - y)
                        .collect();
                    Ok(PathEstimate {
                        theta: mean(&summands),
                        s_values,
                        capped,
                    })
                }
                _ => unreachable!("estimator kind determines the fit shape"),
            }
        };

        let th = path(data, true)?;
        let ps = path(&reduced, false)?;

        let direct = th.theta - ybar;
        let total = ps.theta - ybar;
        let indirect = total - direct;

        let se_direct = (pop_variance(&th.s_values) / n as f64).sqrt();
        let diff: Vec<f64> = ps
            .s_values
            .iter()
            .zip(&th.s_values)
            .map(|(p, t)| p - t)
            .collect();
        let se_indirect = (pop_variance(&diff) / n as f64).sqrt();

        report.theta.push(th.theta);
        report.psi.push(ps.theta);
        report.direct.push(direct);
        report.indirect.push(indirect);
        report.total.push(total);
        report.se.push(se_direct);
        report.se_indirect.push(se_indirect);
        report.capped_weights += th.capped + ps.capped;
        s_direct_cols.push(th.s_values);
    }

    // pointwise 95% intervals; the caller may overwrite alpha via
    // inference::attach_pointwise
    for k in 0..deltas.len() {
        let (lo, hi) =
            crate::inference::wald_ci(report.direct[k], report.se[k] * (n as f64).sqrt(), n, 0.05);
        report.ci_lo.push(lo);
        report.ci_hi.push(hi);
        let (lo, hi) = crate::inference::wald_ci(
            report.indirect[k],
            report.se_indirect[k] * (n as f64).sqrt(),
            n,
            0.05,
        );
        report.ci_indirect_lo.push(lo);
        report.ci_indirect_hi.push(hi);
    }

    for i in 0..n {
        for col in &s_direct_cols {
            s_direct.push(col[i]);
        }
    }
    Ok(Decomposition {
        report,
        s_direct: Matrix::new(s_direct, deltas.len()),
    })
}
