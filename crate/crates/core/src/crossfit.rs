//! Random fold partitioning and train/predict orchestration of nuisance
//! fitting for the cross-fitted one-step estimator.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::learners::{
    fit_exposure_mechanism, fit_phi, fit_regression, EFit, Family, FeatureMaps, GFit, LearnerSpec,
    MFit, NuisanceFits, PhiForm,
};
use crate::model::{ExposureKind, InterventionSpec, ObservedDataset};

/// A random partition of observation indices into folds of nearly equal
/// size, deterministic given (n, folds, seed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn validation_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn training_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }
}

/// Shuffle indices with a seeded generator and deal them round-robin.
pub fn make_folds(n: usize, folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds < 2 || folds > n {
        return Err(Error::domain(format!(
            "fold count must satisfy 2 <= J <= n, got J={folds}, n={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut assignment = vec![0usize; n];
    for (pos, &i) in perm.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    Ok(FoldPlan {
        folds,
        assignment,
        seed,
    })
}

/// Learner choice per nuisance function.
#[derive(Debug, Clone)]
pub struct LearnerSet {
    pub g: LearnerSpec,
    pub e: LearnerSpec,
    pub m: LearnerSpec,
    pub phi: LearnerSpec,
    pub phi_form: PhiForm,
}

impl LearnerSet {
    /// Saturated stratification everywhere, appropriate for fully discrete
    /// data.
    pub fn saturated() -> LearnerSet {
        LearnerSet {
            g: LearnerSpec::saturated(),
            e: LearnerSpec::saturated(),
            m: LearnerSpec::saturated(),
            phi: LearnerSpec::saturated(),
            phi_form: PhiForm::Stabilized,
        }
    }
}

/// Weight handling and trial-mode switches shared across the estimators.
#[derive(Debug, Clone)]
pub struct EstimationConfig {
    /// Truncation floor for density evaluations in denominators.
    pub floor: f64,
    /// Cap on density ratios; capped values are flagged, not fatal.
    pub weight_cap: f64,
    /// Known exposure mechanism from a randomized trial: g is not fitted and
    /// the exposure score component is zeroed.
    pub known_g: Option<GFit>,
}

impl Default for EstimationConfig {
    fn default() -> EstimationConfig {
        EstimationConfig {
            floor: 1e-3,
            weight_cap: 1e4,
            known_g: None,
        }
    }
}

/// Per-fold fits plus the plan used to produce them; evaluation at
/// observation i must use the fold that excludes i.
#[derive(Debug, Clone)]
pub struct FoldFits {
    pub fits: Vec<NuisanceFits>,
    pub plan: FoldPlan,
}

/// Sources of per-observation nuisance evaluations for score assembly.
pub trait FitsProvider {
    fn fits_for(&self, i: usize) -> &NuisanceFits;
}

impl FitsProvider for FoldFits {
    fn fits_for(&self, i: usize) -> &NuisanceFits {
        &self.fits[self.plan.assignment[i]]
    }
}

/// Full-sample fits used by the substitution and reweighted estimators.
pub struct FullSampleFits<'a>(pub &'a NuisanceFits);

impl FitsProvider for FullSampleFits<'_> {
    fn fits_for(&self, _i: usize) -> &NuisanceFits {
        self.0
    }
}

/// Fit all nuisances on one training sample. Fitting order is g, e, m, then
/// phi (whose pseudo-outcomes use the same-sample g, e, m).
pub fn fit_nuisances(
    train: &ObservedDataset,
    intervention: &InterventionSpec,
    learners: &LearnerSet,
    maps: &FeatureMaps,
    cfg: &EstimationConfig,
) -> Result<NuisanceFits> {
    let n = train.n();
    let kind = train.exposure_kind();

    let g = match &cfg.known_g {
        Some(known) => known.clone(),
        None => {
            let feats: Vec<Vec<f64>> = (0..n).map(|i| (maps.g)(train.w().row(i))).collect();
            let feats = crate::learners::rows_to_matrix(&feats);
            GFit::new(
                fit_exposure_mechanism(&learners.g, &feats, train.a(), kind)?,
                maps.g.clone(),
            )
        }
    };

    let e = if train.has_mediators() {
        let feats: Vec<Vec<f64>> = (0..n)
            .map(|i| (maps.e)(train.z().row(i), train.w().row(i)))
            .collect();
        let feats = crate::learners::rows_to_matrix(&feats);
        EFit::new(
            fit_exposure_mechanism(&learners.e, &feats, train.a(), kind)?,
            maps.e.clone(),
        )
    } else {
        EFit::from_g(&g)
    };

    let m_feats: Vec<Vec<f64>> = (0..n)
        .map(|i| (maps.m)(train.a()[i], train.z().row(i), train.w().row(i)))
        .collect();
    let m_feats = crate::learners::rows_to_matrix(&m_feats);
    let m = MFit::new(
        fit_regression(&learners.m, &m_feats, train.y(), Family::Gaussian)?,
        maps.m.clone(),
    );

    let phi = fit_phi(
        train,
        &g,
        &e,
        &m,
        &learners.phi,
        maps,
        intervention,
        learners.phi_form,
        cfg.floor,
    )?;

    Ok(NuisanceFits { g, e, m, phi })
}

/// Cross-fit the nuisances: for each fold j, fit on the complement and
/// reserve the fit for evaluation on fold j.
pub fn crossfit_nuisances(
    data: &ObservedDataset,
    intervention: &InterventionSpec,
    learners: &LearnerSet,
    maps: &FeatureMaps,
    plan: &FoldPlan,
    cfg: &EstimationConfig,
) -> Result<FoldFits> {
    if plan.assignment.len() != data.n() {
        return Err(Error::domain("fold plan does not match dataset size"));
    }
    let intervention = resolve(intervention, data)?;
    let mut fits = Vec::with_capacity(plan.folds);
    for j in 0..plan.folds {
        let train = data.select_rows(&plan.training_rows(j));
        let fitted = fit_nuisances(&train, &intervention, learners, maps, cfg)
            .map_err(|e| e.in_fold(j))?;
        fits.push(fitted);
    }
    Ok(FoldFits {
        fits,
        plan: plan.clone(),
    })
}

/// Fill in data-dependent defaults (shift-policy support bounds) and check
/// the intervention against the exposure.
pub fn resolve(intervention: &InterventionSpec, data: &ObservedDataset) -> Result<InterventionSpec> {
    intervention.validate(data.exposure_kind(), data.a())?;
    Ok(match intervention {
        InterventionSpec::ShiftPolicy { delta, bounds } => InterventionSpec::ShiftPolicy {
            delta: *delta,
            bounds: Some(bounds.unwrap_or_else(|| {
                let lo = data.a().iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = data.a().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            })),
        },
        other => other.clone(),
    })
}

/// Integration support appropriate for the dataset and intervention.
pub fn support_for(
    data: &ObservedDataset,
    intervention: &InterventionSpec,
) -> crate::interventions::Support {
    match data.exposure_kind() {
        ExposureKind::Binary => crate::interventions::Support::Binary,
        ExposureKind::Continuous => {
            let pad = match intervention {
                InterventionSpec::ShiftPolicy { delta, .. } => *delta,
                _ => 0.0,
            };
            crate::interventions::Support::grid_for(data.a(), pad)
        }
    }
}
