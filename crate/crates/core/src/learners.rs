//! Pluggable regression and conditional-density learners used to fit the
//! nuisance functions, including the pseudo-outcome regression that avoids
//! estimating the mediator density.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::interventions::apply_policy;
use crate::model::{ExposureKind, InterventionSpec, Matrix, ObservedDataset};

/// Probability clip for binomial predictions.
pub const PROB_CLIP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Gaussian,
    Binomial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for IrlsConfig {
    fn default() -> IrlsConfig {
        IrlsConfig {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

/// Learner kinds with their hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LearnerSpec {
    /// Exact joint-stratum means over discrete predictors. `shrinkage` is a
    /// pseudo-count pulling sparse strata toward the training mean (0 keeps
    /// strata means exact); unseen strata back off to coarser prefixes of
    /// the predictor columns, ending at the global mean.
    SaturatedStratified { shrinkage: f64, max_strata: usize },
    LogisticGlm(IrlsConfig),
    LinearRidge { lambda: f64 },
    /// Conditional density for a continuous exposure: bin the exposure and
    /// model per-bin probabilities given the covariates.
    HistogramDensity { bins: usize },
    /// Ignores predictors entirely; used to induce deliberate
    /// misspecification in the simulation harness.
    InterceptOnly,
}

impl LearnerSpec {
    pub fn saturated() -> LearnerSpec {
        LearnerSpec::SaturatedStratified {
            shrinkage: 0.0,
            max_strata: 64,
        }
    }

    pub fn saturated_shrunk(shrinkage: f64) -> LearnerSpec {
        LearnerSpec::SaturatedStratified {
            shrinkage,
            max_strata: 64,
        }
    }
}

fn key_bits(x: &[f64]) -> Vec<u64> {
    // +0.0 folds -0.0 onto +0.0 so both hash identically
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

/// Stratum means at every prefix length of the predictor columns, so unseen
/// strata can back off one trailing column at a time.
#[derive(Debug, Clone)]
struct StrataTable {
    levels: Vec<HashMap<Vec<u64>, (f64, u32)>>,
    ncols: usize,
    global: f64,
    shrinkage: f64,
}

impl StrataTable {
    fn fit(x: &Matrix, y: &[f64], shrinkage: f64, max_strata: usize) -> Result<StrataTable> {
        let p = x.ncols();
        let global = crate::numeric::mean(y);
        let mut levels = Vec::with_capacity(p);
        for len in (1..=p).rev() {
            let mut map: HashMap<Vec<u64>, (f64, u32)> = HashMap::new();
            for i in 0..x.nrows() {
                let k = key_bits(&x.row(i)[..len]);
                let e = map.entry(k).or_insert((0.0, 0));
                e.0 += y[i];
                e.1 += 1;
            }
            if len == p && map.len() > max_strata {
                return Err(Error::domain(format!(
                    "{} observed strata exceed the limit of {max_strata}; \
                     predictors are not discrete enough for stratification",
                    map.len()
                )));
            }
            levels.push(map);
        }
        Ok(StrataTable {
            levels,
            ncols: p,
            global,
            shrinkage,
        })
    }

    fn predict(&self, x: &[f64]) -> f64 {
        for (lvl, len) in (1..=self.ncols).rev().enumerate() {
            if let Some(&(sum, count)) = self.levels[lvl].get(&key_bits(&x[..len])) {
                return (sum + self.shrinkage * self.global) / (count as f64 + self.shrinkage);
            }
        }
        self.global
    }
}

#[derive(Clone)]
enum ModelImpl {
    Constant(f64),
    Strata(StrataTable),
    /// Coefficients with intercept first.
    Linear(Vec<f64>),
    Logistic(Vec<f64>),
    Exact(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for ModelImpl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelImpl::Constant(c) => write!(f, "Constant({c})"),
            ModelImpl::Strata(_) => write!(f, "Strata"),
            ModelImpl::Linear(b) => write!(f, "Linear({b:?})"),
            ModelImpl::Logistic(b) => write!(f, "Logistic({b:?})"),
            ModelImpl::Exact(_) => write!(f, "Exact(fn)"),
        }
    }
}

/// A fitted regression: maps a feature vector to a prediction.
#[derive(Debug, Clone)]
pub struct FittedRegression {
    model: ModelImpl,
    family: Family,
    pub converged: bool,
    pub ridge_fallback: bool,
}

impl FittedRegression {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let raw = match &self.model {
            ModelImpl::Constant(c) => *c,
            ModelImpl::Strata(t) => t.predict(x),
            ModelImpl::Linear(beta) => lin_pred(beta, x),
            ModelImpl::Logistic(beta) => expit(lin_pred(beta, x)),
            ModelImpl::Exact(f) => return f(x),
        };
        match self.family {
            Family::Gaussian => raw,
            Family::Binomial => raw.clamp(PROB_CLIP, 1.0 - PROB_CLIP),
        }
    }

    /// Wrap an exact function as a fitted regression; handy for supplying
    /// known nuisance functions in tests and randomized-trial mode.
    pub fn from_fn(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> FittedRegression {
        FittedRegression {
            model: ModelImpl::Exact(Arc::new(f)),
            family: Family::Gaussian,
            converged: true,
            ridge_fallback: false,
        }
    }

    pub fn constant(c: f64, family: Family) -> FittedRegression {
        FittedRegression {
            model: ModelImpl::Constant(c),
            family,
            converged: true,
            ridge_fallback: false,
        }
    }
}

fn lin_pred(beta: &[f64], x: &[f64]) -> f64 {
    beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cholesky solve of a symmetric positive definite system; None on failure.
fn solve_spd(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    // forward then back substitution
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    Some(x)
}

fn normal_equations(
    x: &Matrix,
    y: &[f64],
    weights: Option<&[f64]>,
    lambda: f64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let p = x.ncols() + 1;
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for i in 0..x.nrows() {
        let wi = weights.map_or(1.0, |w| w[i]);
        let row = x.row(i);
        for r in 0..p {
            let xr = if r == 0 { 1.0 } else { row[r - 1] };
            b[r] += wi * xr * y[i];
            for c in 0..=r {
                let xc = if c == 0 { 1.0 } else { row[c - 1] };
                a[r][c] += wi * xr * xc;
            }
        }
    }
    for r in 0..p {
        for c in r + 1..p {
            a[r][c] = a[c][r];
        }
    }
    // do not penalize the intercept
    for (r, row) in a.iter_mut().enumerate().skip(1) {
        row[r] += lambda;
    }
    (a, b)
}

/// Solve ridge normal equations, escalating the penalty if the system is
/// singular. Returns the coefficients and whether a fallback was engaged.
fn solve_ridge(x: &Matrix, y: &[f64], weights: Option<&[f64]>, lambda: f64) -> (Vec<f64>, bool) {
    let (a, b) = normal_equations(x, y, weights, lambda);
    if let Some(beta) = solve_spd(&a, &b) {
        return (beta, false);
    }
    let mut bump = lambda.max(1e-8);
    for _ in 0..40 {
        bump *= 10.0;
        let (a, b) = normal_equations(x, y, weights, bump);
        if let Some(beta) = solve_spd(&a, &b) {
            return (beta, true);
        }
    }
    // fully degenerate design: intercept-only
    let mut beta = vec![0.0; x.ncols() + 1];
    beta[0] = crate::numeric::mean(y);
    (beta, true)
}

// Cross-entropy objective; differs from the proper deviance by a term
// constant in the coefficients, so convergence checks are unaffected.
fn binomial_deviance(y: &[f64], mu: &[f64]) -> f64 {
    y.iter()
        .zip(mu)
        .map(|(yi, mi)| {
            let m = mi.clamp(1e-10, 1.0 - 1e-10);
            -2.0 * (yi * m.ln() + (1.0 - yi) * (1.0 - m).ln())
        })
        .sum()
}

fn fit_irls(x: &Matrix, y: &[f64], cfg: &IrlsConfig) -> (Vec<f64>, bool, bool) {
    let p = x.ncols() + 1;
    let mut beta = vec![0.0; p];
    let mut ridge_fallback = false;
    let eta: Vec<f64> = (0..x.nrows()).map(|i| lin_pred(&beta, x.row(i))).collect();
    let mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
    let mut dev = binomial_deviance(y, &mu);
    for _ in 0..cfg.max_iter {
        let eta: Vec<f64> = (0..x.nrows()).map(|i| lin_pred(&beta, x.row(i))).collect();
        let mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        let wts: Vec<f64> = mu.iter().map(|&m| (m * (1.0 - m)).max(1e-10)).collect();
        let z: Vec<f64> = (0..y.len())
            .map(|i| eta[i] + (y[i] - mu[i]) / wts[i])
            .collect();
        let (new_beta, fb) = solve_ridge(x, &z, Some(&wts), 0.0);
        ridge_fallback |= fb;

        // step-halving when the deviance worsens
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = beta
                .iter()
                .zip(&new_beta)
                .map(|(old, new)| old + step * (new - old))
                .collect();
            let mu_t: Vec<f64> = (0..x.nrows())
                .map(|i| expit(lin_pred(&trial, x.row(i))))
                .collect();
            let dev_t = binomial_deviance(y, &mu_t);
            if dev_t.is_finite() && dev_t <= dev + 1e-12 {
                let done = (dev - dev_t).abs() < cfg.tol * (0.1 + dev.abs());
                beta = trial;
                dev = dev_t;
                accepted = true;
                if done {
                    return (beta, true, ridge_fallback);
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return (beta, false, ridge_fallback);
        }
    }
    (beta, false, ridge_fallback)
}

/// Fit a regression of `y` on the rows of `x`.
pub fn fit_regression(
    spec: &LearnerSpec,
    x: &Matrix,
    y: &[f64],
    family: Family,
) -> Result<FittedRegression> {
    if y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if x.ncols() > 0 && x.nrows() != y.len() {
        return Err(Error::domain("predictor and response lengths differ"));
    }
    if matches!(family, Family::Binomial) && y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::domain("binomial responses must lie in [0,1]"));
    }
    let fitted = match spec {
        LearnerSpec::InterceptOnly => FittedRegression {
            model: ModelImpl::Constant(crate::numeric::mean(y)),
            family,
            converged: true,
            ridge_fallback: false,
        },
        LearnerSpec::SaturatedStratified {
            shrinkage,
            max_strata,
        } => {
            if x.ncols() == 0 {
                FittedRegression {
                    model: ModelImpl::Constant(crate::numeric::mean(y)),
                    family,
                    converged: true,
                    ridge_fallback: false,
                }
            } else {
                FittedRegression {
                    model: ModelImpl::Strata(StrataTable::fit(x, y, *shrinkage, *max_strata)?),
                    family,
                    converged: true,
                    ridge_fallback: false,
                }
            }
        }
        LearnerSpec::LinearRidge { lambda } => {
            if *lambda < 0.0 {
                return Err(Error::domain("ridge penalty must be >= 0"));
            }
            let (beta, fb) = solve_ridge(x, y, None, *lambda);
            FittedRegression {
                model: ModelImpl::Linear(beta),
                family,
                converged: true,
                ridge_fallback: fb,
            }
        }
        LearnerSpec::LogisticGlm(cfg) => {
            if family != Family::Binomial {
                return Err(Error::domain("logistic regression requires a binomial response"));
            }
            let (beta, converged, fb) = fit_irls(x, y, cfg);
            FittedRegression {
                model: ModelImpl::Logistic(beta),
                family,
                converged,
                ridge_fallback: fb,
            }
        }
        LearnerSpec::HistogramDensity { .. } => {
            return Err(Error::domain(
                "histogram density is an exposure-mechanism learner, not a regression",
            ))
        }
    };
    Ok(fitted)
}

/// Fitted exposure mechanism: a conditional mass function for binary
/// exposures or a conditional density for continuous ones.
#[derive(Clone)]
pub enum FittedExposure {
    Binary(FittedRegression),
    Histogram {
        edges: Vec<f64>,
        bin_models: Vec<FittedRegression>,
    },
    ExactBinary(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
    ExactDensity(Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for FittedExposure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FittedExposure::Binary(r) => write!(f, "Binary({r:?})"),
            FittedExposure::Histogram { edges, .. } => {
                write!(f, "Histogram({} bins)", edges.len().saturating_sub(1))
            }
            FittedExposure::ExactBinary(_) => write!(f, "ExactBinary(fn)"),
            FittedExposure::ExactDensity(_) => write!(f, "ExactDensity(fn)"),
        }
    }
}

impl FittedExposure {
    /// P(A = 1 | features) for binary exposures.
    pub fn mass1(&self, feats: &[f64]) -> f64 {
        match self {
            FittedExposure::Binary(r) => r.predict(feats),
            FittedExposure::ExactBinary(f) => f(feats),
            _ => panic!("mass1 called on a continuous exposure fit"),
        }
    }

    /// Density (or mass) of A = a given features.
    pub fn density(&self, a: f64, feats: &[f64]) -> f64 {
        match self {
            FittedExposure::Binary(r) => {
                let p = r.predict(feats);
                if a == 1.0 {
                    p
                } else {
                    1.0 - p
                }
            }
            FittedExposure::ExactBinary(f) => {
                let p = f(feats);
                if a == 1.0 {
                    p
                } else {
                    1.0 - p
                }
            }
            FittedExposure::ExactDensity(f) => f(a, feats),
            FittedExposure::Histogram { edges, bin_models } => {
                let nb = bin_models.len();
                let lo = edges[0];
                let hi = edges[nb];
                if a < lo || a > hi {
                    return 0.0;
                }
                let width = (hi - lo) / nb as f64;
                let mut k = ((a - lo) / width) as usize;
                if k >= nb {
                    k = nb - 1;
                }
                let probs: Vec<f64> = bin_models.iter().map(|m| m.predict(feats)).collect();
                let total: f64 = probs.iter().sum();
                if total <= 0.0 {
                    return 0.0;
                }
                probs[k] / total / width
            }
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(
            self,
            FittedExposure::Binary(_) | FittedExposure::ExactBinary(_)
        )
    }

    pub fn from_mass1_fn(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> FittedExposure {
        FittedExposure::ExactBinary(Arc::new(f))
    }

    pub fn from_density_fn(
        f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> FittedExposure {
        FittedExposure::ExactDensity(Arc::new(f))
    }
}

/// Fit the exposure mechanism g(a|w) or e(a|z,w) on the given features.
pub fn fit_exposure_mechanism(
    spec: &LearnerSpec,
    feats: &Matrix,
    a: &[f64],
    kind: ExposureKind,
) -> Result<FittedExposure> {
    match kind {
        ExposureKind::Binary => {
            let reg_spec = match spec {
                LearnerSpec::HistogramDensity { .. } => {
                    return Err(Error::domain(
                        "histogram density applies to continuous exposures only",
                    ))
                }
                other => other,
            };
            Ok(FittedExposure::Binary(fit_regression(
                reg_spec,
                feats,
                a,
                Family::Binomial,
            )?))
        }
        ExposureKind::Continuous => {
            let bins = match spec {
                LearnerSpec::HistogramDensity { bins } => {
                    if *bins < 2 {
                        return Err(Error::domain("histogram needs at least 2 bins"));
                    }
                    *bins
                }
                LearnerSpec::InterceptOnly => 10,
                _ => {
                    return Err(Error::domain(
                        "continuous exposures require a HistogramDensity (or InterceptOnly) learner",
                    ))
                }
            };
            let lo = a.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !(lo < hi) {
                return Err(Error::domain("degenerate exposure range"));
            }
            let width = (hi - lo) / bins as f64;
            let edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
            let marginal_only =
                matches!(spec, LearnerSpec::InterceptOnly) || feats.ncols() == 0;
            let mut bin_models = Vec::with_capacity(bins);
            for k in 0..bins {
                let indicator: Vec<f64> = a
                    .iter()
                    .map(|&v| {
                        let mut b = ((v - lo) / width) as usize;
                        if b >= bins {
                            b = bins - 1;
                        }
                        if b == k {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let model = if marginal_only {
                    FittedRegression::constant(crate::numeric::mean(&indicator), Family::Binomial)
                } else {
                    // stratified per-bin probabilities; escalate to marginal
                    // when the covariates are not discrete enough
                    match fit_regression(
                        &LearnerSpec::saturated_shrunk(0.5),
                        feats,
                        &indicator,
                        Family::Binomial,
                    ) {
                        Ok(m) => m,
                        Err(Error::Domain(_)) => FittedRegression::constant(
                            crate::numeric::mean(&indicator),
                            Family::Binomial,
                        ),
                        Err(e) => return Err(e),
                    }
                };
                bin_models.push(model);
            }
            Ok(FittedExposure::Histogram { edges, bin_models })
        }
    }
}

// ---------------------------------------------------------------------------
// Feature maps and semantic nuisance wrappers
// ---------------------------------------------------------------------------

pub type WMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type ZwMap = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type AzwMap = Arc<dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// Feature construction for each nuisance fit. Defaults concatenate the raw
/// columns; a harness may substitute sufficient summaries (these must keep
/// the regression well-specified for the data at hand).
#[derive(Clone)]
pub struct FeatureMaps {
    pub g: WMap,
    pub e: ZwMap,
    pub m: AzwMap,
    pub phi_w: WMap,
}

impl Default for FeatureMaps {
    fn default() -> FeatureMaps {
        FeatureMaps {
            g: Arc::new(|w| w.to_vec()),
            e: Arc::new(|z, w| {
                let mut v = Vec::with_capacity(z.len() + w.len());
                v.extend_from_slice(z);
                v.extend_from_slice(w);
                v
            }),
            m: Arc::new(|a, z, w| {
                let mut v = Vec::with_capacity(1 + z.len() + w.len());
                v.push(a);
                v.extend_from_slice(z);
                v.extend_from_slice(w);
                v
            }),
            phi_w: Arc::new(|w| w.to_vec()),
        }
    }
}

impl fmt::Debug for FeatureMaps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FeatureMaps")
    }
}

/// Exposure mechanism g(a|w) with its feature map.
#[derive(Clone)]
pub struct GFit {
    pub fitted: FittedExposure,
    map: WMap,
}

impl GFit {
    pub fn new(fitted: FittedExposure, map: WMap) -> GFit {
        GFit { fitted, map }
    }

    pub fn from_mass1_fn(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> GFit {
        GFit {
            fitted: FittedExposure::from_mass1_fn(f),
            map: Arc::new(|w| w.to_vec()),
        }
    }

    pub fn mass1(&self, w: &[f64]) -> f64 {
        self.fitted.mass1(&(self.map)(w))
    }

    pub fn density(&self, a: f64, w: &[f64]) -> f64 {
        self.fitted.density(a, &(self.map)(w))
    }

    pub fn is_binary(&self) -> bool {
        self.fitted.is_binary()
    }
}

/// Mediator-inclusive exposure mechanism e(a|z,w) with its feature map.
#[derive(Clone)]
pub struct EFit {
    pub fitted: FittedExposure,
    map: ZwMap,
}

impl EFit {
    pub fn new(fitted: FittedExposure, map: ZwMap) -> EFit {
        EFit { fitted, map }
    }

    /// Mediator-free reduction: e(a | ∅, w) is exactly g(a | w), sharing the
    /// fitted object bit-for-bit.
    pub fn from_g(g: &GFit) -> EFit {
        let gmap = g.map.clone();
        EFit {
            fitted: g.fitted.clone(),
            map: Arc::new(move |_z, w| gmap(w)),
        }
    }

    pub fn from_density_fn(f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> EFit {
        // features are (z ++ w); the closure receives them concatenated
        EFit {
            fitted: FittedExposure::ExactDensity(Arc::new(f)),
            map: Arc::new(|z, w| {
                let mut v = Vec::with_capacity(z.len() + w.len());
                v.extend_from_slice(z);
                v.extend_from_slice(w);
                v
            }),
        }
    }

    pub fn density(&self, a: f64, z: &[f64], w: &[f64]) -> f64 {
        self.fitted.density(a, &(self.map)(z, w))
    }
}

/// Outcome regression m(a,z,w) with its feature map.
#[derive(Clone)]
pub struct MFit {
    pub fitted: FittedRegression,
    map: AzwMap,
}

impl MFit {
    pub fn new(fitted: FittedRegression, map: AzwMap) -> MFit {
        MFit { fitted, map }
    }

    pub fn from_fn(f: impl Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static) -> MFit {
        let f = Arc::new(f);
        MFit {
            fitted: FittedRegression::from_fn(move |packed: &[f64]| {
                // packed as [a, len(z), z.., w..] by the map below
                let a = packed[0];
                let nz = packed[1] as usize;
                f(a, &packed[2..2 + nz], &packed[2 + nz..])
            }),
            map: Arc::new(|a, z, w| {
                let mut v = Vec::with_capacity(2 + z.len() + w.len());
                v.push(a);
                v.push(z.len() as f64);
                v.extend_from_slice(z);
                v.extend_from_slice(w);
                v
            }),
        }
    }

    pub fn predict(&self, a: f64, z: &[f64], w: &[f64]) -> f64 {
        self.fitted.predict(&(self.map)(a, z, w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiForm {
    /// Pseudo-outcome {g/e}·m(·): the density ratio stays inside the outer
    /// expectation, stabilizing the inverse weights.
    Stabilized,
    /// Pseudo-outcome m(·)/e with the fitted g multiplied back in at
    /// evaluation time. Exposed for testing only.
    Unstabilized,
}

/// Fitted auxiliary regression phi. For incremental propensity score
/// interventions it is a function of w alone; otherwise of (a, w).
#[derive(Clone)]
pub struct PhiFit {
    reg: FittedRegression,
    includes_exposure: bool,
    w_map: WMap,
    unstabilized_g: Option<Box<GFit>>,
    pub extreme_weights: usize,
}

impl PhiFit {
    pub fn eval(&self, a: f64, w: &[f64]) -> f64 {
        let wf = (self.w_map)(w);
        let val = if self.includes_exposure {
            let mut feats = Vec::with_capacity(1 + wf.len());
            feats.push(a);
            feats.extend_from_slice(&wf);
            self.reg.predict(&feats)
        } else {
            self.reg.predict(&wf)
        };
        match &self.unstabilized_g {
            Some(g) => val * g.density(a, w),
            None => val,
        }
    }

    pub fn from_fn_of_w(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> PhiFit {
        PhiFit {
            reg: FittedRegression::from_fn(f),
            includes_exposure: false,
            w_map: Arc::new(|w| w.to_vec()),
            unstabilized_g: None,
            extreme_weights: 0,
        }
    }

    pub fn from_fn_of_aw(f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> PhiFit {
        let f = Arc::new(f);
        PhiFit {
            reg: FittedRegression::from_fn(move |feats: &[f64]| f(feats[0], &feats[1..])),
            includes_exposure: true,
            w_map: Arc::new(|w| w.to_vec()),
            unstabilized_g: None,
            extreme_weights: 0,
        }
    }
}

impl fmt::Debug for GFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GFit({:?})", self.fitted)
    }
}

impl fmt::Debug for EFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EFit({:?})", self.fitted)
    }
}

impl fmt::Debug for MFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MFit({:?})", self.fitted)
    }
}

impl fmt::Debug for PhiFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PhiFit(includes_exposure={}, {:?})",
            self.includes_exposure, self.reg
        )
    }
}

/// Fitted nuisance functions for one training sample. The mediator-marginal
/// outcome regression b(a,w) is housed as the `m` fit of the mediator-free
/// reduction, and the tilt normalizer c(w) is evaluated on demand from `g`.
#[derive(Debug, Clone)]
pub struct NuisanceFits {
    pub g: GFit,
    pub e: EFit,
    pub m: MFit,
    pub phi: PhiFit,
}

/// Fit the auxiliary regression phi from already-fitted g, e, m on the same
/// training data, constructing the intervention-specific pseudo-outcomes.
#[allow(clippy::too_many_arguments)]
pub fn fit_phi(
    train: &ObservedDataset,
    g: &GFit,
    e: &EFit,
    m: &MFit,
    spec: &LearnerSpec,
    maps: &FeatureMaps,
    intervention: &InterventionSpec,
    form: PhiForm,
    floor: f64,
) -> Result<PhiFit> {
    let n = train.n();
    let mut extreme = 0usize;
    let mut ratio_at = |i: usize| -> f64 {
        let (z, w) = (train.z().row(i), train.w().row(i));
        let gi = g.density(train.a()[i], w);
        let ei = e.density(train.a()[i], z, w);
        if ei < floor {
            extreme += 1;
        }
        match form {
            PhiForm::Stabilized => gi / ei.max(floor),
            PhiForm::Unstabilized => 1.0 / ei.max(floor),
        }
    };

    let (pseudo, includes_exposure): (Vec<f64>, bool) = match intervention {
        InterventionSpec::IncrementalPropensity { .. } => {
            let p = (0..n)
                .map(|i| {
                    let (z, w) = (train.z().row(i), train.w().row(i));
                    m.predict(1.0, z, w) - m.predict(0.0, z, w)
                })
                .collect();
            (p, false)
        }
        InterventionSpec::ExponentialTilt { .. } => {
            let p = (0..n)
                .map(|i| {
                    let (z, w) = (train.z().row(i), train.w().row(i));
                    ratio_at(i) * m.predict(train.a()[i], z, w)
                })
                .collect();
            (p, true)
        }
        InterventionSpec::ShiftPolicy { delta, bounds } => {
            let (l, _u) = bounds.ok_or_else(|| {
                Error::domain("shift policy bounds must be resolved before fitting phi")
            })?;
            let p = (0..n)
                .map(|i| {
                    let (z, w) = (train.z().row(i), train.w().row(i));
                    let shifted = apply_policy(train.a()[i], l, *delta);
                    ratio_at(i) * m.predict(shifted, z, w)
                })
                .collect();
            (p, true)
        }
    };

    let feats = if includes_exposure {
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut v = vec![train.a()[i]];
                v.extend((maps.phi_w)(train.w().row(i)));
                v
            })
            .collect();
        rows_to_matrix(&cols)
    } else {
        let cols: Vec<Vec<f64>> = (0..n).map(|i| (maps.phi_w)(train.w().row(i))).collect();
        rows_to_matrix(&cols)
    };

    let reg = fit_regression(spec, &feats, &pseudo, Family::Gaussian)?;
    // the incremental pseudo-outcome carries no density ratio, so the
    // unstabilized parameterization does not apply to it
    let needs_g = includes_exposure && matches!(form, PhiForm::Unstabilized);
    Ok(PhiFit {
        reg,
        includes_exposure,
        w_map: maps.phi_w.clone(),
        unstabilized_g: if needs_g {
            Some(Box::new(g.clone()))
        } else {
            None
        },
        extreme_weights: extreme,
    })
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Matrix {
    let ncols = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * ncols);
    for r in rows {
        data.extend_from_slice(r);
    }
    Matrix::new(data, ncols)
}
