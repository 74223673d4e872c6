//! Core data model: datasets, column roles, intervention specifications and
//! result records shared by the estimation modules.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Row-major dense matrix. Zero columns is legal (empty mediator set).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    ncols: usize,
    nrows: usize,
}

impl Matrix {
    pub fn new(data: Vec<f64>, ncols: usize) -> Matrix {
        let nrows = if ncols == 0 { 0 } else { data.len() / ncols };
        assert!(ncols == 0 || data.len() == nrows * ncols, "ragged matrix");
        Matrix { data, ncols, nrows }
    }

    /// Matrix with `nrows` rows and no columns.
    pub fn empty(nrows: usize) -> Matrix {
        Matrix {
            data: Vec::new(),
            ncols: 0,
            nrows,
        }
    }

    pub fn from_columns(cols: &[Vec<f64>], nrows: usize) -> Matrix {
        let ncols = cols.len();
        let mut data = Vec::with_capacity(nrows * ncols);
        for i in 0..nrows {
            for c in cols {
                data.push(c[i]);
            }
        }
        Matrix { data, ncols, nrows }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        if self.ncols == 0 {
            &[]
        } else {
            &self.data[i * self.ncols..(i + 1) * self.ncols]
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    /// Copy of the selected rows.
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.ncols);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            data,
            ncols: self.ncols,
            nrows: rows.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureKind {
    Binary,
    Continuous,
}

/// Column-role assignment used when validating a raw table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub y: String,
    pub a: String,
    #[serde(default)]
    pub z: Vec<String>,
    #[serde(default)]
    pub w: Vec<String>,
}

/// A parsed table of named columns; `None` marks a missing cell.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub names: Vec<String>,
    pub columns: Vec<Vec<Option<f64>>>,
}

impl RawTable {
    fn column(&self, name: &str) -> Option<&Vec<Option<f64>>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|ix| &self.columns[ix])
    }
}

/// Validated observational dataset with role metadata resolved.
#[derive(Debug, Clone)]
pub struct ObservedDataset {
    w: Matrix,
    a: Vec<f64>,
    z: Matrix,
    y: Vec<f64>,
    exposure_kind: ExposureKind,
}

impl ObservedDataset {
    /// Assemble a dataset from already-validated parts.
    pub fn from_parts(w: Matrix, a: Vec<f64>, z: Matrix, y: Vec<f64>) -> Result<ObservedDataset> {
        let n = a.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if y.len() != n || (w.ncols() > 0 && w.nrows() != n) || (z.ncols() > 0 && z.nrows() != n) {
            return Err(Error::domain("column lengths differ"));
        }
        let kind = infer_exposure_kind(&a);
        if matches!(kind, ExposureKind::Binary) {
            debug_assert!(a.iter().all(|&v| v == 0.0 || v == 1.0));
        }
        let w = if w.ncols() == 0 { Matrix::empty(n) } else { w };
        let z = if z.ncols() == 0 { Matrix::empty(n) } else { z };
        Ok(ObservedDataset {
            w,
            a,
            z,
            y,
            exposure_kind: kind,
        })
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn exposure_kind(&self) -> ExposureKind {
        self.exposure_kind
    }

    /// Override the automatically inferred exposure kind.
    pub fn set_exposure_kind(&mut self, kind: ExposureKind) -> Result<()> {
        if matches!(kind, ExposureKind::Binary)
            && !self.a.iter().all(|&v| v == 0.0 || v == 1.0)
        {
            return Err(Error::domain(
                "exposure declared binary but values outside {0,1} present",
            ));
        }
        self.exposure_kind = kind;
        Ok(())
    }

    pub fn has_mediators(&self) -> bool {
        self.z.ncols() > 0
    }

    /// View of the same data with the mediator set dropped. Used by the
    /// total-effect reduction where e collapses to g and m to b.
    pub fn without_mediators(&self) -> ObservedDataset {
        ObservedDataset {
            w: self.w.clone(),
            a: self.a.clone(),
            z: Matrix::empty(self.n()),
            y: self.y.clone(),
            exposure_kind: self.exposure_kind,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> ObservedDataset {
        ObservedDataset {
            w: self.w.select_rows(rows),
            a: rows.iter().map(|&i| self.a[i]).collect(),
            z: self.z.select_rows(rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            exposure_kind: self.exposure_kind,
        }
    }

    pub fn ybar(&self) -> f64 {
        crate::numeric::mean(&self.y)
    }
}

fn infer_exposure_kind(a: &[f64]) -> ExposureKind {
    if a.iter().all(|&v| v == 0.0 || v == 1.0) {
        ExposureKind::Binary
    } else {
        ExposureKind::Continuous
    }
}

/// Validate a raw table against a role map, rejecting missing values and
/// inferring the exposure kind.
pub fn validate_dataset(raw: &RawTable, roles: &ColumnRoles) -> Result<ObservedDataset> {
    let mut seen: Vec<&str> = Vec::new();
    let claim = |name: &'static str, col: &str, seen: &mut Vec<&str>| -> Result<()> {
        if seen.contains(&col) {
            return Err(Error::RoleConflict(format!(
                "column `{col}` assigned more than one role (second role: {name})"
            )));
        }
        Ok(())
    };
    claim("y", &roles.y, &mut seen)?;
    seen.push(&roles.y);
    claim("a", &roles.a, &mut seen)?;
    seen.push(&roles.a);
    for c in roles.z.iter().chain(roles.w.iter()) {
        claim("z/w", c, &mut seen)?;
        seen.push(c);
    }

    let take = |name: &str| -> Result<Vec<f64>> {
        let col = raw
            .column(name)
            .ok_or_else(|| Error::RoleConflict(format!("column `{name}` not found in input")))?;
        col.iter()
            .enumerate()
            .map(|(row, v)| match v {
                Some(x) if x.is_finite() => Ok(*x),
                _ => Err(Error::MissingValue {
                    row,
                    col: name.to_string(),
                }),
            })
            .collect()
    };

    let y = take(&roles.y)?;
    let a = take(&roles.a)?;
    let n = y.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let zcols: Vec<Vec<f64>> = roles.z.iter().map(|c| take(c)).collect::<Result<_>>()?;
    let wcols: Vec<Vec<f64>> = roles.w.iter().map(|c| take(c)).collect::<Result<_>>()?;
    for c in zcols.iter().chain(wcols.iter()) {
        if c.len() != n {
            return Err(Error::domain("column lengths differ"));
        }
    }
    if a.len() != n {
        return Err(Error::domain("column lengths differ"));
    }

    let w = Matrix::from_columns(&wcols, n);
    let z = Matrix::from_columns(&zcols, n);
    ObservedDataset::from_parts(
        if wcols.is_empty() { Matrix::empty(n) } else { w },
        a,
        if zcols.is_empty() { Matrix::empty(n) } else { z },
        y,
    )
}

/// Stochastic intervention on the exposure mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterventionSpec {
    /// Multiply the odds of a binary exposure by `delta_prime`.
    IncrementalPropensity { delta_prime: f64 },
    /// Exponentially tilt the exposure density: g_delta ∝ exp(delta * a) g.
    ExponentialTilt { delta: f64 },
    /// Shift a continuous exposure down by `delta` where the support allows.
    ShiftPolicy {
        delta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bounds: Option<(f64, f64)>,
    },
}

impl InterventionSpec {
    /// Check the spec against a dataset's exposure.
    pub fn validate(&self, kind: ExposureKind, a: &[f64]) -> Result<()> {
        match self {
            InterventionSpec::IncrementalPropensity { delta_prime } => {
                if kind != ExposureKind::Binary {
                    return Err(Error::domain(
                        "incremental propensity intervention requires a binary exposure",
                    ));
                }
                if !(*delta_prime > 0.0) {
                    return Err(Error::domain("delta_prime must be > 0"));
                }
            }
            InterventionSpec::ExponentialTilt { delta } => {
                if !delta.is_finite() {
                    return Err(Error::domain("tilt delta must be finite"));
                }
            }
            InterventionSpec::ShiftPolicy { delta, bounds } => {
                if kind != ExposureKind::Continuous {
                    return Err(Error::domain("shift policy requires a continuous exposure"));
                }
                let (l, u) = bounds.unwrap_or_else(|| sample_bounds(a));
                if !(l < u) {
                    return Err(Error::domain("shift policy bounds must satisfy l < u"));
                }
                if !(*delta > 0.0 && *delta < u - l) {
                    return Err(Error::domain(format!(
                        "shift delta must lie in (0, {})",
                        u - l
                    )));
                }
            }
        }
        Ok(())
    }

    /// Resolved support bounds for a shift policy (sample min/max by default).
    pub fn shift_bounds(&self, a: &[f64]) -> Option<(f64, f64)> {
        match self {
            InterventionSpec::ShiftPolicy { bounds, .. } => {
                Some(bounds.unwrap_or_else(|| sample_bounds(a)))
            }
            _ => None,
        }
    }

    /// Same intervention with a new parameter value; used for delta grids.
    pub fn with_delta(&self, delta: f64) -> InterventionSpec {
        match self {
            InterventionSpec::IncrementalPropensity { .. } => {
                InterventionSpec::IncrementalPropensity { delta_prime: delta }
            }
            InterventionSpec::ExponentialTilt { .. } => {
                InterventionSpec::ExponentialTilt { delta }
            }
            InterventionSpec::ShiftPolicy { bounds, .. } => InterventionSpec::ShiftPolicy {
                delta,
                bounds: *bounds,
            },
        }
    }
}

fn sample_bounds(a: &[f64]) -> (f64, f64) {
    let lo = a.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Per-observation influence-function contributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EifRecord {
    pub d_y: f64,
    pub d_a: f64,
    pub d_zw: f64,
    pub total: f64,
}

impl EifRecord {
    pub fn new(d_y: f64, d_a: f64, d_zw: f64) -> EifRecord {
        EifRecord {
            d_y,
            d_a,
            d_zw,
            total: d_y + d_a + d_zw,
        }
    }
}

/// Full analysis output over a delta grid.
///
/// `psi` holds the total-effect functional E[Y(A_delta)], so that
/// `direct + indirect == total == psi - ybar` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub delta_grid: Vec<f64>,
    pub ybar: f64,
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
    pub direct: Vec<f64>,
    pub indirect: Vec<f64>,
    pub total: Vec<f64>,
    /// Standard errors for the direct effect; empty when the estimator kind
    /// carries no influence-function representation.
    pub se: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub se_indirect: Vec<f64>,
    pub ci_indirect_lo: Vec<f64>,
    pub ci_indirect_hi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_hi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_test_p: Option<f64>,
    /// Number of capped density ratios encountered while assembling scores.
    pub capped_weights: usize,
}

impl EffectReport {
    pub fn empty(delta_grid: Vec<f64>, ybar: f64) -> EffectReport {
        EffectReport {
            delta_grid,
            ybar,
            theta: Vec::new(),
            psi: Vec::new(),
            direct: Vec::new(),
            indirect: Vec::new(),
            total: Vec::new(),
            se: Vec::new(),
            ci_lo: Vec::new(),
            ci_hi: Vec::new(),
            se_indirect: Vec::new(),
            ci_indirect_lo: Vec::new(),
            ci_indirect_hi: Vec::new(),
            band_lo: None,
            band_hi: None,
            sup_test_p: None,
            capped_weights: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, Vec<Option<f64>>)]) -> RawTable {
        RawTable {
            names: rows.iter().map(|(n, _)| n.to_string()).collect(),
            columns: rows.iter().map(|(_, c)| c.clone()).collect(),
        }
    }

    fn roles() -> ColumnRoles {
        ColumnRoles {
            y: "y".into(),
            a: "a".into(),
            z: vec!["z1".into()],
            w: vec!["w1".into()],
        }
    }

    #[test]
    fn well_formed_input() {
        let raw = table(&[
            ("w1", vec![Some(0.0), Some(1.0), Some(0.0)]),
            ("a", vec![Some(0.0), Some(1.0), Some(1.0)]),
            ("z1", vec![Some(1.0), Some(0.0), Some(1.0)]),
            ("y", vec![Some(0.5), Some(1.5), Some(-0.5)]),
        ]);
        let ds = validate_dataset(&raw, &roles()).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.exposure_kind(), ExposureKind::Binary);
    }

    #[test]
    fn missing_outcome_rejected() {
        let raw = table(&[
            ("w1", vec![Some(0.0), Some(1.0)]),
            ("a", vec![Some(0.0), Some(1.0)]),
            ("z1", vec![Some(1.0), Some(0.0)]),
            ("y", vec![Some(0.5), None]),
        ]);
        match validate_dataset(&raw, &roles()) {
            Err(Error::MissingValue { row, col }) => {
                assert_eq!(row, 1);
                assert_eq!(col, "y");
            }
            other => panic!("expected MissingValue, got {other:?}"),
        }
    }

    #[test]
    fn exposure_kind_inference() {
        let raw = table(&[
            ("w1", vec![Some(0.0), Some(1.0), Some(0.0)]),
            ("a", vec![Some(0.0), Some(1.0), Some(1.0)]),
            ("z1", vec![Some(1.0), Some(0.0), Some(1.0)]),
            ("y", vec![Some(0.5), Some(1.5), Some(-0.5)]),
        ]);
        assert_eq!(
            validate_dataset(&raw, &roles()).unwrap().exposure_kind(),
            ExposureKind::Binary
        );
        let raw = table(&[
            ("w1", vec![Some(0.0), Some(1.0), Some(0.0)]),
            ("a", vec![Some(0.0), Some(0.4), Some(1.0)]),
            ("z1", vec![Some(1.0), Some(0.0), Some(1.0)]),
            ("y", vec![Some(0.5), Some(1.5), Some(-0.5)]),
        ]);
        assert_eq!(
            validate_dataset(&raw, &roles()).unwrap().exposure_kind(),
            ExposureKind::Continuous
        );
    }

    #[test]
    fn role_conflict_rejected() {
        let raw = table(&[
            ("a", vec![Some(0.0)]),
            ("y", vec![Some(0.5)]),
        ]);
        let bad = ColumnRoles {
            y: "y".into(),
            a: "y".into(),
            z: vec![],
            w: vec![],
        };
        assert!(matches!(
            validate_dataset(&raw, &bad),
            Err(Error::RoleConflict(_))
        ));
    }

    #[test]
    fn empty_dataset_rejected() {
        let raw = table(&[("a", vec![]), ("y", vec![])]);
        let r = ColumnRoles {
            y: "y".into(),
            a: "a".into(),
            z: vec![],
            w: vec![],
        };
        assert!(matches!(validate_dataset(&raw, &r), Err(Error::EmptyDataset)));
    }

    #[test]
    fn identity_interventions_validate() {
        let a = vec![0.0, 1.0, 1.0];
        InterventionSpec::IncrementalPropensity { delta_prime: 1.0 }
            .validate(ExposureKind::Binary, &a)
            .unwrap();
        InterventionSpec::ExponentialTilt { delta: 0.0 }
            .validate(ExposureKind::Binary, &a)
            .unwrap();
        assert!(InterventionSpec::IncrementalPropensity { delta_prime: -1.0 }
            .validate(ExposureKind::Binary, &a)
            .is_err());
        assert!(InterventionSpec::ShiftPolicy {
            delta: 0.5,
            bounds: None
        }
        .validate(ExposureKind::Binary, &a)
        .is_err());
    }

    #[test]
    fn eif_record_total_is_sum() {
        let r = EifRecord::new(0.25, -0.5, 1.75);
        assert!((r.total - (r.d_y + r.d_a + r.d_zw)).abs() < 1e-12);
    }

    #[test]
    fn effect_report_roundtrip() {
        let mut rep = EffectReport::empty(vec![0.5, 1.0, 2.0], 0.7);
        rep.theta = vec![0.6, 0.7, 0.9];
        rep.psi = vec![0.62, 0.7, 0.88];
        rep.direct = vec![-0.1, 0.0, 0.2];
        rep.indirect = vec![0.02, 0.0, -0.02];
        rep.total = vec![-0.08, 0.0, 0.18];
        rep.se = vec![0.01, 0.01, 0.02];
        rep.ci_lo = vec![-0.12, -0.02, 0.16];
        rep.ci_hi = vec![-0.08, 0.02, 0.24];
        rep.se_indirect = vec![0.01; 3];
        rep.ci_indirect_lo = vec![0.0; 3];
        rep.ci_indirect_hi = vec![0.04; 3];
        rep.band_lo = Some(vec![-0.13, -0.03, 0.15]);
        rep.band_hi = Some(vec![-0.07, 0.03, 0.25]);
        rep.sup_test_p = Some(0.001);
        let json = serde_json::to_string(&rep).unwrap();
        let back: EffectReport = serde_json::from_str(&json).unwrap();
        assert_eq!(rep, back);
    }
}
