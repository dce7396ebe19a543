//! Deterministic reformulation of the joint chance constraint
//! `P{∩ G_i x(k_i) ≤ h_i} ≥ 1 − α`.
//!
//! Boole's inequality splits the joint violation probability into per-row
//! risks `ω_i` with `Σ ω_i ≤ α`. Each row is tightened to
//! `E[G x(k)] + λ·Std[G x(k)] ≤ h`, and the one-sided Vysochanskij–Petunin
//! inequality bounds that row's violation probability by
//! `ω = 4 / (9(λ² + 1))` whenever the margin is unimodal and `λ > √(5/3)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::moments::{constraint_moments, ConstraintMoments, SystemSpec};
use crate::{Error, Result};

/// `√(5/3)`, the exclusive lower end of the admissible `λ` range.
pub const LAMBDA_MIN: f64 = 1.290_994_448_735_805_6;
/// Numerical margin applied on top of [`LAMBDA_MIN`].
pub const LAMBDA_MARGIN: f64 = 1e-9;
/// The largest admissible total risk, `vp_tail_bound(LAMBDA_MIN)`.
pub const ALPHA_MAX: f64 = 1.0 / 6.0;

/// `4 / (9(λ² + 1))` without a domain check.
pub fn vp_tail_bound(lambda: f64) -> f64 {
    4.0 / (9.0 * (lambda * lambda + 1.0))
}

/// One-sided Vysochanskij–Petunin tail bound, defined for `λ > √(5/3)`.
/// An infinite `λ` carries zero risk.
pub fn vp_bound(lambda: f64) -> Result<f64> {
    if lambda.is_nan() || lambda < LAMBDA_MIN + LAMBDA_MARGIN {
        return Err(Error::Domain(format!(
            "lambda = {lambda} must exceed sqrt(5/3) ≈ {LAMBDA_MIN:.6}"
        )));
    }
    Ok(if lambda.is_infinite() {
        0.0
    } else {
        vp_tail_bound(lambda)
    })
}

/// Inverse of [`vp_bound`]: `λ = √(4/(9ω) − 1)` for `0 < ω < 1/6`.
pub fn risk_to_lambda(omega: f64) -> Result<f64> {
    if !(omega > 0.0 && omega < ALPHA_MAX) {
        return Err(Error::Domain(format!(
            "risk {omega} outside (0, 1/6)"
        )));
    }
    Ok((4.0 / (9.0 * omega) - 1.0).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChanceRow {
    pub id: String,
    pub g: DVector<f64>,
    pub h: f64,
    pub k: usize,
}

/// Polytopic rows that must hold jointly with probability `1 − α`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointChanceConstraint {
    rows: Vec<ChanceRow>,
    alpha: f64,
}

impl JointChanceConstraint {
    pub fn new(rows: Vec<ChanceRow>, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if rows.is_empty() {
            return Err(Error::Domain("joint chance constraint has no rows".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for row in &rows {
            if !seen.insert(row.id.as_str()) {
                return Err(Error::Domain(format!("duplicate row id `{}`", row.id)));
            }
            if row.k == 0 {
                return Err(Error::Index(format!("row `{}` has time 0", row.id)));
            }
        }
        Ok(Self { rows, alpha })
    }

    pub fn rows(&self) -> &[ChanceRow] {
        &self.rows
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.rows.clone(), alpha)
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < ALPHA_MAX {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "alpha = {alpha} must lie in (0, 1/6): per-row multipliers need lambda > sqrt(5/3), \
             whose tail bound is 1/6"
        )))
    }
}

/// Modeling assumptions the caller vouches for; none are checked numerically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Attestation {
    pub independence: bool,
    pub unimodal: bool,
}

impl Attestation {
    pub fn all() -> Self {
        Self {
            independence: true,
            unimodal: true,
        }
    }

    pub fn require(&self) -> Result<()> {
        if !self.independence {
            return Err(Error::NotAttested(
                "independence of state-matrix entries across entries and time",
            ));
        }
        if !self.unimodal {
            return Err(Error::NotAttested("unimodality of every constraint margin"));
        }
        Ok(())
    }
}

/// A row paired with the moments of its margin: encodes `E + λ·Std ≤ h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReformulatedConstraint {
    pub row: ChanceRow,
    pub moments: ConstraintMoments,
}

impl ReformulatedConstraint {
    pub fn id(&self) -> &str {
        &self.row.id
    }

    pub fn mean(&self, u: &DVector<f64>) -> f64 {
        self.moments.mean(u)
    }

    pub fn std(&self, u: &DVector<f64>) -> f64 {
        self.moments.std(u)
    }

    /// `h − E − λ·Std`; rows with zero spread ignore `λ`.
    pub fn slack(&self, u: &DVector<f64>, lambda: f64) -> f64 {
        let std = self.std(u);
        let spread = if std == 0.0 { 0.0 } else { lambda * std };
        self.row.h - self.mean(u) - spread
    }

    pub fn is_deterministic(&self) -> bool {
        self.moments.is_deterministic()
    }
}

pub fn build_reformulation(
    spec: &SystemSpec,
    jcc: &JointChanceConstraint,
    attestation: &Attestation,
) -> Result<Vec<ReformulatedConstraint>> {
    attestation.require()?;
    jcc.rows()
        .iter()
        .map(|row| {
            if row.k > spec.horizon() {
                return Err(Error::Index(format!(
                    "row `{}` refers to time {} beyond horizon {}",
                    row.id,
                    row.k,
                    spec.horizon()
                )));
            }
            Ok(ReformulatedConstraint {
                row: row.clone(),
                moments: constraint_moments(spec, &row.g, row.k)?,
            })
        })
        .collect()
}

/// Per-row multipliers, aligned with the reformulated rows. `f64::INFINITY`
/// marks a row whose spread vanishes; it carries no risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAllocation {
    pub ids: Vec<String>,
    #[serde(with = "extended_real::vec")]
    pub lambdas: Vec<f64>,
}

impl RiskAllocation {
    pub fn new(ids: Vec<String>, lambdas: Vec<f64>) -> Result<Self> {
        if ids.len() != lambdas.len() {
            return Err(Error::Dimension(format!(
                "{} ids for {} multipliers",
                ids.len(),
                lambdas.len()
            )));
        }
        Ok(Self { ids, lambdas })
    }

    pub fn uniform(rows: &[ReformulatedConstraint], lambda: f64) -> Self {
        Self {
            ids: rows.iter().map(|r| r.row.id.clone()).collect(),
            lambdas: vec![lambda; rows.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.ids
            .iter()
            .position(|i| i == id)
            .map(|idx| self.lambdas[idx])
    }

    /// Implied per-row risks; `None` where `λ ≤ √(5/3)`.
    pub fn risks(&self) -> Vec<Option<f64>> {
        self.lambdas.iter().map(|&l| vp_bound(l).ok()).collect()
    }

    pub fn risk_sum(&self) -> f64 {
        self.lambdas
            .iter()
            .map(|&l| {
                if l.is_infinite() {
                    0.0
                } else {
                    vp_tail_bound(l.max(LAMBDA_MIN))
                }
            })
            .sum()
    }

    pub fn is_valid(&self, alpha: f64) -> bool {
        self.lambdas
            .iter()
            .all(|&l| l >= LAMBDA_MIN + LAMBDA_MARGIN)
            && self.risk_sum() <= alpha
    }

    pub fn aligned_with(&self, rows: &[ReformulatedConstraint]) -> Result<()> {
        let same = self.ids.len() == rows.len()
            && self.ids.iter().zip(rows).all(|(id, r)| *id == r.row.id);
        if same {
            Ok(())
        } else {
            Err(Error::Dimension(
                "risk allocation ids do not match the reformulated rows".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCheck {
    pub id: String,
    pub k: usize,
    pub mean: f64,
    pub std: f64,
    #[serde(with = "extended_real")]
    pub lambda: f64,
    #[serde(with = "extended_real")]
    pub risk: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub rows: Vec<RowCheck>,
    pub risk_sum: f64,
    pub alpha: f64,
    pub tol: f64,
    pub allocation_valid: bool,
    pub targets_satisfied: bool,
    pub feasible: bool,
}

/// Evaluates every tightened row at `U` and the risk budget of `alloc`.
/// A row passes when its slack is at least `−tol·max(1, |h|)`.
pub fn check_feasibility(
    rows: &[ReformulatedConstraint],
    u: &DVector<f64>,
    alloc: &RiskAllocation,
    alpha: f64,
    tol: f64,
) -> Result<FeasibilityReport> {
    alloc.aligned_with(rows)?;
    let checks: Vec<RowCheck> = rows
        .iter()
        .zip(&alloc.lambdas)
        .map(|(r, &lambda)| RowCheck {
            id: r.row.id.clone(),
            k: r.row.k,
            mean: r.mean(u),
            std: r.std(u),
            lambda,
            risk: vp_bound(lambda).unwrap_or(f64::NAN),
            slack: r.slack(u, lambda),
        })
        .collect();
    let allocation_valid = alloc.is_valid(alpha);
    let targets_satisfied = checks
        .iter()
        .zip(rows)
        .all(|(c, r)| c.slack >= -tol * r.row.h.abs().max(1.0));
    Ok(FeasibilityReport {
        rows: checks,
        risk_sum: alloc.risk_sum(),
        alpha,
        tol,
        allocation_valid,
        targets_satisfied,
        feasible: allocation_valid && targets_satisfied,
    })
}

/// JSON has no infinities: non-finite values travel as `"inf"`, `"-inf"` or
/// `"nan"`.
pub(crate) mod extended_real {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn encode(x: f64) -> Repr {
        if x.is_finite() {
            Repr::Num(x)
        } else if x.is_nan() {
            Repr::Text("nan".into())
        } else if x > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn decode<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("expected a number, `inf` or `nan`, got `{other}`"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        encode(*x).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        decode(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(xs.iter().map(|&x| encode(x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(decode).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lambda_min_constant() {
        assert_eq!(LAMBDA_MIN, (5.0f64 / 3.0).sqrt());
    }

    #[test]
    fn vp_bound_values() {
        assert_relative_eq!(vp_tail_bound(LAMBDA_MIN), 1.0 / 6.0, epsilon = 1e-16);
        assert_relative_eq!(vp_bound(2.0).unwrap(), 4.0 / 45.0, epsilon = 1e-16);
        assert_relative_eq!(vp_bound(6.5912).unwrap(), 0.01, epsilon = 1e-5);
        let near = vp_bound(LAMBDA_MIN + 1e-8).unwrap();
        assert!(near < 1.0 / 6.0 && 1.0 / 6.0 - near < 1e-8);
        assert!(matches!(vp_bound(LAMBDA_MIN), Err(Error::Domain(_))));
        assert!(vp_bound(1.0).is_err());
        assert!(vp_bound(f64::NAN).is_err());
        assert_eq!(vp_bound(f64::INFINITY).unwrap(), 0.0);
    }

    #[test]
    fn risk_to_lambda_values() {
        assert_relative_eq!(risk_to_lambda(4.0 / 45.0).unwrap(), 2.0, epsilon = 1e-14);
        let l = risk_to_lambda(0.01).unwrap();
        assert_relative_eq!(l, 43.444_444_444_444_44f64.sqrt(), epsilon = 1e-14);
        assert!((l - 6.5912).abs() < 1e-4);
        assert_relative_eq!(vp_bound(l).unwrap(), 0.01, epsilon = 1e-15);
        let edge = risk_to_lambda(1.0 / 6.0 - 1e-12).unwrap();
        assert!((edge - LAMBDA_MIN).abs() < 1e-9);
        assert!(risk_to_lambda(1.0 / 6.0).is_err());
        assert!(risk_to_lambda(0.0).is_err());
        assert!(risk_to_lambda(-0.1).is_err());
    }

    #[test]
    fn alpha_domain() {
        let row = ChanceRow {
            id: "r".into(),
            g: DVector::from_element(1, 1.0),
            h: 1.0,
            k: 1,
        };
        assert!(JointChanceConstraint::new(vec![row.clone()], 1.0 / 6.0).is_err());
        assert!(JointChanceConstraint::new(vec![row.clone()], 0.0).is_err());
        assert!(JointChanceConstraint::new(vec![row.clone(), row.clone()], 0.1).is_err());
        assert!(JointChanceConstraint::new(vec![row], 0.1).is_ok());
    }

    #[test]
    fn attestation_is_required() {
        let missing = Attestation {
            independence: true,
            unimodal: false,
        };
        assert!(matches!(missing.require(), Err(Error::NotAttested(_))));
        assert!(Attestation::all().require().is_ok());
    }

    #[test]
    fn allocation_validity() {
        let alloc = RiskAllocation::new(vec!["a".into(), "b".into()], vec![2.0, f64::INFINITY])
            .unwrap();
        assert_relative_eq!(alloc.risk_sum(), 4.0 / 45.0);
        assert!(alloc.is_valid(0.1));
        assert!(!alloc.is_valid(0.08));
        let low = RiskAllocation::new(vec!["a".into()], vec![1.2]).unwrap();
        assert!(!low.is_valid(0.16));
        assert_eq!(low.risks(), vec![None]);
    }

    #[test]
    fn infinite_lambdas_survive_json() {
        let alloc = RiskAllocation::new(vec!["a".into(), "b".into()], vec![2.5, f64::INFINITY])
            .unwrap();
        let text = serde_json::to_string(&alloc).unwrap();
        assert!(text.contains("\"inf\""));
        let back: RiskAllocation = serde_json::from_str(&text).unwrap();
        assert_eq!(back, alloc);
        assert!(serde_json::from_str::<RiskAllocation>(r#"{"ids":["a"],"lambdas":["big"]}"#).is_err());
    }
}
