//! Convex subproblems of the alternating search: a quadratic objective with
//! linear inequalities and second-order cone rows
//!
//! ```text
//! aᵀU + b + λ‖(LᵀU + v, √s)‖ ≤ h
//! ```
//!
//! [`BarrierSolver`] is the in-repo backend. Other solvers plug in through
//! [`ConicBackend`].

mod barrier;

use std::time::Duration;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use barrier::BarrierSolver;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub p: DMatrix<f64>,
    pub c: DVector<f64>,
    pub constant: f64,
}

impl QuadraticObjective {
    pub fn eval(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.p * u)) + self.c.dot(u) + self.constant
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub a: DVector<f64>,
    pub b: f64,
    pub lambda: f64,
    pub l: DMatrix<f64>,
    pub v: DVector<f64>,
    pub s: f64,
    pub h: f64,
}

impl SocConstraint {
    /// `h − aᵀU − b − λ‖(LᵀU + v, √s)‖`; negative when violated.
    pub fn slack(&self, u: &DVector<f64>) -> f64 {
        let spread = if self.lambda == 0.0 {
            0.0
        } else {
            let z = self.l.transpose() * u + &self.v;
            self.lambda * (z.norm_squared() + self.s).sqrt()
        };
        self.h - self.a.dot(u) - self.b - spread
    }
}

/// `minimize ½UᵀPU + cᵀU + constant` subject to `A_u U ≤ b_u` and the cone rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    objective: QuadraticObjective,
    a_u: DMatrix<f64>,
    b_u: DVector<f64>,
    soc: Vec<SocConstraint>,
}

impl ConicProgram {
    pub fn new(
        objective: QuadraticObjective,
        a_u: DMatrix<f64>,
        b_u: DVector<f64>,
        soc: Vec<SocConstraint>,
    ) -> Result<Self> {
        let n = objective.c.len();
        let p = &objective.p;
        if p.nrows() != n || p.ncols() != n {
            return Err(Error::InvalidProgram(format!(
                "P is {}x{} but c has length {n}",
                p.nrows(),
                p.ncols()
            )));
        }
        let scale = p.amax().max(1.0);
        if (p - p.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidProgram("P is not symmetric".into()));
        }
        if n > 0 {
            let min_eig = SymmetricEigen::new(p.clone()).eigenvalues.min();
            if min_eig < -1e-9 * scale {
                return Err(Error::InvalidProgram(format!(
                    "P is not positive semidefinite (eigenvalue {min_eig:e})"
                )));
            }
        }
        if a_u.ncols() != n || a_u.nrows() != b_u.len() {
            return Err(Error::InvalidProgram(format!(
                "linear block is {}x{} with {} bounds for {n} variables",
                a_u.nrows(),
                a_u.ncols(),
                b_u.len()
            )));
        }
        for (i, c) in soc.iter().enumerate() {
            if c.a.len() != n || c.l.nrows() != n || c.l.ncols() != c.v.len() {
                return Err(Error::InvalidProgram(format!(
                    "cone row {i} has inconsistent dimensions"
                )));
            }
            if !(c.lambda >= 0.0 && c.lambda.is_finite()) || !(c.s >= 0.0) {
                return Err(Error::InvalidProgram(format!(
                    "cone row {i} needs finite lambda ≥ 0 and s ≥ 0"
                )));
            }
        }
        let finite = objective.c.iter().chain(p.iter()).chain(a_u.iter()).chain(b_u.iter());
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProgram("non-finite coefficient".into()));
        }
        Ok(Self {
            objective,
            a_u,
            b_u,
            soc,
        })
    }

    pub fn dim(&self) -> usize {
        self.objective.c.len()
    }

    pub fn objective(&self) -> &QuadraticObjective {
        &self.objective
    }

    pub fn linear(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.a_u, &self.b_u)
    }

    pub fn soc(&self) -> &[SocConstraint] {
        &self.soc
    }

    /// Largest violation over all constraints (≤ 0 when feasible) and the
    /// constraint attaining it.
    pub fn max_violation(&self, u: &DVector<f64>) -> (f64, Option<ConstraintRef>) {
        let mut worst = (f64::NEG_INFINITY, None);
        let lin = &self.a_u * u - &self.b_u;
        for (i, v) in lin.iter().enumerate() {
            if *v > worst.0 {
                worst = (*v, Some(ConstraintRef::Linear(i)));
            }
        }
        for (i, c) in self.soc.iter().enumerate() {
            let v = -c.slack(u);
            if v > worst.0 {
                worst = (v, Some(ConstraintRef::Cone(i)));
            }
        }
        worst
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(&ProgramJson::from(self))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ProgramJson = serde_json::from_str(text).map_err(|e| Error::Config {
            path: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        raw.try_into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintRef {
    Linear(usize),
    Cone(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityDiagnostic {
    pub constraint: Option<ConstraintRef>,
    pub violation: f64,
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOutcome {
    pub status: SolverStatus,
    pub u: DVector<f64>,
    pub objective: f64,
    pub residuals: KktResiduals,
    pub iterations: usize,
    #[serde(with = "duration_secs")]
    pub wall_time: Duration,
    pub infeasibility: Option<InfeasibilityDiagnostic>,
    pub message: Option<String>,
}

impl SolverOutcome {
    pub fn is_optimal(&self) -> bool {
        self.status == SolverStatus::Optimal
    }
}

pub(crate) mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(secs.max(0.0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

/// A convex solver that accepts [`ConicProgram`]s.
pub trait ConicBackend: Sync {
    fn name(&self) -> &str;
    fn solve(&self, program: &ConicProgram, opts: &SolverOptions) -> SolverOutcome;
}

/// Solves with the in-repo [`BarrierSolver`].
pub fn solve(program: &ConicProgram, opts: &SolverOptions) -> SolverOutcome {
    BarrierSolver.solve(program, opts)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SocJson {
    a: Vec<f64>,
    b: f64,
    lambda: f64,
    #[serde(rename = "L")]
    l: Vec<Vec<f64>>,
    v: Vec<f64>,
    s: f64,
    h: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProgramJson {
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    c: Vec<f64>,
    #[serde(default)]
    constant: f64,
    #[serde(rename = "A_u", default)]
    a_u: Vec<Vec<f64>>,
    #[serde(default)]
    b_u: Vec<f64>,
    #[serde(default)]
    soc: Vec<SocJson>,
}

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::InvalidProgram(format!(
            "{what}: row {bad} has {} entries, expected {ncols}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl From<&ConicProgram> for ProgramJson {
    fn from(p: &ConicProgram) -> Self {
        Self {
            p: rows_of(&p.objective.p),
            c: p.objective.c.iter().copied().collect(),
            constant: p.objective.constant,
            a_u: rows_of(&p.a_u),
            b_u: p.b_u.iter().copied().collect(),
            soc: p
                .soc
                .iter()
                .map(|c| SocJson {
                    a: c.a.iter().copied().collect(),
                    b: c.b,
                    lambda: c.lambda,
                    l: rows_of(&c.l),
                    v: c.v.iter().copied().collect(),
                    s: c.s,
                    h: c.h,
                })
                .collect(),
        }
    }
}

impl TryFrom<ProgramJson> for ConicProgram {
    type Error = Error;

    fn try_from(raw: ProgramJson) -> Result<Self> {
        let n = raw.c.len();
        let objective = QuadraticObjective {
            p: matrix_from_rows(&raw.p, n, "P")?,
            c: DVector::from_vec(raw.c),
            constant: raw.constant,
        };
        if objective.p.nrows() != n {
            return Err(Error::InvalidProgram(format!("P must have {n} rows")));
        }
        let a_u = matrix_from_rows(&raw.a_u, n, "A_u")?;
        let soc = raw
            .soc
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let width = c.v.len();
                let l = matrix_from_rows(&c.l, width, &format!("soc[{i}].L"))?;
                let l = if l.nrows() == 0 { DMatrix::zeros(n, width) } else { l };
                Ok(SocConstraint {
                    a: DVector::from_vec(c.a),
                    b: c.b,
                    lambda: c.lambda,
                    l,
                    v: DVector::from_vec(c.v),
                    s: c.s,
                    h: c.h,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ConicProgram::new(objective, a_u, DVector::from_vec(raw.b_u), soc)
    }
}
