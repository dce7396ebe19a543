//! Alternating convex search over the inputs `U` and the multipliers `λ`.
//!
//! For fixed `λ` the tightened problem is a second-order cone program in `U`
//! ([`u_step`]). For fixed `U` the multipliers are reallocated from the
//! realised margins ([`lambda_step`]). Each reallocation keeps the previous
//! `U` feasible, so the objective never increases.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{
    ConicBackend,
    BarrierSolver, ConicProgram, InfeasibilityDiagnostic, QuadraticObjective, SocConstraint,
    SolverOptions, SolverOutcome, SolverStatus,
};
use crate::moments::SystemSpec;
use crate::reformulate::{
    build_reformulation, check_feasibility, risk_to_lambda, vp_tail_bound, Attestation,
    FeasibilityReport, JointChanceConstraint, ReformulatedConstraint, RiskAllocation,
    LAMBDA_MARGIN, LAMBDA_MIN,
};
use crate::{Error, Result};

/// Finite stand-in for `λ = ∞` inside a cone row, and the largest finite
/// multiplier produced by [`lambda_step`].
pub const LAMBDA_CAP: f64 = 1e6;
/// Tolerance of the final feasibility check.
pub const FEASIBILITY_TOL: f64 = 1e-6;
const RELAX_SHRINK: f64 = 1.0 - 1e-12;

/// `Σ_k u(k)ᵀ R(k) u(k) + r(k)ᵀ u(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    quadratic: Vec<DMatrix<f64>>,
    linear: Vec<DVector<f64>>,
}

impl QuadraticCost {
    pub fn new(quadratic: Vec<DMatrix<f64>>, linear: Vec<DVector<f64>>) -> Result<Self> {
        if quadratic.is_empty() || quadratic.len() != linear.len() {
            return Err(Error::Dimension(format!(
                "cost has {} quadratic and {} linear terms",
                quadratic.len(),
                linear.len()
            )));
        }
        let m = linear[0].len();
        for (k, (r, q)) in quadratic.iter().zip(&linear).enumerate() {
            if r.nrows() != m || r.ncols() != m || q.len() != m {
                return Err(Error::Dimension(format!("cost term {k} is not {m}x{m}")));
            }
        }
        Ok(Self { quadratic, linear })
    }

    pub fn time_invariant(r: DMatrix<f64>, q: DVector<f64>, horizon: usize) -> Result<Self> {
        Self::new(vec![r; horizon], vec![q; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.linear.len()
    }

    pub fn m(&self) -> usize {
        self.linear[0].len()
    }

    pub fn quadratic(&self) -> &[DMatrix<f64>] {
        &self.quadratic
    }

    pub fn linear(&self) -> &[DVector<f64>] {
        &self.linear
    }

    /// The same cost as `½UᵀPU + cᵀU` with `P = 2·blkdiag(R(k))`.
    pub fn objective(&self) -> QuadraticObjective {
        let (n, m) = (self.horizon(), self.m());
        let mut p = DMatrix::zeros(n * m, n * m);
        let mut c = DVector::zeros(n * m);
        for k in 0..n {
            let r = &self.quadratic[k];
            p.view_mut((k * m, k * m), (m, m))
                .copy_from(&(r + r.transpose()));
            c.rows_mut(k * m, m).copy_from(&self.linear[k]);
        }
        QuadraticObjective { p, c, constant: 0.0 }
    }

    pub fn eval(&self, u: &DVector<f64>) -> f64 {
        self.objective().eval(u)
    }

    fn check(&self, spec: &SystemSpec) -> Result<()> {
        if self.horizon() != spec.horizon() || self.m() != spec.m() {
            return Err(Error::Dimension(format!(
                "cost covers {} steps of {} inputs, system has {} of {}",
                self.horizon(),
                self.m(),
                spec.horizon(),
                spec.m()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitPolicy {
    UniformRisk,
    UserSupplied { lambdas: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepPolicy {
    Tight,
    UniformRelax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcsConfig {
    pub init: InitPolicy,
    pub step: StepPolicy,
    pub max_outer_iters: usize,
    pub rel_tol: f64,
    #[serde(skip)]
    pub solver: SolverOptions,
}

impl Default for AcsConfig {
    fn default() -> Self {
        Self {
            init: InitPolicy::UniformRisk,
            step: StepPolicy::UniformRelax,
            max_outer_iters: 50,
            rel_tol: 1e-6,
            solver: SolverOptions::default(),
        }
    }
}

impl AcsConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_outer_iters > 0
            && self.rel_tol > 0.0
            && self.solver.tol > 0.0
            && self.solver.max_iter > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(
                "ACS iteration limits and tolerances must be positive".into(),
            ))
        }
    }
}

/// Initial allocation. The uniform policy gives every row `ω = α / #rows`,
/// shrunk by 1e-12 relative so rounding cannot push the sum past `α`.
pub fn init_lambdas(
    rows: &[ReformulatedConstraint],
    alpha: f64,
    policy: &InitPolicy,
) -> Result<RiskAllocation> {
    let ids = rows.iter().map(|r| r.row.id.clone()).collect::<Vec<_>>();
    let alloc = match policy {
        InitPolicy::UniformRisk => {
            if rows.is_empty() {
                return RiskAllocation::new(ids, vec![]);
            }
            let lambda = risk_to_lambda(alpha * RELAX_SHRINK / rows.len() as f64)?;
            RiskAllocation::uniform(rows, lambda)
        }
        InitPolicy::UserSupplied { lambdas } => RiskAllocation::new(ids, lambdas.clone())?,
    };
    if !alloc.is_valid(alpha) {
        return Err(Error::AllocationInfeasible {
            risk_sum: alloc.risk_sum(),
            alpha,
        });
    }
    Ok(alloc)
}

fn cone_row(row: &ReformulatedConstraint, lambda: f64) -> SocConstraint {
    let mo = &row.moments;
    let deterministic = row.is_deterministic();
    SocConstraint {
        a: mo.mean_coeff.clone(),
        b: mo.mean_const,
        lambda: if deterministic { 0.0 } else { lambda.min(LAMBDA_CAP) },
        l: mo.norm_l.clone(),
        v: mo.norm_v.clone(),
        s: mo.norm_s,
        h: row.row.h,
    }
}

/// Stacked input polytope `(I_N ⊗ A_poly) U ≤ 1_N ⊗ b_poly`.
pub fn stacked_polytope(spec: &SystemSpec) -> (DMatrix<f64>, DVector<f64>) {
    let poly = spec.input_polytope();
    let n = spec.horizon();
    let a = DMatrix::<f64>::identity(n, n).kronecker(&poly.a);
    let mut b = DVector::zeros(n * poly.b.len());
    for k in 0..n {
        b.rows_mut(k * poly.b.len(), poly.b.len()).copy_from(&poly.b);
    }
    (a, b)
}

fn program_for(
    spec: &SystemSpec,
    rows: &[ReformulatedConstraint],
    objective: QuadraticObjective,
    lambdas: &[f64],
) -> Result<ConicProgram> {
    let (a_u, b_u) = stacked_polytope(spec);
    let soc = rows
        .iter()
        .zip(lambdas)
        .map(|(r, &l)| cone_row(r, l))
        .collect();
    ConicProgram::new(objective, a_u, b_u, soc)
}

/// The fixed-`λ` cone program in `U`.
pub fn u_step_program(
    spec: &SystemSpec,
    rows: &[ReformulatedConstraint],
    alloc: &RiskAllocation,
    cost: &QuadraticCost,
) -> Result<ConicProgram> {
    alloc.aligned_with(rows)?;
    cost.check(spec)?;
    program_for(spec, rows, cost.objective(), &alloc.lambdas)
}

pub fn u_step(
    spec: &SystemSpec,
    rows: &[ReformulatedConstraint],
    alloc: &RiskAllocation,
    cost: &QuadraticCost,
    opts: &SolverOptions,
    start: Option<&DVector<f64>>,
) -> Result<SolverOutcome> {
    let program = u_step_program(spec, rows, alloc, cost)?;
    Ok(BarrierSolver.solve_from(&program, opts, start))
}

/// Reallocates the multipliers for a fixed `U`.
///
/// The tight policy sets `λ = (h − E)/Std`, the largest value `U` satisfies,
/// capped at [`LAMBDA_CAP`]; rows with zero spread get `λ = ∞`. The
/// uniform-relax policy then scales every risk by `α(1 − 1e-12)/Σω`, which can
/// only lower each `λ`.
pub fn lambda_step(
    rows: &[ReformulatedConstraint],
    u: &DVector<f64>,
    alpha: f64,
    policy: StepPolicy,
) -> Result<RiskAllocation> {
    let mut tight = Vec::with_capacity(rows.len());
    for r in rows {
        let mean = r.mean(u);
        let std = if r.is_deterministic() { 0.0 } else { r.std(u) };
        let h = r.row.h;
        let lambda = if std == 0.0 {
            if mean > h + FEASIBILITY_TOL * h.abs().max(1.0) {
                return Err(Error::AllocationInfeasible {
                    risk_sum: f64::INFINITY,
                    alpha,
                });
            }
            f64::INFINITY
        } else {
            ((h - mean) / std).min(LAMBDA_CAP)
        };
        tight.push(lambda);
    }
    let ids = rows.iter().map(|r| r.row.id.clone()).collect();
    let tight = RiskAllocation::new(ids, tight)?;
    if !tight.is_valid(alpha) {
        return Err(Error::AllocationInfeasible {
            risk_sum: tight.risk_sum(),
            alpha,
        });
    }
    let total = tight.risk_sum();
    if policy == StepPolicy::Tight || total == 0.0 || total >= alpha * RELAX_SHRINK {
        return Ok(tight);
    }
    let factor = alpha * RELAX_SHRINK / total;
    let lambdas = tight
        .lambdas
        .iter()
        .map(|&l| {
            if l.is_infinite() {
                return Ok(l);
            }
            let relaxed = risk_to_lambda(vp_tail_bound(l) * factor)?;
            Ok(relaxed.min(l))
        })
        .collect::<Result<Vec<_>>>()?;
    let relaxed = RiskAllocation::new(tight.ids, lambdas)?;
    debug_assert!(relaxed.is_valid(alpha));
    Ok(relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcsStatus {
    Converged,
    IterationLimit,
    Infeasible,
    SolverFailure,
}

/// How the starting allocation was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitUsed {
    UniformRisk,
    UserSupplied,
    /// The configured start was infeasible; the start came from the point
    /// maximising a common margin multiplier `lambda`.
    MaxMargin { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcsIteration {
    pub iteration: usize,
    pub objective: f64,
    pub risk_sum: f64,
    #[serde(with = "crate::reformulate::extended_real::vec")]
    pub lambdas: Vec<f64>,
    pub solver_status: SolverStatus,
    pub solver_iterations: usize,
    #[serde(with = "crate::conic::duration_secs")]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcsOutcome {
    pub status: AcsStatus,
    pub u: Option<DVector<f64>>,
    pub objective: Option<f64>,
    pub allocation: Option<RiskAllocation>,
    pub feasibility: Option<FeasibilityReport>,
    pub init: Option<InitUsed>,
    pub trace: Vec<AcsIteration>,
    pub failed_iteration: Option<usize>,
    pub infeasibility: Option<InfeasibilityDiagnostic>,
    pub message: Option<String>,
    #[serde(with = "crate::conic::duration_secs")]
    pub wall_time: Duration,
}

impl AcsOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self.status, AcsStatus::Converged | AcsStatus::IterationLimit)
            && self.feasibility.as_ref().is_some_and(|f| f.feasible)
    }

    fn failed(status: AcsStatus, iteration: usize, message: String) -> Self {
        Self {
            status,
            u: None,
            objective: None,
            allocation: None,
            feasibility: None,
            init: None,
            trace: Vec::new(),
            failed_iteration: Some(iteration),
            infeasibility: None,
            message: Some(message),
            wall_time: Duration::ZERO,
        }
    }
}

struct Start {
    alloc: RiskAllocation,
    used: InitUsed,
    u: DVector<f64>,
}

/// Largest common `θ` with `E_i(U) + θ·Std_i(U) ≤ h_i` for every row, found by
/// bisection over feasibility problems. Stops at the first `θ` whose analytic
/// centre already certifies within the risk budget.
fn max_margin_start(
    spec: &SystemSpec,
    rows: &[ReformulatedConstraint],
    alpha: f64,
    upper: f64,
    config: &AcsConfig,
) -> Result<Option<Start>> {
    let dim = spec.input_dim();
    let zero = QuadraticObjective {
        p: DMatrix::zeros(dim, dim),
        c: DVector::zeros(dim),
        constant: 0.0,
    };
    let attempt = |theta: f64| -> Result<Option<DVector<f64>>> {
        let program = program_for(spec, rows, zero.clone(), &vec![theta; rows.len()])?;
        let out = BarrierSolver.solve(&program, &config.solver);
        Ok(out.is_optimal().then_some(out.u))
    };
    let certify = |u: &DVector<f64>| lambda_step(rows, u, alpha, config.step).ok();

    let mut lo = LAMBDA_MIN + 2.0 * LAMBDA_MARGIN;
    let Some(u) = attempt(lo)? else {
        return Ok(None);
    };
    if let Some(alloc) = certify(&u) {
        return Ok(Some(Start {
            alloc,
            used: InitUsed::MaxMargin { lambda: lo },
            u,
        }));
    }
    let mut hi = upper.max(lo);
    for _ in 0..100 {
        if hi - lo <= 1e-9 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match attempt(mid)? {
            Some(u) => {
                if let Some(alloc) = certify(&u) {
                    return Ok(Some(Start {
                        alloc,
                        used: InitUsed::MaxMargin { lambda: mid },
                        u,
                    }));
                }
                lo = mid;
            }
            None => hi = mid,
        }
    }
    Ok(None)
}

/// Runs the alternating search until the objective settles.
pub fn run(
    spec: &SystemSpec,
    jcc: &JointChanceConstraint,
    cost: &QuadraticCost,
    attestation: &Attestation,
    config: &AcsConfig,
) -> Result<AcsOutcome> {
    let clock = Instant::now();
    config.validate()?;
    cost.check(spec)?;
    let rows = build_reformulation(spec, jcc, attestation)?;
    let alpha = jcc.alpha();
    let mut outcome = search(spec, &rows, alpha, cost, config)?;
    outcome.wall_time = clock.elapsed();
    Ok(outcome)
}

fn search(
    spec: &SystemSpec,
    rows: &[ReformulatedConstraint],
    alpha: f64,
    cost: &QuadraticCost,
    config: &AcsConfig,
) -> Result<AcsOutcome> {
    let mut used = match config.init {
        InitPolicy::UniformRisk => InitUsed::UniformRisk,
        InitPolicy::UserSupplied { .. } => InitUsed::UserSupplied,
    };
    let mut alloc = init_lambdas(rows, alpha, &config.init)?;
    let mut clock = Instant::now();
    let mut out = u_step(spec, rows, &alloc, cost, &config.solver, None)?;
    if out.status == SolverStatus::Infeasible {
        let upper = alloc
            .lambdas
            .iter()
            .copied()
            .filter(|l| l.is_finite())
            .fold(LAMBDA_MIN, f64::max);
        let Some(start) = max_margin_start(spec, rows, alpha, upper, config)? else {
            let mut failed = AcsOutcome::failed(
                AcsStatus::Infeasible,
                0,
                format!(
                    "no input satisfies the tightened constraints for any risk \
                     allocation tried within alpha = {alpha}"
                ),
            );
            failed.infeasibility = out.infeasibility;
            return Ok(failed);
        };
        used = start.used;
        alloc = start.alloc;
        out = u_step(spec, rows, &alloc, cost, &config.solver, Some(&start.u))?;
    }

    let mut trace = Vec::new();
    let mut best: Option<(f64, DVector<f64>, RiskAllocation)> = None;
    let mut previous: Option<f64> = None;
    let mut iteration = 0;
    let status = loop {
        if !out.is_optimal() {
            let mut failed = solver_failure(out, iteration, &alloc);
            failed.trace = trace;
            return Ok(failed);
        }
        trace.push(trace_entry(iteration, &alloc, &out, clock));
        let j = out.objective;
        if best.as_ref().is_none_or(|(bj, _, _)| j < *bj) {
            best = Some((j, out.u.clone(), alloc.clone()));
        }
        if previous.is_some_and(|p| (j - p).abs() <= config.rel_tol * j.abs().max(1.0)) {
            break AcsStatus::Converged;
        }
        let next = match lambda_step(rows, &out.u, alpha, config.step) {
            Ok(next) => next,
            Err(e) => {
                let mut failed =
                    AcsOutcome::failed(AcsStatus::SolverFailure, iteration, e.to_string());
                failed.trace = trace;
                return Ok(failed);
            }
        };
        if same_effect(rows, &next, &alloc) {
            break AcsStatus::Converged;
        }
        iteration += 1;
        if iteration >= config.max_outer_iters {
            break AcsStatus::IterationLimit;
        }
        previous = Some(j);
        clock = Instant::now();
        out = u_step(spec, rows, &next, cost, &config.solver, Some(&out.u))?;
        alloc = next;
    };
    let (_, u, alloc) = best.expect("at least one feasible iterate");
    finish(rows, alpha, cost, status, used, u, alloc, trace)
}

/// Allocations that differ only on rows without spread give the same program.
fn same_effect(rows: &[ReformulatedConstraint], a: &RiskAllocation, b: &RiskAllocation) -> bool {
    rows.iter()
        .zip(a.lambdas.iter().zip(&b.lambdas))
        .all(|(r, (x, y))| r.is_deterministic() || x == y)
}

fn trace_entry(
    iteration: usize,
    alloc: &RiskAllocation,
    out: &SolverOutcome,
    clock: Instant,
) -> AcsIteration {
    AcsIteration {
        iteration,
        objective: out.objective,
        risk_sum: alloc.risk_sum(),
        lambdas: alloc.lambdas.clone(),
        solver_status: out.status,
        solver_iterations: out.iterations,
        wall_time: clock.elapsed(),
    }
}

fn solver_failure(out: SolverOutcome, iteration: usize, alloc: &RiskAllocation) -> AcsOutcome {
    let status = if out.status == SolverStatus::Infeasible {
        AcsStatus::Infeasible
    } else {
        AcsStatus::SolverFailure
    };
    let mut failed = AcsOutcome::failed(
        status,
        iteration,
        out.message
            .clone()
            .unwrap_or_else(|| format!("inner solve ended with {:?}", out.status)),
    );
    failed.allocation = Some(alloc.clone());
    failed.infeasibility = out.infeasibility;
    failed
}

#[allow(clippy::too_many_arguments)]
fn finish(
    rows: &[ReformulatedConstraint],
    alpha: f64,
    cost: &QuadraticCost,
    status: AcsStatus,
    used: InitUsed,
    u: DVector<f64>,
    alloc: RiskAllocation,
    trace: Vec<AcsIteration>,
) -> Result<AcsOutcome> {
    let feasibility = check_feasibility(rows, &u, &alloc, alpha, FEASIBILITY_TOL)?;
    Ok(AcsOutcome {
        status,
        objective: Some(cost.eval(&u)),
        u: Some(u),
        allocation: Some(alloc),
        feasibility: Some(feasibility),
        init: Some(used),
        trace,
        failed_iteration: None,
        infeasibility: None,
        message: None,
        wall_time: Duration::ZERO,
    })
}
