//! Solve reports and sweep tables: what the command line writes to disk.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acs::{self, AcsOutcome};
use crate::config::{Problem, ProblemConfig};
use crate::reformulate::{build_reformulation, check_feasibility, FeasibilityReport};
use crate::scenario::{self, ScenarioOutcome};
use crate::stochastics::{mc_certify, McCertificate, SeedStream};
use crate::{Error, Result};

/// Stream tag that keeps certification draws apart from scenario draws.
const MC_STREAM: u64 = 0x6d63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Proposed,
    Scenario,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Scenario => "scenario",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub name: Option<String>,
    pub method: Method,
    pub alpha: f64,
    pub safety: f64,
    pub status: String,
    pub feasible: bool,
    pub horizon: usize,
    /// Stacked input `U`.
    pub u: Option<Vec<f64>>,
    /// `U` split into `u(0), …, u(N−1)`.
    pub inputs: Option<Vec<Vec<f64>>>,
    /// Cost summed over the horizon.
    pub objective: Option<f64>,
    pub objective_per_step: Option<f64>,
    pub feasibility: Option<FeasibilityReport>,
    pub certificate: Option<McCertificate>,
    pub wall_time_ms: f64,
    pub notes: Vec<String>,
    pub proposed: Option<AcsOutcome>,
    pub scenario: Option<ScenarioOutcome>,
    pub config: ProblemConfig,
}

impl SolveReport {
    fn base(problem: &Problem, method: Method) -> Self {
        let alpha = problem.alpha();
        Self {
            name: problem.name.clone(),
            method,
            alpha,
            safety: 1.0 - alpha,
            status: String::new(),
            feasible: false,
            horizon: problem.spec.horizon(),
            u: None,
            inputs: None,
            objective: None,
            objective_per_step: None,
            feasibility: None,
            certificate: None,
            wall_time_ms: 0.0,
            notes: Vec::new(),
            proposed: None,
            scenario: None,
            config: problem.to_config(),
        }
    }

    fn set_solution(&mut self, problem: &Problem, u: &DVector<f64>, objective: f64) {
        let m = problem.spec.m();
        self.u = Some(u.iter().copied().collect());
        self.inputs = Some(u.as_slice().chunks(m).map(<[f64]>::to_vec).collect());
        self.objective = Some(objective);
        self.objective_per_step = Some(objective / self.horizon as f64);
    }

    pub fn from_proposed(
        problem: &Problem,
        outcome: AcsOutcome,
        certificate: Option<McCertificate>,
    ) -> Self {
        let mut report = Self::base(problem, Method::Proposed);
        report.status = format!("{:?}", outcome.status);
        report.feasible = outcome.is_feasible();
        if let (Some(u), Some(j)) = (&outcome.u, outcome.objective) {
            report.set_solution(problem, u, j);
        }
        if let Some(init) = &outcome.init {
            report.notes.push(format!("initial allocation: {init:?}"));
        }
        if let Some(msg) = &outcome.message {
            report.notes.push(msg.clone());
        }
        report.feasibility = outcome.feasibility.clone();
        report.certificate = certificate;
        report.wall_time_ms = outcome.wall_time.as_secs_f64() * 1e3;
        report.proposed = Some(outcome);
        report
    }

    pub fn from_scenario(problem: &Problem, outcome: ScenarioOutcome) -> Self {
        let mut report = Self::base(problem, Method::Scenario);
        report.status = format!("{:?}", outcome.status);
        report.feasible = outcome.is_feasible();
        if let (Some(u), Some(j)) = (&outcome.u, outcome.objective) {
            report.set_solution(problem, u, j);
        }
        report.notes.push(outcome.note.clone());
        if let Some(msg) = &outcome.message {
            report.notes.push(msg.clone());
        }
        report.wall_time_ms = outcome.wall_time.as_secs_f64() * 1e3;
        report.scenario = Some(outcome);
        report
    }

    /// 0 for a feasible solve, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.feasible {
            0
        } else {
            2
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }
}

/// Runs one method on `problem`. Feasible proposed solutions are certified
/// by Monte Carlo when `certify` is set.
pub fn solve(problem: &Problem, method: Method, certify: bool) -> Result<SolveReport> {
    match method {
        Method::Proposed => {
            let outcome = acs::run(
                &problem.spec,
                &problem.jcc,
                &problem.cost,
                &problem.attestation(),
                &problem.acs,
            )?;
            let certificate = match (&outcome.u, certify && outcome.is_feasible()) {
                (Some(u), true) => Some(mc_certify(
                    &problem.spec,
                    problem.jcc.rows(),
                    u,
                    problem.alpha(),
                    problem.mc.samples,
                    SeedStream::new(problem.seed).fork(MC_STREAM),
                )?),
                _ => None,
            };
            Ok(SolveReport::from_proposed(problem, outcome, certificate))
        }
        Method::Scenario => {
            let outcome = scenario::solve_scenario(
                &problem.spec,
                &problem.jcc,
                &problem.cost,
                &problem.scenario_config(),
                &problem.solver,
            )?;
            Ok(SolveReport::from_scenario(problem, outcome))
        }
    }
}

/// Re-evaluates the tightened rows of `problem` at the report's input and
/// allocation.
pub fn recheck(problem: &Problem, report: &SolveReport) -> Result<Option<FeasibilityReport>> {
    let (Some(u), Some(alloc)) = (
        &report.u,
        report.proposed.as_ref().and_then(|p| p.allocation.as_ref()),
    ) else {
        return Ok(None);
    };
    if u.len() != problem.spec.input_dim() {
        return Err(Error::Dimension(format!(
            "report input has length {}, expected {}",
            u.len(),
            problem.spec.input_dim()
        )));
    }
    let rows = build_reformulation(&problem.spec, &problem.jcc, &problem.attestation())?;
    let u = DVector::from_column_slice(u);
    check_feasibility(&rows, &u, alloc, problem.alpha(), acs::FEASIBILITY_TOL).map(Some)
}

/// Safety levels `lo, lo + step, …` up to `hi`, rounded to 12 decimals.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Domain(format!("bad grid value `{s}` in `{text}`")))
    };
    let round = |x: f64| (x * 1e12).round() / 1e12;
    let points = match parts.as_slice() {
        [one] => vec![num(one)?],
        [lo, hi, step] => {
            let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
            if !(step > 0.0) || hi < lo {
                return Err(Error::Domain(format!(
                    "grid `{text}` needs lo ≤ hi and a positive step"
                )));
            }
            let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            (0..count).map(|i| round(lo + i as f64 * step)).collect()
        }
        _ => {
            return Err(Error::Domain(format!(
                "grid `{text}` must be `value` or `lo:hi:step`"
            )))
        }
    };
    if let Some(bad) = points.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
        return Err(Error::Domain(format!("safety level {bad} outside (0, 1)")));
    }
    Ok(points)
}

/// One line of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub safety: f64,
    pub alpha: f64,
    pub method: Method,
    pub status: String,
    pub feasible: bool,
    pub objective: Option<f64>,
    pub objective_per_step: Option<f64>,
    pub wall_time_ms: f64,
    pub scenario_samples: Option<usize>,
    pub mc_upper_ci: Option<f64>,
}

pub const SWEEP_HEADER: [&str; 10] = [
    "safety",
    "alpha",
    "method",
    "status",
    "feasible",
    "objective",
    "objective_per_step",
    "wall_time_ms",
    "scenario_samples",
    "mc_upper_ci",
];

impl SweepRow {
    pub fn from_report(report: &SolveReport) -> Self {
        Self {
            safety: report.safety,
            alpha: report.alpha,
            method: report.method,
            status: report.status.clone(),
            feasible: report.feasible,
            objective: report.objective,
            objective_per_step: report.objective_per_step,
            wall_time_ms: report.wall_time_ms,
            scenario_samples: report.scenario.as_ref().map(|s| s.samples),
            mc_upper_ci: report.certificate.as_ref().map(|c| c.upper_ci_99),
        }
    }

    fn failed(safety: f64, method: Method, err: &Error) -> Self {
        Self {
            safety,
            alpha: 1.0 - safety,
            method,
            status: format!("Error: {err}"),
            feasible: false,
            objective: None,
            objective_per_step: None,
            wall_time_ms: 0.0,
            scenario_samples: None,
            mc_upper_ci: None,
        }
    }

    fn record(&self) -> [String; 10] {
        let num = |x: f64| format!("{x:.16e}");
        let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
        [
            num(self.safety),
            num(self.alpha),
            self.method.to_string(),
            self.status.clone(),
            self.feasible.to_string(),
            opt(self.objective),
            opt(self.objective_per_step),
            num(self.wall_time_ms),
            self.scenario_samples.map(|n| n.to_string()).unwrap_or_default(),
            opt(self.mc_upper_ci),
        ]
    }
}

/// Solves every `(point, method)` pair on a pool of `jobs` threads. Rows come
/// back in grid order with methods in the order given; a failing point is
/// recorded and the sweep continues.
pub fn sweep(problem: &Problem, grid: &[f64], methods: &[Method], jobs: usize) -> Result<Vec<SweepRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Domain(format!("cannot start worker pool: {e}")))?;
    let tasks: Vec<(f64, Method)> = grid
        .iter()
        .flat_map(|&s| methods.iter().map(move |&m| (s, m)))
        .collect();
    Ok(pool.install(|| {
        tasks
            .par_iter()
            .map(|&(safety, method)| {
                let alpha = ((1.0 - safety) * 1e12).round() / 1e12;
                problem
                    .with_alpha(alpha)
                    .and_then(|p| solve(&p, method, true))
                    .map(|r| SweepRow::from_report(&r))
                    .unwrap_or_else(|e| SweepRow::failed(safety, method, &e))
            })
            .collect()
    }))
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(SWEEP_HEADER).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.record()).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
