//! JSON problem files (`"schema": 1`).
//!
//! Matrices are row-major arrays of rows. Entries of `A` are numbers or
//! distribution objects such as
//! `{"family": "weibull", "scale": 5, "shape": 30, "power": 3}`.
//! Constraint groups hold one row `G x(k) ≤ h` applied at the listed times
//! (`"all"`, one time or a list); each expands to the row id `id@k`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::acs::{AcsConfig, QuadraticCost};
use crate::conic::{matrix_from_rows, rows_of, SolverOptions};
use crate::moments::{InputPolytope, RandomEntry, RandomMatrixModel, SystemSpec};
use crate::reformulate::{Attestation, ChanceRow, JointChanceConstraint};
use crate::scenario::{ScenarioConfig, DEFAULT_BETA};
use crate::stochastics::DistributionSpec;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const ATTESTED: &str = "attested";
pub const DEFAULT_MC_SAMPLES: usize = 100_000;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EntrySpec {
    Constant(f64),
    Random(DistributionSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub x0: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<EntrySpec>>>,
    #[serde(rename = "A_per_step", default, skip_serializing_if = "Option::is_none")]
    pub a_per_step: Option<Vec<Vec<Vec<EntrySpec>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolytopeConfig {
    #[serde(rename = "A")]
    pub a: Rows,
    pub b: Vec<f64>,
}

/// Times at which a constraint group applies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimeSpec {
    All,
    One(usize),
    Many(Vec<usize>),
}

impl TimeSpec {
    pub fn expand(&self, horizon: usize) -> Vec<usize> {
        match self {
            TimeSpec::All => (1..=horizon).collect(),
            TimeSpec::One(k) => vec![*k],
            TimeSpec::Many(ks) => ks.clone(),
        }
    }
}

impl Serialize for TimeSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TimeSpec::All => s.serialize_str("all"),
            TimeSpec::One(k) => s.serialize_u64(*k as u64),
            TimeSpec::Many(ks) => ks.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for TimeSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            One(usize),
            Many(Vec<usize>),
        }
        match Raw::deserialize(d)? {
            Raw::Word(w) if w == "all" => Ok(TimeSpec::All),
            Raw::Word(w) => Err(D::Error::custom(format!(
                "expected \"all\", a time index or a list of them, got \"{w}\""
            ))),
            Raw::One(k) => Ok(TimeSpec::One(k)),
            Raw::Many(ks) => Ok(TimeSpec::Many(ks)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintGroup {
    pub id: String,
    #[serde(rename = "G")]
    pub g: Vec<f64>,
    pub h: f64,
    pub k: TimeSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepCost {
    pub quadratic: Rows,
    pub linear: Vec<f64>,
}

/// One cost for every step, or one per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CostConfig {
    PerStep { per_step: Vec<StepCost> },
    Uniform(StepCost),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssumptionsConfig {
    #[serde(default)]
    pub independence: String,
    #[serde(default)]
    pub unimodal: String,
}

impl AssumptionsConfig {
    pub fn attested() -> Self {
        Self {
            independence: ATTESTED.into(),
            unimodal: ATTESTED.into(),
        }
    }

    pub fn attestation(&self) -> Attestation {
        Attestation {
            independence: self.independence == ATTESTED,
            unimodal: self.unimodal == ATTESTED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOptions {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<usize>,
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            sample_count: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McOptions {
    #[serde(default = "default_mc_samples")]
    pub samples: usize,
}

fn default_mc_samples() -> usize {
    DEFAULT_MC_SAMPLES
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            samples: DEFAULT_MC_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub system: SystemConfig,
    pub input_polytope: PolytopeConfig,
    pub constraints: Vec<ConstraintGroup>,
    pub alpha: f64,
    pub cost: CostConfig,
    pub assumptions: AssumptionsConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acs: Option<AcsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverOptions>,
}

impl ProblemConfig {
    /// Parses JSON, reporting the field path of the first error.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config {
                path: if path.is_empty() { ".".into() } else { path },
                message: e.into_inner().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn build(&self) -> Result<Problem> {
        Problem::from_config(self)
    }
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn rows_to_matrix(rows: &Rows, nrows: usize, ncols: usize, path: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(config_err(path, format!("expected {nrows} rows, got {}", rows.len())));
    }
    matrix_from_rows(rows, ncols, path).map_err(|e| config_err(path, e.to_string()))
}

fn entry_model(rows: &[Vec<EntrySpec>], n: usize, path: &str) -> Result<RandomMatrixModel> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(config_err(path, format!("expected a {n}x{n} matrix")));
    }
    let mut entries = Vec::with_capacity(n * n);
    for (i, row) in rows.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            let at = format!("{path}[{i}][{j}]");
            let entry = match e {
                EntrySpec::Constant(v) if v.is_finite() => RandomEntry::constant(*v),
                EntrySpec::Constant(_) => return Err(config_err(at, "entry must be finite")),
                EntrySpec::Random(d) => {
                    d.validate().map_err(|err| config_err(&at, err.to_string()))?;
                    RandomEntry::from_distribution(d.clone())
                        .map_err(|err| config_err(&at, err.to_string()))?
                }
            };
            entries.push(entry);
        }
    }
    RandomMatrixModel::new(n, entries)
}

fn entry_rows(model: &RandomMatrixModel) -> Vec<Vec<EntrySpec>> {
    let n = model.dim();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let e = model.entry(i, j);
                    if e.distribution().is_constant() {
                        EntrySpec::Constant(e.mean())
                    } else {
                        EntrySpec::Random(e.distribution().clone())
                    }
                })
                .collect()
        })
        .collect()
}

/// A validated problem: the system model, the expanded chance constraint and
/// the options.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub name: Option<String>,
    pub spec: SystemSpec,
    pub groups: Vec<ConstraintGroup>,
    pub jcc: JointChanceConstraint,
    pub cost: QuadraticCost,
    pub assumptions: AssumptionsConfig,
    pub seed: u64,
    pub acs: AcsConfig,
    pub scenario: ScenarioOptions,
    pub mc: McOptions,
    pub solver: SolverOptions,
    layout: Layout,
}

/// Which optional forms the source file used, so it can be written back.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    a_per_step: bool,
    cost_per_step: bool,
    acs: bool,
    scenario: bool,
    mc: bool,
    solver: bool,
}

impl Problem {
    pub fn from_config(cfg: &ProblemConfig) -> Result<Self> {
        if cfg.schema != SCHEMA_VERSION {
            return Err(config_err(
                "schema",
                format!("unsupported schema {}, expected {SCHEMA_VERSION}", cfg.schema),
            ));
        }
        let sys = &cfg.system;
        let (n, m, horizon) = (sys.n, sys.m, sys.horizon);
        if n == 0 || m == 0 || horizon == 0 {
            return Err(config_err("system", "n, m and horizon must be positive"));
        }
        if sys.x0.len() != n {
            return Err(config_err("system.x0", format!("expected {n} entries")));
        }
        let b = rows_to_matrix(&sys.b, n, m, "system.B")?;
        let models = match (&sys.a, &sys.a_per_step) {
            (Some(a), None) => vec![entry_model(a, n, "system.A")?; horizon],
            (None, Some(steps)) => {
                if steps.len() != horizon {
                    return Err(config_err(
                        "system.A_per_step",
                        format!("expected {horizon} matrices, got {}", steps.len()),
                    ));
                }
                steps
                    .iter()
                    .enumerate()
                    .map(|(k, a)| entry_model(a, n, &format!("system.A_per_step[{k}]")))
                    .collect::<Result<Vec<_>>>()?
            }
            _ => {
                return Err(config_err(
                    "system",
                    "exactly one of `A` and `A_per_step` is required",
                ))
            }
        };
        let poly = &cfg.input_polytope;
        let poly_a = rows_to_matrix(&poly.a, poly.b.len(), m, "input_polytope.A")?;
        let spec = SystemSpec::new(
            models,
            b,
            DVector::from_vec(sys.x0.clone()),
            InputPolytope {
                a: poly_a,
                b: DVector::from_vec(poly.b.clone()),
            },
        )?;

        let mut rows = Vec::new();
        for (gi, group) in cfg.constraints.iter().enumerate() {
            let path = format!("constraints[{gi}]");
            if group.g.len() != n {
                return Err(config_err(format!("{path}.G"), format!("expected {n} entries")));
            }
            let times = group.k.expand(horizon);
            if times.is_empty() {
                return Err(config_err(format!("{path}.k"), "no time indices"));
            }
            for k in times {
                if k == 0 || k > horizon {
                    return Err(config_err(
                        format!("{path}.k"),
                        format!("time {k} outside 1..={horizon}"),
                    ));
                }
                rows.push(ChanceRow {
                    id: format!("{}@{k}", group.id),
                    g: DVector::from_vec(group.g.clone()),
                    h: group.h,
                    k,
                });
            }
        }
        let jcc = JointChanceConstraint::new(rows, cfg.alpha).map_err(|e| match e {
            Error::Domain(msg) if msg.starts_with("alpha") => config_err("alpha", msg),
            other => config_err("constraints", other.to_string()),
        })?;

        let step_cost = |c: &StepCost, path: &str| -> Result<(DMatrix<f64>, DVector<f64>)> {
            let r = rows_to_matrix(&c.quadratic, m, m, &format!("{path}.quadratic"))?;
            if c.linear.len() != m {
                return Err(config_err(format!("{path}.linear"), format!("expected {m} entries")));
            }
            Ok((r, DVector::from_vec(c.linear.clone())))
        };
        let (cost, cost_per_step) = match &cfg.cost {
            CostConfig::Uniform(c) => {
                let (r, q) = step_cost(c, "cost")?;
                (QuadraticCost::time_invariant(r, q, horizon)?, false)
            }
            CostConfig::PerStep { per_step } => {
                if per_step.len() != horizon {
                    return Err(config_err(
                        "cost.per_step",
                        format!("expected {horizon} entries, got {}", per_step.len()),
                    ));
                }
                let (rs, qs) = per_step
                    .iter()
                    .enumerate()
                    .map(|(k, c)| step_cost(c, &format!("cost.per_step[{k}]")))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .unzip();
                (QuadraticCost::new(rs, qs)?, true)
            }
        };

        let mut acs = cfg.acs.clone().unwrap_or_default();
        let solver = cfg.solver.unwrap_or_default();
        acs.solver = solver;
        acs.validate().map_err(|e| config_err("acs", e.to_string()))?;
        let scenario = cfg.scenario.clone().unwrap_or_default();
        if !(scenario.beta > 0.0 && scenario.beta < 1.0) {
            return Err(config_err("scenario.beta", "beta must lie in (0, 1)"));
        }
        let mc = cfg.mc.clone().unwrap_or_default();
        if mc.samples == 0 {
            return Err(config_err("mc.samples", "must be positive"));
        }

        Ok(Self {
            name: cfg.name.clone(),
            spec,
            groups: cfg.constraints.clone(),
            jcc,
            cost,
            assumptions: cfg.assumptions.clone(),
            seed: cfg.seed,
            acs,
            scenario,
            mc,
            solver,
            layout: Layout {
                a_per_step: sys.a_per_step.is_some(),
                cost_per_step,
                acs: cfg.acs.is_some(),
                scenario: cfg.scenario.is_some(),
                mc: cfg.mc.is_some(),
                solver: cfg.solver.is_some(),
            },
        })
    }

    pub fn alpha(&self) -> f64 {
        self.jcc.alpha()
    }

    pub fn attestation(&self) -> Attestation {
        self.assumptions.attestation()
    }

    /// The same problem at a different risk level.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        let mut out = self.clone();
        out.jcc = self.jcc.with_alpha(alpha)?;
        Ok(out)
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        ScenarioConfig {
            alpha: self.alpha(),
            beta: self.scenario.beta,
            sample_count: self.scenario.sample_count,
            seed: self.seed,
        }
    }

    /// Writes the model back out as a config.
    pub fn to_config(&self) -> ProblemConfig {
        let spec = &self.spec;
        let (a, a_per_step) = if self.layout.a_per_step {
            (None, Some(spec.a_models().iter().map(entry_rows).collect()))
        } else {
            (Some(entry_rows(&spec.a_models()[0])), None)
        };
        let step = |k: usize| StepCost {
            quadratic: rows_of(&self.cost.quadratic()[k]),
            linear: self.cost.linear()[k].iter().copied().collect(),
        };
        let cost = if self.layout.cost_per_step {
            CostConfig::PerStep {
                per_step: (0..self.cost.horizon()).map(step).collect(),
            }
        } else {
            CostConfig::Uniform(step(0))
        };
        let mut acs = self.acs.clone();
        acs.solver = SolverOptions::default();
        ProblemConfig {
            schema: SCHEMA_VERSION,
            name: self.name.clone(),
            system: SystemConfig {
                n: spec.n(),
                m: spec.m(),
                horizon: spec.horizon(),
                x0: spec.x0().iter().copied().collect(),
                b: rows_of(spec.b()),
                a,
                a_per_step,
            },
            input_polytope: PolytopeConfig {
                a: rows_of(&spec.input_polytope().a),
                b: spec.input_polytope().b.iter().copied().collect(),
            },
            constraints: self.groups.clone(),
            alpha: self.alpha(),
            cost,
            assumptions: self.assumptions.clone(),
            seed: self.seed,
            acs: self.layout.acs.then_some(acs),
            scenario: self.layout.scenario.then(|| self.scenario.clone()),
            mc: self.layout.mc.then(|| self.mc.clone()),
            solver: self.layout.solver.then_some(self.solver),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"{
        "schema": 1,
        "system": {
            "n": 1, "m": 1, "horizon": 2,
            "x0": [1.0],
            "B": [[1.0]],
            "A": [[{"family": "finite-support", "values": [0.0, 2.0], "probs": [0.5, 0.5]}]]
        },
        "input_polytope": {"A": [[1.0], [-1.0]], "b": [10.0, 10.0]},
        "constraints": [{"id": "cap", "G": [1.0], "h": 20.0, "k": "all"}],
        "alpha": 0.1,
        "cost": {"quadratic": [[1.0]], "linear": [0.0]},
        "assumptions": {"independence": "attested", "unimodal": "attested"},
        "seed": 7
    }"#;

    #[test]
    fn parses_and_expands_groups() {
        let problem = ProblemConfig::from_json(TOY).unwrap().build().unwrap();
        let ids: Vec<_> = problem.jcc.rows().iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["cap@1", "cap@2"]);
        assert_eq!(problem.spec.horizon(), 2);
        assert!(problem.attestation().require().is_ok());
    }

    #[test]
    fn round_trip_is_exact() {
        let cfg = ProblemConfig::from_json(TOY).unwrap();
        let back = cfg.build().unwrap().to_config();
        assert_eq!(back, cfg);
        let again = ProblemConfig::from_json(&back.to_json()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn missing_alpha_names_the_field() {
        let text = TOY.replace("\"alpha\": 0.1,", "");
        match ProblemConfig::from_json(&text) {
            Err(Error::Config { message, .. }) => assert!(message.contains("alpha"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_nested_field_reports_path() {
        let text = TOY.replace("\"x0\": [1.0]", "\"x0\": [\"one\"]");
        match ProblemConfig::from_json(&text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "system.x0[0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn semantic_errors_carry_paths() {
        let text = TOY.replace("\"k\": \"all\"", "\"k\": 3");
        let err = ProblemConfig::from_json(&text).unwrap().build().unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "constraints[0].k"));
        let text = TOY.replace("\"alpha\": 0.1", "\"alpha\": 0.3");
        let err = ProblemConfig::from_json(&text).unwrap().build().unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "alpha"));
    }

    #[test]
    fn unattested_problem_parses_but_is_refused() {
        let text = TOY.replace(
            "\"unimodal\": \"attested\"",
            "\"unimodal\": \"unknown\"",
        );
        let problem = ProblemConfig::from_json(&text).unwrap().build().unwrap();
        assert!(matches!(
            problem.attestation().require(),
            Err(Error::NotAttested(_))
        ));
    }
}
