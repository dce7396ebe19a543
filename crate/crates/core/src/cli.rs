//! The `vpcc` command line.
//!
//! ```text
//! vpcc solve <config> --method proposed|scenario --out DIR [--alpha A]
//! vpcc sweep <config> --grid 0.84:0.99:0.01 --methods both --out DIR [--jobs N]
//! vpcc moments <config> --row I --time K [--u u1,u2,...]
//! vpcc validate <config> [--report FILE]
//! ```
//!
//! Exit codes: 0 success, 2 infeasible, 1 any error. `VPCC_SEED` overrides the
//! seed in the config.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde_json::json;

use crate::config::{Problem, ProblemConfig};
use crate::conic::rows_of;
use crate::moments::constraint_moments;
use crate::report::{self, Method, SolveReport};

pub const SEED_ENV: &str = "VPCC_SEED";

#[derive(Debug, Parser)]
#[command(name = "vpcc", version, about = "Chance-constrained open-loop control with random state matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one problem and write `report.json`.
    Solve {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Proposed)]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the risk level in the config.
        #[arg(long)]
        alpha: Option<f64>,
        /// Skip Monte-Carlo certification of proposed solutions.
        #[arg(long)]
        no_certify: bool,
    },
    /// Solve over a grid of safety levels `1 − α` and write `sweep.csv`.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value = "0.84:0.99:0.01")]
        grid: String,
        #[arg(long, value_enum, default_value_t = MethodsArg::Both)]
        methods: MethodsArg,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print the mean and variance maps of one constraint row.
    Moments {
        config: PathBuf,
        /// Constraint group, counted from 1.
        #[arg(long)]
        row: usize,
        /// Time step, 1 ..= N.
        #[arg(long)]
        time: usize,
        /// Stacked input to evaluate at; zero when omitted.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        u: Option<Vec<f64>>,
    },
    /// Check a config, and optionally a report written from it.
    Validate {
        config: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Proposed,
    Scenario,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Proposed => Method::Proposed,
            MethodArg::Scenario => Method::Scenario,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodsArg {
    Proposed,
    Scenario,
    Both,
}

impl MethodsArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodsArg::Proposed => vec![Method::Proposed],
            MethodsArg::Scenario => vec![Method::Scenario],
            MethodsArg::Both => vec![Method::Proposed, Method::Scenario],
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Errors are printed to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<i32> {
    match command {
        Command::Solve {
            config,
            method,
            out,
            alpha,
            no_certify,
        } => {
            let mut problem = load_problem(&config)?;
            if let Some(alpha) = alpha {
                problem = problem.with_alpha(alpha)?;
            }
            let report = report::solve(&problem, method.into(), !no_certify)?;
            fs::create_dir_all(&out)
                .with_context(|| format!("cannot create {}", out.display()))?;
            let path = out.join("report.json");
            fs::write(&path, report.to_json())
                .with_context(|| format!("cannot write {}", path.display()))?;
            println!(
                "{} 1-alpha={} status={} objective={} -> {}",
                report.method,
                report.safety,
                report.status,
                report
                    .objective
                    .map(|j| format!("{j:.6}"))
                    .unwrap_or_else(|| "-".into()),
                path.display()
            );
            Ok(report.exit_code())
        }
        Command::Sweep {
            config,
            grid,
            methods,
            out,
            jobs,
        } => {
            let problem = load_problem(&config)?;
            let grid = report::parse_grid(&grid)?;
            let jobs = jobs
                .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
                .unwrap_or(1);
            if jobs == 0 {
                bail!("--jobs must be positive");
            }
            let rows = report::sweep(&problem, &grid, &methods.methods(), jobs)?;
            fs::create_dir_all(&out)
                .with_context(|| format!("cannot create {}", out.display()))?;
            let path = out.join("sweep.csv");
            let file = fs::File::create(&path)
                .with_context(|| format!("cannot write {}", path.display()))?;
            report::write_sweep_csv(&rows, file)?;
            for row in &rows {
                println!(
                    "{:.4} {:<8} {:<14} {}",
                    row.safety,
                    row.method,
                    row.status,
                    row.objective
                        .map(|j| format!("{j:.6}"))
                        .unwrap_or_else(|| "-".into())
                );
            }
            println!("{} rows -> {}", rows.len(), path.display());
            Ok(0)
        }
        Command::Moments {
            config,
            row,
            time,
            u,
        } => {
            let problem = load_problem(&config)?;
            let groups = &problem.groups;
            if row == 0 || row > groups.len() {
                bail!(crate::Error::Index(format!(
                    "row {row} outside 1..={}",
                    groups.len()
                )));
            }
            let horizon = problem.spec.horizon();
            if time == 0 || time > horizon {
                bail!(crate::Error::Index(format!("time {time} outside 1..={horizon}")));
            }
            let group = &groups[row - 1];
            let dim = problem.spec.input_dim();
            let u = match u {
                Some(v) if v.len() != dim => bail!(crate::Error::Dimension(format!(
                    "--u has {} entries, expected {dim}",
                    v.len()
                ))),
                Some(v) => DVector::from_vec(v),
                None => DVector::zeros(dim),
            };
            let g = DVector::from_column_slice(&group.g);
            let mom = constraint_moments(&problem.spec, &g, time)?;
            let out = json!({
                "row": group.id,
                "time": time,
                "mean_coeff": mom.mean_coeff.as_slice(),
                "mean_const": mom.mean_const,
                "var_quad": rows_of(&mom.var_quad),
                "var_lin": mom.var_lin.as_slice(),
                "var_const": mom.var_const,
                "u": u.as_slice(),
                "mean": mom.mean(&u),
                "variance": mom.variance(&u),
                "std": mom.std(&u),
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(0)
        }
        Command::Validate { config, report } => {
            let problem = load_problem(&config)?;
            problem.attestation().require()?;
            let round_trip = Problem::from_config(&problem.to_config())? == problem;
            if !round_trip {
                bail!("config does not survive a write/read round trip");
            }
            let mut summary = json!({
                "name": problem.name,
                "n": problem.spec.n(),
                "m": problem.spec.m(),
                "horizon": problem.spec.horizon(),
                "rows": problem.jcc.rows().iter().map(|r| r.id.clone()).collect::<Vec<_>>(),
                "alpha": problem.alpha(),
                "attested": true,
            });
            let mut code = 0;
            if let Some(path) = report {
                let text = fs::read_to_string(&path)
                    .with_context(|| format!("cannot read {}", path.display()))?;
                let rep = SolveReport::from_json(&text)
                    .with_context(|| format!("in {}", path.display()))?;
                let at = problem.with_alpha(rep.alpha)?;
                let verdict = check_report(&at, &rep)?;
                if !verdict {
                    code = 2;
                }
                summary["report"] = json!({
                    "method": rep.method,
                    "status": rep.status,
                    "claimed_feasible": rep.feasible,
                    "verified_feasible": verdict,
                });
            }
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(code)
        }
    }
}

/// Whether the report's solution satisfies the problem it claims to solve.
fn check_report(problem: &Problem, rep: &SolveReport) -> anyhow::Result<bool> {
    let Some(u) = &rep.u else {
        return Ok(false);
    };
    let poly = problem.spec.input_polytope();
    let in_polytope = u.chunks(problem.spec.m()).all(|uk| {
        let uk = DVector::from_column_slice(uk);
        (&poly.a * uk - &poly.b)
            .iter()
            .all(|&v| v <= crate::acs::FEASIBILITY_TOL * poly.b.amax().max(1.0))
    });
    let tightened = match rep.method {
        Method::Proposed => report::recheck(problem, rep)?.is_some_and(|f| f.feasible),
        Method::Scenario => true,
    };
    Ok(in_polytope && tightened)
}

/// Loads a config, applies `VPCC_SEED` and validates it.
pub fn load_problem(path: &Path) -> anyhow::Result<Problem> {
    let mut cfg = ProblemConfig::load(path).with_context(|| format!("in {}", path.display()))?;
    if let Ok(seed) = std::env::var(SEED_ENV) {
        cfg.seed = seed
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}=`{seed}` is not an unsigned integer"))?;
    }
    cfg.build().with_context(|| format!("in {}", path.display()))
}
