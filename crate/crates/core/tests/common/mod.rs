#![allow(dead_code)]

use std::path::PathBuf;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus as ClarabelStatus,
    SupportedConeT,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vpcc::acs::{u_step_program, QuadraticCost};
use vpcc::config::{Problem, ProblemConfig};
use vpcc::conic::ConicProgram;
use vpcc::moments::{InputPolytope, RandomEntry, RandomMatrixModel, SystemSpec};
use vpcc::reformulate::{build_reformulation, Attestation, ChanceRow, JointChanceConstraint, RiskAllocation};
use vpcc::stochastics::DistributionSpec;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

pub fn load(name: &str) -> Problem {
    ProblemConfig::load(&config_path(name)).unwrap().build().unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A per-entry description kept alongside the model so the oracle never
/// reads moments back out of the library.
#[derive(Debug, Clone)]
pub struct FiniteEntry {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FiniteSystem {
    pub spec: SystemSpec,
    /// `entries[t][i * n + j]` is `A(t)[i][j]`.
    pub entries: Vec<Vec<FiniteEntry>>,
    pub b: DMatrix<f64>,
    pub x0: DVector<f64>,
}

fn finite_entry(rng: &mut ChaCha8Rng) -> FiniteEntry {
    if rng.random_bool(0.25) {
        return FiniteEntry {
            values: vec![rng.random_range(-1.2..1.2)],
            probs: vec![1.0],
        };
    }
    let count = rng.random_range(2..=3);
    let values: Vec<f64> = (0..count).map(|_| rng.random_range(-1.5..1.5)).collect();
    let weights: Vec<f64> = (0..count).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let head: f64 = probs[..count - 1].iter().sum();
    probs[count - 1] = 1.0 - head;
    FiniteEntry { values, probs }
}

/// Random system with `n ≤ 2`, `N ≤ 3` and at most three support points per
/// entry. Matrices vary with time.
pub fn random_finite_system(rng: &mut ChaCha8Rng) -> FiniteSystem {
    let n = rng.random_range(1..=2);
    let m = rng.random_range(1..=2);
    let horizon = rng.random_range(1..=3);
    let entries: Vec<Vec<FiniteEntry>> = (0..horizon)
        .map(|_| (0..n * n).map(|_| finite_entry(rng)).collect())
        .collect();
    let models = entries
        .iter()
        .map(|step| {
            let cells = step
                .iter()
                .map(|e| {
                    let dist = if e.values.len() == 1 {
                        DistributionSpec::constant(e.values[0])
                    } else {
                        DistributionSpec::finite(e.values.clone(), e.probs.clone()).unwrap()
                    };
                    RandomEntry::from_distribution(dist).unwrap()
                })
                .collect();
            RandomMatrixModel::new(n, cells).unwrap()
        })
        .collect();
    let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let spec = SystemSpec::new(models, b.clone(), x0.clone(), InputPolytope::unconstrained(m)).unwrap();
    FiniteSystem {
        spec,
        entries,
        b,
        x0,
    }
}

/// Exact mean and variance maps of `gᵀx(k)` by enumerating every joint
/// outcome of `A(0), …, A(k−1)`.
///
/// `gᵀx(k) = c + dᵀU` for each outcome; the result is
/// `(E[d], E[c], Cov(d), Cov(d, c), Var(c))`.
pub fn enumerate_moments(
    sys: &FiniteSystem,
    g: &DVector<f64>,
    k: usize,
) -> (DVector<f64>, f64, DMatrix<f64>, DVector<f64>, f64) {
    let n = sys.x0.len();
    let m = sys.b.ncols();
    let dim = m * sys.entries.len();
    let cells: Vec<&FiniteEntry> = sys.entries[..k].iter().flatten().collect();
    let mut outcomes: Vec<(f64, f64, DVector<f64>)> = Vec::new();
    let mut idx = vec![0usize; cells.len()];
    loop {
        let mut weight = 1.0;
        let mut mats = Vec::with_capacity(k);
        for t in 0..k {
            let mut a = DMatrix::zeros(n, n);
            for c in 0..n * n {
                let e = cells[t * n * n + c];
                let j = idx[t * n * n + c];
                a[(c / n, c % n)] = e.values[j];
                weight *= e.probs[j];
            }
            mats.push(a);
        }
        // Row vector gᵀA(k−1)…A(t+1) gives the sensitivity to u(t).
        let mut d = DVector::zeros(dim);
        let mut r = g.transpose();
        for t in (0..k).rev() {
            let col = &r * &sys.b;
            for j in 0..m {
                d[t * m + j] = col[j];
            }
            r = &r * &mats[t];
        }
        let c = (&r * &sys.x0)[0];
        outcomes.push((weight, c, d));

        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return summarize(&outcomes, dim);
            }
            idx[pos] += 1;
            if idx[pos] < cells[pos].values.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

fn summarize(
    outcomes: &[(f64, f64, DVector<f64>)],
    dim: usize,
) -> (DVector<f64>, f64, DMatrix<f64>, DVector<f64>, f64) {
    let mut mean_d = DVector::zeros(dim);
    let mut mean_c = 0.0;
    for (w, c, d) in outcomes {
        mean_d += d * *w;
        mean_c += w * c;
    }
    let mut cov_dd = DMatrix::zeros(dim, dim);
    let mut cov_dc = DVector::zeros(dim);
    let mut var_c = 0.0;
    for (w, c, d) in outcomes {
        let dd = d - &mean_d;
        let dc = c - mean_c;
        cov_dd += &dd * dd.transpose() * *w;
        cov_dc += &dd * (dc * w);
        var_c += w * dc * dc;
    }
    (mean_d, mean_c, cov_dd, cov_dc, var_c)
}

pub fn oracle_mean(o: &(DVector<f64>, f64, DMatrix<f64>, DVector<f64>, f64), u: &DVector<f64>) -> f64 {
    o.0.dot(u) + o.1
}

pub fn oracle_variance(o: &(DVector<f64>, f64, DMatrix<f64>, DVector<f64>, f64), u: &DVector<f64>) -> f64 {
    u.dot(&(&o.2 * u)) + 2.0 * o.3.dot(u) + o.4
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(got.abs())
    }
}

/// A fixed-`λ` cone program from a random finite system with a box on the
/// inputs, a random strictly convex cost and a few chance rows.
pub fn random_subproblem(seed: u64) -> ConicProgram {
    let mut r = rng(seed);
    loop {
        let sys = random_finite_system(&mut r);
        let m = sys.b.ncols();
        let horizon = sys.entries.len();
        let spec = SystemSpec::new(
            sys.spec.a_models().to_vec(),
            sys.b.clone(),
            sys.x0.clone(),
            InputPolytope::boxed(&vec![-3.0; m], &vec![3.0; m]),
        )
        .unwrap();
        let rows: Vec<ChanceRow> = (0..r.random_range(1..=3))
            .map(|i| ChanceRow {
                id: format!("r{i}"),
                g: DVector::from_fn(spec.n(), |_, _| r.random_range(-1.0..1.0)),
                h: r.random_range(1.0..4.0),
                k: r.random_range(1..=horizon),
            })
            .collect();
        let count = rows.len() as f64;
        let jcc = JointChanceConstraint::new(rows, 0.1).unwrap();
        let reform = build_reformulation(&spec, &jcc, &Attestation::all()).unwrap();
        let lambda = vpcc::reformulate::risk_to_lambda(0.1 / count).unwrap();
        let alloc = RiskAllocation::uniform(&reform, lambda);
        let root = DMatrix::from_fn(m, m, |_, _| r.random_range(-1.0..1.0));
        let quad = &root * root.transpose() + DMatrix::identity(m, m) * 0.5;
        let lin = DVector::from_fn(m, |_, _| r.random_range(-30.0..30.0));
        let cost = QuadraticCost::time_invariant(quad, lin, horizon).unwrap();
        let program = u_step_program(&spec, &reform, &alloc, &cost).unwrap();
        // Keep only programs with a strictly feasible origin so both solvers
        // face a well-posed instance.
        let zero = DVector::zeros(program.dim());
        if program.soc().iter().all(|c| c.slack(&zero) > 0.1) {
            return program;
        }
    }
}

#[derive(Debug)]
pub struct Reference {
    pub solved: bool,
    pub objective: f64,
    pub x: Vec<f64>,
}

/// Solves `program` with Clarabel. Cone row `λ‖(LᵀU + v, √s)‖ ≤ h − aᵀU − b`
/// becomes the second-order cone `(h − b − aᵀU, λ(LᵀU + v), λ√s)`.
pub fn clarabel_solve(program: &ConicProgram) -> Reference {
    let dim = program.dim();
    let obj = program.objective();
    let p_upper: Vec<Vec<f64>> = (0..dim)
        .map(|i| (0..dim).map(|j| if j >= i { obj.p[(i, j)] } else { 0.0 }).collect())
        .collect();
    let p = CscMatrix::from(p_upper.iter());
    let q: Vec<f64> = obj.c.iter().copied().collect();

    let mut a_rows: Vec<Vec<f64>> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut cones = Vec::new();
    let (a_u, b_u) = program.linear();
    for i in 0..b_u.len() {
        a_rows.push(a_u.row(i).iter().copied().collect());
        b.push(b_u[i]);
    }
    if !b_u.is_empty() {
        cones.push(SupportedConeT::NonnegativeConeT(b_u.len()));
    }
    for c in program.soc() {
        a_rows.push(c.a.iter().copied().collect());
        b.push(c.h - c.b);
        for j in 0..c.l.ncols() {
            a_rows.push(c.l.column(j).iter().map(|x| -c.lambda * x).collect());
            b.push(c.lambda * c.v[j]);
        }
        a_rows.push(vec![0.0; dim]);
        b.push(c.lambda * c.s.max(0.0).sqrt());
        cones.push(SupportedConeT::SecondOrderConeT(c.l.ncols() + 2));
    }
    let a = CscMatrix::from(a_rows.iter());
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-10)
        .tol_gap_rel(1e-10)
        .tol_feas(1e-10)
        .build()
        .unwrap();
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings).unwrap();
    solver.solve();
    let sol = &solver.solution;
    Reference {
        solved: matches!(sol.status, ClarabelStatus::Solved),
        objective: sol.obj_val + obj.constant,
        x: sol.x.clone(),
    }
}

/// The bundled two-bus instance with a different horizon.
pub fn two_bus_with_horizon(horizon: usize) -> Problem {
    let mut cfg = ProblemConfig::load(&config_path("two_bus.json")).unwrap();
    cfg.system.horizon = horizon;
    cfg.build().unwrap()
}

/// `1 − s` rounded to 12 decimals, as the sweep computes it.
pub fn alpha_of(safety: f64) -> f64 {
    ((1.0 - safety) * 1e12).round() / 1e12
}

pub const SWEEP: [f64; 9] = [0.84, 0.86, 0.88, 0.90, 0.92, 0.94, 0.96, 0.98, 0.99];
