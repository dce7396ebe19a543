//! Primal log-barrier interior-point method with a two-phase start.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{
    ConicBackend, ConicProgram, InfeasibilityDiagnostic, KktResiduals, SolverOptions,
    SolverOutcome, SolverStatus,
};

const STAGE_FACTOR: f64 = 10.0;
const CENTER_TOL: f64 = 1e-10;
const FULL_STEP_DECREMENT: f64 = 0.1;
const DIVERGENCE_NORM: f64 = 1e15;
const STEP_FLOOR: f64 = 1e-13;
const STALL_STEPS: usize = 50;

/// Dense barrier solver. Phase 1 minimises a common constraint relaxation τ
/// inside a large ball and certifies infeasibility from the duality gap.
/// Phase 2 follows the central path until `ν/t ≤ 1e-2·tol·max(1, |f|)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BarrierSolver;

impl ConicBackend for BarrierSolver {
    fn name(&self) -> &str {
        "barrier"
    }

    fn solve(&self, program: &ConicProgram, opts: &SolverOptions) -> SolverOutcome {
        self.solve_from(program, opts, None)
    }
}

impl BarrierSolver {
    /// Solves starting from `start` when given. The start need not be feasible.
    pub fn solve_from(
        &self,
        program: &ConicProgram,
        opts: &SolverOptions,
        start: Option<&DVector<f64>>,
    ) -> SolverOutcome {
        let clock = Instant::now();
        let mut run = Run::new(program, opts);
        let x0 = match start {
            Some(s) if s.len() == program.dim() => s.clone(),
            _ => DVector::zeros(program.dim()),
        };
        let mut out = run.solve(x0);
        out.wall_time = clock.elapsed();
        out
    }
}

#[derive(Debug, Clone)]
struct Cone {
    a: DVector<f64>,
    c0: f64,
    m: DMatrix<f64>,
    d: DVector<f64>,
    e2: f64,
    curvature: DMatrix<f64>,
}

impl Cone {
    fn new(a: DVector<f64>, c0: f64, m: DMatrix<f64>, d: DVector<f64>, e2: f64) -> Self {
        let curvature = &a * a.transpose() - &m * m.transpose();
        Self {
            a,
            c0,
            m,
            d,
            e2,
            curvature,
        }
    }

    fn radius(&self, x: &DVector<f64>) -> (f64, DVector<f64>, f64) {
        let w0 = self.c0 - self.a.dot(x);
        let z = self.m.tr_mul(x) + &self.d;
        let r = (z.norm_squared() + self.e2).sqrt();
        (w0, z, r)
    }

    fn violation(&self, x: &DVector<f64>) -> f64 {
        let (w0, _, r) = self.radius(x);
        r - w0
    }

    /// `(w0, z, φ)` with `φ = w0² − ‖z‖² − e²`, or `None` outside the interior.
    fn interior(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>, f64)> {
        let (w0, z, r) = self.radius(x);
        let phi = (w0 - r) * (w0 + r);
        (w0 > r && phi > 0.0 && phi.is_finite()).then_some((w0, z, phi))
    }
}

#[derive(Debug, Clone)]
struct Problem {
    p: DMatrix<f64>,
    c: DVector<f64>,
    lin_a: DMatrix<f64>,
    lin_b: DVector<f64>,
    cones: Vec<Cone>,
}

enum Stop {
    IterationLimit,
    Numerical(String),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Watch {
    Continue,
    Halt,
}

impl Problem {
    fn from_program(program: &ConicProgram) -> Self {
        let n = program.dim();
        let (a_u, b_u) = program.linear();
        let mut lin_rows: Vec<DVector<f64>> = a_u.row_iter().map(|r| r.transpose()).collect();
        let mut lin_b: Vec<f64> = b_u.iter().copied().collect();
        let mut cones = Vec::new();
        for c in program.soc() {
            let m = &c.l * c.lambda;
            if c.lambda == 0.0 || m.amax() == 0.0 {
                let spread = c.lambda * (c.v.norm_squared() + c.s).sqrt();
                lin_rows.push(c.a.clone());
                lin_b.push(c.h - c.b - spread);
            } else {
                cones.push(Cone::new(
                    c.a.clone(),
                    c.h - c.b,
                    m,
                    &c.v * c.lambda,
                    c.lambda * c.lambda * c.s,
                ));
            }
        }
        let lin_a = if lin_rows.is_empty() {
            DMatrix::zeros(0, n)
        } else {
            DMatrix::from_fn(lin_rows.len(), n, |i, j| lin_rows[i][j])
        };
        Self {
            p: program.objective().p.clone(),
            c: program.objective().c.clone(),
            lin_a,
            lin_b: DVector::from_vec(lin_b),
            cones,
        }
    }

    fn dim(&self) -> usize {
        self.c.len()
    }

    fn nu(&self) -> f64 {
        (self.lin_b.len() + 2 * self.cones.len()) as f64
    }

    fn is_unconstrained(&self) -> bool {
        self.lin_b.is_empty() && self.cones.is_empty()
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.c.dot(x)
    }

    fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let lin = (&self.lin_a * x - &self.lin_b).max();
        let lin = if self.lin_b.is_empty() { f64::NEG_INFINITY } else { lin };
        self.cones
            .iter()
            .map(|c| c.violation(x))
            .fold(lin, f64::max)
    }

    fn barrier(&self, x: &DVector<f64>) -> Option<f64> {
        let slack = &self.lin_b - &self.lin_a * x;
        let mut value = 0.0;
        for s in slack.iter() {
            if !(*s > 0.0) {
                return None;
            }
            value -= s.ln();
        }
        for cone in &self.cones {
            value -= cone.interior(x)?.2.ln();
        }
        value.is_finite().then_some(value)
    }

    /// Gradient and Hessian of `t·f + Φ` at a strictly feasible point.
    fn derivatives(&self, x: &DVector<f64>, t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let mut g = (&self.p * x + &self.c) * t;
        let mut h = &self.p * t;
        let slack = &self.lin_b - &self.lin_a * x;
        let inv = slack.map(|s| 1.0 / s);
        g += self.lin_a.tr_mul(&inv);
        let scaled = DMatrix::from_fn(self.lin_a.nrows(), self.lin_a.ncols(), |i, j| {
            self.lin_a[(i, j)] * inv[i]
        });
        h += scaled.tr_mul(&scaled);
        for cone in &self.cones {
            let (w0, z, phi) = cone.interior(x).expect("interior point");
            let q = &cone.a * (2.0 * w0) + &cone.m * z * 2.0;
            g += &q / phi;
            h.ger(1.0 / (phi * phi), &q, &q, 1.0);
            h -= &cone.curvature * (2.0 / phi);
        }
        (g, h)
    }

    /// Newton centering for `t·f + Φ`. `watch` may halt early after a step.
    fn center(
        &self,
        x: &mut DVector<f64>,
        t: f64,
        steps: &mut usize,
        max_steps: usize,
        watch: &mut dyn FnMut(&DVector<f64>) -> Watch,
    ) -> Result<Watch, Stop> {
        loop {
            let (g, h) = self.derivatives(x, t);
            let dx = newton_direction(h, &g)
                .ok_or_else(|| Stop::Numerical("Newton system could not be factorised".into()))?;
            let dec = -g.dot(&dx);
            if !dec.is_finite() {
                return Err(Stop::Numerical("non-finite Newton decrement".into()));
            }
            let negligible = dx.amax() <= STEP_FLOOR * x.amax().max(1.0);
            if dec <= 2.0 * CENTER_TOL || negligible {
                return Ok(Watch::Continue);
            }
            if *steps >= max_steps {
                return Err(Stop::IterationLimit);
            }
            let Some(next) = self.line_search(x, &dx, t, dec) else {
                return Ok(Watch::Continue);
            };
            *x = next;
            *steps += 1;
            if x.amax() > DIVERGENCE_NORM {
                return Err(Stop::Numerical("iterates diverged".into()));
            }
            if watch(x) == Watch::Halt {
                return Ok(Watch::Halt);
            }
        }
    }

    fn line_search(
        &self,
        x: &DVector<f64>,
        dx: &DVector<f64>,
        t: f64,
        dec: f64,
    ) -> Option<DVector<f64>> {
        if dec < FULL_STEP_DECREMENT {
            let full = x + dx;
            if self.barrier(&full).is_some() {
                return Some(full);
            }
        }
        let f0 = t * self.objective(x) + self.barrier(x)?;
        let mut step = 1.0;
        while step > 1e-16 {
            let trial = x + dx * step;
            if let Some(phi) = self.barrier(&trial) {
                if t * self.objective(&trial) + phi <= f0 - 0.25 * step * dec {
                    return Some(trial);
                }
            }
            step *= 0.5;
        }
        None
    }

    fn relaxed(&self, delta: f64) -> Self {
        let mut out = self.clone();
        out.lin_b.add_scalar_mut(delta);
        for cone in &mut out.cones {
            cone.c0 += delta;
        }
        out
    }

    /// `minimise τ` over `(x, τ)` with every constraint loosened by τ,
    /// `τ ≥ −1` and `‖x‖ ≤ radius`.
    fn phase_one(&self, radius: f64) -> Self {
        let n = self.dim();
        let mut lin_a = DMatrix::zeros(self.lin_b.len() + 1, n + 1);
        lin_a
            .view_mut((0, 0), (self.lin_b.len(), n))
            .copy_from(&self.lin_a);
        for i in 0..self.lin_b.len() {
            lin_a[(i, n)] = -1.0;
        }
        lin_a[(self.lin_b.len(), n)] = -1.0;
        let lin_b = self.lin_b.push(1.0);
        let mut cones: Vec<Cone> = self
            .cones
            .iter()
            .map(|c| {
                let m = c.m.clone().insert_row(n, 0.0);
                Cone::new(c.a.push(-1.0), c.c0, m, c.d.clone(), c.e2)
            })
            .collect();
        cones.push(Cone::new(
            DVector::zeros(n + 1),
            radius,
            DMatrix::<f64>::identity(n, n).insert_row(n, 0.0),
            DVector::zeros(n),
            0.0,
        ));
        let mut c = DVector::zeros(n + 1);
        c[n] = 1.0;
        Self {
            p: DMatrix::zeros(n + 1, n + 1),
            c,
            lin_a,
            lin_b,
            cones,
        }
    }

    fn data_scale(&self) -> f64 {
        self.cones
            .iter()
            .map(|c| c.c0.abs())
            .fold(self.lin_b.amax(), f64::max)
            .max(1.0)
    }
}

/// Least-squares match of `t·∇f` against `−∇Φ` at `x`, kept within
/// `[ν/max(1,|f|), ν/(tol·max(1,|f|))]`.
fn initial_t(problem: &Problem, x: &DVector<f64>, tol: f64) -> f64 {
    let nu = problem.nu();
    let scale = problem.objective(x).abs().max(1.0);
    let lo = (nu / scale).max(1e-12);
    let hi = nu / (tol * scale);
    let (g_barrier, _) = problem.derivatives(x, 0.0);
    let g_obj = &problem.p * x + &problem.c;
    let denom = g_obj.norm_squared();
    if denom == 0.0 {
        return lo;
    }
    let t = -g_obj.dot(&g_barrier) / denom;
    if t.is_finite() {
        t.clamp(lo, hi.max(lo))
    } else {
        lo
    }
}

fn newton_direction(h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let rhs = -g;
    if let Some(chol) = Cholesky::new(h.clone()) {
        let dx = chol.solve(&rhs);
        if dx.iter().all(|v| v.is_finite()) {
            return Some(dx);
        }
    }
    let diag = h.diagonal().amax().max(1e-300);
    let mut reg = 1e-14 * diag;
    while reg <= 1e-2 * diag {
        let mut shifted = h.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += reg;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            let dx = chol.solve(&rhs);
            if dx.iter().all(|v| v.is_finite()) {
                return Some(dx);
            }
        }
        reg *= 100.0;
    }
    None
}

struct Run<'a> {
    program: &'a ConicProgram,
    opts: &'a SolverOptions,
    problem: Problem,
    steps: usize,
}

enum PhaseOne {
    Feasible(DVector<f64>, Option<f64>),
    Infeasible(DVector<f64>),
}

impl<'a> Run<'a> {
    fn new(program: &'a ConicProgram, opts: &'a SolverOptions) -> Self {
        Self {
            program,
            opts,
            problem: Problem::from_program(program),
            steps: 0,
        }
    }

    fn solve(&mut self, x0: DVector<f64>) -> SolverOutcome {
        if self.problem.is_unconstrained() {
            return self.unconstrained();
        }
        let (x, relax) = if self.problem.barrier(&x0).is_some() {
            (x0, None)
        } else {
            match self.phase_one(x0) {
                Ok(PhaseOne::Feasible(x, relax)) => (x, relax),
                Ok(PhaseOne::Infeasible(x)) => return self.infeasible(x),
                Err(stop) => return self.stopped(stop, None),
            }
        };
        let problem = match relax {
            Some(delta) => self.problem.relaxed(delta),
            None => self.problem.clone(),
        };
        let mut out = self.phase_two(&problem, x);
        if let Some(delta) = relax {
            out.message = Some(format!(
                "feasible set has empty interior; constraints relaxed by {delta:e}"
            ));
        }
        out
    }

    fn unconstrained(&mut self) -> SolverOutcome {
        let n = self.problem.dim();
        let p = &self.problem.p;
        let rhs = -&self.problem.c;
        let x = match Cholesky::new(p.clone()) {
            Some(chol) => chol.solve(&rhs),
            None => p
                .clone()
                .svd(true, true)
                .solve(&rhs, 1e-12 * p.amax().max(1e-300))
                .unwrap_or_else(|_| DVector::zeros(n)),
        };
        let residual = (p * &x - &rhs).norm();
        self.steps = 1;
        if !(residual <= 1e-9 * rhs.norm().max(1.0)) {
            let mut out = self.finish(SolverStatus::NumericalFailure, x, 0.0, f64::NAN);
            out.message = Some("objective is unbounded below".into());
            return out;
        }
        self.finish(SolverStatus::Optimal, x, residual, 0.0)
    }

    fn phase_one(&mut self, x0: DVector<f64>) -> Result<PhaseOne, Stop> {
        let n = self.problem.dim();
        let scale = self.problem.data_scale();
        let tol = self.opts.tol * scale;
        let radius = 1e6 * scale.max(x0.amax()).max(1.0) * (n as f64).sqrt().max(1.0);
        let aux = self.problem.phase_one(radius);
        let tau0 = self.problem.max_violation(&x0).max(0.0) + 1.0;
        let mut y = x0.push(tau0);
        let nu = aux.nu();
        let mut t = 1.0 / scale;
        let mut best = tau0;
        let mut since_best = 0usize;
        let mut stalled = false;
        let max_steps = self.opts.max_iter;
        loop {
            let mut watch = |y: &DVector<f64>| {
                let tau = y[n];
                if tau < 0.0 {
                    return Watch::Halt;
                }
                if tau < best - 1e-12 * scale {
                    best = tau;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= STALL_STEPS && best > tol {
                        stalled = true;
                        return Watch::Halt;
                    }
                }
                Watch::Continue
            };
            let state = aux.center(&mut y, t, &mut self.steps, max_steps, &mut watch)?;
            let tau = y[n];
            let x = y.rows(0, n).into_owned();
            if state == Watch::Halt && !stalled {
                return Ok(PhaseOne::Feasible(x, None));
            }
            if stalled || tau - nu / t > tol {
                return Ok(PhaseOne::Infeasible(x));
            }
            if nu / t <= 1e-2 * tol && tau <= tol {
                return Ok(PhaseOne::Feasible(x, Some(tau.max(0.0) + 1e-2 * tol)));
            }
            t *= STAGE_FACTOR;
        }
    }

    fn phase_two(&mut self, problem: &Problem, mut x: DVector<f64>) -> SolverOutcome {
        let nu = problem.nu();
        let mut t = initial_t(problem, &x, self.opts.tol);
        let max_steps = self.opts.max_iter;
        loop {
            let mut watch = |_: &DVector<f64>| Watch::Continue;
            if let Err(stop) = problem.center(&mut x, t, &mut self.steps, max_steps, &mut watch) {
                return self.stopped(stop, Some((problem, x, t)));
            }
            let f = problem.objective(&x);
            if nu / t <= 1e-2 * self.opts.tol * f.abs().max(1.0) {
                break;
            }
            t *= STAGE_FACTOR;
        }
        let (g, _) = problem.derivatives(&x, t);
        self.finish(SolverStatus::Optimal, x, g.norm() / t, nu / t)
    }

    fn stopped(&self, stop: Stop, at: Option<(&Problem, DVector<f64>, f64)>) -> SolverOutcome {
        let (status, message) = match stop {
            Stop::IterationLimit => (
                SolverStatus::IterationLimit,
                format!("iteration limit {} reached", self.opts.max_iter),
            ),
            Stop::Numerical(m) => (SolverStatus::NumericalFailure, m),
        };
        let (x, dual, gap) = match at {
            Some((problem, x, t)) if problem.barrier(&x).is_some() => {
                let (g, _) = problem.derivatives(&x, t);
                (x, g.norm() / t, problem.nu() / t)
            }
            Some((_, x, _)) => (x, f64::NAN, f64::NAN),
            None => (DVector::zeros(self.program.dim()), f64::NAN, f64::NAN),
        };
        let mut out = self.finish(status, x, dual, gap);
        out.message = Some(message);
        out
    }

    fn infeasible(&self, x: DVector<f64>) -> SolverOutcome {
        let (violation, constraint) = self.program.max_violation(&x);
        let mut out = self.finish(SolverStatus::Infeasible, x.clone(), f64::NAN, f64::NAN);
        out.message = Some(format!("no feasible point; least violation {violation:e}"));
        out.infeasibility = Some(InfeasibilityDiagnostic {
            constraint,
            violation,
            point: x.iter().copied().collect(),
        });
        out
    }

    fn finish(&self, status: SolverStatus, u: DVector<f64>, dual: f64, gap: f64) -> SolverOutcome {
        let primal = self.program.max_violation(&u).0.max(0.0);
        SolverOutcome {
            status,
            objective: self.program.objective().eval(&u),
            u,
            residuals: KktResiduals { primal, dual, gap },
            iterations: self.steps,
            wall_time: Default::default(),
            infeasibility: None,
            message: None,
        }
    }
}
