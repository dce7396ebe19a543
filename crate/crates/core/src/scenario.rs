//! Scenario baseline: sample the state matrices, impose every constraint on
//! every sample and solve a single quadratic program in `U`.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acs::{stacked_polytope, QuadraticCost};
use crate::conic::{
    BarrierSolver, ConicBackend, ConicProgram, InfeasibilityDiagnostic, SolverOptions,
    SolverStatus,
};
use crate::moments::SystemSpec;
use crate::reformulate::{ChanceRow, JointChanceConstraint};
use crate::stochastics::SeedStream;
use crate::{Error, Result};

pub const DEFAULT_BETA: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub alpha: f64,
    pub beta: f64,
    pub sample_count: Option<usize>,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(alpha: f64, seed: u64) -> Self {
        Self {
            alpha,
            beta: DEFAULT_BETA,
            sample_count: None,
            seed,
        }
    }

    /// The explicit override, or [`required_samples`].
    pub fn samples(&self) -> Result<usize> {
        match self.sample_count {
            Some(0) => Err(Error::Domain("scenario sample count must be positive".into())),
            Some(n) => Ok(n),
            None => required_samples(self.alpha, self.beta),
        }
    }
}

fn sample_bound(alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) || !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!(
            "scenario sample count needs 0 < alpha ≤ 1 and 0 < beta < 1, got alpha = {alpha}, beta = {beta}"
        )));
    }
    Ok((2.0 / alpha) * ((1.0 / beta).ln() + 2.0))
}

/// Smallest integer `N_S ≥ (2/α)(ln(1/β) + 2)`.
pub fn required_samples(alpha: f64, beta: f64) -> Result<usize> {
    // The shrink absorbs rounding when the bound is an exact integer.
    Ok((sample_bound(alpha, beta)? * (1.0 - 1e-12)).ceil() as usize)
}

/// Human-readable account of the sample count used.
pub fn sample_count_note(sc: &ScenarioConfig) -> Result<String> {
    let used = sc.samples()?;
    let mut note = match sc.sample_count {
        Some(n) => format!("scenario sample count {n} set explicitly"),
        None => format!(
            "scenario sample count {used} = ceil((2/alpha)(ln(1/beta) + 2)) = ceil({:.4}) with alpha = {}, beta = {}",
            sample_bound(sc.alpha, sc.beta)?,
            sc.alpha,
            sc.beta
        ),
    };
    if sc.sample_count.is_none() && used == 1782 {
        note.push_str(
            "; the published count for 1 - alpha = 0.99 is 1,781, one below the ceiling of 1781.55",
        );
    }
    Ok(note)
}

/// `(coefficients, rhs)` with `coefficientsᵀU ≤ rhs` for one realisation.
fn sampled_row(
    spec: &SystemSpec,
    matrices: &[DMatrix<f64>],
    row: &ChanceRow,
) -> (DVector<f64>, f64) {
    let m = spec.m();
    let mut coef = DVector::zeros(spec.input_dim());
    let mut r = row.g.transpose();
    for t in (0..row.k).rev() {
        coef.rows_mut(t * m, m)
            .copy_from(&(&r * spec.b()).transpose());
        r = &r * &matrices[t];
    }
    let constant = (&r * spec.x0())[0];
    (coef, row.h - constant)
}

/// All sampled rows, in sample order, with exact duplicates removed.
pub fn sampled_constraints(
    spec: &SystemSpec,
    jcc: &JointChanceConstraint,
    samples: usize,
    stream: SeedStream,
) -> Result<Vec<(DVector<f64>, f64)>> {
    for row in jcc.rows() {
        if row.g.len() != spec.n() || row.k > spec.horizon() {
            return Err(Error::Dimension(format!(
                "row `{}` does not fit the system",
                row.id
            )));
        }
    }
    let per_sample: Vec<Vec<(DVector<f64>, f64)>> = (0..samples as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream.rng(s);
            let matrices = spec.draw_matrices(&mut rng);
            jcc.rows()
                .iter()
                .map(|row| sampled_row(spec, &matrices, row))
                .collect()
        })
        .collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (coef, rhs) in per_sample.into_iter().flatten() {
        let key: Vec<u64> = coef
            .iter()
            .chain(std::iter::once(&rhs))
            .map(|v| if *v == 0.0 { 0 } else { v.to_bits() })
            .collect();
        if seen.insert(key) {
            out.push((coef, rhs));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub status: SolverStatus,
    pub u: Option<DVector<f64>>,
    pub objective: Option<f64>,
    pub samples: usize,
    pub unique_constraints: usize,
    pub seed: u64,
    #[serde(with = "crate::conic::duration_secs")]
    pub sampling_time: Duration,
    #[serde(with = "crate::conic::duration_secs")]
    pub solve_time: Duration,
    #[serde(with = "crate::conic::duration_secs")]
    pub wall_time: Duration,
    pub infeasibility: Option<InfeasibilityDiagnostic>,
    pub note: String,
    pub message: Option<String>,
}

impl ScenarioOutcome {
    pub fn is_feasible(&self) -> bool {
        self.status == SolverStatus::Optimal
    }
}

pub fn solve_scenario(
    spec: &SystemSpec,
    jcc: &JointChanceConstraint,
    cost: &QuadraticCost,
    sc: &ScenarioConfig,
    solver: &SolverOptions,
) -> Result<ScenarioOutcome> {
    let clock = Instant::now();
    let samples = sc.samples()?;
    let note = sample_count_note(sc)?;
    if cost.horizon() != spec.horizon() || cost.m() != spec.m() {
        return Err(Error::Dimension("cost does not match the system".into()));
    }
    let rows = sampled_constraints(spec, jcc, samples, SeedStream::new(sc.seed))?;
    let sampling_time = clock.elapsed();

    let (poly_a, poly_b) = stacked_polytope(spec);
    let dim = spec.input_dim();
    let total = poly_b.len() + rows.len();
    let mut a = DMatrix::zeros(total, dim);
    let mut b = DVector::zeros(total);
    a.view_mut((0, 0), (poly_b.len(), dim)).copy_from(&poly_a);
    b.rows_mut(0, poly_b.len()).copy_from(&poly_b);
    for (i, (coef, rhs)) in rows.iter().enumerate() {
        let at = poly_b.len() + i;
        a.row_mut(at).copy_from(&coef.transpose());
        b[at] = *rhs;
    }
    let program = ConicProgram::new(cost.objective(), a, b, vec![])?;
    let solve_clock = Instant::now();
    let out = BarrierSolver.solve(&program, solver);
    let solve_time = solve_clock.elapsed();
    let feasible = out.is_optimal();
    Ok(ScenarioOutcome {
        status: out.status,
        objective: feasible.then_some(out.objective),
        u: feasible.then_some(out.u),
        samples,
        unique_constraints: rows.len(),
        seed: sc.seed,
        sampling_time,
        solve_time,
        wall_time: clock.elapsed(),
        infeasibility: out.infeasibility,
        note,
        message: out.message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{InputPolytope, RandomMatrixModel};
    use approx::assert_relative_eq;

    #[test]
    fn sample_counts() {
        assert_eq!(required_samples(0.16, 0.001).unwrap(), 112);
        assert_eq!(required_samples(0.01, 0.001).unwrap(), 1782);
        assert_eq!(required_samples(1.0, (-1.0f64).exp()).unwrap(), 6);
        assert!(required_samples(0.0, 0.001).is_err());
        assert!(required_samples(0.1, 1.0).is_err());
    }

    #[test]
    fn discrepancy_note() {
        let note = sample_count_note(&ScenarioConfig::new(0.01, 1)).unwrap();
        assert!(note.contains("1782") && note.contains("1,781"));
        let note = sample_count_note(&ScenarioConfig::new(0.16, 1)).unwrap();
        assert!(note.contains("112") && !note.contains("1,781"));
    }

    #[test]
    fn deterministic_samples_collapse_to_nominal_qp() {
        let a = DMatrix::from_row_slice(1, 1, &[0.5]);
        let spec = SystemSpec::time_invariant(
            RandomMatrixModel::deterministic(&a).unwrap(),
            2,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 0.0),
            InputPolytope::boxed(&[-5.0], &[5.0]),
        )
        .unwrap();
        let row = ChanceRow {
            id: "r".into(),
            g: DVector::from_element(1, -1.0),
            h: -1.0,
            k: 2,
        };
        let jcc = JointChanceConstraint::new(vec![row], 0.1).unwrap();
        let cost =
            QuadraticCost::time_invariant(DMatrix::from_element(1, 1, 1.0), DVector::zeros(1), 2)
                .unwrap();
        let mut sc = ScenarioConfig::new(0.1, 9);
        sc.sample_count = Some(50);
        let out = solve_scenario(&spec, &jcc, &cost, &sc, &SolverOptions::default()).unwrap();
        assert_eq!(out.unique_constraints, 1);
        let u = out.u.unwrap();
        assert_relative_eq!(u[0], 0.4, epsilon = 1e-6);
        assert_relative_eq!(u[1], 0.8, epsilon = 1e-6);
    }
}
