mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use vpcc::conic::{self, ConicProgram, QuadraticObjective, SolverOptions, SolverStatus};

#[test]
fn random_fixed_lambda_subproblems_match_clarabel() {
    let opts = SolverOptions::default();
    for seed in 0..10 {
        let program = random_subproblem(1000 + seed);
        let ours = conic::solve(&program, &opts);
        let reference = clarabel_solve(&program);
        assert!(reference.solved, "seed {seed}: reference did not solve");
        assert_eq!(ours.status, SolverStatus::Optimal, "seed {seed}: {:?}", ours.message);
        let rel = (ours.objective - reference.objective).abs() / reference.objective.abs().max(1.0);
        assert!(
            rel <= 1e-4,
            "seed {seed}: {} vs {} (rel {rel:e})",
            ours.objective,
            reference.objective
        );
        let (violation, _) = program.max_violation(&ours.u);
        assert!(violation <= 1e-6, "seed {seed}: violation {violation:e}");
    }
}

#[test]
fn program_json_round_trip_preserves_solution() {
    let program = random_subproblem(77);
    let back = ConicProgram::from_json(&program.to_json().unwrap()).unwrap();
    let opts = SolverOptions::default();
    let a = conic::solve(&program, &opts);
    let b = conic::solve(&back, &opts);
    assert!((a.objective - b.objective).abs() <= 1e-9 * a.objective.abs().max(1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // Projection of a point onto a box has a closed form.
    #[test]
    fn box_projection(
        target in prop::collection::vec(-5.0f64..5.0, 1..5),
        half in 0.2f64..3.0,
    ) {
        let n = target.len();
        let t = DVector::from_vec(target);
        let objective = QuadraticObjective {
            p: DMatrix::identity(n, n),
            c: -&t,
            constant: 0.0,
        };
        let mut a = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            a[(i, i)] = 1.0;
            a[(n + i, i)] = -1.0;
        }
        let b = DVector::from_element(2 * n, half);
        let program = ConicProgram::new(objective, a, b, vec![]).unwrap();
        let out = conic::solve(&program, &SolverOptions::default());
        prop_assert_eq!(out.status, SolverStatus::Optimal);
        for i in 0..n {
            let want = t[i].clamp(-half, half);
            prop_assert!((out.u[i] - want).abs() <= 1e-5, "{} vs {}", out.u[i], want);
        }
    }
}
