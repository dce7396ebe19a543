mod common;

use common::*;
use nalgebra::DVector;
use vpcc::acs::{self, AcsStatus, InitPolicy, InitUsed, StepPolicy};
use vpcc::config::Problem;
use vpcc::reformulate::Attestation;
use vpcc::Error;

fn run(p: &Problem) -> acs::AcsOutcome {
    acs::run(&p.spec, &p.jcc, &p.cost, &p.attestation(), &p.acs).unwrap()
}

#[test]
fn two_bus_sweep_pattern_and_trace() {
    let base = load("two_bus.json");
    for s in SWEEP {
        let p = base.with_alpha(alpha_of(s)).unwrap();
        let out = run(&p);
        if s == 0.99 {
            assert_eq!(out.status, AcsStatus::Infeasible, "1-alpha = {s}");
            assert!(out.u.is_none());
            continue;
        }
        assert_eq!(out.status, AcsStatus::Converged, "1-alpha = {s}: {:?}", out.message);
        let feas = out.feasibility.as_ref().unwrap();
        assert!(feas.feasible && feas.risk_sum <= p.alpha());
        let tol = p.acs.solver.tol;
        for pair in out.trace.windows(2) {
            let slack = 10.0 * tol * pair[0].objective.abs().max(1.0);
            assert!(pair[1].objective <= pair[0].objective + slack, "1-alpha = {s}");
        }
    }
}

#[test]
fn max_margin_start_is_used_only_where_uniform_fails() {
    let base = load("two_bus.json");
    let low = run(&base.with_alpha(alpha_of(0.90)).unwrap());
    assert_eq!(low.init, Some(InitUsed::UniformRisk));
    let high = run(&base.with_alpha(alpha_of(0.98)).unwrap());
    assert!(matches!(high.init, Some(InitUsed::MaxMargin { .. })));
}

#[test]
fn restart_from_final_allocation_reproduces_the_input() {
    let p = load("two_bus.json").with_alpha(0.1).unwrap();
    let first = run(&p);
    let mut again = p.clone();
    again.acs.init = InitPolicy::UserSupplied {
        lambdas: first.allocation.as_ref().unwrap().lambdas.clone(),
    };
    let second = run(&again);
    assert_eq!(second.status, AcsStatus::Converged);
    let (u1, u2) = (first.u.unwrap(), second.u.unwrap());
    assert!((&u1 - &u2).amax() <= 1e-4 * u1.amax(), "{u1} vs {u2}");
    assert!(second.objective.unwrap() <= first.objective.unwrap() * (1.0 + 1e-6));
}

#[test]
fn runs_are_deterministic() {
    let p = load("two_bus.json").with_alpha(0.12).unwrap();
    let (a, b) = (run(&p), run(&p));
    assert_eq!(a.u, b.u);
    assert_eq!(a.objective, b.objective);
}

#[test]
fn tight_policy_also_returns_valid_solutions() {
    let mut p = load("two_bus.json").with_alpha(0.1).unwrap();
    p.acs.step = StepPolicy::Tight;
    let out = run(&p);
    assert!(out.is_feasible());
    assert!(out.feasibility.unwrap().risk_sum <= 0.1);
}

#[test]
fn time_invariant_two_bus_uses_one_controller() {
    for s in [0.84, 0.90] {
        let p = two_bus_with_horizon(3).with_alpha(alpha_of(s)).unwrap();
        let out = run(&p);
        assert!(out.is_feasible(), "1-alpha = {s}: {:?}", out.message);
        let u = out.u.unwrap();
        let m = p.spec.m();
        let first = u.rows(0, m).into_owned();
        for k in 1..p.spec.horizon() {
            let gap = (u.rows(k * m, m) - &first).amax();
            assert!(gap <= 1e-4, "1-alpha = {s}, step {k}: {gap:e}");
        }
    }
}

#[test]
fn deterministic_double_integrator_solves_the_nominal_qp() {
    // min u0² + u1² + u2² subject to 2u0 + u1 ≥ 1 gives U = (0.4, 0.2, 0).
    let p = load("deterministic_toy.json");
    let out = run(&p);
    assert_eq!(out.status, AcsStatus::Converged);
    assert_eq!(out.trace.len(), 1);
    let u = out.u.unwrap();
    let want = DVector::from_vec(vec![0.4, 0.2, 0.0]);
    assert!((&u - &want).amax() <= 1e-5, "{u}");
    assert!((out.objective.unwrap() - 0.2).abs() <= 1e-5);
}

#[test]
fn refuses_without_attestation() {
    let p = load("two_bus.json");
    let none = Attestation::default();
    let err = acs::run(&p.spec, &p.jcc, &p.cost, &none, &p.acs).unwrap_err();
    assert!(matches!(err, Error::NotAttested(_)));
}
