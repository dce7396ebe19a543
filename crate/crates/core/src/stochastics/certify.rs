use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::SeedStream;
use crate::moments::SystemSpec;
use crate::reformulate::ChanceRow;
use crate::{Error, Result};

/// Confidence level of the reported upper bound.
pub const CERTIFICATE_CONFIDENCE: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCertificate {
    pub samples: usize,
    pub violations: usize,
    pub empirical_violation: f64,
    pub upper_ci_99: f64,
    pub alpha: f64,
    /// `upper_ci_99 ≤ alpha`.
    pub certified: bool,
    pub seed: u64,
}

/// Estimates the joint violation probability of `rows` under input `u` by
/// simulating the dynamics directly. Sample `i` draws from stream `i`, so the
/// result does not depend on the thread count.
pub fn mc_certify(
    spec: &SystemSpec,
    rows: &[ChanceRow],
    u: &DVector<f64>,
    alpha: f64,
    samples: usize,
    stream: SeedStream,
) -> Result<McCertificate> {
    if samples == 0 {
        return Err(Error::Domain("Monte-Carlo sample count must be positive".into()));
    }
    if u.len() != spec.input_dim() {
        return Err(Error::Dimension(format!(
            "input has length {}, expected {}",
            u.len(),
            spec.input_dim()
        )));
    }
    for row in rows {
        if row.g.len() != spec.n() || row.k > spec.horizon() {
            return Err(Error::Dimension(format!(
                "row `{}` does not fit an n = {} system with horizon {}",
                row.id,
                spec.n(),
                spec.horizon()
            )));
        }
    }
    let violations = (0..samples as u64)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = stream.rng(i);
            let matrices = spec.draw_matrices(&mut rng);
            let states = spec.simulate(&matrices, u);
            rows.iter().any(|r| r.g.dot(&states[r.k]) > r.h)
        })
        .count();
    let upper = clopper_pearson_upper(violations, samples, CERTIFICATE_CONFIDENCE)?;
    Ok(McCertificate {
        samples,
        violations,
        empirical_violation: violations as f64 / samples as f64,
        upper_ci_99: upper,
        alpha,
        certified: upper <= alpha,
        seed: stream.seed,
    })
}

/// One-sided Clopper–Pearson upper bound for a binomial proportion after
/// `x` successes in `n` trials.
pub fn clopper_pearson_upper(x: usize, n: usize, confidence: f64) -> Result<f64> {
    if n == 0 || x > n || !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Domain(format!(
            "Clopper-Pearson needs 0 ≤ x ≤ n, n > 0 and confidence in (0, 1); got x = {x}, n = {n}, confidence = {confidence}"
        )));
    }
    if x == n {
        return Ok(1.0);
    }
    // The bound p solves I_p(x + 1, n − x) = confidence.
    let (a, b) = ((x + 1) as f64, (n - x) as f64);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < confidence {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1e-300) {
            break;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{InputPolytope, RandomEntry, RandomMatrixModel};
    use crate::stochastics::DistributionSpec;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn zero_successes_closed_form() {
        // With x = 0 the bound is 1 − (1 − c)^{1/n}.
        let n = 1000;
        let expected = 1.0 - 0.01_f64.powf(1.0 / n as f64);
        assert_relative_eq!(
            clopper_pearson_upper(0, n, 0.99).unwrap(),
            expected,
            max_relative = 1e-10
        );
    }

    #[test]
    fn all_successes_gives_one() {
        assert_eq!(clopper_pearson_upper(5, 5, 0.99).unwrap(), 1.0);
    }

    #[test]
    fn bound_exceeds_point_estimate() {
        let ub = clopper_pearson_upper(30, 1000, 0.99).unwrap();
        assert!(ub > 0.03 && ub < 0.05, "{ub}");
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(clopper_pearson_upper(1, 0, 0.99).is_err());
        assert!(clopper_pearson_upper(3, 2, 0.99).is_err());
        assert!(clopper_pearson_upper(1, 2, 1.0).is_err());
    }

    fn coin_system() -> SystemSpec {
        let a = RandomMatrixModel::new(
            1,
            vec![RandomEntry::from_distribution(
                DistributionSpec::finite(vec![0.0, 2.0], vec![0.5, 0.5]).unwrap(),
            )
            .unwrap()],
        )
        .unwrap();
        SystemSpec::time_invariant(
            a,
            2,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            InputPolytope::unconstrained(1),
        )
        .unwrap()
    }

    #[test]
    fn coin_violation_rate() {
        // x(1) = a·1 + 0 ∈ {0, 2}; x(1) ≤ 1 fails half the time.
        let spec = coin_system();
        let rows = vec![ChanceRow {
            id: "r".into(),
            g: DVector::from_element(1, 1.0),
            h: 1.0,
            k: 1,
        }];
        let u = DVector::zeros(2);
        let cert = mc_certify(&spec, &rows, &u, 0.1, 20_000, SeedStream::new(3)).unwrap();
        assert!((cert.empirical_violation - 0.5).abs() < 0.02);
        assert!(!cert.certified);
        let again = mc_certify(&spec, &rows, &u, 0.1, 20_000, SeedStream::new(3)).unwrap();
        assert_eq!(cert, again);
    }
}
