use super::{Diagnostics, Problem, Solution, SolverConfig};
use crate::chain::resolvent_from_rates;
use crate::error::{Error, Result};
use crate::gfun::solve_g;
use crate::model::{Instance, LawKind};

/// Closed-form calibration for geometric and exponential times:
/// `lambda = G(t, p)` and `alpha = 1 / (1 + t sum p_j lambda_j k~_j)`.
pub fn solve_exponential(inst: &Instance, cfg: &SolverConfig) -> Result<Solution> {
    if !matches!(inst.law.kind, LawKind::Exponential | LawKind::Geometric { .. }) {
        return Err(Error::Law("exponential solver needs a geometric or exponential law".into()));
    }
    let pb = Problem::new(inst, cfg.anchor_quantile)?;
    solve_exponential_problem(&pb, inst.law.t, cfg)
}

pub(crate) fn solve_exponential_problem(pb: &Problem, t: f64, cfg: &SolverConfig) -> Result<Solution> {
    let g = solve_g(pb.kappa(), pb.p(), &pb.rates.kt, t)?;
    let lambda = g.g.clone();
    let killed: f64 = (0..pb.m()).map(|k| pb.p()[k] * lambda[k] * pb.rates.kt[k]).sum();
    let alpha = 1.0 / (1.0 + t * killed);

    let start = pb.start(g.x0).ok_or(Error::NoBracket)?;
    let n = resolvent_from_rates(&pb.rates, &lambda, t)?;
    let lhs = n.bands.left_mul(&pb.target(alpha));
    let residual = start.sup_distance(&lhs);
    if !(residual < cfg.exp_tol) {
        return Err(Error::Residual { what: "exponential marginal equation", residual, tol: cfg.exp_tol });
    }
    let diagnostics = Diagnostics {
        method: "closed_form".into(),
        residual,
        g_residual: Some(g.residual),
        iterations: 1,
        r_used: Some(1),
        converged: true,
        ..Default::default()
    };
    pb.finish(lambda, alpha, g.x0, diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeLaw;

    fn ex(kill: f64) -> Instance {
        Instance::new(vec![0.0, 1.0, 2.0], vec![0.25, 0.5, 0.25], vec![0.0], vec![kill], TimeLaw::exponential(1.0))
    }

    #[test]
    fn ex_a_solution() {
        let s = solve_exponential(&ex(0.0), &SolverConfig::default()).unwrap();
        assert_eq!(s.lambda, vec![0.0, 1.0, 0.0]);
        assert_eq!((s.alpha, s.beta, s.x0, s.l), (1.0, 1.0, 0.0, 2));
        assert_eq!(s.x0_original, 1.0);
        assert_eq!(s.diagnostics.residual, 0.0);
    }

    #[test]
    fn ex_b_solution() {
        let s = solve_exponential(&ex(1.0), &SolverConfig::default()).unwrap();
        assert!((s.lambda[1] - 1.0).abs() < 1e-15);
        assert!((s.alpha - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!((s.beta, s.x0), (1.0, 0.0));
    }

    #[test]
    fn geometric_law_uses_the_same_calibration() {
        let i = ex(1.0).with_law(TimeLaw { t: 1.0, kind: LawKind::Geometric { h: 0.1 } });
        let s = solve_exponential(&i, &SolverConfig::default()).unwrap();
        assert!((s.alpha - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.diagnostics.step_bound, 0.5);
    }

    #[test]
    fn no_drift_no_killing_starts_at_the_mean() {
        let i = Instance::new(
            vec![0.0, 0.5, 2.0, 2.5, 4.0],
            vec![0.1, 0.3, 0.2, 0.3, 0.1],
            vec![0.0; 3],
            vec![0.0; 3],
            TimeLaw::exponential(2.0),
        );
        let s = solve_exponential(&i, &SolverConfig::default()).unwrap();
        assert_eq!(s.alpha, 1.0);
        let mean: f64 = s.kappa.iter().zip(i.pmf.probs()).map(|(k, p)| k * p).sum();
        assert!((s.x0 - mean).abs() < 1e-14);
    }

    #[test]
    fn wrong_law_is_rejected() {
        let i = ex(0.0).with_law(TimeLaw::deterministic(1.0));
        assert!(matches!(solve_exponential(&i, &SolverConfig::default()), Err(Error::Law(_))));
    }
}
