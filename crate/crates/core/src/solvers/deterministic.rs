use super::negbin::{split_theta, Ladder};
use super::{max_kill_rate, Diagnostics, Problem, Solution, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{Instance, LawKind};
use crate::numerics::{newton, NewtonOptions};

const POLISH_TOL: f64 = 1e-11;
/// Smallest stage count at which the fixed-time polish is attempted.
const POLISH_FROM: u32 = 8;

fn fixed_time_equations(pb: &Problem, th: &[f64], t: f64) -> Option<Vec<f64>> {
    let (lam, x0) = split_theta(pb, th)?;
    let marg = pb.fixed_time_marginal(&lam, x0, t)?;
    pb.relative_mismatch(&marg)
}

fn fixed_time_residual(pb: &Problem, th: &[f64], t: f64) -> f64 {
    split_theta(pb, th)
        .and_then(|(lam, x0)| pb.fixed_time_marginal(&lam, x0, t))
        .map(|m| pb.marginal_residual(&m))
        .unwrap_or(f64::INFINITY)
}

/// Calibration at a fixed horizon: Gamma-time solutions with doubling stage
/// counts approach the fixed-time answer, and Newton on the fixed-time
/// marginal equations removes the remaining bias.
///
/// If no rung up to `r_max` polishes successfully, the best iterate is
/// returned with `diagnostics.converged = false`.
pub fn solve_deterministic(inst: &Instance, cfg: &SolverConfig) -> Result<Solution> {
    if !matches!(inst.law.kind, LawKind::Deterministic) {
        return Err(Error::Law("deterministic solver needs a deterministic law".into()));
    }
    let pb = Problem::new(inst, cfg.anchor_quantile)?;
    let t = inst.law.t;
    let mut ladder = Ladder::start(&pb, t, cfg)?;
    let mut best = (fixed_time_residual(&pb, &ladder.theta, t), ladder.theta.clone(), 1);
    let mut det_trace = vec![best.0];
    let mut polished = None;
    let mut r = 1;
    while r < cfg.r_max.max(2) {
        r = (r * 2).min(cfg.r_max.max(2));
        if ladder.advance(&pb, t, r, cfg).is_err() {
            match Ladder::killing_homotopy(&pb, t, r, cfg) {
                Ok(fresh) => ladder = fresh,
                Err(_) => break,
            }
        }
        let res = fixed_time_residual(&pb, &ladder.theta, t);
        det_trace.push(res);
        if res < best.0 {
            best = (res, ladder.theta.clone(), r);
        }
        if r >= POLISH_FROM || r == cfg.r_max || res < cfg.det_tol {
            let opts = NewtonOptions { tol: POLISH_TOL, ..Default::default() };
            let out = newton(|th| fixed_time_equations(&pb, th, t), ladder.theta.clone(), &opts);
            ladder.iterations += out.iterations;
            let res = fixed_time_residual(&pb, &out.x, t);
            det_trace.push(res);
            if res < best.0 {
                best = (res, out.x.clone(), r);
            }
            if res < cfg.det_tol {
                polished = Some((out.x, res));
                break;
            }
        }
    }
    let converged = polished.is_some();
    let (theta, residual) = polished.unwrap_or((best.1.clone(), best.0));
    let (lambda, x0) = split_theta(&pb, &theta).ok_or(Error::NoBracket)?;
    let marg = pb.fixed_time_marginal(&lambda, x0, t).ok_or(Error::NoBracket)?;
    let alpha = 1.0 - marg.cemetery();
    let bound = (-t * max_kill_rate(&pb.rates, &lambda)).exp();
    if converged && alpha < bound * (1.0 - 1e-12) {
        return Err(Error::Residual { what: "survival lower bound", residual: bound - alpha, tol: 0.0 });
    }
    let diag = Diagnostics {
        method: "r_continuation_polish".into(),
        residual,
        iterations: ladder.iterations,
        r_used: Some(ladder.r),
        alpha_bound: Some(bound),
        converged,
        trace: det_trace,
        ..Default::default()
    };
    pb.finish(lambda, alpha, x0, diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeLaw;

    fn ex(kill: f64) -> Instance {
        Instance::new(vec![0.0, 1.0, 2.0], vec![0.25, 0.5, 0.25], vec![0.0], vec![kill], TimeLaw::deterministic(1.0))
    }

    #[test]
    fn ex_a_fixed_time() {
        let s = solve_deterministic(&ex(0.0), &SolverConfig::default()).unwrap();
        assert!(s.diagnostics.converged);
        assert_eq!(s.alpha, 1.0);
        assert!(s.diagnostics.residual < 1e-6);
        // Half the mass leaves the middle state by time one.
        assert!((s.lambda[1] - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn ex_b_fixed_time_bound() {
        let s = solve_deterministic(&ex(1.0), &SolverConfig::default()).unwrap();
        assert!(s.diagnostics.converged);
        assert!(s.alpha >= (-s.lambda[1]).exp());
    }
}
