use serde::{Deserialize, Serialize};

use super::Solution;
use crate::chain::{expm_marginal, resolvent_from_rates, resolvent_inverse_power, simulate, IntensityMatrix};
use crate::error::{Error, Result};
use crate::model::{Instance, LawKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McCheck {
    pub paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub paths: usize,
    pub seed: u64,
    pub marginal: Vec<f64>,
    pub tv_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub oracle: String,
    pub marginal: Vec<f64>,
    pub target: Vec<f64>,
    /// Sup deviation of the oracle marginal from `(alpha p, 1 - alpha)`.
    pub deviation: f64,
    /// `sup |p^ N_t - v^|` for single-stage laws.
    pub forward_residual: Option<f64>,
    pub monte_carlo: Option<McReport>,
    pub tol: f64,
    pub passed: bool,
}

/// Recomputes the law at the stopping time from the solution's intensities
/// and starting split, independently of the solver.
pub fn verify_solution(inst: &Instance, sol: &Solution, mc: Option<McCheck>, tol: f64) -> Result<VerificationReport> {
    inst.ensure_valid()?;
    let m = inst.m();
    if sol.lambda.len() != m || !(2..=m).contains(&sol.l) {
        return Err(Error::Spec(format!("solution does not match an instance with {m} states")));
    }
    let rates = inst.rates()?;
    let start = sol.start();
    let mut target: Vec<f64> = inst.pmf.probs().iter().map(|p| sol.alpha * p).collect();
    target.push(1.0 - sol.alpha);
    let t = inst.law.t;
    let (oracle, marginal, forward) = match inst.law.kind {
        LawKind::Exponential | LawKind::Geometric { .. } => {
            let n = resolvent_from_rates(&rates, &sol.lambda, t)?;
            let fwd = start.sup_distance(&n.bands.left_mul(&target));
            ("resolvent_solve", resolvent_inverse_power(&n, &start, 1)?, Some(fwd))
        }
        LawKind::NegBinomial { r, .. } | LawKind::Gamma { r } => {
            let n = resolvent_from_rates(&rates, &sol.lambda, t / r as f64)?;
            ("resolvent_power", resolvent_inverse_power(&n, &start, r)?, None)
        }
        LawKind::Deterministic => {
            let theta = IntensityMatrix::from_rates(&rates, &sol.lambda)?;
            ("uniformization", expm_marginal(&theta, &start, t), None)
        }
    };
    let deviation = marginal.sup_distance(&target);
    let monte_carlo = match mc {
        Some(c) => {
            let emp = simulate(inst, &sol.lambda, &start, c.paths, c.seed)?;
            let tv = emp.tv_distance(&target);
            Some(McReport { paths: c.paths, seed: c.seed, marginal: emp.0, tv_distance: tv })
        }
        None => None,
    };
    Ok(VerificationReport {
        oracle: oracle.into(),
        marginal: marginal.0,
        target,
        deviation,
        forward_residual: forward,
        monte_carlo,
        tol,
        passed: deviation < tol,
    })
}
