//! Calibration entry points and the solution verifier.

mod deterministic;
mod exponential;
mod negbin;
mod verify;

pub use deterministic::solve_deterministic;
pub use exponential::solve_exponential;
pub use negbin::{apply_a_eps, fixed_point_residual, h_iterate, project_eps, solve_negbinomial, FixedPointState};
pub use verify::{verify_solution, McCheck, VerificationReport};

use serde::{Deserialize, Serialize};

use crate::atomize::{string_measure, StringMeasureTable};
use crate::chain::{expm_marginal, resolvent_from_rates, IntensityMatrix, MixtureState};
use crate::coords::{build_kappa, CoordinateMap, DEFAULT_ANCHOR_QUANTILE};
use crate::error::{Error, Result};
use crate::model::{Instance, LawKind, Rates};

pub const LAMBDA_FLOOR: f64 = 1e-12;
pub const LAMBDA_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixedPointMethod {
    /// Newton on the chain-marginal equations, continued over doubling `r`.
    Newton,
    /// Damped Picard iteration on the regularized fixed-point map.
    Picard { damping: f64, anderson: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub anchor_quantile: f64,
    pub exp_tol: f64,
    pub fixed_point_tol: f64,
    pub det_tol: f64,
    pub newton_tol: f64,
    pub r_max: u32,
    pub method: FixedPointMethod,
    pub eps_floor: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            anchor_quantile: DEFAULT_ANCHOR_QUANTILE,
            exp_tol: 1e-10,
            fixed_point_tol: 1e-8,
            det_tol: 1e-6,
            newton_tol: 1e-13,
            r_max: 32,
            method: FixedPointMethod::Newton,
            eps_floor: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub method: String,
    /// Sup-norm deviation of the oracle marginal from `(alpha p, 1 - alpha)`.
    pub residual: f64,
    /// `sup |lambda - A(lambda)|` for staged laws.
    pub fixed_point_residual: Option<f64>,
    /// Relative residual of the `G` equations, exponential laws only.
    pub g_residual: Option<f64>,
    pub iterations: usize,
    pub r_used: Option<u32>,
    pub eps_floor: Option<f64>,
    /// Lower bound on `alpha` implied by the law, when one applies.
    pub alpha_bound: Option<f64>,
    /// Largest admissible discrete step for the solved intensities.
    pub step_bound: f64,
    pub converged: bool,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    /// Holding intensities for every state; the endpoint entries are zero.
    pub lambda: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// One-based split index: the chain starts at state `l` with
    /// probability `beta` and at `l - 1` otherwise.
    pub l: usize,
    /// Starting point in drift-free coordinates.
    pub x0: f64,
    /// Starting point in the original coordinates.
    pub x0_original: f64,
    pub kappa: Vec<f64>,
    pub string_measure: StringMeasureTable,
    pub diagnostics: Diagnostics,
}

impl Solution {
    pub fn start(&self) -> MixtureState {
        MixtureState::split(self.lambda.len(), self.l - 1, self.beta)
    }
}

/// Validated instance with its rates and drift-free coordinates.
#[derive(Debug, Clone)]
pub struct Problem {
    pub inst: Instance,
    pub rates: Rates,
    pub map: CoordinateMap,
}

impl Problem {
    pub fn new(inst: &Instance, anchor_quantile: f64) -> Result<Self> {
        inst.ensure_valid()?;
        let rates = inst.rates()?;
        let map = build_kappa(&inst.grid, &inst.drift, &inst.pmf, anchor_quantile)?;
        Ok(Self { inst: inst.clone(), rates, map })
    }

    pub fn m(&self) -> usize {
        self.rates.len()
    }

    pub fn p(&self) -> &[f64] {
        self.inst.pmf.probs()
    }

    pub fn kappa(&self) -> &[f64] {
        &self.map.kappa
    }

    /// Zero-based upper state and weight of the split containing `x0`.
    pub fn bracket(&self, x0: f64) -> Option<(usize, f64)> {
        let k = self.kappa();
        let m = k.len();
        if !(x0 > k[0] && x0 <= k[m - 1]) {
            return None;
        }
        let upper = k.partition_point(|&v| v < x0);
        Some((upper, (x0 - k[upper - 1]) / (k[upper] - k[upper - 1])))
    }

    pub fn start(&self, x0: f64) -> Option<MixtureState> {
        self.bracket(x0).map(|(u, b)| MixtureState::split(self.m(), u, b))
    }

    /// Law at a Gamma time with `r` stages of mean `s`.
    pub fn gamma_marginal(&self, lambda: &[f64], x0: f64, s: f64, r: u32) -> Option<MixtureState> {
        let start = self.start(x0)?;
        let n = resolvent_from_rates(&self.rates, lambda, s).ok()?;
        let mut v = start.0;
        for _ in 0..r {
            v = n.solve_left(&v);
        }
        v.iter().all(|x| x.is_finite()).then_some(MixtureState(v))
    }

    pub fn fixed_time_marginal(&self, lambda: &[f64], x0: f64, t: f64) -> Option<MixtureState> {
        let start = self.start(x0)?;
        let theta = IntensityMatrix::from_rates(&self.rates, lambda).ok()?;
        Some(expm_marginal(&theta, &start, t))
    }

    /// Full intensity vector from log-intensities at interior states.
    pub fn lambda_from_logs(&self, logs: &[f64]) -> Option<Vec<f64>> {
        let mut lam = vec![0.0; self.m()];
        for (k, &v) in logs.iter().enumerate() {
            let l = v.exp();
            if !l.is_finite() || l > 10.0 * LAMBDA_CAP {
                return None;
            }
            lam[k + 1] = l;
        }
        Some(lam)
    }

    /// Relative marginal mismatch `m_j / (alpha p_j) - 1` for `j < M`.
    pub fn relative_mismatch(&self, marg: &MixtureState) -> Option<Vec<f64>> {
        let m = self.m();
        let alpha = 1.0 - marg.0[m];
        if !(alpha > 0.0) {
            return None;
        }
        Some((0..m - 1).map(|k| marg.0[k] / (alpha * self.p()[k]) - 1.0).collect())
    }

    pub fn target(&self, alpha: f64) -> Vec<f64> {
        let mut v: Vec<f64> = self.p().iter().map(|p| alpha * p).collect();
        v.push(1.0 - alpha);
        v
    }

    /// Sup deviation of `marg` from `(alpha p, 1 - alpha)`, with
    /// `alpha = 1 - cemetery mass`.
    pub fn marginal_residual(&self, marg: &MixtureState) -> f64 {
        let alpha = 1.0 - marg.cemetery();
        marg.sup_distance(&self.target(alpha))
    }

    pub(crate) fn finish(
        &self,
        lambda: Vec<f64>,
        alpha: f64,
        x0: f64,
        diagnostics: Diagnostics,
    ) -> Result<Solution> {
        let (upper, beta) = self.bracket(x0).ok_or(Error::NoBracket)?;
        for k in 1..self.m() - 1 {
            let l = lambda[k];
            if !(LAMBDA_FLOOR..=LAMBDA_CAP).contains(&l) {
                return Err(Error::NonConvergence {
                    reason: format!("intensity at state {} left [{LAMBDA_FLOOR:e}, {LAMBDA_CAP:e}]: {l}", k + 1),
                    trace: diagnostics.trace.clone(),
                });
            }
        }
        let x = self.inst.grid.states();
        let x0_original = x[upper - 1] + beta * (x[upper] - x[upper - 1]);
        let table = string_measure(&self.inst, &lambda)?;
        let step_bound = crate::chain::step_bound(&self.rates, &lambda);
        Ok(Solution {
            lambda,
            alpha,
            beta,
            l: upper + 1,
            x0,
            x0_original,
            kappa: self.map.kappa.clone(),
            string_measure: table,
            diagnostics: Diagnostics { step_bound, ..diagnostics },
        })
    }
}

/// Largest `lambda_j k~_j`.
pub fn max_kill_rate(rates: &Rates, lambda: &[f64]) -> f64 {
    lambda.iter().zip(&rates.kt).map(|(l, k)| l * k).fold(0.0, f64::max)
}

/// Solves `inst` with the method matching its stopping-time law.
pub fn solve(inst: &Instance, cfg: &SolverConfig) -> Result<Solution> {
    match inst.law.kind {
        LawKind::Geometric { .. } | LawKind::Exponential => solve_exponential(inst, cfg),
        LawKind::NegBinomial { r, .. } | LawKind::Gamma { r } => solve_negbinomial(inst, r, cfg),
        LawKind::Deterministic => solve_deterministic(inst, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeLaw;

    #[test]
    fn bracket_is_half_open() {
        let inst = Instance::new(vec![0.0, 1.0, 2.0], vec![0.25, 0.5, 0.25], vec![0.0], vec![0.0], TimeLaw::exponential(1.0));
        let pb = Problem::new(&inst, 0.25).unwrap();
        assert_eq!(pb.bracket(0.0), Some((1, 1.0)));
        assert_eq!(pb.bracket(-0.5), Some((1, 0.5)));
        assert_eq!(pb.bracket(-1.0), None);
        assert_eq!(pb.bracket(1.0), Some((2, 1.0)));
    }
}
