//! Solving a continuous target at successive refinement levels and measuring
//! how the string measures settle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{atomize, hypothesis_check, FReading, HypothesisReport, StringMeasureTable};
use super::ContinuousSpec;
use crate::error::{Error, Result};
use crate::solvers::{solve, SolverConfig};

/// Quantiles bounding the interior window where string measures are compared.
const WINDOW: (f64, f64) = (0.2, 0.8);
const PROBES: usize = 51;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepLevel {
    pub level: u32,
    pub states: usize,
    pub alpha: f64,
    pub residual: f64,
    pub converged: bool,
    /// `sum_j |kappa_j| p_j`.
    pub kappa_abs_moment: f64,
    pub x0_original: f64,
    pub lambda: Vec<f64>,
    pub string_measure: StringMeasureTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub coarse: u32,
    pub fine: u32,
    /// `sup |m^N([a, b]) - m^{N+1}([a, b])|` over probe intervals.
    pub sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub hypothesis: HypothesisReport,
    pub window: (f64, f64),
    pub levels: Vec<SweepLevel>,
    pub discrepancies: Vec<Discrepancy>,
    /// Whether successive discrepancies strictly decrease.
    pub decreasing: bool,
}

/// Mass of the finite atoms in `[a, b]`.
fn mass_between(atoms: &[(f64, f64)], prefix: &[f64], a: f64, b: f64) -> f64 {
    let i = atoms.partition_point(|e| e.0 < a);
    let j = atoms.partition_point(|e| e.0 <= b);
    if j > i {
        prefix[j] - prefix[i]
    } else {
        0.0
    }
}

fn discrepancy(x: &StringMeasureTable, y: &StringMeasureTable, probes: &[f64]) -> f64 {
    let prep = |t: &StringMeasureTable| {
        let atoms = t.atoms();
        let mut prefix = vec![0.0];
        for (_, m) in &atoms {
            prefix.push(prefix[prefix.len() - 1] + m);
        }
        (atoms, prefix)
    };
    let (xa, xp) = prep(x);
    let (ya, yp) = prep(y);
    let mut sup: f64 = 0.0;
    for (i, &a) in probes.iter().enumerate() {
        for &b in &probes[i + 1..] {
            sup = sup.max((mass_between(&xa, &xp, a, b) - mass_between(&ya, &yp, a, b)).abs());
        }
    }
    sup
}

/// Solves at every level in `n_lo..=n_hi` after checking the hypotheses.
///
/// The comparison window lies between the `0.2` and `0.8` quantiles of `mu`,
/// shrunk so that no level has an endpoint atom inside it.
pub fn refinement_sweep(
    spec: &ContinuousSpec,
    n_lo: u32,
    n_hi: u32,
    cfg: &SolverConfig,
    reading: FReading,
) -> Result<SweepReport> {
    if n_lo < 2 || n_hi < n_lo {
        return Err(Error::Spec(format!("sweep needs 2 <= N_lo <= N_hi, got {n_lo}..{n_hi}")));
    }
    spec.validate()?;
    let hypothesis = hypothesis_check(spec, reading);
    if !hypothesis.passed {
        return Err(Error::Hypothesis(hypothesis.failures().join("; ")));
    }
    let levels: Vec<SweepLevel> = (n_lo..=n_hi)
        .into_par_iter()
        .map(|n| {
            let atomized = atomize(spec, n)?;
            let inst = &atomized.instance;
            let sol = solve(inst, cfg)?;
            let kappa_abs_moment = sol.kappa.iter().zip(inst.pmf.probs()).map(|(k, p)| k.abs() * p).sum();
            Ok(SweepLevel {
                level: n,
                states: inst.m(),
                alpha: sol.alpha,
                residual: sol.diagnostics.residual,
                converged: sol.diagnostics.converged,
                kappa_abs_moment,
                x0_original: sol.x0_original,
                lambda: sol.lambda,
                string_measure: sol.string_measure,
            })
        })
        .collect::<Result<_>>()?;

    let mu = &spec.measure;
    let first = levels.iter().map(|l| l.string_measure.entries[0].state).fold(f64::NEG_INFINITY, f64::max);
    let last = levels
        .iter()
        .map(|l| l.string_measure.entries[l.states - 1].state)
        .fold(f64::INFINITY, f64::min);
    let window = (mu.quantile(WINDOW.0).max(first), mu.quantile(WINDOW.1).min(last));
    let probes: Vec<f64> = (0..PROBES)
        .map(|i| window.0 + (window.1 - window.0) * (i + 1) as f64 / (PROBES + 1) as f64)
        .collect();
    let discrepancies: Vec<Discrepancy> = levels
        .windows(2)
        .map(|w| Discrepancy {
            coarse: w[0].level,
            fine: w[1].level,
            sup: discrepancy(&w[0].string_measure, &w[1].string_measure, &probes),
        })
        .collect();
    let decreasing = discrepancies.windows(2).all(|w| w[1].sup < w[0].sup);
    Ok(SweepReport { hypothesis, window, levels, discrepancies, decreasing })
}
