//! From a continuous target `(mu, b, k)` to discrete instances on quantile
//! grids, plus hypothesis checks, string measures and refinement sweeps.

mod field;
mod hypothesis;
mod measure;
mod string;
mod sweep;

pub use field::{Ends, FieldAtom, FieldTable, Piece};
pub use hypothesis::{c_gamma, hypothesis_check, FReading, HypothesisReport, IntegralCheck, TailProbe};
pub use measure::{Component, Interval, Mixture, Primitive};
pub use string::{string_measure, StringMeasureEntry, StringMeasureTable};
pub use sweep::{refinement_sweep, Discrepancy, SweepLevel, SweepReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DriftVector, Instance, KillingVector, TimeLaw};

/// Slack when comparing cumulative masses against quantile levels.
const LEVEL_TOL: f64 = 1e-12;
/// Finest level tried when looking for the smallest usable `N`.
const MAX_LEVEL: u32 = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSpec {
    pub measure: Mixture,
    #[serde(default)]
    pub drift: FieldTable,
    #[serde(default)]
    pub killing: FieldTable,
    #[serde(flatten)]
    pub law: TimeLaw,
}

impl ContinuousSpec {
    pub fn validate(&self) -> Result<()> {
        self.measure.validate()?;
        self.drift.validate("drift", false, &self.measure)?;
        self.killing.validate("killing", true, &self.measure)?;
        if !(self.law.t > 0.0 && self.law.t.is_finite()) {
            return Err(Error::Spec(format!("horizon t must be positive, got {}", self.law.t)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomizedInstance {
    pub level: u32,
    pub instance: Instance,
    /// `1 - mu((-inf, i_M])`, the last-bin mass before it absorbs the tail
    /// beyond `i_{M-1}`.
    pub literal_last_bin: f64,
}

/// The smallest atom in `(prev, x)` whose cumulative mass already reaches `u`
/// up to rounding, else `x`.
fn snap(mu: &Mixture, x: f64, u: f64, prev: Option<f64>) -> f64 {
    mu.atoms()
        .into_iter()
        .filter(|&a| a < x && prev.map_or(true, |p| a > p) && mu.cdf(a) >= u - LEVEL_TOL)
        .fold(x, f64::min)
}

/// Successive `2^-N` quantile thresholds and the masses between them.
///
/// A tail of exactly `2^-N` closes the grid at the top of the support when it
/// is finite. The last atom takes all mass beyond `i_{M-1}`.
pub fn quantile_grid(mu: &Mixture, n: u32) -> (Vec<f64>, Vec<f64>) {
    let q = 0.5f64.powi(n as i32);
    let mut grid = Vec::new();
    let mut x = snap(mu, mu.quantile(q), q, None);
    loop {
        grid.push(x);
        let tail = mu.sf(x);
        if tail < q - LEVEL_TOL {
            break;
        }
        if tail <= q + LEVEL_TOL {
            let top = mu.hull().1;
            if top.is_finite() && top > x {
                grid.push(top);
            }
            break;
        }
        let u = mu.cdf(x) + q;
        let next = snap(mu, mu.quantile(u), u, Some(x));
        if !(next > x) {
            break;
        }
        x = next;
    }
    let m = grid.len();
    let mut pmf = Vec::with_capacity(m);
    let mut prev = 0.0;
    for &x in &grid[..m - 1] {
        let f = mu.cdf(x);
        pmf.push(f - prev);
        prev = f;
    }
    pmf.push(if m > 1 { mu.sf(grid[m - 2]) } else { 1.0 });
    (grid, pmf)
}

/// Drift averaged over `(i_{j-1}, i_{j+1})` and killing over `[i_j, i_{j+1})`,
/// both restricted to the support of `mu`.
pub fn discretize_fields(spec: &ContinuousSpec, grid: &[f64]) -> (DriftVector, KillingVector) {
    let mu = &spec.measure;
    let m = grid.len();
    let mut b = Vec::with_capacity(m.saturating_sub(2));
    let mut k = Vec::with_capacity(m.saturating_sub(2));
    for j in 1..m.saturating_sub(1) {
        let (l, c, r) = (grid[j - 1], grid[j], grid[j + 1]);
        b.push(spec.drift.integral(l, r, Ends::Open, false, mu) / (r - l));
        k.push(spec.killing.integral(c, r, Ends::ClosedOpen, false, mu) / (r - c));
    }
    (DriftVector(b), KillingVector(k))
}

pub fn atomize(spec: &ContinuousSpec, n: u32) -> Result<AtomizedInstance> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Spec("refinement level N must be at least 1".into()));
    }
    let (grid, pmf) = quantile_grid(&spec.measure, n);
    if grid.len() < 3 {
        let min_n = (n + 1..=MAX_LEVEL).find(|&k| quantile_grid(&spec.measure, k).0.len() >= 3);
        return Err(match min_n {
            Some(min_n) => Error::TooFewAtoms { n, atoms: grid.len(), min_n },
            None => Error::Spec("measure has fewer than three support points".into()),
        });
    }
    let literal_last_bin = spec.measure.sf(grid[grid.len() - 1]);
    let (drift, killing) = discretize_fields(spec, &grid);
    let instance = Instance::new(grid, pmf, drift.0, killing.0, spec.law.clone());
    instance.ensure_valid()?;
    Ok(AtomizedInstance { level: n, instance, literal_last_bin })
}
