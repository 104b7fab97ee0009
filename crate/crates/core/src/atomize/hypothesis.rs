//! Numerical checks of the standing assumptions on `(mu, b, k)`.

use serde::{Deserialize, Serialize};

use super::field::Ends;
use super::ContinuousSpec;

/// Tail masses `2^-k` at which unbounded supports are truncated or probed.
const TAIL_LEVELS: [i32; 5] = [10, 20, 30, 40, 50];
/// Relative change between the two widest windows accepted as convergence.
const WINDOW_TOL: f64 = 1e-6;
/// Largest outermost value of `dK/dmu` accepted as tending to zero.
const TAIL_TOL: f64 = 1e-6;
const CELLS_PER_SEGMENT: usize = 32;

const GL_X: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GL_W: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];

/// How the supremum over partitions in the exponent is read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FReading {
    /// Taken literally the supremum sits at the trivial partition and equals
    /// the square of the whole integral.
    #[default]
    Literal,
    /// Sum of squared atoms of the drift, the limit over fine partitions.
    Atoms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralCheck {
    /// Value on each truncation window, innermost first.
    pub windows: Vec<f64>,
    pub finite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailProbe {
    pub x: f64,
    /// `dK/dmu` at `x`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    /// Drift and killing atoms must sit on atoms of `mu`.
    pub absolutely_continuous: bool,
    pub stray_atoms: Vec<f64>,
    /// Largest drift mass seen from any point across the adjacent support gap.
    pub neighborhood_mass: f64,
    pub neighborhood_ok: bool,
    pub gamma: Option<f64>,
    pub c_gamma: Option<f64>,
    pub f_reading: FReading,
    pub integral_literal: Option<IntegralCheck>,
    pub integral_atoms: Option<IntegralCheck>,
    pub integral_ok: bool,
    pub tail_probes: Vec<TailProbe>,
    pub tail_ok: bool,
    pub passed: bool,
}

impl HypothesisReport {
    pub fn failures(&self) -> Vec<&'static str> {
        let mut v = vec![];
        if !self.absolutely_continuous {
            v.push("field atoms off the atoms of mu");
        }
        if !self.neighborhood_ok {
            v.push("drift neighborhood mass not below 1");
        }
        if !self.integral_ok {
            v.push("exponential moment integral diverges");
        }
        if !self.tail_ok {
            v.push("killing density does not vanish in the tails");
        }
        v
    }
}

/// `c(x) = (ln(1/x) - (1 - x)) / (1 - x)^2`, decreasing from `+inf` to `1/2`.
pub fn c_gamma(x: f64) -> f64 {
    let y = 1.0 - x;
    if y.abs() < 1e-3 {
        return (2..14).rev().fold(0.0, |acc, n| acc * y + 1.0 / n as f64);
    }
    ((1.0 / x).ln() - y) / (y * y)
}

fn neighborhood_mass(spec: &ContinuousSpec) -> f64 {
    let mu = &spec.measure;
    let atom = |x: f64| spec.drift.atom(x, mu).abs();
    let s = mu.support();
    let mut best: f64 = 0.0;
    for a in &spec.drift.atoms {
        best = best.max(atom(a.at));
    }
    for k in 0..s.len() {
        let left = k.checked_sub(1).map_or(0.0, |p| atom(s[p].hi));
        let right = s.get(k + 1).map_or(0.0, |n| atom(n.lo));
        if s[k].is_point() {
            best = best.max(left + atom(s[k].lo) + right);
        }
        if k + 1 < s.len() {
            best = best.max(atom(s[k].hi) + right);
        }
    }
    best
}

fn exponent_integral(spec: &ContinuousSpec, c: f64, reading: FReading, lo: f64, hi: f64) -> f64 {
    let mu = &spec.measure;
    let integrand = |y: f64| {
        let (a, b) = if y >= 0.0 { (0.0, y) } else { (y, 0.0) };
        let mass = if y >= 0.0 { mu.sf(y) } else { mu.cdf(y) };
        if mass == 0.0 {
            return 0.0;
        }
        let whole = spec.drift.integral(a, b, Ends::Closed, true, mu);
        let squares = match reading {
            FReading::Literal => whole * whole,
            FReading::Atoms => spec.drift.atom_square_sum(a, b, mu),
        };
        (2.0 * (whole + c * squares)).exp() * mass
    };
    let mut cuts: Vec<f64> = [lo, 0.0, hi]
        .into_iter()
        .chain(mu.breakpoints())
        .chain(spec.drift.breakpoints())
        .filter(|&x| lo <= x && x <= hi)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let h = (w[1] - w[0]) / CELLS_PER_SEGMENT as f64;
        for cell in 0..CELLS_PER_SEGMENT {
            let mid = w[0] + (cell as f64 + 0.5) * h;
            for (x, wt) in GL_X.iter().zip(GL_W) {
                total += 0.5 * h * wt * (integrand(mid - 0.5 * h * x) + integrand(mid + 0.5 * h * x));
            }
        }
    }
    total
}

fn tail_windows(spec: &ContinuousSpec) -> Vec<(f64, f64)> {
    let mu = &spec.measure;
    let (zl, zh) = mu.hull();
    if zl.is_finite() && zh.is_finite() {
        return vec![(zl.min(0.0), zh.max(0.0))];
    }
    TAIL_LEVELS
        .iter()
        .map(|&k| {
            let tail = 0.5f64.powi(k);
            let lo = if zl.is_finite() { zl } else { mu.quantile(tail) };
            let hi = if zh.is_finite() { zh } else { mu.upper_quantile(tail) };
            (lo.min(0.0), hi.max(0.0))
        })
        .collect()
}

fn integral_check(spec: &ContinuousSpec, c: f64, reading: FReading) -> IntegralCheck {
    let windows: Vec<f64> =
        tail_windows(spec).into_iter().map(|(lo, hi)| exponent_integral(spec, c, reading, lo, hi)).collect();
    let n = windows.len();
    let settled = n < 2 || (windows[n - 1] - windows[n - 2]).abs() <= WINDOW_TOL * windows[n - 1].abs();
    let finite = windows.iter().all(|v| v.is_finite()) && settled;
    IntegralCheck { windows, finite }
}

/// Radon-Nikodym derivative of the killing measure against `mu` at `x`.
fn killing_ratio(spec: &ContinuousSpec, x: f64) -> f64 {
    let mu = &spec.measure;
    let atom = mu.atom(x);
    if atom > 0.0 {
        return spec.killing.atom(x, mu) / atom;
    }
    let k = spec.killing.density(x, mu);
    if k == 0.0 {
        0.0
    } else {
        k / mu.density(x)
    }
}

fn tail_probes(spec: &ContinuousSpec) -> (Vec<TailProbe>, bool) {
    let mu = &spec.measure;
    let (zl, zh) = mu.hull();
    let mut probes = vec![];
    let mut ok = true;
    for (unbounded, upper) in [(zl.is_infinite(), false), (zh.is_infinite(), true)] {
        if !unbounded {
            continue;
        }
        let side: Vec<TailProbe> = TAIL_LEVELS[..4]
            .iter()
            .map(|&k| {
                let tail = 0.5f64.powi(k);
                let x = if upper { mu.upper_quantile(tail) } else { mu.quantile(tail) };
                TailProbe { x, value: killing_ratio(spec, x) }
            })
            .collect();
        let n = side.len();
        let (last, prev) = (side[n - 1].value.abs(), side[n - 2].value.abs());
        ok &= last <= TAIL_TOL && last <= prev;
        probes.extend(side);
    }
    (probes, ok)
}

/// Evaluates each assumption on `(mu, b, k)` numerically. Never fails; the
/// verdict is in the report.
pub fn hypothesis_check(spec: &ContinuousSpec, reading: FReading) -> HypothesisReport {
    let mu = &spec.measure;
    let mut stray_atoms: Vec<f64> = spec
        .drift
        .atoms
        .iter()
        .chain(&spec.killing.atoms)
        .map(|a| a.at)
        .filter(|&x| mu.in_support(x) && mu.atom(x) == 0.0)
        .collect();
    stray_atoms.sort_by(f64::total_cmp);
    stray_atoms.dedup();

    let mass = neighborhood_mass(spec);
    let neighborhood_ok = mass < 1.0;
    let gamma = neighborhood_ok.then(|| 0.5 * (1.0 - mass));
    let c = gamma.map(c_gamma);
    let integral_literal = c.map(|c| integral_check(spec, c, FReading::Literal));
    let integral_atoms = c.map(|c| integral_check(spec, c, FReading::Atoms));
    let chosen = match reading {
        FReading::Literal => &integral_literal,
        FReading::Atoms => &integral_atoms,
    };
    let integral_ok = chosen.as_ref().is_some_and(|i| i.finite);
    let (tail_probes, tail_ok) = tail_probes(spec);
    let absolutely_continuous = stray_atoms.is_empty();
    HypothesisReport {
        absolutely_continuous,
        stray_atoms,
        neighborhood_mass: mass,
        neighborhood_ok,
        gamma,
        c_gamma: c,
        f_reading: reading,
        integral_literal,
        integral_atoms,
        integral_ok,
        tail_probes,
        tail_ok,
        passed: absolutely_continuous && neighborhood_ok && integral_ok && tail_ok,
    }
}
