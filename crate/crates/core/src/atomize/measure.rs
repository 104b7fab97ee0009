//! Probability measures on the line built from a few primitives.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// How far out an untruncated normal is treated as having its support.
const NORMAL_REACH: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    PointMass { at: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Normal law conditioned on `[lo, hi]`; a missing bound is infinite.
    TruncNormal {
        mean: f64,
        sd: f64,
        #[serde(default)]
        lo: Option<f64>,
        #[serde(default)]
        hi: Option<f64>,
    },
    /// Piecewise-linear CDF through `(x_k, u_k)` with `u_0 = 0`, `u_n = 1`.
    Empirical { x: Vec<f64>, u: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    #[serde(flatten)]
    pub primitive: Primitive,
}

/// Closed interval `[lo, hi]`, possibly a single point or unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

struct Tn {
    n: Normal,
    a: f64,
    b: f64,
    /// `Phi(a)`, `1 - Phi(b)` and the conditioning mass.
    below: f64,
    above: f64,
    z: f64,
}

impl Tn {
    fn new(mean: f64, sd: f64, lo: Option<f64>, hi: Option<f64>) -> Option<Self> {
        let n = Normal::new(mean, sd).ok()?;
        let a = lo.unwrap_or(f64::NEG_INFINITY);
        let b = hi.unwrap_or(f64::INFINITY);
        let below = if a.is_finite() { n.cdf(a) } else { 0.0 };
        let above = if b.is_finite() { n.sf(b) } else { 0.0 };
        let z = 1.0 - below - above;
        (z > 0.0).then_some(Self { n, a, b, below, above, z })
    }

    fn cdf(&self, x: f64) -> f64 {
        if x < self.a {
            0.0
        } else if x >= self.b {
            1.0
        } else {
            ((self.n.cdf(x) - self.below) / self.z).clamp(0.0, 1.0)
        }
    }

    fn sf(&self, x: f64) -> f64 {
        if x < self.a {
            1.0
        } else if x >= self.b {
            0.0
        } else {
            ((self.n.sf(x) - self.above) / self.z).clamp(0.0, 1.0)
        }
    }

    fn pdf(&self, x: f64) -> f64 {
        if x < self.a || x > self.b {
            0.0
        } else {
            self.n.pdf(x) / self.z
        }
    }
}

impl Primitive {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Spec(m.into()));
        match self {
            Primitive::PointMass { at } if !at.is_finite() => bad("point mass location must be finite"),
            Primitive::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
                bad("uniform needs finite lo < hi")
            }
            Primitive::TruncNormal { mean, sd, lo, hi } => {
                if !(mean.is_finite() && sd.is_finite() && *sd > 0.0) {
                    return bad("normal needs a finite mean and sd > 0");
                }
                if let (Some(a), Some(b)) = (lo, hi) {
                    if !(a < b) {
                        return bad("truncation bounds need lo < hi");
                    }
                }
                if Tn::new(*mean, *sd, *lo, *hi).is_none() {
                    return bad("truncation leaves no normal mass");
                }
                Ok(())
            }
            Primitive::Empirical { x, u } => {
                if x.len() < 2 || x.len() != u.len() {
                    return bad("empirical table needs at least two matching (x, u) pairs");
                }
                if x.iter().any(|v| !v.is_finite()) || x.windows(2).any(|w| !(w[0] < w[1])) {
                    return bad("empirical x must be finite and strictly increasing");
                }
                if u[0] != 0.0 || u[u.len() - 1] != 1.0 || u.windows(2).any(|w| !(w[0] <= w[1])) {
                    return bad("empirical u must rise from 0 to 1");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn normal(&self) -> Option<Tn> {
        match *self {
            Primitive::TruncNormal { mean, sd, lo, hi } => Tn::new(mean, sd, lo, hi),
            _ => None,
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        match self {
            Primitive::PointMass { at } => f64::from(x >= *at),
            Primitive::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Primitive::TruncNormal { .. } => self.normal().map_or(0.0, |n| n.cdf(x)),
            Primitive::Empirical { x: xs, u } => {
                if x < xs[0] {
                    return 0.0;
                }
                if x >= xs[xs.len() - 1] {
                    return 1.0;
                }
                let k = xs.partition_point(|&v| v <= x);
                let (x0, x1, u0, u1) = (xs[k - 1], xs[k], u[k - 1], u[k]);
                u0 + (u1 - u0) * (x - x0) / (x1 - x0)
            }
        }
    }

    fn sf(&self, x: f64) -> f64 {
        match self {
            Primitive::TruncNormal { .. } => self.normal().map_or(0.0, |n| n.sf(x)),
            _ => 1.0 - self.cdf(x),
        }
    }

    fn density(&self, x: f64) -> f64 {
        match self {
            Primitive::PointMass { .. } => 0.0,
            Primitive::Uniform { lo, hi } => {
                if *lo <= x && x <= *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Primitive::TruncNormal { .. } => self.normal().map_or(0.0, |n| n.pdf(x)),
            Primitive::Empirical { x: xs, u } => {
                if x < xs[0] || x > xs[xs.len() - 1] {
                    return 0.0;
                }
                let k = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
                (u[k] - u[k - 1]) / (xs[k] - xs[k - 1])
            }
        }
    }

    fn support(&self) -> Vec<Interval> {
        match self {
            Primitive::PointMass { at } => vec![Interval { lo: *at, hi: *at }],
            Primitive::Uniform { lo, hi } => vec![Interval { lo: *lo, hi: *hi }],
            Primitive::TruncNormal { lo, hi, .. } => vec![Interval {
                lo: lo.unwrap_or(f64::NEG_INFINITY),
                hi: hi.unwrap_or(f64::INFINITY),
            }],
            Primitive::Empirical { x, u } => (1..x.len())
                .filter(|&k| u[k] > u[k - 1])
                .map(|k| Interval { lo: x[k - 1], hi: x[k] })
                .collect(),
        }
    }

    /// Finite points where the CDF or density changes form.
    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Primitive::PointMass { at } => vec![*at],
            Primitive::Uniform { lo, hi } => vec![*lo, *hi],
            Primitive::TruncNormal { mean, lo, hi, .. } => [Some(*mean), *lo, *hi].into_iter().flatten().collect(),
            Primitive::Empirical { x, .. } => x.clone(),
        }
    }

    /// Finite bracket holding all of the mass, for bisection.
    fn reach(&self) -> (f64, f64) {
        match self {
            Primitive::PointMass { at } => (*at, *at),
            Primitive::Uniform { lo, hi } => (*lo, *hi),
            Primitive::TruncNormal { mean, sd, lo, hi } => (
                lo.unwrap_or(mean - NORMAL_REACH * sd),
                hi.unwrap_or(mean + NORMAL_REACH * sd),
            ),
            Primitive::Empirical { x, .. } => (x[0], x[x.len() - 1]),
        }
    }
}

/// Finite mixture of primitives with weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mixture(pub Vec<Component>);

impl Mixture {
    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::Spec("measure has no components".into()));
        }
        for c in &self.0 {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::Spec(format!("component weight must be positive, got {}", c.weight)));
            }
            c.primitive.validate()?;
        }
        let total: f64 = self.0.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Spec(format!("component weights sum to {total}, not 1")));
        }
        Ok(())
    }

    /// `mu((-inf, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.0.iter().map(|c| c.weight * c.primitive.cdf(x)).sum::<f64>().min(1.0)
    }

    /// `mu((x, inf))`, accurate far into the upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        self.0.iter().map(|c| c.weight * c.primitive.sf(x)).sum::<f64>().clamp(0.0, 1.0)
    }

    /// Lebesgue density of the continuous part.
    pub fn density(&self, x: f64) -> f64 {
        self.0.iter().map(|c| c.weight * c.primitive.density(x)).sum()
    }

    /// Mass of the atom at `x`.
    pub fn atom(&self, x: f64) -> f64 {
        self.0
            .iter()
            .filter_map(|c| match c.primitive {
                Primitive::PointMass { at } if at == x => Some(c.weight),
                _ => None,
            })
            .sum()
    }

    /// Atom locations, sorted and distinct.
    pub fn atoms(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .0
            .iter()
            .filter_map(|c| match c.primitive {
                Primitive::PointMass { at } => Some(at),
                _ => None,
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// Support as sorted disjoint closed intervals.
    pub fn support(&self) -> Vec<Interval> {
        let mut parts: Vec<Interval> = self.0.iter().flat_map(|c| c.primitive.support()).collect();
        parts.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));
        let mut out: Vec<Interval> = Vec::with_capacity(parts.len());
        for p in parts {
            match out.last_mut() {
                Some(last) if p.lo <= last.hi => last.hi = last.hi.max(p.hi),
                _ => out.push(p),
            }
        }
        out
    }

    pub fn in_support(&self, x: f64) -> bool {
        self.support().iter().any(|s| s.contains(x))
    }

    /// Lower and upper end of the support; infinite when unbounded.
    pub fn hull(&self) -> (f64, f64) {
        let s = self.support();
        (s[0].lo, s[s.len() - 1].hi)
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.0.iter().flat_map(|c| c.primitive.breakpoints()).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    fn reach(&self) -> (f64, f64) {
        self.0
            .iter()
            .map(|c| c.primitive.reach())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (lo, hi)| (a.min(lo), b.max(hi)))
    }

    /// `inf {x : mu((-inf, x]) >= u}` by bisection to adjacent floats.
    pub fn quantile(&self, u: f64) -> f64 {
        let (lo, hi) = self.reach();
        if u <= 0.0 {
            return lo;
        }
        bisect(lo, hi, |x| self.cdf(x) >= u)
    }

    /// `inf {x : mu((x, inf)) <= tail}`, the upper quantile.
    pub fn upper_quantile(&self, tail: f64) -> f64 {
        let (lo, hi) = self.reach();
        if tail <= 0.0 {
            return hi;
        }
        bisect(lo, hi, |x| self.sf(x) <= tail)
    }
}

/// Smallest float in `[lo, hi]` where the monotone predicate holds.
fn bisect(lo: f64, hi: f64, pred: impl Fn(f64) -> bool) -> f64 {
    if pred(lo) {
        return lo;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..2000 {
        let mid = a + 0.5 * (b - a);
        if mid <= a || mid >= b {
            break;
        }
        if pred(mid) {
            b = mid;
        } else {
            a = mid;
        }
    }
    b
}
