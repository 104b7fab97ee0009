//! Drift and killing fields: piecewise-constant densities plus atoms.

use serde::{Deserialize, Serialize};

use super::measure::{Interval, Mixture};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    /// Missing bounds are infinite.
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
    pub value: f64,
}

impl Piece {
    fn bounds(&self) -> (f64, f64) {
        (self.lo.unwrap_or(f64::NEG_INFINITY), self.hi.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldAtom {
    pub at: f64,
    pub mass: f64,
}

/// A field given as a density on pieces plus point masses. An empty table
/// is the zero field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldTable {
    #[serde(default)]
    pub pieces: Vec<Piece>,
    #[serde(default)]
    pub atoms: Vec<FieldAtom>,
}

/// Which ends of an integration interval are included.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ends {
    Open,
    Closed,
    /// `[lo, hi)`.
    ClosedOpen,
}

impl FieldTable {
    pub fn constant(value: f64) -> Self {
        Self { pieces: vec![Piece { lo: None, hi: None, value }], atoms: vec![] }
    }

    pub fn validate(&self, name: &str, nonnegative: bool, mu: &Mixture) -> Result<()> {
        let err = |m: String| Err(Error::Spec(format!("{name}: {m}")));
        let mut ps: Vec<(f64, f64)> = Vec::with_capacity(self.pieces.len());
        for p in &self.pieces {
            let (lo, hi) = p.bounds();
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY || !(lo < hi) {
                return err(format!("piece [{lo}, {hi}] needs lo < hi"));
            }
            if !p.value.is_finite() || (nonnegative && p.value < 0.0) {
                return err(format!("piece value {} is not allowed", p.value));
            }
            ps.push((lo, hi));
        }
        ps.sort_by(|a, b| a.0.total_cmp(&b.0));
        if ps.windows(2).any(|w| w[1].0 < w[0].1) {
            return err("pieces overlap".into());
        }
        for a in &self.atoms {
            if !a.at.is_finite() || !a.mass.is_finite() || (nonnegative && a.mass < 0.0) {
                return err(format!("atom at {} with mass {} is not allowed", a.at, a.mass));
            }
        }
        if !ps.is_empty() {
            for s in mu.support().iter().filter(|s| !s.is_point()) {
                if !covers(&ps, s) {
                    return err(format!("pieces do not cover the support interval [{}, {}]", s.lo, s.hi));
                }
            }
        }
        Ok(())
    }

    /// Density at `x`, restricted to the support of `mu`.
    pub fn density(&self, x: f64, mu: &Mixture) -> f64 {
        if !mu.in_support(x) {
            return 0.0;
        }
        self.pieces
            .iter()
            .find(|p| {
                let (lo, hi) = p.bounds();
                lo <= x && x < hi || (x == hi && hi.is_finite())
            })
            .map_or(0.0, |p| p.value)
    }

    /// Mass of atoms located at `x` on the support of `mu`.
    pub fn atom(&self, x: f64, mu: &Mixture) -> f64 {
        if !mu.in_support(x) {
            return 0.0;
        }
        self.atoms.iter().filter(|a| a.at == x).map(|a| a.mass).sum()
    }

    /// Integral of the field restricted to the support of `mu` over the
    /// interval from `lo` to `hi`, or of its absolute value.
    pub fn integral(&self, lo: f64, hi: f64, ends: Ends, abs: bool, mu: &Mixture) -> f64 {
        if !(lo <= hi) {
            return 0.0;
        }
        let support = mu.support();
        let sign = |v: f64| if abs { v.abs() } else { v };
        let mut total = 0.0;
        for p in &self.pieces {
            let (plo, phi) = p.bounds();
            for s in support.iter().filter(|s| !s.is_point()) {
                let a = lo.max(plo).max(s.lo);
                let b = hi.min(phi).min(s.hi);
                if b > a {
                    total += sign(p.value) * (b - a);
                }
            }
        }
        for a in &self.atoms {
            let inside = match ends {
                Ends::Open => lo < a.at && a.at < hi,
                Ends::Closed => lo <= a.at && a.at <= hi,
                Ends::ClosedOpen => lo <= a.at && a.at < hi,
            };
            if inside && support.iter().any(|s| s.contains(a.at)) {
                total += sign(a.mass);
            }
        }
        total
    }

    /// Sum of squared atoms in the closed interval, on the support of `mu`.
    pub fn atom_square_sum(&self, lo: f64, hi: f64, mu: &Mixture) -> f64 {
        let support = mu.support();
        self.atoms
            .iter()
            .filter(|a| lo <= a.at && a.at <= hi && support.iter().any(|s| s.contains(a.at)))
            .map(|a| a.mass * a.mass)
            .sum()
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces
            .iter()
            .flat_map(|p| [p.lo, p.hi])
            .flatten()
            .chain(self.atoms.iter().map(|a| a.at))
            .collect()
    }
}

fn covers(pieces: &[(f64, f64)], s: &Interval) -> bool {
    let mut reach = s.lo;
    for &(lo, hi) in pieces {
        if hi <= reach {
            continue;
        }
        if lo > reach {
            return false;
        }
        reach = hi;
        if reach >= s.hi {
            return true;
        }
    }
    reach >= s.hi
}
