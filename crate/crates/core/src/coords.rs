//! Drift-removing coordinates.
//!
//! The map `kappa` relabels the grid so that the jump probabilities of the
//! chain become gap ratios, `q_{j,j+1} = eps_j / (eps_j + eps_{j+1})`. It is
//! centred at a median state and scaled by the spread between two quantile
//! anchors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DriftVector, StateGrid, TargetPmf};

pub const DEFAULT_ANCHOR_QUANTILE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateMap {
    pub kappa: Vec<f64>,
    /// `gaps[k] = kappa[k + 1] - kappa[k]`.
    pub gaps: Vec<f64>,
    /// Zero-based index of the median state, where `kappa` vanishes.
    pub anchor: usize,
    pub e_minus: usize,
    pub e_plus: usize,
    pub scale: f64,
    /// Quantile actually used after any halving.
    pub anchor_quantile: f64,
}

impl CoordinateMap {
    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }

    /// `q_{j,j+1}` in gap-ratio form for every interior index.
    pub fn up_probs(&self) -> Vec<f64> {
        (1..self.len() - 1).map(|k| self.gaps[k - 1] / (self.gaps[k - 1] + self.gaps[k])).collect()
    }

    pub fn interpolate(&self, grid: &StateGrid, x: f64) -> f64 {
        kappa_interpolate(self, grid, x)
    }
}

fn anchors(p: &[f64], alpha: f64) -> (usize, usize) {
    let m = p.len();
    let mut cum = 0.0;
    let mut e_minus = m - 1;
    for (k, &pk) in p.iter().enumerate() {
        cum += pk;
        if cum >= alpha {
            e_minus = k;
            break;
        }
    }
    let mut tail = 0.0;
    let mut e_plus = 0;
    for k in (0..m).rev() {
        tail += p[k];
        if tail >= alpha {
            e_plus = k;
            break;
        }
    }
    (e_minus, e_plus)
}

fn median_index(p: &[f64]) -> usize {
    let total: f64 = p.iter().sum();
    let mut cum = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        let tail = total - cum;
        cum += pk;
        if cum >= 0.5 && tail >= 0.5 {
            return k;
        }
    }
    let mut cum = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        cum += pk;
        if cum >= 0.5 {
            return k;
        }
    }
    p.len() - 1
}

pub fn build_kappa(grid: &StateGrid, drift: &DriftVector, pmf: &TargetPmf, anchor_quantile: f64) -> Result<CoordinateMap> {
    let x = grid.states();
    let p = pmf.probs();
    let m = x.len();
    if m < 3 || p.len() != m || drift.0.len() != m - 2 {
        return Err(Error::Spec(format!("dimension mismatch building coordinates (M = {m})")));
    }
    let b = drift.full();

    // log of prod_{k <= j} rho_k, with rho at the first state equal to one.
    let mut log_prod = vec![0.0; m - 1];
    for k in 1..m - 1 {
        let (dl, dr) = (grid.gap(k), grid.gap(k + 1));
        let num = 1.0 - dl * b[k];
        let den = 1.0 + dr * b[k];
        if !(num > 0.0 && den > 0.0) {
            return Err(Error::DriftBound { j: k + 1, b: b[k], lo: -1.0 / dr, hi: 1.0 / dl });
        }
        log_prod[k] = log_prod[k - 1] + num.ln() - den.ln();
    }
    let shift = log_prod.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = (0..m - 1).map(|k| grid.gap(k + 1) * (log_prod[k] - shift).exp()).collect();

    let mut alpha = anchor_quantile;
    let (mut e_minus, mut e_plus) = anchors(p, alpha);
    let mut halvings = 0;
    while e_minus >= e_plus {
        alpha *= 0.5;
        halvings += 1;
        if halvings > 200 || alpha <= 0.0 {
            return Err(Error::DegenerateAnchor);
        }
        (e_minus, e_plus) = anchors(p, alpha);
    }
    let scale = (x[e_plus] - x[e_minus]).max(1.0);
    let norm: f64 = raw[e_minus..e_plus].iter().sum();
    let gaps: Vec<f64> = raw.iter().map(|r| scale * r / norm).collect();

    let anchor = median_index(p);
    let mut kappa = vec![0.0; m];
    for k in anchor + 1..m {
        kappa[k] = kappa[k - 1] + gaps[k - 1];
    }
    for k in (0..anchor).rev() {
        kappa[k] = kappa[k + 1] - gaps[k];
    }
    Ok(CoordinateMap { kappa, gaps, anchor, e_minus, e_plus, scale, anchor_quantile: alpha })
}

/// Piecewise-linear interpolation of the coordinate map, clamped outside the
/// grid.
pub fn kappa_interpolate(map: &CoordinateMap, grid: &StateGrid, x: f64) -> f64 {
    let s = grid.states();
    let m = s.len();
    if x <= s[0] {
        return map.kappa[0];
    }
    if x >= s[m - 1] {
        return map.kappa[m - 1];
    }
    let k = s.partition_point(|&v| v <= x);
    let (x0, x1) = (s[k - 1], s[k]);
    let w = (x - x0) / (x1 - x0);
    map.kappa[k - 1] + w * (map.kappa[k] - map.kappa[k - 1])
}
