//! The self-consistent intensity map `G` and its split index.
//!
//! `G` solves the exponential-time calibration in drift-free coordinates. It
//! is built from a forward scan (`G-`, valid left of the split) and a
//! backward scan (`G+`, valid at and right of the split). The split `l` is
//! the first index whose weighted mean `x_{0,l}` falls in
//! `(kappa_{l-1}, kappa_l]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GSolution {
    pub g: Vec<f64>,
    pub g_minus: Vec<f64>,
    pub g_plus: Vec<f64>,
    /// One-based split index in `2..=M`.
    pub l: usize,
    /// Starting point in drift-free coordinates.
    pub x0: f64,
    pub beta: f64,
    /// Reweighted pmf evaluated at `g`.
    pub q: Vec<f64>,
    /// Candidate means `x_{0,j}` for one-based `j = 1..=M+1`.
    pub x0_candidates: Vec<f64>,
    /// Largest pointwise relative residual of the defining equations.
    pub residual: f64,
}

impl GSolution {
    /// Zero-based index of the upper state of the starting split.
    pub fn upper(&self) -> usize {
        self.l - 1
    }
}

fn curvature(kappa: &[f64], k: usize) -> f64 {
    let (a, b, c) = (kappa[k - 1], kappa[k], kappa[k + 1]);
    (c - a) / ((c - b) * (b - a))
}

/// Solves for `G` at time scale `s`.
///
/// `pmf` may be any vector with nonzero entries; negative entries give a
/// formal answer used by fixed-point diagnostics.
pub fn solve_g(kappa: &[f64], pmf: &[f64], kt: &[f64], s: f64) -> Result<GSolution> {
    let m = kappa.len();
    if m < 3 || pmf.len() != m || kt.len() != m {
        return Err(Error::Spec("dimension mismatch in G".into()));
    }
    let coef: Vec<f64> =
        (0..m).map(|k| if k == 0 || k == m - 1 { 0.0 } else { curvature(kappa, k) / (s * pmf[k]) }).collect();

    // Forward scan: running mass and first moment about the current point.
    let mut g_minus = vec![0.0; m];
    let mut w_minus = vec![1.0; m];
    let (mut mass, mut moment) = (0.0, 0.0);
    for k in 0..m {
        if k > 0 {
            mass += pmf[k - 1] * w_minus[k - 1];
            moment += (kappa[k] - kappa[k - 1]) * mass;
        }
        if k > 0 && k < m - 1 {
            g_minus[k] = coef[k] * moment;
        }
        w_minus[k] = 1.0 + s * g_minus[k] * kt[k];
    }

    let mut g_plus = vec![0.0; m];
    let mut w_plus = vec![1.0; m];
    let (mut mass, mut moment) = (0.0, 0.0);
    for k in (0..m).rev() {
        if k < m - 1 {
            mass += pmf[k + 1] * w_plus[k + 1];
            moment += (kappa[k + 1] - kappa[k]) * mass;
        }
        if k > 0 && k < m - 1 {
            g_plus[k] = coef[k] * moment;
        }
        w_plus[k] = 1.0 + s * g_plus[k] * kt[k];
    }

    // x_{0,j} with weights from G- strictly left of j and from G+ at and right of j.
    let mut pre_num = vec![0.0; m + 1];
    let mut pre_den = vec![0.0; m + 1];
    for k in 0..m {
        pre_num[k + 1] = pre_num[k] + kappa[k] * pmf[k] * w_minus[k];
        pre_den[k + 1] = pre_den[k] + pmf[k] * w_minus[k];
    }
    let mut suf_num = vec![0.0; m + 1];
    let mut suf_den = vec![0.0; m + 1];
    for k in (0..m).rev() {
        suf_num[k] = suf_num[k + 1] + kappa[k] * pmf[k] * w_plus[k];
        suf_den[k] = suf_den[k + 1] + pmf[k] * w_plus[k];
    }
    let x0_candidates: Vec<f64> =
        (0..=m).map(|j| (pre_num[j] + suf_num[j]) / (pre_den[j] + suf_den[j])).collect();

    let upper = (1..m)
        .find(|&j| kappa[j - 1] < x0_candidates[j] && x0_candidates[j] <= kappa[j])
        .ok_or(Error::NoBracket)?;
    let x0 = x0_candidates[upper];
    let beta = (x0 - kappa[upper - 1]) / (kappa[upper] - kappa[upper - 1]);
    let g: Vec<f64> = (0..m).map(|k| if k < upper { g_minus[k] } else { g_plus[k] }).collect();
    let q = reweight_q(pmf, &g, kt, s);
    let residual = g_residual(kappa, pmf, kt, s, &g, upper + 1);
    Ok(GSolution { g, g_minus, g_plus, l: upper + 1, x0, beta, q, x0_candidates, residual })
}

/// Largest relative residual of the defining system for a given `G` and
/// one-based split `l`, including the bracket condition on the weighted mean.
pub fn g_residual(kappa: &[f64], pmf: &[f64], kt: &[f64], s: f64, g: &[f64], l: usize) -> f64 {
    let m = kappa.len();
    let w: Vec<f64> = (0..m).map(|k| 1.0 + s * g[k] * kt[k]).collect();
    let mut worst = g[0].abs().max(g[m - 1].abs());
    for j in 1..m - 1 {
        let sum: f64 = if j < l - 1 {
            (0..j).map(|a| (kappa[j] - kappa[a]) * pmf[a] * w[a]).sum()
        } else {
            (j + 1..m).map(|a| (kappa[a] - kappa[j]) * pmf[a] * w[a]).sum()
        };
        let rhs = curvature(kappa, j) / (s * pmf[j]) * sum;
        let scale = rhs.abs().max(f64::MIN_POSITIVE);
        worst = worst.max((g[j] - rhs).abs() / scale);
    }
    let num: f64 = (0..m).map(|k| kappa[k] * pmf[k] * w[k]).sum();
    let den: f64 = (0..m).map(|k| pmf[k] * w[k]).sum();
    let x0 = num / den;
    if !(kappa[l - 2] < x0 && x0 <= kappa[l - 1]) {
        worst = f64::INFINITY;
    }
    worst
}

/// `Q_j ∝ p_j (1 + s k~_j lambda_j)`.
pub fn reweight_q(pmf: &[f64], lambda: &[f64], kt: &[f64], s: f64) -> Vec<f64> {
    let w: Vec<f64> = pmf.iter().zip(lambda).zip(kt).map(|((p, l), k)| p * (1.0 + s * k * l)).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}
