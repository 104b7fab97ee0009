//! Instance model: grid, target pmf, drift, killing and stopping-time law.
//!
//! Vectors over the state space are indexed from zero, so state `i_j` of the
//! grid lives at index `j - 1`. Drift and killing are given at interior
//! states only; the endpoint values are zero by convention.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a target pmf.
pub const PMF_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateGrid(pub Vec<f64>);

impl StateGrid {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn states(&self) -> &[f64] {
        &self.0
    }

    /// Gap to the left of index `k`, i.e. `i_{k+1} - i_k` in one-based terms.
    pub fn gap(&self, k: usize) -> f64 {
        self.0[k] - self.0[k - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetPmf(pub Vec<f64>);

impl TargetPmf {
    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

/// Interior drift `b_2..b_{M-1}` (units of 1/length).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DriftVector(pub Vec<f64>);

impl DriftVector {
    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m.saturating_sub(2)])
    }

    /// Full-length drift with zero endpoints.
    pub fn full(&self) -> Vec<f64> {
        pad(&self.0)
    }
}

/// Interior killing `k_2..k_{M-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KillingVector(pub Vec<f64>);

impl KillingVector {
    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m.saturating_sub(2)])
    }

    pub fn full(&self) -> Vec<f64> {
        pad(&self.0)
    }
}

fn pad(interior: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(interior.len() + 2);
    v.push(0.0);
    v.extend_from_slice(interior);
    v.push(0.0);
    v
}

/// Stopping-time law. Geometric and negative-binomial laws count steps of
/// size `h`; their success parameters are mean matched to the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LawKind {
    Geometric { h: f64 },
    Exponential,
    NegBinomial { r: u32, h: f64 },
    Gamma { r: u32 },
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeLaw {
    pub t: f64,
    #[serde(rename = "law")]
    pub kind: LawKind,
}

impl TimeLaw {
    pub fn exponential(t: f64) -> Self {
        Self { t, kind: LawKind::Exponential }
    }

    pub fn gamma(t: f64, r: u32) -> Self {
        Self { t, kind: LawKind::Gamma { r } }
    }

    pub fn deterministic(t: f64) -> Self {
        Self { t, kind: LawKind::Deterministic }
    }

    /// Number of independent stages (1 for geometric and exponential times).
    pub fn stages(&self) -> Option<u32> {
        match self.kind {
            LawKind::Geometric { .. } | LawKind::Exponential => Some(1),
            LawKind::NegBinomial { r, .. } | LawKind::Gamma { r } => Some(r),
            LawKind::Deterministic => None,
        }
    }

    /// Discrete step size, if the law counts steps of the discrete chain.
    pub fn step(&self) -> Option<f64> {
        match self.kind {
            LawKind::Geometric { h } | LawKind::NegBinomial { h, .. } => Some(h),
            _ => None,
        }
    }

    /// Per-step continuation probability `a` of the geometric stages.
    pub fn continuation_prob(&self) -> Option<f64> {
        match self.kind {
            LawKind::Geometric { h } => Some(self.t / (self.t + h)),
            LawKind::NegBinomial { r, h } => Some(self.t / (self.t + h * r as f64)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    #[serde(rename = "states")]
    pub grid: StateGrid,
    #[serde(rename = "probs")]
    pub pmf: TargetPmf,
    pub drift: DriftVector,
    pub killing: KillingVector,
    #[serde(flatten)]
    pub law: TimeLaw,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.violations.join("; "))
    }
}

/// Jump probabilities and scaled killing for every state (zero at endpoints).
#[derive(Debug, Clone, PartialEq)]
pub struct Rates {
    pub up: Vec<f64>,
    pub down: Vec<f64>,
    pub kt: Vec<f64>,
}

impl Rates {
    pub fn len(&self) -> usize {
        self.kt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kt.is_empty()
    }
}

impl Instance {
    pub fn new(grid: Vec<f64>, pmf: Vec<f64>, drift: Vec<f64>, killing: Vec<f64>, law: TimeLaw) -> Self {
        Self {
            grid: StateGrid(grid),
            pmf: TargetPmf(pmf),
            drift: DriftVector(drift),
            killing: KillingVector(killing),
            law,
        }
    }

    pub fn m(&self) -> usize {
        self.grid.len()
    }

    pub fn validate(&self) -> ValidationReport {
        validate_instance(self)
    }

    /// Errors with the full report unless the instance is solvable input.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::Invalid(report))
        }
    }

    pub fn rates(&self) -> Result<Rates> {
        let pairs = jump_probs(&self.grid, &self.drift)?;
        let kt = ktilde(&self.grid, &self.killing)?;
        let m = self.m();
        let mut up = vec![0.0; m];
        let mut down = vec![0.0; m];
        for (k, (u, d)) in pairs.into_iter().enumerate() {
            up[k + 1] = u;
            down[k + 1] = d;
        }
        Ok(Rates { up, down, kt })
    }

    pub fn with_law(&self, law: TimeLaw) -> Self {
        Self { law, ..self.clone() }
    }
}

pub fn validate_instance(inst: &Instance) -> ValidationReport {
    let mut v = Vec::new();
    let x = inst.grid.states();
    let m = x.len();
    if m < 3 {
        v.push(format!("grid has {m} states; need at least 3"));
    }
    if let Some(k) = x.iter().position(|s| !s.is_finite()) {
        v.push(format!("state i_{} not finite", k + 1));
    }
    for k in 1..m {
        if !(x[k] > x[k - 1]) {
            v.push(format!("grid not strictly increasing at j={}", k + 1));
        }
    }

    let p = inst.pmf.probs();
    if p.len() != m {
        v.push(format!("pmf has {} entries; grid has {m}", p.len()));
    }
    for (k, &pk) in p.iter().enumerate() {
        if !(pk > 0.0) || !pk.is_finite() {
            v.push(format!("p_{} not > 0", k + 1));
        }
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PMF_SUM_TOL {
        v.push(format!("pmf sums to {total:.17}; need 1 within {PMF_SUM_TOL:e}"));
    }

    let interior = m.saturating_sub(2);
    if inst.drift.0.len() != interior {
        v.push(format!("drift has {} entries; need {interior} interior values", inst.drift.0.len()));
    } else if m >= 3 && x.windows(2).all(|w| w[1] > w[0]) {
        for (k, &b) in inst.drift.0.iter().enumerate() {
            let j = k + 1;
            let (lo, hi) = (-1.0 / inst.grid.gap(j + 1), 1.0 / inst.grid.gap(j));
            if !(lo < b && b < hi) {
                v.push(format!("drift bound at j={}", j + 1));
            }
        }
    }
    if inst.killing.0.len() != interior {
        v.push(format!("killing has {} entries; need {interior} interior values", inst.killing.0.len()));
    }
    for (k, &kk) in inst.killing.0.iter().enumerate() {
        if !(kk >= 0.0) || !kk.is_finite() {
            v.push(format!("k_{} not >= 0", k + 2));
        }
    }

    let law = &inst.law;
    if !(law.t > 0.0) || !law.t.is_finite() {
        v.push("horizon t not > 0".to_string());
    }
    match law.kind {
        LawKind::Geometric { h } | LawKind::NegBinomial { h, .. } if !(h > 0.0) || !h.is_finite() => {
            v.push("step h not > 0".to_string());
        }
        _ => {}
    }
    if let LawKind::NegBinomial { r: 0, .. } | LawKind::Gamma { r: 0 } = law.kind {
        v.push("stage count r not >= 1".to_string());
    }
    ValidationReport { violations: v }
}

/// Pairs `(q_{j,j+1}, q_{j,j-1})` for the interior states `j = 2..M-1`.
pub fn jump_probs(grid: &StateGrid, drift: &DriftVector) -> Result<Vec<(f64, f64)>> {
    let m = grid.len();
    let mut out = Vec::with_capacity(m.saturating_sub(2));
    for (k, &b) in drift.0.iter().enumerate() {
        let j = k + 1;
        let (dl, dr) = (grid.gap(j), grid.gap(j + 1));
        let (lo, hi) = (-1.0 / dr, 1.0 / dl);
        if !(lo < b && b < hi) {
            return Err(Error::DriftBound { j: j + 1, b, lo, hi });
        }
        let up = dl * (1.0 + dr * b) / (dl + dr);
        let down = dr * (1.0 - dl * b) / (dl + dr);
        // Compute the larger one as the complement so the pair sums to one.
        if up >= down {
            out.push((1.0 - down, down));
        } else {
            out.push((up, 1.0 - up));
        }
    }
    Ok(out)
}

/// Scaled killing `k~_j = delta_{j+1} delta_j k_j`, zero at both endpoints.
pub fn ktilde(grid: &StateGrid, killing: &KillingVector) -> Result<Vec<f64>> {
    let m = grid.len();
    let mut kt = vec![0.0; m];
    for (k, &kk) in killing.0.iter().enumerate() {
        let j = k + 1;
        if !(kk >= 0.0) {
            return Err(Error::NegativeKilling { j: j + 1, k: kk });
        }
        kt[j] = grid.gap(j + 1) * grid.gap(j) * kk;
    }
    Ok(kt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inst(grid: Vec<f64>, p: Vec<f64>, b: Vec<f64>) -> Instance {
        let m = grid.len();
        Instance::new(grid, p, b, vec![0.0; m - 2], TimeLaw::exponential(1.0))
    }

    #[test]
    fn drift_inside_bound_is_valid() {
        let i = inst(vec![0.0, 1.0, 2.0], vec![0.25, 0.5, 0.25], vec![0.5]);
        assert!(i.validate().is_valid());
    }

    #[test]
    fn drift_on_bound_is_rejected() {
        let i = inst(vec![0.0, 1.0, 2.0], vec![0.25, 0.5, 0.25], vec![1.0]);
        let r = i.validate();
        assert_eq!(r.violations, vec!["drift bound at j=2".to_string()]);
    }

    #[test]
    fn zero_probability_is_rejected() {
        let i = inst(vec![0.0, 1.0, 2.0], vec![0.5, 0.5, 0.0], vec![0.0]);
        assert!(i.validate().violations.contains(&"p_3 not > 0".to_string()));
    }

    #[test]
    fn pmf_sum_is_not_renormalized() {
        let i = inst(vec![0.0, 1.0, 2.0], vec![0.25, 0.5, 0.25 + 1e-9], vec![0.0]);
        assert!(!i.validate().is_valid());
    }

    #[test]
    fn symmetric_jumps_without_drift() {
        let q = jump_probs(&StateGrid(vec![0.0, 1.0, 2.0]), &DriftVector(vec![0.0])).unwrap();
        assert_eq!(q, vec![(0.5, 0.5)]);
    }

    #[test]
    fn drifted_unit_gaps() {
        let q = jump_probs(&StateGrid(vec![0.0, 1.0, 2.0]), &DriftVector(vec![0.5])).unwrap();
        assert!((q[0].0 - 0.75).abs() < 1e-15 && (q[0].1 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn uneven_gaps_without_drift() {
        let q = jump_probs(&StateGrid(vec![0.0, 1.0, 3.0]), &DriftVector(vec![0.0])).unwrap();
        assert!((q[0].0 - 1.0 / 3.0).abs() < 1e-15 && (q[0].1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn jump_probs_rejects_bound_violation() {
        let r = jump_probs(&StateGrid(vec![0.0, 1.0, 2.0]), &DriftVector(vec![-1.0]));
        assert!(matches!(r, Err(Error::DriftBound { j: 2, .. })));
    }

    #[test]
    fn ktilde_examples() {
        let g = StateGrid(vec![0.0, 1.0, 2.0]);
        assert_eq!(ktilde(&g, &KillingVector(vec![0.0])).unwrap(), vec![0.0; 3]);
        assert_eq!(ktilde(&g, &KillingVector(vec![1.0])).unwrap(), vec![0.0, 1.0, 0.0]);
        let g = StateGrid(vec![0.0, 2.0, 3.0]);
        assert_eq!(ktilde(&g, &KillingVector(vec![2.0])).unwrap(), vec![0.0, 4.0, 0.0]);
        assert!(ktilde(&g, &KillingVector(vec![-1.0])).is_err());
    }

    #[test]
    fn instance_json_shape() {
        let i = Instance::new(
            vec![0.0, 1.0, 2.0],
            vec![0.25, 0.5, 0.25],
            vec![0.0],
            vec![1.0],
            TimeLaw { t: 1.0, kind: LawKind::NegBinomial { r: 4, h: 0.01 } },
        );
        let v = serde_json::to_value(&i).unwrap();
        assert_eq!(v["law"]["kind"], "neg_binomial");
        assert_eq!(v["law"]["r"], 4);
        assert_eq!(v["t"], 1.0);
        let back: Instance = serde_json::from_value(v).unwrap();
        assert_eq!(back, i);
    }

    fn grid_and_drift() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..12).prop_flat_map(|m| {
            (prop::collection::vec(0.1f64..3.0, m - 1), prop::collection::vec(-0.99f64..0.99, m - 2))
        })
        .prop_map(|(gaps, u)| {
            let mut x = vec![0.0];
            for g in &gaps {
                x.push(x.last().unwrap() + g);
            }
            // Map u in (-1, 1) into the open drift interval at each interior state.
            let b = u
                .iter()
                .enumerate()
                .map(|(k, &uu)| if uu >= 0.0 { uu / gaps[k] } else { uu / gaps[k + 1] })
                .collect();
            (x, b)
        })
    }

    proptest! {
        #[test]
        fn jump_probs_sum_to_one((x, b) in grid_and_drift()) {
            let q = jump_probs(&StateGrid(x), &DriftVector(b)).unwrap();
            for (u, d) in q {
                prop_assert!(u >= 0.0 && d >= 0.0);
                prop_assert_eq!(u + d, 1.0);
            }
        }

        #[test]
        fn jump_probs_affine_invariant((x, b) in grid_and_drift(), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
            let q = jump_probs(&StateGrid(x.clone()), &DriftVector(b.clone())).unwrap();
            let xs = x.iter().map(|v| scale * v + shift).collect();
            let bs = b.iter().map(|v| v / scale).collect();
            let qs = jump_probs(&StateGrid(xs), &DriftVector(bs)).unwrap();
            for (a, c) in q.iter().zip(&qs) {
                prop_assert!((a.0 - c.0).abs() < 1e-12);
            }
        }
    }
}
