use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Instance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StringMeasureEntry {
    pub state: f64,
    /// Atom of the string measure; `None` marks the infinite endpoint atoms.
    pub m: Option<f64>,
    pub a: f64,
    pub lambda: f64,
    pub infinite: bool,
}

/// Discrete string measure `m_j = (i_{j+1} - i_{j-1}) / a_j` with
/// `a_j = lambda_j (i_{j+1} - i_j)(i_j - i_{j-1})`; endpoint atoms are infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StringMeasureTable {
    pub entries: Vec<StringMeasureEntry>,
}

impl StringMeasureTable {
    pub fn states(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.state).collect()
    }

    /// Finite atoms as `(state, mass)` pairs.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        self.entries.iter().filter_map(|e| e.m.map(|m| (e.state, m))).collect()
    }
}

pub fn string_measure(inst: &Instance, lambda: &[f64]) -> Result<StringMeasureTable> {
    let x = inst.grid.states();
    let m = x.len();
    if lambda.len() != m {
        return Err(Error::Spec(format!("lambda has {} entries; need {m}", lambda.len())));
    }
    let mut entries = Vec::with_capacity(m);
    for k in 0..m {
        if k == 0 || k == m - 1 {
            entries.push(StringMeasureEntry { state: x[k], m: None, a: 0.0, lambda: lambda[k], infinite: true });
            continue;
        }
        let l = lambda[k];
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::NonPositiveIntensity { j: k + 1, value: l });
        }
        let a = l * (x[k + 1] - x[k]) * (x[k] - x[k - 1]);
        entries.push(StringMeasureEntry { state: x[k], m: Some((x[k + 1] - x[k - 1]) / a), a, lambda: l, infinite: false });
    }
    Ok(StringMeasureTable { entries })
}
