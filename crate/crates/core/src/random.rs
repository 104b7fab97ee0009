//! Random valid instances for sweeps, property tests and benchmarks.

use rand::Rng;

use crate::model::{Instance, TimeLaw};

#[derive(Debug, Clone)]
pub struct RandomFamily {
    pub m_min: usize,
    pub m_max: usize,
    pub gap_min: f64,
    pub gap_max: f64,
    pub p_min: f64,
    /// Fraction of each admissible drift interval that may be used.
    pub drift_fill: f64,
    pub kill_max: f64,
}

impl Default for RandomFamily {
    fn default() -> Self {
        Self { m_min: 3, m_max: 10, gap_min: 0.2, gap_max: 2.0, p_min: 0.1, drift_fill: 0.9, kill_max: 2.0 }
    }
}

impl RandomFamily {
    pub fn sample<R: Rng>(&self, rng: &mut R, law: TimeLaw) -> Instance {
        let m = rng.random_range(self.m_min..=self.m_max);
        let mut x = vec![rng.random_range(-2.0..2.0)];
        for _ in 1..m {
            let g = rng.random_range(self.gap_min..self.gap_max);
            x.push(x.last().unwrap() + g);
        }
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(self.p_min..1.0)).collect();
        let total: f64 = w.iter().sum();
        let mut p: Vec<f64> = w.iter().map(|v| v / total).collect();
        let head: f64 = p[..m - 1].iter().sum();
        p[m - 1] = 1.0 - head;
        let drift = (1..m - 1)
            .map(|k| {
                let (lo, hi) = (-1.0 / (x[k + 1] - x[k]), 1.0 / (x[k] - x[k - 1]));
                let u: f64 = rng.random_range(-self.drift_fill..self.drift_fill);
                if u >= 0.0 { u * hi } else { -u * lo }
            })
            .collect();
        let killing = (1..m - 1).map(|_| rng.random_range(0.0..=self.kill_max)).collect();
        Instance::new(x, p, drift, killing, law)
    }
}
