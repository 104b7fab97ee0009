//! Fixed instance sets shared by the benchmarks.

use gapcal_core::model::{Instance, TimeLaw};
use gapcal_core::random::RandomFamily;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `n` reproducible random instances with exactly `m` states.
///
/// Drift stays within 30% of its bound so that the drift-free coordinates of
/// long grids keep intensities in a representable range. Killing per state
/// shrinks with `m` so the total killing does not grow with the grid.
pub fn instances(n: usize, m: usize, law: TimeLaw) -> Vec<Instance> {
    let kill_max = 2.0 * (5.0 / m as f64).min(1.0);
    let fam = RandomFamily { m_min: m, m_max: m, drift_fill: 0.3, kill_max, ..RandomFamily::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(m as u64);
    (0..n).map(|_| fam.sample(&mut rng, law)).collect()
}
