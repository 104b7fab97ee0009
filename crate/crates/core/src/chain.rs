//! Chain matrices on the extended state space `{1..M} + cemetery`, and the
//! three marginal oracles: resolvent solves, uniformization and Monte Carlo.
//!
//! Every matrix here is tridiagonal on the first `M` states, plus one extra
//! column into the cemetery. The cemetery row is a multiple of its unit vector.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Instance, LawKind, Rates};
use crate::numerics::TridiagLu;

/// Tridiagonal-plus-column matrix of size `(M+1) x (M+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bordered {
    /// Entry `(k, k-1)`; unused at `k = 0`.
    pub down: Vec<f64>,
    pub diag: Vec<f64>,
    /// Entry `(k, k+1)`; unused at `k = M-1`.
    pub up: Vec<f64>,
    /// Entry `(k, M)`, into the cemetery.
    pub col: Vec<f64>,
    /// Entry `(M, M)`.
    pub corner: f64,
}

impl Bordered {
    pub fn m(&self) -> usize {
        self.diag.len()
    }

    pub fn dim(&self) -> usize {
        self.m() + 1
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let m = self.m();
        if r == m {
            return if c == m { self.corner } else { 0.0 };
        }
        if c == m {
            self.col[r]
        } else if c == r {
            self.diag[r]
        } else if c + 1 == r {
            self.down[r]
        } else if r + 1 == c {
            self.up[r]
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |r, c| self.get(r, c))
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        let m = self.m();
        if r == m {
            return self.corner;
        }
        let mut s = self.diag[r] + self.col[r];
        if r > 0 {
            s += self.down[r];
        }
        if r + 1 < m {
            s += self.up[r];
        }
        s
    }

    /// Row vector times matrix, `x A`.
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let m = self.m();
        let mut y = vec![0.0; m + 1];
        for c in 0..m {
            let mut v = x[c] * self.diag[c];
            if c > 0 {
                v += x[c - 1] * self.up[c - 1];
            }
            if c + 1 < m {
                v += x[c + 1] * self.down[c + 1];
            }
            y[c] = v;
        }
        y[m] = x[..m].iter().zip(&self.col).map(|(a, b)| a * b).sum::<f64>() + x[m] * self.corner;
        y
    }

    fn affine_of(theta: &Bordered, scale: f64, corner: f64) -> Bordered {
        let f = |v: &Vec<f64>| v.iter().map(|a| scale * a).collect::<Vec<_>>();
        Bordered {
            down: f(&theta.down),
            diag: theta.diag.iter().map(|a| 1.0 + scale * a).collect(),
            up: f(&theta.up),
            col: f(&theta.col),
            corner,
        }
    }
}

fn check_lambda(rates: &Rates, lambda: &[f64]) -> Result<()> {
    let m = rates.len();
    if lambda.len() != m {
        return Err(Error::Spec(format!("lambda has {} entries; need {m}", lambda.len())));
    }
    for (k, &l) in lambda.iter().enumerate() {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(Error::NonPositiveIntensity { j: k + 1, value: l });
        }
    }
    Ok(())
}

/// Intensity matrix of the continuous-time chain. Rows of the two endpoints
/// and of the cemetery are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMatrix {
    pub bands: Bordered,
}

impl IntensityMatrix {
    pub fn from_rates(rates: &Rates, lambda: &[f64]) -> Result<Self> {
        check_lambda(rates, lambda)?;
        let m = rates.len();
        let mut b = Bordered {
            down: vec![0.0; m],
            diag: vec![0.0; m],
            up: vec![0.0; m],
            col: vec![0.0; m],
            corner: 0.0,
        };
        for k in 1..m - 1 {
            let l = lambda[k];
            b.down[k] = l * rates.down[k];
            b.up[k] = l * rates.up[k];
            b.diag[k] = -l * (1.0 + rates.kt[k]);
            b.col[k] = l * rates.kt[k];
        }
        Ok(Self { bands: b })
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.bands.diag.iter().fold(0.0, |a: f64, d| a.max(d.abs()))
    }
}

/// One-step matrix `I + h Theta` of the discrete chain with step `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrixH {
    pub h: f64,
    pub bands: Bordered,
}

/// `I - s Theta` together with an LU factorization of its transposed
/// `M x M` block, used for row-vector solves.
#[derive(Debug, Clone)]
pub struct ResolventMatrix {
    pub s: f64,
    pub bands: Bordered,
    lu: TridiagLu,
}

impl ResolventMatrix {
    /// The `M x M` restriction, without the cemetery row and column.
    pub fn restriction(&self) -> DMatrix<f64> {
        let m = self.bands.m();
        DMatrix::from_fn(m, m, |r, c| self.bands.get(r, c))
    }

    /// Solves `x N = y` for the row vector `x`.
    pub fn solve_left(&self, y: &[f64]) -> Vec<f64> {
        let m = self.bands.m();
        let mut x = y[..m].to_vec();
        self.lu.solve_in_place(&mut x);
        let absorbed: f64 = x.iter().zip(&self.bands.col).map(|(a, c)| a * c).sum();
        let mut out = x;
        out.push((y[m] - absorbed) / self.bands.corner);
        out
    }
}

pub fn build_intensity(inst: &Instance, lambda: &[f64]) -> Result<IntensityMatrix> {
    IntensityMatrix::from_rates(&inst.rates()?, lambda)
}

/// Largest admissible step, `1 / max_j lambda_j (1 + k~_j)`.
pub fn step_bound(rates: &Rates, lambda: &[f64]) -> f64 {
    let top = lambda.iter().zip(&rates.kt).map(|(l, k)| l * (1.0 + k)).fold(0.0, f64::max);
    if top == 0.0 {
        f64::INFINITY
    } else {
        1.0 / top
    }
}

pub fn transition_from_rates(rates: &Rates, lambda: &[f64], h: f64) -> Result<TransitionMatrixH> {
    let theta = IntensityMatrix::from_rates(rates, lambda)?;
    let bound = step_bound(rates, lambda);
    if !(h > 0.0 && h < bound) {
        return Err(Error::StepTooLarge { h, bound });
    }
    Ok(TransitionMatrixH { h, bands: Bordered::affine_of(&theta.bands, h, 1.0) })
}

pub fn build_transition(inst: &Instance, lambda: &[f64], h: f64) -> Result<TransitionMatrixH> {
    transition_from_rates(&inst.rates()?, lambda, h)
}

pub fn resolvent_from_rates(rates: &Rates, lambda: &[f64], s: f64) -> Result<ResolventMatrix> {
    let theta = IntensityMatrix::from_rates(rates, lambda)?;
    resolvent_from_intensity(&theta, s)
}

pub fn resolvent_from_intensity(theta: &IntensityMatrix, s: f64) -> Result<ResolventMatrix> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Spec(format!("resolvent scale must be positive, got {s}")));
    }
    let bands = Bordered::affine_of(&theta.bands, -s, 1.0);
    let m = bands.m();
    // Transposed block: sub-diagonal (c, c-1) is up[c-1], super-diagonal (c, c+1) is down[c+1].
    let sub: Vec<f64> = (0..m).map(|c| if c > 0 { bands.up[c - 1] } else { 0.0 }).collect();
    let sup: Vec<f64> = (0..m).map(|c| if c + 1 < m { bands.down[c + 1] } else { 0.0 }).collect();
    let lu = TridiagLu::factor(&sub, &bands.diag, &sup).ok_or(Error::Singular)?;
    Ok(ResolventMatrix { s, bands, lu })
}

pub fn build_resolvent(inst: &Instance, lambda: &[f64], s: f64) -> Result<ResolventMatrix> {
    resolvent_from_rates(&inst.rates()?, lambda, s)
}

/// Weights over the `M` states and the cemetery (last entry).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixtureState(pub Vec<f64>);

impl MixtureState {
    pub fn point(m: usize, k: usize) -> Self {
        let mut v = vec![0.0; m + 1];
        v[k] = 1.0;
        Self(v)
    }

    /// Weight `beta` on zero-based state `upper` and `1 - beta` on its left neighbour.
    pub fn split(m: usize, upper: usize, beta: f64) -> Self {
        let mut v = vec![0.0; m + 1];
        v[upper] += beta;
        v[upper - 1] += 1.0 - beta;
        Self(v)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn cemetery(&self) -> f64 {
        *self.0.last().unwrap()
    }

    pub fn sup_distance(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn tv_distance(&self, other: &[f64]) -> f64 {
        0.5 * self.0.iter().zip(other).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// `start N^{-p}`: the law at an independent Gamma(p, s) time.
pub fn resolvent_inverse_power(n: &ResolventMatrix, start: &MixtureState, p: u32) -> Result<MixtureState> {
    if p == 0 {
        return Err(Error::Spec("resolvent power must be >= 1".into()));
    }
    let mut v = start.0.clone();
    for _ in 0..p {
        v = n.solve_left(&v);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(MixtureState(v))
}

/// Poisson-tail threshold for uniformization.
const POISSON_TAIL: f64 = 1e-14;
/// Largest uniformized rate per substep; keeps `exp(-rate)` far from underflow.
const MAX_RATE_PER_STEP: f64 = 32.0;

/// Substep count above which the step matrix is squared instead of applied.
const SQUARING_FROM: usize = 256;

/// `start exp(t Theta)` by uniformization.
///
/// Stiff chains need `rate * t / 32` substeps. Past `SQUARING_FROM` of them,
/// the dense substep matrix `exp(t Theta / 2^k)` is built row by row and
/// squared `k` times; every factor is nonnegative.
pub fn expm_marginal(theta: &IntensityMatrix, start: &MixtureState, t: f64) -> MixtureState {
    let rate = 1.1 * theta.max_exit_rate();
    if t == 0.0 || rate == 0.0 {
        return start.clone();
    }
    let total = rate * t;
    let steps = (total / MAX_RATE_PER_STEP).ceil().max(1.0) as usize;
    let p = Bordered::affine_of(&theta.bands, 1.0 / rate, 1.0);
    if steps <= SQUARING_FROM {
        let lt = total / steps as f64;
        let mut v = start.0.clone();
        for _ in 0..steps {
            v = uniformized_step(&p, &v, lt);
        }
        return MixtureState(v);
    }
    let k = (steps as f64).log2().ceil() as i32;
    let lt = total / 2f64.powi(k);
    let n = p.dim();
    let mut e = DMatrix::zeros(n, n);
    for r in 0..n {
        let mut unit = vec![0.0; n];
        unit[r] = 1.0;
        e.set_row(r, &DMatrix::from_row_slice(1, n, &uniformized_step(&p, &unit, lt)).row(0));
    }
    for _ in 0..k {
        e = &e * &e;
    }
    let v = DMatrix::from_row_slice(1, n, &start.0) * e;
    MixtureState(v.iter().copied().collect())
}

fn uniformized_step(p: &Bordered, start: &[f64], lt: f64) -> Vec<f64> {
    let mut w = (-lt).exp();
    let mut wsum = w;
    let mut term = start.to_vec();
    let mut acc: Vec<f64> = term.iter().map(|x| w * x).collect();
    let mut n = 0usize;
    while 1.0 - wsum > POISSON_TAIL && n < 100_000 {
        n += 1;
        term = p.left_mul(&term);
        w *= lt / n as f64;
        wsum += w;
        for (a, x) in acc.iter_mut().zip(&term) {
            *a += w * x;
        }
    }
    acc.iter().map(|a| a / wsum).collect()
}

fn sample_index<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

struct Sim<'a> {
    rates: &'a Rates,
    lambda: &'a [f64],
    m: usize,
}

impl Sim<'_> {
    fn jump<R: Rng>(&self, rng: &mut R, k: usize) -> usize {
        let kt = self.rates.kt[k];
        let u = rng.random::<f64>() * (1.0 + kt);
        if u < self.rates.up[k] {
            k + 1
        } else if u < 1.0 {
            k - 1
        } else {
            self.m
        }
    }

    fn run_continuous<R: Rng>(&self, rng: &mut R, mut k: usize, horizon: f64) -> usize {
        let mut clock = 0.0;
        loop {
            if k == self.m || k == 0 || k == self.m - 1 {
                return k;
            }
            let rate = self.lambda[k] * (1.0 + self.rates.kt[k]);
            if rate == 0.0 {
                return k;
            }
            let u: f64 = rng.random();
            clock += -(1.0 - u).ln() / rate;
            if clock > horizon {
                return k;
            }
            k = self.jump(rng, k);
        }
    }

    fn run_discrete<R: Rng>(&self, rng: &mut R, mut k: usize, mut steps: u64, h: f64) -> usize {
        loop {
            if k == self.m || k == 0 || k == self.m - 1 {
                return k;
            }
            let leave = h * self.lambda[k] * (1.0 + self.rates.kt[k]);
            if leave <= 0.0 {
                return k;
            }
            let hold = Geometric::new(leave).expect("leave probability in (0, 1]").sample(rng);
            if hold >= steps {
                return k;
            }
            steps -= hold + 1;
            k = self.jump(rng, k);
        }
    }
}

/// Monte Carlo estimate of the law at the stopping time of `inst.law`.
///
/// Path `i` uses a ChaCha8 stream keyed by `(seed, i)`, so the output does
/// not depend on thread scheduling.
pub fn simulate(inst: &Instance, lambda: &[f64], start: &MixtureState, n_paths: usize, seed: u64) -> Result<MixtureState> {
    let rates = inst.rates()?;
    check_lambda(&rates, lambda)?;
    let m = rates.len();
    if start.0.len() != m + 1 {
        return Err(Error::Spec("start mixture has wrong length".into()));
    }
    if n_paths == 0 {
        return Err(Error::Spec("need at least one path".into()));
    }
    let law = inst.law;
    if let Some(h) = law.step() {
        let bound = step_bound(&rates, lambda);
        if !(h < bound) {
            return Err(Error::StepTooLarge { h, bound });
        }
    }
    let sim = Sim { rates: &rates, lambda, m };
    let chunk = 4096;
    let n_chunks = n_paths.div_ceil(chunk);
    let counts = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u64; m + 1];
            for i in c * chunk..((c + 1) * chunk).min(n_paths) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let k0 = sample_index(&mut rng, &start.0);
                let end = match law.kind {
                    LawKind::Deterministic => sim.run_continuous(&mut rng, k0, law.t),
                    LawKind::Exponential => {
                        let tau = Exp::new(1.0 / law.t).expect("positive rate").sample(&mut rng);
                        sim.run_continuous(&mut rng, k0, tau)
                    }
                    LawKind::Gamma { r } => {
                        let tau = Gamma::new(r as f64, law.t / r as f64).expect("positive shape").sample(&mut rng);
                        sim.run_continuous(&mut rng, k0, tau)
                    }
                    LawKind::Geometric { h } | LawKind::NegBinomial { h, .. } => {
                        let a = law.continuation_prob().expect("discrete law");
                        let r = law.stages().expect("staged law");
                        let stage = Geometric::new(1.0 - a).expect("probability in (0, 1]");
                        let steps: u64 = (0..r).map(|_| stage.sample(&mut rng)).sum();
                        sim.run_discrete(&mut rng, k0, steps, h)
                    }
                };
                counts[end] += 1;
            }
            counts
        })
        .reduce(|| vec![0u64; m + 1], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    let n = n_paths as f64;
    Ok(MixtureState(counts.iter().map(|&c| c as f64 / n).collect()))
}
