use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::exponential::solve_exponential_problem;
use super::{max_kill_rate, Diagnostics, FixedPointMethod, Problem, Solution, SolverConfig, LAMBDA_CAP, LAMBDA_FLOOR};
use crate::error::{Error, Result};
use crate::gfun::solve_g;
use crate::model::{Instance, KillingVector, LawKind, Rates};
use crate::numerics::{newton, Dd, NewtonOptions};

/// Iterate of the regularized fixed-point scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointState {
    pub lambda: Vec<f64>,
    pub eps: f64,
    pub damping: f64,
    pub residuals: Vec<f64>,
    /// Normalizer `C(h, eps)` of the last projection.
    pub c_value: f64,
}

/// `h^{(r-1)}(p, lambda)`: `r - 1` applications of
/// `h -> h N_s / sum_j h_j (1 + s lambda_j k~_j)`, in double-double arithmetic.
///
/// Intermediate products of `N_s` cancel heavily when `s lambda` is large, so
/// plain double precision loses most of its digits after a few stages.
pub fn h_iterate(rates: &Rates, pmf: &[f64], lambda: &[f64], s: f64, r: u32) -> Vec<f64> {
    let m = rates.len();
    let mut h: Vec<Dd> = pmf.iter().map(|&p| Dd::new(p)).collect();
    if r <= 1 {
        return pmf.to_vec();
    }
    let one = Dd::ONE;
    let sl: Vec<Dd> = lambda.iter().map(|&l| Dd::new(s) * Dd::new(l)).collect();
    let diag: Vec<Dd> = (0..m).map(|k| one + sl[k] * (one + Dd::new(rates.kt[k]))).collect();
    let up: Vec<Dd> = (0..m).map(|k| -(sl[k] * Dd::new(rates.up[k]))).collect();
    let down: Vec<Dd> = (0..m).map(|k| -(sl[k] * Dd::new(rates.down[k]))).collect();
    let weight: Vec<Dd> = (0..m).map(|k| one + sl[k] * Dd::new(rates.kt[k])).collect();
    for _ in 1..r {
        let norm = (0..m).fold(Dd::ZERO, |acc, k| acc + h[k] * weight[k]);
        let next: Vec<Dd> = (0..m)
            .map(|c| {
                let mut v = h[c] * diag[c];
                if c > 0 {
                    v = v + h[c - 1] * up[c - 1];
                }
                if c + 1 < m {
                    v = v + h[c + 1] * down[c + 1];
                }
                v / norm
            })
            .collect();
        h = next;
    }
    h.iter().map(|v| v.to_f64()).collect()
}

/// `C(v, eps) = sum_j ((v_j / sum_k (v_k ∨ eps)) ∨ eps)`.
pub fn c_value(v: &[f64], eps: f64) -> f64 {
    let d: f64 = v.iter().map(|x| x.max(eps)).sum();
    v.iter().map(|x| (x / d).max(eps)).sum()
}

/// Projection onto pmfs with every entry at least `eps / M`.
pub fn project_eps(v: &[f64], eps: f64) -> Vec<f64> {
    let d: f64 = v.iter().map(|x| x.max(eps)).sum();
    let y: Vec<f64> = v.iter().map(|x| (x / d).max(eps)).collect();
    let c: f64 = y.iter().sum();
    y.iter().map(|x| x / c).collect()
}

/// One application of the regularized map: `G(t/r, P_eps(h^{(r-1)}(p, lambda)))`.
/// With `eps = 0` the projection is skipped.
pub fn apply_a_eps(pb: &Problem, lambda: &[f64], eps: f64, r: u32, t: f64) -> Result<Vec<f64>> {
    let s = t / r as f64;
    let h = h_iterate(&pb.rates, pb.p(), lambda, s, r);
    let v = if eps > 0.0 { project_eps(&h, eps) } else { h };
    Ok(solve_g(pb.kappa(), &v, &pb.rates.kt, s)?.g)
}

/// `sup_j |lambda_j - A(lambda)_j|` with no regularization.
pub fn fixed_point_residual(pb: &Problem, lambda: &[f64], r: u32, t: f64) -> f64 {
    match apply_a_eps(pb, lambda, 0.0, r, t) {
        Ok(a) => a.iter().zip(lambda).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
        Err(_) => f64::INFINITY,
    }
}

fn fixed_point_defect(pb: &Problem, lambda: &[f64], r: u32, t: f64) -> Option<Vec<f64>> {
    let a = apply_a_eps(pb, lambda, 0.0, r, t).ok()?;
    let m = pb.m();
    Some((1..m - 1).map(|k| lambda[k] - a[k]).collect())
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// `x` moved by `n` units in the last place.
fn ulp_shift(x: f64, n: i64) -> f64 {
    f64::from_bits((x.to_bits() as i64 + n) as u64)
}

/// The polish aims this far below the requested fixed-point tolerance.
const POLISH_MARGIN: f64 = 1e-2;

/// LLL-reduced basis of the lattice spanned by `cols`, with the integer
/// change of basis (`reduced[i] = sum_k u[i][k] cols[k]`).
fn lll(cols: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<i64>>) {
    let n = cols.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut b = cols.to_vec();
    let mut u: Vec<Vec<i64>> = (0..n).map(|i| (0..n).map(|k| i64::from(i == k)).collect()).collect();
    let gram_schmidt = |b: &[Vec<f64>]| {
        let mut star: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut mu = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut v = b[i].clone();
            for j in 0..i {
                mu[i][j] = dot(&b[i], &star[j]) / dot(&star[j], &star[j]);
                for (x, y) in v.iter_mut().zip(&star[j]) {
                    *x -= mu[i][j] * y;
                }
            }
            star.push(v);
        }
        (star, mu)
    };
    let (mut star, mut mu) = gram_schmidt(&b);
    let mut k = 1;
    let mut guard = 0;
    while k < n && guard < 10_000 {
        guard += 1;
        // Size reduction leaves the Gram-Schmidt vectors alone; the
        // coefficients are refreshed afterwards because the basis is far
        // too ill-conditioned for the running updates alone.
        let mut reduced = false;
        for j in (0..k).rev() {
            let q = mu[k][j].round();
            if q != 0.0 {
                reduced = true;
                let (bj, uj) = (b[j].clone(), u[j].clone());
                for (x, y) in b[k].iter_mut().zip(&bj) {
                    *x -= q * y;
                }
                for (x, y) in u[k].iter_mut().zip(&uj) {
                    *x -= q as i64 * y;
                }
                for i in 0..j {
                    mu[k][i] -= q * mu[j][i];
                }
                mu[k][j] -= q;
            }
        }
        if reduced {
            (star, mu) = gram_schmidt(&b);
        }
        let lhs = dot(&star[k], &star[k]);
        let rhs = (0.75 - mu[k][k - 1] * mu[k][k - 1]) * dot(&star[k - 1], &star[k - 1]);
        if lhs >= rhs {
            k += 1;
        } else {
            b.swap(k, k - 1);
            u.swap(k, k - 1);
            (star, mu) = gram_schmidt(&b);
            k = (k - 1).max(1);
        }
    }
    (b, u)
}

/// Directions searched around the nearest-plane point.
const SEARCH_DIRECTIONS: usize = 8;

/// Final clean-up of a converged intensity vector against `lambda = A(lambda)`.
///
/// With large `s lambda` the map `A` amplifies a one-ulp change of an
/// intensity by many orders of magnitude, so even the correctly rounded fixed
/// point can miss a tight tolerance. The linearized defect over integer ulp
/// offsets is a closest-vector problem; a reduced basis with nearest-plane
/// rounding and a small neighbourhood search finds a double-precision vector
/// whose true defect is far smaller. Each candidate is re-evaluated with the
/// exact map before it is accepted.
pub(crate) fn ulp_polish(pb: &Problem, lambda: Vec<f64>, r: u32, t: f64, tol: f64) -> Vec<f64> {
    let m = pb.m();
    let n = m - 2;
    let Some(mut f) = fixed_point_defect(pb, &lambda, r, t) else { return lambda };
    let mut best = lambda;
    if sup(&f) < tol || n == 0 {
        return best;
    }
    let jacobian = |lam: &[f64]| -> Option<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(n, n);
        for c in 0..n {
            // The defect is stiff along some directions, so the step stays
            // small enough for the curvature to be negligible.
            let step = 1e-9 * lam[c + 1];
            let mut lo = lam.to_vec();
            let mut hi = lam.to_vec();
            lo[c + 1] -= step;
            hi[c + 1] += step;
            let f_lo = fixed_point_defect(pb, &lo, r, t)?;
            let f_hi = fixed_point_defect(pb, &hi, r, t)?;
            for row in 0..n {
                jac[(row, c)] = (f_hi[row] - f_lo[row]) / (hi[c + 1] - lo[c + 1]);
            }
        }
        Some(jac)
    };
    // Continuous Newton steps first, then the lattice search.
    for _ in 0..3 {
        let Some(jac) = jacobian(&best) else { return best };
        let Some(d) = jac.lu().solve(&DVector::from_iterator(n, f.iter().map(|v| -v))) else { return best };
        let mut cand = best.clone();
        for c in 0..n {
            cand[c + 1] += d[c];
        }
        match fixed_point_defect(pb, &cand, r, t) {
            Some(fc) if sup(&fc) < sup(&f) => {
                best = cand;
                f = fc;
            }
            _ => break,
        }
    }
    let Some(jac) = jacobian(&best) else { return best };
    for _ in 0..4 {
        if sup(&f) < tol {
            break;
        }
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|c| {
                let u = ulp_shift(best[c + 1], 1) - best[c + 1];
                (0..n).map(|row| jac[(row, c)] * u).collect()
            })
            .collect();
        let (basis, change) = lll(&cols);
        // Nearest-plane rounding of the target `-f` in the reduced basis.
        let mut star: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut v = basis[i].clone();
            for s in &star {
                let q = v.iter().zip(s).map(|(x, y)| x * y).sum::<f64>() / s.iter().map(|x| x * x).sum::<f64>();
                for (x, y) in v.iter_mut().zip(s) {
                    *x -= q * y;
                }
            }
            star.push(v);
        }
        let mut rest: Vec<f64> = f.iter().map(|v| -v).collect();
        let mut z = vec![0i64; n];
        for i in (0..n).rev() {
            let s2: f64 = star[i].iter().map(|x| x * x).sum();
            let q = (rest.iter().zip(&star[i]).map(|(x, y)| x * y).sum::<f64>() / s2).round();
            z[i] = q as i64;
            for (x, y) in rest.iter_mut().zip(&basis[i]) {
                *x -= q * y;
            }
        }
        // Rounding errs most along the longest Gram-Schmidt directions, so
        // the +-1 search is limited to those.
        let mut free: Vec<usize> = (0..n).collect();
        free.sort_by(|&a, &b| {
            let norm = |i: usize| star[i].iter().map(|x| x * x).sum::<f64>();
            norm(b).total_cmp(&norm(a))
        });
        free.truncate(SEARCH_DIRECTIONS);
        let mut ranked: Vec<(f64, Vec<i64>)> = Vec::new();
        for code in 0..3usize.pow(free.len() as u32) {
            let mut c = code;
            let mut g = f.clone();
            let mut zz = z.clone();
            for &i in &free {
                zz[i] += (c % 3) as i64 - 1;
                c /= 3;
            }
            for (i, &zi) in zz.iter().enumerate() {
                for (x, y) in g.iter_mut().zip(&basis[i]) {
                    *x += zi as f64 * y;
                }
            }
            let score = sup(&g);
            if ranked.len() < 16 || score < ranked[ranked.len() - 1].0 {
                let at = ranked.partition_point(|e| e.0 <= score);
                ranked.insert(at, (score, zz));
                ranked.truncate(16);
            }
        }
        let base = best.clone();
        let mut improved = false;
        for (_, zz) in ranked {
            let mut cand = base.clone();
            for c in 0..n {
                let offset: i64 = (0..n).map(|i| zz[i] * change[i][c]).sum();
                cand[c + 1] = ulp_shift(base[c + 1], offset);
            }
            if let Some(fc) = fixed_point_defect(pb, &cand, r, t) {
                if sup(&fc) < sup(&f) {
                    best = cand;
                    f = fc;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    best
}

/// Unknowns are the interior log-intensities followed by `x0`.
pub(crate) fn theta_from(lambda: &[f64], x0: f64) -> Vec<f64> {
    let m = lambda.len();
    let mut th: Vec<f64> = lambda[1..m - 1].iter().map(|l| l.ln()).collect();
    th.push(x0);
    th
}

pub(crate) fn split_theta(pb: &Problem, th: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = th.len();
    Some((pb.lambda_from_logs(&th[..n - 1])?, th[n - 1]))
}

fn gamma_equations(pb: &Problem, th: &[f64], t: f64, r: u32) -> Option<Vec<f64>> {
    let (lam, x0) = split_theta(pb, th)?;
    let marg = pb.gamma_marginal(&lam, x0, t / r as f64, r)?;
    pb.relative_mismatch(&marg)
}

fn rung_ok(out: &crate::numerics::NewtonOutcome) -> bool {
    out.converged || out.residual < 1e-10
}

/// Newton continuation over `r`: solves at each rung of `1, 2, 4, ..., r`
/// starting from the closed-form exponential solution, inserting
/// intermediate rungs when a step fails.
pub(crate) struct Ladder {
    pub theta: Vec<f64>,
    pub r: u32,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

impl Ladder {
    pub fn start(pb: &Problem, t: f64, cfg: &SolverConfig) -> Result<Self> {
        let exp = solve_exponential_problem(pb, t, cfg)?;
        Ok(Self { theta: theta_from(&exp.lambda, exp.x0), r: 1, iterations: 0, trace: vec![] })
    }

    /// Small stage counts can sit far from the exponential solution while
    /// larger ones are reachable, so a failed unit step is retried by first
    /// solving a higher rung and coming back down.
    fn detour(&mut self, pb: &Problem, t: f64, next: u32, opts: &NewtonOptions) -> Option<Vec<f64>> {
        for up in [2 * next, 4 * next, 8 * next] {
            let high = newton(|th| gamma_equations(pb, th, t, up), self.theta.clone(), opts);
            self.iterations += high.iterations;
            if !rung_ok(&high) {
                continue;
            }
            let back = newton(|th| gamma_equations(pb, th, t, next), high.x, opts);
            self.iterations += back.iterations;
            self.trace.push(back.residual);
            if rung_ok(&back) {
                return Some(back.x);
            }
        }
        None
    }

    /// Fallback when the ladder fails: solves at `r` without killing, then
    /// follows the solution while the killing is scaled back up to its
    /// actual size.
    pub fn killing_homotopy(pb: &Problem, t: f64, r: u32, cfg: &SolverConfig) -> Result<Self> {
        let scaled = |c: f64| {
            let mut inst = pb.inst.clone();
            inst.killing = KillingVector(inst.killing.0.iter().map(|k| k * c).collect());
            Problem::new(&inst, cfg.anchor_quantile)
        };
        let free = scaled(0.0)?;
        let mut ladder = Ladder::start(&free, t, cfg)?;
        ladder.advance(&free, t, r, cfg)?;
        let opts = NewtonOptions { tol: cfg.newton_tol, ..Default::default() };
        let (mut c, mut step) = (0.0, 0.25);
        while c < 1.0 {
            if step < 1e-4 {
                return Err(Error::NonConvergence {
                    reason: format!("killing continuation stalled at scale {c:.4}"),
                    trace: ladder.trace,
                });
            }
            let next = if c + step > 0.999 { 1.0 } else { c + step };
            let sub = scaled(next)?;
            let out = newton(|th| gamma_equations(&sub, th, t, r), ladder.theta.clone(), &opts);
            ladder.iterations += out.iterations;
            ladder.trace.push(out.residual);
            if rung_ok(&out) {
                ladder.theta = out.x;
                c = next;
                step = (2.0 * step).min(0.5);
            } else {
                step /= 2.0;
            }
        }
        Ok(ladder)
    }

    /// Advances from the current rung to `target`.
    pub fn advance(&mut self, pb: &Problem, t: f64, target: u32, cfg: &SolverConfig) -> Result<()> {
        let opts = NewtonOptions { tol: cfg.newton_tol, ..Default::default() };
        let mut pending = vec![target];
        while let Some(&next) = pending.last() {
            let out = newton(|th| gamma_equations(pb, th, t, next), self.theta.clone(), &opts);
            self.iterations += out.iterations;
            self.trace.push(out.residual);
            if rung_ok(&out) {
                self.theta = out.x;
                self.r = next;
                pending.pop();
            } else if next > self.r + 1 {
                pending.push(self.r + (next - self.r) / 2);
            } else if let Some(theta) = self.detour(pb, t, next, &opts) {
                self.theta = theta;
                self.r = next;
                pending.pop();
            } else {
                return Err(Error::NonConvergence {
                    reason: format!("Newton failed between r = {} and r = {next}", self.r),
                    trace: self.trace.clone(),
                });
            }
        }
        Ok(())
    }
}

pub fn solve_negbinomial(inst: &Instance, r: u32, cfg: &SolverConfig) -> Result<Solution> {
    let pb = Problem::new(inst, cfg.anchor_quantile)?;
    if r == 0 {
        return Err(Error::Law("stage count r must be >= 1".into()));
    }
    match inst.law.kind {
        LawKind::NegBinomial { r: lr, .. } | LawKind::Gamma { r: lr } if lr == r => {}
        LawKind::NegBinomial { .. } | LawKind::Gamma { .. } => {
            return Err(Error::Law(format!("instance law has a different stage count than r = {r}")))
        }
        _ => return Err(Error::Law("negative-binomial solver needs a negative-binomial or Gamma law".into())),
    }
    let t = inst.law.t;
    if r == 1 {
        let mut sol = solve_exponential_problem(&pb, t, cfg)?;
        sol.diagnostics.fixed_point_residual = Some(fixed_point_residual(&pb, &sol.lambda, 1, t));
        sol.diagnostics.alpha_bound = Some(1.0 / (1.0 + max_kill_rate(&pb.rates, &sol.lambda) * t));
        return Ok(sol);
    }
    let (lambda, x0, mut diag) = match cfg.method {
        FixedPointMethod::Newton => {
            let mut ladder = Ladder::start(&pb, t, cfg)?;
            if let Err(e) = ladder.advance(&pb, t, r, cfg) {
                ladder = Ladder::killing_homotopy(&pb, t, r, cfg).map_err(|_| e)?;
            }
            let (lam, x0) = split_theta(&pb, &ladder.theta).ok_or(Error::NoBracket)?;
            let diag = Diagnostics {
                method: "newton_r_continuation".into(),
                iterations: ladder.iterations,
                trace: ladder.trace,
                ..Default::default()
            };
            (lam, x0, diag)
        }
        FixedPointMethod::Picard { damping, anderson } => picard(&pb, t, r, damping, anderson, cfg)?,
    };
    let lambda = ulp_polish(&pb, lambda, r, t, POLISH_MARGIN * cfg.fixed_point_tol);
    let s = t / r as f64;
    let marg = pb.gamma_marginal(&lambda, x0, s, r).ok_or(Error::NoBracket)?;
    let alpha = 1.0 - marg.cemetery();
    let residual = pb.marginal_residual(&marg);
    let fp = fixed_point_residual(&pb, &lambda, r, t);
    let bound = (1.0 + max_kill_rate(&pb.rates, &lambda) * s).powi(-(r as i32));
    diag.residual = residual;
    diag.fixed_point_residual = Some(fp);
    diag.r_used = Some(r);
    diag.alpha_bound = Some(bound);
    diag.converged = residual < cfg.fixed_point_tol && fp < cfg.fixed_point_tol;
    if !diag.converged {
        return Err(Error::NonConvergence {
            reason: format!("marginal residual {residual:.3e}, fixed-point residual {fp:.3e}"),
            trace: diag.trace,
        });
    }
    if alpha < bound * (1.0 - 1e-12) {
        return Err(Error::Residual { what: "survival lower bound", residual: bound - alpha, tol: 0.0 });
    }
    pb.finish(lambda, alpha, x0, diag)
}

fn anderson_step(xs: &[Vec<f64>], gs: &[Vec<f64>], damping: f64) -> Option<Vec<f64>> {
    let k = xs.len();
    let n = xs[0].len();
    let f: Vec<Vec<f64>> = (0..k).map(|i| gs[i].iter().zip(&xs[i]).map(|(g, x)| g - x).collect()).collect();
    let cols = k - 1;
    let df = DMatrix::from_fn(n, cols, |r, c| f[c + 1][r] - f[c][r]);
    let rhs = DVector::from_column_slice(&f[k - 1]);
    let gamma = df.svd(true, true).solve(&rhs, 1e-12).ok()?;
    let mut out = vec![0.0; n];
    for (r, o) in out.iter_mut().enumerate() {
        let mut xa = xs[k - 1][r];
        let mut ga = gs[k - 1][r];
        for c in 0..cols {
            xa -= gamma[c] * (xs[c + 1][r] - xs[c][r]);
            ga -= gamma[c] * (gs[c + 1][r] - gs[c][r]);
        }
        *o = (1.0 - damping) * xa + damping * ga;
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

fn picard(
    pb: &Problem,
    t: f64,
    r: u32,
    damping: f64,
    anderson: bool,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, f64, Diagnostics)> {
    let s = t / r as f64;
    let m = pb.m();
    let exp = solve_exponential_problem(pb, t, cfg)?;
    let mut levels = Vec::new();
    let mut eps = 1e-2;
    while eps >= cfg.eps_floor * (1.0 - 1e-9) {
        levels.push(eps);
        eps /= 10.0;
    }
    levels.push(0.0);
    let mut state = FixedPointState { lambda: exp.lambda, eps: levels[0], damping, residuals: vec![], c_value: 1.0 };
    let mut iterations = 0;
    let mut floor_reached = None;
    for &eps in &levels {
        state.eps = eps;
        state.damping = damping;
        let mut prev = f64::INFINITY;
        let (mut xs, mut gs): (Vec<Vec<f64>>, Vec<Vec<f64>>) = (vec![], vec![]);
        let mut converged = false;
        for _ in 0..cfg.max_iter {
            iterations += 1;
            let h = h_iterate(&pb.rates, pb.p(), &state.lambda, s, r);
            if eps > 0.0 {
                state.c_value = c_value(&h, eps);
            }
            let a = apply_a_eps(pb, &state.lambda, eps, r, t);
            let res = match &a {
                Ok(a) => a.iter().zip(&state.lambda).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
                Err(_) => f64::INFINITY,
            };
            state.residuals.push(res);
            if res < cfg.fixed_point_tol {
                converged = true;
                break;
            }
            if res > prev {
                state.damping = (state.damping * 0.5).max(1e-4);
                xs.clear();
                gs.clear();
            }
            prev = res;
            let Ok(a) = a else { break };
            let inner = |v: &[f64]| v[1..m - 1].to_vec();
            xs.push(inner(&state.lambda));
            gs.push(inner(&a));
            if xs.len() > 4 {
                xs.remove(0);
                gs.remove(0);
            }
            let mixed = if anderson && xs.len() >= 2 {
                anderson_step(&xs, &gs, state.damping)
            } else {
                None
            };
            let mixed = mixed.unwrap_or_else(|| {
                (1..m - 1).map(|k| (1.0 - state.damping) * state.lambda[k] + state.damping * a[k]).collect()
            });
            for (k, v) in mixed.into_iter().enumerate() {
                state.lambda[k + 1] = v.clamp(LAMBDA_FLOOR, LAMBDA_CAP);
            }
        }
        if !converged {
            let tail = state.residuals.iter().rev().take(10).rev().cloned().collect();
            return Err(Error::NonConvergence {
                reason: format!("damped iteration stalled at eps = {eps:e} after {iterations} iterations"),
                trace: tail,
            });
        }
        if eps > 0.0 {
            floor_reached = Some(eps);
        }
    }
    let h = h_iterate(&pb.rates, pb.p(), &state.lambda, s, r);
    let g = solve_g(pb.kappa(), &h, &pb.rates.kt, s)?;
    let diag = Diagnostics {
        method: if anderson { "anderson".into() } else { "damped_picard".into() },
        iterations,
        eps_floor: floor_reached,
        trace: state.residuals.iter().rev().take(50).rev().cloned().collect(),
        ..Default::default()
    };
    Ok((state.lambda, g.x0, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeLaw;

    fn ex(kill: f64, r: u32) -> Instance {
        Instance::new(vec![0.0, 1.0, 2.0], vec![0.25, 0.5, 0.25], vec![0.0], vec![kill], TimeLaw::gamma(1.0, r))
    }

    #[test]
    fn projection_examples() {
        let out = project_eps(&[1.0, -1.0], 0.5);
        assert!((out[0] - 4.0 / 7.0).abs() < 1e-15 && (out[1] - 3.0 / 7.0).abs() < 1e-15);
        assert!((c_value(&[1.0, -1.0], 0.5) - 7.0 / 6.0).abs() < 1e-15);
        let p = [0.2, 0.3, 0.5];
        let out = project_eps(&p, 0.1);
        assert!(out.iter().zip(p).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn h_iterate_trivial_cases() {
        let pb = Problem::new(&ex(1.0, 2), 0.25).unwrap();
        let p = pb.p().to_vec();
        assert_eq!(h_iterate(&pb.rates, &p, &[0.0; 3], 0.5, 5), p);
        assert_eq!(h_iterate(&pb.rates, &p, &[0.0, 1.0, 0.0], 0.5, 1), p);
        let h = h_iterate(&pb.rates, &p, &[0.0, 1.0, 0.0], 0.5, 2);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn h_iterate_matches_dense_product() {
        let pb = Problem::new(&ex(1.0, 2), 0.25).unwrap();
        let lam = [0.0, 3.0, 0.0];
        let n = crate::chain::resolvent_from_rates(&pb.rates, &lam, 0.5).unwrap().restriction();
        let p = DMatrix::from_row_slice(1, 3, pb.p());
        let raw = &p * &n * &n;
        let want: Vec<f64> = raw.iter().map(|v| v / raw.sum()).collect();
        let got = h_iterate(&pb.rates, pb.p(), &lam, 0.5, 3);
        assert!(got.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn single_stage_matches_exponential() {
        let cfg = SolverConfig::default();
        let a = solve_negbinomial(&ex(1.0, 1), 1, &cfg).unwrap();
        let b = crate::solvers::solve_exponential(&ex(1.0, 1).with_law(TimeLaw::exponential(1.0)), &cfg).unwrap();
        assert_eq!(a.lambda, b.lambda);
        assert_eq!(a.alpha, b.alpha);
    }

    #[test]
    fn fixed_point_at_exponential_solution_for_one_stage() {
        let pb = Problem::new(&ex(0.0, 1), 0.25).unwrap();
        let a = apply_a_eps(&pb, &[0.0, 1.0, 0.0], 0.1, 1, 1.0).unwrap();
        assert!((a[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn four_stages_without_killing() {
        let s = solve_negbinomial(&ex(0.0, 4), 4, &SolverConfig::default()).unwrap();
        assert_eq!(s.alpha, 1.0);
        assert!(s.diagnostics.residual < 1e-8);
        assert!(s.diagnostics.fixed_point_residual.unwrap() < 1e-8);
    }

    #[test]
    fn four_stages_with_killing_respects_bound() {
        let s = solve_negbinomial(&ex(1.0, 4), 4, &SolverConfig::default()).unwrap();
        let bound = (1.0 + s.lambda[1] / 4.0).powi(-4);
        assert!(s.alpha >= bound && s.alpha <= 1.0);
        assert!(s.diagnostics.residual < 1e-8);
    }

    #[test]
    fn picard_and_anderson_reach_the_same_fixed_point() {
        let newton = solve_negbinomial(&ex(1.0, 2), 2, &SolverConfig::default()).unwrap();
        for anderson in [false, true] {
            let cfg = SolverConfig { method: FixedPointMethod::Picard { damping: 0.5, anderson }, ..Default::default() };
            let s = solve_negbinomial(&ex(1.0, 2), 2, &cfg).unwrap();
            assert!((s.lambda[1] - newton.lambda[1]).abs() < 1e-7);
            assert!(s.diagnostics.eps_floor.is_some());
        }
    }

    #[test]
    fn stage_count_mismatch_is_rejected() {
        assert!(matches!(solve_negbinomial(&ex(0.0, 4), 2, &SolverConfig::default()), Err(Error::Law(_))));
    }
}
