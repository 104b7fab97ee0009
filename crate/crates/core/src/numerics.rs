//! Small numerical kernels: tridiagonal LU, double-double arithmetic and a
//! damped Newton iteration with a forward-difference Jacobian.

use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};

/// LU factors of a tridiagonal matrix, computed without pivoting.
///
/// Intended for diagonally dominant systems, where elimination without
/// pivoting is backward stable.
#[derive(Debug, Clone)]
pub struct TridiagLu {
    mult: Vec<f64>,
    pivot: Vec<f64>,
    upper: Vec<f64>,
}

impl TridiagLu {
    /// `sub[i]` is entry (i, i-1) (ignored at i = 0), `diag[i]` is (i, i),
    /// `sup[i]` is (i, i+1) (ignored at the last row).
    pub fn factor(sub: &[f64], diag: &[f64], sup: &[f64]) -> Option<Self> {
        let n = diag.len();
        let mut mult = vec![0.0; n];
        let mut pivot = vec![0.0; n];
        pivot[0] = diag[0];
        if pivot[0] == 0.0 || !pivot[0].is_finite() {
            return None;
        }
        for i in 1..n {
            mult[i] = sub[i] / pivot[i - 1];
            pivot[i] = diag[i] - mult[i] * sup[i - 1];
            if pivot[i] == 0.0 || !pivot[i].is_finite() {
                return None;
            }
        }
        Some(Self { mult, pivot, upper: sup[..n.saturating_sub(1)].to_vec() })
    }

    pub fn len(&self) -> usize {
        self.pivot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pivot.is_empty()
    }

    /// Overwrites `rhs` with the solution.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.len();
        for i in 1..n {
            rhs[i] -= self.mult[i] * rhs[i - 1];
        }
        rhs[n - 1] /= self.pivot[n - 1];
        for i in (0..n - 1).rev() {
            rhs[i] = (rhs[i] - self.upper[i] * rhs[i + 1]) / self.pivot[i];
        }
    }
}

/// Unevaluated sum `hi + lo` carrying about 106 bits of precision.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Self {
        Dd::new(x)
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::new(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::new(q3)
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub fd_rel_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-13, max_iter: 100, fd_rel_step: 1e-7 }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Damped Newton on `f(x) = 0` with a forward-difference Jacobian and a
/// backtracking line search on the sup norm.
///
/// `f` returns `None` when `x` lies outside its domain; the line search then
/// shortens the step.
pub fn newton<F>(mut f: F, x0: Vec<f64>, opts: &NewtonOptions) -> NewtonOutcome
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let n = x0.len();
    let mut x = x0;
    let mut trace = Vec::new();
    let Some(mut fx) = f(&x) else {
        return NewtonOutcome { x, residual: f64::INFINITY, iterations: 0, converged: false, trace };
    };
    let mut nf = sup_norm(&fx);
    for it in 0..opts.max_iter {
        trace.push(nf);
        if nf < opts.tol {
            return NewtonOutcome { x, residual: nf, iterations: it, converged: true, trace };
        }
        let mut jac = DMatrix::<f64>::zeros(fx.len(), n);
        let mut xp = x.clone();
        for k in 0..n {
            let hstep = opts.fd_rel_step * x[k].abs().max(1.0);
            xp[k] = x[k] + hstep;
            let mut fp = f(&xp);
            let mut step = hstep;
            if fp.is_none() {
                xp[k] = x[k] - hstep;
                fp = f(&xp);
                step = -hstep;
            }
            xp[k] = x[k];
            let Some(fp) = fp else {
                return NewtonOutcome { x, residual: nf, iterations: it, converged: false, trace };
            };
            for i in 0..fx.len() {
                jac[(i, k)] = (fp[i] - fx[i]) / step;
            }
        }
        let rhs = DVector::from_iterator(fx.len(), fx.iter().map(|v| -v));
        let Some(dir) = jac.lu().solve(&rhs) else {
            return NewtonOutcome { x, residual: nf, iterations: it, converged: false, trace };
        };
        if dir.iter().any(|d| !d.is_finite()) {
            return NewtonOutcome { x, residual: nf, iterations: it, converged: false, trace };
        }
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let cand: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            if let Some(fc) = f(&cand) {
                let nc = sup_norm(&fc);
                if nc < (1.0 - 1e-4 * t) * nf {
                    x = cand;
                    fx = fc;
                    nf = nc;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            let converged = nf < opts.tol;
            return NewtonOutcome { x, residual: nf, iterations: it + 1, converged, trace };
        }
    }
    trace.push(nf);
    let converged = nf < opts.tol;
    NewtonOutcome { x, residual: nf, iterations: opts.max_iter, converged, trace }
}
