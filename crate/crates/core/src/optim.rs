//! Box-constrained local optimizers driven by finite-difference derivatives.
//!
//! `minimize_bfgs` is a projected quasi-Newton method for smooth-ish scalar
//! objectives; `levenberg_marquardt` solves nonlinear least squares. Both keep
//! every iterate inside the box.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Axis-aligned box `lo <= x <= hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension { expected: lo.len(), got: hi.len() });
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(Error::InvalidParameter {
                    name: "bounds",
                    reason: format!("component {i} has empty or non-finite range [{l}, {h}]"),
                });
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, l), h) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn projected(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.project(&mut out);
        out
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| *v >= *l && *v <= *h)
    }

    /// Uniform draw from the box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| if l == h { *l } else { rng.random_range(*l..=*h) })
            .collect()
    }

    fn is_fixed(&self, i: usize) -> bool {
        self.lo[i] == self.hi[i]
    }
}

/// Gradient by central differences, falling back to one-sided differences
/// against a bound. Fixed coordinates get a zero derivative.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], bounds: &Bounds, h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        if bounds.is_fixed(i) {
            continue;
        }
        let up = (x[i] + h).min(bounds.hi[i]);
        let down = (x[i] - h).max(bounds.lo[i]);
        if up <= down {
            continue;
        }
        probe[i] = up;
        let fu = f(&probe);
        probe[i] = down;
        let fd = f(&probe);
        probe[i] = x[i];
        g[i] = (fu - fd) / (up - down);
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient norm drops below this.
    pub grad_tol: f64,
    /// Relative objective change that ends the search.
    pub f_tol: f64,
    pub fd_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 100, grad_tol: 1e-8, f_tol: 1e-12, fd_step: 1e-6 }
    }
}

/// Outcome of a local search.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMin {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
}

/// Projected BFGS with Armijo backtracking along the projection arc.
///
/// The inverse-Hessian approximation acts on free coordinates only and is
/// reset whenever the active set changes. A non-finite objective at the start
/// point returns immediately.
pub fn minimize_bfgs<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], bounds: &Bounds, opts: &BfgsOptions) -> LocalMin {
    let n = x0.len();
    let mut x = bounds.projected(x0);
    let mut fx = f(&x);
    if !fx.is_finite() {
        return LocalMin { x, f: fx, iterations: 0 };
    }
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut g = fd_gradient(&f, &x, bounds, opts.fd_step);
    let mut prev_active: Vec<bool> = vec![false; n];
    let mut iterations = 0;

    for it in 0..opts.max_iter {
        iterations = it + 1;
        let active: Vec<bool> = (0..n)
            .map(|i| {
                bounds.is_fixed(i)
                    || (x[i] <= bounds.lo[i] && g[i] > 0.0)
                    || (x[i] >= bounds.hi[i] && g[i] < 0.0)
            })
            .collect();
        let pg_norm = (0..n).filter(|i| !active[*i]).map(|i| g[i] * g[i]).sum::<f64>().sqrt();
        if pg_norm < opts.grad_tol {
            break;
        }
        if active != prev_active {
            h_inv = DMatrix::identity(n, n);
            prev_active = active.clone();
        }

        let gv = DVector::from_iterator(n, (0..n).map(|i| if active[i] { 0.0 } else { g[i] }));
        let mut d = -(&h_inv * &gv);
        for i in 0..n {
            if active[i] {
                d[i] = 0.0;
            }
        }
        if d.dot(&gv) >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            d = -gv.clone();
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = (0..n).map(|i| x[i] + t * d[i]).collect();
            bounds.project(&mut xn);
            let fxn = f(&xn);
            let decrease: f64 = (0..n).map(|i| g[i] * (xn[i] - x[i])).sum();
            if fxn.is_finite() && fxn <= fx + 1e-4 * decrease && xn != x {
                accepted = Some((xn, fxn));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fxn)) = accepted else { break };

        let gn = fd_gradient(&f, &xn, bounds, opts.fd_step);
        let s = DVector::from_iterator(n, (0..n).map(|i| if active[i] { 0.0 } else { xn[i] - x[i] }));
        let y = DVector::from_iterator(n, (0..n).map(|i| if active[i] { 0.0 } else { gn[i] - g[i] }));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s hy' + hy s') + (rho^2 y'Hy + rho) s s'
            h_inv -= rho * (&s * hy.transpose() + &hy * s.transpose());
            h_inv += (rho * rho * yhy + rho) * (&s * s.transpose());
        }

        let converged = (fx - fxn).abs() <= opts.f_tol * (1.0 + fx.abs());
        x = xn;
        fx = fxn;
        g = gn;
        if converged {
            break;
        }
    }
    LocalMin { x, f: fx, iterations }
}

/// Runs [`minimize_bfgs`] from every start and keeps the lowest finite
/// objective; ties go to the earliest start.
pub fn multistart_bfgs<F: Fn(&[f64]) -> f64>(
    f: F,
    starts: &[Vec<f64>],
    bounds: &Bounds,
    opts: &BfgsOptions,
) -> Option<LocalMin> {
    let mut best: Option<LocalMin> = None;
    for s in starts {
        let r = minimize_bfgs(&f, s, bounds, opts);
        if !r.f.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| r.f < b.f) {
            best = Some(r);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative forward-difference step for the Jacobian.
    pub fd_step: f64,
    /// Relative step size that ends the search.
    pub x_tol: f64,
    /// Gradient infinity norm that ends the search.
    pub g_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iter: 200, fd_step: 1e-7, x_tol: 1e-15, g_tol: 1e-30 }
    }
}

/// Least-squares fit with the Jacobian at the solution.
#[derive(Debug, Clone, PartialEq)]
pub struct LsqFit {
    pub x: Vec<f64>,
    pub residual: Vec<f64>,
    /// Residual sum of squares.
    pub rss: f64,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
}

/// Forward-difference Jacobian of `r` at `x`, stepping into the box.
pub fn fd_jacobian<R: Fn(&[f64]) -> Vec<f64>>(r: &R, x: &[f64], r0: &[f64], bounds: &Bounds, rel: f64) -> DMatrix<f64> {
    let m = r0.len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut probe = x.to_vec();
    for j in 0..n {
        if bounds.is_fixed(j) {
            continue;
        }
        let mut h = rel * x[j].abs().max(1.0);
        if x[j] + h > bounds.hi[j] {
            h = -h;
        }
        probe[j] = x[j] + h;
        let rj = r(&probe);
        probe[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (rj[i] - r0[i]) / h;
        }
    }
    jac
}

/// Projected Levenberg-Marquardt with Marquardt diagonal scaling.
pub fn levenberg_marquardt<R: Fn(&[f64]) -> Vec<f64>>(r: R, x0: &[f64], bounds: &Bounds, opts: &LmOptions) -> LsqFit {
    let n = x0.len();
    let mut x = bounds.projected(x0);
    let mut res = r(&x);
    let mut rss: f64 = res.iter().map(|v| v * v).sum();
    let mut jac = fd_jacobian(&r, &x, &res, bounds, opts.fd_step);
    let mut mu = -1.0;
    let mut iterations = 0;

    'outer: for it in 0..opts.max_iter {
        iterations = it + 1;
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * DVector::from_column_slice(&res);
        if g.amax() <= opts.g_tol || rss == 0.0 {
            break;
        }
        let diag: Vec<f64> = (0..n).map(|i| a[(i, i)].max(1e-12 * a.diagonal().amax()).max(f64::MIN_POSITIVE)).collect();
        if mu < 0.0 {
            mu = 1e-3;
        }
        loop {
            let mut lhs = a.clone();
            for i in 0..n {
                lhs[(i, i)] += mu * diag[i];
            }
            let Some(step) = lhs.cholesky().map(|c| c.solve(&(-&g))) else {
                mu *= 4.0;
                if mu > 1e20 {
                    break 'outer;
                }
                continue;
            };
            let mut xn: Vec<f64> = (0..n).map(|i| x[i] + step[i]).collect();
            bounds.project(&mut xn);
            let resn = r(&xn);
            let rssn: f64 = resn.iter().map(|v| v * v).sum();
            if rssn.is_finite() && rssn < rss {
                let dx: f64 = (0..n).map(|i| (xn[i] - x[i]).powi(2)).sum::<f64>().sqrt();
                let xn_norm: f64 = xn.iter().map(|v| v * v).sum::<f64>().sqrt();
                x = xn;
                res = resn;
                rss = rssn;
                jac = fd_jacobian(&r, &x, &res, bounds, opts.fd_step);
                mu = (mu / 3.0).max(1e-12);
                if dx <= opts.x_tol * (xn_norm + opts.x_tol) {
                    break 'outer;
                }
                break;
            }
            mu *= 2.0;
            if mu > 1e20 {
                break 'outer;
            }
        }
    }
    LsqFit { x, residual: res, rss, jacobian: jac, iterations }
}
