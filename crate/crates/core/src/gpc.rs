//! Binary Gaussian-process classifier with a logistic link, fitted by the
//! Laplace approximation.
//!
//! Inputs are standardized per dimension before the kernel is evaluated; the
//! affine map is stored with the posterior so callers always pass raw
//! controller parameters.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ident::LabeledDataset;

/// Largest diagonal jitter tried before the kernel matrix is declared
/// indefinite.
pub const MAX_JITTER: f64 = 1e-4;

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log logistic(x)` without overflow.
fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Per-dimension affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for constant dimensions.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(inputs: &[&[f64]]) -> Result<Self> {
        let Some(first) = inputs.first() else { return Err(Error::EmptyDataset) };
        let d = first.len();
        let n = inputs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in inputs {
            for (m, v) in mean.iter_mut().zip(x.iter()) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; d];
        for x in inputs {
            for ((s, v), m) in scale.iter_mut().zip(x.iter()).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Squared-exponential kernel `s2 exp(-|x - x'|^2_L / 2)` on standardized
/// inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub variance: f64,
    pub length_scales: Vec<f64>,
    /// Initial diagonal regularizer; doubled on Cholesky failure.
    pub jitter: f64,
}

impl KernelSpec {
    pub fn isotropic(dim: usize, length_scale: f64) -> Self {
        Self { variance: 1.0, length_scales: vec![length_scale; dim], jitter: 1e-8 }
    }

    /// Unit variance and a common length scale equal to the median pairwise
    /// distance between standardized training inputs.
    pub fn median_heuristic(data: &LabeledDataset) -> Result<Self> {
        let inputs = data.inputs();
        let st = Standardizer::fit(&inputs)?;
        let z: Vec<Vec<f64>> = inputs.iter().map(|x| st.apply(x)).collect();
        let mut dists = Vec::with_capacity(z.len() * z.len().saturating_sub(1) / 2);
        for i in 0..z.len() {
            for j in 0..i {
                dists.push(euclidean(&z[i], &z[j]));
            }
        }
        dists.sort_by(f64::total_cmp);
        let med = match dists.len() {
            0 => 1.0,
            n if n % 2 == 1 => dists[n / 2],
            n => 0.5 * (dists[n / 2 - 1] + dists[n / 2]),
        };
        Ok(Self::isotropic(data.dim(), if med > 0.0 { med } else { 1.0 }))
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(Error::InvalidParameter { name: "variance", reason: format!("must be positive, got {}", self.variance) });
        }
        if self.length_scales.len() != dim {
            return Err(Error::Dimension { expected: dim, got: self.length_scales.len() });
        }
        if self.length_scales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidParameter { name: "length_scales", reason: "must be positive".into() });
        }
        if !(self.jitter > 0.0 && self.jitter <= MAX_JITTER) {
            return Err(Error::InvalidParameter { name: "jitter", reason: format!("must lie in (0, {MAX_JITTER}]") });
        }
        Ok(())
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).zip(&self.length_scales).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
        self.variance * (-0.5 * r2).exp()
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Newton iteration limits for the mode search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        Self { max_iter: 100, grad_tol: 1e-8 }
    }
}

/// Laplace posterior over the latent function.
#[derive(Debug, Clone)]
pub struct GpcPosterior {
    kernel: KernelSpec,
    standardizer: Standardizer,
    /// Standardized training inputs.
    z: Vec<Vec<f64>>,
    targets: Vec<f64>,
    /// Latent mode.
    f_hat: DVector<f64>,
    /// `d log p(y | f) / df` at the mode.
    grad_loglik: DVector<f64>,
    sqrt_w: DVector<f64>,
    /// Lower Cholesky factor of `I + W^1/2 K W^1/2`.
    l_b: DMatrix<f64>,
    /// Jitter actually added to the kernel diagonal.
    pub jitter_used: f64,
    pub iterations: usize,
    /// `|grad log p(y|f) - K^-1 f|` at the mode.
    pub grad_norm: f64,
    /// Laplace approximation of the log marginal likelihood.
    pub log_marginal: f64,
}

/// Latent moments and class-1 probability at one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentPrediction {
    pub mu_a: f64,
    pub sigma2_a: f64,
    pub p: f64,
}

/// `logistic(mu / sqrt(1 + pi s2 / 8))`.
pub fn moderated_probability(mu: f64, sigma2: f64) -> f64 {
    logistic(mu / (1.0 + PI * sigma2 / 8.0).sqrt())
}

fn kernel_matrix(kernel: &KernelSpec, z: &[Vec<f64>]) -> DMatrix<f64> {
    let n = z.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(&z[i], &z[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Adds the smallest jitter from the doubling ladder that makes `k` factor.
fn regularize(k: &mut DMatrix<f64>, start: f64) -> Result<f64> {
    let mut jitter = start;
    loop {
        let mut trial = k.clone();
        for i in 0..trial.nrows() {
            trial[(i, i)] += jitter;
        }
        if trial.clone().cholesky().is_some() {
            *k = trial;
            return Ok(jitter);
        }
        if jitter >= MAX_JITTER {
            return Err(Error::NotPositiveDefinite(jitter));
        }
        jitter = (jitter * 2.0).min(MAX_JITTER);
    }
}

struct NewtonState {
    f: DVector<f64>,
    a: DVector<f64>,
    objective: f64,
}

fn laplace_objective(a: &DVector<f64>, f: &DVector<f64>, targets: &[f64]) -> f64 {
    let loglik: f64 = f.iter().zip(targets).map(|(f, t)| log_logistic((2.0 * t - 1.0) * f)).sum();
    loglik - 0.5 * a.dot(f)
}

/// Fits the Laplace posterior for `data` with `kernel`.
///
/// Damped Newton on `log p(y|f) - f' K^-1 f / 2` in the `B = I + W^1/2 K W^1/2`
/// parameterization. The mode is accepted when the objective gradient norm
/// drops below `opts.grad_tol`.
pub fn fit_laplace(data: &LabeledDataset, kernel: &KernelSpec) -> Result<GpcPosterior> {
    fit_laplace_with(data, kernel, &LaplaceOptions::default())
}

pub fn fit_laplace_with(data: &LabeledDataset, kernel: &KernelSpec, opts: &LaplaceOptions) -> Result<GpcPosterior> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !data.has_both_classes() {
        return Err(Error::SingleClass(data.labels()[0]));
    }
    kernel.validate(data.dim())?;
    let inputs = data.inputs();
    let standardizer = Standardizer::fit(&inputs)?;
    let z: Vec<Vec<f64>> = inputs.iter().map(|x| standardizer.apply(x)).collect();
    let targets: Vec<f64> = data.labels().iter().map(|l| f64::from(*l)).collect();
    let n = z.len();
    let mut k = kernel_matrix(kernel, &z);
    let jitter_used = regularize(&mut k, kernel.jitter)?;

    let mut st = NewtonState { f: DVector::zeros(n), a: DVector::zeros(n), objective: 0.0 };
    st.objective = laplace_objective(&st.a, &st.f, &targets);
    let mut iterations = 0;
    let mut grad_norm: f64;
    loop {
        let pi = st.f.map(logistic);
        let grad_loglik = DVector::from_iterator(n, targets.iter().zip(pi.iter()).map(|(t, p)| t - p));
        grad_norm = (&grad_loglik - &st.a).norm();
        if grad_norm < opts.grad_tol {
            break;
        }
        if iterations >= opts.max_iter {
            return Err(Error::NoConvergence { iterations, grad_norm });
        }
        iterations += 1;

        let w = pi.map(|p| p * (1.0 - p));
        let sqrt_w = w.map(f64::sqrt);
        let chol_b = factor_b(&k, &sqrt_w)?;
        let b = w.component_mul(&st.f) + &grad_loglik;
        let kb = &k * &b;
        let inner = chol_b.solve(&sqrt_w.component_mul(&kb));
        let a_newton = &b - sqrt_w.component_mul(&inner);

        let step = &a_newton - &st.a;
        let mut s = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let a = &st.a + s * &step;
            let f = &k * &a;
            let obj = laplace_objective(&a, &f, &targets);
            if obj >= st.objective {
                moved = obj > st.objective || (&a - &st.a).norm() > 0.0;
                st = NewtonState { f, a, objective: obj };
                break;
            }
            s *= 0.5;
        }
        if !moved {
            // Near the mode the objective no longer resolves ascent at working
            // precision; the full Newton step is kept while it shrinks the
            // gradient.
            let f = &k * &a_newton;
            let g_new = objective_gradient(&a_newton, &f, &targets).norm();
            if !(g_new < grad_norm) {
                return Err(Error::NoConvergence { iterations, grad_norm });
            }
            let objective = laplace_objective(&a_newton, &f, &targets);
            st = NewtonState { f, a: a_newton, objective };
        }
    }

    let pi = st.f.map(logistic);
    let grad_loglik = DVector::from_iterator(n, targets.iter().zip(pi.iter()).map(|(t, p)| t - p));
    let sqrt_w = pi.map(|p| (p * (1.0 - p)).sqrt());
    let chol_b = factor_b(&k, &sqrt_w)?;
    let l_b = chol_b.l();
    let log_det_half: f64 = l_b.diagonal().iter().map(|v| v.ln()).sum();
    let log_marginal = st.objective - log_det_half;
    Ok(GpcPosterior {
        kernel: kernel.clone(),
        standardizer,
        z,
        targets,
        f_hat: st.f,
        grad_loglik,
        sqrt_w,
        l_b,
        jitter_used,
        iterations,
        grad_norm,
        log_marginal,
    })
}

/// `grad log p(y|f) - a`, the gradient of the objective in `a`-space
/// premultiplied by `K^-1`.
fn objective_gradient(a: &DVector<f64>, f: &DVector<f64>, targets: &[f64]) -> DVector<f64> {
    DVector::from_iterator(f.len(), targets.iter().zip(f.iter()).map(|(t, fi)| t - logistic(*fi))) - a
}

fn factor_b(k: &DMatrix<f64>, sqrt_w: &DVector<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = k.nrows();
    let mut b = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] += sqrt_w[i] * k[(i, j)] * sqrt_w[j];
        }
    }
    b.cholesky().ok_or(Error::NotPositiveDefinite(0.0))
}

impl GpcPosterior {
    pub fn dim(&self) -> usize {
        self.standardizer.mean.len()
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    /// Latent mode at the training inputs.
    pub fn mode(&self) -> &[f64] {
        self.f_hat.as_slice()
    }

    /// Training targets in `{0, 1}`.
    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Predictive latent moments and moderated class-1 probability.
    pub fn predict(&self, theta: &[f64]) -> LatentPrediction {
        let zq = self.standardizer.apply(theta);
        let ks = DVector::from_iterator(self.z.len(), self.z.iter().map(|z| self.kernel.eval(&zq, z)));
        let mu_a = ks.dot(&self.grad_loglik);
        let mut v = self.sqrt_w.component_mul(&ks);
        self.l_b.solve_lower_triangular_mut(&mut v);
        let sigma2_a = (self.kernel.variance - v.dot(&v)).max(0.0);
        LatentPrediction { mu_a, sigma2_a, p: moderated_probability(mu_a, sigma2_a) }
    }

    /// `n` independent draws from the Gaussian latent predictive at `theta`.
    pub fn sample_latent(&self, theta: &[f64], n: usize, seed: u64) -> Vec<f64> {
        let pred = self.predict(theta);
        let sd = pred.sigma2_a.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                pred.mu_a + sd * z
            })
            .collect()
    }
}
