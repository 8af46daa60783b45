//! Counterfactual search for a minimal, plausible retuning that flips the
//! step-test label from fail to pass.
//!
//! The search alternates penalty-weighted Expected-Improvement proposals, each
//! validated by a real step test, with a minimum-distance sample of the
//! surrogate decision boundary. The penalty weight grows geometrically in the
//! exponent within each inner loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::control::{ControllerTheta, DiscretePlant, SimConfig};
use crate::error::{Error, Result};
use crate::gpc::{fit_laplace, logistic, GpcPosterior, KernelSpec};
use crate::ident::{step_test_label, LabeledDataset, Provenance};
use crate::metrics::SpecThresholds;
use crate::optim::{multistart_bfgs, BfgsOptions, Bounds};
use crate::par::Execution;
use crate::seed;

pub mod lof;

pub use lof::{LofModel, StandardizedLof};

/// Penalty weights never exceed this; keeps `lambda * |f - 0.5|` finite.
pub const LAMBDA_CEILING: f64 = 1e100;

/// Cost terms, actionability mask, plausibility gate and trust region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub theta0: Vec<f64>,
    /// Per-component weights of the standardized L1 distance.
    pub distance_weights: Vec<f64>,
    /// Sparsity weight.
    pub beta: f64,
    /// Per-component weights of the raw L1 sparsity term.
    pub sparsity_weights: Vec<f64>,
    /// `true` marks an operator-adjustable component.
    pub mask: Vec<bool>,
    pub lof_k: usize,
    /// Scores above this are outliers and cost `+inf`.
    pub lof_threshold: f64,
    pub lof_enabled: bool,
    /// Trust-region half-width is `max(trust_abs, trust_rel * |theta0_j|)`.
    pub trust_abs: f64,
    pub trust_rel: f64,
    /// Lower bound for filter time constants inside the trust region.
    pub tf_min: f64,
}

impl CostSpec {
    pub fn new(theta0: &[f64]) -> Self {
        let n = theta0.len();
        Self {
            theta0: theta0.to_vec(),
            distance_weights: vec![1.0; n],
            beta: 0.1,
            sparsity_weights: vec![1.0; n],
            mask: vec![true; n],
            lof_k: 10,
            lof_threshold: 1.5,
            lof_enabled: true,
            trust_abs: 0.5,
            trust_rel: 0.5,
            tf_min: 1e-3,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        ControllerTheta::from_slice(&self.theta0)?.validate()?;
        for (name, len) in [
            ("distance_weights", self.distance_weights.len()),
            ("sparsity_weights", self.sparsity_weights.len()),
            ("mask", self.mask.len()),
        ] {
            if len != n {
                return Err(Error::InvalidParameter { name, reason: format!("length {len} does not match theta0 length {n}") });
            }
        }
        if self.distance_weights.iter().chain(&self.sparsity_weights).any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter { name: "weights", reason: "must be finite and >= 0".into() });
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidParameter { name: "beta", reason: format!("must be >= 0, got {}", self.beta) });
        }
        if self.lof_k == 0 || !(self.lof_threshold > 0.0) {
            return Err(Error::InvalidParameter { name: "lof", reason: "k must be >= 1 and threshold positive".into() });
        }
        if !(self.trust_abs >= 0.0 && self.trust_rel >= 0.0 && self.tf_min > 0.0) {
            return Err(Error::InvalidParameter { name: "trust_region", reason: "radii must be >= 0 and tf_min > 0".into() });
        }
        self.trust_region().map(|_| ())
    }

    /// Box `theta0 +/- max(trust_abs, trust_rel |theta0|)` intersected with
    /// nonnegative gains and `T_f >= tf_min`; frozen components collapse to
    /// `theta0`.
    pub fn trust_region(&self) -> Result<Bounds> {
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for (j, &c) in self.theta0.iter().enumerate() {
            if !self.mask[j] {
                lo.push(c);
                hi.push(c);
                continue;
            }
            let r = self.trust_abs.max(self.trust_rel * c.abs());
            let floor = if j % 4 == 3 { self.tf_min } else { 0.0 };
            let (l, h) = ((c - r).max(floor), c + r);
            if l > h {
                return Err(Error::InvalidParameter { name: "trust_region", reason: format!("component {j} has an empty range") });
            }
            lo.push(l);
            hi.push(h);
        }
        Bounds::new(lo, hi)
    }
}

/// Geometric-in-exponent penalty growth `lambda_k = lambda_{k-1}^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltySchedule {
    pub lambda0: f64,
    pub lambda_max: f64,
    pub growth: f64,
    /// Inner loop ends once successive proposals move less than this
    /// (standardized Euclidean) and the penalty has reached `lambda_max`.
    pub epsilon: f64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self { lambda0: 2.0, lambda_max: 1e3, growth: 1.2, epsilon: 0.3 }
    }
}

impl PenaltySchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 > 1.0 && self.growth > 1.0 && self.lambda_max.is_finite() && self.lambda_max >= self.lambda0) {
            return Err(Error::InvalidParameter {
                name: "penalty",
                reason: "need lambda0 > 1, growth > 1 and finite lambda_max >= lambda0".into(),
            });
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidParameter { name: "epsilon", reason: "must be >= 0".into() });
        }
        Ok(())
    }

    pub fn next(&self, lambda: f64) -> f64 {
        lambda.powf(self.growth).min(LAMBDA_CEILING)
    }

    /// Steps from `lambda0` until the weight reaches `lambda_max`.
    pub fn steps_to_max(&self) -> usize {
        let mut l = self.lambda0;
        let mut k = 0;
        while l < self.lambda_max {
            l = self.next(l);
            k += 1;
        }
        k
    }
}

/// LOF gate fitted on the current dataset.
#[derive(Debug, Clone)]
pub struct PlausibilityGate {
    lof: Option<StandardizedLof>,
    threshold: f64,
}

impl PlausibilityGate {
    pub fn fit(data: &LabeledDataset, spec: &CostSpec, exec: Execution) -> Result<Self> {
        let lof = if spec.lof_enabled { Some(StandardizedLof::fit(&data.inputs(), spec.lof_k, exec)?) } else { None };
        Ok(Self { lof, threshold: spec.lof_threshold })
    }

    pub fn disabled() -> Self {
        Self { lof: None, threshold: f64::INFINITY }
    }

    /// LOF score; 1 when the gate is disabled.
    pub fn score(&self, theta: &[f64]) -> f64 {
        self.lof.as_ref().map_or(1.0, |m| m.score(theta))
    }

    pub fn is_inlier(&self, theta: &[f64]) -> bool {
        self.score(theta) <= self.threshold
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// Cost function with standardization fixed at construction.
#[derive(Debug, Clone)]
pub struct CostModel {
    spec: CostSpec,
    scales: Vec<f64>,
    bounds: Bounds,
}

impl CostModel {
    /// Standardizes distances by the per-component spread of `reference`.
    pub fn new(spec: CostSpec, reference: &LabeledDataset) -> Result<Self> {
        spec.validate()?;
        if reference.dim() != spec.dim() {
            return Err(Error::Dimension { expected: spec.dim(), got: reference.dim() });
        }
        let st = crate::gpc::Standardizer::fit(&reference.inputs())?;
        Self::with_scales(spec, st.scale)
    }

    pub fn with_scales(spec: CostSpec, scales: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if scales.len() != spec.dim() || scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidParameter { name: "scales", reason: "need one positive scale per component".into() });
        }
        let bounds = spec.trust_region()?;
        Ok(Self { spec, scales, bounds })
    }

    pub fn spec(&self) -> &CostSpec {
        &self.spec
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn trust_region(&self) -> &Bounds {
        &self.bounds
    }

    pub fn theta0(&self) -> &[f64] {
        &self.spec.theta0
    }

    /// Weighted L1 distance to `theta0` in standardized units.
    pub fn distance(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(&self.spec.theta0)
            .zip(&self.scales)
            .zip(&self.spec.distance_weights)
            .map(|(((t, t0), s), w)| w * (t - t0).abs() / s)
            .sum()
    }

    /// Weighted L1 norm of the raw shift.
    pub fn sparsity(&self, theta: &[f64]) -> f64 {
        theta.iter().zip(&self.spec.theta0).zip(&self.spec.sparsity_weights).map(|((t, t0), w)| w * (t - t0).abs()).sum()
    }

    /// `d + beta g`: the part of the cost that does not involve the surrogate.
    pub fn base_cost(&self, theta: &[f64]) -> f64 {
        self.distance(theta) + self.spec.beta * self.sparsity(theta)
    }

    /// `J = d + lambda |fhat - 0.5| + beta g + l`, with `l = +inf` for LOF
    /// outliers and 0 otherwise.
    pub fn cost(&self, theta: &[f64], fhat: f64, lambda: f64, gate: &PlausibilityGate) -> f64 {
        if !gate.is_inlier(theta) {
            return f64::INFINITY;
        }
        self.base_cost(theta) + lambda * (fhat - 0.5).abs()
    }

    /// Standardized Euclidean distance between two parameter vectors.
    pub fn step_norm(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.scales).map(|((x, y), s)| ((x - y) / s).powi(2)).sum::<f64>().sqrt()
    }

    fn to_x(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.spec.theta0).zip(&self.scales).map(|((t, t0), s)| (t - t0) / s).collect()
    }

    /// Frozen components are copied bit-exactly from `theta0`.
    fn theta_at(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| {
                if self.spec.mask[j] {
                    (self.spec.theta0[j] + v * self.scales[j]).clamp(self.bounds.lo()[j], self.bounds.hi()[j])
                } else {
                    self.spec.theta0[j]
                }
            })
            .collect()
    }

    fn x_bounds(&self) -> Bounds {
        let lo = self.to_x(self.bounds.lo());
        let hi = self.to_x(self.bounds.hi());
        Bounds::new(lo, hi).expect("trust region maps to a valid box")
    }
}

/// Best cost among evaluated inputs using the deterministic predictive
/// probability. Points rejected by the gate are skipped unless all are.
pub fn incumbent_cost(
    post: &GpcPosterior,
    model: &CostModel,
    gate: &PlausibilityGate,
    lambda: f64,
    evaluated: &[Vec<f64>],
) -> f64 {
    let gated = evaluated.iter().map(|t| model.cost(t, post.predict(t).p, lambda, gate)).fold(f64::INFINITY, f64::min);
    if gated.is_finite() {
        return gated;
    }
    evaluated
        .iter()
        .map(|t| model.cost(t, post.predict(t).p, lambda, &PlausibilityGate::disabled()))
        .fold(f64::INFINITY, f64::min)
}

/// Monte-Carlo Expected Improvement with a fixed set of standard normal
/// draws, so the estimate is a smooth function of `theta`.
#[derive(Debug, Clone)]
pub struct EiEstimator<'a> {
    pub post: &'a GpcPosterior,
    pub model: &'a CostModel,
    pub gate: &'a PlausibilityGate,
    pub lambda: f64,
    pub j_star: f64,
    normals: Vec<f64>,
}

impl<'a> EiEstimator<'a> {
    pub fn new(
        post: &'a GpcPosterior,
        model: &'a CostModel,
        gate: &'a PlausibilityGate,
        lambda: f64,
        j_star: f64,
        n_mc: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normals = (0..n_mc.max(1)).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self { post, model, gate, lambda, j_star, normals }
    }

    /// `E[(J* - J(theta))_+]` over latent draws; 0 for LOF outliers.
    pub fn ei(&self, theta: &[f64]) -> f64 {
        if !self.gate.is_inlier(theta) {
            return 0.0;
        }
        let pred = self.post.predict(theta);
        let sd = pred.sigma2_a.sqrt();
        let base = self.model.base_cost(theta);
        let total: f64 = self
            .normals
            .iter()
            .map(|z| {
                let f = logistic(pred.mu_a + sd * z);
                (self.j_star - base - self.lambda * (f - 0.5).abs()).max(0.0)
            })
            .sum();
        total / self.normals.len() as f64
    }
}

/// Seeded Monte-Carlo EI at one point.
#[allow(clippy::too_many_arguments)]
pub fn expected_improvement(
    post: &GpcPosterior,
    model: &CostModel,
    gate: &PlausibilityGate,
    lambda: f64,
    j_star: f64,
    theta: &[f64],
    n_mc: usize,
    seed: u64,
) -> f64 {
    EiEstimator::new(post, model, gate, lambda, j_star, n_mc, seed).ei(theta)
}

/// Search settings shared by proposal and boundary sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSettings {
    #[serde(default = "SearchSettings::default_n_mc")]
    pub n_mc: usize,
    #[serde(default = "SearchSettings::default_starts")]
    pub starts: usize,
    #[serde(default = "SearchSettings::default_max_iter")]
    pub max_iter: usize,
    /// Finite-difference step in standardized units.
    #[serde(default = "SearchSettings::default_fd_step")]
    pub fd_step: f64,
    /// Half-width of the probability band accepted as the boundary.
    #[serde(default = "SearchSettings::default_delta_b")]
    pub delta_b: f64,
    /// Weight on boundary-band and LOF violations in boundary sampling.
    #[serde(default = "SearchSettings::default_boundary_penalty")]
    pub boundary_penalty: f64,
}

impl SearchSettings {
    fn default_n_mc() -> usize {
        256
    }
    fn default_starts() -> usize {
        16
    }
    fn default_max_iter() -> usize {
        50
    }
    fn default_fd_step() -> f64 {
        1e-4
    }
    fn default_delta_b() -> f64 {
        0.05
    }
    fn default_boundary_penalty() -> f64 {
        1e3
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0 || self.starts == 0 || self.max_iter == 0 {
            return Err(Error::InvalidParameter { name: "search", reason: "n_mc, starts and max_iter must be >= 1".into() });
        }
        if !(self.fd_step > 0.0 && self.delta_b > 0.0 && self.delta_b < 0.5 && self.boundary_penalty > 0.0) {
            return Err(Error::InvalidParameter {
                name: "search",
                reason: "need fd_step > 0, 0 < delta_b < 0.5 and boundary_penalty > 0".into(),
            });
        }
        Ok(())
    }

    fn bfgs(&self) -> BfgsOptions {
        BfgsOptions { max_iter: self.max_iter, grad_tol: 1e-10, f_tol: 1e-12, fd_step: self.fd_step }
    }
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            n_mc: Self::default_n_mc(),
            starts: Self::default_starts(),
            max_iter: Self::default_max_iter(),
            fd_step: Self::default_fd_step(),
            delta_b: Self::default_delta_b(),
            boundary_penalty: Self::default_boundary_penalty(),
        }
    }
}

/// Candidate chosen by the acquisition step.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub theta: Vec<f64>,
    pub ei: f64,
    /// No start reached positive EI; `theta` is a random inlier.
    pub fallback: bool,
}

/// Start points in standardized coordinates: `theta0`, the optional
/// incumbent, then uniform draws from a box around `theta0` whose half-width
/// is `radius` (clipped to the trust region).
fn start_points<R: Rng>(model: &CostModel, incumbent: Option<&[f64]>, radius: f64, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let xb = model.x_bounds();
    let mut starts = vec![vec![0.0; model.spec.dim()]];
    if let Some(t) = incumbent {
        starts.push(model.to_x(t));
    }
    let local = Bounds::new(
        xb.lo().iter().map(|l| l.max(-radius)).collect(),
        xb.hi().iter().map(|h| h.min(radius)).collect(),
    )
    .expect("local box contains the origin");
    while starts.len() < n {
        starts.push(local.sample(rng));
    }
    starts.truncate(n.max(1));
    starts
}

/// Maximizes Monte-Carlo EI over the trust region and actionability mask.
pub fn propose(
    est: &EiEstimator<'_>,
    incumbent: Option<&[f64]>,
    settings: &SearchSettings,
    seed: u64,
) -> Proposal {
    let model = est.model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xb = model.x_bounds();
    // EI vanishes wherever d alone exceeds J*, so draws beyond that radius
    // would start on a flat region.
    let n_free = model.spec.mask.iter().filter(|m| **m).count().max(1);
    let radius = if est.j_star.is_finite() { (est.j_star / n_free as f64).max(1e-3) } else { f64::INFINITY };
    let starts = start_points(model, incumbent, radius, settings.starts, &mut rng);
    let objective = |x: &[f64]| -est.ei(&model.theta_at(x));
    let best = multistart_bfgs(objective, &starts, &xb, &settings.bfgs());
    if let Some(b) = best.filter(|b| b.f < 0.0) {
        return Proposal { theta: model.theta_at(&b.x), ei: -b.f, fallback: false };
    }
    log::info!("all EI starts are flat; proposing a random inlier");
    for _ in 0..1000 {
        let theta = model.theta_at(&xb.sample(&mut rng));
        if est.gate.is_inlier(&theta) {
            return Proposal { ei: est.ei(&theta), theta, fallback: true };
        }
    }
    Proposal { theta: model.theta0().to_vec(), ei: 0.0, fallback: true }
}

/// Result of a boundary search.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySample {
    pub theta: Vec<f64>,
    pub p: f64,
    pub lof: f64,
    /// `|p - 0.5| <= delta_b` and the LOF gate accepts `theta`.
    pub feasible: bool,
}

/// Closest point to `theta0` (in `d`) inside the probability band
/// `|p - 0.5| <= delta_b` that the LOF gate accepts.
pub fn sample_decision_boundary(
    post: &GpcPosterior,
    model: &CostModel,
    gate: &PlausibilityGate,
    evaluated: &[Vec<f64>],
    settings: &SearchSettings,
    seed: u64,
) -> BoundarySample {
    let xb = model.x_bounds();
    let violation = |theta: &[f64]| {
        let p = post.predict(theta).p;
        let band = ((p - 0.5).abs() - settings.delta_b).max(0.0);
        let lof = if gate.lof.is_some() { (gate.score(theta) - gate.threshold()).max(0.0) } else { 0.0 };
        (band + lof, p)
    };
    let objective = |x: &[f64]| {
        let theta = model.theta_at(x);
        model.distance(&theta) + settings.boundary_penalty * violation(&theta).0
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![vec![0.0; model.spec.dim()]];
    let mut near: Vec<(f64, &Vec<f64>)> = evaluated.iter().map(|t| ((post.predict(t).p - 0.5).abs(), t)).collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (_, t) in near.into_iter().take(settings.starts / 4) {
        starts.push(xb.projected(&model.to_x(t)));
    }
    while starts.len() < settings.starts {
        starts.push(xb.sample(&mut rng));
    }

    let opts = settings.bfgs();
    let mut best_feasible: Option<(f64, Vec<f64>)> = None;
    let mut least_violation: Option<(f64, f64, Vec<f64>)> = None;
    for s in &starts {
        let r = crate::optim::minimize_bfgs(objective, s, &xb, &opts);
        let theta = model.theta_at(&r.x);
        let (v, _) = violation(&theta);
        let d = model.distance(&theta);
        if v == 0.0 {
            if best_feasible.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best_feasible = Some((d, theta));
            }
        } else if least_violation.as_ref().is_none_or(|(bv, bd, _)| v < *bv || (v == *bv && d < *bd)) {
            least_violation = Some((v, d, theta));
        }
    }
    let (theta, feasible) = match (best_feasible, least_violation) {
        (Some((_, t)), _) => (t, true),
        (None, Some((_, _, t))) => (t, false),
        (None, None) => (model.theta0().to_vec(), false),
    };
    let p = post.predict(&theta).p;
    BoundarySample { lof: gate.score(&theta), p, theta, feasible }
}

/// Everything that parameterizes one counterfactual search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AceSettings {
    pub schedule: PenaltySchedule,
    pub search: SearchSettings,
    /// Maximum number of real step tests, including the baseline test.
    pub budget: usize,
}

impl Default for AceSettings {
    fn default() -> Self {
        Self { schedule: PenaltySchedule::default(), search: SearchSettings::default(), budget: 60 }
    }
}

impl AceSettings {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.search.validate()?;
        if self.budget == 0 {
            return Err(Error::InvalidParameter { name: "budget", reason: "must be >= 1".into() });
        }
        Ok(())
    }
}

/// Why a candidate was tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateKind {
    Baseline,
    Proposal,
    Boundary,
}

/// One real step test in the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub kind: CandidateKind,
    pub theta: Vec<f64>,
    pub label: u8,
    /// Cost with the deterministic predictive probability at proposal time.
    pub cost: f64,
    /// LOF against the dataset before this candidate was added.
    pub lof: f64,
    /// Acquisition value at proposal time (0 for baseline and boundary tests).
    pub ei: f64,
    /// Predictive pass probability at proposal time.
    pub p: f64,
    pub lambda: f64,
    /// Standardized L1 distance to `theta0`.
    pub distance: f64,
}

/// Outcome of one counterfactual search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AceResult {
    /// Closest real-test passer, or the last boundary sample when none passed.
    pub cfe: Vec<f64>,
    pub valid: bool,
    /// Real step tests run, including the baseline test.
    pub tests: usize,
    pub lof: f64,
    pub delta: Vec<f64>,
    pub trace: Vec<CandidateRecord>,
    pub budget_exhausted: bool,
    pub outer_iterations: usize,
}

struct SearchState<'a> {
    plant: &'a DiscretePlant,
    cfg: &'a SimConfig,
    tau: &'a SpecThresholds,
    spec: &'a CostSpec,
    exec: Execution,
    seed: u64,
    data: LabeledDataset,
    post: GpcPosterior,
    gate: PlausibilityGate,
    trace: Vec<CandidateRecord>,
}

impl SearchState<'_> {
    fn refit(&mut self) -> Result<()> {
        self.post = fit_laplace(&self.data, &KernelSpec::median_heuristic(&self.data)?)?;
        self.gate = PlausibilityGate::fit(&self.data, self.spec, self.exec)?;
        Ok(())
    }

    fn real_test(&mut self, mut rec: CandidateRecord) -> Result<u8> {
        let theta = ControllerTheta::from_slice(&rec.theta)?;
        let cfg = self.cfg.with_seed(seed::derive(self.seed, self.trace.len() as u64));
        rec.label = step_test_label(self.plant, &theta, &cfg, self.tau)?;
        let label = rec.label;
        self.data.push(rec.theta.clone(), label, Provenance::Online)?;
        self.trace.push(rec);
        Ok(label)
    }

    fn evaluated(&self) -> Vec<Vec<f64>> {
        self.trace.iter().map(|r| r.theta.clone()).collect()
    }
}

/// Runs the counterfactual search from a failing baseline `theta0`.
///
/// The baseline is tested first; if it already passes the search returns
/// immediately with a zero shift. Every later step test is counted against
/// `settings.budget`.
#[allow(clippy::too_many_arguments)]
pub fn run_ace(
    plant: &DiscretePlant,
    cfg: &SimConfig,
    tau: &SpecThresholds,
    d_hist: &LabeledDataset,
    spec: &CostSpec,
    settings: &AceSettings,
    seed: u64,
    exec: Execution,
) -> Result<AceResult> {
    settings.validate()?;
    let model = CostModel::new(spec.clone(), d_hist)?;
    let theta0 = spec.theta0.clone();
    let post = fit_laplace(d_hist, &KernelSpec::median_heuristic(d_hist)?)?;
    let gate = PlausibilityGate::fit(d_hist, spec, exec)?;
    let baseline = CandidateRecord {
        kind: CandidateKind::Baseline,
        theta: theta0.clone(),
        label: 0,
        cost: model.cost(&theta0, post.predict(&theta0).p, settings.schedule.lambda0, &gate),
        lof: gate.score(&theta0),
        ei: 0.0,
        p: post.predict(&theta0).p,
        lambda: settings.schedule.lambda0,
        distance: 0.0,
    };
    let mut st = SearchState {
        plant,
        cfg,
        tau,
        spec,
        exec,
        seed,
        data: d_hist.clone(),
        post,
        gate,
        trace: Vec::new(),
    };

    if st.real_test(baseline)? == 1 {
        let lof = st.trace[0].lof;
        return Ok(AceResult {
            cfe: theta0.clone(),
            valid: true,
            tests: 1,
            lof,
            delta: vec![0.0; theta0.len()],
            trace: st.trace,
            budget_exhausted: false,
            outer_iterations: 0,
        });
    }
    st.refit()?;

    let sched = settings.schedule;
    let mut boundary_dist_old = f64::INFINITY;
    let mut last_boundary: Option<Vec<f64>> = None;
    let mut exhausted = false;
    let mut outer_iterations = 0;
    'outer: loop {
        outer_iterations += 1;
        let mut lambda = sched.lambda0;
        let mut prev: Option<Vec<f64>> = None;
        loop {
            if st.trace.len() >= settings.budget {
                exhausted = true;
                break 'outer;
            }
            let evaluated = st.evaluated();
            let j_star = incumbent_cost(&st.post, &model, &st.gate, lambda, &evaluated);
            let incumbent = evaluated
                .iter()
                .min_by(|a, b| {
                    let ca = model.cost(a, st.post.predict(a).p, lambda, &st.gate);
                    let cb = model.cost(b, st.post.predict(b).p, lambda, &st.gate);
                    ca.total_cmp(&cb)
                })
                .cloned();
            let step_seed = seed::derive(seed, (1 << 32) + st.trace.len() as u64);
            let est = EiEstimator::new(&st.post, &model, &st.gate, lambda, j_star, settings.search.n_mc, step_seed);
            let prop = propose(&est, incumbent.as_deref(), &settings.search, seed::derive(step_seed, 1));
            let pred = st.post.predict(&prop.theta);
            let rec = CandidateRecord {
                kind: CandidateKind::Proposal,
                cost: model.cost(&prop.theta, pred.p, lambda, &st.gate),
                lof: st.gate.score(&prop.theta),
                ei: prop.ei,
                p: pred.p,
                lambda,
                distance: model.distance(&prop.theta),
                theta: prop.theta.clone(),
                label: 0,
            };
            st.real_test(rec)?;
            st.refit()?;
            let moved = prev.as_ref().map_or(f64::INFINITY, |p| model.step_norm(p, &prop.theta));
            prev = Some(prop.theta);
            lambda = sched.next(lambda);
            if moved <= sched.epsilon && lambda >= sched.lambda_max {
                break;
            }
        }

        if st.trace.len() >= settings.budget {
            exhausted = true;
            break;
        }
        let bs = sample_decision_boundary(
            &st.post,
            &model,
            &st.gate,
            &st.evaluated(),
            &settings.search,
            seed::derive(seed, (2 << 32) + st.trace.len() as u64),
        );
        let dist = model.distance(&bs.theta);
        let rec = CandidateRecord {
            kind: CandidateKind::Boundary,
            cost: model.cost(&bs.theta, bs.p, lambda, &st.gate),
            lof: bs.lof,
            ei: 0.0,
            p: bs.p,
            lambda,
            distance: dist,
            theta: bs.theta.clone(),
            label: 0,
        };
        let label = st.real_test(rec)?;
        st.refit()?;
        last_boundary = Some(bs.theta);
        if label == 1 || dist >= boundary_dist_old {
            break;
        }
        boundary_dist_old = dist;
    }

    let best = st
        .trace
        .iter()
        .filter(|r| r.label == 1 && r.theta != theta0)
        .min_by(|a, b| a.distance.total_cmp(&b.distance));
    let (cfe, valid, lof) = match best {
        Some(r) => (r.theta.clone(), true, r.lof),
        None => {
            let t = last_boundary.unwrap_or_else(|| theta0.clone());
            let lof = st.gate.score(&t);
            (t, false, lof)
        }
    };
    let delta = cfe.iter().zip(&theta0).map(|(a, b)| a - b).collect();
    Ok(AceResult {
        cfe,
        valid,
        tests: st.trace.len(),
        lof,
        delta,
        trace: st.trace,
        budget_exhausted: exhausted,
        outer_iterations,
    })
}

#[cfg(test)]
mod tests;
