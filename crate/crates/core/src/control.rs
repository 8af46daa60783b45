//! Position-form discrete PID and the closed-loop step-test simulators.
//!
//! Case 1 (single loop): the pressure controller drives the servo directly.
//! Case 2 (cascade): the pressure controller sets the IGV position reference
//! and an inner controller closes the vane-position loop.
//!
//! Each sample period runs in a fixed order: measure (previous plant outputs
//! plus fresh noise), compute controllers, advance plants. Measurements
//! therefore lag the plant by one sample.

use nalgebra::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{self, DiscreteTf, PlantParams};

/// `|y1|` above this bound aborts the step test as an unstable loop.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Continuous PID with filtered derivative,
/// `C(s) = K_p + K_i / s + K_d s / (1 + T_f s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidParams {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub tf: f64,
}

impl PidParams {
    pub const fn new(kp: f64, ki: f64, kd: f64, tf: f64) -> Self {
        Self { kp, ki, kd, tf }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.kp, self.ki, self.kd, self.tf]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.kp, self.ki, self.kd, self.tf].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "pid",
                reason: format!("non-finite gain in {self:?}"),
            });
        }
        if self.kd != 0.0 && self.tf <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "tf",
                reason: format!("derivative filter constant must be positive when K_d != 0, got {}", self.tf),
            });
        }
        Ok(())
    }
}

/// Loop architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopCase {
    /// Outer pressure loop only (4 parameters).
    Single,
    /// Outer pressure loop plus inner IGV position loop (8 parameters).
    Cascade,
}

impl LoopCase {
    pub fn dim(self) -> usize {
        match self {
            LoopCase::Single => 4,
            LoopCase::Cascade => 8,
        }
    }
}

/// Controller parameter vector ordered `[Kp, Ki, Kd, Tf]` then, for the
/// cascade, `[Kp2, Ki2, Kd2, Tf2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerTheta {
    pub outer: PidParams,
    pub inner: Option<PidParams>,
}

impl ControllerTheta {
    pub fn single(outer: PidParams) -> Self {
        Self { outer, inner: None }
    }

    pub fn cascade(outer: PidParams, inner: PidParams) -> Self {
        Self { outer, inner: Some(inner) }
    }

    pub fn case(&self) -> LoopCase {
        if self.inner.is_some() {
            LoopCase::Cascade
        } else {
            LoopCase::Single
        }
    }

    pub fn dim(&self) -> usize {
        self.case().dim()
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v.len() {
            4 => Ok(Self::single(PidParams::from_slice(v))),
            8 => Ok(Self::cascade(PidParams::from_slice(&v[..4]), PidParams::from_slice(&v[4..]))),
            n => Err(Error::Dimension { expected: 4, got: n }),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.outer.to_array().to_vec();
        if let Some(inner) = self.inner {
            v.extend_from_slice(&inner.to_array());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        self.outer.validate()?;
        if let Some(inner) = &self.inner {
            inner.validate()?;
        }
        Ok(())
    }
}

/// Position-form PID: forward-Euler integral, Tustin-filtered derivative.
///
/// `I[k] = I[k-1] + K_i T_s e[k-1]`,
/// `D[k] = ((2T_f - T_s)/(2T_f + T_s)) D[k-1] + (2K_d/(2T_f + T_s)) (e[k] - e[k-1])`,
/// `u[k] = K_p e[k] + I[k] + D[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePid {
    kp: f64,
    ki_ts: f64,
    d_pole: f64,
    d_gain: f64,
    integral: f64,
    derivative: f64,
    prev_error: f64,
}

impl DiscretePid {
    pub fn kp(&self) -> f64 {
        self.kp
    }

    /// `K_i T_s`.
    pub fn integral_gain(&self) -> f64 {
        self.ki_ts
    }

    /// Derivative filter pole `(2T_f - T_s)/(2T_f + T_s)`.
    pub fn derivative_pole(&self) -> f64 {
        self.d_pole
    }

    /// Derivative input gain `2K_d/(2T_f + T_s)`.
    pub fn derivative_gain(&self) -> f64 {
        self.d_gain
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.derivative = 0.0;
        self.prev_error = 0.0;
    }

    #[inline]
    pub fn step(&mut self, e: f64) -> f64 {
        self.integral += self.ki_ts * self.prev_error;
        self.derivative = self.d_pole * self.derivative + self.d_gain * (e - self.prev_error);
        self.prev_error = e;
        self.kp * e + self.integral + self.derivative
    }

    /// Transfer function in `z^-1` as (numerator, denominator), ascending,
    /// with the integrator and filter factors dropped when their gain is zero.
    pub fn polynomials(&self) -> (Vec<f64>, Vec<f64>) {
        let has_i = self.ki_ts != 0.0;
        let has_d = self.d_gain != 0.0;
        let integ = [1.0, -1.0];
        let filt = [1.0, -self.d_pole];
        let mut den = vec![1.0];
        if has_i {
            den = poly_mul(&den, &integ);
        }
        if has_d {
            den = poly_mul(&den, &filt);
        }
        // Kp * den
        let mut num: Vec<f64> = den.iter().map(|c| c * self.kp).collect();
        if has_i {
            // Ki Ts z^-1 * (filter factor)
            let mut term = vec![0.0, self.ki_ts];
            if has_d {
                term = poly_mul(&term, &filt);
            }
            num = poly_add(&num, &term);
        }
        if has_d {
            let mut term = vec![self.d_gain, -self.d_gain];
            if has_i {
                term = poly_mul(&term, &integ);
            }
            num = poly_add(&num, &term);
        }
        (num, den)
    }
}

/// Discrete realization of a PID at sampling period `t_s`.
pub fn discretize_pid(pid: &PidParams, t_s: f64) -> Result<DiscretePid> {
    pid.validate()?;
    if !(t_s.is_finite() && t_s > 0.0) {
        return Err(Error::InvalidParameter {
            name: "t_s",
            reason: format!("must be positive, got {t_s}"),
        });
    }
    let (d_pole, d_gain) = if pid.kd == 0.0 {
        (0.0, 0.0)
    } else {
        let den = 2.0 * pid.tf + t_s;
        ((2.0 * pid.tf - t_s) / den, 2.0 * pid.kd / den)
    };
    Ok(DiscretePid {
        kp: pid.kp,
        ki_ts: pid.ki * t_s,
        d_pole,
        d_gain,
        integral: 0.0,
        derivative: 0.0,
        prev_error: 0.0,
    })
}

/// Discretized plant pair: compressor-plenum path and servo valve.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePlant {
    pub g1: DiscreteTf,
    pub g2: DiscreteTf,
    pub t_s: f64,
}

impl DiscretePlant {
    pub fn from_params(params: &PlantParams) -> Result<Self> {
        let g1 = plant::tustin_discretize(&plant::linearize_mg(params)?, params.t_s)?;
        let g2 = plant::tustin_discretize(&plant::servo_tf(params)?, params.t_s)?;
        Ok(Self { g1, g2, t_s: params.t_s })
    }

    fn reset(&mut self) {
        self.g1.reset();
        self.g2.reset();
    }
}

/// Step-test settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "SimConfig::default_r_step")]
    pub r_step: f64,
    /// Test duration (s).
    #[serde(default = "SimConfig::default_horizon")]
    pub horizon: f64,
    /// Variance of the pressure measurement noise `v1`.
    #[serde(default = "SimConfig::default_sigma2_outer")]
    pub sigma2_outer: f64,
    /// Variance of the IGV position measurement noise `v2`.
    #[serde(default = "SimConfig::default_sigma2_inner")]
    pub sigma2_inner: f64,
    #[serde(default)]
    pub noise_free: bool,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    fn default_r_step() -> f64 {
        1.0
    }
    fn default_horizon() -> f64 {
        100.0
    }
    fn default_sigma2_outer() -> f64 {
        0.01
    }
    fn default_sigma2_inner() -> f64 {
        0.005
    }

    pub fn noise_free() -> Self {
        Self { noise_free: true, ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Number of samples `round(horizon / t_s)`.
    pub fn samples(&self, t_s: f64) -> usize {
        (self.horizon / t_s).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_step.is_finite() && self.r_step != 0.0) {
            return Err(Error::InvalidParameter { name: "r_step", reason: "must be finite and nonzero".into() });
        }
        if !(self.horizon.is_finite() && self.horizon > 50.0) {
            return Err(Error::InvalidParameter {
                name: "horizon",
                reason: format!("must exceed the 50 s settling threshold, got {}", self.horizon),
            });
        }
        for (name, v) in [("sigma2_outer", self.sigma2_outer), ("sigma2_inner", self.sigma2_inner)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter { name, reason: format!("variance must be >= 0, got {v}") });
            }
        }
        Ok(())
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            r_step: 1.0,
            horizon: 100.0,
            sigma2_outer: 0.01,
            sigma2_inner: 0.005,
            noise_free: false,
            seed: 0,
        }
    }
}

/// Sampled closed-loop signals named after the cascade diagram.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepResponseTrace {
    pub t: Vec<f64>,
    pub r1: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    /// Pressure output before measurement noise.
    pub y1_clean: Vec<f64>,
}

impl StepResponseTrace {
    fn with_capacity(n: usize) -> Self {
        Self {
            t: Vec::with_capacity(n),
            r1: Vec::with_capacity(n),
            u1: Vec::with_capacity(n),
            u2: Vec::with_capacity(n),
            y1: Vec::with_capacity(n),
            y2: Vec::with_capacity(n),
            y1_clean: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Result of one closed-loop experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum SimOutcome {
    Completed(StepResponseTrace),
    /// `|y1|` exceeded [`DIVERGENCE_BOUND`] at sample `at`; the trace stops there.
    Diverged { at: usize, trace: StepResponseTrace },
}

impl SimOutcome {
    pub fn trace(&self) -> &StepResponseTrace {
        match self {
            SimOutcome::Completed(t) | SimOutcome::Diverged { trace: t, .. } => t,
        }
    }

    pub fn into_trace(self) -> StepResponseTrace {
        match self {
            SimOutcome::Completed(t) | SimOutcome::Diverged { trace: t, .. } => t,
        }
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self, SimOutcome::Diverged { .. })
    }
}

/// Measurement noise source for one experiment.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
    outer: Option<Normal<f64>>,
    inner: Option<Normal<f64>>,
}

impl NoiseSource {
    pub fn new(cfg: &SimConfig) -> Self {
        let make = |var: f64| {
            if cfg.noise_free || var == 0.0 {
                None
            } else {
                Some(Normal::new(0.0, var.sqrt()).expect("validated variance"))
            }
        };
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            outer: make(cfg.sigma2_outer),
            inner: make(cfg.sigma2_inner),
        }
    }

    /// Draws `(v1, v2)`. Both draws always happen when noise is on, so the
    /// stream layout does not depend on the loop architecture.
    #[inline]
    fn draw(&mut self) -> (f64, f64) {
        let v1 = self.outer.map_or(0.0, |d| d.sample(&mut self.rng));
        let v2 = self.inner.map_or(0.0, |d| d.sample(&mut self.rng));
        (v1, v2)
    }
}

/// Step test with reference `r_step` held from `t = 0`.
pub fn simulate_closed_loop(plant: &DiscretePlant, theta: &ControllerTheta, cfg: &SimConfig) -> Result<SimOutcome> {
    cfg.validate()?;
    let n = cfg.samples(plant.t_s);
    let reference = vec![cfg.r_step; n];
    simulate_with_reference(plant, theta, &reference, cfg)
}

/// Closed-loop run against an arbitrary reference sequence.
pub fn simulate_with_reference(
    plant: &DiscretePlant,
    theta: &ControllerTheta,
    reference: &[f64],
    cfg: &SimConfig,
) -> Result<SimOutcome> {
    theta.validate()?;
    let mut plant = plant.clone();
    plant.reset();
    let mut outer = discretize_pid(&theta.outer, plant.t_s)?;
    let mut inner = theta.inner.as_ref().map(|p| discretize_pid(p, plant.t_s)).transpose()?;
    let mut noise = NoiseSource::new(cfg);

    let n = reference.len();
    let mut trace = StepResponseTrace::with_capacity(n);
    let (mut y1_prev, mut y2_prev) = (0.0, 0.0);
    for (k, &r) in reference.iter().enumerate() {
        let (v1, v2) = noise.draw();
        let y1m = y1_prev + v1;
        let y2m = y2_prev + v2;

        let u1 = outer.step(r - y1m);
        let u2 = match inner.as_mut() {
            Some(c2) => c2.step(u1 - y2m),
            None => u1,
        };

        trace.t.push(k as f64 * plant.t_s);
        trace.r1.push(r);
        trace.u1.push(u1);
        trace.u2.push(u2);
        trace.y1.push(y1m);
        trace.y2.push(y2m);
        trace.y1_clean.push(y1_prev);

        let y2 = plant.g2.step(u2);
        let y1 = plant.g1.step(y2);
        if !y1.is_finite() || y1.abs() > DIVERGENCE_BOUND {
            return Ok(SimOutcome::Diverged { at: k, trace });
        }
        y1_prev = y1;
        y2_prev = y2;
    }
    Ok(SimOutcome::Completed(trace))
}

/// Closed-loop characteristic roots in the `z` plane.
pub fn closed_loop_poles(plant: &DiscretePlant, theta: &ControllerTheta) -> Result<Vec<Complex<f64>>> {
    let c1 = discretize_pid(&theta.outer, plant.t_s)?;
    let (n1, d1) = c1.polynomials();
    let (ng1, dg1) = (plant.g1.b().to_vec(), plant.g1.a().to_vec());
    let (ng2, dg2) = (plant.g2.b().to_vec(), plant.g2.a().to_vec());
    let delay = [0.0, 1.0];

    // Inner closed loop denominator and numerator from u1 to y2.
    let (t2_num, t2_den) = match &theta.inner {
        Some(p) => {
            let (n2, d2) = discretize_pid(p, plant.t_s)?.polynomials();
            let open_num = poly_mul(&n2, &ng2);
            let den = poly_add(&poly_mul(&d2, &dg2), &poly_mul(&delay, &open_num));
            (open_num, den)
        }
        None => (ng2.clone(), dg2.clone()),
    };
    let chi = poly_add(
        &poly_mul(&poly_mul(&d1, &dg1), &t2_den),
        &poly_mul(&delay, &poly_mul(&poly_mul(&n1, &ng1), &t2_num)),
    );
    Ok(plant::polynomial_roots(&chi))
}

/// Largest closed-loop pole magnitude; below one means internally stable.
pub fn spectral_radius(plant: &DiscretePlant, theta: &ControllerTheta) -> Result<f64> {
    Ok(closed_loop_poles(plant, theta)?.iter().map(|p| p.norm()).fold(0.0, f64::max))
}

fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, pi) in p.iter().enumerate() {
        for (j, qj) in q.iter().enumerate() {
            out[i + j] += pi * qj;
        }
    }
    out
}

fn poly_add(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len().max(q.len())];
    for (i, v) in p.iter().enumerate() {
        out[i] += v;
    }
    for (i, v) in q.iter().enumerate() {
        out[i] += v;
    }
    out
}
