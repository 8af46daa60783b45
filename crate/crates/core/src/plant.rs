//! Linearized compressor-plenum dynamics, servo-valve lag, and their
//! discrete-time equivalents.
//!
//! All signals are small-signal deviations around a healthy operating point.
//! Nondimensional time `xi = U t / R` is identified with seconds.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{num, Error, Result};

/// Physical constants of the compressor-plenum-throttle loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Duct length parameter `L_c / R`.
    pub ell_c: f64,
    /// Greitzer parameter.
    pub b: f64,
    /// Throttle slope.
    pub k_t: f64,
    /// Compressor map slope with respect to flow at the operating point.
    pub a: f64,
    /// Compressor map slope with respect to IGV position at the operating point.
    pub alpha: f64,
    /// Servo static gain.
    pub k_v: f64,
    /// Servo time constant (s).
    pub t_v: f64,
    /// Sampling period (s).
    pub t_s: f64,
    /// First-order numerator coefficient of G1. The plenum mass balance gives
    /// zero; kept as a knob for alternative derivations.
    #[serde(default)]
    pub c1: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            ell_c: 2.0,
            b: 2.0,
            k_t: 0.20,
            a: 0.18,
            alpha: 0.30,
            k_v: 1.0,
            t_v: 0.5,
            t_s: 0.1,
            c1: 0.0,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ell_c", self.ell_c),
            ("b", self.b),
            ("k_t", self.k_t),
            ("t_v", self.t_v),
            ("t_s", self.t_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and positive, got {v}"),
                });
            }
        }
        for (name, v) in [("a", self.a), ("alpha", self.alpha), ("k_v", self.k_v), ("c1", self.c1)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Linearization anchor. Informational only: every simulated signal is a
/// deviation from these values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub phi_bar: f64,
    pub psi_bar: f64,
    pub u_bar: f64,
}

/// Rational continuous-time transfer function, coefficients in descending
/// powers of `s`, denominator monic.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousTf {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl ContinuousTf {
    /// Builds a transfer function, normalizing the denominator to be monic and
    /// stripping leading zeros from both polynomials.
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self> {
        let den = strip_leading_zeros(den);
        let num = strip_leading_zeros(num);
        let Some(&lead) = den.first() else {
            return Err(Error::InvalidParameter {
                name: "den",
                reason: "denominator is identically zero".into(),
            });
        };
        if num.len() > den.len() {
            return Err(Error::InvalidParameter {
                name: "num",
                reason: "improper transfer function (numerator degree exceeds denominator)".into(),
            });
        }
        if num.iter().chain(den.iter()).any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "num/den",
                reason: "non-finite coefficient".into(),
            });
        }
        let num = if num.is_empty() { vec![0.0] } else { num };
        Ok(Self {
            num: num.iter().map(|c| c / lead).collect(),
            den: den.iter().map(|c| c / lead).collect(),
        })
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    pub fn order(&self) -> usize {
        self.den.len() - 1
    }

    /// Gain at `s = 0`.
    pub fn dc_gain(&self) -> f64 {
        self.num.last().copied().unwrap_or(0.0) / self.den.last().copied().unwrap_or(1.0)
    }

    pub fn poles(&self) -> Vec<Complex<f64>> {
        polynomial_roots(&self.den)
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.re < 0.0)
    }
}

/// Closed-form pieces of the linearized compressor-plenum transfer function
/// `G1(s) = (c1 s + c0) / (s^2 + 2 zeta wn s + wn^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurgeModeCoefficients {
    pub two_zeta_wn: f64,
    pub wn2: f64,
    pub c0: f64,
    pub c1: f64,
}

impl SurgeModeCoefficients {
    pub fn from_params(p: &PlantParams) -> Self {
        let four_b2 = 4.0 * p.b * p.b;
        Self {
            two_zeta_wn: (1.0 / (four_b2 * p.k_t) - p.a) / p.ell_c,
            wn2: (1.0 - p.a / p.k_t) / (four_b2 * p.ell_c * p.ell_c),
            c0: p.alpha / (four_b2 * p.ell_c * p.ell_c),
            c1: p.c1,
        }
    }

    pub fn damping_ratio(&self) -> f64 {
        self.two_zeta_wn / (2.0 * self.wn2.sqrt())
    }
}

/// IGV position to pressure-rise transfer function G1(s).
///
/// Derived from the duct momentum balance
/// `dPhi/dt = (a Phi + alpha u - Psi) / ell_c` and the plenum mass balance
/// `dPsi/dt = (Phi - Psi / k_T) / (4 B^2 ell_c)`.
pub fn linearize_mg(params: &PlantParams) -> Result<ContinuousTf> {
    params.validate()?;
    let c = SurgeModeCoefficients::from_params(params);
    // A monic quadratic is Hurwitz iff both lower coefficients are positive.
    if !(c.two_zeta_wn > 0.0 && c.wn2 > 0.0) {
        let roots = polynomial_roots(&[1.0, c.two_zeta_wn, c.wn2]);
        let to_pair = |z: &Complex<f64>| num::Complex { re: z.re, im: z.im };
        return Err(Error::UnstableOperatingPoint(to_pair(&roots[0]), to_pair(&roots[1])));
    }
    ContinuousTf::new(vec![c.c1, c.c0], vec![1.0, c.two_zeta_wn, c.wn2])
}

/// Servo-valve lag G2(s) = K_v / (1 + T_v s).
pub fn servo_tf(params: &PlantParams) -> Result<ContinuousTf> {
    if !(params.t_v.is_finite() && params.t_v > 0.0) {
        return Err(Error::InvalidParameter {
            name: "t_v",
            reason: format!("must be positive, got {}", params.t_v),
        });
    }
    ContinuousTf::new(vec![params.k_v], vec![params.t_v, 1.0])
}

/// Rational discrete-time filter in `z^-1` with streaming state.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTf {
    b: Vec<f64>,
    a: Vec<f64>,
    // Most recent sample first.
    past_u: Vec<f64>,
    past_y: Vec<f64>,
}

impl DiscreteTf {
    /// `a[0]` must be nonzero; coefficients are normalized so that `a[0] = 1`.
    pub fn new(b: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        let Some(&a0) = a.first() else {
            return Err(Error::InvalidParameter {
                name: "a",
                reason: "empty feedback coefficients".into(),
            });
        };
        if a0 == 0.0 || !a0.is_finite() {
            return Err(Error::InvalidParameter {
                name: "a",
                reason: "a[0] must be finite and nonzero".into(),
            });
        }
        if b.is_empty() {
            return Err(Error::InvalidParameter {
                name: "b",
                reason: "empty feedforward coefficients".into(),
            });
        }
        let b: Vec<f64> = b.iter().map(|c| c / a0).collect();
        let a: Vec<f64> = a.iter().map(|c| c / a0).collect();
        let past_u = vec![0.0; b.len().saturating_sub(1)];
        let past_y = vec![0.0; a.len().saturating_sub(1)];
        Ok(Self { b, a, past_u, past_y })
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// Clears the input/output history.
    pub fn reset(&mut self) {
        self.past_u.iter_mut().for_each(|v| *v = 0.0);
        self.past_y.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Advances one sample: `y[k] = sum b[j] u[k-j] - sum_{j>=1} a[j] y[k-j]`.
    #[inline]
    pub fn step(&mut self, u: f64) -> f64 {
        let mut y = self.b[0] * u;
        for (bj, uj) in self.b[1..].iter().zip(&self.past_u) {
            y += bj * uj;
        }
        for (aj, yj) in self.a[1..].iter().zip(&self.past_y) {
            y -= aj * yj;
        }
        shift_in(&mut self.past_u, u);
        shift_in(&mut self.past_y, y);
        y
    }

    /// Gain at `z = 1`.
    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Roots of `z^n a(z^-1)`.
    pub fn poles(&self) -> Vec<Complex<f64>> {
        polynomial_roots(&self.a)
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }
}

#[inline]
fn shift_in(buf: &mut [f64], v: f64) {
    if buf.is_empty() {
        return;
    }
    buf.copy_within(0..buf.len() - 1, 1);
    buf[0] = v;
}

/// Streams `input` through `tf` starting from its current state.
pub fn simulate_lti(tf: &mut DiscreteTf, input: &[f64]) -> Vec<f64> {
    input.iter().map(|&u| tf.step(u)).collect()
}

/// Bilinear transform `s <- (2/T_s)(1 - z^-1)/(1 + z^-1)`.
pub fn tustin_discretize(tf: &ContinuousTf, t_s: f64) -> Result<DiscreteTf> {
    if !(t_s.is_finite() && t_s > 0.0) {
        return Err(Error::InvalidParameter {
            name: "t_s",
            reason: format!("must be positive, got {t_s}"),
        });
    }
    let n = tf.order();
    let c = 2.0 / t_s;
    let mut num = vec![0.0; n + 1 - tf.num.len()];
    num.extend_from_slice(&tf.num);

    // Term s^j maps to c^j (1 - z^-1)^j (1 + z^-1)^(n-j), ascending in z^-1.
    let mut b = vec![0.0; n + 1];
    let mut a = vec![0.0; n + 1];
    for j in 0..=n {
        let basis = poly_mul(&binomial_power(-1.0, j), &binomial_power(1.0, n - j));
        let scale = c.powi(j as i32);
        let nc = num[n - j];
        let dc = tf.den[n - j];
        for (i, v) in basis.iter().enumerate() {
            b[i] += nc * scale * v;
            a[i] += dc * scale * v;
        }
    }
    let norm = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if a[0].abs() <= 1e-14 * norm {
        return Err(Error::TustinSingular);
    }
    DiscreteTf::new(b, a)
}

/// Coefficients of `(1 + sign z^-1)^k`, ascending.
fn binomial_power(sign: f64, k: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    for _ in 0..k {
        out = poly_mul(&out, &[1.0, sign]);
    }
    out
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

fn strip_leading_zeros(mut v: Vec<f64>) -> Vec<f64> {
    let first = v.iter().position(|c| *c != 0.0).unwrap_or(v.len());
    v.drain(..first);
    v
}

/// Roots of a polynomial given in descending powers (companion matrix).
pub(crate) fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex<f64>> {
    let coeffs = strip_leading_zeros(coeffs.to_vec());
    let n = coeffs.len().saturating_sub(1);
    if n == 0 {
        return Vec::new();
    }
    let lead = coeffs[0];
    let mut m = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        m[(0, j)] = -coeffs[j + 1] / lead;
    }
    for i in 1..n {
        m[(i, i - 1)] = 1.0;
    }
    m.complex_eigenvalues().iter().copied().collect()
}
