//! Time-domain step-response specifications and the pass/fail label.

use serde::{Deserialize, Serialize};

use crate::control::{SimConfig, SimOutcome, StepResponseTrace};
use crate::error::{Error, Result};

/// Step-response metrics. `None` marks a metric that is undefined for the
/// trace (a crossing that never happens, a response that never settles);
/// undefined metrics fail the specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub e_ss: Option<f64>,
    pub t_rise: Option<f64>,
    pub t_settle: Option<f64>,
    /// Percent of the step change.
    pub overshoot: Option<f64>,
}

impl StepMetrics {
    /// Metrics of an experiment that diverged.
    pub fn undefined() -> Self {
        Self { e_ss: None, t_rise: None, t_settle: None, overshoot: None }
    }

    pub fn all_defined(&self) -> bool {
        self.e_ss.is_some() && self.t_rise.is_some() && self.t_settle.is_some() && self.overshoot.is_some()
    }
}

/// Specification vector and the evaluation window settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecThresholds {
    #[serde(default = "defaults::tau_e")]
    pub tau_e: f64,
    /// Rise time limit (s).
    #[serde(default = "defaults::tau_rise")]
    pub tau_rise: f64,
    /// Settling time limit (s).
    #[serde(default = "defaults::tau_settle")]
    pub tau_settle: f64,
    /// Overshoot limit (percent).
    #[serde(default = "defaults::tau_os")]
    pub tau_os: f64,
    /// Absolute settling band around the final value.
    #[serde(default = "defaults::settle_band")]
    pub settle_band: f64,
    /// Fraction of the horizon averaged to estimate the final value.
    #[serde(default = "defaults::terminal_fraction")]
    pub terminal_fraction: f64,
    /// Width (s) of the centered moving average applied to noisy responses.
    #[serde(default = "defaults::smoothing_window")]
    pub smoothing_window: f64,
}

mod defaults {
    pub fn tau_e() -> f64 {
        0.01
    }
    pub fn tau_rise() -> f64 {
        20.0
    }
    pub fn tau_settle() -> f64 {
        50.0
    }
    pub fn tau_os() -> f64 {
        20.0
    }
    pub fn settle_band() -> f64 {
        0.05
    }
    pub fn terminal_fraction() -> f64 {
        0.3
    }
    pub fn smoothing_window() -> f64 {
        8.0
    }
}

impl Default for SpecThresholds {
    fn default() -> Self {
        Self {
            tau_e: defaults::tau_e(),
            tau_rise: defaults::tau_rise(),
            tau_settle: defaults::tau_settle(),
            tau_os: defaults::tau_os(),
            settle_band: defaults::settle_band(),
            terminal_fraction: defaults::terminal_fraction(),
            smoothing_window: defaults::smoothing_window(),
        }
    }
}

impl SpecThresholds {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("tau_e", self.tau_e),
            ("tau_rise", self.tau_rise),
            ("tau_settle", self.tau_settle),
            ("tau_os", self.tau_os),
            ("settle_band", self.settle_band),
            ("terminal_fraction", self.terminal_fraction),
            ("smoothing_window", self.smoothing_window),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter { name, reason: format!("must be positive, got {v}") });
            }
        }
        if self.terminal_fraction > 1.0 {
            return Err(Error::InvalidParameter { name: "terminal_fraction", reason: "must be at most 1".into() });
        }
        Ok(())
    }
}

/// Centered moving average with `half` samples on each side, truncated at
/// the edges.
pub fn centered_moving_average(y: &[f64], half: usize) -> Vec<f64> {
    if half == 0 || y.is_empty() {
        return y.to_vec();
    }
    let mut prefix = Vec::with_capacity(y.len() + 1);
    prefix.push(0.0);
    for v in y {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..y.len())
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(y.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// First time the response reaches `level` moving in direction `sign`,
/// linearly interpolated between samples.
fn first_crossing(t: &[f64], y: &[f64], level: f64, sign: f64) -> Option<f64> {
    let reached = |v: f64| sign * (v - level) >= 0.0;
    let k = y.iter().position(|v| reached(*v))?;
    if k == 0 {
        return Some(t[0]);
    }
    let (y0, y1) = (y[k - 1], y[k]);
    let frac = if y1 != y0 { (level - y0) / (y1 - y0) } else { 1.0 };
    Some(t[k - 1] + frac.clamp(0.0, 1.0) * (t[k] - t[k - 1]))
}

/// Metrics of a step trace. The response starts at rest (deviation zero).
///
/// The final value `y_inf` is the mean over the terminal window. Rise time
/// runs between the first crossings of 10% and 90% of the step change.
/// Settling time is the first time after which the response stays within
/// `settle_band` of `y_inf`. Noisy traces are smoothed by a centered moving
/// average before the rise, settling and overshoot checks.
pub fn step_metrics(trace: &StepResponseTrace, cfg: &SimConfig, spec: &SpecThresholds) -> StepMetrics {
    let n = trace.len();
    if n < 2 {
        return StepMetrics::undefined();
    }
    let t_s = trace.t[1] - trace.t[0];
    let n_term = ((spec.terminal_fraction * n as f64).round() as usize).clamp(1, n);
    let y_inf = trace.y1[n - n_term..].iter().sum::<f64>() / n_term as f64;
    let e_ss = y_inf - cfg.r_step;

    let y: Vec<f64> = if cfg.noise_free {
        trace.y1.clone()
    } else {
        let half = ((spec.smoothing_window / t_s) / 2.0).floor() as usize;
        centered_moving_average(&trace.y1, half)
    };

    let initial = 0.0;
    let change = y_inf - initial;
    if !change.is_finite() || change.abs() <= 1e-9 * cfg.r_step.abs().max(1.0) {
        return StepMetrics { e_ss: Some(e_ss).filter(|v| v.is_finite()), ..StepMetrics::undefined() };
    }
    let sign = change.signum();

    let t10 = first_crossing(&trace.t, &y, initial + 0.1 * change, sign);
    let t90 = first_crossing(&trace.t, &y, initial + 0.9 * change, sign);
    let t_rise = match (t10, t90) {
        (Some(a), Some(b)) => Some((b - a).max(0.0)),
        _ => None,
    };

    let t_settle = match y.iter().rposition(|v| (v - y_inf).abs() > spec.settle_band) {
        None => Some(trace.t[0]),
        Some(k) if k + 1 < n => {
            // Interpolate the last exit from the band.
            let edge = y_inf + (y[k] - y_inf).signum() * spec.settle_band;
            let (y0, y1) = (y[k], y[k + 1]);
            let frac = if y1 != y0 { ((edge - y0) / (y1 - y0)).clamp(0.0, 1.0) } else { 1.0 };
            Some(trace.t[k] + frac * t_s)
        }
        Some(_) => None,
    };

    let peak = y.iter().map(|v| sign * (v - y_inf)).fold(f64::NEG_INFINITY, f64::max);
    let overshoot = Some(100.0 * peak.max(0.0) / change.abs());

    StepMetrics { e_ss: Some(e_ss), t_rise, t_settle, overshoot }
}

/// Metrics of a closed-loop outcome; diverged experiments are undefined.
pub fn outcome_metrics(outcome: &SimOutcome, cfg: &SimConfig, spec: &SpecThresholds) -> StepMetrics {
    match outcome {
        SimOutcome::Completed(trace) => step_metrics(trace, cfg, spec),
        SimOutcome::Diverged { .. } => StepMetrics::undefined(),
    }
}

/// Binary label: 1 iff every metric is defined and within its threshold.
pub fn pass_fail(m: &StepMetrics, tau: &SpecThresholds) -> u8 {
    let ok = matches!(m.e_ss, Some(e) if e.abs() <= tau.tau_e)
        && matches!(m.t_rise, Some(t) if t <= tau.tau_rise)
        && matches!(m.t_settle, Some(t) if t <= tau.tau_settle)
        && matches!(m.overshoot, Some(os) if os <= tau.tau_os);
    u8::from(ok)
}
