//! Synthetic historian archives, closed-loop controller identification and
//! labeling of identified controllers.
//!
//! Identification fits the discrete PID of [`crate::control`] to a recorded
//! error/command pair by nonlinear least squares. The outer loop maps
//! `r1 - y1` to `u1`; the inner loop maps `u1 - y2` to `u2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{
    discretize_pid, simulate_closed_loop, simulate_with_reference, spectral_radius, ControllerTheta, DiscretePlant,
    PidParams, SimConfig, SimOutcome,
};
use crate::error::{Error, Result};
use crate::metrics::{outcome_metrics, pass_fail, SpecThresholds};
use crate::optim::{levenberg_marquardt, Bounds, LmOptions};
use crate::par::{self, Execution};
use crate::seed;

pub mod io;

/// Shortest batch accepted for identification.
pub const MIN_BATCH_LEN: usize = 200;

/// Closed-loop record of one archived controller.
#[derive(Debug, Clone, PartialEq)]
pub struct HistorianBatch {
    pub id: String,
    pub t_s: f64,
    pub r1: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
}

impl HistorianBatch {
    pub fn len(&self) -> usize {
        self.r1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r1.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidBatch { id: self.id.clone(), reason });
        let n = self.r1.len();
        if [&self.u1, &self.u2, &self.y1, &self.y2].iter().any(|s| s.len() != n) {
            return bad("signal lengths differ".into());
        }
        if n < MIN_BATCH_LEN {
            return bad(format!("{n} samples, need at least {MIN_BATCH_LEN}"));
        }
        if !(self.t_s.is_finite() && self.t_s > 0.0) {
            return bad(format!("sampling period {} is not positive", self.t_s));
        }
        if [&self.r1, &self.u1, &self.u2, &self.y1, &self.y2].iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return bad("non-finite sample".into());
        }
        Ok(())
    }

    /// Error signal and controller output for one loop.
    pub fn loop_signals(&self, which: LoopSelector) -> (Vec<f64>, &[f64]) {
        match which {
            LoopSelector::Outer => (self.r1.iter().zip(&self.y1).map(|(r, y)| r - y).collect(), &self.u1),
            LoopSelector::Inner => (self.u1.iter().zip(&self.y2).map(|(u, y)| u - y).collect(), &self.u2),
        }
    }
}

/// Where a labeled point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Historian,
    Online,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub theta: Vec<f64>,
    pub label: u8,
    pub provenance: Provenance,
}

/// Controller parameter vectors with binary pass/fail labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    dim: usize,
    points: Vec<LabeledPoint>,
}

impl LabeledDataset {
    pub fn new(dim: usize) -> Self {
        Self { dim, points: Vec::new() }
    }

    pub fn push(&mut self, theta: Vec<f64>, label: u8, provenance: Provenance) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: theta.len() });
        }
        if label > 1 {
            return Err(Error::InvalidParameter { name: "label", reason: format!("labels are 0 or 1, got {label}") });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter { name: "theta", reason: "non-finite component".into() });
        }
        self.points.push(LabeledPoint { theta, label, provenance });
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn inputs(&self) -> Vec<&[f64]> {
        self.points.iter().map(|p| p.theta.as_slice()).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.points.iter().map(|p| p.label).collect()
    }

    pub fn count(&self, label: u8) -> usize {
        self.points.iter().filter(|p| p.label == label).count()
    }

    pub fn has_both_classes(&self) -> bool {
        self.count(0) > 0 && self.count(1) > 0
    }

    /// Copy with every label inverted.
    pub fn flipped(&self) -> Self {
        let points = self.points.iter().map(|p| LabeledPoint { label: 1 - p.label, ..p.clone() }).collect();
        Self { dim: self.dim, points }
    }
}

/// Box around a nominal tuning from which archived controllers are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistorianSpec {
    /// Nominal tuning; each component is drawn uniformly in
    /// `nominal * (1 +/- rel_spread)`.
    pub nominal: Vec<f64>,
    #[serde(default = "HistorianSpec::default_rel_spread")]
    pub rel_spread: f64,
    /// PRBS amplitude relative to `r_step`.
    #[serde(default = "HistorianSpec::default_prbs_amplitude")]
    pub prbs_amplitude: f64,
    /// Mean PRBS hold length in samples.
    #[serde(default = "HistorianSpec::default_prbs_hold")]
    pub prbs_hold: usize,
    /// Draws with a closed-loop spectral radius above this are rejected.
    #[serde(default = "HistorianSpec::default_max_spectral_radius")]
    pub max_spectral_radius: f64,
    #[serde(default = "HistorianSpec::default_retry_budget")]
    pub retry_budget: usize,
}

impl HistorianSpec {
    fn default_rel_spread() -> f64 {
        0.3
    }
    fn default_prbs_amplitude() -> f64 {
        0.05
    }
    fn default_prbs_hold() -> usize {
        20
    }
    fn default_max_spectral_radius() -> f64 {
        0.9995
    }
    fn default_retry_budget() -> usize {
        1000
    }

    pub fn around(nominal: &ControllerTheta) -> Self {
        Self {
            nominal: nominal.to_vec(),
            rel_spread: Self::default_rel_spread(),
            prbs_amplitude: Self::default_prbs_amplitude(),
            prbs_hold: Self::default_prbs_hold(),
            max_spectral_radius: Self::default_max_spectral_radius(),
            retry_budget: Self::default_retry_budget(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ControllerTheta::from_slice(&self.nominal)?.validate()?;
        if !(self.rel_spread >= 0.0 && self.rel_spread < 1.0) {
            return Err(Error::InvalidParameter { name: "rel_spread", reason: format!("must lie in [0, 1), got {}", self.rel_spread) });
        }
        if !(self.prbs_amplitude.is_finite() && self.prbs_amplitude >= 0.0) {
            return Err(Error::InvalidParameter { name: "prbs_amplitude", reason: "must be >= 0".into() });
        }
        if self.prbs_hold == 0 {
            return Err(Error::InvalidParameter { name: "prbs_hold", reason: "must be >= 1".into() });
        }
        if !(self.max_spectral_radius > 0.0 && self.max_spectral_radius <= 1.0) {
            return Err(Error::InvalidParameter { name: "max_spectral_radius", reason: "must lie in (0, 1]".into() });
        }
        Ok(())
    }
}

/// Step of height `r_step` with a superimposed random binary sequence of
/// relative amplitude `amplitude`. The sign switches with probability
/// `1 / hold` per sample.
pub fn prbs_reference<R: Rng + ?Sized>(n: usize, r_step: f64, amplitude: f64, hold: usize, rng: &mut R) -> Vec<f64> {
    let mut sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let p = 1.0 / hold as f64;
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < p {
                sign = -sign;
            }
            r_step * (1.0 + amplitude * sign)
        })
        .collect()
}

/// Draws `n_batches` stabilizing controllers around the nominal tuning and
/// records one excited closed-loop run for each.
///
/// Returns the batches together with the ground-truth controllers.
pub fn generate_historian(
    plant: &DiscretePlant,
    cfg: &SimConfig,
    spec: &HistorianSpec,
    n_batches: usize,
    seed: u64,
) -> Result<(Vec<HistorianBatch>, Vec<ControllerTheta>)> {
    spec.validate()?;
    cfg.validate()?;
    if n_batches == 0 {
        return Err(Error::InvalidParameter { name: "n_batches", reason: "must be >= 1".into() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.samples(plant.t_s);
    let mut batches = Vec::with_capacity(n_batches);
    let mut truths = Vec::with_capacity(n_batches);
    let mut attempts = 0;
    while batches.len() < n_batches {
        if attempts >= spec.retry_budget {
            return Err(Error::StabilizingDrawFailed { wanted: n_batches, budget: spec.retry_budget });
        }
        attempts += 1;
        let v: Vec<f64> = spec.nominal.iter().map(|c| c * (1.0 + spec.rel_spread * rng.random_range(-1.0..=1.0))).collect();
        let theta = ControllerTheta::from_slice(&v)?;
        if theta.validate().is_err() || spectral_radius(plant, &theta)? >= spec.max_spectral_radius {
            continue;
        }
        let reference = prbs_reference(n, cfg.r_step, spec.prbs_amplitude, spec.prbs_hold, &mut rng);
        let run_cfg = cfg.with_seed(seed::derive(seed, batches.len() as u64));
        let SimOutcome::Completed(tr) = simulate_with_reference(plant, &theta, &reference, &run_cfg)? else {
            continue;
        };
        batches.push(HistorianBatch {
            id: format!("batch_{:03}", batches.len()),
            t_s: plant.t_s,
            r1: tr.r1,
            u1: tr.u1,
            u2: tr.u2,
            y1: tr.y1,
            y2: tr.y2,
        });
        truths.push(theta);
    }
    Ok((batches, truths))
}

/// Which controller of the cascade to identify.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopSelector {
    Outer,
    Inner,
}

/// Identification search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentOptions {
    #[serde(default = "IdentOptions::default_starts")]
    pub starts: usize,
    /// Upper bound for `K_p`, `K_i`, `K_d` (lower bound 0).
    #[serde(default = "IdentOptions::default_gain_max")]
    pub gain_max: f64,
    #[serde(default = "IdentOptions::default_tf_min")]
    pub tf_min: f64,
    #[serde(default = "IdentOptions::default_tf_max")]
    pub tf_max: f64,
    /// `|K_d|` below this marks `T_f` as unidentifiable.
    #[serde(default = "IdentOptions::default_kd_flag")]
    pub kd_flag: f64,
    #[serde(default)]
    pub seed: u64,
}

impl IdentOptions {
    fn default_starts() -> usize {
        8
    }
    fn default_gain_max() -> f64 {
        100.0
    }
    fn default_tf_min() -> f64 {
        1e-3
    }
    fn default_tf_max() -> f64 {
        5.0
    }
    fn default_kd_flag() -> f64 {
        1e-3
    }

    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::new(
            vec![0.0, 0.0, 0.0, self.tf_min],
            vec![self.gain_max, self.gain_max, self.gain_max, self.tf_max],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.starts == 0 {
            return Err(Error::InvalidParameter { name: "starts", reason: "must be >= 1".into() });
        }
        if !(self.tf_min > 0.0) {
            return Err(Error::InvalidParameter { name: "tf_min", reason: "must be positive".into() });
        }
        self.bounds().map(|_| ())
    }
}

impl Default for IdentOptions {
    fn default() -> Self {
        Self {
            starts: Self::default_starts(),
            gain_max: Self::default_gain_max(),
            tf_min: Self::default_tf_min(),
            tf_max: Self::default_tf_max(),
            kd_flag: Self::default_kd_flag(),
            seed: 0,
        }
    }
}

/// Identified controller and fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    pub pid: PidParams,
    /// Residual sum of squares at `pid`.
    pub objective: f64,
    /// Residual sum of squares at each multistart initial point.
    pub start_objectives: Vec<f64>,
    /// Asymptotic standard errors of `[Kp, Ki, Kd, Tf]`; infinite when the
    /// component is not identifiable.
    pub std_errors: [f64; 4],
    /// `T_f` carries no signal because `K_d` is effectively zero.
    pub tf_unidentifiable: bool,
}

/// Output of the discrete PID driven by `error` from rest.
pub fn pid_response(pid: &PidParams, t_s: f64, error: &[f64]) -> Result<Vec<f64>> {
    let mut c = discretize_pid(pid, t_s)?;
    Ok(error.iter().map(|e| c.step(*e)).collect())
}

/// Least-squares PID fit for one loop of a batch.
pub fn identify_pid(batch: &HistorianBatch, which: LoopSelector, opts: &IdentOptions) -> Result<Identification> {
    batch.validate()?;
    opts.validate()?;
    let (error, target) = batch.loop_signals(which);
    let bounds = opts.bounds()?;
    let residual = |p: &[f64]| -> Vec<f64> {
        let pid = PidParams::from_slice(p);
        match pid_response(&pid, batch.t_s, &error) {
            Ok(u) => u.iter().zip(target).map(|(a, b)| a - b).collect(),
            Err(_) => vec![f64::INFINITY; target.len()],
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts: Vec<Vec<f64>> = (0..opts.starts).map(|_| bounds.sample(&mut rng)).collect();
    let lm = LmOptions::default();
    let mut start_objectives = Vec::with_capacity(starts.len());
    let mut best: Option<(usize, crate::optim::LsqFit)> = None;
    for (i, s) in starts.iter().enumerate() {
        start_objectives.push(residual(s).iter().map(|v| v * v).sum());
        let fit = levenberg_marquardt(residual, s, &bounds, &lm);
        if best.as_ref().is_none_or(|(_, b)| fit.rss < b.rss) {
            best = Some((i, fit));
        }
    }
    let (best_start, fit) = best.expect("at least one start");

    let mut x = fit.x.clone();
    let tf_unidentifiable = x[2].abs() < opts.kd_flag;
    if tf_unidentifiable {
        x[3] = starts[best_start][3];
    }
    let std_errors = standard_errors(&fit, if tf_unidentifiable { 3 } else { 4 });
    Ok(Identification {
        pid: PidParams::from_slice(&x),
        objective: fit.rss,
        start_objectives,
        std_errors,
        tf_unidentifiable,
    })
}

/// `sqrt(diag(s^2 (J'J)^-1))` over the first `p` parameters with
/// `s^2 = RSS / (N - p)`.
fn standard_errors(fit: &crate::optim::LsqFit, p: usize) -> [f64; 4] {
    let mut out = [f64::INFINITY; 4];
    let n = fit.residual.len();
    if n <= p {
        return out;
    }
    let j = fit.jacobian.columns(0, p).into_owned();
    let s2 = fit.rss / (n - p) as f64;
    if let Some(inv) = (j.transpose() * &j).try_inverse() {
        for (i, o) in out.iter_mut().enumerate().take(p) {
            let v = s2 * inv[(i, i)];
            *o = if v >= 0.0 { v.sqrt() } else { f64::INFINITY };
        }
    }
    out
}

/// Identifies the full controller for the loop architecture of `case_dim`
/// (4: outer only, 8: outer then inner).
pub fn identify_theta(batch: &HistorianBatch, dim: usize, opts: &IdentOptions) -> Result<(ControllerTheta, Vec<Identification>)> {
    let outer = identify_pid(batch, LoopSelector::Outer, opts)?;
    match dim {
        4 => Ok((ControllerTheta::single(outer.pid), vec![outer])),
        8 => {
            let inner = identify_pid(batch, LoopSelector::Inner, opts)?;
            Ok((ControllerTheta::cascade(outer.pid, inner.pid), vec![outer, inner]))
        }
        got => Err(Error::Dimension { expected: 4, got }),
    }
}

/// One fresh step test: returns the pass/fail label.
pub fn step_test_label(plant: &DiscretePlant, theta: &ControllerTheta, cfg: &SimConfig, tau: &SpecThresholds) -> Result<u8> {
    let outcome = simulate_closed_loop(plant, theta, cfg)?;
    Ok(pass_fail(&outcome_metrics(&outcome, cfg, tau), tau))
}

/// Labels each controller with a fresh step test seeded by
/// `derive(seed, index)`. Output order matches input order.
pub fn label_controllers(
    thetas: &[ControllerTheta],
    plant: &DiscretePlant,
    cfg: &SimConfig,
    tau: &SpecThresholds,
    seed: u64,
    exec: Execution,
) -> Result<Vec<u8>> {
    par::map_indexed(exec, thetas.len(), |i| {
        step_test_label(plant, &thetas[i], &cfg.with_seed(seed::derive(seed, i as u64)), tau)
    })
    .into_iter()
    .collect()
}

/// Archive plus everything derived from it.
#[derive(Debug, Clone)]
pub struct HistorianArchive {
    pub batches: Vec<HistorianBatch>,
    pub truths: Vec<ControllerTheta>,
    pub identified: Vec<ControllerTheta>,
    pub dataset: LabeledDataset,
    /// Archive draws needed to obtain both classes.
    pub attempts: usize,
}

/// Settings for [`build_archive`].
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveSettings {
    pub historian: HistorianSpec,
    pub ident: IdentOptions,
    pub n_hist: usize,
    /// Fresh archives drawn before giving up on a single-class archive.
    pub max_attempts: usize,
}

/// Generates, identifies and labels an archive, redrawing it until both
/// classes are present.
pub fn build_archive(
    plant: &DiscretePlant,
    cfg: &SimConfig,
    tau: &SpecThresholds,
    settings: &ArchiveSettings,
    seed: u64,
    exec: Execution,
) -> Result<HistorianArchive> {
    let dim = settings.historian.nominal.len();
    let mut last_class = 0;
    for attempt in 0..settings.max_attempts.max(1) {
        let s = seed::derive(seed, attempt as u64);
        let (batches, truths) = generate_historian(plant, cfg, &settings.historian, settings.n_hist, s)?;
        let identified: Vec<ControllerTheta> = par::map_slice(exec, &batches, |b| identify_theta(b, dim, &settings.ident).map(|r| r.0))
            .into_iter()
            .collect::<Result<_>>()?;
        let labels = label_controllers(&identified, plant, cfg, tau, seed::derive(s, u64::MAX), exec)?;
        let mut dataset = LabeledDataset::new(dim);
        for (theta, label) in identified.iter().zip(&labels) {
            dataset.push(theta.to_vec(), *label, Provenance::Historian)?;
        }
        if dataset.has_both_classes() {
            return Ok(HistorianArchive { batches, truths, identified, dataset, attempts: attempt + 1 });
        }
        last_class = labels[0];
        log::warn!("archive attempt {attempt} holds only class {last_class}; redrawing");
    }
    Err(Error::DegenerateArchive { class: last_class, attempts: settings.max_attempts.max(1) })
}
