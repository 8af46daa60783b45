//! Experiment configuration: one TOML file with a section per module.
//!
//! Only `case`, `seed`, `output` and at least one `[[instance]]` are required;
//! every other value has a default.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use igv_ace::ace::{AceSettings, CostSpec, PenaltySchedule, SearchSettings};
use igv_ace::control::{ControllerTheta, DiscretePlant, LoopCase, SimConfig};
use igv_ace::ident::{ArchiveSettings, HistorianSpec, IdentOptions};
use igv_ace::metrics::SpecThresholds;
use igv_ace::plant::PlantParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseKind {
    Single,
    Cascade,
}

impl CaseKind {
    pub fn dim(self) -> usize {
        match self {
            CaseKind::Single => LoopCase::Single.dim(),
            CaseKind::Cascade => LoopCase::Cascade.dim(),
        }
    }
}

/// One baseline controller to explain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub name: String,
    pub theta0: Vec<f64>,
}

/// Historian draws around each instance's baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistorianSection {
    pub rel_spread: f64,
    pub prbs_amplitude: f64,
    pub prbs_hold: usize,
    pub max_spectral_radius: f64,
    pub retry_budget: usize,
    /// Archives redrawn before a single-class archive is an error.
    pub max_attempts: usize,
}

impl Default for HistorianSection {
    fn default() -> Self {
        let h = HistorianSpec::around(&ControllerTheta::from_slice(&[1.0; 4]).expect("four entries"));
        Self {
            rel_spread: h.rel_spread,
            prbs_amplitude: h.prbs_amplitude,
            prbs_hold: h.prbs_hold,
            max_spectral_radius: h.max_spectral_radius,
            retry_budget: h.retry_budget,
            max_attempts: 20,
        }
    }
}

/// Cost terms; per-component vectors default to all ones (weights) and all
/// actionable (mask).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub beta: f64,
    pub distance_weights: Option<Vec<f64>>,
    pub sparsity_weights: Option<Vec<f64>>,
    pub mask: Option<Vec<bool>>,
    pub lof_k: usize,
    pub lof_threshold: f64,
    pub lof_enabled: bool,
    pub trust_abs: f64,
    pub trust_rel: f64,
    pub tf_min: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        let c = CostSpec::new(&[1.0; 4]);
        Self {
            beta: c.beta,
            distance_weights: None,
            sparsity_weights: None,
            mask: None,
            lof_k: c.lof_k,
            lof_threshold: c.lof_threshold,
            lof_enabled: c.lof_enabled,
            trust_abs: c.trust_abs,
            trust_rel: c.trust_rel,
            tf_min: c.tf_min,
        }
    }
}

fn default_n_hist() -> usize {
    30
}
fn default_n_runs() -> usize {
    100
}
fn default_budget() -> usize {
    AceSettings::default().budget
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: CaseKind,
    /// Run `i` of every instance uses seed `seed + i`.
    pub seed: u64,
    pub output: PathBuf,
    #[serde(default = "default_n_hist")]
    pub n_hist: usize,
    #[serde(default = "default_n_runs")]
    pub n_runs: usize,
    /// Worker threads; 0 uses the available parallelism.
    #[serde(default)]
    pub workers: usize,
    /// Run whose baseline and counterfactual step traces are exported.
    #[serde(default)]
    pub designated_run: usize,
    /// Real step tests allowed per search, baseline included.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(rename = "instance")]
    pub instances: Vec<Instance>,
    #[serde(default)]
    pub plant: PlantParams,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub thresholds: SpecThresholds,
    #[serde(default)]
    pub historian: HistorianSection,
    #[serde(default)]
    pub ident: IdentOptions,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub penalty: PenaltySchedule,
    #[serde(default)]
    pub search: SearchSettings,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| anyhow::anyhow!("{}", e.message().trim_end()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            bail!("`n_runs` must be >= 1");
        }
        if self.n_hist < 2 {
            bail!("`n_hist` must be >= 2");
        }
        if self.instances.is_empty() {
            bail!("at least one `[[instance]]` is required");
        }
        if self.designated_run >= self.n_runs {
            bail!("`designated_run` {} is outside 0..{}", self.designated_run, self.n_runs);
        }
        self.plant.validate()?;
        self.sim.validate()?;
        self.thresholds.validate()?;
        self.ident.validate()?;
        self.ace_settings().validate()?;
        let mut names = std::collections::BTreeSet::new();
        for inst in &self.instances {
            if !names.insert(inst.name.as_str()) {
                bail!("instance name `{}` is repeated", inst.name);
            }
            if inst.name.is_empty() || inst.name.contains([',', '/', '\\', '"']) {
                bail!("instance name `{}` must be nonempty without `,` `/` `\\` or quotes", inst.name);
            }
            if inst.theta0.len() != self.case.dim() {
                bail!("instance `{}`: theta0 has {} entries, case needs {}", inst.name, inst.theta0.len(), self.case.dim());
            }
            self.cost_spec(inst)?.validate()?;
            self.archive_settings(inst)?.historian.validate()?;
        }
        Ok(())
    }

    pub fn plant(&self) -> Result<DiscretePlant> {
        Ok(DiscretePlant::from_params(&self.plant)?)
    }

    pub fn ace_settings(&self) -> AceSettings {
        AceSettings { schedule: self.penalty, search: self.search, budget: self.budget }
    }

    pub fn cost_spec(&self, inst: &Instance) -> Result<CostSpec> {
        let n = inst.theta0.len();
        let c = &self.cost;
        let pick = |v: &Option<Vec<f64>>, name: &str| -> Result<Vec<f64>> {
            match v {
                Some(w) if w.len() != n => bail!("`cost.{name}` has {} entries, case needs {n}", w.len()),
                Some(w) => Ok(w.clone()),
                None => Ok(vec![1.0; n]),
            }
        };
        let mask = match &c.mask {
            Some(m) if m.len() != n => bail!("`cost.mask` has {} entries, case needs {n}", m.len()),
            Some(m) => m.clone(),
            None => vec![true; n],
        };
        Ok(CostSpec {
            theta0: inst.theta0.clone(),
            distance_weights: pick(&c.distance_weights, "distance_weights")?,
            beta: c.beta,
            sparsity_weights: pick(&c.sparsity_weights, "sparsity_weights")?,
            mask,
            lof_k: c.lof_k,
            lof_threshold: c.lof_threshold,
            lof_enabled: c.lof_enabled,
            trust_abs: c.trust_abs,
            trust_rel: c.trust_rel,
            tf_min: c.tf_min,
        })
    }

    pub fn archive_settings(&self, inst: &Instance) -> Result<ArchiveSettings> {
        let h = &self.historian;
        Ok(ArchiveSettings {
            historian: HistorianSpec {
                nominal: inst.theta0.clone(),
                rel_spread: h.rel_spread,
                prbs_amplitude: h.prbs_amplitude,
                prbs_hold: h.prbs_hold,
                max_spectral_radius: h.max_spectral_radius,
                retry_budget: h.retry_budget,
            },
            ident: self.ident.clone(),
            n_hist: self.n_hist,
            max_attempts: h.max_attempts,
        })
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }
}
