//! Experiment configuration (TOML). Every field has a default; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fvin::control::{CemConfig, CollectConfig};
use fvin::sim::{CartpoleParams, InitialDistribution, ObservationKind, PendulumParams, System, SystemKind};
use fvin::train::TrainConfig;
use fvin::{ModelSpec, Variant};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub system: SystemKind,
    pub variant: Variant,
    pub observation: ObservationKind,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub hidden: Vec<usize>,
    /// Step size; defaults to the system's native interval.
    pub h: Option<f64>,
    pub pendulum: PendulumParams,
    pub cartpole: CartpoleParams,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub predict: PredictConfig,
    pub cem: CemConfig,
    pub mpc: MpcSection,
    pub collect: CollectConfig,
    pub energy_audit: EnergyAuditConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemKind::Pendulum,
            variant: Variant::VvFvin,
            observation: ObservationKind::Native,
            seed: 0,
            out_dir: PathBuf::from("out"),
            hidden: vec![100, 100],
            h: None,
            pendulum: PendulumParams::default(),
            cartpole: CartpoleParams::default(),
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            predict: PredictConfig::default(),
            cem: CemConfig::default(),
            mpc: MpcSection::default(),
            collect: CollectConfig::default(),
            energy_audit: EnergyAuditConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlLawKind {
    Random,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub count: usize,
    pub length: usize,
    pub control_law: ControlLawKind,
    /// Dataset seed; falls back to the top-level seed.
    pub seed: Option<u64>,
    /// Per-coordinate `[lo, hi]` initial-state ranges.
    pub initial: Option<Vec<(f64, f64)>>,
    /// Read trajectories from these JSON-Lines files instead of simulating.
    pub files: Vec<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { count: 5, length: 50, control_law: ControlLawKind::Random, seed: None, initial: None, files: vec![] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    pub test_seed: u64,
    pub test_length: usize,
    pub alphas: Vec<f64>,
    /// Offline files to predict instead of simulated tests.
    pub files: Vec<PathBuf>,
    /// Replace controls by zero from this step on.
    pub zero_controls_after: Option<usize>,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self { test_seed: 1_000_003, test_length: 100, alphas: vec![-0.3, 0.0, 1.0, 1.5], files: vec![], zero_controls_after: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcSection {
    pub episode_len: usize,
    pub noise_fraction: f64,
    pub success_radius: f64,
    /// Grid side; the grid has `grid * grid` initial conditions.
    pub grid: usize,
    /// Second checkpoint for a cost-difference grid.
    pub compare_checkpoint: Option<PathBuf>,
}

impl Default for MpcSection {
    fn default() -> Self {
        Self { episode_len: 100, noise_fraction: 0.0, success_radius: 0.1, grid: 10, compare_checkpoint: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnergySource {
    /// Undamped analytic pendulum under VV and forward Euler.
    Analytic,
    /// Learned model with control and damping heads zeroed.
    Checkpoint,
    /// Damped ground-truth simulation with zero controls.
    Simulation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyAuditConfig {
    pub source: EnergySource,
    pub steps: usize,
    pub h: f64,
    pub initial: Vec<f64>,
}

impl Default for EnergyAuditConfig {
    fn default() -> Self {
        Self { source: EnergySource::Analytic, steps: 10_000, h: 0.05, initial: vec![1.0, 0.0] }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(cfg)
    }

    pub fn system(&self) -> System {
        match self.system {
            SystemKind::Pendulum => System::Pendulum(self.pendulum),
            SystemKind::Cartpole => System::Cartpole(self.cartpole),
            SystemKind::Qqs2Offline => System::Qqs2Offline,
        }
    }

    pub fn h(&self) -> f64 {
        self.h.unwrap_or_else(|| self.system().default_h())
    }

    pub fn dataset_seed(&self) -> u64 {
        self.dataset.seed.unwrap_or(self.seed)
    }

    pub fn initial_distribution(&self) -> InitialDistribution {
        match &self.dataset.initial {
            Some(r) => InitialDistribution { ranges: r.clone() },
            None => InitialDistribution::default_for(&self.system()),
        }
    }

    /// Observation kind actually fed to the model: position-only variants
    /// read position channels out of native observations.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        let sys = self.system();
        let layout = sys.observation_layout(self.observation)?;
        Ok(ModelSpec {
            variant: self.variant,
            layout,
            config_dim: sys.config_dim(),
            control_dim: sys.control_dim(),
            hidden: self.hidden.clone(),
            h: self.h(),
            seed: self.seed,
        })
    }

    /// Semantic checks beyond the schema.
    pub fn validate(&self) -> Result<()> {
        let sys = self.system();
        let p = &self.pendulum;
        if !(p.m > 0.0 && p.l > 0.0 && p.mu >= 0.0 && p.torque_limit > 0.0) {
            bail!("pendulum parameters need m, l > 0, mu >= 0, torque_limit > 0");
        }
        let c = &self.cartpole;
        if !(c.m_cart > 0.0 && c.m_pole > 0.0 && c.l > 0.0 && c.mu_cart >= 0.0 && c.mu_pole >= 0.0) {
            bail!("cartpole parameters need positive masses and length, non-negative friction");
        }
        if self.h() <= 0.0 {
            bail!("h must be positive");
        }
        if self.dataset.count == 0 && self.dataset.files.is_empty() {
            bail!("dataset.count must be at least 1");
        }
        if self.train.rollout_len > self.dataset.length && self.dataset.files.is_empty() {
            bail!("train.rollout_len must be shorter than the trajectories");
        }
        if let Some(r) = &self.dataset.initial {
            if r.len() != sys.state_dim() || r.iter().any(|(lo, hi)| lo > hi) {
                bail!("dataset.initial needs {} ordered ranges", sys.state_dim());
            }
        }
        let pos_only = self.variant.position_only();
        match (pos_only, self.observation) {
            (true, ObservationKind::State) => bail!("{} needs position-channel observations", self.variant),
            (false, ObservationKind::PositionOnly) => bail!("{} needs velocity channels", self.variant),
            _ => {}
        }
        if sys.kind() == SystemKind::Qqs2Offline && self.dataset.files.is_empty() {
            bail!("qqs2-offline has no simulator: set dataset.files");
        }
        for f in self.dataset.files.iter().chain(&self.predict.files).chain(&self.mpc.compare_checkpoint) {
            if !f.exists() {
                bail!("referenced file {} does not exist", f.display());
            }
        }
        self.train.validate()?;
        self.cem.validate()?;
        self.model_spec()?.validate()?;
        Ok(())
    }
}
