//! Iterative data collection: train, act with noisy MPC, append, retrain.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cem::{LearnedPlanner, PlanError};
use super::cost::CostSpec;
use super::mpc::{run_mpc, MpcConfig};
use crate::model::{Model, ModelError, ModelSpec};
use crate::par::Exec;
use crate::sim::{
    sample_trajectories, trajectory_rng, ControlLaw, InitialDistribution, ObservationKind, SampleConfig, SimError,
    System, Trajectory,
};
use crate::train::{train, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("initial data: {0}")]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training round {round}: {source}")]
    Train { round: usize, source: TrainError },
    #[error("collection round {round}: {source}")]
    Plan { round: usize, source: PlanError },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    pub initial_trajectories: usize,
    pub trajectory_len: usize,
    pub initial_epochs: usize,
    pub incremental_epochs: usize,
    /// Number of noisy MPC trajectories to add.
    pub rounds: usize,
    pub noise_fraction: f64,
    pub seed: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            initial_trajectories: 5,
            trajectory_len: 50,
            initial_epochs: 5000,
            incremental_epochs: 1000,
            rounds: 15,
            noise_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CollectOutcome {
    pub model: Model,
    pub dataset: Vec<Trajectory>,
    /// Loss curve of every training round, the initial one first.
    pub loss_curves: Vec<Vec<f64>>,
}

/// Starts from random-control data, then alternates one noisy MPC episode
/// (with the current model as planner) and a shorter retraining round.
pub fn train_with_mpc(
    system: &System,
    spec: ModelSpec,
    cfg: &CollectConfig,
    train_cfg: &TrainConfig,
    mpc: &MpcConfig,
    exec: Exec,
) -> Result<CollectOutcome, CollectError> {
    let mut sample = SampleConfig::new(system, cfg.initial_trajectories, cfg.trajectory_len, cfg.seed);
    sample.h = spec.h;
    let mut dataset = sample_trajectories(system, &sample, ControlLaw::Random, exec)?;
    let mut model = Model::new(spec)?;
    let mut loss_curves = Vec::new();
    let round_cfg = |round: usize| TrainConfig {
        epochs: if round == 0 { cfg.initial_epochs } else { cfg.incremental_epochs },
        seed: train_cfg.seed.wrapping_add(round as u64),
        ..train_cfg.clone()
    };
    let report = train(&mut model, &dataset, &round_cfg(0), exec).map_err(|source| CollectError::Train { round: 0, source })?;
    loss_curves.push(report.loss_curve);

    let cost = CostSpec::for_system(system);
    let episode_cfg = MpcConfig { episode_len: cfg.trajectory_len, noise_fraction: cfg.noise_fraction, ..mpc.clone() };
    let init = InitialDistribution::default_for(system);
    for round in 1..=cfg.rounds {
        // Stream numbers past the initial trajectories keep the draws disjoint.
        let mut rng = trajectory_rng(cfg.seed, cfg.initial_trajectories + round);
        let x0 = init.sample(&mut rng);
        let episode = {
            let mut planner = LearnedPlanner::new(&model, *system, ObservationKind::Native)
                .map_err(|source| CollectError::Plan { round, source })?;
            planner.exec = exec;
            run_mpc(system, &planner, &cost, &episode_cfg, &x0, &mut rng).map_err(|source| CollectError::Plan { round, source })?
        };
        dataset.push(episode.trajectory);
        let report =
            train(&mut model, &dataset, &round_cfg(round), exec).map_err(|source| CollectError::Train { round, source })?;
        loss_curves.push(report.loss_curve);
    }
    Ok(CollectOutcome { model, dataset, loss_curves })
}
