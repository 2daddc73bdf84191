//! Costs, CEM planning, MPC episodes and MPC-driven data collection.

pub mod cem;
pub mod collect;
pub mod cost;
pub mod mpc;

pub use cem::{
    cem_plan, refit, sample_sequences, select_elites, CemConfig, CemOutcome, CemPlan, InertPlanner, LearnedPlanner,
    PlanError, PlanningModel, SimulatorPlanner,
};
pub use collect::{train_with_mpc, CollectConfig, CollectError, CollectOutcome};
pub use cost::{evaluate_cost, CostSpec};
pub use mpc::{initial_grid, pole_in_ball, run_grid, run_mpc, write_summaries, Episode, EpisodeSummary, GridResult, MpcConfig};
