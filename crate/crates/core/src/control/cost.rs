//! Quadratic stage costs on recovered states.

use serde::{Deserialize, Serialize};

use crate::sim::{ObservationKind, System};

/// `Σ_i w_i s_i² + c Σ_j u_j²` over the state `s = (q, q̇)` with angles
/// recovered from their `(cos, sin)` channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub state_weights: Vec<f64>,
    pub control_weight: f64,
}

impl CostSpec {
    /// `θ² + 0.01 θ̇² + 0.001 u²`.
    pub fn pendulum() -> Self {
        Self { state_weights: vec![1.0, 0.01], control_weight: 0.001 }
    }

    /// `x² + 5 θ² + 0.1 ẋ² + 0.1 θ̇² + 0.01 u²`, state order `(x, θ, ẋ, θ̇)`.
    pub fn cartpole() -> Self {
        Self { state_weights: vec![1.0, 5.0, 0.1, 0.1], control_weight: 0.01 }
    }

    pub fn zero(state_dim: usize) -> Self {
        Self { state_weights: vec![0.0; state_dim], control_weight: 0.0 }
    }

    /// Control-only cost `c Σ u²`.
    pub fn control_only(state_dim: usize, c: f64) -> Self {
        Self { state_weights: vec![0.0; state_dim], control_weight: c }
    }

    pub fn for_system(system: &System) -> Self {
        match system {
            System::Pendulum(_) => Self::pendulum(),
            _ => Self::cartpole(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.state_weights.iter().chain([&self.control_weight]).all(|w| *w >= 0.0 && w.is_finite())
    }

    pub fn stage(&self, state: &[f64], u: &[f64]) -> f64 {
        let s: f64 = self.state_weights.iter().zip(state).map(|(w, x)| w * x * x).sum();
        s + self.control_weight * u.iter().map(|v| v * v).sum::<f64>()
    }

    /// Stage cost of a (possibly decoded) observation. Non-finite input
    /// costs `+∞`.
    pub fn stage_from_observation(&self, system: &System, kind: ObservationKind, obs: &[f64], u: &[f64]) -> f64 {
        if !obs.iter().all(|v| v.is_finite()) {
            return f64::INFINITY;
        }
        match system.state_from_observation(kind, obs) {
            Ok(s) => self.stage(&s, u),
            Err(_) => f64::INFINITY,
        }
    }
}

/// Trajectory cost: the state after step `k` is paired with `u_k`.
pub fn evaluate_cost(
    system: &System,
    kind: ObservationKind,
    observations: &[Vec<f64>],
    controls: &[Vec<f64>],
    spec: &CostSpec,
) -> f64 {
    observations.iter().zip(controls).map(|(o, u)| spec.stage_from_observation(system, kind, o, u)).sum()
}
