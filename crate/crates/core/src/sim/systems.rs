//! Damped pendulum and damped cartpole dynamics, observation maps and energy.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::rk45::{rk45, Rk45Error, Tolerance};
use crate::model::ObservationLayout;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("{0} has no simulator (offline data only)")]
    NotSimulated(SystemKind),
    #[error("expected state of length {expected}, got {found}")]
    StateDim { expected: usize, found: usize },
    #[error("expected control of length {expected}, got {found}")]
    ControlDim { expected: usize, found: usize },
    #[error("{kind:?} observations are not available for {system}")]
    Observation { system: SystemKind, kind: ObservationKind },
    #[error(transparent)]
    Integrator(#[from] Rk45Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Pendulum,
    Cartpole,
    Qqs2Offline,
}

impl SystemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SystemKind::Pendulum => "pendulum",
            SystemKind::Cartpole => "cartpole",
            SystemKind::Qqs2Offline => "qqs2-offline",
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pendulum" => Ok(SystemKind::Pendulum),
            "cartpole" => Ok(SystemKind::Cartpole),
            "qqs2-offline" | "qqs2" => Ok(SystemKind::Qqs2Offline),
            other => Err(format!("unknown system `{other}`")),
        }
    }
}

/// How states are presented to the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationKind {
    /// Angles as `(cos, sin)` pairs, e.g. `(cos θ, sin θ, θ̇)` for the pendulum.
    #[default]
    Native,
    /// The raw state `(q, q̇)`; encoder and decoder are identities.
    State,
    /// Position channels of the native observation only.
    PositionOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumParams {
    pub m: f64,
    pub l: f64,
    pub g: f64,
    pub mu: f64,
    pub torque_limit: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self { m: 1.0, l: 1.0, g: 9.81, mu: 0.2, torque_limit: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartpoleParams {
    pub m_cart: f64,
    pub m_pole: f64,
    pub l: f64,
    pub mu_cart: f64,
    pub mu_pole: f64,
    pub g: f64,
    pub force_limit: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        Self { m_cart: 1.0, m_pole: 0.1, l: 1.0, mu_cart: 0.1, mu_pole: 0.05, g: 9.81, force_limit: 10.0 }
    }
}

/// Pendulum right-hand side. State `(θ, θ̇)`, θ = 0 hanging at rest.
/// Returns `(θ̇, θ̈)`; the torque is clamped to the actuator limit.
pub fn pendulum_deriv(theta: f64, theta_dot: f64, torque: f64, p: &PendulumParams) -> (f64, f64) {
    let tau = torque.clamp(-p.torque_limit, p.torque_limit);
    let acc = -(p.mu / p.m) * theta_dot - (p.g / p.l) * theta.sin() + tau / (p.m * p.l * p.l);
    (theta_dot, acc)
}

/// Cartpole mass matrix at pole angle `θ` (θ = 0 upright).
pub fn cartpole_mass_matrix(theta: f64, p: &CartpoleParams) -> [[f64; 2]; 2] {
    let off = p.m_pole * p.l * theta.cos();
    [[p.m_cart + p.m_pole, off], [off, p.m_pole * p.l * p.l]]
}

/// Cartpole accelerations `(ẍ, θ̈)` from the 2×2 mass-matrix system; the
/// cart force is clamped to the actuator limit.
pub fn cartpole_deriv(_x: f64, theta: f64, x_dot: f64, theta_dot: f64, force: f64, p: &CartpoleParams) -> (f64, f64) {
    let f = force.clamp(-p.force_limit, p.force_limit);
    let [[a, b], [_, d]] = cartpole_mass_matrix(theta, p);
    let (s, _) = theta.sin_cos();
    let r1 = p.m_pole * p.l * theta_dot * theta_dot * s + f - p.mu_cart * x_dot;
    let r2 = p.m_pole * p.g * p.l * s - p.mu_pole * theta_dot;
    let det = a * d - b * b;
    ((d * r1 - b * r2) / det, (a * r2 - b * r1) / det)
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// A simulated (or offline-only) mechanical system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum System {
    Pendulum(PendulumParams),
    Cartpole(CartpoleParams),
    Qqs2Offline,
}

impl System {
    pub fn pendulum() -> Self {
        System::Pendulum(PendulumParams::default())
    }

    pub fn cartpole() -> Self {
        System::Cartpole(CartpoleParams::default())
    }

    pub fn from_kind(kind: SystemKind) -> Self {
        match kind {
            SystemKind::Pendulum => Self::pendulum(),
            SystemKind::Cartpole => Self::cartpole(),
            SystemKind::Qqs2Offline => System::Qqs2Offline,
        }
    }

    pub fn kind(&self) -> SystemKind {
        match self {
            System::Pendulum(_) => SystemKind::Pendulum,
            System::Cartpole(_) => SystemKind::Cartpole,
            System::Qqs2Offline => SystemKind::Qqs2Offline,
        }
    }

    /// Configuration dimension `n`; the state is `(q, q̇)` of length `2n`.
    pub fn config_dim(&self) -> usize {
        match self {
            System::Pendulum(_) => 1,
            System::Cartpole(_) | System::Qqs2Offline => 2,
        }
    }

    pub fn state_dim(&self) -> usize {
        2 * self.config_dim()
    }

    pub fn control_dim(&self) -> usize {
        1
    }

    /// Symmetric actuator limit.
    pub fn control_limit(&self) -> f64 {
        match self {
            System::Pendulum(p) => p.torque_limit,
            System::Cartpole(p) => p.force_limit,
            System::Qqs2Offline => 2.0,
        }
    }

    /// Native sampling interval.
    pub fn default_h(&self) -> f64 {
        match self {
            System::Qqs2Offline => 0.04,
            _ => 0.1,
        }
    }

    /// Index of the pole angle within the state, and of its rate.
    pub fn pole_indices(&self) -> (usize, usize) {
        match self {
            System::Pendulum(_) => (0, 1),
            System::Cartpole(_) | System::Qqs2Offline => (1, 3),
        }
    }

    /// The same system with every friction coefficient multiplied by `alpha`.
    pub fn with_damping_scale(&self, alpha: f64) -> Self {
        match *self {
            System::Pendulum(p) => System::Pendulum(PendulumParams { mu: p.mu * alpha, ..p }),
            System::Cartpole(p) => {
                System::Cartpole(CartpoleParams { mu_cart: p.mu_cart * alpha, mu_pole: p.mu_pole * alpha, ..p })
            }
            System::Qqs2Offline => System::Qqs2Offline,
        }
    }

    /// Energy of a full observation, `NaN` when it cannot be recovered.
    pub fn observation_energy(&self, kind: ObservationKind, obs: &[f64]) -> f64 {
        self.state_from_observation(kind, obs).and_then(|s| self.energy(&s)).unwrap_or(f64::NAN)
    }

    fn check_state(&self, state: &[f64]) -> Result<(), SimError> {
        if state.len() != self.state_dim() {
            return Err(SimError::StateDim { expected: self.state_dim(), found: state.len() });
        }
        Ok(())
    }

    fn check_control(&self, u: &[f64]) -> Result<(), SimError> {
        if u.len() != self.control_dim() {
            return Err(SimError::ControlDim { expected: self.control_dim(), found: u.len() });
        }
        Ok(())
    }

    /// `ẏ` for state `y` and control `u`.
    pub fn deriv(&self, state: &[f64], u: &[f64]) -> Result<Vec<f64>, SimError> {
        self.check_state(state)?;
        self.check_control(u)?;
        match self {
            System::Pendulum(p) => {
                let (a, b) = pendulum_deriv(state[0], state[1], u[0], p);
                Ok(vec![a, b])
            }
            System::Cartpole(p) => {
                let (xa, ta) = cartpole_deriv(state[0], state[1], state[2], state[3], u[0], p);
                Ok(vec![state[2], state[3], xa, ta])
            }
            System::Qqs2Offline => Err(SimError::NotSimulated(self.kind())),
        }
    }

    /// Advances the state by `h` with adaptive RK45, control held constant.
    pub fn step(&self, state: &[f64], u: &[f64], h: f64, tol: Tolerance) -> Result<Vec<f64>, SimError> {
        self.check_state(state)?;
        self.check_control(u)?;
        match *self {
            System::Pendulum(p) => {
                let tau = u[0];
                let y = rk45(
                    |y: &[f64; 2]| {
                        let (a, b) = pendulum_deriv(y[0], y[1], tau, &p);
                        [a, b]
                    },
                    [state[0], state[1]],
                    h,
                    tol,
                )?;
                Ok(y.to_vec())
            }
            System::Cartpole(p) => {
                let f = u[0];
                let y = rk45(
                    |y: &[f64; 4]| {
                        let (xa, ta) = cartpole_deriv(y[0], y[1], y[2], y[3], f, &p);
                        [y[2], y[3], xa, ta]
                    },
                    [state[0], state[1], state[2], state[3]],
                    h,
                    tol,
                )?;
                Ok(y.to_vec())
            }
            System::Qqs2Offline => Err(SimError::NotSimulated(self.kind())),
        }
    }

    /// Total mechanical energy. Zero at the hanging rest state.
    pub fn energy(&self, state: &[f64]) -> Result<f64, SimError> {
        self.check_state(state)?;
        match self {
            System::Pendulum(p) => {
                let (th, w) = (state[0], state[1]);
                Ok(0.5 * p.m * p.l * p.l * w * w + p.m * p.g * p.l * (1.0 - th.cos()))
            }
            System::Cartpole(p) => {
                let (th, xd, td) = (state[1], state[2], state[3]);
                let kinetic = 0.5 * (p.m_cart + p.m_pole) * xd * xd
                    + p.m_pole * p.l * th.cos() * xd * td
                    + 0.5 * p.m_pole * p.l * p.l * td * td;
                Ok(kinetic + p.m_pole * p.g * p.l * (1.0 + th.cos()))
            }
            System::Qqs2Offline => Err(SimError::NotSimulated(self.kind())),
        }
    }

    pub fn observation_layout(&self, kind: ObservationKind) -> Result<ObservationLayout, SimError> {
        let layout = |obs_dim, position: &[usize], velocity: &[usize], identity| ObservationLayout {
            obs_dim,
            position: position.to_vec(),
            velocity: velocity.to_vec(),
            identity,
        };
        Ok(match (self, kind) {
            (System::Pendulum(_), ObservationKind::Native) => layout(3, &[0, 1], &[2], false),
            (System::Pendulum(_), ObservationKind::State) => layout(2, &[0], &[1], true),
            (System::Pendulum(_), ObservationKind::PositionOnly) => layout(2, &[0, 1], &[], false),
            (System::Cartpole(_), ObservationKind::Native) => layout(5, &[0, 1, 2], &[3, 4], false),
            (System::Cartpole(_), ObservationKind::State) => layout(4, &[0, 1], &[2, 3], true),
            (System::Cartpole(_), ObservationKind::PositionOnly) => layout(3, &[0, 1, 2], &[], false),
            (System::Qqs2Offline, ObservationKind::Native) => layout(5, &[0, 1, 2], &[3, 4], false),
            (System::Qqs2Offline, kind) => return Err(SimError::Observation { system: self.kind(), kind }),
        })
    }

    /// State → observation.
    pub fn observe(&self, kind: ObservationKind, state: &[f64]) -> Result<Vec<f64>, SimError> {
        self.check_state(state)?;
        let s = state;
        Ok(match (self, kind) {
            (_, ObservationKind::State) if !matches!(self, System::Qqs2Offline) => s.to_vec(),
            (System::Pendulum(_), ObservationKind::Native) => vec![s[0].cos(), s[0].sin(), s[1]],
            (System::Pendulum(_), ObservationKind::PositionOnly) => vec![s[0].cos(), s[0].sin()],
            (System::Cartpole(_), ObservationKind::Native) => vec![s[0], s[1].cos(), s[1].sin(), s[2], s[3]],
            (System::Cartpole(_), ObservationKind::PositionOnly) => vec![s[0], s[1].cos(), s[1].sin()],
            (System::Qqs2Offline, ObservationKind::Native) => vec![s[0].cos(), s[0].sin(), s[1], s[2], s[3]],
            (_, kind) => return Err(SimError::Observation { system: self.kind(), kind }),
        })
    }

    /// Recovers `(q, q̇)` from a full observation, angles via `atan2` and
    /// wrapped into `(−π, π]`. Position-only observations are rejected.
    pub fn state_from_observation(&self, kind: ObservationKind, obs: &[f64]) -> Result<Vec<f64>, SimError> {
        let layout = self.observation_layout(kind)?;
        if obs.len() != layout.obs_dim || kind == ObservationKind::PositionOnly {
            return Err(SimError::Observation { system: self.kind(), kind });
        }
        let o = obs;
        Ok(match (self, kind) {
            (System::Pendulum(_), ObservationKind::State) => vec![wrap_angle(o[0]), o[1]],
            (System::Pendulum(_), _) => vec![o[1].atan2(o[0]), o[2]],
            (System::Cartpole(_), ObservationKind::State) => vec![o[0], wrap_angle(o[1]), o[2], o[3]],
            (System::Cartpole(_), _) => vec![o[0], o[2].atan2(o[1]), o[3], o[4]],
            (System::Qqs2Offline, _) => vec![o[1].atan2(o[0]), o[2], o[3], o[4]],
        })
    }
}
