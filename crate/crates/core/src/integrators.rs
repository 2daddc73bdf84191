//! Explicit one-step maps and open-loop rollout.
//!
//! Velocity-Verlet with forcing:
//!
//! ```text
//! q'  = q + h q̇ + h²/2 (F − ∇V(q))
//! q̇' = q̇ + h (F − (∇V(q) + ∇V(q'))/2)
//! ```
//!
//! Störmer-Verlet with forcing: `q⁺ = 2q − q⁻ + h² (F − ∇V(q))`.
//!
//! `F` and `∇V` are already scaled by `M⁻¹`. Every map is closed form;
//! nothing here iterates to solve an implicit equation.

use thiserror::Error;

use crate::graph::Graph;
use crate::nets::{FvinHeads, ResNnHeads};
use crate::prim::DiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("step {step}: {source}")]
    Graph { step: usize, source: DiffError },
    #[error("step {step}: non-finite state")]
    NonFinite { step: usize },
    #[error("rollout needs at least one control")]
    EmptyControls,
}

/// The forcing terms an integrator consumes. Implemented by the learned heads
/// and by analytic fields used as references.
pub trait ForceField<G: Graph> {
    fn potential_grad(&self, g: &mut G, q: &G::Var) -> Result<G::Var, DiffError>;
    fn control_force(&self, g: &mut G, q: &G::Var, u: &G::Var) -> Result<G::Var, DiffError>;
    fn damping_vv(&self, g: &mut G, q: &G::Var, qdot: &G::Var) -> Result<G::Var, DiffError>;
    fn damping_sv(&self, g: &mut G, q_prev: &G::Var, q: &G::Var) -> Result<G::Var, DiffError>;
}

/// Multipliers applied to the control and damping heads. `damping = α`
/// gives the damping-scaled model; `control = 0` ablates actuation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForceScales {
    pub control: f64,
    pub damping: f64,
}

impl Default for ForceScales {
    fn default() -> Self {
        Self { control: 1.0, damping: 1.0 }
    }
}

impl ForceScales {
    pub fn passive(alpha: f64) -> Self {
        Self { control: 0.0, damping: alpha }
    }
}

fn scaled<G: Graph>(g: &mut G, v: G::Var, s: f64) -> Result<G::Var, DiffError> {
    if s == 1.0 {
        Ok(v)
    } else {
        g.scale(&v, s)
    }
}

/// The learned heads with optional scaling.
pub struct LearnedForces<'a> {
    pub heads: &'a FvinHeads,
    pub scales: ForceScales,
}

impl<G: Graph> ForceField<G> for LearnedForces<'_> {
    fn potential_grad(&self, g: &mut G, q: &G::Var) -> Result<G::Var, DiffError> {
        self.heads.potential_grad(g, q)
    }

    fn control_force(&self, g: &mut G, q: &G::Var, u: &G::Var) -> Result<G::Var, DiffError> {
        let f = self.heads.control_force(g, q, u)?;
        scaled(g, f, self.scales.control)
    }

    fn damping_vv(&self, g: &mut G, q: &G::Var, qdot: &G::Var) -> Result<G::Var, DiffError> {
        let f = self.heads.damping_force_vv(g, q, qdot)?;
        scaled(g, f, self.scales.damping)
    }

    fn damping_sv(&self, g: &mut G, q_prev: &G::Var, q: &G::Var) -> Result<G::Var, DiffError> {
        let f = self.heads.damping_force_sv(g, q_prev, q)?;
        scaled(g, f, self.scales.damping)
    }
}

/// Analytic damped pendulum in `M⁻¹`-scaled form:
/// `∇V = ω² sin q`, `F_damping = −c q̇`, `F_control = b u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumField {
    /// `g / l`.
    pub omega_sq: f64,
    /// `μ / m`.
    pub damping: f64,
    /// `1 / (m l²)`.
    pub control_gain: f64,
    /// Step used to turn `(q_prev, q)` into a velocity for the position form.
    pub h: f64,
}

impl<G: Graph> ForceField<G> for PendulumField {
    fn potential_grad(&self, g: &mut G, q: &G::Var) -> Result<G::Var, DiffError> {
        let s = g.sin(q)?;
        g.scale(&s, self.omega_sq)
    }

    fn control_force(&self, g: &mut G, _q: &G::Var, u: &G::Var) -> Result<G::Var, DiffError> {
        g.scale(u, self.control_gain)
    }

    fn damping_vv(&self, g: &mut G, _q: &G::Var, qdot: &G::Var) -> Result<G::Var, DiffError> {
        g.scale(qdot, -self.damping)
    }

    fn damping_sv(&self, g: &mut G, q_prev: &G::Var, q: &G::Var) -> Result<G::Var, DiffError> {
        let dq = g.sub(q, q_prev)?;
        g.scale(&dq, -self.damping / self.h)
    }
}

/// Configuration state in either integrator layout.
#[derive(Clone, Debug, PartialEq)]
pub enum LatentState<V> {
    /// `(q, q̇)`.
    Velocity { q: V, qdot: V },
    /// `(q_{k−1}, q_k)`.
    Position { prev: V, q: V },
}

impl<V> LatentState<V> {
    pub fn position(&self) -> &V {
        match self {
            LatentState::Velocity { q, .. } | LatentState::Position { q, .. } => q,
        }
    }
}

/// Velocity-Verlet step reusing a known `∇V(q)`. Returns `(q', q̇', ∇V(q'))`
/// so consecutive steps evaluate the potential head once per step. Forcing is
/// evaluated once at `(q, q̇, u)` and held over the step.
pub fn vv_step_with_grad<G: Graph, F: ForceField<G>>(
    g: &mut G,
    field: &F,
    q: &G::Var,
    qdot: &G::Var,
    grad_q: &G::Var,
    u: &G::Var,
    h: f64,
) -> Result<(G::Var, G::Var, G::Var), DiffError> {
    let fc = field.control_force(g, q, u)?;
    let fd = field.damping_vv(g, q, qdot)?;
    let force = g.add(&fc, &fd)?;
    let accel = g.sub(&force, grad_q)?;

    let drift = g.scale(qdot, h)?;
    let q_drift = g.add(q, &drift)?;
    let kick = g.scale(&accel, 0.5 * h * h)?;
    let q_next = g.add(&q_drift, &kick)?;

    let grad_next = field.potential_grad(g, &q_next)?;
    let grad_sum = g.add(grad_q, &grad_next)?;
    let grad_avg = g.scale(&grad_sum, 0.5)?;
    let net = g.sub(&force, &grad_avg)?;
    let dv = g.scale(&net, h)?;
    let qdot_next = g.add(qdot, &dv)?;
    Ok((q_next, qdot_next, grad_next))
}

pub fn vv_step<G: Graph, F: ForceField<G>>(
    g: &mut G,
    field: &F,
    q: &G::Var,
    qdot: &G::Var,
    u: &G::Var,
    h: f64,
) -> Result<(G::Var, G::Var), DiffError> {
    let grad_q = field.potential_grad(g, q)?;
    let (q1, v1, _) = vv_step_with_grad(g, field, q, qdot, &grad_q, u, h)?;
    Ok((q1, v1))
}

/// Forward-Euler step of `q̈ = F − ∇V`: the non-symplectic reference.
pub fn euler_step<G: Graph, F: ForceField<G>>(
    g: &mut G,
    field: &F,
    q: &G::Var,
    qdot: &G::Var,
    u: &G::Var,
    h: f64,
) -> Result<(G::Var, G::Var), DiffError> {
    let fc = field.control_force(g, q, u)?;
    let fd = field.damping_vv(g, q, qdot)?;
    let force = g.add(&fc, &fd)?;
    let grad_q = field.potential_grad(g, q)?;
    let accel = g.sub(&force, &grad_q)?;
    let dq = g.scale(qdot, h)?;
    let dv = g.scale(&accel, h)?;
    Ok((g.add(q, &dq)?, g.add(qdot, &dv)?))
}

impl PendulumField {
    /// Energy per unit `m l²`: `½ q̇² + ω² (1 − cos q)`.
    pub fn energy(&self, q: f64, qdot: f64) -> f64 {
        0.5 * qdot * qdot + self.omega_sq * (1.0 - q.cos())
    }
}

/// Unforced scalar trajectory of an analytic pendulum under VV or Euler.
/// Returns `(q, q̇)` at steps `0..=steps`.
pub fn analytic_pendulum_run(field: &PendulumField, q0: f64, v0: f64, h: f64, steps: usize, euler: bool) -> Vec<(f64, f64)> {
    let mut g = crate::graph::Eval::new(&[]);
    let s = |g: &mut crate::graph::Eval<'_>, v: f64| g.constant(crate::tensor::Tensor::matrix(1, 1, vec![v]));
    let mut q = s(&mut g, q0);
    let mut v = s(&mut g, v0);
    let u = s(&mut g, 0.0);
    // Eval keeps no history, so one graph serves the whole run.
    let mut grad = field.potential_grad(&mut g, &q).expect("scalar field");
    let mut out = Vec::with_capacity(steps + 1);
    out.push((q0, v0));
    for _ in 0..steps {
        let (q1, v1) = if euler {
            euler_step(&mut g, field, &q, &v, &u, h).expect("scalar field")
        } else {
            let (q1, v1, g1) = vv_step_with_grad(&mut g, field, &q, &v, &grad, &u, h).expect("scalar field");
            grad = g1;
            (q1, v1)
        };
        out.push((g.value(&q1).item(), g.value(&v1).item()));
        q = q1;
        v = v1;
    }
    out
}

/// Störmer-Verlet step with forcing `F = control(q, u) + damping(q_prev, q)`.
pub fn sv_step<G: Graph, F: ForceField<G>>(
    g: &mut G,
    field: &F,
    q_prev: &G::Var,
    q: &G::Var,
    u: &G::Var,
    h: f64,
) -> Result<G::Var, DiffError> {
    let fc = field.control_force(g, q, u)?;
    let fd = field.damping_sv(g, q_prev, q)?;
    let force = g.add(&fc, &fd)?;
    let grad_q = field.potential_grad(g, q)?;
    let accel = g.sub(&force, &grad_q)?;
    let twice = g.scale(q, 2.0)?;
    let inertial = g.sub(&twice, q_prev)?;
    let kick = g.scale(&accel, h * h)?;
    g.add(&inertial, &kick)
}

/// Residual step. In the velocity layout the heads predict a `2n` increment
/// of `(q, q̇)`; in the position layout an `n` increment of `q`.
pub fn resnn_step<G: Graph>(
    g: &mut G,
    heads: &ResNnHeads,
    state: &LatentState<G::Var>,
    u: &G::Var,
) -> Result<LatentState<G::Var>, DiffError> {
    let (a, b) = match state {
        LatentState::Velocity { q, qdot } => (q, qdot),
        LatentState::Position { prev, q } => (prev, q),
    };
    let x = g.concat(&[a, b])?;
    let xu = g.concat(&[a, b, u])?;
    let d1 = heads.drift.forward(g, &x)?;
    let d2 = heads.forced.forward(g, &xu)?;
    let delta = g.add(&d1, &d2)?;
    match state {
        LatentState::Velocity { .. } => {
            let next = g.add(&x, &delta)?;
            let n = g.value(a).cols();
            let q = g.slice(&next, 0, n)?;
            let qdot = g.slice(&next, n, n)?;
            Ok(LatentState::Velocity { q, qdot })
        }
        LatentState::Position { q, .. } => {
            let q_next = g.add(q, &delta)?;
            Ok(LatentState::Position { prev: q.clone(), q: q_next })
        }
    }
}

/// One-step map selector for [`rollout`].
pub enum StepMap<'a, F> {
    VelocityVerlet(&'a F),
    StormerVerlet(&'a F),
    Residual(&'a ResNnHeads),
}

/// Iterates the one-step map over `controls`, returning `x₁ … x_T`.
/// With `check_finite`, the first non-finite state aborts with its step index.
pub fn rollout<G: Graph, F: ForceField<G>>(
    g: &mut G,
    map: &StepMap<'_, F>,
    x0: &LatentState<G::Var>,
    controls: &[G::Var],
    h: f64,
    check_finite: bool,
) -> Result<Vec<LatentState<G::Var>>, StepError> {
    if controls.is_empty() {
        return Err(StepError::EmptyControls);
    }
    let mut states = Vec::with_capacity(controls.len());
    let mut state = x0.clone();
    let mut cached_grad: Option<G::Var> = None;
    for (k, u) in controls.iter().enumerate() {
        let wrap = |source| StepError::Graph { step: k, source };
        let next = match (map, &state) {
            (StepMap::VelocityVerlet(field), LatentState::Velocity { q, qdot }) => {
                let grad_q = match cached_grad.take() {
                    Some(v) => v,
                    None => field.potential_grad(g, q).map_err(wrap)?,
                };
                let (q1, v1, grad1) = vv_step_with_grad(g, *field, q, qdot, &grad_q, u, h).map_err(wrap)?;
                cached_grad = Some(grad1);
                LatentState::Velocity { q: q1, qdot: v1 }
            }
            (StepMap::StormerVerlet(field), LatentState::Position { prev, q }) => {
                let q1 = sv_step(g, *field, prev, q, u, h).map_err(wrap)?;
                LatentState::Position { prev: q.clone(), q: q1 }
            }
            (StepMap::Residual(heads), s) => resnn_step(g, heads, s, u).map_err(wrap)?,
            _ => {
                return Err(StepError::Graph {
                    step: k,
                    source: DiffError::Shape { op: "rollout", shapes: vec![] },
                })
            }
        };
        if check_finite {
            let finite = match &next {
                LatentState::Velocity { q, qdot } => g.value(q).is_finite() && g.value(qdot).is_finite(),
                LatentState::Position { q, .. } => g.value(q).is_finite(),
            };
            if !finite {
                return Err(StepError::NonFinite { step: k });
            }
        }
        states.push(next.clone());
        state = next;
    }
    Ok(states)
}
