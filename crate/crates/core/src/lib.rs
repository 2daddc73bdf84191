//! Forced variational integrator networks.
//!
//! Learned potential, control-force and damping-force heads are composed
//! into explicit Velocity-Verlet / Störmer-Verlet steps, trained on
//! multi-step open-loop prediction error, and used as the model inside a
//! cross-entropy-method MPC planner.
//!
//! Module map:
//! - [`tensor`], [`prim`], [`graph`], [`adam`], [`checkpoint`]: the
//!   reverse-mode differentiation substrate.
//! - [`nets`], [`model`]: learned heads, encoder/decoder, parameters.
//! - [`integrators`]: the one-step maps and rollout.
//! - [`sim`]: ground-truth pendulum and cartpole simulators and datasets.
//! - [`train`]: open-loop loss, training loop, prediction evaluation.
//! - [`control`]: costs, CEM planning, MPC episodes, data collection.

// Negated comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::type_complexity)]

pub mod adam;
pub mod checkpoint;
pub mod control;
pub mod graph;
pub mod integrators;
pub mod model;
pub mod nets;
pub mod par;
pub mod prim;
pub mod sim;
pub mod tensor;
pub mod train;

pub use graph::{Eval, Graph, ParamId, Tape};
pub use model::{Model, ModelSpec, ObservationLayout, Variant};
pub use par::Exec;
pub use tensor::Tensor;
