//! A complete learned dynamics model: encoder, one-step map, decoder.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::graph::{Eval, Graph, ParamId};
use crate::integrators::{rollout, ForceScales, LatentState, LearnedForces, StepError, StepMap};
use crate::nets::{FvinHeads, Mlp, OutputInit, ParamStore, ResNnHeads, DEFAULT_HIDDEN};
use crate::prim::DiffError;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("expected dimension {expected}, got {found} for {what}")]
    Dimension { what: &'static str, expected: usize, found: usize },
    #[error("{0} is only defined for forced variational integrator variants")]
    NotFvin(&'static str),
    #[error(transparent)]
    Graph(#[from] DiffError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
}

/// Which one-step map drives the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Velocity-Verlet FVIN over `(q, q̇)`.
    VvFvin,
    /// Störmer-Verlet FVIN over `(q_{k−1}, q_k)`.
    SvFvin,
    /// Residual baseline over `(q, q̇)`.
    Resnn,
    /// Residual baseline over `(q_{k−1}, q_k)`.
    SvResnn,
}

impl Variant {
    pub fn position_only(self) -> bool {
        matches!(self, Variant::SvFvin | Variant::SvResnn)
    }

    pub fn is_fvin(self) -> bool {
        matches!(self, Variant::VvFvin | Variant::SvFvin)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::VvFvin => "vv-fvin",
            Variant::SvFvin => "sv-fvin",
            Variant::Resnn => "resnn",
            Variant::SvResnn => "sv-resnn",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vv-fvin" => Ok(Variant::VvFvin),
            "sv-fvin" => Ok(Variant::SvFvin),
            "resnn" => Ok(Variant::Resnn),
            "sv-resnn" => Ok(Variant::SvResnn),
            other => Err(format!("unknown model variant `{other}`")),
        }
    }
}

/// Which observation channels carry configuration positions and which carry
/// velocities. Position channels go through the encoder/decoder networks;
/// velocity channels pass through unchanged. With `identity`, positions are
/// the configuration itself and no networks are built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub obs_dim: usize,
    pub position: Vec<usize>,
    pub velocity: Vec<usize>,
    pub identity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub layout: ObservationLayout,
    /// Latent configuration dimension `n`.
    pub config_dim: usize,
    pub control_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Time step of the data the model is trained on.
    pub h: f64,
    pub seed: u64,
}

fn default_hidden() -> Vec<usize> {
    DEFAULT_HIDDEN.to_vec()
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let l = &self.layout;
        let bad = |msg: String| Err(ModelError::Spec(msg));
        if self.h <= 0.0 || !self.h.is_finite() {
            return bad(format!("time step must be positive, got {}", self.h));
        }
        if self.config_dim == 0 || self.control_dim == 0 {
            return bad("configuration and control dimensions must be positive".into());
        }
        if l.position.is_empty() {
            return bad("layout needs at least one position channel".into());
        }
        if l.position.iter().chain(&l.velocity).any(|&c| c >= l.obs_dim) {
            return bad("channel index beyond observation dimension".into());
        }
        if !self.variant.position_only() {
            if l.velocity.len() != self.config_dim {
                return bad(format!(
                    "{} needs {} velocity channels, layout has {}",
                    self.variant,
                    self.config_dim,
                    l.velocity.len()
                ));
            }
            if l.position.len() + l.velocity.len() != l.obs_dim {
                return bad("position and velocity channels must cover the observation".into());
            }
        }
        if l.identity && l.position.len() != self.config_dim {
            return bad("identity layout needs exactly n position channels".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dynamics {
    Fvin(FvinHeads),
    Resnn(ResNnHeads),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore,
    dynamics: Dynamics,
    encoder: Option<Mlp>,
    decoder: Option<Mlp>,
    /// Column permutation taking `[decoded positions, velocities]` to observation order.
    assemble: Option<Vec<usize>>,
    pub scales: ForceScales,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = ParamStore::new();
        let (n, m) = (spec.config_dim, spec.control_dim);
        let hidden = spec.hidden.clone();
        let dynamics = if spec.variant.is_fvin() {
            Dynamics::Fvin(FvinHeads::new(&mut params, n, m, &hidden, &mut rng))
        } else {
            Dynamics::Resnn(ResNnHeads::new(&mut params, n, m, spec.variant.position_only(), &hidden, &mut rng))
        };
        let p = spec.layout.position.len();
        let (encoder, decoder) = if spec.layout.identity {
            (None, None)
        } else {
            (
                Some(Mlp::new(&mut params, "encoder", p, &hidden, n, OutputInit::Random, &mut rng)),
                Some(Mlp::new(&mut params, "decoder", n, &hidden, p, OutputInit::Random, &mut rng)),
            )
        };
        let assemble = if spec.variant.position_only() {
            None
        } else {
            let mut perm = vec![0; spec.layout.obs_dim];
            for (i, &c) in spec.layout.position.iter().enumerate() {
                perm[c] = i;
            }
            for (i, &c) in spec.layout.velocity.iter().enumerate() {
                perm[c] = p + i;
            }
            let is_identity = perm.iter().enumerate().all(|(i, &c)| i == c);
            (!is_identity).then_some(perm)
        };
        Ok(Self { spec, params, dynamics, encoder, decoder, assemble, scales: ForceScales::default() })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn fvin_heads(&self) -> Option<&FvinHeads> {
        match &self.dynamics {
            Dynamics::Fvin(h) => Some(h),
            Dynamics::Resnn(_) => None,
        }
    }

    /// Every network with the name it is checkpointed under.
    pub fn heads(&self) -> Vec<&Mlp> {
        let mut out: Vec<&Mlp> = match &self.dynamics {
            Dynamics::Fvin(h) => vec![&h.potential, &h.control, &h.damping],
            Dynamics::Resnn(h) => vec![&h.drift, &h.forced],
        };
        out.extend(self.encoder.iter());
        out.extend(self.decoder.iter());
        out
    }

    pub fn head_param_ids(&self, name: &str) -> Vec<ParamId> {
        self.heads().into_iter().filter(|h| h.name() == name).flat_map(|h| h.param_ids().collect::<Vec<_>>()).collect()
    }

    /// Width of the training targets: full observations for the velocity
    /// layout, position channels only for the position layout.
    pub fn target_dim(&self) -> usize {
        if self.spec.variant.position_only() {
            self.spec.layout.position.len()
        } else {
            self.spec.layout.obs_dim
        }
    }

    /// The part of an observation the model predicts.
    pub fn target_of(&self, obs: &[f64]) -> Vec<f64> {
        if self.spec.variant.position_only() {
            self.spec.layout.position.iter().map(|&c| obs[c]).collect()
        } else {
            obs.to_vec()
        }
    }

    fn encode_positions<G: Graph>(&self, g: &mut G, obs: &G::Var) -> Result<G::Var, DiffError> {
        let pos = g.select(obs, &self.spec.layout.position)?;
        match &self.encoder {
            Some(enc) => enc.forward(g, &pos),
            None => Ok(pos),
        }
    }

    /// Encodes observation rows `[B, obs_dim]` into latent states. The
    /// position layout needs the preceding observation rows too.
    pub fn encode_graph<G: Graph>(
        &self,
        g: &mut G,
        obs: &G::Var,
        prev_obs: Option<&G::Var>,
    ) -> Result<LatentState<G::Var>, ModelError> {
        let q = self.encode_positions(g, obs)?;
        if self.spec.variant.position_only() {
            let prev = prev_obs.ok_or_else(|| ModelError::Spec("position layout needs two observations".into()))?;
            let prev = self.encode_positions(g, prev)?;
            Ok(LatentState::Position { prev, q })
        } else {
            let qdot = g.select(obs, &self.spec.layout.velocity)?;
            Ok(LatentState::Velocity { q, qdot })
        }
    }

    /// Decodes latent states into target rows.
    pub fn decode_graph<G: Graph>(&self, g: &mut G, state: &LatentState<G::Var>) -> Result<G::Var, DiffError> {
        let q = state.position();
        let pos = match &self.decoder {
            Some(dec) => dec.forward(g, q)?,
            None => q.clone(),
        };
        match state {
            LatentState::Position { .. } => Ok(pos),
            LatentState::Velocity { qdot, .. } => {
                let joined = g.concat(&[&pos, qdot])?;
                match &self.assemble {
                    Some(perm) => g.select(&joined, perm),
                    None => Ok(joined),
                }
            }
        }
    }

    pub fn rollout_graph<G: Graph>(
        &self,
        g: &mut G,
        x0: &LatentState<G::Var>,
        controls: &[G::Var],
        check_finite: bool,
    ) -> Result<Vec<LatentState<G::Var>>, StepError> {
        let h = self.spec.h;
        match &self.dynamics {
            Dynamics::Fvin(heads) => {
                let forces = LearnedForces { heads, scales: self.scales };
                let map = if self.spec.variant.position_only() {
                    StepMap::StormerVerlet(&forces)
                } else {
                    StepMap::VelocityVerlet(&forces)
                };
                rollout(g, &map, x0, controls, h, check_finite)
            }
            Dynamics::Resnn(heads) => {
                rollout::<G, LearnedForces<'_>>(g, &StepMap::Residual(heads), x0, controls, h, check_finite)
            }
        }
    }

    /// Open-loop prediction on a batch: encode, roll out, decode every state.
    /// Returns `T` target tensors `[B, target_dim]`.
    pub fn predict_graph<G: Graph>(
        &self,
        g: &mut G,
        obs0: &G::Var,
        prev_obs: Option<&G::Var>,
        controls: &[G::Var],
        check_finite: bool,
    ) -> Result<Vec<G::Var>, ModelError> {
        let x0 = self.encode_graph(g, obs0, prev_obs)?;
        let states = self.rollout_graph(g, &x0, controls, check_finite)?;
        states.iter().map(|s| self.decode_graph(g, s).map_err(ModelError::from)).collect()
    }

    fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<(), ModelError> {
        if expected != found {
            return Err(ModelError::Dimension { what, expected, found });
        }
        Ok(())
    }

    fn row(v: &[f64]) -> Tensor {
        Tensor::matrix(1, v.len(), v.to_vec())
    }

    fn fvin_eval(
        &self,
        what: &'static str,
        f: impl FnOnce(&FvinHeads, &mut Eval<'_>) -> Result<std::rc::Rc<Tensor>, DiffError>,
    ) -> Result<Vec<f64>, ModelError> {
        let heads = self.fvin_heads().ok_or(ModelError::NotFvin(what))?;
        let mut g = Eval::new(self.params.tensors());
        Ok(f(heads, &mut g)?.data().to_vec())
    }

    /// Learned `M⁻¹∇V(q)`.
    pub fn potential_grad(&self, q: &[f64]) -> Result<Vec<f64>, ModelError> {
        Self::check_dim("q", self.spec.config_dim, q.len())?;
        self.fvin_eval("potential_grad", |h, g| {
            let q = g.constant(Self::row(q));
            h.potential_grad(g, &q)
        })
    }

    /// Learned `M⁻¹F_control(q, u)`, including the control scale.
    pub fn control_force(&self, q: &[f64], u: &[f64]) -> Result<Vec<f64>, ModelError> {
        Self::check_dim("q", self.spec.config_dim, q.len())?;
        Self::check_dim("u", self.spec.control_dim, u.len())?;
        let s = self.scales.control;
        self.fvin_eval("control_force", |h, g| {
            let q = g.constant(Self::row(q));
            let u = g.constant(Self::row(u));
            let f = h.control_force(g, &q, &u)?;
            g.scale(&f, s)
        })
    }

    /// Learned `M⁻¹F_damping(q, q̇)` times the damping scale α.
    pub fn damping_force_vv(&self, q: &[f64], qdot: &[f64]) -> Result<Vec<f64>, ModelError> {
        Self::check_dim("q", self.spec.config_dim, q.len())?;
        Self::check_dim("qdot", self.spec.config_dim, qdot.len())?;
        let s = self.scales.damping;
        self.fvin_eval("damping_force_vv", |h, g| {
            let q = g.constant(Self::row(q));
            let v = g.constant(Self::row(qdot));
            let f = h.damping_force_vv(g, &q, &v)?;
            g.scale(&f, s)
        })
    }

    /// Learned `M⁻¹F_damping(q_prev, q)` times the damping scale α.
    pub fn damping_force_sv(&self, q_prev: &[f64], q: &[f64]) -> Result<Vec<f64>, ModelError> {
        Self::check_dim("q_prev", self.spec.config_dim, q_prev.len())?;
        Self::check_dim("q", self.spec.config_dim, q.len())?;
        let s = self.scales.damping;
        self.fvin_eval("damping_force_sv", |h, g| {
            let p = g.constant(Self::row(q_prev));
            let q = g.constant(Self::row(q));
            let f = h.damping_force_sv(g, &p, &q)?;
            g.scale(&f, s)
        })
    }

    /// Encodes one observation (and its predecessor for the position layout).
    pub fn encode(&self, obs: &[f64], prev_obs: Option<&[f64]>) -> Result<LatentState<Vec<f64>>, ModelError> {
        Self::check_dim("observation", self.spec.layout.obs_dim, obs.len())?;
        if let Some(p) = prev_obs {
            Self::check_dim("previous observation", self.spec.layout.obs_dim, p.len())?;
        }
        let mut g = Eval::new(self.params.tensors());
        let y = g.constant(Self::row(obs));
        let prev = prev_obs.map(|p| g.constant(Self::row(p)));
        let state = self.encode_graph(&mut g, &y, prev.as_ref())?;
        Ok(match state {
            LatentState::Velocity { q, qdot } => LatentState::Velocity { q: q.data().to_vec(), qdot: qdot.data().to_vec() },
            LatentState::Position { prev, q } => LatentState::Position { prev: prev.data().to_vec(), q: q.data().to_vec() },
        })
    }

    pub fn decode(&self, state: &LatentState<Vec<f64>>) -> Result<Vec<f64>, ModelError> {
        let n = self.spec.config_dim;
        let mut g = Eval::new(self.params.tensors());
        let state = match state {
            LatentState::Velocity { q, qdot } => {
                Self::check_dim("q", n, q.len())?;
                Self::check_dim("qdot", n, qdot.len())?;
                if self.spec.variant.position_only() {
                    return Err(ModelError::Spec("position-layout model cannot decode velocity states".into()));
                }
                LatentState::Velocity { q: g.constant(Self::row(q)), qdot: g.constant(Self::row(qdot)) }
            }
            LatentState::Position { prev, q } => {
                Self::check_dim("q", n, q.len())?;
                Self::check_dim("q_prev", n, prev.len())?;
                LatentState::Position { prev: g.constant(Self::row(prev)), q: g.constant(Self::row(q)) }
            }
        };
        Ok(self.decode_graph(&mut g, &state)?.data().to_vec())
    }

    /// Tape-free open-loop prediction of one trajectory. Returns one target
    /// vector per control; a non-finite state aborts with its step index.
    pub fn predict(
        &self,
        obs0: &[f64],
        prev_obs: Option<&[f64]>,
        controls: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        Self::check_dim("observation", self.spec.layout.obs_dim, obs0.len())?;
        for u in controls {
            Self::check_dim("u", self.spec.control_dim, u.len())?;
        }
        let mut g = Eval::new(self.params.tensors());
        let y0 = g.constant(Self::row(obs0));
        let prev = prev_obs.map(|p| g.constant(Self::row(p)));
        let us: Vec<_> = controls.iter().map(|u| g.constant(Self::row(u))).collect();
        let preds = self.predict_graph(&mut g, &y0, prev.as_ref(), &us, true)?;
        Ok(preds.iter().map(|t| t.data().to_vec()).collect())
    }

    /// Batched tape-free prediction for planning: `obs0` is `[B, obs_dim]`,
    /// each control tensor `[B, control_dim]`. Non-finite rows propagate.
    pub fn predict_batch(&self, obs0: Tensor, controls: Vec<Tensor>) -> Result<Vec<Tensor>, ModelError> {
        let mut g = Eval::new(self.params.tensors());
        let y0 = g.constant(obs0);
        let us: Vec<_> = controls.into_iter().map(|u| g.constant(u)).collect();
        let preds = self.predict_graph(&mut g, &y0, None, &us, false)?;
        Ok(preds.into_iter().map(|t| std::rc::Rc::try_unwrap(t).unwrap_or_else(|rc| (*rc).clone())).collect())
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let meta = serde_json::json!({
            "spec": self.spec,
            "extra": extra,
        });
        Checkpoint::from_store(&self.params, meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let spec: ModelSpec = serde_json::from_value(ck.metadata.get("spec").cloned().unwrap_or_default())
            .map_err(|e| ModelError::Metadata(e.to_string()))?;
        let mut model = Model::new(spec)?;
        ck.restore_into(&mut model.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), ModelError> {
        self.to_checkpoint(extra).save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
