//! Learned heads: fully-connected ReLU networks and their parameter storage.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::graph::{Graph, ParamId};
use crate::prim::DiffError;
use crate::tensor::Tensor;

/// Hidden widths used by every head unless configured otherwise.
pub const DEFAULT_HIDDEN: [usize; 2] = [100, 100];

/// Flat list of named trainable tensors. Heads hold [`ParamId`]s into it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// All parameter values concatenated in order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrites all parameter values from a flat vector.
    pub fn unflatten(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.scalar_count());
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// `input → hidden… → output` with ReLU after every hidden layer and a
/// linear output. Weights are `[fan_in, fan_out]` so a batch `[rows, fan_in]`
/// maps to `[rows, fan_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    name: String,
    layers: Vec<Dense>,
    input_dim: usize,
    output_dim: usize,
}

/// How the output layer is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputInit {
    /// All-zero weights and bias: the head starts as the zero function.
    Zero,
    /// Small uniform weights.
    Random,
}

impl Mlp {
    /// Registers a new network in `store`. Hidden layers use He-uniform
    /// weights `U(±√(6/fan_in))` and zero biases.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        output_init: OutputInit,
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(output_dim);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weight = if i == last && output_init == OutputInit::Zero {
                    Tensor::zeros(vec![fan_in, fan_out])
                } else {
                    let gain = if i == last { 3.0 } else { 6.0 };
                    let bound = (gain / fan_in as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                    let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
                    Tensor::matrix(fan_in, fan_out, data)
                };
                Dense {
                    weight: store.add(format!("{name}.{i}.weight"), weight),
                    bias: store.add(format!("{name}.{i}.bias"), Tensor::zeros(vec![fan_out])),
                }
            })
            .collect();
        Self { name: name.to_string(), layers, input_dim, output_dim }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn output_layer(&self) -> Dense {
        *self.layers.last().expect("mlp has at least one layer")
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }

    pub fn forward<G: Graph>(&self, g: &mut G, x: &G::Var) -> Result<G::Var, DiffError> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let w = g.param(layer.weight);
            let b = g.param(layer.bias);
            let z = g.matmul(&h, &w)?;
            h = g.add_row(&z, &b)?;
            if i + 1 < self.layers.len() {
                h = g.relu(&h)?;
            }
        }
        Ok(h)
    }
}

/// The three dynamics heads of a forced variational integrator network.
/// All outputs are already scaled by the inverse mass matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FvinHeads {
    /// `q ↦ M⁻¹∇V(q)`.
    pub potential: Mlp,
    /// `(q, u) ↦ M⁻¹F_control`.
    pub control: Mlp,
    /// `(q, q̇) ↦ M⁻¹F_damping` for the velocity form, `(q_prev, q)` for the position form.
    pub damping: Mlp,
}

impl FvinHeads {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config_dim: usize,
        control_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let n = config_dim;
        Self {
            potential: Mlp::new(store, "potential", n, hidden, n, OutputInit::Zero, rng),
            control: Mlp::new(store, "control", n + control_dim, hidden, n, OutputInit::Zero, rng),
            damping: Mlp::new(store, "damping", 2 * n, hidden, n, OutputInit::Zero, rng),
        }
    }

    pub fn potential_grad<G: Graph>(&self, g: &mut G, q: &G::Var) -> Result<G::Var, DiffError> {
        self.potential.forward(g, q)
    }

    pub fn control_force<G: Graph>(&self, g: &mut G, q: &G::Var, u: &G::Var) -> Result<G::Var, DiffError> {
        let x = g.concat(&[q, u])?;
        self.control.forward(g, &x)
    }

    pub fn damping_force_vv<G: Graph>(&self, g: &mut G, q: &G::Var, qdot: &G::Var) -> Result<G::Var, DiffError> {
        let x = g.concat(&[q, qdot])?;
        self.damping.forward(g, &x)
    }

    pub fn damping_force_sv<G: Graph>(&self, g: &mut G, q_prev: &G::Var, q: &G::Var) -> Result<G::Var, DiffError> {
        let x = g.concat(&[q_prev, q])?;
        self.damping.forward(g, &x)
    }
}

/// Residual baseline: `x' = x + drift(x) + forced(x, u)` with no integrator
/// structure. `x` is `(q, q̇)`, or `(q_prev, q)` in the position-only form
/// where the residual is added to `q` alone.
#[derive(Clone, Debug, PartialEq)]
pub struct ResNnHeads {
    pub drift: Mlp,
    pub forced: Mlp,
}

impl ResNnHeads {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config_dim: usize,
        control_dim: usize,
        position_only: bool,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let n = config_dim;
        let out = if position_only { n } else { 2 * n };
        Self {
            drift: Mlp::new(store, "drift", 2 * n, hidden, out, OutputInit::Zero, rng),
            forced: Mlp::new(store, "forced", 2 * n + control_dim, hidden, out, OutputInit::Zero, rng),
        }
    }
}
