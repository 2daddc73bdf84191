//! Cross-entropy-method trajectory optimization.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cost::CostSpec;
use crate::model::{Model, ModelError};
use crate::par::{chunk_ranges, Exec};
use crate::sim::{ObservationKind, SimError, System, Tolerance};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid planner config: {0}")]
    Config(String),
    #[error("every sampled rollout failed {0} times in a row")]
    RolloutFailed(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CemConfig {
    pub horizon: usize,
    pub samples: usize,
    pub elites: usize,
    pub iterations: usize,
    pub variance_floor: f64,
    /// Shift the previous plan by one step instead of restarting from the prior.
    pub warm_start: bool,
    /// Consecutive all-failed iterations tolerated before giving up.
    pub max_restarts: usize,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            samples: 1000,
            elites: 10,
            iterations: 5,
            variance_floor: 1e-4,
            warm_start: false,
            max_restarts: 3,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::Config(m.to_string()));
        if self.horizon == 0 || self.iterations == 0 {
            return bad("horizon and iterations must be at least 1");
        }
        if self.elites == 0 || self.elites > self.samples {
            return bad("need 1 <= elites <= samples");
        }
        if !(self.variance_floor >= 0.0) {
            return bad("variance_floor must be non-negative");
        }
        Ok(())
    }
}

/// Axis-independent Gaussian over an `H × m` control sequence, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CemPlan {
    pub horizon: usize,
    pub control_dim: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl CemPlan {
    /// Zero mean, unit variance.
    pub fn prior(horizon: usize, control_dim: usize) -> Self {
        let n = horizon * control_dim;
        Self { horizon, control_dim, mean: vec![0.0; n], var: vec![1.0; n] }
    }

    /// Drops the first step and appends a prior step.
    pub fn shifted(&self) -> Self {
        let m = self.control_dim;
        let mut out = self.clone();
        out.mean.rotate_left(m);
        out.var.rotate_left(m);
        let n = out.mean.len();
        out.mean[n - m..].fill(0.0);
        out.var[n - m..].fill(1.0);
        out
    }

    pub fn first(&self) -> &[f64] {
        &self.mean[..self.control_dim]
    }
}

/// Scores control sequences by rolling them out from an observation.
pub trait PlanningModel: Sync {
    fn control_dim(&self) -> usize;

    /// One cost per sequence (each `H × m`, row-major). Failed rollouts cost
    /// `+∞`; only whole-call failures are errors.
    fn sequence_costs(&self, obs0: &[f64], sequences: &[Vec<f64>], cost: &CostSpec) -> Result<Vec<f64>, PlanError>;
}

/// A trained model, evaluated in batches without a tape.
pub struct LearnedPlanner<'a> {
    pub model: &'a Model,
    pub system: System,
    pub observation: ObservationKind,
    pub exec: Exec,
    /// Sequences per batched rollout.
    pub chunk: usize,
}

impl<'a> LearnedPlanner<'a> {
    pub fn new(model: &'a Model, system: System, observation: ObservationKind) -> Result<Self, PlanError> {
        if model.variant().position_only() {
            return Err(PlanError::Config("planning needs a model over (q, q̇) observations".into()));
        }
        Ok(Self { model, system, observation, exec: Exec::default(), chunk: 250 })
    }
}

impl PlanningModel for LearnedPlanner<'_> {
    fn control_dim(&self) -> usize {
        self.model.spec().control_dim
    }

    fn sequence_costs(&self, obs0: &[f64], sequences: &[Vec<f64>], cost: &CostSpec) -> Result<Vec<f64>, PlanError> {
        let m = self.control_dim();
        let ranges = chunk_ranges(sequences.len(), self.chunk);
        let parts = self.exec.try_map(ranges.len(), |c| -> Result<Vec<f64>, PlanError> {
            let seqs = &sequences[ranges[c].clone()];
            let b = seqs.len();
            let horizon = seqs[0].len() / m;
            let y0 = Tensor::from_rows(&vec![obs0; b], obs0.len());
            let controls: Vec<Tensor> = (0..horizon)
                .map(|k| Tensor::matrix(b, m, seqs.iter().flat_map(|s| s[k * m..(k + 1) * m].iter().copied()).collect()))
                .collect();
            let preds = self.model.predict_batch(y0, controls)?;
            Ok((0..b)
                .map(|i| {
                    let total: f64 = (0..horizon)
                        .map(|k| {
                            let u = &seqs[i][k * m..(k + 1) * m];
                            cost.stage_from_observation(&self.system, self.observation, preds[k].row(i), u)
                        })
                        .sum();
                    if total.is_nan() { f64::INFINITY } else { total }
                })
                .collect())
        })?;
        Ok(parts.concat())
    }
}

/// The ground-truth simulator as the planning model.
pub struct SimulatorPlanner {
    pub system: System,
    pub observation: ObservationKind,
    pub h: f64,
    pub tolerance: Tolerance,
    pub exec: Exec,
}

impl SimulatorPlanner {
    pub fn new(system: System) -> Self {
        Self {
            h: system.default_h(),
            system,
            observation: ObservationKind::Native,
            tolerance: Tolerance::default(),
            exec: Exec::default(),
        }
    }
}

impl PlanningModel for SimulatorPlanner {
    fn control_dim(&self) -> usize {
        self.system.control_dim()
    }

    fn sequence_costs(&self, obs0: &[f64], sequences: &[Vec<f64>], cost: &CostSpec) -> Result<Vec<f64>, PlanError> {
        let x0 = self.system.state_from_observation(self.observation, obs0)?;
        let m = self.control_dim();
        Ok(self.exec.map(sequences.len(), |i| {
            let mut x = x0.clone();
            let mut total = 0.0;
            for u in sequences[i].chunks(m) {
                match self.system.step(&x, u, self.h, self.tolerance) {
                    Ok(next) => x = next,
                    Err(_) => return f64::INFINITY,
                }
                total += cost.stage(&x, u);
            }
            total
        }))
    }
}

/// A model whose state never changes; only control costs discriminate.
pub struct InertPlanner {
    pub system: System,
    pub observation: ObservationKind,
}

impl PlanningModel for InertPlanner {
    fn control_dim(&self) -> usize {
        self.system.control_dim()
    }

    fn sequence_costs(&self, obs0: &[f64], sequences: &[Vec<f64>], cost: &CostSpec) -> Result<Vec<f64>, PlanError> {
        let m = self.control_dim();
        Ok(sequences
            .iter()
            .map(|s| s.chunks(m).map(|u| cost.stage_from_observation(&self.system, self.observation, obs0, u)).sum())
            .collect())
    }
}

/// Indices of the `k` lowest costs, best first. NaN sorts last.
pub fn select_elites(costs: &[f64], k: usize) -> Vec<usize> {
    let key = |c: f64| if c.is_nan() { f64::INFINITY } else { c };
    let mut idx: Vec<usize> = (0..costs.len()).collect();
    idx.sort_by(|&a, &b| key(costs[a]).total_cmp(&key(costs[b])).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Elementwise mean and population variance of the elite sequences, plus
/// the variance floor.
pub fn refit(plan: &CemPlan, samples: &[Vec<f64>], elites: &[usize], floor: f64) -> CemPlan {
    let n = plan.mean.len();
    let k = elites.len() as f64;
    let mut mean = vec![0.0; n];
    for &e in elites {
        for (m, x) in mean.iter_mut().zip(&samples[e]) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut var = vec![0.0; n];
    for &e in elites {
        for ((v, x), m) in var.iter_mut().zip(&samples[e]).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v = *v / k + floor);
    CemPlan { horizon: plan.horizon, control_dim: plan.control_dim, mean, var }
}

/// Draws `count` sequences from `plan`, clamped to `[-limit, limit]`.
pub fn sample_sequences<R: Rng + ?Sized>(plan: &CemPlan, count: usize, limit: f64, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            plan.mean
                .iter()
                .zip(&plan.var)
                .map(|(m, v)| {
                    let z: f64 = rng.sample(StandardNormal);
                    (m + v.sqrt() * z).clamp(-limit, limit)
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct CemOutcome {
    /// First control of the final mean, inside the bounds.
    pub control: Vec<f64>,
    pub plan: CemPlan,
    /// Mean elite cost of each iteration.
    pub elite_costs: Vec<f64>,
    pub restarts: usize,
}

impl CemOutcome {
    /// True when the mean elite cost never increased across iterations.
    pub fn elite_cost_monotone(&self) -> bool {
        self.elite_costs.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Runs CEM from `obs0`. `init` seeds the plan (warm start); `None` starts
/// from the prior. An iteration in which every rollout fails restarts from
/// the prior; `max_restarts` consecutive failures abort.
pub fn cem_plan<P: PlanningModel + ?Sized, R: Rng + ?Sized>(
    planner: &P,
    obs0: &[f64],
    cost: &CostSpec,
    cfg: &CemConfig,
    limit: f64,
    init: Option<CemPlan>,
    rng: &mut R,
) -> Result<CemOutcome, PlanError> {
    cfg.validate()?;
    let m = planner.control_dim();
    let mut plan = init
        .filter(|p| p.horizon == cfg.horizon && p.control_dim == m)
        .unwrap_or_else(|| CemPlan::prior(cfg.horizon, m));
    let mut elite_costs = Vec::with_capacity(cfg.iterations);
    let mut restarts = 0;
    let mut failures = 0;
    let mut it = 0;
    while it < cfg.iterations {
        let samples = sample_sequences(&plan, cfg.samples, limit, rng);
        let costs = planner.sequence_costs(obs0, &samples, cost)?;
        if costs.iter().all(|c| !c.is_finite()) {
            failures += 1;
            restarts += 1;
            if failures > cfg.max_restarts {
                return Err(PlanError::RolloutFailed(failures));
            }
            plan = CemPlan::prior(cfg.horizon, m);
            continue;
        }
        failures = 0;
        let elites = select_elites(&costs, cfg.elites);
        elite_costs.push(elites.iter().map(|&e| costs[e]).sum::<f64>() / elites.len() as f64);
        plan = refit(&plan, &samples, &elites, cfg.variance_floor);
        it += 1;
    }
    let control = plan.first().iter().map(|u| u.clamp(-limit, limit)).collect();
    Ok(CemOutcome { control, plan, elite_costs, restarts })
}
