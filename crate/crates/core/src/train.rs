//! Multi-step open-loop training and prediction evaluation.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adam::AdamState;
use crate::graph::{Gradients, Graph, Tape};
use crate::model::{Model, ModelError};
use crate::nets::ParamStore;
use crate::par::{chunk_ranges, Exec};
use crate::prim::DiffError;
use crate::sim::Trajectory;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no trajectory is long enough for rollout length {0}")]
    NoWindows(usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("trajectory length mismatch: {0}")]
    Length(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Open-loop rollout length `T` of each training window.
    pub rollout_len: usize,
    /// Upper bound on windows per batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip; off by default.
    pub clip_norm: Option<f64>,
    /// Windows per recorded tape. Chunks are evaluated concurrently and
    /// their gradients summed in order.
    pub chunk_size: usize,
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rollout_len: 10,
            batch_size: 2048,
            learning_rate: crate::adam::DEFAULT_LEARNING_RATE,
            epochs: 5000,
            seed: 0,
            clip_norm: None,
            chunk_size: 256,
            divergence_threshold: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.rollout_len == 0 {
            return bad("rollout_len must be at least 1");
        }
        if self.batch_size == 0 || self.chunk_size == 0 {
            return bad("batch_size and chunk_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

/// Number of length-`t` windows in a trajectory with `n_obs` observations.
/// The position layout spends one observation on the initial pair.
pub fn window_count(n_obs: usize, t: usize, position_only: bool) -> usize {
    let lead = usize::from(position_only);
    n_obs.saturating_sub(t + lead)
}

/// Every training window, stored row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct Windows {
    pub rollout_len: usize,
    pub y0: Vec<Vec<f64>>,
    pub prev: Option<Vec<Vec<f64>>>,
    /// `controls[w][k]`.
    pub controls: Vec<Vec<Vec<f64>>>,
    /// `targets[w][k]` is the target for step `k + 1`.
    pub targets: Vec<Vec<Vec<f64>>>,
}

impl Windows {
    pub fn from_trajectories(model: &Model, trajs: &[Trajectory], t: usize) -> Result<Self, TrainError> {
        if trajs.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let pos_only = model.variant().position_only();
        let lead = usize::from(pos_only);
        let mut w = Windows {
            rollout_len: t,
            y0: vec![],
            prev: pos_only.then(Vec::new),
            controls: vec![],
            targets: vec![],
        };
        let h = trajs[0].h;
        for tr in trajs {
            if !tr.is_consistent() {
                return Err(TrainError::Length("observations must outnumber controls by one".into()));
            }
            if (tr.h - h).abs() > 1e-12 {
                return Err(TrainError::Length("trajectories use different step sizes".into()));
            }
            for i in 0..window_count(tr.observations.len(), t, pos_only) {
                let s = i + lead;
                w.y0.push(tr.observations[s].clone());
                if let Some(p) = w.prev.as_mut() {
                    p.push(tr.observations[s - 1].clone());
                }
                w.controls.push(tr.controls[s..s + t].to_vec());
                w.targets.push(tr.observations[s + 1..=s + t].iter().map(|o| model.target_of(o)).collect());
            }
        }
        if w.is_empty() {
            return Err(TrainError::NoWindows(t));
        }
        Ok(w)
    }

    pub fn len(&self) -> usize {
        self.y0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y0.is_empty()
    }

    /// Gathers the windows at `idx` into a batch.
    pub fn batch(&self, idx: &[usize]) -> Batch {
        fn gather<'a>(idx: &[usize], f: &dyn Fn(usize) -> &'a [f64]) -> Tensor {
            let r: Vec<&[f64]> = idx.iter().map(|&i| f(i)).collect();
            let cols = r.first().map_or(0, |x| x.len());
            Tensor::from_rows(&r, cols)
        }
        let t = self.rollout_len;
        Batch {
            y0: gather(idx, &|i| &self.y0[i]),
            prev: self.prev.as_ref().map(|p| gather(idx, &|i| &p[i])),
            controls: (0..t).map(|k| gather(idx, &|i| &self.controls[i][k])).collect(),
            targets: (0..t).map(|k| gather(idx, &|i| &self.targets[i][k])).collect(),
        }
    }
}

/// One minibatch: `y0` is `[B, obs_dim]`, `controls[k]` is `[B, m]`,
/// `targets[k]` is `[B, target_dim]` for step `k + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub y0: Tensor,
    pub prev: Option<Tensor>,
    pub controls: Vec<Tensor>,
    pub targets: Vec<Tensor>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.y0.rows()
    }
}

/// Records the summed squared prediction error of `batch` on `g`, scaled by
/// `weight`. Returns the scalar node.
pub fn loss_graph<G: Graph>(model: &Model, g: &mut G, batch: &Batch, weight: f64) -> Result<G::Var, ModelError> {
    let y0 = g.constant(batch.y0.clone());
    let prev = batch.prev.as_ref().map(|p| g.constant(p.clone()));
    let us: Vec<_> = batch.controls.iter().map(|u| g.constant(u.clone())).collect();
    let preds = model.predict_graph(g, &y0, prev.as_ref(), &us, false)?;
    let mut total: Option<G::Var> = None;
    for (p, target) in preds.iter().zip(&batch.targets) {
        let y = g.constant(target.clone());
        let d = g.sub(p, &y)?;
        let sq = g.square(&d)?;
        let s = g.sum(&sq)?;
        total = Some(match total {
            None => s,
            Some(acc) => g.add(&acc, &s)?,
        });
    }
    let total = total.ok_or_else(|| ModelError::Spec("batch has no rollout steps".into()))?;
    Ok(g.scale(&total, weight)?)
}

/// Open-loop loss: per-window sum over steps of squared ℓ₂ errors,
/// averaged over the batch. Value only.
pub fn open_loop_loss(model: &Model, batch: &Batch) -> Result<f64, ModelError> {
    let mut g = crate::graph::Eval::new(model.params().tensors());
    let v = loss_graph(model, &mut g, batch, 1.0 / batch.size() as f64)?;
    Ok(g.value(&v).item())
}

fn is_non_finite(e: &ModelError) -> bool {
    use crate::integrators::StepError;
    matches!(
        e,
        ModelError::Graph(DiffError::NonFinite { .. })
            | ModelError::Step(StepError::NonFinite { .. })
            | ModelError::Step(StepError::Graph { source: DiffError::NonFinite { .. }, .. })
    )
}

/// Loss and parameter gradients over `windows[idx]`, split into chunks of
/// `chunk` windows. Chunk results are combined in index order, so the
/// result does not depend on `exec`. `Ok(None)` means a non-finite value.
pub fn loss_and_grad(
    model: &Model,
    windows: &Windows,
    idx: &[usize],
    chunk: usize,
    exec: Exec,
) -> Result<Option<(f64, Gradients)>, ModelError> {
    let weight = 1.0 / idx.len() as f64;
    let ranges = chunk_ranges(idx.len(), chunk);
    let parts = exec.map(ranges.len(), |c| -> Result<Option<(f64, Gradients)>, ModelError> {
        let batch = windows.batch(&idx[ranges[c].clone()]);
        let mut tape = Tape::new(model.params().tensors());
        let root = match loss_graph(model, &mut tape, &batch, weight) {
            Ok(r) => r,
            Err(e) if is_non_finite(&e) => return Ok(None),
            Err(e) => return Err(e),
        };
        let loss = tape.value(&root).item();
        Ok(Some((loss, tape.backward(root)?)))
    });
    let mut loss = 0.0;
    let mut grads = Gradients::zeros_like(model.params().tensors());
    for p in parts {
        match p? {
            None => return Ok(None),
            Some((l, g)) => {
                loss += l;
                grads.accumulate(&g);
            }
        }
    }
    Ok(Some((loss, grads)))
}

fn clip(grads: &mut Gradients, max_norm: f64) {
    let norm = grads.per_param.iter().map(|t| t.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in &mut grads.per_param {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Mean training loss of each epoch, measured during the pass.
    pub loss_curve: Vec<f64>,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub best_params: ParamStore,
    pub windows: usize,
    pub adam_steps: u64,
    pub skipped_steps: u64,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.loss_curve.last().copied().unwrap_or(f64::NAN)
    }
}

/// Trains `model` in place with Adam on the open-loop loss. An epoch is one
/// pass over all windows in batches of at most `batch_size`.
pub fn train(model: &mut Model, trajs: &[Trajectory], cfg: &TrainConfig, exec: Exec) -> Result<TrainReport, TrainError> {
    train_with_observer(model, trajs, cfg, exec, |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, loss)` after every epoch.
pub fn train_with_observer(
    model: &mut Model,
    trajs: &[Trajectory],
    cfg: &TrainConfig,
    exec: Exec,
    mut observe: impl FnMut(usize, f64),
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    let windows = Windows::from_trajectories(model, trajs, cfg.rollout_len)?;
    let mut adam = AdamState::new(model.params().tensors(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let shuffle = windows.len() > cfg.batch_size;
    let mut report = TrainReport {
        loss_curve: Vec::with_capacity(cfg.epochs),
        best_loss: f64::INFINITY,
        best_epoch: 0,
        best_params: model.params().clone(),
        windows: windows.len(),
        adam_steps: 0,
        skipped_steps: 0,
    };
    for epoch in 0..cfg.epochs {
        if shuffle {
            order.shuffle(&mut rng);
        }
        // Epoch loss is measured while the pass updates the parameters; the
        // pre-epoch copy is the one credited with it.
        let before = model.params().clone();
        let mut epoch_loss = 0.0;
        for (b, range) in chunk_ranges(order.len(), cfg.batch_size).into_iter().enumerate() {
            let idx = &order[range];
            let (loss, mut grads) = loss_and_grad(model, &windows, idx, cfg.chunk_size, exec)?
                .ok_or(TrainError::NonFiniteLoss { epoch, batch: b })?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            epoch_loss += loss * idx.len() as f64;
            if let Some(c) = cfg.clip_norm {
                clip(&mut grads, c);
            }
            if adam.step(model.params_mut().tensors_mut(), &grads).is_err() {
                report.skipped_steps += 1;
            }
        }
        let loss = epoch_loss / windows.len() as f64;
        if !loss.is_finite() || loss > cfg.divergence_threshold {
            return Err(TrainError::Diverged { epoch, loss });
        }
        if loss < report.best_loss {
            report.best_loss = loss;
            report.best_epoch = epoch;
            report.best_params = before;
        }
        report.loss_curve.push(loss);
        observe(epoch, loss);
    }
    report.adam_steps = adam.steps();
    Ok(report)
}

/// How controls are fed to an evaluation rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionMode {
    /// The test trajectory's recorded controls.
    Forced,
    /// Zero controls at every step.
    ZeroControl,
}

/// Per-step ℓ₂ errors in target space; `steps[i]` is the observation index
/// that `errors[i]` refers to.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorCurve {
    pub steps: Vec<usize>,
    pub errors: Vec<f64>,
}

/// One open-loop rollout over the whole test trajectory from its first
/// observation (first pair for the position layout).
pub fn evaluate_prediction(model: &Model, traj: &Trajectory, mode: PredictionMode) -> Result<ErrorCurve, TrainError> {
    if !traj.is_consistent() {
        return Err(TrainError::Length("observations must outnumber controls by one".into()));
    }
    let lead = usize::from(model.variant().position_only());
    if traj.controls.len() <= lead {
        return Err(TrainError::Length("trajectory too short to evaluate".into()));
    }
    let controls: Vec<Vec<f64>> = match mode {
        PredictionMode::Forced => traj.controls[lead..].to_vec(),
        PredictionMode::ZeroControl => vec![vec![0.0; model.spec().control_dim]; traj.controls.len() - lead],
    };
    let prev = (lead == 1).then(|| traj.observations[0].as_slice());
    let preds = model.predict(&traj.observations[lead], prev, &controls)?;
    let steps: Vec<usize> = (lead + 1..traj.observations.len()).collect();
    let errors = steps
        .iter()
        .zip(&preds)
        .map(|(&k, p)| l2(p, &model.target_of(&traj.observations[k])))
        .collect();
    Ok(ErrorCurve { steps, errors })
}

/// Errors of the open-loop persistence predictor `ŷ_k = y_0`, whose first
/// step is the one-step persistence `ŷ_{k+1} = y_k`.
pub fn persistence_baseline(traj: &Trajectory) -> ErrorCurve {
    let y0 = &traj.observations[0];
    let steps: Vec<usize> = (1..traj.observations.len()).collect();
    let errors = steps.iter().map(|&k| l2(y0, &traj.observations[k])).collect();
    ErrorCurve { steps, errors }
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn write_loss_csv(path: &Path, curve: &[f64]) -> Result<(), TrainError> {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in curve.iter().enumerate() {
        s.push_str(&format!("{e},{l}\n"));
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_error_csv(path: &Path, curve: &ErrorCurve) -> Result<(), TrainError> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "step,l2_error")?;
    for (k, e) in curve.steps.iter().zip(&curve.errors) {
        writeln!(f, "{k},{e}")?;
    }
    Ok(())
}
