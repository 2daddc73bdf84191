//! Closed-loop MPC episodes on the ground-truth simulator.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cem::{cem_plan, CemConfig, CemPlan, PlanError, PlanningModel};
use super::cost::CostSpec;
use crate::par::Exec;
use crate::sim::{trajectory_rng, wrap_angle, ObservationKind, System, Tolerance, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub episode_len: usize,
    /// Exploration noise standard deviation as a fraction of the control
    /// range; `0` disables it.
    pub noise_fraction: f64,
    /// Radius of the success ball around zero pole angle and rate.
    pub success_radius: f64,
    pub cem: CemConfig,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self { episode_len: 100, noise_fraction: 0.0, success_radius: 0.1, cem: CemConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub total_cost: f64,
    pub control_effort: f64,
    pub success: bool,
    pub initial_condition: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub summary: EpisodeSummary,
    /// Fraction of planning calls whose mean elite cost never increased.
    pub monotone_fraction: f64,
}

/// True when the wrapped pole angle and its rate lie in the ball.
pub fn pole_in_ball(system: &System, state: &[f64], radius: f64) -> bool {
    let (a, r) = system.pole_indices();
    wrap_angle(state[a]).hypot(state[r]) <= radius
}

/// One episode from state `x0`, replanning every step. The environment is
/// always the simulator; `planner` is whatever model the controller uses.
pub fn run_mpc<P: PlanningModel + ?Sized, R: Rng + ?Sized>(
    system: &System,
    planner: &P,
    cost: &CostSpec,
    cfg: &MpcConfig,
    x0: &[f64],
    rng: &mut R,
) -> Result<Episode, PlanError> {
    let kind = ObservationKind::Native;
    let limit = system.control_limit();
    let h = system.default_h();
    let sigma = cfg.noise_fraction * 2.0 * limit;
    let noise = if sigma > 0.0 {
        Some(Normal::new(0.0, sigma).map_err(|e| PlanError::Config(e.to_string()))?)
    } else {
        None
    };
    let mut x = x0.to_vec();
    let mut states = vec![x.clone()];
    let mut observations = vec![system.observe(kind, &x)?];
    let mut controls = Vec::with_capacity(cfg.episode_len);
    let mut plan: Option<CemPlan> = None;
    let (mut total_cost, mut effort, mut monotone) = (0.0, 0.0, 0usize);
    for _ in 0..cfg.episode_len {
        let obs = observations.last().expect("non-empty");
        let init = if cfg.cem.warm_start { plan.as_ref().map(CemPlan::shifted) } else { None };
        let out = cem_plan(planner, obs, cost, &cfg.cem, limit, init, rng)?;
        monotone += usize::from(out.elite_cost_monotone());
        let mut u = out.control.clone();
        if let Some(n) = &noise {
            for v in &mut u {
                *v = (*v + n.sample(rng)).clamp(-limit, limit);
            }
        }
        plan = Some(out.plan);
        x = system.step(&x, &u, h, Tolerance::default())?;
        total_cost += cost.stage(&x, &u);
        effort += u.iter().map(|v| v * v).sum::<f64>();
        observations.push(system.observe(kind, &x)?);
        states.push(x.clone());
        controls.push(u);
    }
    let success = pole_in_ball(system, &x, cfg.success_radius);
    Ok(Episode {
        trajectory: Trajectory { h, observations, controls, states: Some(states) },
        summary: EpisodeSummary { total_cost, control_effort: effort, success, initial_condition: x0.to_vec() },
        monotone_fraction: monotone as f64 / cfg.episode_len.max(1) as f64,
    })
}

/// `n × n` grid of initial states. Pendulum: `θ × θ̇` over
/// `[−π, π) × [−1, 1]`. Cartpole: `x × θ` over `[−0.5, 0.5] × [π−0.5, π+0.5]`
/// with zero velocities.
pub fn initial_grid(system: &System, n: usize) -> Vec<Vec<f64>> {
    let lin = |lo: f64, hi: f64, i: usize| if n == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(match system {
                System::Pendulum(_) => {
                    // Endpoint −π excluded on the angle axis: ±π is one state.
                    let th = -PI + 2.0 * PI * (i as f64 + 0.5) / n as f64;
                    vec![th, lin(-1.0, 1.0, j)]
                }
                _ => vec![lin(-0.5, 0.5, j), lin(PI - 0.5, PI + 0.5, i), 0.0, 0.0],
            });
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub summaries: Vec<EpisodeSummary>,
    pub monotone_fraction: f64,
}

impl GridResult {
    pub fn success_rate(&self) -> f64 {
        self.summaries.iter().filter(|s| s.success).count() as f64 / self.summaries.len().max(1) as f64
    }

    pub fn mean_cost(&self) -> f64 {
        self.summaries.iter().map(|s| s.total_cost).sum::<f64>() / self.summaries.len().max(1) as f64
    }
}

/// Runs one episode per initial state. Episode `i` draws from RNG stream
/// `i` of `seed`, so results do not depend on `exec`.
pub fn run_grid<P: PlanningModel + ?Sized>(
    system: &System,
    planner: &P,
    cost: &CostSpec,
    cfg: &MpcConfig,
    initial: &[Vec<f64>],
    seed: u64,
    exec: Exec,
) -> Result<GridResult, PlanError> {
    let episodes = exec.try_map(initial.len(), |i| {
        let mut rng = trajectory_rng(seed, i);
        run_mpc(system, planner, cost, cfg, &initial[i], &mut rng)
    })?;
    let monotone_fraction = episodes.iter().map(|e| e.monotone_fraction).sum::<f64>() / episodes.len().max(1) as f64;
    Ok(GridResult { summaries: episodes.into_iter().map(|e| e.summary).collect(), monotone_fraction })
}

pub fn write_summaries(path: &Path, summaries: &[EpisodeSummary]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in summaries {
        serde_json::to_writer(&mut w, s)?;
        writeln!(w)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::cem::InertPlanner;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inert_zero_cost_episode_completes() {
        let sys = System::pendulum();
        let planner = InertPlanner { system: sys, observation: ObservationKind::Native };
        let cfg = MpcConfig {
            episode_len: 5,
            noise_fraction: 0.1,
            cem: CemConfig { samples: 50, ..Default::default() },
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ep = run_mpc(&sys, &planner, &CostSpec::zero(2), &cfg, &[0.0, 0.0], &mut rng).unwrap();
        assert_eq!(ep.trajectory.controls.len(), 5);
        assert!(ep.trajectory.controls.iter().all(|u| u[0].abs() <= 2.0));
        assert_eq!(ep.summary.total_cost, 0.0);
    }

    #[test]
    fn grid_shapes() {
        let g = initial_grid(&System::pendulum(), 10);
        assert_eq!(g.len(), 100);
        assert!(g.iter().all(|x| x[0] > -PI && x[0] < PI && x[1].abs() <= 1.0));
        assert_eq!(initial_grid(&System::cartpole(), 3)[4], vec![0.0, PI, 0.0, 0.0]);
    }

    #[test]
    fn ball_uses_wrapped_angle() {
        let sys = System::pendulum();
        assert!(pole_in_ball(&sys, &[2.0 * PI + 0.05, 0.05], 0.1));
        assert!(!pole_in_ball(&sys, &[0.08, 0.08], 0.1));
    }
}
