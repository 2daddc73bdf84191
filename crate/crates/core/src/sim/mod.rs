//! Ground-truth simulators, trajectory sampling and JSON-Lines datasets.

pub mod rk45;
mod systems;

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use rk45::{rk45, Rk45Error, Tolerance};
pub use systems::{
    cartpole_deriv, cartpole_mass_matrix, pendulum_deriv, wrap_angle, CartpoleParams, ObservationKind,
    PendulumParams, SimError, System, SystemKind,
};

use crate::par::Exec;

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// One trajectory: `observations.len() == controls.len() + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    pub observations: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    /// Ground-truth states, when the trajectory came from a simulator.
    pub states: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn is_consistent(&self) -> bool {
        self.observations.len() == self.controls.len() + 1
            && self.states.as_ref().is_none_or(|s| s.len() == self.observations.len())
    }
}

/// Per-coordinate uniform ranges for initial states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialDistribution {
    pub ranges: Vec<(f64, f64)>,
}

impl InitialDistribution {
    pub fn default_for(system: &System) -> Self {
        let ranges = match system {
            System::Pendulum(_) => vec![(-PI, PI), (-1.0, 1.0)],
            System::Cartpole(_) => vec![(-0.5, 0.5), (PI - 0.5, PI + 0.5), (-0.5, 0.5), (-0.5, 0.5)],
            System::Qqs2Offline => vec![(-PI, PI), (-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)],
        };
        Self { ranges }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.ranges
            .iter()
            .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo })
            .collect()
    }
}

/// A state-feedback policy `(state, step) → control`.
pub type PolicyFn<'a> = &'a (dyn Fn(&[f64], usize) -> Vec<f64> + Sync);

#[derive(Clone, Copy)]
pub enum ControlLaw<'a> {
    /// Uniform over the actuator box, redrawn each step.
    Random,
    /// No actuation: passive dissipation only.
    Zero,
    Policy(PolicyFn<'a>),
}

#[derive(Clone, Debug)]
pub struct SampleConfig {
    pub count: usize,
    pub length: usize,
    pub seed: u64,
    pub h: f64,
    pub observation: ObservationKind,
    pub initial: InitialDistribution,
    pub tolerance: Tolerance,
}

impl SampleConfig {
    pub fn new(system: &System, count: usize, length: usize, seed: u64) -> Self {
        Self {
            count,
            length,
            seed,
            h: system.default_h(),
            observation: ObservationKind::Native,
            initial: InitialDistribution::default_for(system),
            tolerance: Tolerance::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("dataset is empty")]
    Empty,
    #[error("unsupported dataset format version {0}")]
    Version(u32),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Independent RNG stream for trajectory `index` under `seed`.
pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Rolls a single trajectory forward from `x0`.
pub fn simulate<R: Rng>(
    system: &System,
    x0: &[f64],
    length: usize,
    law: ControlLaw<'_>,
    h: f64,
    observation: ObservationKind,
    tol: Tolerance,
    rng: &mut R,
) -> Result<Trajectory, SimError> {
    let limit = system.control_limit();
    let mut states = Vec::with_capacity(length + 1);
    let mut controls = Vec::with_capacity(length);
    let mut x = x0.to_vec();
    for k in 0..length {
        let u = match law {
            ControlLaw::Random => (0..system.control_dim()).map(|_| rng.random_range(-limit..=limit)).collect(),
            ControlLaw::Zero => vec![0.0; system.control_dim()],
            ControlLaw::Policy(p) => p(&x, k).into_iter().map(|v| v.clamp(-limit, limit)).collect(),
        };
        let next = system.step(&x, &u, h, tol)?;
        states.push(std::mem::replace(&mut x, next));
        controls.push(u);
    }
    states.push(x);
    let observations = states.iter().map(|s| system.observe(observation, s)).collect::<Result<_, _>>()?;
    Ok(Trajectory { h, observations, controls, states: Some(states) })
}

/// `count` trajectories of `length` steps. Trajectory `i` uses its own RNG
/// stream, so results do not depend on the execution strategy.
pub fn sample_trajectories(
    system: &System,
    cfg: &SampleConfig,
    law: ControlLaw<'_>,
    exec: Exec,
) -> Result<Vec<Trajectory>, SimError> {
    exec.try_map(cfg.count, |i| {
        let mut rng = trajectory_rng(cfg.seed, i);
        let x0 = cfg.initial.sample(&mut rng);
        simulate(system, &x0, cfg.length, law, cfg.h, cfg.observation, cfg.tolerance, &mut rng)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub system: SystemKind,
    pub h: f64,
    pub seed: u64,
    pub format_version: u32,
    #[serde(default)]
    pub observation: ObservationKind,
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    /// Trajectory index within the file.
    #[serde(default)]
    traj: usize,
    k: usize,
    obs: Vec<f64>,
    u: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<Vec<f64>>,
}

/// Writes trajectories as JSON Lines: a header line, then one record per
/// observation. The terminal observation of each trajectory has empty `u`.
pub fn write_jsonl(path: &Path, header: &DatasetHeader, trajs: &[Trajectory]) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    let json = |e| DatasetError::Json { line: 0, source: e };
    serde_json::to_writer(&mut w, header).map_err(json)?;
    writeln!(w)?;
    for (traj, t) in trajs.iter().enumerate() {
        for (k, obs) in t.observations.iter().enumerate() {
            let rec = StepRecord {
                traj,
                k,
                obs: obs.clone(),
                u: t.controls.get(k).cloned().unwrap_or_default(),
                state: t.states.as_ref().map(|s| s[k].clone()),
            };
            serde_json::to_writer(&mut w, &rec).map_err(json)?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<(DatasetHeader, Vec<Trajectory>), DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let (_, first) = lines.next().ok_or(DatasetError::Empty)?;
    let header: DatasetHeader =
        serde_json::from_str(&first?).map_err(|source| DatasetError::Json { line: 1, source })?;
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(DatasetError::Version(header.format_version));
    }
    let mut trajs: Vec<Trajectory> = Vec::new();
    let mut current: Option<(usize, Trajectory)> = None;
    let mut all_states = true;
    for (i, line) in lines {
        let line_no = i + 1;
        let rec: StepRecord =
            serde_json::from_str(&line?).map_err(|source| DatasetError::Json { line: line_no, source })?;
        let malformed = |msg: &str| DatasetError::Malformed { line: line_no, msg: msg.to_string() };
        if rec.k == 0 {
            if let Some((_, t)) = current.take() {
                trajs.push(t);
            }
            current = Some((rec.traj, Trajectory { h: header.h, observations: vec![], controls: vec![], states: Some(vec![]) }));
        }
        let (id, t) = current.as_mut().ok_or_else(|| malformed("trajectory does not start at k = 0"))?;
        if *id != rec.traj || rec.k != t.observations.len() {
            return Err(malformed("out-of-order record"));
        }
        if t.observations.len() > t.controls.len() {
            return Err(malformed("record after terminal observation"));
        }
        t.observations.push(rec.obs);
        if !rec.u.is_empty() {
            t.controls.push(rec.u);
        }
        match (rec.state, t.states.as_mut()) {
            (Some(s), Some(v)) => v.push(s),
            _ => all_states = false,
        }
    }
    if let Some((_, t)) = current.take() {
        trajs.push(t);
    }
    for t in &mut trajs {
        if !all_states {
            t.states = None;
        }
        if !t.is_consistent() {
            return Err(DatasetError::Malformed { line: 0, msg: "trajectory missing its terminal observation".into() });
        }
    }
    if trajs.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok((header, trajs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let sys = System::pendulum();
        let cfg = SampleConfig::new(&sys, 5, 50, 7);
        let a = sample_trajectories(&sys, &cfg, ControlLaw::Random, Exec::Parallel).unwrap();
        let b = sample_trajectories(&sys, &cfg, ControlLaw::Random, Exec::Sequential).unwrap();
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|t| t.observations.len() == 51 && t.is_consistent()));
        assert_eq!(a, b);
        assert!(a.iter().flat_map(|t| &t.controls).all(|u| u[0].abs() <= 2.0));
    }

    #[test]
    fn zero_law_gives_zero_controls() {
        let sys = System::cartpole();
        let cfg = SampleConfig::new(&sys, 2, 10, 1);
        let t = sample_trajectories(&sys, &cfg, ControlLaw::Zero, Exec::Sequential).unwrap();
        assert!(t.iter().flat_map(|t| &t.controls).all(|u| u == &[0.0]));
        assert_eq!(t[0].observations[0].len(), 5);
    }

    #[test]
    fn policy_law_is_clamped() {
        let sys = System::pendulum();
        let cfg = SampleConfig::new(&sys, 1, 5, 1);
        let p = |_: &[f64], _: usize| vec![50.0];
        let t = sample_trajectories(&sys, &cfg, ControlLaw::Policy(&p), Exec::Sequential).unwrap();
        assert!(t[0].controls.iter().all(|u| u == &[2.0]));
    }

    #[test]
    fn jsonl_round_trip() {
        let sys = System::pendulum();
        let cfg = SampleConfig::new(&sys, 3, 4, 11);
        let trajs = sample_trajectories(&sys, &cfg, ControlLaw::Random, Exec::Sequential).unwrap();
        let header = DatasetHeader {
            system: sys.kind(),
            h: cfg.h,
            seed: cfg.seed,
            format_version: DATASET_FORMAT_VERSION,
            observation: ObservationKind::Native,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_jsonl(&path, &header, &trajs).unwrap();
        let (h2, back) = read_jsonl(&path).unwrap();
        assert_eq!(h2, header);
        assert_eq!(back, trajs);
    }

    #[test]
    fn offline_records_without_state_or_traj_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        let text = concat!(
            r#"{"system":"qqs2-offline","h":0.04,"seed":0,"format_version":1}"#,
            "\n",
            r#"{"k":0,"obs":[1,0,0,0,0],"u":[0.5]}"#,
            "\n",
            r#"{"k":1,"obs":[1,0,0.1,0,0],"u":[]}"#,
            "\n"
        );
        std::fs::write(&path, text).unwrap();
        let (h, t) = read_jsonl(&path).unwrap();
        assert_eq!(h.system, SystemKind::Qqs2Offline);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].controls, vec![vec![0.5]]);
        assert!(t[0].states.is_none());
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let text = concat!(
            r#"{"system":"pendulum","h":0.1,"seed":0,"format_version":1}"#,
            "\n",
            r#"{"k":0,"obs":[1,0,0],"u":[0.5]}"#,
            "\n"
        );
        std::fs::write(&path, text).unwrap();
        assert!(matches!(read_jsonl(&path), Err(DatasetError::Malformed { .. })));
    }
}
