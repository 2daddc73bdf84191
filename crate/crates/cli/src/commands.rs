use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fvin::control::{
    initial_grid, run_grid, train_with_mpc, write_summaries, CostSpec, GridResult, LearnedPlanner, MpcConfig,
    PlanningModel, SimulatorPlanner,
};
use fvin::integrators::{analytic_pendulum_run, ForceScales, PendulumField};
use fvin::sim::{
    read_jsonl, sample_trajectories, simulate, trajectory_rng, write_jsonl, ControlLaw, DatasetHeader, ObservationKind,
    SampleConfig, System, SystemKind, Trajectory, DATASET_FORMAT_VERSION,
};
use fvin::train::{
    evaluate_prediction, persistence_baseline, train_with_observer, write_error_csv, write_loss_csv, PredictionMode,
};
use fvin::{Exec, Model};

use crate::config::{ControlLawKind, EnergySource, ExperimentConfig};
use crate::manifest::{sha256_bytes, ManifestBuilder};
use crate::CliError;

/// Everything a command needs besides its own flags.
pub struct Session {
    pub cfg: ExperimentConfig,
    pub checkpoint: Option<PathBuf>,
    pub exec: Exec,
}

type CmdResult = std::result::Result<(), CliError>;

trait Runtime<T> {
    fn runtime(self) -> std::result::Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Runtime<T> for std::result::Result<T, E> {
    fn runtime(self) -> std::result::Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(e.into()))
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Config(e.into())
}

impl Session {
    fn out_dir(&self) -> Result<&Path> {
        let d = self.cfg.out_dir.as_path();
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    fn config_hash(&self) -> String {
        sha256_bytes(serde_json::to_string(&self.cfg).expect("config serializes").as_bytes())
    }

    fn manifest(&self, command: &str, checkpoint: Option<&Path>) -> Result<ManifestBuilder> {
        Ok(ManifestBuilder::new(command, self.cfg.seed, self.config_hash(), self.out_dir()?, checkpoint))
    }

    fn header(&self, seed: u64) -> DatasetHeader {
        DatasetHeader {
            system: self.cfg.system,
            h: self.cfg.h(),
            seed,
            format_version: DATASET_FORMAT_VERSION,
            observation: self.cfg.observation,
        }
    }

    fn require_checkpoint(&self) -> std::result::Result<&Path, CliError> {
        self.checkpoint.as_deref().ok_or_else(|| config_err(anyhow!("--checkpoint is required for this command")))
    }

    fn load_model(&self, path: &Path) -> std::result::Result<Model, CliError> {
        if !path.exists() {
            return Err(config_err(anyhow!("checkpoint {} does not exist", path.display())));
        }
        Model::load(path).map_err(|e| config_err(anyhow!("loading {}: {e}", path.display())))
    }

    fn sample_config(&self, count: usize, length: usize, seed: u64) -> SampleConfig {
        let sys = self.cfg.system();
        SampleConfig {
            h: self.cfg.h(),
            observation: self.cfg.observation,
            initial: self.cfg.initial_distribution(),
            ..SampleConfig::new(&sys, count, length, seed)
        }
    }

    /// The configured dataset: files if given, simulation otherwise.
    fn dataset(&self) -> Result<Vec<Trajectory>> {
        if !self.cfg.dataset.files.is_empty() {
            let mut all = vec![];
            for f in &self.cfg.dataset.files {
                let (header, trajs) = read_jsonl(f).with_context(|| format!("reading {}", f.display()))?;
                if header.system != self.cfg.system {
                    bail!("{} holds {} data, config says {}", f.display(), header.system, self.cfg.system);
                }
                all.extend(trajs);
            }
            return Ok(all);
        }
        let d = &self.cfg.dataset;
        let sc = self.sample_config(d.count, d.length, self.cfg.dataset_seed());
        let law = match d.control_law {
            ControlLawKind::Random => ControlLaw::Random,
            ControlLawKind::Zero => ControlLaw::Zero,
        };
        Ok(sample_trajectories(&self.cfg.system(), &sc, law, self.exec)?)
    }
}

fn write_trajectory_files(
    ctx: &Session,
    dir: &Path,
    prefix: &str,
    trajs: &[Trajectory],
    seed: u64,
    manifest: &mut ManifestBuilder,
) -> Result<()> {
    for (i, t) in trajs.iter().enumerate() {
        let path = dir.join(format!("{prefix}{i:03}.jsonl"));
        write_jsonl(&path, &ctx.header(seed), std::slice::from_ref(t))?;
        manifest.add(path);
    }
    Ok(())
}

pub fn simulate_cmd(ctx: &Session) -> CmdResult {
    let trajs = ctx.dataset().runtime()?;
    let out = ctx.out_dir().runtime()?;
    let mut m = ctx.manifest("simulate", None).runtime()?;
    write_trajectory_files(ctx, out, "traj_", &trajs, ctx.cfg.dataset_seed(), &mut m).runtime()?;
    let manifest = m.write().runtime()?;
    println!("wrote {} trajectories to {} ({})", trajs.len(), out.display(), manifest.display());
    Ok(())
}

pub fn train_cmd(ctx: &Session) -> CmdResult {
    let trajs = ctx.dataset().runtime()?;
    let mut model = match &ctx.checkpoint {
        Some(p) => ctx.load_model(p)?,
        None => Model::new(ctx.cfg.model_spec().map_err(config_err)?).map_err(config_err)?,
    };
    let epochs = ctx.cfg.train.epochs;
    let report = train_with_observer(&mut model, &trajs, &ctx.cfg.train, ctx.exec, |e, l| {
        if e % 500 == 0 || e + 1 == epochs {
            eprintln!("epoch {e:>5}  loss {l:.6e}");
        }
    })
    .runtime()?;
    let out = ctx.out_dir().runtime()?;
    let extra = serde_json::json!({
        "trajectories": trajs.len(),
        "windows": report.windows,
        "epochs": report.loss_curve.len(),
        "best_epoch": report.best_epoch,
        "best_loss": report.best_loss,
    });
    let final_path = out.join("final.ckpt.json");
    model.save(&final_path, extra.clone()).runtime()?;
    let mut best = model.clone();
    *best.params_mut() = report.best_params.clone();
    let best_path = out.join("best.ckpt.json");
    best.save(&best_path, extra).runtime()?;
    let loss_path = out.join("loss.csv");
    write_loss_csv(&loss_path, &report.loss_curve).runtime()?;
    let mut m = ctx.manifest("train", Some(&final_path)).runtime()?;
    m.add(best_path);
    m.add(loss_path);
    m.write().runtime()?;
    println!(
        "trained {} on {} trajectories: loss {:.4e} -> {:.4e} (best {:.4e} at epoch {})",
        model.variant(),
        trajs.len(),
        report.loss_curve.first().copied().unwrap_or(f64::NAN),
        report.final_loss(),
        report.best_loss,
        report.best_epoch
    );
    Ok(())
}

fn energy_of(sys: &System, kind: ObservationKind, obs: &[f64]) -> f64 {
    sys.observation_energy(kind, obs)
}

pub fn predict_cmd(ctx: &Session) -> CmdResult {
    let ck = ctx.require_checkpoint()?;
    let mut model = ctx.load_model(ck)?;
    let sys = ctx.cfg.system();
    let kind = ctx.cfg.observation;
    let out = ctx.out_dir().runtime()?.to_path_buf();
    let mut m = ctx.manifest("predict", Some(ck)).runtime()?;
    let p = &ctx.cfg.predict;

    let mut tests: Vec<(String, Trajectory)> = vec![];
    if !p.files.is_empty() {
        for f in &p.files {
            let (_, trajs) = read_jsonl(f).map_err(|e| config_err(anyhow!("reading {}: {e}", f.display())))?;
            let stem = f.file_stem().map_or("test".into(), |s| s.to_string_lossy().into_owned());
            for (i, t) in trajs.into_iter().enumerate() {
                tests.push((format!("{stem}_{i}"), t));
            }
        }
    } else {
        let sc = ctx.sample_config(1, p.test_length, p.test_seed);
        let forced = sample_trajectories(&sys, &sc, ControlLaw::Random, Exec::Sequential).runtime()?;
        let passive = sample_trajectories(&sys, &sc, ControlLaw::Zero, Exec::Sequential).runtime()?;
        tests.push(("forced".into(), forced.into_iter().next().expect("one trajectory")));
        tests.push(("zero_control".into(), passive.into_iter().next().expect("one trajectory")));
    }

    let mut summary = String::from("test,final_step,final_l2_error,persistence_error\n");
    for (name, test) in &mut tests {
        if let Some(n) = p.zero_controls_after {
            for u in test.controls.iter_mut().skip(n) {
                u.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let curve = evaluate_prediction(&model, test, PredictionMode::Forced).runtime()?;
        let path = out.join(format!("errors_{name}.csv"));
        write_error_csv(&path, &curve).runtime()?;
        m.add(path);
        let base = persistence_baseline(test);
        let path = out.join(format!("persistence_{name}.csv"));
        write_error_csv(&path, &base).runtime()?;
        m.add(path);

        let lead = usize::from(model.variant().position_only());
        let prev = (lead == 1).then(|| test.observations[0].as_slice());
        let preds = model.predict(&test.observations[lead], prev, &test.controls[lead..]).runtime()?;
        let mut observations = test.observations[..=lead].iter().map(|o| model.target_of(o)).collect::<Vec<_>>();
        observations.extend(preds.iter().cloned());
        let predicted = Trajectory { h: test.h, observations, controls: test.controls[lead..].to_vec(), states: None };
        let path = out.join(format!("predicted_{name}.jsonl"));
        write_jsonl(&path, &ctx.header(p.test_seed), &[predicted]).runtime()?;
        m.add(path);

        if !model.variant().position_only() && sys.kind() != SystemKind::Qqs2Offline {
            let mut csv = String::from("step,true_energy,predicted_energy\n");
            for (k, pred) in curve.steps.iter().zip(&preds) {
                let truth = energy_of(&sys, kind, &test.observations[*k]);
                let _ = writeln!(csv, "{k},{truth},{}", energy_of(&sys, kind, pred));
            }
            let path = out.join(format!("energy_{name}.csv"));
            fs::write(&path, csv).runtime()?;
            m.add(path);
        }
        let last = curve.errors.len() - 1;
        let _ = writeln!(summary, "{name},{},{},{}", curve.steps[last], curve.errors[last], base.errors[curve.steps[last] - 1]);
    }
    let path = out.join("prediction_summary.csv");
    fs::write(&path, &summary).runtime()?;
    m.add(path);

    let sweepable = model.variant().is_fvin() && !model.variant().position_only() && sys.kind() != SystemKind::Qqs2Offline;
    if sweepable && p.files.is_empty() && !p.alphas.is_empty() {
        let start = tests[1].1.states.as_ref().and_then(|s| s.first().cloned()).expect("simulated test has states");
        let obs0 = sys.observe(kind, &start).runtime()?;
        let zeros = vec![vec![0.0; sys.control_dim()]; p.test_length];
        let mut csv = String::from("alpha,step,model_energy,sim_energy\n");
        for &alpha in &p.alphas {
            model.scales = ForceScales::passive(alpha);
            let preds = model.predict(&obs0, None, &zeros).runtime()?;
            model.scales = ForceScales::default();
            let matched = sys.with_damping_scale(alpha);
            let mut rng = trajectory_rng(0, 0);
            let truth = simulate(&matched, &start, p.test_length, ControlLaw::Zero, ctx.cfg.h(), kind, Default::default(), &mut rng)
                .runtime()?;
            let _ = writeln!(csv, "{alpha},0,{},{}", energy_of(&sys, kind, &obs0), energy_of(&sys, kind, &obs0));
            for (k, pred) in preds.iter().enumerate() {
                let _ = writeln!(
                    csv,
                    "{alpha},{},{},{}",
                    k + 1,
                    energy_of(&sys, kind, pred),
                    energy_of(&sys, kind, &truth.observations[k + 1])
                );
            }
        }
        let path = out.join("alpha_sweep.csv");
        fs::write(&path, csv).runtime()?;
        m.add(path);
    }
    m.write().runtime()?;
    print!("{summary}");
    Ok(())
}

fn grid_csv(initial: &[Vec<f64>], res: &GridResult) -> String {
    let dim = initial.first().map_or(0, Vec::len);
    let mut s = String::from("index,");
    for i in 0..dim {
        let _ = write!(s, "x0_{i},");
    }
    s.push_str("total_cost,control_effort,success\n");
    for (i, (x, e)) in initial.iter().zip(&res.summaries).enumerate() {
        let xs: Vec<String> = x.iter().map(f64::to_string).collect();
        let _ = writeln!(s, "{i},{},{},{},{}", xs.join(","), e.total_cost, e.control_effort, u8::from(e.success));
    }
    s
}

fn mpc_config(cfg: &ExperimentConfig) -> MpcConfig {
    MpcConfig {
        episode_len: cfg.mpc.episode_len,
        noise_fraction: cfg.mpc.noise_fraction,
        success_radius: cfg.mpc.success_radius,
        cem: cfg.cem.clone(),
    }
}

fn trajectories_of(path: &Path) -> Option<u64> {
    let ck = fvin::checkpoint::Checkpoint::load(path).ok()?;
    ck.metadata.get("extra")?.get("trajectories")?.as_u64()
}

pub fn mpc_cmd(ctx: &Session) -> CmdResult {
    let sys = ctx.cfg.system();
    if sys.kind() == SystemKind::Qqs2Offline {
        return Err(config_err(anyhow!("MPC needs a simulator; qqs2-offline has none")));
    }
    let cost = CostSpec::for_system(&sys);
    let mpc = mpc_config(&ctx.cfg);
    let initial = initial_grid(&sys, ctx.cfg.mpc.grid);
    let out = ctx.out_dir().runtime()?.to_path_buf();
    let mut m = ctx.manifest("mpc", ctx.checkpoint.as_deref()).runtime()?;

    let grid = |planner: &dyn PlanningModel| -> std::result::Result<GridResult, CliError> {
        run_grid(&sys, planner, &cost, &mpc, &initial, ctx.cfg.seed, Exec::Sequential).runtime()
    };
    let run = |ck: Option<&Path>| -> std::result::Result<(String, GridResult), CliError> {
        match ck {
            Some(p) => {
                let model = ctx.load_model(p)?;
                let mut planner = LearnedPlanner::new(&model, sys, ctx.cfg.observation).map_err(config_err)?;
                planner.exec = ctx.exec;
                let label = format!("{},{}", model.variant(), trajectories_of(p).map_or("?".into(), |n| n.to_string()));
                Ok((label, grid(&planner)?))
            }
            None => {
                let mut planner = SimulatorPlanner::new(sys);
                planner.exec = ctx.exec;
                Ok(("simulator,-".into(), grid(&planner)?))
            }
        }
    };

    let (label, res) = run(ctx.checkpoint.as_deref())?;
    let path = out.join("episodes.jsonl");
    write_summaries(&path, &res.summaries).runtime()?;
    m.add(path);
    let path = out.join("grid.csv");
    fs::write(&path, grid_csv(&initial, &res)).runtime()?;
    m.add(path);
    let mut table = String::from("model,trajectories,success_rate,mean_cost,monotone_fraction\n");
    let _ = writeln!(table, "{label},{},{},{}", res.success_rate(), res.mean_cost(), res.monotone_fraction);

    if let Some(other) = &ctx.cfg.mpc.compare_checkpoint {
        let (label_b, res_b) = run(Some(other))?;
        let _ = writeln!(table, "{label_b},{},{},{}", res_b.success_rate(), res_b.mean_cost(), res_b.monotone_fraction);
        let mut diff = String::from("index,cost_difference,effort_difference\n");
        for (i, (a, b)) in res.summaries.iter().zip(&res_b.summaries).enumerate() {
            let _ = writeln!(diff, "{i},{},{}", b.total_cost - a.total_cost, b.control_effort - a.control_effort);
        }
        let path = out.join("cost_difference.csv");
        fs::write(&path, diff).runtime()?;
        m.add(path);
    }
    let path = out.join("table.csv");
    fs::write(&path, &table).runtime()?;
    m.add(path);
    m.write().runtime()?;
    print!("{table}");
    Ok(())
}

pub fn energy_audit_cmd(ctx: &Session) -> CmdResult {
    let a = &ctx.cfg.energy_audit;
    let sys = ctx.cfg.system();
    let out = ctx.out_dir().runtime()?.to_path_buf();
    let mut csv = String::new();
    let checkpoint = match a.source {
        EnergySource::Analytic => {
            let System::Pendulum(p) = sys else {
                return Err(config_err(anyhow!("the analytic audit is defined for the pendulum")));
            };
            if a.initial.len() != 2 {
                return Err(config_err(anyhow!("energy_audit.initial needs (q, q̇)")));
            }
            let field = PendulumField { omega_sq: p.g / p.l, damping: 0.0, control_gain: 1.0 / (p.m * p.l * p.l), h: a.h };
            let vv = analytic_pendulum_run(&field, a.initial[0], a.initial[1], a.h, a.steps, false);
            let eu = analytic_pendulum_run(&field, a.initial[0], a.initial[1], a.h, a.steps, true);
            let scale = p.m * p.l * p.l;
            csv.push_str("step,time,vv_energy,euler_energy\n");
            for (k, (x, y)) in vv.iter().zip(&eu).enumerate() {
                let _ = writeln!(
                    csv,
                    "{k},{},{},{}",
                    k as f64 * a.h,
                    scale * field.energy(x.0, x.1),
                    scale * field.energy(y.0, y.1)
                );
            }
            None
        }
        EnergySource::Simulation => {
            if a.initial.len() != sys.state_dim() {
                return Err(config_err(anyhow!("energy_audit.initial needs {} values", sys.state_dim())));
            }
            let mut x = a.initial.clone();
            csv.push_str("step,time,energy\n");
            for k in 0..=a.steps {
                let _ = writeln!(csv, "{k},{},{}", k as f64 * a.h, sys.energy(&x).runtime()?);
                x = sys.step(&x, &vec![0.0; sys.control_dim()], a.h, Default::default()).runtime()?;
            }
            None
        }
        EnergySource::Checkpoint => {
            let ck = ctx.require_checkpoint()?;
            let mut model = ctx.load_model(ck)?;
            if !model.variant().is_fvin() || model.variant().position_only() {
                return Err(config_err(anyhow!("the checkpoint audit needs a vv-fvin model")));
            }
            if a.initial.len() != sys.state_dim() {
                return Err(config_err(anyhow!("energy_audit.initial needs {} values", sys.state_dim())));
            }
            model.scales = ForceScales::passive(0.0);
            let kind = ctx.cfg.observation;
            let obs0 = sys.observe(kind, &a.initial).runtime()?;
            let preds = model.predict(&obs0, None, &vec![vec![0.0; sys.control_dim()]; a.steps]).runtime()?;
            csv.push_str("step,time,energy\n");
            let h = model.spec().h;
            let _ = writeln!(csv, "0,0,{}", energy_of(&sys, kind, &obs0));
            for (k, p) in preds.iter().enumerate() {
                let _ = writeln!(csv, "{},{},{}", k + 1, (k + 1) as f64 * h, energy_of(&sys, kind, p));
            }
            Some(ck.to_path_buf())
        }
    };
    let path = out.join("energy.csv");
    fs::write(&path, csv).runtime()?;
    let mut m = ctx.manifest("energy-audit", checkpoint.as_deref()).runtime()?;
    m.add(path.clone());
    m.write().runtime()?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn train_with_mpc_cmd(ctx: &Session) -> CmdResult {
    let sys = ctx.cfg.system();
    if sys.kind() == SystemKind::Qqs2Offline {
        return Err(config_err(anyhow!("data collection needs a simulator")));
    }
    let spec = ctx.cfg.model_spec().map_err(config_err)?;
    if spec.variant.position_only() || ctx.cfg.observation != ObservationKind::Native {
        return Err(config_err(anyhow!("train-with-mpc plans with a velocity-layout model on native observations")));
    }
    let collect = fvin::control::CollectConfig { seed: ctx.cfg.dataset_seed(), ..ctx.cfg.collect.clone() };
    let out = train_with_mpc(&sys, spec, &collect, &ctx.cfg.train, &mpc_config(&ctx.cfg), ctx.exec).runtime()?;
    let dir = ctx.out_dir().runtime()?.to_path_buf();
    let ck = dir.join("final.ckpt.json");
    out.model.save(&ck, serde_json::json!({ "trajectories": out.dataset.len() })).runtime()?;
    let mut m = ctx.manifest("train-with-mpc", Some(&ck)).runtime()?;
    let data_dir = dir.join("dataset");
    fs::create_dir_all(&data_dir).runtime()?;
    write_trajectory_files(ctx, &data_dir, "traj_", &out.dataset, collect.seed, &mut m).runtime()?;
    for (r, curve) in out.loss_curves.iter().enumerate() {
        let path = dir.join(format!("loss_round_{r:03}.csv"));
        write_loss_csv(&path, curve).runtime()?;
        m.add(path);
    }
    m.write().runtime()?;
    println!("collected {} trajectories; checkpoint {}", out.dataset.len(), ck.display());
    Ok(())
}
