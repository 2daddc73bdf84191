//! Acceptance criteria, one line per criterion.
//!
//! Criteria 4-6 train many models and take from tens of minutes to hours.
//! By default they run as reduced smoke checks (reported as SMOKE); set
//! `FVIN_ACCEPTANCE=full` for the real thresholds. `FVIN_ACCEPTANCE_ONLY=4,5`
//! restricts the run to the listed criteria.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use fvin::control::{
    evaluate_cost, initial_grid, refit, run_grid, run_mpc, select_elites, train_with_mpc, CemConfig, CemPlan,
    CollectConfig, CostSpec, LearnedPlanner, MpcConfig, SimulatorPlanner,
};
use fvin::integrators::{analytic_pendulum_run, ForceScales, LatentState, PendulumField};
use fvin::sim::{
    sample_trajectories, simulate, trajectory_rng, ControlLaw, ObservationKind, SampleConfig, System, Tolerance,
    Trajectory,
};
use fvin::train::{loss_and_grad, open_loop_loss, train, window_count, TrainConfig, Windows};
use fvin::{Exec, Model, ModelSpec, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    Smoke,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        Self { status: if ok { Status::Pass } else { Status::Fail }, detail }
    }

    /// Reduced run: only plumbing and finiteness are judged.
    fn smoke(ok: bool, detail: String) -> Self {
        Self { status: if ok { Status::Smoke } else { Status::Fail }, detail }
    }
}

fn log(msg: &str) {
    eprintln!("  .. {msg}");
}

fn spec(sys: &System, variant: Variant, kind: ObservationKind, seed: u64) -> ModelSpec {
    ModelSpec {
        variant,
        layout: sys.observation_layout(kind).unwrap(),
        config_dim: sys.config_dim(),
        control_dim: sys.control_dim(),
        hidden: vec![100, 100],
        h: sys.default_h(),
        seed,
    }
}

fn random_data(sys: &System, count: usize, length: usize, seed: u64, law: ControlLaw<'_>) -> Vec<Trajectory> {
    sample_trajectories(sys, &SampleConfig::new(sys, count, length, seed), law, Exec::Parallel).unwrap()
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    let sys = System::pendulum();
    let mut worst = 0.0f64;
    let mut checks = 0;
    for draw in 0..10u64 {
        let mut model = Model::new(spec(&sys, Variant::VvFvin, ObservationKind::Native, draw)).unwrap();
        // Zero-initialized output layers would leave most of the network
        // without gradient; perturb every parameter to a generic point.
        let mut rng = ChaCha8Rng::seed_from_u64(100 + draw);
        let mut theta = model.params().flatten();
        for v in &mut theta {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
        model.params_mut().unflatten(&theta);

        let data = random_data(&sys, 1, 20, 200 + draw, ControlLaw::Random);
        let windows = Windows::from_trajectories(&model, &data, 10).unwrap();
        let idx: Vec<usize> = (0..4).collect();
        let (_, grads) = loss_and_grad(&model, &windows, &idx, 256, Exec::Sequential).unwrap().unwrap();
        let g = grads.flatten();
        let batch = windows.batch(&idx);
        let loss_at = |flat: &[f64]| {
            let mut m = model.clone();
            m.params_mut().unflatten(flat);
            open_loop_loss(&m, &batch).unwrap()
        };

        let mut directions: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let d: Vec<f64> = (0..theta.len()).map(|_| rng.sample(StandardNormal)).collect();
                let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                d.into_iter().map(|x| x / n).collect()
            })
            .collect();
        let mut order: Vec<usize> = (0..g.len()).collect();
        order.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
        for &i in order.iter().take(3) {
            let mut e = vec![0.0; theta.len()];
            e[i] = 1.0;
            directions.push(e);
        }

        let eps = 1e-6;
        for d in directions {
            let plus: Vec<f64> = theta.iter().zip(&d).map(|(t, x)| t + eps * x).collect();
            let minus: Vec<f64> = theta.iter().zip(&d).map(|(t, x)| t - eps * x).collect();
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
            let an: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
            worst = worst.max(rel);
            checks += 1;
        }
    }
    Outcome::check(worst < 1e-5, format!("max relative error {worst:.2e} over {checks} directional checks (< 1e-5)"))
}

// ---------------------------------------------------------------- 2

fn linear_slope(ts: &[f64], ys: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let mt = ts.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = ts.iter().zip(ys).map(|(t, y)| (t - mt) * (y - my)).sum();
    let var: f64 = ts.iter().map(|t| (t - mt) * (t - mt)).sum();
    cov / var
}

fn criterion_2() -> Outcome {
    let h = 0.05;
    let steps = 10_000;
    let field = PendulumField { omega_sq: 9.81, damping: 0.0, control_gain: 1.0, h };
    let (q0, v0) = (1.0, 0.0);
    let e0 = field.energy(q0, v0);
    let energies = |euler| -> Vec<f64> {
        analytic_pendulum_run(&field, q0, v0, h, steps, euler).iter().map(|&(q, v)| field.energy(q, v)).collect()
    };
    let vv = energies(false);
    let eu = energies(true);
    let ts: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
    let max_dev = vv.iter().map(|e| ((e - e0) / e0).abs()).fold(0.0, f64::max);
    let secular = linear_slope(&ts, &vv).abs() * ts[steps] / e0;
    let euler_drift = (eu[steps] - e0) / e0;
    Outcome::check(
        max_dev <= 0.02 && secular < 0.005 && euler_drift > 0.2,
        format!(
            "VV max |ΔE|/E0 = {:.3}%, secular {:.4}% of E0; Euler drift {:+.1}%",
            100.0 * max_dev,
            100.0 * secular,
            100.0 * euler_drift
        ),
    )
}

// ---------------------------------------------------------------- 3

fn rk4_reference(sys: &System, y0: &[f64], u: &[f64], h: f64, substeps: usize) -> Vec<f64> {
    let dt = h / substeps as f64;
    let f = |y: &[f64]| sys.deriv(y, u).unwrap();
    let add = |y: &[f64], k: &[f64], a: f64| y.iter().zip(k).map(|(y, k)| y + a * k).collect::<Vec<_>>();
    let mut y = y0.to_vec();
    for _ in 0..substeps {
        let k1 = f(&y);
        let k2 = f(&add(&y, &k1, dt / 2.0));
        let k3 = f(&add(&y, &k2, dt / 2.0));
        let k4 = f(&add(&y, &k3, dt));
        for i in 0..y.len() {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

fn criterion_3() -> Outcome {
    let mut worst = [0.0f64; 2];
    for (s, sys) in [System::pendulum(), System::cartpole()].iter().enumerate() {
        for seed in 0..3 {
            let t = &random_data(sys, 1, 50, seed, ControlLaw::Random)[0];
            let states = t.states.as_ref().unwrap();
            let mut y = states[0].clone();
            for (k, u) in t.controls.iter().enumerate() {
                y = rk4_reference(sys, &y, u, t.h, 100);
                let e = y.iter().zip(&states[k + 1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst[s] = worst[s].max(e);
            }
        }
    }
    Outcome::check(
        worst.iter().all(|w| *w < 1e-6),
        format!("max ℓ∞ vs RK4(h/100): pendulum {:.2e}, cartpole {:.2e} (< 1e-6)", worst[0], worst[1]),
    )
}

// ---------------------------------------------------------------- 4, 5

struct Fig2Seed {
    fvin: Model,
    forced_err: [f64; 2],
    energy_err: [f64; 2],
    zero_test: Trajectory,
}

fn terminal_l2(model: &Model, test: &Trajectory) -> f64 {
    match model.predict(&test.observations[0], None, &test.controls) {
        Ok(p) => {
            let e = fvin::train::l2(p.last().unwrap(), test.observations.last().unwrap());
            if e.is_finite() { e } else { f64::INFINITY }
        }
        Err(_) => f64::INFINITY,
    }
}

fn terminal_energy_error(sys: &System, model: &Model, test: &Trajectory) -> f64 {
    let truth = sys.energy(test.states.as_ref().unwrap().last().unwrap()).unwrap();
    match model.predict(&test.observations[0], None, &test.controls) {
        Ok(p) => {
            let e = (sys.observation_energy(ObservationKind::Native, p.last().unwrap()) - truth).abs();
            if e.is_finite() { e } else { f64::INFINITY }
        }
        Err(_) => f64::INFINITY,
    }
}

fn fig2_seed(seed: u64, epochs: usize) -> Fig2Seed {
    let sys = System::pendulum();
    let data = random_data(&sys, 5, 50, seed, ControlLaw::Random);
    let forced = random_data(&sys, 1, 100, 10_000 + seed, ControlLaw::Random).remove(0);
    let zero_test = random_data(&sys, 1, 100, 20_000 + seed, ControlLaw::Zero).remove(0);
    let cfg = TrainConfig { epochs, seed, ..Default::default() };
    let mut out = Vec::new();
    for variant in [Variant::VvFvin, Variant::Resnn] {
        let t = Instant::now();
        let mut model = Model::new(spec(&sys, variant, ObservationKind::Native, seed)).unwrap();
        let r = train(&mut model, &data, &cfg, Exec::Parallel).unwrap();
        log(&format!(
            "seed {seed} {variant}: loss {:.3e} -> {:.3e} in {:.0?}",
            r.loss_curve[0],
            r.final_loss(),
            t.elapsed()
        ));
        out.push(model);
    }
    let resnn = out.pop().unwrap();
    let fvin = out.pop().unwrap();
    let forced_err = [terminal_l2(&fvin, &forced), terminal_l2(&resnn, &forced)];
    let energy_err = [terminal_energy_error(&sys, &fvin, &zero_test), terminal_energy_error(&sys, &resnn, &zero_test)];
    log(&format!(
        "seed {seed}: step-100 error FVIN {:.3} ResNN {:.3}; terminal energy error FVIN {:.3} ResNN {:.3}",
        forced_err[0], forced_err[1], energy_err[0], energy_err[1]
    ));
    Fig2Seed { fvin, forced_err, energy_err, zero_test }
}

fn criterion_4(full: bool, first: &mut Option<Fig2Seed>) -> Outcome {
    let (seeds, epochs) = if full { (5, 5000) } else { (1, 30) };
    let mut wins = [0, 0];
    let mut rows = vec![];
    for seed in 0..seeds {
        let r = fig2_seed(seed, epochs);
        wins[0] += usize::from(r.forced_err[0] < r.forced_err[1]);
        wins[1] += usize::from(r.energy_err[0] < r.energy_err[1]);
        rows.push(format!("{:.3}/{:.3}", r.forced_err[0], r.forced_err[1]));
        if seed == 0 {
            *first = Some(r);
        }
    }
    let detail = format!(
        "FVIN beats ResNN at step 100 in {}/{seeds} seeds, on terminal energy in {}/{seeds} (FVIN/ResNN errors {})",
        wins[0],
        wins[1],
        rows.join(", ")
    );
    if full {
        Outcome::check(wins[0] >= 4 && wins[1] >= 4, detail)
    } else {
        let ok = first.as_ref().is_some_and(|r| r.forced_err.iter().chain(&r.energy_err).all(|e| !e.is_nan()));
        Outcome::smoke(ok, format!("{epochs} epochs, {detail}"))
    }
}

fn criterion_5(full: bool, first: &mut Option<Fig2Seed>) -> Outcome {
    if first.is_none() {
        *first = Some(fig2_seed(0, if full { 5000 } else { 30 }));
    }
    let r = first.as_ref().unwrap();
    let sys = System::pendulum();
    let mut model = r.fvin.clone();
    let start = r.zero_test.states.as_ref().unwrap()[0].clone();
    let obs0 = sys.observe(ObservationKind::Native, &start).unwrap();
    let e0 = sys.energy(&start).unwrap();
    let steps = r.zero_test.len();
    let zeros = vec![vec![0.0]; steps];
    let mut model_e = vec![];
    let mut sim_e = vec![];
    for alpha in [-0.3, 0.0, 1.0, 1.5] {
        model.scales = ForceScales::passive(alpha);
        let p = model.predict(&obs0, None, &zeros);
        model_e.push(p.map_or(f64::NAN, |p| sys.observation_energy(ObservationKind::Native, p.last().unwrap())));
        let matched = sys.with_damping_scale(alpha);
        let mut rng = trajectory_rng(0, 0);
        let t = simulate(&matched, &start, steps, ControlLaw::Zero, 0.1, ObservationKind::Native, Tolerance::default(), &mut rng)
            .unwrap();
        sim_e.push(matched.energy(t.states.as_ref().unwrap().last().unwrap()).unwrap());
    }
    let detail = format!(
        "E0 {e0:.3}; terminal energy model [{}] vs matched simulation [{}] for α = -0.3, 0, 1, 1.5",
        model_e.iter().map(|e| format!("{e:.3}")).collect::<Vec<_>>().join(", "),
        sim_e.iter().map(|e| format!("{e:.3}")).collect::<Vec<_>>().join(", ")
    );
    let same_direction = model_e.windows(2).all(|w| w[0] > w[1]) && sim_e.windows(2).all(|w| w[0] > w[1]);
    let ok = same_direction
        && model_e[0] > e0
        && ((model_e[1] - e0) / e0).abs() <= 0.1
        && model_e[2] < e0
        && model_e[3] < e0;
    if full {
        Outcome::check(ok, detail)
    } else {
        Outcome::smoke(model_e.iter().all(|e| !e.is_nan()), detail)
    }
}

// ---------------------------------------------------------------- 6

fn grid_success(sys: &System, model: &Model, mpc: &MpcConfig, n: usize) -> f64 {
    let planner = LearnedPlanner::new(model, *sys, ObservationKind::Native).unwrap();
    let t = Instant::now();
    let res = run_grid(sys, &planner, &CostSpec::for_system(sys), mpc, &initial_grid(sys, n), 7, Exec::Sequential).unwrap();
    log(&format!(
        "{} grid: success {:.2}, mean cost {:.1}, monotone elite fraction {:.2} in {:.0?}",
        sys.kind(),
        res.success_rate(),
        res.mean_cost(),
        res.monotone_fraction,
        t.elapsed()
    ));
    res.success_rate()
}

fn criterion_6(full: bool) -> Outcome {
    let pend = System::pendulum();
    let cart = System::cartpole();
    let (mpc, grid, pend_collect, cart_collect, epochs) = if full {
        (
            MpcConfig::default(),
            10,
            CollectConfig { rounds: 15, ..Default::default() },
            CollectConfig { rounds: 45, ..Default::default() },
            5000,
        )
    } else {
        let cem = CemConfig { samples: 50, iterations: 2, ..Default::default() };
        let mpc = MpcConfig { episode_len: 5, cem, ..Default::default() };
        let c = CollectConfig { rounds: 1, trajectory_len: 20, initial_epochs: 5, incremental_epochs: 2, ..Default::default() };
        (mpc, 2, c.clone(), c, 5)
    };
    let train_cfg = TrainConfig::default();

    let t = Instant::now();
    let fvin_pend = train_with_mpc(&pend, spec(&pend, Variant::VvFvin, ObservationKind::Native, 0), &pend_collect, &train_cfg, &mpc, Exec::Parallel)
        .unwrap();
    log(&format!("pendulum collection: {} trajectories in {:.0?}", fvin_pend.dataset.len(), t.elapsed()));
    let s_fvin = grid_success(&pend, &fvin_pend.model, &mpc, grid);

    let data = random_data(&pend, 5, 50, 0, ControlLaw::Random);
    let mut resnn = Model::new(spec(&pend, Variant::Resnn, ObservationKind::Native, 0)).unwrap();
    train(&mut resnn, &data, &TrainConfig { epochs, ..Default::default() }, Exec::Parallel).unwrap();
    let s_resnn = grid_success(&pend, &resnn, &mpc, grid);

    let t = Instant::now();
    let fvin_cart = train_with_mpc(&cart, spec(&cart, Variant::VvFvin, ObservationKind::Native, 0), &cart_collect, &train_cfg, &mpc, Exec::Parallel)
        .unwrap();
    log(&format!("cartpole collection: {} trajectories in {:.0?}", fvin_cart.dataset.len(), t.elapsed()));
    let s_cart = grid_success(&cart, &fvin_cart.model, &mpc, grid);

    let detail = format!(
        "success over {grid}x{grid} grid: pendulum FVIN@{} {s_fvin:.2} (>= 0.9), ResNN@5 {s_resnn:.2} (<= 0.5), cartpole FVIN@{} {s_cart:.2} (>= 0.8)",
        fvin_pend.dataset.len(),
        fvin_cart.dataset.len()
    );
    if full {
        Outcome::check(s_fvin >= 0.9 && s_resnn <= 0.5 && s_cart >= 0.8, detail)
    } else {
        Outcome::smoke([s_fvin, s_resnn, s_cart].iter().all(|s| (0.0..=1.0).contains(s)), detail)
    }
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let sys = System::pendulum();
    let planner = SimulatorPlanner::new(sys);
    let cfg = MpcConfig::default();
    let mut finals = vec![];
    let mut successes = 0;
    for seed in 0..10 {
        let mut rng = trajectory_rng(seed, 0);
        let ep = run_mpc(&sys, &planner, &CostSpec::pendulum(), &cfg, &[PI, 0.0], &mut rng).unwrap();
        successes += usize::from(ep.summary.success);
        let x = ep.trajectory.states.as_ref().unwrap().last().unwrap().clone();
        finals.push(fvin::sim::wrap_angle(x[0]).hypot(x[1]));
    }
    let worst = finals.iter().copied().fold(0.0, f64::max);
    Outcome::check(
        successes == 10,
        format!("{successes}/10 seeds end inside the 0.1 ball from θ = π (largest final distance {worst:.4})"),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let mut failures = vec![];
    let mut note = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    // Zero heads: q' = q + h q̇ and q̇' = q̇, bit for bit.
    let sys = System::pendulum();
    let model = Model::new(spec(&sys, Variant::VvFvin, ObservationKind::State, 3)).unwrap();
    let (q0, v0, h) = (0.3, -1.7, 0.1);
    let controls: Vec<Vec<f64>> = (0..25).map(|k| vec![(k as f64).sin()]).collect();
    let preds = model.predict(&[q0, v0], None, &controls).unwrap();
    let mut q = q0;
    let mut exact = true;
    for p in &preds {
        q += h * v0;
        exact &= p[0] == q && p[1] == v0;
    }
    note("zero-force reduction", exact);

    // Unforced VV is time-reversible.
    let field = PendulumField { omega_sq: 9.81, damping: 0.0, control_gain: 1.0, h: 0.05 };
    let fwd = analytic_pendulum_run(&field, 1.2, 0.4, 0.05, 1000, false);
    let (qe, ve) = *fwd.last().unwrap();
    let back = analytic_pendulum_run(&field, qe, -ve, 0.05, 1000, false);
    let (qb, vb) = *back.last().unwrap();
    let rev = (qb - 1.2).abs().max((-vb - 0.4).abs());
    note("time reversal", rev <= 1e-10);

    // Elite refit: exact mean and variance plus floor.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples: Vec<Vec<f64>> = (0..100).map(|_| (0..6).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let costs: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
    let elites = select_elites(&costs, 10);
    let mut sorted = costs.clone();
    sorted.sort_by(f64::total_cmp);
    note("elite selection", elites.iter().map(|&i| costs[i]).collect::<Vec<_>>() == sorted[..10]);
    let plan = refit(&CemPlan::prior(6, 1), &samples, &elites, 1e-4);
    let mut refit_ok = true;
    for j in 0..6 {
        let m = elites.iter().map(|&e| samples[e][j]).sum::<f64>() / 10.0;
        let v = elites.iter().map(|&e| (samples[e][j] - m).powi(2)).sum::<f64>() / 10.0 + 1e-4;
        refit_ok &= plan.mean[j] == m && plan.var[j] == v;
    }
    note("elite refit", refit_ok);

    // Cost substitutions.
    let c1 = CostSpec::pendulum().stage(&[1.0, 1.0], &[1.0]);
    let c2 = CostSpec::cartpole().stage(&[1.0, 1.0, 1.0, 1.0], &[1.0]);
    note("cost values", (c1 - 1.011).abs() < 1e-12 && (c2 - 6.21).abs() < 1e-12);
    let rest = evaluate_cost(&sys, ObservationKind::Native, &vec![vec![1.0, 0.0, 0.0]; 5], &vec![vec![0.0]; 5], &CostSpec::pendulum());
    note("cost at rest", rest == 0.0);

    // Window counts for a 50-observation trajectory.
    let mut counts_ok = (1..49).all(|t| window_count(50, t, false) == 50 - t && window_count(50, t, true) == 49 - t);
    let traj = &random_data(&sys, 1, 49, 5, ControlLaw::Random)[0];
    for (variant, kind, expect) in [
        (Variant::VvFvin, ObservationKind::Native, 40),
        (Variant::SvFvin, ObservationKind::Native, 39),
    ] {
        let m = Model::new(spec(&sys, variant, kind, 0)).unwrap();
        counts_ok &= Windows::from_trajectories(&m, std::slice::from_ref(traj), 10).unwrap().len() == expect;
    }
    note("window counts", counts_ok);

    // Determinism under seed.
    let a = random_data(&sys, 3, 30, 11, ControlLaw::Random);
    let b = sample_trajectories(&sys, &SampleConfig::new(&sys, 3, 30, 11), ControlLaw::Random, Exec::Sequential).unwrap();
    note("sampling determinism", a == b);
    let cfg = TrainConfig { epochs: 20, seed: 4, batch_size: 32, chunk_size: 16, ..Default::default() };
    let curve = |exec| {
        let mut m = Model::new(spec(&sys, Variant::VvFvin, ObservationKind::Native, 4)).unwrap();
        train(&mut m, &a, &cfg, exec).unwrap().loss_curve
    };
    note("training determinism", curve(Exec::Parallel) == curve(Exec::Sequential));
    let mpc_cfg = MpcConfig { episode_len: 4, cem: CemConfig { samples: 100, ..Default::default() }, ..Default::default() };
    let episode = || {
        let mut rng = trajectory_rng(2, 0);
        run_mpc(&sys, &SimulatorPlanner::new(sys), &CostSpec::pendulum(), &mpc_cfg, &[2.0, 0.0], &mut rng)
            .unwrap()
            .trajectory
    };
    note("MPC determinism", episode() == episode());

    // Velocity-layout states stay in their layout through the model.
    let s = model.encode(&[0.1, 0.2], None).unwrap();
    note("latent layout", matches!(s, LatentState::Velocity { .. }));

    let detail = if failures.is_empty() {
        "zero-force reduction, time reversal, elite selection/refit, cost values, window counts, determinism".to_string()
    } else {
        format!("failed: {}", failures.join(", "))
    };
    Outcome::check(failures.is_empty(), detail)
}

fn main() -> ExitCode {
    let full = std::env::var("FVIN_ACCEPTANCE").is_ok_and(|v| v == "full");
    let only: Option<Vec<u32>> = std::env::var("FVIN_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut first_seed: Option<Fig2Seed> = None;

    let names = [
        "gradient oracle",
        "symplectic energy behaviour",
        "simulator oracle",
        "forced/unforced prediction vs ResNN",
        "damping-scale sweep",
        "MPC success table",
        "planner oracle on the true simulator",
        "invariant suites",
    ];
    let mut failed = 0;
    println!("acceptance ({} mode)", if full { "full" } else { "default" });
    for n in 1..=8u32 {
        if !wanted(n) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(full, &mut first_seed),
            5 => criterion_5(full, &mut first_seed),
            6 => criterion_6(full),
            7 => criterion_7(),
            _ => criterion_8(),
        }));
        let outcome = result.unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome { status: Status::Fail, detail: format!("panicked: {msg}") }
        });
        let tag = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Smoke => "SMOKE",
        };
        failed += usize::from(outcome.status == Status::Fail);
        println!("criterion {n} [{}]: {tag} ({:.1?}) {}", names[n as usize - 1], t.elapsed(), outcome.detail);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
