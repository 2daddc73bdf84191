use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fvin::control::{CostSpec, LearnedPlanner, PlanningModel};
use fvin::sim::{sample_trajectories, ControlLaw, ObservationKind, SampleConfig, System};
use fvin::train::{loss_and_grad, Windows};
use fvin::{Exec, Model, ModelSpec, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn model(sys: &System) -> Model {
    Model::new(ModelSpec {
        variant: Variant::VvFvin,
        layout: sys.observation_layout(ObservationKind::Native).unwrap(),
        config_dim: sys.config_dim(),
        control_dim: sys.control_dim(),
        hidden: vec![100, 100],
        h: sys.default_h(),
        seed: 0,
    })
    .unwrap()
}

fn bench_sampling(c: &mut Criterion) {
    let sys = System::cartpole();
    let cfg = SampleConfig::new(&sys, 16, 50, 0);
    let mut group = c.benchmark_group("sample_trajectories");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sample_trajectories(&sys, &cfg, ControlLaw::Random, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_loss_and_grad(c: &mut Criterion) {
    let sys = System::pendulum();
    let m = model(&sys);
    let data = sample_trajectories(&sys, &SampleConfig::new(&sys, 5, 50, 1), ControlLaw::Random, Exec::Parallel).unwrap();
    let windows = Windows::from_trajectories(&m, &data, 10).unwrap();
    let idx: Vec<usize> = (0..windows.len()).collect();
    let mut group = c.benchmark_group("loss_and_grad");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| loss_and_grad(&m, &windows, &idx, 32, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_sequence_costs(c: &mut Criterion) {
    let sys = System::pendulum();
    let m = model(&sys);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sequences: Vec<Vec<f64>> = (0..1000).map(|_| (0..15).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let obs = sys.observe(ObservationKind::Native, &[3.0, 0.0]).unwrap();
    let cost = CostSpec::pendulum();
    let mut group = c.benchmark_group("cem_sequence_costs");
    group.sample_size(10);
    for (name, exec) in MODES {
        let mut planner = LearnedPlanner::new(&m, sys, ObservationKind::Native).unwrap();
        planner.exec = exec;
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| planner.sequence_costs(&obs, &sequences, &cost).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_sampling, bench_loss_and_grad, bench_sequence_costs);
criterion_main!(benches);
