//! Rayon vs sequential comparison for the data-parallel inner loops: the
//! minibatch gradient, target computation, and evaluation rollouts.
//!
//! Run with `cargo bench -p ddq`.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use ddq::dqn::{compute_targets, compute_targets_seq, Hyperparams, TargetModel};
use ddq::harness::{evaluate, RunConfig};
use ddq::nncore::{backward_par, backward_seq, default_architecture, ModelParams, Tensor};
use ddq::replay::Experience;
use ddq::rng::Rng64;

struct GradCase {
    model: ModelParams,
    specs: Vec<ddq::nncore::LayerSpec>,
    states: Vec<Tensor>,
    actions: Vec<usize>,
    targets: Vec<f64>,
}

fn grad_case(d: usize, frames: usize, batch: usize) -> GradCase {
    let specs = default_architecture(4);
    let mut rng = Rng64::seeded(1);
    let input = vec![frames, d, d];
    let model = ModelParams::init(&specs, &input, 0.01, &mut rng).unwrap();
    let states: Vec<Tensor> = (0..batch)
        .map(|_| {
            let n: usize = input.iter().product();
            Tensor::new(input.clone(), (0..n).map(|_| rng.f64()).collect()).unwrap()
        })
        .collect();
    let actions: Vec<usize> = (0..batch).map(|_| rng.range(4)).collect();
    let targets: Vec<f64> = (0..batch).map(|_| rng.gauss()).collect();
    GradCase {
        model,
        specs,
        states,
        actions,
        targets,
    }
}

fn bench_backward(c: &mut Criterion) {
    let case = grad_case(32, 4, 32);
    let refs: Vec<&Tensor> = case.states.iter().collect();
    let mut group = c.benchmark_group("minibatch_gradient_b32_d32");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| {
            backward_par(&case.model, &case.specs, &refs, &case.actions, &case.targets).unwrap()
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            backward_seq(&case.model, &case.specs, &refs, &case.actions, &case.targets).unwrap()
        })
    });
    group.finish();
}

fn bench_targets(c: &mut Criterion) {
    let case = grad_case(32, 4, 32);
    let mut rng = Rng64::seeded(2);
    let batch: Vec<Experience> = case
        .states
        .iter()
        .map(|s| Experience {
            phi: s.clone(),
            action: rng.range(4),
            reward: rng.gauss(),
            phi_next: s.clone(),
            terminal: false,
        })
        .collect();
    let refs: Vec<&Experience> = batch.iter().collect();
    let target = TargetModel::new(case.model.clone());
    let hp = Hyperparams::default();
    let mut group = c.benchmark_group("targets_b32_d32");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| compute_targets(&refs, &target, &case.specs, hp.gamma).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| compute_targets_seq(&refs, &target, &case.specs, hp.gamma).unwrap())
    });
    group.finish();
}

fn bench_evaluation(c: &mut Criterion) {
    let mut cfg = RunConfig::default();
    cfg.input_width = 5;
    cfg.arch = ddq::harness::parse_arch("conv:16x3,relu,fc:128,relu").unwrap();
    let mut rng = Rng64::seeded(3);
    let model = ModelParams::init(&cfg.full_specs(), &cfg.input_shape(), 0.01, &mut rng).unwrap();

    let mut group = c.benchmark_group("evaluate_40_episodes");
    group.sample_size(10);
    let par_cfg = cfg.clone();
    group.bench_function("parallel", |b| {
        b.iter_batched(
            || par_cfg.clone(),
            |cfg| evaluate(&model, &cfg, 40, 0.05, 7).unwrap(),
            BatchSize::SmallInput,
        )
    });
    let mut seq_cfg = cfg.clone();
    seq_cfg.parallel = false;
    group.bench_function("sequential", |b| {
        b.iter_batched(
            || seq_cfg.clone(),
            |cfg| evaluate(&model, &cfg, 40, 0.05, 7).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, bench_backward, bench_targets, bench_evaluation);
criterion_main!(benches);
