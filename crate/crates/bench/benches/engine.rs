use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use spurcl_core::eval::{local_spurious_protocol, random_projection_trunk, ProtocolConfig};
use spurcl_core::io::spfv::{read_spfv, write_spfv};
use spurcl_core::nn::gradcheck::ce_evaluation;
use spurcl_core::nn::{Architecture, HeadKind, ModelParams};
use spurcl_core::rng::LabRng;
use spurcl_core::scenario::{build_class_incremental_synth, build_synth_scenario, ten_class_synth, SynthScenarioSpec};
use spurcl_core::train::{irm_penalty, run_scenario, RunOptions, TrainerConfig};

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("mlp");
    let mut rng = LabRng::seed_from_u64(0);
    for (name, input, hidden) in [("synth_128x128", 20, vec![128, 128]), ("cifar_256", 3072, vec![256])] {
        let model = ModelParams::new(&Architecture::single_head(input, hidden, HeadKind::Linear, 2), 1).unwrap();
        let x = Array2::from_shape_simple_fn((64, input), || rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..64).map(|i| i % 2).collect();
        group.throughput(Throughput::Elements(64));
        group.bench_function(name, |b| b.iter(|| ce_evaluation(&model, x.view(), &labels).unwrap()));
    }
    group.finish();
}

fn penalties(c: &mut Criterion) {
    let mut rng = LabRng::seed_from_u64(1);
    let logits = Array2::from_shape_simple_fn((64, 2), || rng.random_range(-3.0..3.0));
    let labels: Vec<usize> = (0..64).map(|i| i % 2).collect();
    let envs: Vec<usize> = (0..64).map(|i| i % 4).collect();
    c.bench_function("irm_penalty_64", |b| b.iter(|| irm_penalty(&logits, &labels, &envs).unwrap()));
}

fn scenarios(c: &mut Criterion) {
    let spec = SynthScenarioSpec::new(0.75, 10, 3);
    c.bench_function("synth_scenario_10_tasks", |b| b.iter(|| build_synth_scenario(&spec).unwrap()));
    let scenario = build_synth_scenario(&spec).unwrap();
    let samples = scenario.all_train();
    c.bench_function("spfv_round_trip_10k", |b| b.iter(|| read_spfv(&write_spfv(&samples).unwrap()).unwrap()));
}

fn training(c: &mut Criterion) {
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    let scenario = build_synth_scenario(&SynthScenarioSpec::new(1.0, 2, 0)).unwrap();
    let cfg = TrainerConfig { epochs_per_task: 2, ..Default::default() };
    group.bench_function("finetune_2_tasks_2_epochs", |b| {
        b.iter_batched(RunOptions::default, |o| run_scenario(&scenario, &cfg, &o).unwrap(), BatchSize::SmallInput)
    });
    let ci = build_class_incremental_synth(&ten_class_synth(), 2, 0).unwrap();
    let trunk = random_projection_trunk(ci.input_dim, 256, 0);
    let pc = ProtocolConfig { epochs_per_task: 5, ..Default::default() };
    group.bench_function("local_spurious_protocol_5_epochs", |b| b.iter(|| local_spurious_protocol(&ci, &trunk, &pc).unwrap()));
    group.finish();
}

criterion_group!(benches, forward_backward, penalties, scenarios, training);
criterion_main!(benches);
