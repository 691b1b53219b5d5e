//! Acceptance suite. Each test prints one PASS/FAIL line to stderr (outside
//! the test harness's capture) and then asserts it.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use spurcl_core::eval::{
    local_spurious_protocol, mean_gaps, metric, random_projection_trunk, GapReport, ProtocolConfig, Split,
};
use spurcl_core::io::manifest::{read_manifest, write_manifest, Manifest};
use spurcl_core::io::runlog;
use spurcl_core::io::spfv::{read_spfv, write_spfv};
use spurcl_core::nn::{finite_diff_check, Architecture, Head, HeadKind, ModelParams};
use spurcl_core::rng::LabRng;
use spurcl_core::scenario::{
    build_class_incremental_synth, build_synth_scenario, ten_class_synth, Rgb, Sample, ScenarioSpec, SpuriousSpec,
    SynthScenarioSpec,
};
use spurcl_core::train::{
    cross_task_interference, flat_params, irm_penalty, run_scenario, BalancedSampler, ContinualTrainer, Method,
    RunOptions, TrainEvent, TrainerConfig,
};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    let line = format!("criterion {n:>2} {}: {name} | {detail}", if pass { "PASS" } else { "FAIL" });
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(pass, "{line}");
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

#[test]
fn c01_gradient_correctness() {
    let start = Instant::now();
    let mut rng = LabRng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for draw in 0..100u64 {
        let input = rng.random_range(2..8);
        let hidden: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(3..12)).collect();
        let kind = if draw % 2 == 0 { HeadKind::Linear } else { HeadKind::WeightNorm };
        let classes = rng.random_range(2..5);
        let model = ModelParams::new(&Architecture::single_head(input, hidden, kind, classes), draw).unwrap();
        let n = rng.random_range(3..12);
        let x = Array2::from_shape_simple_fn((n, input), || rng.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let g = finite_diff_check(&model, x.view(), &labels, 1e-5, &mut rng).unwrap();
        worst = worst.max(g.max_rel_error);
        checked += g.checked;
    }
    let t = start.elapsed();
    verdict(
        1,
        "gradient correctness",
        worst < 1e-4 && t < Duration::from_secs(30),
        format!("max rel error {worst:.2e} over 100 draws, {checked} coordinates, {:.1}s", secs(t)),
    );
}

#[test]
fn c02_balanced_sampler() {
    let start = Instant::now();
    let labels: Vec<usize> = std::iter::repeat_n(0, 90).chain(std::iter::repeat_n(1, 10)).collect();
    let sampler = BalancedSampler::new(&labels).unwrap();
    let draws = sampler.draw(100_000, &mut LabRng::seed_from_u64(7));
    let ones = draws.iter().filter(|&&i| labels[i] == 1).count() as f64 / 100_000.0;
    let zeros = 1.0 - ones;
    let t = start.elapsed();
    verdict(
        2,
        "balanced sampler",
        (zeros - 0.5).abs() <= 0.01 && (ones - 0.5).abs() <= 0.01 && t < Duration::from_secs(5),
        format!("class frequencies {zeros:.4} / {ones:.4}, {:.2}s", secs(t)),
    );
}

fn random_samples(rng: &mut LabRng) -> Vec<Sample> {
    let n = rng.random_range(0..40);
    let dim = rng.random_range(1..16);
    (0..n)
        .map(|_| Sample {
            x: (0..dim).map(|_| rng.random::<f32>() * 10.0 - 5.0).collect::<Vec<_>>().into(),
            y: rng.random_range(0..u16::MAX as usize + 1),
            mode_id: 0,
            spurious_present: rng.random(),
            spurious_id: None,
            task_id: rng.random_range(0..u16::MAX as usize + 1),
        })
        .collect()
}

fn random_manifest(rng: &mut LabRng) -> Manifest {
    if rng.random() {
        let n_tasks = rng.random_range(1..6);
        let mut s = SpuriousSpec::new(rng.random_range(0..=100) as f64 / 100.0, n_tasks, rng.random());
        if rng.random() {
            s.colors = (0..n_tasks)
                .map(|_| [Rgb([rng.random(), rng.random(), rng.random()]), Rgb([rng.random(), rng.random(), rng.random()])])
                .collect();
        }
        s.support_s = [0.2, 0.4, 0.6, 0.8, 1.0][rng.random_range(0..5)];
        s.square_size = rng.random_range(1..5);
        s.max_train_per_task = rng.random::<bool>().then(|| rng.random_range(1..5000));
        Manifest::new(ScenarioSpec::Cifar10(spurcl_core::scenario::CifarScenarioSpec {
            spurious: s,
            train_batches: vec!["data_batch_1.bin".into(), "data_batch_2.bin".into()],
            test_batch: "test_batch.bin".into(),
        }))
    } else {
        let mut s = SynthScenarioSpec::new(rng.random_range(0..=100) as f64 / 100.0, rng.random_range(1..12), rng.random());
        s.synth.mode_scale = rng.random_range(0.1..5.0);
        s.synth.n_train = rng.random_range(1..3000);
        s.support_s = [0.2, 0.4, 0.6, 0.8, 1.0][rng.random_range(0..5)];
        Manifest::new(ScenarioSpec::Synth(s))
    }
}

#[test]
fn c03_format_round_trips() {
    let mut rng = LabRng::seed_from_u64(3);
    let mut ok = 0;
    for _ in 0..50 {
        let samples = random_samples(&mut rng);
        let back = read_spfv(&write_spfv(&samples).unwrap()).unwrap();
        let spfv_ok = back.len() == samples.len()
            && back.iter().zip(&samples).all(|(a, b)| {
                a.x == b.x && a.y == b.y && a.task_id == b.task_id && a.spurious_present == b.spurious_present
            });
        let m = random_manifest(&mut rng);
        let manifest_ok = read_manifest(&write_manifest(&m).unwrap()).unwrap() == m;
        ok += usize::from(spfv_ok && manifest_ok);
    }
    // Two independent generations of the same manifest give identical bytes.
    let golden = |_: u8| {
        let m = Manifest::new(ScenarioSpec::Synth(SynthScenarioSpec::new(0.75, 3, 11)));
        let text = write_manifest(&m).unwrap();
        let spec = read_manifest(&text).unwrap().scenario;
        let sc = spec.build(None).unwrap();
        let mut bytes = text.into_bytes();
        for t in &sc.tasks {
            bytes.extend(write_spfv(&t.train).unwrap());
            bytes.extend(write_spfv(&t.eval_spurious).unwrap());
        }
        bytes.extend(write_spfv(&sc.clean_test).unwrap());
        bytes
    };
    let (a, b) = rayon::join(|| golden(0), || golden(1));
    verdict(
        3,
        "format round-trips",
        ok == 50 && a == b,
        format!("{ok}/50 randomized round-trips, golden files {} bytes equal: {}", a.len(), a == b),
    );
}

#[test]
fn c04_spurious_overfitting() {
    let start = Instant::now();
    let results: Vec<(f64, f64)> = SEEDS
        .par_iter()
        .map(|&seed| {
            let sc = build_synth_scenario(&SynthScenarioSpec::new(1.0, 1, seed)).unwrap();
            let cfg = TrainerConfig { seed, method: Method::Finetune, ..Default::default() };
            let r = run_scenario(&sc, &cfg, &RunOptions::default()).unwrap();
            (r.last(Split::Train, metric::ACCURACY).unwrap(), r.last(Split::CleanTest, metric::ACCURACY).unwrap())
        })
        .collect();
    let train = mean(results.iter().map(|r| r.0));
    let clean = mean(results.iter().map(|r| r.1));
    let t = start.elapsed();
    verdict(
        4,
        "spurious overfitting",
        train >= 0.95 && clean <= 0.65 && t < Duration::from_secs(60),
        format!("train {train:.3}, clean test {clean:.3}, {:.1}s", secs(t)),
    );
}

const PS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// `(omega, final task-0 eval_spurious accuracy)` per method, p and seed.
struct Sweep {
    finetune: Vec<Vec<(f64, f64)>>,
    replay: Vec<Vec<(f64, f64)>>,
    elapsed: Duration,
}

fn sweep() -> &'static Sweep {
    static SWEEP: OnceLock<Sweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let start = Instant::now();
        let jobs: Vec<(usize, u64, Method)> = (0..PS.len())
            .flat_map(|p| SEEDS.iter().flat_map(move |&s| [(p, s, Method::Finetune), (p, s, Method::Replay)]))
            .collect();
        let out: Vec<(f64, f64)> = jobs
            .par_iter()
            .map(|&(p, seed, method)| {
                let sc = build_synth_scenario(&SynthScenarioSpec::new(PS[p], 10, seed)).unwrap();
                let cfg = TrainerConfig { seed, method, ..Default::default() };
                let r = run_scenario(&sc, &cfg, &RunOptions::default()).unwrap();
                (r.omega().unwrap(), r.last(Split::EvalSpurious(0), metric::ACCURACY).unwrap())
            })
            .collect();
        let mut finetune = vec![Vec::new(); PS.len()];
        let mut replay = vec![Vec::new(); PS.len()];
        for (&(p, _, method), v) in jobs.iter().zip(out) {
            match method {
                Method::Finetune => finetune[p].push(v),
                _ => replay[p].push(v),
            }
        }
        Sweep { finetune, replay, elapsed: start.elapsed() }
    })
}

#[test]
fn c05_correlation_sweep() {
    let s = sweep();
    let omegas: Vec<f64> = s.finetune.iter().map(|v| mean(v.iter().map(|r| r.0))).collect();
    let monotone = omegas.windows(2).all(|w| w[1] <= w[0] + 0.03);
    verdict(
        5,
        "correlation sweep",
        monotone && s.elapsed < Duration::from_secs(600),
        format!(
            "finetune omega at p=0.25..1.0: {} (sweep incl. replay {:.1}s)",
            omegas.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>().join(", "),
            secs(s.elapsed)
        ),
    );
}

#[test]
fn c06_replay_benefit() {
    let s = sweep();
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, p) in PS.iter().enumerate().filter(|(_, p)| **p <= 0.75) {
        let of = mean(s.finetune[i].iter().map(|r| r.0));
        let or = mean(s.replay[i].iter().map(|r| r.0));
        let ef = mean(s.finetune[i].iter().map(|r| r.1));
        let er = mean(s.replay[i].iter().map(|r| r.1));
        pass &= or >= of - 0.02 && er > ef;
        parts.push(format!("p={p}: omega {or:.3} vs {of:.3}, task-0 eval {er:.3} vs {ef:.3}"));
    }
    verdict(6, "replay benefit", pass, parts.join("; "));
}

fn trajectory(method: Method, seed: u64) -> Vec<u64> {
    let sc = build_synth_scenario(&SynthScenarioSpec::new(0.75, 3, seed)).unwrap();
    let cfg = TrainerConfig {
        seed,
        method,
        lambda_penalty: 0.0,
        lambda_ib: 0.0,
        eta_dro: 0.0,
        epochs_per_task: 5,
        ..Default::default()
    };
    let mut trainer = ContinualTrainer::new(cfg, sc.input_dim, sc.n_classes, None).unwrap();
    let mut hashes = Vec::new();
    for task in &sc.tasks {
        trainer
            .train_task(task, &mut |ev| {
                if let TrainEvent::Step { model } = ev {
                    let mut h = DefaultHasher::new();
                    flat_params(model).iter().for_each(|v| v.to_bits().hash(&mut h));
                    hashes.push(h.finish());
                }
            })
            .unwrap();
    }
    hashes
}

#[test]
fn c07_ood_reductions() {
    let ood = [Method::Irm, Method::IbErm, Method::IbIrm, Method::GroupDro, Method::SpectralDecoupling];
    let results: Vec<(u64, Method, bool, usize)> = [0u64, 1, 2]
        .par_iter()
        .flat_map(|&seed| {
            let reference = trajectory(Method::Replay, seed);
            ood.par_iter()
                .map(|&m| {
                    let t = trajectory(m, seed);
                    (seed, m, t == reference, reference.len())
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let failures: Vec<String> = results.iter().filter(|r| !r.2).map(|r| format!("{}@seed{}", r.1, r.0)).collect();
    verdict(
        7,
        "OOD reductions",
        failures.is_empty(),
        format!(
            "{} method/seed trajectories of {} steps bit-identical to replay; mismatches: {:?}",
            results.len() - failures.len(),
            results[0].3,
            failures
        ),
    );
}

fn env_risk(logits: &Array2<f64>, labels: &[usize], envs: &[usize], e: usize, scale: f64) -> f64 {
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| envs[i] == e).collect();
    let total: f64 = rows
        .iter()
        .map(|&i| {
            let r = logits.row(i).mapv(|v| v * scale);
            let m = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - r[labels[i]]
        })
        .sum();
    total / rows.len() as f64
}

/// Σ_e (dR_e/ds at s = 1)², by Richardson-extrapolated central differences.
fn brute_force_irm(logits: &Array2<f64>, labels: &[usize], envs: &[usize]) -> f64 {
    let mut groups = envs.to_vec();
    groups.sort_unstable();
    groups.dedup();
    groups
        .iter()
        .map(|&e| {
            let d = |h: f64| (env_risk(logits, labels, envs, e, 1.0 + h) - env_risk(logits, labels, envs, e, 1.0 - h)) / (2.0 * h);
            let (d1, d2, d3) = (d(4e-3), d(2e-3), d(1e-3));
            let r1 = (4.0 * d2 - d1) / 3.0;
            let r2 = (4.0 * d3 - d2) / 3.0;
            let g = (16.0 * r2 - r1) / 15.0;
            g * g
        })
        .sum()
}

#[test]
fn c08_irm_penalty_oracle() {
    // Calibrated logits: environment 0 has label mix 3:1 at logits (ln 3, 0),
    // environment 1 has 2:1 at (ln 2, 0); the risk is stationary in the scale.
    let (a, b) = (3f64.ln(), 2f64.ln());
    let fit = Array2::from_shape_vec((7, 2), vec![a, 0., a, 0., a, 0., a, 0., b, 0., b, 0., b, 0.]).unwrap();
    let (zero, _) = irm_penalty(&fit, &[0, 0, 0, 1, 0, 0, 1], &[0, 0, 0, 0, 1, 1, 1]).unwrap();

    let asym = ndarray::array![[2.0, -1.0, 0.5], [0.3, 0.1, -2.2], [-1.5, 2.5, 0.0], [1.1, 1.0, 0.9], [0.0, -3.0, 4.0]];
    let labels = [0, 2, 1, 1, 0];
    let envs = [0, 0, 0, 1, 1];
    let (analytic, _) = irm_penalty(&asym, &labels, &envs).unwrap();
    let oracle = brute_force_irm(&asym, &labels, &envs);
    verdict(
        8,
        "IRM penalty oracle",
        zero.abs() < 1e-10 && (analytic - oracle).abs() < 1e-8 && analytic > 1e-3,
        format!("fitted penalty {zero:.1e}; asymmetric analytic {analytic:.12} vs oracle {oracle:.12}"),
    );
}

fn protocol_runs() -> &'static (Vec<GapReport>, Duration) {
    static RUNS: OnceLock<(Vec<GapReport>, Duration)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let reports = SEEDS
            .par_iter()
            .map(|&seed| {
                let sc = build_class_incremental_synth(&ten_class_synth(), 2, seed).unwrap();
                let cfg = ProtocolConfig { seed, ..Default::default() };
                let trunk = random_projection_trunk(sc.input_dim, cfg.projection_width, seed);
                local_spurious_protocol(&sc, &trunk, &cfg).unwrap()
            })
            .collect();
        (reports, start.elapsed())
    })
}

#[test]
fn c09_local_spurious_gap() {
    let (reports, elapsed) = protocol_runs();
    let gaps = mean_gaps(reports);
    let gap = |k: HeadKind| gaps.iter().find(|g| g.0 == k).map(|g| g.1).unwrap();
    let (lin, wn, ml) = (gap(HeadKind::Linear), gap(HeadKind::WeightNorm), gap(HeadKind::MeanLayer));
    verdict(
        9,
        "local spurious gap",
        lin >= ml + 0.05 && (wn - lin).abs() <= 0.10 && *elapsed < Duration::from_secs(120),
        format!("gaps linear {lin:.3}, weightnorm {wn:.3}, meanlayer {ml:.3}, {:.1}s", secs(*elapsed)),
    );
}

#[test]
fn c10_freezing_guarantee() {
    let (reports, _) = protocol_runs();
    let intact = reports.iter().filter(|r| r.frozen_heads_intact).count();
    // Independent check of the freezing contract on a model that keeps
    // training after a head is frozen.
    let mut model = ModelParams::new(&Architecture::single_head(4, vec![6], HeadKind::Linear, 2), 1).unwrap();
    let mut rng = LabRng::seed_from_u64(5);
    let extra = Head::new(HeadKind::Linear, vec![2, 3], 6, &mut rng).unwrap();
    model.heads.push(extra);
    model.freeze_head(0);
    let frozen = model.heads[0].clone();
    let x = Array2::from_shape_simple_fn((16, 4), || rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..16).map(|i| i % 4).collect();
    let mut opt = spurcl_core::nn::Sgd::new(0.1, 0.9);
    for _ in 0..20 {
        let fwd = model.forward_with_mask(x.view(), None).unwrap();
        let (_, d) = spurcl_core::nn::objective::mean_ce(&model, &fwd.logits, &labels, None).unwrap();
        let g = model.backward(&fwd, &d, None).unwrap();
        opt.step(&mut model, &g);
    }
    let still = model.heads[0] == frozen;
    verdict(
        10,
        "freezing guarantee",
        intact == reports.len() && still,
        format!("{intact}/{} protocol runs with bit-identical frozen heads; trained-model check {still}", reports.len()),
    );
}

#[test]
fn c11_determinism() {
    let sc = || build_synth_scenario(&SynthScenarioSpec::new(0.5, 3, 8)).unwrap();
    let cfg = TrainerConfig { seed: 8, method: Method::IbIrm, epochs_per_task: 4, ..Default::default() };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let csvs: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| {
            let options = RunOptions { run_id: "ib_irm_s8".into(), per_epoch: true, pretrained_trunk: None };
            let record = run_scenario(&sc(), &cfg, &options).unwrap();
            let files = runlog::write_run(d.path(), &record).unwrap();
            std::fs::read(files.csv).unwrap()
        })
        .collect();
    verdict(
        11,
        "determinism",
        csvs[0] == csvs[1] && !csvs[0].is_empty(),
        format!("two training runs wrote {}-byte run logs, identical: {}", csvs[0].len(), csvs[0] == csvs[1]),
    );
}

#[test]
fn c12_interference_diagnostic() {
    let mut rng = LabRng::seed_from_u64(12);
    let model = ModelParams::new(&Architecture::single_head(6, vec![16], HeadKind::Linear, 2), 3).unwrap();
    let xs: Vec<Vec<f32>> = (0..200).map(|_| (0..6).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect();
    let task = |flip: bool| -> Vec<Sample> {
        xs.iter()
            .map(|x| Sample {
                x: x.clone().into(),
                y: usize::from((x[0] > 0.0) != flip),
                mode_id: 0,
                spurious_present: false,
                spurious_id: None,
                task_id: usize::from(flip),
            })
            .collect()
    };
    let opposed = cross_task_interference(&model, &task(false), &task(true)).unwrap();
    let duplicated = cross_task_interference(&model, &task(false), &task(false)).unwrap();
    verdict(
        12,
        "interference diagnostic",
        opposed < 0.0 && duplicated > 0.0,
        format!("opposed tasks {opposed:.4e}, duplicated tasks {duplicated:.4e}"),
    );
}
