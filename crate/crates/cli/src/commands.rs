use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use spurcl_core::error::{Error, Result};
use spurcl_core::eval::{local_spurious_protocol, mean_gaps, random_projection_trunk, GapReport, ProtocolConfig};
use spurcl_core::features::{class_correlations, classify_feature, FeatureContext, FeaturePredicate};
use spurcl_core::io::manifest::{write_manifest, Manifest};
use spurcl_core::io::spfv::{read_spfv_file, scenario_from_spfv, write_spfv_file};
use spurcl_core::io::{checkpoint, runlog, write_atomic};
use spurcl_core::scenario::{spurious_feature_id, Scenario, ScenarioSpec};
use spurcl_core::train::{run_scenario, RunOptions};

use crate::config::RunConfig;
use crate::{svg, Ui};

const MAX_WORKERS: usize = 8;

fn pool() -> Result<rayon::ThreadPool> {
    let n = std::thread::available_parallelism().map_or(1, usize::from).min(MAX_WORKERS);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid(e.to_string()))?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| Error::invalid(e.to_string()))?)
}

fn build(cfg: &RunConfig, spec: &ScenarioSpec) -> Result<Scenario> {
    spec.build(cfg.data_base().as_deref())
}

pub fn generate(cfg: &RunConfig, ui: Ui) -> Result<()> {
    let base = cfg.scenario_spec()?;
    let dir = cfg.output_dir.join("scenarios");
    pool()?.install(|| {
        cfg.seeds.par_iter().try_for_each(|&seed| {
            let spec = base.with_seed(seed);
            let scenario = build(cfg, &spec)?;
            let out = dir.join(format!("seed{seed}"));
            write_atomic(&out.join("manifest.json"), write_manifest(&Manifest::new(spec))?.as_bytes())?;
            for t in &scenario.tasks {
                write_spfv_file(&out.join(format!("task{}_train.spfv", t.task_id)), &t.train)?;
                write_spfv_file(&out.join(format!("task{}_eval.spfv", t.task_id)), &t.eval_spurious)?;
            }
            write_spfv_file(&out.join("clean_test.spfv"), &scenario.clean_test)?;
            ui.info(format!("seed {seed}: {} tasks written to {}", scenario.n_tasks(), out.display()));
            Ok(())
        })
    })
}

pub fn train(cfg: &RunConfig, ui: Ui) -> Result<()> {
    let base = cfg.scenario_spec()?;
    let cells = cfg.cells(base.correlation_p());
    let jobs: Vec<(u64, usize)> = cfg.seeds.iter().flat_map(|&s| (0..cells.len()).map(move |c| (s, c))).collect();
    ui.info(format!("{} grid cells x {} seeds = {} runs", cells.len(), cfg.seeds.len(), jobs.len()));
    let runs_dir = cfg.output_dir.join("runs");
    let pretrained = cfg.trainer.pretrained_trunk.as_deref().map(checkpoint::load).transpose()?.map(|m| m.trunk);

    // Scenarios are shared by all cells with the same seed and correlation.
    let mut keys: Vec<(u64, Option<u64>)> = Vec::new();
    for &(seed, c) in &jobs {
        let key = (seed, cells[c].correlation_p.map(f64::to_bits));
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let pool = pool()?;
    let scenarios: BTreeMap<(u64, Option<u64>), Arc<Scenario>> = pool.install(|| {
        keys.par_iter()
            .map(|&(seed, p)| {
                let mut spec = base.with_seed(seed);
                if let Some(bits) = p {
                    spec = spec.with_correlation(f64::from_bits(bits));
                }
                Ok(((seed, p), Arc::new(build(cfg, &spec)?)))
            })
            .collect::<Result<_>>()
    })?;

    pool.install(|| {
        jobs.par_iter().try_for_each(|&(seed, c)| {
            let cell = &cells[c];
            let mut spec = base.with_seed(seed);
            if let Some(p) = cell.correlation_p {
                spec = spec.with_correlation(p);
            }
            let scenario = &scenarios[&(seed, cell.correlation_p.map(f64::to_bits))];
            let trainer = cell.apply(&cfg.trainer, seed);
            let options = RunOptions {
                run_id: cell.run_id(seed),
                per_epoch: cfg.eval.per_epoch,
                pretrained_trunk: pretrained.clone(),
            };
            let mut record = run_scenario(scenario, &trainer, &options)?;
            record.config = serde_json::json!({ "scenario": spec, "trainer": trainer });
            runlog::write_run(&runs_dir, &record)?;
            ui.info(format!("{}: omega {:.4}", record.run_id, record.omega()?));
            Ok(())
        })
    })
}

pub fn localspur(cfg: &RunConfig, ui: Ui) -> Result<()> {
    let dir = cfg.output_dir.join("localspur");
    let fixed_trunk = cfg.eval.trunk.as_deref().map(checkpoint::load).transpose()?.map(|m| m.trunk);
    let from_features = match &cfg.eval.features {
        Some(f) => Some(Arc::new(scenario_from_spfv(read_spfv_file(&f.train)?, read_spfv_file(&f.test)?)?)),
        None => None,
    };
    let base = match &from_features {
        Some(_) => None,
        None => {
            let spec = cfg.scenario_spec()?;
            if !matches!(spec, ScenarioSpec::ClassIncremental(_)) {
                return Err(Error::config("scenario", "localspur needs a class_incremental scenario or eval.features"));
            }
            Some(spec)
        }
    };
    let reports: Vec<GapReport> = pool()?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let scenario = match (&from_features, &base) {
                    (Some(s), _) => Arc::clone(s),
                    (None, Some(spec)) => Arc::new(build(cfg, &spec.with_seed(seed))?),
                    (None, None) => unreachable!("checked above"),
                };
                let pc = ProtocolConfig { seed, ..cfg.eval.protocol.clone() };
                let trunk = match &fixed_trunk {
                    Some(t) => t.clone(),
                    None => random_projection_trunk(scenario.input_dim, pc.projection_width, seed),
                };
                let report = local_spurious_protocol(&scenario, &trunk, &pc)?;
                write_atomic(&dir.join(format!("gap_s{seed}.json")), &to_json(&report)?)?;
                Ok(report)
            })
            .collect::<Result<_>>()
    })?;
    let rows: Vec<_> = reports.iter().flat_map(GapReport::rows).collect();
    write_csv(&dir.join("gaps.csv"), &rows)?;
    write_gap_chart(&dir, &reports)?;
    for (kind, gap) in mean_gaps(&reports) {
        ui.info(format!("{kind:?}: mean gap {gap:.4}"));
    }
    Ok(())
}

/// Bar chart of mean local and global accuracy per head kind.
pub fn write_gap_chart(dir: &Path, reports: &[GapReport]) -> Result<()> {
    let Some(first) = reports.first() else {
        return Ok(());
    };
    let kinds: Vec<_> = first.heads.iter().map(|h| h.kind).collect();
    let mean = |f: &dyn Fn(&spurcl_core::eval::HeadGap) -> f64| -> Vec<f64> {
        kinds
            .iter()
            .map(|&k| {
                let v: Vec<f64> = reports.iter().filter_map(|r| r.head(k)).map(f).collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            })
            .collect()
    };
    let groups: Vec<String> = kinds.iter().map(|k| format!("{k:?}")).collect();
    let chart = svg::bar_chart(
        "Multi-head (local) vs single-head (global) accuracy",
        "accuracy",
        &groups,
        &[("local".into(), mean(&|h| h.a_local)), ("global".into(), mean(&|h| h.a_global))],
    );
    write_atomic(&dir.join("gap_bars.svg"), chart.as_bytes())
}

#[derive(Serialize)]
struct FeatureRow {
    seed: u64,
    feature_id: u32,
    name: String,
    task: usize,
    class: usize,
    kind: String,
}

pub fn analyze(cfg: &RunConfig, ui: Ui) -> Result<()> {
    let base = cfg.scenario_spec()?;
    let dir = cfg.output_dir.join("features");
    let per_seed: Vec<Vec<FeatureRow>> = pool()?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let scenario = build(cfg, &base.with_seed(seed))?;
                let all = scenario.all_train();
                let mut reports = Vec::new();
                for task in &scenario.tasks {
                    let ctx = FeatureContext {
                        task_train: &task.train,
                        task_id: task.task_id,
                        scenario_train: &all,
                        clean_test: &scenario.clean_test,
                        tau: cfg.eval.tau,
                        task_only: false,
                    };
                    for &c in &task.classes {
                        let id = spurious_feature_id(task.task_id, c, scenario.n_classes);
                        if task.train.iter().any(|s| s.spurious_id == Some(id)) {
                            reports.push(classify_feature(&FeaturePredicate::injected(id), c, &ctx)?);
                        }
                    }
                    if task.task_id == 0 && scenario.image_shape.is_none() {
                        for d in 0..scenario.input_dim {
                            let pred = FeaturePredicate::threshold(1_000_000 + d as u32, d, 0.0);
                            let y = class_correlations(&task.train, &pred)?
                                .into_iter()
                                .max_by(|a, b| a.1.total_cmp(&b.1))
                                .map_or(task.classes[0], |(c, _)| c);
                            reports.push(classify_feature(&pred, y, &ctx)?);
                        }
                    }
                }
                write_atomic(&dir.join(format!("features_s{seed}.json")), &to_json(&reports)?)?;
                Ok(reports
                    .into_iter()
                    .map(|r| FeatureRow {
                        seed,
                        feature_id: r.feature_id,
                        name: r.name,
                        task: r.task,
                        class: r.class,
                        kind: format!("{:?}", r.kind),
                    })
                    .collect())
            })
            .collect::<Result<_>>()
    })?;
    let rows: Vec<FeatureRow> = per_seed.into_iter().flatten().collect();
    ui.info(format!("{} feature reports written to {}", rows.len(), dir.display()));
    write_csv(&dir.join("features.csv"), &rows)
}
