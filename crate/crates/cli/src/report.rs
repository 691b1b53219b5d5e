use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use spurcl_core::error::{Error, Result};
use spurcl_core::eval::{mean_std, GapReport, RunRecord};
use spurcl_core::io::{runlog, write_atomic};
use spurcl_core::scenario::ScenarioSpec;

use crate::svg::{self, Series};
use crate::Ui;

#[derive(Serialize)]
struct SummaryRow {
    run_id: String,
    method: String,
    correlation_p: Option<f64>,
    seed: u64,
    omega: f64,
    final_clean: f64,
}

#[derive(Serialize)]
struct OmegaRow {
    method: String,
    correlation_p: Option<f64>,
    n_seeds: usize,
    omega_mean: f64,
    omega_std: f64,
}

#[derive(Serialize)]
struct TraceRow {
    method: String,
    correlation_p: Option<f64>,
    task: usize,
    clean_mean: f64,
    clean_std: f64,
}

fn method_of(r: &RunRecord) -> String {
    r.config["trainer"]["method"].as_str().unwrap_or("unknown").to_owned()
}

fn correlation_of(r: &RunRecord) -> Option<f64> {
    serde_json::from_value::<ScenarioSpec>(r.config["scenario"].clone())
        .ok()
        .and_then(|s| s.correlation_p())
}

/// Cell label that ignores the seed: everything in the run id before `_s<seed>`.
fn cell_of(r: &RunRecord) -> String {
    r.run_id.rsplit_once("_s").map_or(r.run_id.clone(), |(cell, _)| cell.to_owned())
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

fn p_key(p: Option<f64>) -> i64 {
    p.map_or(-1, |p| (p * 1e6).round() as i64)
}

pub fn report(dir: &Path, ui: Ui) -> Result<()> {
    let runs_dir = if dir.join("runs").is_dir() { dir.join("runs") } else { dir.to_path_buf() };
    let runs = if runs_dir.is_dir() { runlog::find_runs(&runs_dir)? } else { Vec::new() };
    let gaps_dir = dir.join("localspur");
    let gap_reports: Vec<GapReport> = if gaps_dir.is_dir() {
        let mut paths: Vec<_> = std::fs::read_dir(&gaps_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("gap_s")) && p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        paths
            .iter()
            .map(|p| {
                serde_json::from_slice(&std::fs::read(p)?).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    if runs.is_empty() && gap_reports.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no runs found in {}", dir.display()),
        )));
    }

    if !runs.is_empty() {
        let mut summary = Vec::with_capacity(runs.len());
        for r in &runs {
            summary.push(SummaryRow {
                run_id: r.run_id.clone(),
                method: method_of(r),
                correlation_p: correlation_of(r),
                seed: r.seed,
                omega: r.omega()?,
                final_clean: r.clean_trace().last().copied().unwrap_or(f64::NAN),
            });
        }
        write_atomic(&dir.join("summary.csv"), &csv_bytes(&summary)?)?;

        // Seeds of one grid cell are pooled; cells differing only in p form one curve.
        let mut by_cell: BTreeMap<(String, i64), Vec<&RunRecord>> = BTreeMap::new();
        for r in &runs {
            by_cell.entry((cell_of(r), p_key(correlation_of(r)))).or_default().push(r);
        }
        let mut omega_rows = Vec::new();
        let mut trace_rows = Vec::new();
        let mut curves: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
        let mut traces: Vec<Series> = Vec::new();
        for ((cell, _), group) in &by_cell {
            let method = method_of(group[0]);
            let p = correlation_of(group[0]);
            let omegas: Vec<f64> = group.iter().map(|r| r.omega()).collect::<Result<_>>()?;
            let (m, s) = mean_std(&omegas);
            omega_rows.push(OmegaRow { method: method.clone(), correlation_p: p, n_seeds: group.len(), omega_mean: m, omega_std: s });
            let curve_name = cell.replacen(&format!("_p{}", p.map_or("na".into(), |p| p.to_string())), "", 1);
            if let Some(p) = p {
                curves.entry(curve_name).or_default().push((p, m, s));
            }
            let n_tasks = group.iter().map(|r| r.clean_trace().len()).min().unwrap_or(0);
            let mut points = Vec::with_capacity(n_tasks);
            for t in 0..n_tasks {
                let vals: Vec<f64> = group.iter().map(|r| r.clean_trace()[t]).collect();
                let (m, s) = mean_std(&vals);
                trace_rows.push(TraceRow { method: method.clone(), correlation_p: p, task: t, clean_mean: m, clean_std: s });
                points.push((t as f64, m, s));
            }
            traces.push(Series { name: cell.clone(), points });
        }
        write_atomic(&dir.join("omega_by_p.csv"), &csv_bytes(&omega_rows)?)?;
        write_atomic(&dir.join("traces.csv"), &csv_bytes(&trace_rows)?)?;
        let omega_series: Vec<Series> = curves
            .into_iter()
            .map(|(name, mut points)| {
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                Series { name, points }
            })
            .collect();
        let chart = svg::line_chart("Averaged accuracy vs correlation", "correlation p", "omega", &omega_series);
        write_atomic(&dir.join("omega_vs_p.svg"), chart.as_bytes())?;
        let chart = svg::line_chart("Clean test accuracy after each task", "task", "accuracy", &traces);
        write_atomic(&dir.join("traces.svg"), chart.as_bytes())?;
        ui.info(format!("aggregated {} runs in {} cells", runs.len(), by_cell.len()));
    }

    if !gap_reports.is_empty() {
        let rows: Vec<_> = gap_reports.iter().flat_map(GapReport::rows).collect();
        write_atomic(&dir.join("gaps.csv"), &csv_bytes(&rows)?)?;
        crate::commands::write_gap_chart(dir, &gap_reports)?;
        ui.info(format!("aggregated {} gap reports", gap_reports.len()));
    }
    Ok(())
}
