//! Run logs: one CSV row per metric entry, a JSON record with the config
//! snapshot, and a metadata sidecar that alone carries the wall-clock time.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::record::{MetricEntry, RunRecord};

pub const CSV_HEADER: [&str; 6] = ["run_id", "task_idx", "epoch", "split", "metric", "value"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow<'a> {
    run_id: &'a str,
    task_idx: usize,
    epoch: usize,
    split: String,
    metric: &'a str,
    value: f64,
}

pub fn record_to_csv(record: &RunRecord) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in &record.entries {
        w.serialize(CsvRow {
            run_id: &record.run_id,
            task_idx: e.task_idx,
            epoch: e.epoch,
            split: e.split.to_string(),
            metric: &e.metric,
            value: e.value,
        })
        .map_err(csv_err)?;
    }
    if record.entries.is_empty() {
        w.write_record(CSV_HEADER).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

/// Parses a run CSV into `(run_id, entries)`.
pub fn entries_from_csv(bytes: &[u8]) -> Result<(String, Vec<MetricEntry>)> {
    #[derive(Deserialize)]
    struct Owned {
        run_id: String,
        task_idx: usize,
        epoch: usize,
        split: String,
        metric: String,
        value: f64,
    }
    let mut r = csv::Reader::from_reader(bytes);
    let headers = r.headers().map_err(csv_err)?;
    if headers.iter().ne(CSV_HEADER) {
        return Err(Error::Format(format!("unexpected run log header {headers:?}")));
    }
    let mut run_id = String::new();
    let mut entries = Vec::new();
    for row in r.deserialize::<Owned>() {
        let row = row.map_err(csv_err)?;
        run_id = row.run_id;
        entries.push(MetricEntry {
            task_idx: row.task_idx,
            epoch: row.epoch,
            split: row.split.parse()?,
            metric: row.metric,
            value: row.value,
        });
    }
    Ok((run_id, entries))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("run log: {e}"))
}

/// Paths of the files written for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub meta: PathBuf,
}

impl RunFiles {
    pub fn new(dir: &Path, run_id: &str) -> Self {
        RunFiles {
            csv: dir.join(format!("{run_id}.csv")),
            json: dir.join(format!("{run_id}.run.json")),
            meta: dir.join(format!("{run_id}.meta.json")),
        }
    }
}

pub fn write_run(dir: &Path, record: &RunRecord) -> Result<RunFiles> {
    let files = RunFiles::new(dir, &record.run_id);
    super::write_atomic(&files.csv, &record_to_csv(record)?)?;
    let json = serde_json::to_vec_pretty(record).map_err(|e| Error::invalid(e.to_string()))?;
    super::write_atomic(&files.json, &json)?;
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let meta = serde_json::json!({ "run_id": record.run_id, "written_unix_secs": secs });
    super::write_atomic(&files.meta, meta.to_string().as_bytes())?;
    Ok(files)
}

pub fn read_run(path: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// All run records (`*.run.json`) directly inside `dir`, sorted by file name.
pub fn find_runs(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".run.json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_run(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::record::{metric, Split};

    fn record() -> RunRecord {
        let mut r = RunRecord::new("replay-s3", 3, serde_json::json!({"method": "replay"}));
        r.push(0, 0, Split::Train, metric::LOSS, 0.6931471805599453);
        r.push(0, 0, Split::EvalSpurious(0), metric::ACCURACY, 0.875);
        r.push(0, 0, Split::CleanTest, metric::ACCURACY, 0.5);
        r
    }

    #[test]
    fn csv_round_trip() {
        let bytes = record_to_csv(&record()).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("run_id,task_idx,epoch,split,metric,value\n"));
        assert!(text.contains("replay-s3,0,0,eval_spurious_0,accuracy,0.875\n"));
        let (id, entries) = entries_from_csv(&bytes).unwrap();
        assert_eq!(id, "replay-s3");
        assert_eq!(entries, record().entries);
    }

    #[test]
    fn files_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_run(dir.path(), &record()).unwrap();
        assert!(files.meta.exists());
        let back = find_runs(dir.path()).unwrap();
        assert_eq!(back, vec![record()]);
        let again = write_run(dir.path(), &record()).unwrap();
        assert_eq!(std::fs::read(&again.csv).unwrap(), record_to_csv(&record()).unwrap());
    }
}
