//! SPFV: `"SPFV"`, version, n, dim (u32 each), then `n·dim` f32 features,
//! `n` u16 labels, `n` u16 task ids and `n` u8 spurious flags.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scenario::{Sample, Scenario, TaskData};

pub const MAGIC: &[u8; 4] = b"SPFV";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

/// Expected file length for `n` samples of width `dim`.
pub fn spfv_len(n: usize, dim: usize) -> usize {
    HEADER_LEN + 4 * n * dim + 5 * n
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit in u32")))
}

fn to_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit in u16")))
}

pub fn write_spfv(samples: &[Sample]) -> Result<Vec<u8>> {
    let n = samples.len();
    let dim = samples.first().map_or(0, Sample::dim);
    let mut out = Vec::with_capacity(spfv_len(n, dim));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(n, "sample count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(dim, "dimension")?.to_le_bytes());
    for s in samples {
        if s.dim() != dim {
            return Err(Error::shape(format!("sample of width {} in a file of width {dim}", s.dim())));
        }
        s.x.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    for s in samples {
        out.extend_from_slice(&to_u16(s.y, "label")?.to_le_bytes());
    }
    for s in samples {
        out.extend_from_slice(&to_u16(s.task_id, "task id")?.to_le_bytes());
    }
    out.extend(samples.iter().map(|s| u8::from(s.spurious_present)));
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses an SPFV file. Mode and spurious-feature ids are not stored and come
/// back as `0` and `None`.
pub fn read_spfv(bytes: &[u8]) -> Result<Vec<Sample>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("SPFV header needs {HEADER_LEN} bytes, got {}", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad SPFV magic".into()));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported SPFV version {version}")));
    }
    let n = u32_at(bytes, 8) as usize;
    let dim = u32_at(bytes, 12) as usize;
    let expected = n
        .checked_mul(dim)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|b| b.checked_add(HEADER_LEN + 5 * n))
        .ok_or_else(|| Error::Format("SPFV dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "SPFV length mismatch: header implies {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let feats = &bytes[HEADER_LEN..HEADER_LEN + 4 * n * dim];
    let labels = &bytes[HEADER_LEN + 4 * n * dim..][..2 * n];
    let tasks = &bytes[HEADER_LEN + 4 * n * dim + 2 * n..][..2 * n];
    let flags = &bytes[HEADER_LEN + 4 * n * dim + 4 * n..];
    (0..n)
        .map(|i| {
            let x: Arc<[f32]> = feats[4 * i * dim..4 * (i + 1) * dim]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let spurious_present = match flags[i] {
                0 => false,
                1 => true,
                f => return Err(Error::CorruptRecord { index: i, reason: format!("spurious flag {f}") }),
            };
            Ok(Sample {
                x,
                y: usize::from(u16::from_le_bytes([labels[2 * i], labels[2 * i + 1]])),
                mode_id: 0,
                spurious_present,
                spurious_id: None,
                task_id: usize::from(u16::from_le_bytes([tasks[2 * i], tasks[2 * i + 1]])),
            })
        })
        .collect()
}

pub fn write_spfv_file(path: &Path, samples: &[Sample]) -> Result<()> {
    super::write_atomic(path, &write_spfv(samples)?)
}

pub fn read_spfv_file(path: &Path) -> Result<Vec<Sample>> {
    read_spfv(&std::fs::read(path)?)
}

/// Groups training samples into tasks by task id; each task's classes are the
/// labels it contains.
pub fn scenario_from_spfv(train: Vec<Sample>, test: Vec<Sample>) -> Result<Scenario> {
    let input_dim = train.first().map_or(0, Sample::dim);
    if train.iter().chain(&test).any(|s| s.dim() != input_dim) {
        return Err(Error::shape("train and test features differ in width"));
    }
    let mut by_task: BTreeMap<usize, Vec<Sample>> = BTreeMap::new();
    for s in train {
        by_task.entry(s.task_id).or_default().push(s);
    }
    let n_classes = by_task.values().flatten().chain(&test).map(|s| s.y + 1).max().unwrap_or(0);
    let tasks = by_task
        .into_values()
        .enumerate()
        .map(|(t, samples)| {
            let mut classes: Vec<usize> = samples.iter().map(|s| s.y).collect();
            classes.sort_unstable();
            classes.dedup();
            TaskData { task_id: t, classes, train: samples, eval_spurious: Vec::new() }
        })
        .collect();
    Ok(Scenario { tasks, clean_test: test, n_classes, input_dim, image_shape: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(x: Vec<f32>, y: usize, task_id: usize, spurious: bool) -> Sample {
        Sample { x: x.into(), y, mode_id: 0, spurious_present: spurious, spurious_id: None, task_id }
    }

    #[test]
    fn empty_file_is_header_only() {
        let bytes = write_spfv(&[]).unwrap();
        assert_eq!(bytes.len(), 16);
        assert!(read_spfv(&bytes).unwrap().is_empty());
    }

    #[test]
    fn golden_bytes() {
        let bytes = write_spfv(&[sample(vec![1.0, -2.0], 1, 3, true)]).unwrap();
        let expected: Vec<u8> = [
            &b"SPFV"[..],
            &[1, 0, 0, 0],
            &[1, 0, 0, 0],
            &[2, 0, 0, 0],
            &[0x00, 0x00, 0x80, 0x3f],
            &[0x00, 0x00, 0x00, 0xc0],
            &[1, 0],
            &[3, 0],
            &[1],
        ]
        .concat();
        assert_eq!(bytes, expected);
        assert_eq!(bytes.len(), spfv_len(1, 2));
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = write_spfv(&[sample(vec![0.5; 3], 0, 0, false), sample(vec![1.5; 3], 1, 0, true)]).unwrap();
        assert!(matches!(read_spfv(&bytes[..bytes.len() - 1]), Err(Error::Format(m)) if m.contains("length")));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_spfv(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(read_spfv(&bad).is_err());
        let mut bad = bytes;
        let last = bad.len() - 1;
        bad[last] = 7;
        assert!(matches!(read_spfv(&bad), Err(Error::CorruptRecord { index: 1, .. })));
    }

    #[test]
    fn groups_by_task() {
        let train = vec![sample(vec![0.0], 0, 0, false), sample(vec![0.0], 3, 1, false), sample(vec![0.0], 2, 1, false)];
        let sc = scenario_from_spfv(train, vec![sample(vec![0.0], 1, 0, false)]).unwrap();
        assert_eq!(sc.n_tasks(), 2);
        assert_eq!(sc.tasks[1].classes, vec![2, 3]);
        assert_eq!(sc.n_classes, 4);
    }
}
