//! Model checkpoints: `"SPCK"`, a u32 header length, a JSON header describing
//! shapes, then every tensor as little-endian f32 in header order.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dense, Head, HeadKind, ModelParams};

pub const MAGIC: &[u8; 4] = b"SPCK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadHeader {
    kind: HeadKind,
    classes: Vec<usize>,
    latent_dim: usize,
    frozen: bool,
    counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    seed: u64,
    dropout_rate: f64,
    trunk_frozen: bool,
    /// `(fan_in, fan_out)` per trunk layer.
    trunk: Vec<(usize, usize)>,
    heads: Vec<HeadHeader>,
}

fn push_f32(out: &mut Vec<u8>, values: impl Iterator<Item = f64>) {
    values.for_each(|v| out.extend_from_slice(&(v as f32).to_le_bytes()));
}

/// Serializes a model. Parameters are stored as f32.
pub fn to_bytes(model: &ModelParams) -> Result<Vec<u8>> {
    let header = Header {
        version: 1,
        seed: model.seed,
        dropout_rate: model.dropout_rate,
        trunk_frozen: model.trunk_frozen,
        trunk: model.trunk.iter().map(|l| (l.fan_in(), l.fan_out())).collect(),
        heads: model
            .heads
            .iter()
            .map(|h| HeadHeader {
                kind: h.kind,
                classes: h.classes.clone(),
                latent_dim: h.latent_dim(),
                frozen: h.frozen,
                counts: h.counts.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&u32::try_from(json.len()).map_err(|_| Error::invalid("header too large"))?.to_le_bytes());
    out.extend_from_slice(&json);
    for l in &model.trunk {
        push_f32(&mut out, l.weight.iter().copied());
        push_f32(&mut out, l.bias.iter().copied());
    }
    for h in &model.heads {
        push_f32(&mut out, h.weight.iter().copied());
        push_f32(&mut out, h.bias.iter().copied());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<Vec<f64>> {
        let end = self.at + 4 * n;
        let chunk = self
            .bytes
            .get(self.at..end)
            .ok_or_else(|| Error::Format("checkpoint payload is truncated".into()))?;
        self.at = end;
        Ok(chunk
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        Array2::from_shape_vec((rows, cols), self.take(rows * cols)?).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(8..8 + len)
        .ok_or_else(|| Error::Format("checkpoint header is truncated".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    if header.version != 1 {
        return Err(Error::Format(format!("unsupported checkpoint version {}", header.version)));
    }
    let mut r = Reader { bytes, at: 8 + len };
    let mut trunk = Vec::with_capacity(header.trunk.len());
    for &(fan_in, fan_out) in &header.trunk {
        let weight = r.matrix(fan_out, fan_in)?;
        let bias = Array1::from(r.take(fan_out)?);
        trunk.push(Dense { weight, bias });
    }
    let mut heads = Vec::with_capacity(header.heads.len());
    for hh in &header.heads {
        let n = hh.classes.len();
        let weight = r.matrix(n, hh.latent_dim)?;
        let bias = Array1::from(r.take(n)?);
        let mut head = Head::from_parts(hh.kind, hh.classes.clone(), weight, bias)?;
        if hh.counts.len() != n {
            return Err(Error::Format("checkpoint head counts disagree with its classes".into()));
        }
        head.counts = hh.counts.clone();
        head.frozen = hh.frozen;
        heads.push(head);
    }
    if r.at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint payload", bytes.len() - r.at)));
    }
    let mut model = ModelParams::from_parts(trunk, heads, header.dropout_rate, header.seed)?;
    model.trunk_frozen = header.trunk_frozen;
    Ok(model)
}

pub fn save(path: &Path, model: &ModelParams) -> Result<()> {
    super::write_atomic(path, &to_bytes(model)?)
}

pub fn load(path: &Path) -> Result<ModelParams> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;

    #[test]
    fn round_trip_at_f32_precision() {
        let arch = Architecture::single_head(5, vec![7, 3], HeadKind::WeightNorm, 4);
        let mut model = ModelParams::new(&arch, 12).unwrap();
        model.freeze_head(0);
        let bytes = to_bytes(&model).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.heads[0].frozen, true);
        assert_eq!(back.architecture(), model.architecture());
        for (a, b) in back.trunk[1].weight.iter().zip(model.trunk[1].weight.iter()) {
            assert_eq!(*a, f64::from(*b as f32));
        }
        assert_eq!(to_bytes(&back).unwrap(), bytes);
        assert!(from_bytes(&bytes[..bytes.len() - 2]).is_err());
        assert!(from_bytes(b"SPFV\0\0\0\0").is_err());
    }
}
