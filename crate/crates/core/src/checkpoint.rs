//! Checkpoint persistence.
//!
//! Layout (`redlens-ckpt-v1`):
//!
//! ```text
//! redlens-ckpt-v1\n
//! spec <json>\n
//! meta <json>\n
//! tensors <count>\n
//! <name> <d0>x<d1>x...\n        (one line per tensor)
//! data\n
//! <little-endian f32 payload, tensors in table order>
//! <u32 little-endian CRC-32 of every preceding byte>
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CheckpointError, Error, Result};
use crate::layers::{DenseParams, KernelBank};
use crate::model::{LayerParams, LayerSpec, Network, NetworkSpec};

pub const FORMAT_VERSION: &str = "redlens-ckpt-v1";
const MAGIC_PREFIX: &str = "redlens-ckpt-";

/// How the checkpoint was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    /// Epoch (1-based) whose weights were kept; 0 means the initialization.
    pub best_epoch: usize,
    pub test_accuracy: f64,
    pub seed: u64,
    pub shuffle_seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub nonlinearity: String,
    pub pooling: String,
    pub param_counts: Vec<usize>,
}

impl TrainingMeta {
    pub fn untrained(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        Ok(TrainingMeta {
            epochs_run: 0,
            best_epoch: 0,
            test_accuracy: 0.0,
            seed,
            shuffle_seed: 0,
            learning_rate: 0.0,
            batch_size: 0,
            nonlinearity: "relu".into(),
            pooling: "max2x2".into(),
            param_counts: spec.param_counts()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn spec(&self) -> &NetworkSpec {
        &self.network.spec
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.network.validate()?;
    if !(0.0..=1.0).contains(&ckpt.meta.test_accuracy) {
        return Err(Error::InvalidArgument(format!(
            "checkpoint accuracy {} outside [0, 1]",
            ckpt.meta.test_accuracy
        )));
    }
    let table = ckpt.spec().tensor_table()?;
    let mut out = Vec::new();
    out.extend_from_slice(format!("{FORMAT_VERSION}\n").as_bytes());
    out.extend_from_slice(format!("spec {}\n", serde_json::to_string(ckpt.spec())?).as_bytes());
    out.extend_from_slice(format!("meta {}\n", serde_json::to_string(&ckpt.meta)?).as_bytes());
    out.extend_from_slice(format!("tensors {}\n", table.len()).as_bytes());
    for (name, dims) in &table {
        let dims: Vec<String> = dims.iter().map(ToString::to_string).collect();
        out.extend_from_slice(format!("{name} {}\n", dims.join("x")).as_bytes());
    }
    out.extend_from_slice(b"data\n");
    for p in &ckpt.network.params {
        let (w, b) = p.buffers();
        for v in w.iter().chain(b) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> Error {
    CheckpointError::CorruptFile(msg.into()).into()
}

fn next_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("header line is not terminated"))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| corrupt("header is not UTF-8"))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut pos = 0;
    let version = next_line(bytes, &mut pos)?;
    if !version.starts_with(MAGIC_PREFIX) {
        return Err(corrupt("not a redlens checkpoint"));
    }
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version.to_string(),
            expected: FORMAT_VERSION.to_string(),
        }
        .into());
    }
    if bytes.len() < pos + 4 {
        return Err(corrupt("file too short"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch"));
    }

    let spec_line = next_line(body, &mut pos)?;
    let spec: NetworkSpec = serde_json::from_str(
        spec_line
            .strip_prefix("spec ")
            .ok_or_else(|| corrupt("missing spec line"))?,
    )
    .map_err(|e| corrupt(format!("spec: {e}")))?;
    let meta_line = next_line(body, &mut pos)?;
    let meta: TrainingMeta = serde_json::from_str(
        meta_line
            .strip_prefix("meta ")
            .ok_or_else(|| corrupt("missing meta line"))?,
    )
    .map_err(|e| corrupt(format!("meta: {e}")))?;
    let count: usize = next_line(body, &mut pos)?
        .strip_prefix("tensors ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| corrupt("missing tensor count"))?;
    let mut stored_table = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line(body, &mut pos)?;
        let (name, dims) = line
            .split_once(' ')
            .ok_or_else(|| corrupt(format!("bad tensor line {line:?}")))?;
        let dims: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse().map_err(|_| corrupt(format!("bad dims in {line:?}"))))
            .collect::<Result<_>>()?;
        stored_table.push((name.to_string(), dims));
    }
    if next_line(body, &mut pos)? != "data" {
        return Err(corrupt("missing data marker"));
    }
    if !(0.0..=1.0).contains(&meta.test_accuracy) {
        return Err(corrupt(format!("accuracy {} outside [0, 1]", meta.test_accuracy)));
    }

    let expected = spec
        .tensor_table()
        .map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))?;
    if expected != stored_table {
        let diff = expected
            .iter()
            .zip(&stored_table)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("spec wants {} {:?}, file has {} {:?}", a.0, a.1, b.0, b.1))
            .unwrap_or_else(|| {
                format!("spec wants {} tensors, file has {}", expected.len(), stored_table.len())
            });
        return Err(CheckpointError::ShapeMismatch(diff).into());
    }
    let floats: usize = stored_table.iter().map(|(_, d)| d.iter().product::<usize>()).sum();
    let payload = &body[pos..];
    if payload.len() != floats * 4 {
        return Err(corrupt(format!(
            "payload holds {} bytes, table needs {}",
            payload.len(),
            floats * 4
        )));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut take = |n: usize| -> Vec<f32> { values.by_ref().take(n).collect() };

    let mut params = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        let wd = &stored_table[2 * i].1;
        let weights = take(wd.iter().product());
        let bias = take(stored_table[2 * i + 1].1[0]);
        params.push(match layer {
            LayerSpec::Conv { .. } => {
                LayerParams::Conv(KernelBank::new(wd[0], wd[1], wd[2], wd[3], weights, bias)?)
            }
            LayerSpec::Dense { .. } => {
                LayerParams::Dense(DenseParams::new(wd[0], wd[1], weights, bias)?)
            }
        });
    }
    Ok(Checkpoint {
        network: Network { spec, params },
        meta,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
