//! Checkpoint container: a versioned binary file holding the shape table,
//! the 64-bit parameter vector, the freeze flag, optimizer moments, feature
//! statistics, an optional config echo, and a SHA-256 content hash.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   b"MKWSCKPT"
//! version      u32       currently 1
//! header_len   u64
//! header       JSON      structure metadata (see [`Header`])
//! params       f64 * n   raw little-endian
//! adam_m       f64 * n
//! adam_v       f64 * n
//! stats_mean   f64 * 80
//! stats_std    f64 * 80
//! sha256       32 bytes  over every preceding byte
//! ```
//!
//! Floats never pass through text, so save/load round-trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{FeatureStats, NUM_MEL_BINS};
use crate::model::{AdamState, Architecture, ModelState, TensorSpec};

const MAGIC: &[u8; 8] = b"MKWSCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: Architecture,
    tensors: Vec<TensorSpec>,
    backbone_frozen: bool,
    adam_step: u64,
    num_params: u64,
    /// Free-form provenance echo (config, seed); not interpreted on load.
    config_echo: serde_json::Value,
}

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    buf.reserve(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f64s(bytes: &[u8], cursor: &mut usize, count: usize, what: &str) -> Result<Vec<f64>> {
    let need = count * 8;
    if bytes.len() < *cursor + need {
        return Err(Error::Checkpoint(format!(
            "truncated file while reading {what}"
        )));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let start = *cursor + i * 8;
        out.push(f64::from_le_bytes(
            bytes[start..start + 8].try_into().expect("8 bytes"),
        ));
    }
    *cursor += need;
    Ok(out)
}

/// Serialize a model state (plus an arbitrary JSON provenance echo).
pub fn save(state: &ModelState, path: impl AsRef<Path>, config_echo: serde_json::Value) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        arch: state.arch().clone(),
        tensors: state.tensors().to_vec(),
        backbone_frozen: state.backbone_frozen(),
        adam_step: state.adam().step,
        num_params: state.num_params() as u64,
        config_echo,
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    push_f64s(&mut buf, state.params());
    push_f64s(&mut buf, &state.adam().m);
    push_f64s(&mut buf, &state.adam().v);
    push_f64s(&mut buf, &state.feature_stats().mean);
    push_f64s(&mut buf, &state.feature_stats().std);
    let digest: [u8; 32] = Sha256::digest(&buf).into();
    buf.extend_from_slice(&digest);

    fs::write(path, &buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Load a checkpoint, verifying magic, version, lengths and content hash.
pub fn load(path: impl AsRef<Path>) -> Result<(ModelState, serde_json::Value)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() + 4 + 8 + 32 {
        return Err(Error::Checkpoint("file too small".into()));
    }
    let (body, stored_hash) = bytes.split_at(bytes.len() - 32);
    let digest: [u8; 32] = Sha256::digest(body).into();
    if digest != stored_hash {
        return Err(Error::Checkpoint("content hash mismatch".into()));
    }
    if &body[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    if body.len() < 20 + header_len {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[20..20 + header_len])?;
    let mut cursor = 20 + header_len;
    let n = header.num_params as usize;
    let params = read_f64s(body, &mut cursor, n, "parameters")?;
    let m = read_f64s(body, &mut cursor, n, "first moments")?;
    let v = read_f64s(body, &mut cursor, n, "second moments")?;
    let mean = read_f64s(body, &mut cursor, NUM_MEL_BINS, "feature means")?;
    let std = read_f64s(body, &mut cursor, NUM_MEL_BINS, "feature stddevs")?;
    if cursor != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after payload",
            body.len() - cursor
        )));
    }

    let stats = FeatureStats::new(mean, std)
        .map_err(|e| Error::Checkpoint(format!("invalid feature stats: {e}")))?;
    let state = ModelState::from_parts(
        header.arch,
        params,
        header.backbone_frozen,
        AdamState {
            m,
            v,
            step: header.adam_step,
        },
        stats,
    )?;
    // The shape table is rebuilt from the architecture; verify the stored
    // table matches so corrupt headers cannot misattribute ranges.
    if state.tensors() != header.tensors.as_slice() {
        return Err(Error::Checkpoint(
            "stored shape table disagrees with architecture".into(),
        ));
    }
    Ok((state, header.config_echo))
}
