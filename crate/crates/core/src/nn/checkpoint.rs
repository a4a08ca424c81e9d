use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::mlp::{NetParams, PolicySpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "resinsert-netparams";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub spec: PolicySpec,
    pub step: u64,
    pub param_count: usize,
}

/// Writes a one-line JSON header followed by the parameters as little-endian
/// `f64` bytes.
pub fn write_checkpoint<W: Write>(mut w: W, params: &NetParams, step: u64) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        spec: params.spec.clone(),
        step,
        param_count: params.values.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let mut blob = Vec::with_capacity(params.values.len() * 8);
    for v in &params.values {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&blob)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<(NetParams, u64)> {
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&line).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    if header.param_count != header.spec.param_count() {
        return Err(Error::Checkpoint("header param_count disagrees with spec".into()));
    }
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    if blob.len() != header.param_count * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} bytes of parameters, found {}",
            header.param_count * 8,
            blob.len()
        )));
    }
    let values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((NetParams::from_values(header.spec, values)?, header.step))
}
