//! Parameter checkpoints: one JSON header line followed by the raw
//! little-endian `f64` parameter vector.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PolicyParams, Shape};
use crate::env::EnvKind;
use crate::error::{Error, Result};

const FORMAT: &str = "himac-params";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub env_kind: EnvKind,
    pub seed: u64,
    pub k_max: usize,
    pub shape: Shape,
    pub len: usize,
}

pub fn write_checkpoint(params: &PolicyParams, seed: u64, mut out: impl Write) -> Result<()> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: VERSION,
        env_kind: params.kind,
        seed,
        k_max: params.k_max,
        shape: params.shape,
        len: params.theta.len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for v in &params.theta {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint(input: impl Read) -> Result<(CheckpointHeader, PolicyParams)> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    if header.shape.num_params() != header.len {
        return Err(Error::Checkpoint(format!(
            "shape implies {} parameters, header says {}",
            header.shape.num_params(),
            header.len
        )));
    }
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != header.len * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} bytes of parameters, found {}",
            header.len * 8,
            bytes.len()
        )));
    }
    let theta = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let params = PolicyParams {
        kind: header.env_kind,
        shape: header.shape,
        k_max: header.k_max,
        theta,
    };
    Ok((header, params))
}

pub fn save_checkpoint(params: &PolicyParams, seed: u64, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(params, seed, std::io::BufWriter::new(file))
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, PolicyParams)> {
    read_checkpoint(std::fs::File::open(path)?)
}
