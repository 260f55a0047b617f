//! Binary checkpoints: `AGNN1`, a little-endian u64 parameter count, then
//! the parameters as little-endian f64. A JSON sidecar next to the file
//! records the network config and tensor shapes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{NetConfig, ParamSlot, PolicyValueNet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"AGNN1";

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    config: NetConfig,
    param_count: usize,
    tensors: Vec<ParamSlot>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the checkpoint and its sidecar; returns both paths.
pub fn save_checkpoint(net: &PolicyValueNet, path: &Path) -> Result<(PathBuf, PathBuf)> {
    let mut bytes = Vec::with_capacity(13 + 8 * net.param_count());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
    for p in net.params() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let meta = Sidecar {
        format: "AGNN1".into(),
        config: *net.config(),
        param_count: net.param_count(),
        tensors: net.slots().to_vec(),
    };
    fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&side, e))?;
    Ok((path.to_path_buf(), side))
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyValueNet> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(Error::MissingInput(side));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let meta: Sidecar =
        serde_json::from_str(&fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?)?;
    if bytes.len() < 13 || &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not an AGNN1 checkpoint", path.display())));
    }
    let count = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")) as usize;
    if count != meta.param_count || bytes.len() != 13 + 8 * count {
        return Err(Error::Checkpoint(format!(
            "{}: header says {count} parameters, sidecar {}, file holds {} bytes",
            path.display(),
            meta.param_count,
            bytes.len()
        )));
    }
    let params = bytes[13..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let net = PolicyValueNet::from_parts(meta.config, params)?;
    if net.slots() != meta.tensors.as_slice() {
        return Err(Error::Checkpoint("sidecar tensor layout does not match its config".into()));
    }
    Ok(net)
}
