//! PINO model files.
//!
//! Layout, little-endian: magic `PINO`, version u32, metadata length u64,
//! metadata JSON, weight count u64, then the weights as raw f64 in the
//! order of [`OperatorParams::to_flat`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CoordScales, Mlp, MlpSpec, OperatorParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PINO";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    branch: MlpSpec,
    trunk: MlpSpec,
    q_embed: usize,
    input_dim_m: usize,
    coord_scales: CoordScales,
    #[serde(default)]
    provenance: serde_json::Value,
}

/// Bytes before the weight blob.
pub fn header_len(params: &OperatorParams) -> usize {
    4 + 4 + 8 + metadata_json(params).len() + 8
}

fn metadata_json(params: &OperatorParams) -> Vec<u8> {
    let meta = Metadata {
        branch: params.branch_i.spec(),
        trunk: params.trunk.spec(),
        q_embed: params.q_embed,
        input_dim_m: params.input_dim_m,
        coord_scales: params.coord_scales,
        provenance: params.provenance.clone(),
    };
    serde_json::to_vec(&meta).expect("metadata serializes")
}

pub fn serialize(params: &OperatorParams) -> Vec<u8> {
    let meta = metadata_json(params);
    let weights = params.to_flat();
    let mut out = Vec::with_capacity(24 + meta.len() + 8 * weights.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(weights.len() as u64).to_le_bytes());
    for w in weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Corrupt(format!("model payload truncated while reading {what}")))?;
    let out = &bytes[*pos..end];
    *pos = end;
    Ok(out)
}

pub fn deserialize(bytes: &[u8]) -> Result<OperatorParams> {
    let mut pos = 0;
    if take(bytes, &mut pos, 4, "magic")? != MAGIC {
        return Err(Error::Corrupt("bad PINO magic".into()));
    }
    let version = u32::from_le_bytes(take(bytes, &mut pos, 4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let meta_len = u64::from_le_bytes(take(bytes, &mut pos, 8, "metadata length")?.try_into().unwrap());
    let meta_len = usize::try_from(meta_len).map_err(|_| Error::Corrupt("metadata length overflow".into()))?;
    let meta: Metadata =
        serde_json::from_slice(take(bytes, &mut pos, meta_len, "metadata")?).map_err(|e| Error::Corrupt(format!("metadata: {e}")))?;
    meta.branch.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
    meta.trunk.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
    let n = u64::from_le_bytes(take(bytes, &mut pos, 8, "weight count")?.try_into().unwrap()) as usize;
    let mut params = OperatorParams {
        branch_i: Mlp::zeros(&meta.branch),
        branch_q: Mlp::zeros(&meta.branch),
        trunk: Mlp::zeros(&meta.trunk),
        q_embed: meta.q_embed,
        input_dim_m: meta.input_dim_m,
        coord_scales: meta.coord_scales,
        provenance: meta.provenance,
    };
    if n != params.n_weights() {
        return Err(Error::Corrupt(format!("{n} weights declared, architecture needs {}", params.n_weights())));
    }
    let blob = take(bytes, &mut pos, n.checked_mul(8).ok_or_else(|| Error::Corrupt("weight count overflow".into()))?, "weights")?;
    if pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - pos)));
    }
    let flat: Vec<f64> = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    params.assign_flat(&flat)?;
    params.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
    Ok(params)
}

pub fn save(path: &Path, params: &OperatorParams) -> Result<()> {
    std::fs::write(path, serialize(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<OperatorParams> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    deserialize(&std::fs::read(path)?)
}
