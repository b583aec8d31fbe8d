//! Checkpoint serialization: policy and value parameters as flat arrays of
//! 64-bit reals behind a small binary header (magic, architecture id, dims,
//! seed). Roundtrips are bit-exact.

use super::{PolicyHead, PolicyParams, PolicySpec, ValueParams, HIDDEN_DIM};
use crate::error::{EvoError, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"EVOCKPT1";

const KIND_CATEGORICAL: u32 = 0;
const KIND_GAUSSIAN: u32 = 1;
const KIND_VALUE: u32 = 2;

/// A full training checkpoint: the policy, both value functions, and the
/// environment metadata needed to rebuild them for evaluation.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub env_id: String,
    pub cost_limit: f64,
    pub policy: PolicyParams,
    pub reward_value: ValueParams,
    pub cost_value: ValueParams,
}

fn write_f64s(w: &mut impl Write, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn write_policy(w: &mut impl Write, p: &PolicyParams) -> Result<()> {
    match &p.spec.head {
        PolicyHead::Categorical { n_actions } => {
            write_u32(w, KIND_CATEGORICAL)?;
            write_u32(w, p.spec.obs_dim as u32)?;
            write_u32(w, HIDDEN_DIM as u32)?;
            write_u32(w, *n_actions as u32)?;
            write_u64(w, p.seed)?;
        }
        PolicyHead::Gaussian { dim, low, high } => {
            write_u32(w, KIND_GAUSSIAN)?;
            write_u32(w, p.spec.obs_dim as u32)?;
            write_u32(w, HIDDEN_DIM as u32)?;
            write_u32(w, *dim as u32)?;
            write_u64(w, p.seed)?;
            write_f64s(w, low)?;
            write_f64s(w, high)?;
        }
    }
    write_u64(w, p.flat.len() as u64)?;
    write_f64s(w, &p.flat)
}

fn read_policy(r: &mut impl Read) -> Result<PolicyParams> {
    let kind = read_u32(r)?;
    let obs_dim = read_u32(r)? as usize;
    let hidden = read_u32(r)? as usize;
    if hidden != HIDDEN_DIM {
        return Err(EvoError::InvalidInput(format!("unsupported hidden width {hidden}")));
    }
    let out = read_u32(r)? as usize;
    let seed = read_u64(r)?;
    let head = match kind {
        KIND_CATEGORICAL => PolicyHead::Categorical { n_actions: out },
        KIND_GAUSSIAN => {
            let low = read_f64s(r, out)?;
            let high = read_f64s(r, out)?;
            PolicyHead::Gaussian { dim: out, low, high }
        }
        other => return Err(EvoError::InvalidInput(format!("unknown policy kind {other}"))),
    };
    let spec = PolicySpec { obs_dim, head };
    let n = read_u64(r)? as usize;
    if n != spec.param_len() {
        return Err(EvoError::InvalidInput(format!(
            "parameter count {n} does not match architecture ({})",
            spec.param_len()
        )));
    }
    let flat = read_f64s(r, n)?;
    Ok(PolicyParams { spec, flat, seed })
}

fn write_value(w: &mut impl Write, v: &ValueParams) -> Result<()> {
    write_u32(w, KIND_VALUE)?;
    write_u32(w, v.obs_dim as u32)?;
    write_u32(w, HIDDEN_DIM as u32)?;
    write_u32(w, 1)?;
    write_u64(w, v.seed)?;
    write_u64(w, v.flat.len() as u64)?;
    write_f64s(w, &v.flat)
}

fn read_value(r: &mut impl Read) -> Result<ValueParams> {
    let kind = read_u32(r)?;
    if kind != KIND_VALUE {
        return Err(EvoError::InvalidInput(format!("expected value section, got kind {kind}")));
    }
    let obs_dim = read_u32(r)? as usize;
    let _hidden = read_u32(r)?;
    let _out = read_u32(r)?;
    let seed = read_u64(r)?;
    let n = read_u64(r)? as usize;
    let flat = read_f64s(r, n)?;
    Ok(ValueParams { obs_dim, flat, seed })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, ckpt.env_id.len() as u32)?;
    w.write_all(ckpt.env_id.as_bytes())?;
    write_f64s(&mut w, &[ckpt.cost_limit])?;
    write_policy(&mut w, &ckpt.policy)?;
    write_value(&mut w, &ckpt.reward_value)?;
    write_value(&mut w, &ckpt.cost_value)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(EvoError::InvalidInput("not a checkpoint file".into()));
    }
    let id_len = read_u32(&mut r)? as usize;
    let mut id_bytes = vec![0u8; id_len];
    r.read_exact(&mut id_bytes)?;
    let env_id = String::from_utf8(id_bytes)
        .map_err(|_| EvoError::InvalidInput("bad env id encoding".into()))?;
    let cost_limit = read_f64s(&mut r, 1)?[0];
    let policy = read_policy(&mut r)?;
    let reward_value = read_value(&mut r)?;
    let cost_value = read_value(&mut r)?;
    Ok(Checkpoint { env_id, cost_limit, policy, reward_value, cost_value })
}
