//! Binary checkpoint format.
//!
//! Layout (little-endian): magic `SLCK`, format version `u32`, the seven
//! architecture fields as `u32`, parameter count `u64`, then the parameters
//! as `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Architecture, PolicyError, PolicyParams};

const MAGIC: &[u8; 4] = b"SLCK";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &PolicyParams, mut w: W) -> Result<(), PolicyError> {
    let a = params.arch;
    let mut buf = Vec::with_capacity(48 + 8 * params.values.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for field in [
        a.vocab_size,
        a.question_slots,
        a.window,
        a.observation_slots,
        a.hidden,
        a.call_buckets,
        a.max_sequence,
    ] {
        buf.extend_from_slice(&field.to_le_bytes());
    }
    buf.extend_from_slice(&(params.values.len() as u64).to_le_bytes());
    for v in &params.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<PolicyParams, PolicyError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |m: &str| PolicyError::Checkpoint(m.to_string());
    if bytes.len() < 44 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if u32_at(4) != FORMAT_VERSION {
        return Err(bad("unsupported format version"));
    }
    let f: Vec<u32> = (0..7).map(|k| u32_at(8 + 4 * k)).collect();
    let arch = Architecture {
        vocab_size: f[0],
        question_slots: f[1],
        window: f[2],
        observation_slots: f[3],
        hidden: f[4],
        call_buckets: f[5],
        max_sequence: f[6],
    };
    arch.validate()?;
    let count = u64::from_le_bytes(bytes[36..44].try_into().expect("8 bytes")) as usize;
    if count != arch.param_count() || bytes.len() != 44 + 8 * count {
        return Err(bad("parameter count does not match architecture"));
    }
    let values = bytes[44..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(PolicyParams { arch, values })
}

pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<(), PolicyError> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams, PolicyError> {
    read_checkpoint(fs::File::open(path)?)
}
