//! Binary block holding a cloud's primitives:
//! magic `FGSC`, version `u32`, count `u32`, then 14 little-endian `f32`
//! per primitive (position 3, log-scale 3, quaternion 4, opacity logit 1,
//! colour 3).

use super::{Gaussian, PARAMS_PER_GAUSSIAN};
use crate::scalar::Real;

pub const SEGMENT_MAGIC: &[u8; 4] = b"FGSC";
pub const SEGMENT_VERSION: u32 = 1;

pub fn encode_segment<T: Real>(gaussians: &[Gaussian<T>], out: &mut Vec<u8>) {
    out.extend_from_slice(SEGMENT_MAGIC);
    out.extend_from_slice(&SEGMENT_VERSION.to_le_bytes());
    out.extend_from_slice(&(gaussians.len() as u32).to_le_bytes());
    for g in gaussians {
        for v in g.to_array() {
            out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
    }
}

/// Parses a segment at the start of `bytes`; returns the primitives and the
/// number of bytes consumed.
pub fn decode_segment<T: Real>(bytes: &[u8]) -> Result<(Vec<Gaussian<T>>, usize), String> {
    if bytes.len() < 12 {
        return Err("truncated Gaussian segment header".into());
    }
    if &bytes[0..4] != SEGMENT_MAGIC {
        return Err("missing FGSC magic".into());
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != SEGMENT_VERSION {
        return Err(format!("unsupported Gaussian segment version {version}"));
    }
    let count = word(8) as usize;
    let len = count
        .checked_mul(PARAMS_PER_GAUSSIAN * 4)
        .and_then(|n| n.checked_add(12))
        .ok_or("Gaussian count overflows")?;
    if bytes.len() < len {
        return Err(format!("Gaussian segment declares {count} primitives but is truncated"));
    }
    let gaussians = bytes[12..len]
        .chunks_exact(PARAMS_PER_GAUSSIAN * 4)
        .map(|rec| {
            Gaussian::from_array(std::array::from_fn(|k| {
                T::lit(f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().expect("4 bytes")) as f64)
            }))
        })
        .collect();
    Ok((gaussians, len))
}
