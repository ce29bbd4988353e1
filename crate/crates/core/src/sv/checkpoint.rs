//! Binary state checkpoints.
//!
//! Layout (little-endian): magic `TSVC`, `u32` site count, `u32` convention
//! tag, `f64` time, then `2^N` pairs of `f32` (re, im).

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64 as C64;

use super::StateVector;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TSVC";
/// Bit `i` is site `i`; set bit is the Rydberg state.
pub const CONVENTION_SITE_BIT_RYDBERG_ONE: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub time: f64,
    pub convention: u32,
    pub state: StateVector,
}

pub fn write_checkpoint(path: &Path, psi: &StateVector, time: f64) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + 8 * psi.dim());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(psi.n() as u32).to_le_bytes());
    buf.extend_from_slice(&CONVENTION_SITE_BIT_RYDBERG_ONE.to_le_bytes());
    buf.extend_from_slice(&time.to_le_bytes());
    for a in psi.amplitudes() {
        buf.extend_from_slice(&(a.re as f32).to_le_bytes());
        buf.extend_from_slice(&(a.im as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    if raw.len() < 20 || &raw[..4] != MAGIC {
        return Err(Error::Schema("not a state checkpoint".into()));
    }
    let n = u32::from_le_bytes(raw[4..8].try_into().unwrap()) as usize;
    let convention = u32::from_le_bytes(raw[8..12].try_into().unwrap());
    let time = f64::from_le_bytes(raw[12..20].try_into().unwrap());
    if n > 40 || raw.len() != 20 + 8 * (1usize << n) {
        return Err(Error::Schema(format!("checkpoint length does not match N = {n}")));
    }
    let amps = raw[20..]
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[..4].try_into().unwrap());
            let im = f32::from_le_bytes(c[4..].try_into().unwrap());
            C64::new(re as f64, im as f64)
        })
        .collect();
    Ok(Checkpoint { time, convention, state: StateVector::from_amplitudes(n, amps) })
}
