//! Binary snapshot stream.
//!
//! Header (little-endian): magic `TSNP`, `u32` N, `u32` L, `u64` seed,
//! `f64` beta, 32-byte SHA-256 parameter hash. Records follow until the
//! end of the stream; each is `ceil(N/8)` bytes of occupation bits (site
//! `i` is bit `i % 8` of byte `i / 8`, set = Rydberg) followed by the `u64`
//! sweep index.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SseConfig;
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::model::DeviceParams;

const MAGIC: &[u8; 4] = b"TSNP";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub n: u32,
    pub l: u32,
    pub seed: u64,
    pub beta: f64,
    pub params_hash: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub bits: Vec<u8>,
    pub sweep: u64,
}

impl Snapshot {
    pub fn from_occupations(occ: &[u8], sweep: u64) -> Self {
        let mut bits = vec![0u8; occ.len().div_ceil(8)];
        for (i, &o) in occ.iter().enumerate() {
            if o != 0 {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        Snapshot { bits, sweep }
    }

    pub fn rydberg(&self, i: usize) -> bool {
        (self.bits[i / 8] >> (i % 8)) & 1 == 1
    }

    pub fn occupations(&self, n: usize) -> Vec<bool> {
        (0..n).map(|i| self.rydberg(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub header: SnapshotHeader,
    pub records: Vec<Snapshot>,
    /// Sweeps between consecutive records.
    pub spacing: u64,
}

pub(crate) fn params_hash(lat: &Lattice, dev: &DeviceParams, cfg: &SseConfig) -> [u8; 32] {
    let v = serde_json::json!({
        "lattice": lat.to_json(),
        "c6": dev.c6,
        "r1": dev.r1,
        "omega": dev.omega,
        "delta": dev.delta,
        "config": cfg,
    });
    Sha256::digest(v.to_string().as_bytes()).into()
}

pub fn write_snapshots<W: Write>(mut w: W, set: &SnapshotSet) -> Result<()> {
    let h = &set.header;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&h.n.to_le_bytes());
    buf.extend_from_slice(&h.l.to_le_bytes());
    buf.extend_from_slice(&h.seed.to_le_bytes());
    buf.extend_from_slice(&h.beta.to_le_bytes());
    buf.extend_from_slice(&h.params_hash);
    for r in &set.records {
        buf.extend_from_slice(&r.bits);
        buf.extend_from_slice(&r.sweep.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_snapshots<R: Read>(mut r: R) -> Result<(SnapshotHeader, Vec<Snapshot>)> {
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    let bad = || Error::Schema("malformed snapshot stream".into());
    if raw.len() < 60 || &raw[..4] != MAGIC {
        return Err(bad());
    }
    let u32_at = |k: usize| u32::from_le_bytes(raw[k..k + 4].try_into().unwrap());
    let u64_at = |k: usize| u64::from_le_bytes(raw[k..k + 8].try_into().unwrap());
    let n = u32_at(4);
    let header = SnapshotHeader {
        n,
        l: u32_at(8),
        seed: u64_at(12),
        beta: f64::from_le_bytes(raw[20..28].try_into().unwrap()),
        params_hash: raw[28..60].try_into().unwrap(),
    };
    let width = (n as usize).div_ceil(8);
    let rec = width + 8;
    if (raw.len() - 60) % rec != 0 {
        return Err(bad());
    }
    let count = (raw.len() - 60) / rec;
    let records = (0..count)
        .map(|k| {
            let at = 60 + k * rec;
            Snapshot { bits: raw[at..at + width].to_vec(), sweep: u64_at(at + width) }
        })
        .collect();
    Ok((header, records))
}
