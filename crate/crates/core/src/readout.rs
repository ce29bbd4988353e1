//! Simulated fluorescence readout, post-selection and the analytic
//! correction of the detection-error channel.
//!
//! Outcome `0` is a bright spot (atom in `g`, `Z = +1`), `1` a dark spot
//! (`r`, `Z = -1`) and `X` a missing atom. With flip probabilities `eps`
//! (`g` read dark) and `eps'` (`r` read bright) the observed spin obeys
//! `E[z~] = a z + b`, `a = 1 - eps - eps'`, `b = eps' - eps`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::BulkMask;
use crate::observables::{csv_err, MomentAccumulator, MomentTable, Source};
use crate::qmc::Snapshot;
use crate::sv::StateVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Bright,
    Dark,
    Defect,
}

impl Outcome {
    pub fn symbol(self) -> &'static str {
        match self {
            Outcome::Bright => "0",
            Outcome::Dark => "1",
            Outcome::Defect => "X",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "0" => Ok(Outcome::Bright),
            "1" => Ok(Outcome::Dark),
            "X" | "x" => Ok(Outcome::Defect),
            other => Err(Error::Schema(format!("bad shot symbol {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub shot: u64,
    pub bits: Vec<Outcome>,
}

impl ShotRecord {
    pub fn n_defects(&self) -> usize {
        self.bits.iter().filter(|&&b| b == Outcome::Defect).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub eps: f64,
    pub eps_prime: f64,
}

impl ErrorRates {
    pub const NONE: ErrorRates = ErrorRates { eps: 0.0, eps_prime: 0.0 };

    /// Rates reported for the device.
    pub fn device() -> Self {
        ErrorRates { eps: 0.01, eps_prime: 0.04 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.eps) || !ok(self.eps_prime) {
            return Err(Error::Params(format!("readout rates outside [0, 1]: {self:?}")));
        }
        let a = self.a();
        if a <= 0.0 {
            return Err(Error::DegenerateRates(a));
        }
        Ok(())
    }

    pub fn a(&self) -> f64 {
        1.0 - self.eps - self.eps_prime
    }

    pub fn b(&self) -> f64 {
        self.eps_prime - self.eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectModel {
    pub p_defect: f64,
    /// Largest tolerated fraction of missing atoms in a shot.
    pub reject_threshold: f64,
}

impl Default for DefectModel {
    fn default() -> Self {
        DefectModel { p_defect: 0.0, reject_threshold: 0.02 }
    }
}

impl DefectModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_defect) || !(0.0..=1.0).contains(&self.reject_threshold) {
            return Err(Error::Params(format!("defect probabilities outside [0, 1]: {self:?}")));
        }
        Ok(())
    }
}

/// What a batch of shots is drawn from.
#[derive(Debug, Clone, Copy)]
pub enum ShotSource<'a> {
    State(&'a StateVector),
    /// Shot `k` images record `k mod len`.
    Snapshots(&'a [Snapshot], usize),
}

/// Draws `n_shots` images. Shot `k` uses its own ChaCha stream, so the
/// result does not depend on the thread count.
pub fn measure(
    source: ShotSource<'_>,
    rates: &ErrorRates,
    defects: &DefectModel,
    n_shots: usize,
    seed: u64,
) -> Result<Vec<ShotRecord>> {
    rates.validate()?;
    defects.validate()?;
    let n = match source {
        ShotSource::State(psi) => psi.n(),
        ShotSource::Snapshots(recs, n) => {
            if recs.is_empty() {
                return Err(Error::EmptySample);
            }
            n
        }
    };
    let alias = match source {
        ShotSource::State(psi) => Some(
            WeightedAliasIndex::new(psi.probabilities())
                .map_err(|e| Error::Params(format!("state cannot be sampled: {e}")))?,
        ),
        ShotSource::Snapshots(..) => None,
    };
    let shots = (0..n_shots as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            let rydberg: Vec<bool> = match (&source, &alias) {
                (ShotSource::State(_), Some(a)) => {
                    let s = a.sample(&mut rng) as u64;
                    (0..n).map(|i| (s >> i) & 1 == 1).collect()
                }
                (ShotSource::Snapshots(recs, _), _) => recs[k as usize % recs.len()].occupations(n),
                _ => unreachable!(),
            };
            let bits = rydberg
                .into_iter()
                .map(|r| {
                    if rng.random::<f64>() < defects.p_defect {
                        return Outcome::Defect;
                    }
                    let u: f64 = rng.random();
                    match r {
                        false if u < rates.eps => Outcome::Dark,
                        false => Outcome::Bright,
                        true if u < rates.eps_prime => Outcome::Bright,
                        true => Outcome::Dark,
                    }
                })
                .collect();
            ShotRecord { shot: k, bits }
        })
        .collect();
    Ok(shots)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub reject_threshold: f64,
    /// Also require the one-site guard ring around the bulk to be filled.
    pub clean_guard: bool,
}

impl Default for Policy {
    fn default() -> Self {
        Policy { reject_threshold: DefectModel::default().reject_threshold, clean_guard: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Retention {
    pub total: usize,
    pub after_global: usize,
    pub retained: usize,
}

impl Retention {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.retained as f64 / self.total as f64
        }
    }
}

pub fn postselect(shots: &[ShotRecord], mask: &BulkMask, policy: &Policy) -> Result<(Vec<ShotRecord>, Retention)> {
    let watched: Vec<usize> = if policy.clean_guard {
        mask.bulk.iter().chain(&mask.guard).copied().collect()
    } else {
        mask.bulk.clone()
    };
    let global: Vec<&ShotRecord> = shots
        .iter()
        .filter(|s| s.bits.is_empty() || s.n_defects() as f64 / s.bits.len() as f64 <= policy.reject_threshold)
        .collect();
    let after_global = global.len();
    let kept: Vec<ShotRecord> = global
        .into_iter()
        .filter(|s| watched.iter().all(|&i| s.bits[i] != Outcome::Defect))
        .cloned()
        .collect();
    let stats = Retention { total: shots.len(), after_global, retained: kept.len() };
    if kept.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok((kept, stats))
}

/// Which pair-correction numerator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairFormula {
    /// Exact inverse of the independent-flip channel, `+b^2`.
    #[default]
    Derived,
    /// Numerator as printed in the original analysis, `-b^2`.
    Printed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedMoments {
    pub raw: MomentTable,
    pub corrected: MomentTable,
    /// Shots skipped because a bulk site was missing.
    pub skipped: usize,
}

/// Inverts the channel on a table of observed moments. The diagonal of the
/// pair table stays at one.
pub fn correct_table(raw: &MomentTable, rates: &ErrorRates, formula: PairFormula) -> Result<MomentTable> {
    rates.validate()?;
    let (a, b) = (rates.a(), rates.b());
    let k = raw.len();
    let m: Vec<f64> = raw.m.iter().map(|&x| (x - b) / a).collect();
    let sign = match formula {
        PairFormula::Derived => 1.0,
        PairFormula::Printed => -1.0,
    };
    let mut c = raw.c.clone();
    for x in 0..k {
        for y in 0..k {
            c[x * k + y] = if x == y {
                1.0
            } else {
                (raw.c(x, y) - b * (raw.m[x] + raw.m[y]) + sign * b * b) / (a * a)
            };
        }
    }
    Ok(MomentTable { m, c, m_stderr: raw.m_stderr / a, ..raw.clone() })
}

/// Observed moments over the bulk and their corrected counterparts.
pub fn correct_moments(
    shots: &[ShotRecord],
    rates: &ErrorRates,
    mask: &BulkMask,
    formula: PairFormula,
) -> Result<CorrectedMoments> {
    rates.validate()?;
    let mut acc = MomentAccumulator::new(&mask.bulk);
    let mut skipped = 0;
    for s in shots {
        if mask.bulk.iter().any(|&i| s.bits[i] == Outcome::Defect) {
            skipped += 1;
            continue;
        }
        acc.add(|i| s.bits[i] == Outcome::Dark);
    }
    if acc.count() == 0 {
        return Err(Error::EmptySample);
    }
    let raw = acc.finish(Source::Shots);
    let corrected = correct_table(&raw, rates, formula)?;
    Ok(CorrectedMoments { raw, corrected, skipped })
}

/// Sidecar describing a shot file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotMeta {
    pub n_sites: usize,
    pub protocol_hash: String,
    pub point: BTreeMap<String, f64>,
    pub rates: ErrorRates,
    pub defects: DefectModel,
    pub seed: u64,
}

/// Header `shot_id,s0,s1,...` with `0`, `1` or `X` per site.
pub fn write_shots_csv<W: Write>(w: W, shots: &[ShotRecord], n_sites: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["shot_id".to_string()];
    header.extend((0..n_sites).map(|i| format!("s{i}")));
    out.write_record(&header).map_err(csv_err)?;
    for s in shots {
        let mut row = vec![s.shot.to_string()];
        row.extend(s.bits.iter().map(|b| b.symbol().to_string()));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_shots_csv<R: Read>(r: R) -> Result<Vec<ShotRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let width = rdr.headers().map_err(csv_err)?.len();
    if width < 1 {
        return Err(Error::Schema("empty shot header".into()));
    }
    let mut shots = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let shot = row[0].trim().parse().map_err(|e| Error::Schema(format!("bad shot id: {e}")))?;
        let bits = row.iter().skip(1).map(Outcome::parse).collect::<Result<_>>()?;
        shots.push(ShotRecord { shot, bits });
    }
    Ok(shots)
}

pub fn write_sidecar<W: Write>(w: W, meta: &ShotMeta) -> Result<()> {
    serde_json::to_writer_pretty(w, meta).map_err(|e| Error::Schema(e.to_string()))
}

pub fn read_sidecar<R: Read>(r: R) -> Result<ShotMeta> {
    serde_json::from_reader(r).map_err(|e| Error::Schema(e.to_string()))
}
