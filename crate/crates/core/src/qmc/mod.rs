//! Finite-temperature stochastic series expansion for the device
//! Hamiltonian, including negative temperatures.
//!
//! Negative `beta` is simulated as `|beta|` with `-H`; z-diagonal
//! observables are unaffected by the gauge rotation that removes the sign
//! of the transverse field.

mod chain;
mod snapshot;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::model::{interactions, interactions_truncated, DeviceParams, SpinHamiltonian};
use crate::observables::{Estimate, MomentAccumulator, MomentTable, Source};
use crate::stats::{self, binning, BinnedEstimate};

use chain::{Chain, Decomposition};
pub use snapshot::{read_snapshots, write_snapshots, Snapshot, SnapshotHeader, SnapshotSet};

/// Largest system the untruncated mode accepts.
pub const EXACT_TAIL_CAP: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truncation {
    /// Keep pairs up to and including this neighbour shell.
    Shell(usize),
    /// Keep every pair.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SseConfig {
    /// Inverse temperature in the Hamiltonian's inverse units; sign allowed.
    pub beta: f64,
    pub n_therm: usize,
    pub n_meas: usize,
    pub seed: u64,
    pub cutoff_adjust: bool,
    pub truncation: Truncation,
    /// Independent chains run in parallel and merged.
    pub n_chains: usize,
    /// Stationarity threshold on the energy trace, in combined standard
    /// errors between the two halves of the measurement phase.
    pub stationarity_sigma: f64,
}

impl Default for SseConfig {
    fn default() -> Self {
        SseConfig {
            beta: 1.0,
            n_therm: 50_000,
            n_meas: 100_000,
            seed: 0,
            cutoff_adjust: true,
            truncation: Truncation::Shell(3),
            n_chains: 1,
            stationarity_sigma: 6.0,
        }
    }
}

impl SseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta == 0.0 || !self.beta.is_finite() {
            return Err(Error::Params(format!("beta must be finite and nonzero, got {}", self.beta)));
        }
        if self.n_therm == 0 || self.n_meas == 0 || self.n_chains == 0 {
            return Err(Error::Params("n_therm, n_meas and n_chains must be positive".into()));
        }
        Ok(())
    }
}

/// Which estimators to accumulate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Request {
    /// Sites entering M^z, the pair table and S(q) (normally the bulk).
    pub sites: Vec<usize>,
    pub pairs: bool,
    /// Wavevectors in radians per lattice constant.
    pub q_points: Vec<[f64; 2]>,
    pub histogram: bool,
}

impl Request {
    pub fn bulk(sites: &[usize]) -> Self {
        Request { sites: sites.to_vec(), ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqEstimate {
    pub q: [f64; 2],
    pub nonconnected: BinnedEstimate,
    pub connected: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SseResult {
    pub beta: f64,
    /// Energy per site of the simulated Hamiltonian.
    pub energy: BinnedEstimate,
    /// Mean `<Z>` over the requested sites.
    pub mz: BinnedEstimate,
    pub moments: Option<MomentTable>,
    pub sq: Vec<SqEstimate>,
    /// Counts of the number of Rydberg sites among the requested sites.
    pub histogram: Vec<u64>,
    pub mean_ops: f64,
    pub cutoff: usize,
    /// Integrated autocorrelation time of the energy, in sweeps.
    pub tau_energy: f64,
    pub n_chains: usize,
}

/// Device Hamiltonian with the QMC interaction truncation applied.
pub fn qmc_hamiltonian(lat: &Lattice, dev: &DeviceParams, truncation: Truncation) -> Result<SpinHamiltonian> {
    let u = match truncation {
        Truncation::Exact => {
            if lat.n_sites() > EXACT_TAIL_CAP {
                return Err(Error::CapExceeded { n: lat.n_sites(), cap: EXACT_TAIL_CAP });
            }
            interactions(lat, dev)
        }
        Truncation::Shell(k) => interactions_truncated(lat, dev, k),
    };
    Ok(SpinHamiltonian::rydberg(&u, dev.omega, dev.delta))
}

/// Runs the SSE for the device Hamiltonian on `lat`.
pub fn run_sse(lat: &Lattice, dev: &DeviceParams, cfg: &SseConfig, req: &Request) -> Result<SseResult> {
    if dev.omega < 0.0 {
        return Err(Error::Params("Rabi frequency must be non-negative".into()));
    }
    let h = qmc_hamiltonian(lat, dev, cfg.truncation)?;
    let pos = scaled_positions(lat);
    run_hamiltonian(&h, &pos, cfg, req, dev.u1())
}

/// Site positions in units of the lattice constant.
pub fn scaled_positions(lat: &Lattice) -> Vec<[f64; 2]> {
    lat.sites().iter().map(|p| [p[0] / lat.a, p[1] / lat.a]).collect()
}

/// Runs the SSE for an arbitrary z-diagonal plus uniform transverse-field
/// Hamiltonian. `scale` sets the positivity shift `1e-3 * scale` of the
/// diagonal weights.
pub fn run_hamiltonian(
    h: &SpinHamiltonian,
    positions: &[[f64; 2]],
    cfg: &SseConfig,
    req: &Request,
    scale: f64,
) -> Result<SseResult> {
    cfg.validate()?;
    let sign = cfg.beta.signum();
    let sim = if sign < 0.0 { h.negated() } else { h.clone() };
    let dec = Decomposition::new(&sim, 1e-3 * scale.abs().max(1e-12))?;
    let runs: Vec<Result<ChainOutput>> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_chain(&dec, cfg, req, positions, c as u64, sign))
        .collect();
    let runs: Vec<ChainOutput> = runs.into_iter().collect::<Result<_>>()?;
    combine(runs, cfg, req)
}

struct ChainOutput {
    energy: Vec<f64>,
    mz: Vec<f64>,
    /// Per q: `|A|^2 / N_b`, `Re A`, `Im A` with `A = sum_a e^{i q r_a} Z_a`.
    sq: Vec<[Vec<f64>; 3]>,
    acc: Option<MomentAccumulator>,
    histogram: Vec<u64>,
    mean_ops: f64,
    cutoff: usize,
}

struct Phases {
    cos: Vec<Vec<f64>>,
    sin: Vec<Vec<f64>>,
}

impl Phases {
    fn new(req: &Request, positions: &[[f64; 2]]) -> Self {
        let f = |g: fn(f64) -> f64| -> Vec<Vec<f64>> {
            req.q_points
                .iter()
                .map(|q| req.sites.iter().map(|&i| g(q[0] * positions[i][0] + q[1] * positions[i][1])).collect())
                .collect()
        };
        Phases { cos: f(f64::cos), sin: f(f64::sin) }
    }
}

fn run_chain(
    dec: &Decomposition,
    cfg: &SseConfig,
    req: &Request,
    positions: &[[f64; 2]],
    stream: u64,
    sign: f64,
) -> Result<ChainOutput> {
    let mut ch = Chain::new(dec, cfg.beta.abs(), cfg.seed, stream)?;
    for _ in 0..cfg.n_therm {
        ch.sweep();
        if cfg.cutoff_adjust {
            ch.adjust_cutoff();
        }
    }
    let n = dec.n as f64;
    let nb = req.sites.len();
    let phases = Phases::new(req, positions);
    let mut out = ChainOutput {
        energy: Vec::with_capacity(cfg.n_meas),
        mz: Vec::with_capacity(if nb > 0 { cfg.n_meas } else { 0 }),
        sq: req.q_points.iter().map(|_| [Vec::new(), Vec::new(), Vec::new()]).collect(),
        acc: if req.pairs { Some(MomentAccumulator::new(&req.sites)) } else { None },
        histogram: if req.histogram { vec![0; nb + 1] } else { Vec::new() },
        mean_ops: 0.0,
        cutoff: 0,
    };
    let mut z = vec![0.0; nb];
    let mut ops_sum = 0.0;
    for _ in 0..cfg.n_meas {
        ch.sweep();
        if cfg.cutoff_adjust && ch.adjust_cutoff() {
            log::debug!("operator string grew to {} during measurement", ch.cutoff());
        }
        assert!(ch.n_ops() < ch.cutoff() || !cfg.cutoff_adjust, "operator string truncated");
        ops_sum += ch.n_ops() as f64;
        out.energy.push(sign * ch.energy_estimate() / n);
        if nb == 0 {
            continue;
        }
        let mut ryd = 0usize;
        for (a, &i) in req.sites.iter().enumerate() {
            let s = ch.spins[i];
            ryd += s as usize;
            z[a] = 1.0 - 2.0 * s as f64;
        }
        out.mz.push(z.iter().sum::<f64>() / nb as f64);
        for (k, series) in out.sq.iter_mut().enumerate() {
            let re: f64 = phases.cos[k].iter().zip(&z).map(|(c, z)| c * z).sum();
            let im: f64 = phases.sin[k].iter().zip(&z).map(|(s, z)| s * z).sum();
            series[0].push((re * re + im * im) / nb as f64);
            series[1].push(re);
            series[2].push(im);
        }
        if let Some(acc) = out.acc.as_mut() {
            let spins = &ch.spins;
            acc.add(|i| spins[i] == 1);
        }
        if req.histogram {
            out.histogram[ryd] += 1;
        }
    }
    out.mean_ops = ops_sum / cfg.n_meas as f64;
    out.cutoff = ch.cutoff();
    Ok(out)
}

/// Number of blocks the jackknife of the connected structure factor uses.
const JACKKNIFE_BLOCKS: usize = 32;

fn connected_sq(series: &[Vec<f64>; 3], nb: usize) -> Estimate {
    let len = series[0].len();
    let blocks = JACKKNIFE_BLOCKS.min(len);
    if blocks < 2 {
        return Estimate { value: f64::NAN, stderr: f64::NAN };
    }
    let size = len / blocks;
    let bins: Vec<Vec<f64>> = (0..blocks)
        .map(|b| series.iter().map(|s| stats::mean(&s[b * size..(b + 1) * size])).collect())
        .collect();
    let (value, stderr) = stats::jackknife(&bins, |m| m[0] - (m[1] * m[1] + m[2] * m[2]) / nb as f64);
    Estimate { value, stderr }
}

fn estimate(series: &[f64]) -> Result<BinnedEstimate> {
    if series.is_empty() {
        return Ok(BinnedEstimate { mean: f64::NAN, stderr: f64::NAN, n_bins: 0, bin_size: 0, plateau: false });
    }
    binning(series)
}

fn combine(runs: Vec<ChainOutput>, cfg: &SseConfig, req: &Request) -> Result<SseResult> {
    let nb = req.sites.len();
    let mut energies = Vec::new();
    let mut mzs = Vec::new();
    let mut taus = Vec::new();
    for r in &runs {
        let e = estimate(&r.energy)?;
        let sep = stats::half_separation(&r.energy)?;
        if sep > cfg.stationarity_sigma {
            return Err(Error::NoEquilibration(format!(
                "energy halves differ by {sep:.1} standard errors (threshold {})",
                cfg.stationarity_sigma
            )));
        }
        taus.push(e.tau_int(stats::naive_stderr(&r.energy)));
        energies.push(e);
        mzs.push(estimate(&r.mz)?);
    }
    let sq = (0..req.q_points.len())
        .map(|k| -> Result<SqEstimate> {
            let parts: Vec<BinnedEstimate> = runs.iter().map(|r| estimate(&r.sq[k][0])).collect::<Result<_>>()?;
            let conn: Vec<Estimate> = runs.iter().map(|r| connected_sq(&r.sq[k], nb)).collect();
            let as_binned: Vec<BinnedEstimate> = conn
                .iter()
                .map(|c| BinnedEstimate { mean: c.value, stderr: c.stderr, n_bins: JACKKNIFE_BLOCKS, bin_size: 0, plateau: true })
                .collect();
            let merged = stats::merge(&as_binned);
            Ok(SqEstimate {
                q: req.q_points[k],
                nonconnected: stats::merge(&parts),
                connected: Estimate { value: merged.mean, stderr: merged.stderr },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mz = if nb > 0 { stats::merge(&mzs) } else { mzs[0] };
    let moments = if req.pairs {
        let mut total: Option<MomentTable> = None;
        let mut count = 0usize;
        for r in &runs {
            let t = r.acc.as_ref().unwrap().finish(Source::Qmc);
            count += t.n_shots;
            total = Some(match total {
                None => t,
                Some(mut acc) => {
                    let (w0, w1) = (acc.n_shots as f64, t.n_shots as f64);
                    let mix = |a: &mut f64, b: f64| *a = (*a * w0 + b * w1) / (w0 + w1);
                    acc.m.iter_mut().zip(&t.m).for_each(|(a, &b)| mix(a, b));
                    acc.c.iter_mut().zip(&t.c).for_each(|(a, &b)| mix(a, b));
                    acc.n_shots += t.n_shots;
                    acc
                }
            });
        }
        total.map(|mut t| {
            t.n_shots = count;
            t.m_stderr = mz.stderr;
            t
        })
    } else {
        None
    };
    let mut histogram = vec![0u64; if req.histogram { nb + 1 } else { 0 }];
    for r in &runs {
        histogram.iter_mut().zip(&r.histogram).for_each(|(a, b)| *a += b);
    }
    Ok(SseResult {
        beta: cfg.beta,
        energy: stats::merge(&energies),
        mz,
        moments,
        sq,
        histogram,
        mean_ops: runs.iter().map(|r| r.mean_ops).sum::<f64>() / runs.len() as f64,
        cutoff: runs.iter().map(|r| r.cutoff).max().unwrap_or(0),
        tau_energy: taus.iter().copied().fold(0.0, f64::max),
        n_chains: runs.len(),
    })
}

/// Thermal energy per site on a temperature grid, with the exact
/// infinite-temperature value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyCurve {
    /// Temperatures in units of `J1`, sorted by inverse temperature.
    pub t_over_j1: Vec<f64>,
    pub energy: Vec<BinnedEstimate>,
    /// `Tr H / (N 2^N)` of the simulated Hamiltonian.
    pub e_inf: f64,
    /// Energy unit used for the temperatures.
    pub j1: f64,
}

impl EnergyCurve {
    /// Inverse temperatures `J1 / T`, ascending, with `0` inserted.
    pub fn beta_grid(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rows: Vec<(f64, f64, f64)> =
            self.t_over_j1.iter().zip(&self.energy).map(|(t, e)| (1.0 / t, e.mean, e.stderr)).collect();
        rows.push((0.0, self.e_inf, 0.0));
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        (rows.iter().map(|r| r.0).collect(), rows.iter().map(|r| r.1).collect(), rows.iter().map(|r| r.2).collect())
    }
}

/// Tabulates the energy per site at each `T/J1` in `t_grid` (any sign,
/// nonzero). The raw estimates are returned; monotonicity in `beta` holds
/// within statistical error.
pub fn energy_curve(lat: &Lattice, dev: &DeviceParams, t_grid: &[f64], cfg: &SseConfig) -> Result<EnergyCurve> {
    if t_grid.is_empty() || t_grid.iter().any(|t| *t == 0.0 || !t.is_finite()) {
        return Err(Error::Params("temperature grid must be nonempty and exclude 0".into()));
    }
    let h = qmc_hamiltonian(lat, dev, cfg.truncation)?;
    let pos = scaled_positions(lat);
    let j1 = dev.j1();
    let mut energy = Vec::with_capacity(t_grid.len());
    for (k, &t) in t_grid.iter().enumerate() {
        let c = SseConfig { beta: 1.0 / (t * j1), seed: cfg.seed.wrapping_add(k as u64), ..*cfg };
        let r = run_hamiltonian(&h, &pos, &c, &Request::default(), dev.u1())?;
        energy.push(r.energy);
    }
    Ok(EnergyCurve { t_over_j1: t_grid.to_vec(), energy, e_inf: h.trace_average() / h.n() as f64, j1 })
}

/// Decorrelated z-basis configurations of one chain. The spacing is twice
/// the integrated autocorrelation time of the energy and the bulk
/// magnetisation, measured in a pilot run, and at least one sweep.
pub fn snapshots(lat: &Lattice, dev: &DeviceParams, cfg: &SseConfig, n_snap: usize) -> Result<SnapshotSet> {
    cfg.validate()?;
    let h = qmc_hamiltonian(lat, dev, cfg.truncation)?;
    let sim = if cfg.beta < 0.0 { h.negated() } else { h.clone() };
    let dec = Decomposition::new(&sim, 1e-3 * dev.u1().abs().max(1e-12))?;
    let mut ch = Chain::new(&dec, cfg.beta.abs(), cfg.seed, 0)?;
    for _ in 0..cfg.n_therm {
        ch.sweep();
        if cfg.cutoff_adjust {
            ch.adjust_cutoff();
        }
    }
    let pilot = cfg.n_meas.clamp(2 * stats::MIN_BINS, 20_000);
    let mut e = Vec::with_capacity(pilot);
    let mut m = Vec::with_capacity(pilot);
    for _ in 0..pilot {
        ch.sweep();
        if cfg.cutoff_adjust {
            ch.adjust_cutoff();
        }
        e.push(ch.energy_estimate());
        m.push(ch.spins.iter().map(|&s| 1.0 - 2.0 * s as f64).sum::<f64>());
    }
    let tau = |x: &[f64]| binning(x).map(|b| b.tau_int(stats::naive_stderr(x)));
    let tau = tau(&e)?.max(tau(&m)?);
    let spacing = ((2.0 * tau).ceil() as u64).max(1);
    let mut records = Vec::with_capacity(n_snap);
    let mut sweep = pilot as u64;
    for _ in 0..n_snap {
        for _ in 0..spacing {
            ch.sweep();
            if cfg.cutoff_adjust {
                ch.adjust_cutoff();
            }
            sweep += 1;
        }
        records.push(Snapshot::from_occupations(&ch.spins, sweep));
    }
    let header = SnapshotHeader {
        n: lat.n_sites() as u32,
        l: lat.side() as u32,
        seed: cfg.seed,
        beta: cfg.beta,
        params_hash: snapshot::params_hash(lat, dev, cfg),
    };
    Ok(SnapshotSet { header, records, spacing })
}

#[cfg(test)]
mod tests;
