//! Sudden quench from the all-ground state, with exact and shot estimates
//! along a time grid.

use serde::{Deserialize, Serialize};

use trisim::model::{delta_for_dz, interactions, SpinHamiltonian};
use trisim::observables::MomentTable;
use trisim::protocol::make_quench;
use trisim::readout::{measure, ShotSource};
use trisim::sv::{check_cap, evolve, DiagonalCache, EvolveOptions, StateVector, DEFAULT_SITE_CAP};

use crate::config::{Engine, ExperimentConfig, Resolved};
use crate::output::{csv_bytes, num};
use crate::pipeline::{auto_dt, estimator_mask, observables, point_seed, shot_estimate, Observables, ShotEstimate};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchPoint {
    /// Time after the start of the plateau, in units of `hbar / J1`.
    pub t: f64,
    pub exact: Observables,
    pub shots: Option<ShotEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchResult {
    pub config_hash: String,
    pub seed: u64,
    pub dz_over_j1: f64,
    pub points: Vec<QuenchPoint>,
}

pub fn run_quench(cfg: &ExperimentConfig, r: &Resolved) -> Result<QuenchResult, CliError> {
    if cfg.engine != Engine::Sv {
        return Err(CliError::Config("engine: quench needs the state-vector engine".into()));
    }
    let q = cfg.quench.as_ref().ok_or_else(|| CliError::Config("quench: section missing".into()))?;
    let lat = &r.lattice;
    check_cap(lat.n_sites(), DEFAULT_SITE_CAP)?;
    let delta = delta_for_dz(&r.device, lat, q.dz_over_j1, cfg.device.pair_sum);
    let edge = r.timing.fast_edge;
    let protocol = make_quench(&r.device, delta, r.time(q.t_max).max(2.0 * edge), &r.timing)?;
    let h = SpinHamiltonian::rydberg(&interactions(lat, &r.device), 0.0, 0.0);
    let cache = DiagonalCache::for_hamiltonian(&h);
    let times: Vec<f64> = if q.n_times == 1 {
        vec![0.0]
    } else {
        (0..q.n_times).map(|k| q.t_max * k as f64 / (q.n_times - 1) as f64).collect()
    };
    let device_times: Vec<f64> = times.iter().map(|&t| (edge + r.time(t)).min(protocol.total_time)).collect();
    let dt = cfg.protocol.dt.map_or_else(|| auto_dt(&cache, &protocol), |d| r.time(d));
    let states = evolve(&StateVector::all_up(lat.n_sites()), &cache, &protocol, dt, &device_times, &EvolveOptions::default())?;
    let mask = estimator_mask(lat);
    let mut points = Vec::with_capacity(times.len());
    for (&t, psi) in times.iter().zip(&states) {
        let exact = observables(&MomentTable::from_state(psi, &mask), lat);
        let shots = if cfg.shots > 0 {
            let raw = measure(ShotSource::State(psi), &cfg.rates, &cfg.defects, cfg.shots, point_seed(cfg.seed, t))?;
            Some(shot_estimate(&raw, cfg, lat, &mask)?)
        } else {
            None
        };
        points.push(QuenchPoint { t, exact, shots });
    }
    Ok(QuenchResult { config_hash: cfg.hash(), seed: cfg.seed, dz_over_j1: q.dz_over_j1, points })
}

pub fn table_csv(res: &QuenchResult) -> Result<Vec<u8>, CliError> {
    let header = [
        "t_j1",
        "c1",
        "mz",
        "variance",
        "shot_c1",
        "shot_c1_err",
        "shot_mz",
        "shot_mz_err",
        "shot_variance",
        "shot_variance_err",
    ];
    let rows = res.points.iter().map(|p| {
        let e = &p.exact;
        let mut row = vec![num(p.t), num(e.c1.value), num(e.mz.value), num(e.variance.value)];
        match &p.shots {
            Some(s) => {
                let o = &s.observables;
                for v in [o.c1, o.mz, o.variance] {
                    row.push(num(v.value));
                    row.push(num(v.stderr));
                }
            }
            None => row.extend(std::iter::repeat_n(String::new(), 6)),
        }
        row
    });
    csv_bytes(&header, rows)
}
