//! Experiment configuration: parsing, defaults, validation and the content
//! hash that stamps every output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use trisim::lattice::{build_rhombus, Boundary, Lattice};
use trisim::model::{delta_for_dz, omega_for_dx, DeviceParams, PairSum};
use trisim::protocol::Timing;
use trisim::qmc::Truncation;
use trisim::readout::{DefectModel, ErrorRates};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub side: usize,
    pub boundary: Boundary,
    #[serde(default)]
    pub commensurate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Units {
    /// Dimensionless, `J1 = 1`.
    UnitJ1,
    /// Device constants in rad/s with the hardware drive ceilings.
    Physical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceSpec {
    pub units: Units,
    /// Transverse field in units of J1; sets the Rabi frequency.
    pub dx_over_j1: f64,
    #[serde(default)]
    pub pair_sum: PairSum,
}

impl Default for DeviceSpec {
    fn default() -> Self {
        DeviceSpec { units: Units::UnitJ1, dx_over_j1: 1.08, pair_sum: PairSum::Ordered }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimingKind {
    Ideal,
    Physical,
}

/// Times are in units of `hbar / J1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSpec {
    pub t_total: f64,
    pub ramp_fraction: f64,
    /// Integration step; chosen from the largest phase rate when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    pub timing: TimingKind,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        ProtocolSpec { t_total: 30.0, ramp_fraction: 0.9, dt: None, timing: TimingKind::Ideal }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Sv,
    Qmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QmcSpec {
    /// `k_B T / J1`; negative values are allowed.
    pub temperature: f64,
    pub n_therm: usize,
    pub n_meas: usize,
    pub n_chains: usize,
    pub truncation: Truncation,
    pub stationarity_sigma: f64,
}

impl Default for QmcSpec {
    fn default() -> Self {
        QmcSpec {
            temperature: 0.038,
            n_therm: 2_000,
            n_meas: 10_000,
            n_chains: 1,
            truncation: Truncation::Shell(3),
            stationarity_sigma: 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Longitudinal field `Dz / J1`.
    Dz,
    /// Detuning in units of J1.
    Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSpec {
    pub axis: Axis,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<Range>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observable {
    Mz,
    Sq,
    C1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalSpec {
    pub observable: Observable,
    /// Outer fit window on the scan axis; the full scan when absent.
    #[serde(default)]
    pub window: Option<[f64; 2]>,
    #[serde(default = "default_n_windows")]
    pub n_windows: usize,
}

fn default_n_windows() -> usize {
    9
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default)]
    pub critical_point: Option<CriticalSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchSpec {
    pub dz_over_j1: f64,
    /// End of the time grid, in units of `hbar / J1`.
    pub t_max: f64,
    pub n_times: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub lattice: LatticeSpec,
    #[serde(default)]
    pub device: DeviceSpec,
    #[serde(default)]
    pub protocol: ProtocolSpec,
    #[serde(default = "default_engine")]
    pub engine: Engine,
    #[serde(default)]
    pub qmc: QmcSpec,
    /// Simulated shots per point; zero reports engine expectations only.
    #[serde(default)]
    pub shots: usize,
    #[serde(default = "ErrorRates::device")]
    pub rates: ErrorRates,
    #[serde(default)]
    pub defects: DefectModel,
    pub scan: ScanSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub quench: Option<QuenchSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; not part of the hash.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
}

fn default_engine() -> Engine {
    Engine::Sv
}

/// Everything a point needs, derived once from the configuration.
pub struct Resolved {
    pub lattice: Lattice,
    pub device: DeviceParams,
    pub timing: Timing,
}

fn bad(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            CliError::Config(format!("field `{}` (line {}, column {}): {inner}", e.path(), inner.line(), inner.column()))
        })?;
        cfg.normalised()
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Expands a scan range into explicit values, sorts them and validates
    /// every field that can be checked without computing anything.
    fn normalised(mut self) -> Result<Self, CliError> {
        if let Some(r) = self.scan.range.take() {
            if !self.scan.values.is_empty() {
                return Err(bad("scan", "give either values or range, not both"));
            }
            if r.n < 2 || !(r.stop > r.start) {
                return Err(bad("scan.range", "needs n >= 2 and stop > start"));
            }
            self.scan.values = (0..r.n).map(|k| r.start + (r.stop - r.start) * k as f64 / (r.n - 1) as f64).collect();
        }
        if self.scan.values.is_empty() {
            return Err(bad("scan.values", "empty scan"));
        }
        if self.scan.values.iter().any(|v| !v.is_finite()) {
            return Err(bad("scan.values", "non-finite value"));
        }
        self.scan.values.sort_by(f64::total_cmp);
        if self.scan.values.windows(2).any(|w| w[0] == w[1]) {
            return Err(bad("scan.values", "duplicate point"));
        }
        let p = &self.protocol;
        if !(p.t_total > 0.0) || p.dt.is_some_and(|d| !(d > 0.0)) || !(0.0..=1.0).contains(&p.ramp_fraction) {
            return Err(bad("protocol", "t_total and dt must be positive and ramp_fraction in [0, 1]"));
        }
        if p.timing == TimingKind::Physical && self.device.units != Units::Physical {
            return Err(bad("protocol.timing", "physical timing needs physical device units"));
        }
        if !(self.device.dx_over_j1 >= 0.0) {
            return Err(bad("device.dx_over_j1", "must be non-negative"));
        }
        let q = &self.qmc;
        if q.temperature == 0.0 || !q.temperature.is_finite() || q.n_meas == 0 || q.n_therm == 0 || q.n_chains == 0 {
            return Err(bad("qmc", "temperature must be finite and nonzero, sweep and chain counts positive"));
        }
        self.rates.validate().map_err(|e| bad("rates", e))?;
        self.defects.validate().map_err(|e| bad("defects", e))?;
        if let Some(c) = &self.analysis.critical_point {
            if c.n_windows == 0 {
                return Err(bad("analysis.critical_point.n_windows", "must be positive"));
            }
        }
        if let Some(qu) = &self.quench {
            if !(qu.t_max >= 0.0) || qu.n_times == 0 {
                return Err(bad("quench", "t_max must be non-negative and n_times positive"));
            }
        }
        Ok(self)
    }

    /// Hex SHA-256 of the canonical JSON form (the output directory
    /// excluded).
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Builds the lattice and device and checks the drive against the
    /// device ceilings at every scan point.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let l = &self.lattice;
        let lattice = build_rhombus(l.side, 1.0, l.boundary, l.commensurate).map_err(|e| bad("lattice", e))?;
        let base = match self.device.units {
            Units::UnitJ1 => DeviceParams::unit_j1(0.0, 0.0),
            Units::Physical => DeviceParams::default_physical(),
        };
        let omega = omega_for_dx(&base, self.device.dx_over_j1);
        let device = base.with_drive(omega, 0.0);
        device.check_drive(omega, 0.0).map_err(|e| bad("device.dx_over_j1", e))?;
        let timing = match self.protocol.timing {
            TimingKind::Ideal => Timing::ideal(),
            TimingKind::Physical => Timing::physical(),
        };
        let r = Resolved { lattice, device, timing };
        for &v in &self.scan.values {
            let delta = r.delta(self, v);
            device.check_drive(omega, delta).map_err(|e| bad("scan.values", format!("point {v}: {e}")))?;
        }
        Ok(r)
    }
}

impl Resolved {
    /// Device detuning at a scan value.
    pub fn delta(&self, cfg: &ExperimentConfig, value: f64) -> f64 {
        match cfg.scan.axis {
            Axis::Dz => delta_for_dz(&self.device, &self.lattice, value, cfg.device.pair_sum),
            Axis::Delta => value * self.device.j1(),
        }
    }

    /// Converts a time in units of `hbar / J1` to device units.
    pub fn time(&self, t_over_j1: f64) -> f64 {
        t_over_j1 / self.device.j1()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "lattice": {"side": 3, "boundary": "periodic", "commensurate": true},
        "scan": {"axis": "dz", "range": {"start": 0.0, "stop": 10.0, "n": 5}}
    }"#;

    #[test]
    fn defaults_and_range_expansion() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.scan.values, vec![0.0, 2.5, 5.0, 7.5, 10.0]);
        assert!(cfg.scan.range.is_none());
        assert_eq!(cfg.engine, Engine::Sv);
        assert_eq!(cfg.rates, ErrorRates::device());
        cfg.resolve().unwrap();
    }

    #[test]
    fn hash_ignores_output_directory_and_formatting() {
        let a = ExperimentConfig::from_json(MINIMAL).unwrap();
        let mut b = ExperimentConfig::from_json(&MINIMAL.replace(' ', "")).unwrap();
        b.out = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn unknown_field_is_located() {
        let text = MINIMAL.replace("\"side\"", "\"sides\"");
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("lattice") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn rabi_frequency_above_ceiling_is_rejected() {
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.device.units = Units::Physical;
        cfg.device.dx_over_j1 = 1.08;
        assert!(cfg.resolve().is_ok());
        cfg.device.dx_over_j1 = 1.2;
        let err = cfg.resolve().err().unwrap().to_string();
        assert!(err.contains("device.dx_over_j1"), "{err}");
    }
}
