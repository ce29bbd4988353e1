//! Procedures built on the estimators: susceptibility ingestion, derivative
//! analysis, critical-point fits, cluster statistics and thermalisation.

pub mod chi;
pub mod cluster;
pub mod critical;
pub mod sg;
pub mod thermal;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use chi::{magnetisation_from_chi, read_chi_csv, ChiCurve, MagnetisationCurve, DEFAULT_NORM_FIELD};
pub use cluster::{cluster_stats, ClusterStats, TriangleGraph};
pub use critical::{critical_point_cubic, default_windows, CriticalPointEstimate, Method};
pub use sg::{sg_second_derivative, SecondDerivative};
pub use thermal::{
    effective_temperature, initial_energy, thermalisation_check, Branch, EffectiveTemperature, ThermalisationReport,
};

use crate::error::{Error, Result};

/// JSON summary written next to every analysis CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub estimate: f64,
    pub ci: [f64; 2],
    pub method: String,
    pub config_hash: String,
}

impl Summary {
    pub fn from_critical(est: &CriticalPointEstimate, config_hash: &str) -> Self {
        let method = serde_json::to_value(est.method).ok().and_then(|v| v.as_str().map(str::to_string));
        Summary {
            estimate: est.value,
            ci: [est.ci_low, est.ci_high],
            method: method.unwrap_or_default(),
            config_hash: config_hash.to_string(),
        }
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Schema(e.to_string()))
    }
}
