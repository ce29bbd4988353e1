//! Susceptibility files: integrate to a magnetisation curve, differentiate
//! and locate the transition on the shared `Dz / J1` axis.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use trisim::analysis::{
    critical_point_cubic, default_windows, magnetisation_from_chi, read_chi_csv, sg_second_derivative, Summary,
};
use trisim::model::{field_to_dz, FieldCalibration};

use crate::output::{csv_bytes, num};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub slope: f64,
    pub norm_field: f64,
    /// Outer fit window in `Dz / J1`.
    pub window: [f64; 2],
    pub n_windows: usize,
    pub sg_window: usize,
    pub sg_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestResult {
    pub input_hash: String,
    pub options: IngestOptions,
    pub field: Vec<f64>,
    pub dz_over_j1: Vec<f64>,
    pub chi: Vec<f64>,
    pub m_ac: Vec<f64>,
    pub d2: Vec<f64>,
    /// Minima of the second derivative, in `Dz / J1`.
    pub d2_minima: Vec<f64>,
    pub critical_point: Option<Summary>,
}

pub fn ingest(path: &Path, opts: &IngestOptions) -> Result<IngestResult, CliError> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    h.update(serde_json::to_vec(opts).expect("options serialise"));
    let input_hash = hex::encode(h.finalize());
    let curve = read_chi_csv(bytes.as_slice())?;
    let cal = FieldCalibration { slope: opts.slope, ..Default::default() };
    let m = magnetisation_from_chi(&curve, opts.norm_field)?;
    let dz: Vec<f64> = curve.field.iter().map(|&f| field_to_dz(f, &cal)).collect();
    let d2 = sg_second_derivative(&dz, &m.m, opts.sg_window, opts.sg_order)?;
    let lo = opts.window[0].max(dz[0]);
    let hi = opts.window[1].min(*dz.last().expect("nonempty curve"));
    let critical_point = match critical_point_cubic(&dz, &m.m, &default_windows((lo, hi), opts.n_windows)) {
        Ok(e) => Some(Summary::from_critical(&e, &input_hash)),
        Err(e) => {
            log::warn!("critical point: {e}");
            None
        }
    };
    Ok(IngestResult {
        input_hash,
        options: opts.clone(),
        field: curve.field.clone(),
        dz_over_j1: dz,
        chi: curve.chi.clone(),
        m_ac: m.m,
        d2: d2.d2,
        d2_minima: d2.minima,
        critical_point,
    })
}

pub fn table_csv(res: &IngestResult) -> Result<Vec<u8>, CliError> {
    let rows = (0..res.field.len()).map(|k| {
        vec![num(res.field[k]), num(res.dz_over_j1[k]), num(res.chi[k]), num(res.m_ac[k]), num(res.d2[k])]
    });
    csv_bytes(&["field_T", "dz_over_j1", "chi", "m_ac", "d2"], rows)
}
