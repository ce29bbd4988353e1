//! AC susceptibility curves and the magnetisation reconstructed from them.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{field_to_dz, FieldCalibration};
use crate::observables::{csv_err, fmt};

/// Field in tesla at which the reconstructed magnetisation is pinned to one.
pub const DEFAULT_NORM_FIELD: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiCurve {
    /// Strictly increasing field axis (tesla, or `Dz/J1`).
    pub field: Vec<f64>,
    pub chi: Vec<f64>,
    pub temperature: Option<Vec<f64>>,
}

impl ChiCurve {
    pub fn new(field: Vec<f64>, chi: Vec<f64>, temperature: Option<Vec<f64>>) -> Result<Self> {
        if field.len() != chi.len() || temperature.as_ref().is_some_and(|t| t.len() != field.len()) {
            return Err(Error::Schema("column lengths differ".into()));
        }
        if let Some(k) = field.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Schema(format!("field not strictly increasing at row {}", k + 2)));
        }
        if let Some(k) = chi.iter().position(|c| !c.is_finite()) {
            return Err(Error::Schema(format!("non-finite chi at row {}", k + 1)));
        }
        Ok(ChiCurve { field, chi, temperature })
    }

    pub fn len(&self) -> usize {
        self.field.len()
    }

    pub fn is_empty(&self) -> bool {
        self.field.is_empty()
    }

    /// The same curve on the `Dz/J1` axis.
    pub fn to_dz(&self, cal: &FieldCalibration) -> ChiCurve {
        ChiCurve { field: self.field.iter().map(|&h| field_to_dz(h, cal)).collect(), ..self.clone() }
    }
}

/// Reads `field_T,chi[,temperature_K]` with `#` comment lines. Row numbers in
/// errors count data rows from one.
pub fn read_chi_csv<R: Read>(r: R) -> Result<ChiCurve> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let field_col = col("field_T").ok_or_else(|| Error::Schema("missing column field_T".into()))?;
    let chi_col = col("chi").ok_or_else(|| Error::Schema("missing column chi".into()))?;
    let t_col = col("temperature_K");
    let (mut field, mut chi, mut temp) = (Vec::new(), Vec::new(), Vec::new());
    for (k, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Schema(format!("row {}: {e}", k + 1)))?;
        let get = |c: usize, name: &str| -> Result<f64> {
            row.get(c)
                .ok_or_else(|| Error::Schema(format!("row {}: missing {name}", k + 1)))?
                .parse()
                .map_err(|e| Error::Schema(format!("row {}: bad {name}: {e}", k + 1)))
        };
        field.push(get(field_col, "field_T")?);
        chi.push(get(chi_col, "chi")?);
        if let Some(c) = t_col {
            temp.push(get(c, "temperature_K")?);
        }
    }
    ChiCurve::new(field, chi, t_col.map(|_| temp))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnetisationCurve {
    pub field: Vec<f64>,
    pub m: Vec<f64>,
}

impl MagnetisationCurve {
    pub fn write_csv<W: Write>(&self, w: W, axis: &str) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([axis, "m"]).map_err(csv_err)?;
        for (h, m) in self.field.iter().zip(&self.m) {
            out.write_record([fmt(*h), fmt(*m)]).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Cumulative trapezoid integral of `chi` from zero field, divided by the
/// integral up to `norm_field`. The grid need not contain either endpoint;
/// the integrand is interpolated linearly there.
pub fn magnetisation_from_chi(c: &ChiCurve, norm_field: f64) -> Result<MagnetisationCurve> {
    if c.len() < 2 || c.field[0] > 0.0 {
        return Err(Error::Span(0.0));
    }
    if *c.field.last().unwrap() < norm_field || norm_field <= 0.0 {
        return Err(Error::Span(norm_field));
    }
    let interp = |h: f64| -> f64 {
        let k = c.field.partition_point(|&x| x <= h).clamp(1, c.len() - 1);
        let (x0, x1) = (c.field[k - 1], c.field[k]);
        c.chi[k - 1] + (c.chi[k] - c.chi[k - 1]) * (h - x0) / (x1 - x0)
    };
    // integral from 0 to h, piecewise linear integrand
    let integral = |h: f64| -> f64 {
        let (lo, hi, sign) = if h >= 0.0 { (0.0, h, 1.0) } else { (h, 0.0, -1.0) };
        let mut nodes = vec![lo];
        nodes.extend(c.field.iter().copied().filter(|&x| x > lo && x < hi));
        nodes.push(hi);
        sign * nodes.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (interp(w[0]) + interp(w[1]))).sum::<f64>()
    };
    let total = integral(norm_field);
    if total == 0.0 || !total.is_finite() {
        return Err(Error::Span(norm_field));
    }
    let m = c.field.iter().map(|&h| if h == norm_field { 1.0 } else { integral(h) / total }).collect();
    Ok(MagnetisationCurve { field: c.field.clone(), m })
}
