//! Savitzky-Golay second derivative on arbitrary (nonuniform) grids.
//!
//! Each point gets its own least-squares polynomial over the `window`
//! nearest samples (the window slides inward at the edges), which reduces
//! to the classical convolution coefficients on a uniform grid.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observables::{csv_err, fmt};

pub const DEFAULT_WINDOW: usize = 51;
pub const DEFAULT_ORDER: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondDerivative {
    pub x: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub d2: Vec<f64>,
    /// Positions of the local minima of `d2`, ascending.
    pub minima: Vec<f64>,
    pub window: usize,
    pub order: usize,
}

impl SecondDerivative {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "smoothed", "d2"]).map_err(csv_err)?;
        for k in 0..self.x.len() {
            out.write_record([fmt(self.x[k]), fmt(self.smoothed[k]), fmt(self.d2[k])]).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Local polynomial fit of order `order` centred on `x0`; returns the
/// coefficients of `(x - x0) / scale`.
fn local_fit(x: &[f64], y: &[f64], x0: f64, order: usize) -> (Vec<f64>, f64) {
    let scale = x.iter().map(|v| (v - x0).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let a = DMatrix::from_fn(x.len(), order + 1, |r, c| ((x[r] - x0) / scale).powi(c as i32));
    let b = DVector::from_column_slice(y);
    let coef = a.svd(true, true).solve(&b, 1e-14).expect("svd computed with both factors");
    (coef.iter().copied().collect(), scale)
}

/// Even windows are widened by one. Minima are points where `d2` is the
/// smallest value within half a window on each side.
pub fn sg_second_derivative(x: &[f64], y: &[f64], window: usize, order: usize) -> Result<SecondDerivative> {
    if x.len() != y.len() {
        return Err(Error::Schema("x and y differ in length".into()));
    }
    if order < 2 {
        return Err(Error::Params("second derivative needs polynomial order >= 2".into()));
    }
    let window = if window % 2 == 0 { window + 1 } else { window };
    if window < order + 2 {
        return Err(Error::Params(format!("window {window} too small for order {order}")));
    }
    let n = x.len();
    if n < window {
        return Err(Error::ShortSeries(format!("{n} points, window {window}")));
    }
    if x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Params("x must be strictly increasing".into()));
    }
    let half = window / 2;
    let mut smoothed = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for i in 0..n {
        let lo = i.saturating_sub(half).min(n - window);
        let (c, scale) = local_fit(&x[lo..lo + window], &y[lo..lo + window], x[i], order);
        smoothed[i] = c[0];
        d2[i] = 2.0 * c[2] / (scale * scale);
    }
    let minima = (1..n - 1)
        .filter(|&i| {
            let (a, b) = (i.saturating_sub(half), (i + half).min(n - 1));
            (a..=b).all(|j| j == i || d2[i] < d2[j] || (d2[i] == d2[j] && j > i))
        })
        .map(|i| x[i])
        .collect();
    Ok(SecondDerivative { x: x.to_vec(), smoothed, d2, minima, window, order })
}
