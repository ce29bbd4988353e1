//! Critical point from windowed cubic fits of a scan.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, percentile};

pub const MIN_WINDOW_POINTS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    CubicFit,
    SgSecondDerivative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointEstimate {
    pub value: f64,
    /// 68% band from the spread over fit windows.
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: Method,
    pub windows: Vec<(f64, f64)>,
    /// Windows that produced an estimate, and those estimates.
    pub per_window: Vec<f64>,
}

/// Windows obtained by trimming up to a fifth of `range` from either
/// side, on an `m x m` grid of trims (`m = ceil(sqrt(n_windows))`).
pub fn default_windows(range: (f64, f64), n_windows: usize) -> Vec<(f64, f64)> {
    let m = (n_windows.max(1) as f64).sqrt().ceil() as usize;
    let w = range.1 - range.0;
    let trim = |k: usize| if m == 1 { 0.0 } else { 0.2 * w * k as f64 / (m - 1) as f64 };
    let mut out = Vec::with_capacity(m * m);
    for a in 0..m {
        for b in 0..m {
            out.push((range.0 + trim(a), range.1 - trim(b)));
        }
    }
    out
}

/// Position of the maximum of `|p'|` for the least-squares cubic `p` over
/// one window. A maximum on the window edge means the fit has no interior
/// extremum of the derivative and is reported as degenerate.
fn window_estimate(x: &[f64], y: &[f64], lo: f64, hi: f64) -> Result<f64> {
    let idx: Vec<usize> = (0..x.len()).filter(|&k| x[k] >= lo && x[k] <= hi).collect();
    if idx.len() < MIN_WINDOW_POINTS {
        return Err(Error::ShortSeries(format!("{} points in window [{lo}, {hi}]", idx.len())));
    }
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let a = DMatrix::from_fn(idx.len(), 4, |r, c| ((x[idx[r]] - mid) / half).powi(c as i32));
    let b = DVector::from_iterator(idx.len(), idx.iter().map(|&k| y[k]));
    let c = a.svd(true, true).solve(&b, 1e-14).expect("svd computed with both factors");
    let scale = idx.iter().map(|&k| (y[k] - b.mean()).abs()).fold(0.0, f64::max);
    if !(c[3].abs() > 1e-9 * scale) {
        return Err(Error::DegenerateFit);
    }
    let u = -c[2] / (3.0 * c[3]);
    let slope = |u: f64| (c[1] + 2.0 * c[2] * u + 3.0 * c[3] * u * u).abs();
    if !(u > -1.0 && u < 1.0) || slope(u) <= slope(-1.0).max(slope(1.0)) {
        return Err(Error::DegenerateFit);
    }
    Ok(mid + half * u)
}

/// Mean of the per-window estimates, with the 16th and 84th percentiles as
/// the band (widened to contain the mean if the spread is lopsided).
/// Windows with too few points or a degenerate fit are left out. With no
/// usable window the error is `DegenerateFit` if any window had enough
/// points, else `ShortSeries`.
pub fn critical_point_cubic(x: &[f64], y: &[f64], windows: &[(f64, f64)]) -> Result<CriticalPointEstimate> {
    if x.len() != y.len() {
        return Err(Error::Schema("x and y differ in length".into()));
    }
    if windows.is_empty() {
        return Err(Error::Params("no fit windows".into()));
    }
    let mut used = Vec::new();
    let mut per_window = Vec::new();
    let mut short = None;
    let mut degenerate = false;
    for &(lo, hi) in windows {
        match window_estimate(x, y, lo, hi) {
            Ok(v) => {
                used.push((lo, hi));
                per_window.push(v);
            }
            Err(Error::DegenerateFit) => degenerate = true,
            Err(e @ Error::ShortSeries(_)) => short = short.or(Some(e)),
            Err(e) => return Err(e),
        }
    }
    if per_window.is_empty() {
        return Err(match short {
            Some(e) if !degenerate => e,
            _ => Error::DegenerateFit,
        });
    }
    let value = mean(&per_window);
    Ok(CriticalPointEstimate {
        value,
        ci_low: percentile(&per_window, 16.0).min(value),
        ci_high: percentile(&per_window, 84.0).max(value),
        method: Method::CubicFit,
        windows: used,
        per_window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scan(f: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = (0..25).map(|k| 1.0 + 9.0 * k as f64 / 24.0).collect();
        let y = x.iter().map(|&v| f(v)).collect();
        (x, y)
    }

    #[test]
    fn smoothed_step_is_located() {
        for (c, w) in [(3.9, 0.6), (4.3, 1.0), (3.5, 0.8)] {
            let (x, y) = scan(|v| 0.5 * (1.0 - ((v - c) / w).tanh()));
            let est = critical_point_cubic(&x, &y, &default_windows((2.0, 6.0), 9));
            let est = est.unwrap();
            assert!((est.value - c).abs() <= w / 4.0, "c={c} w={w}: {est:?}");
            assert!(est.ci_low <= est.value && est.value <= est.ci_high);
        }
    }

    #[test]
    fn linear_input_is_degenerate() {
        let (x, y) = scan(|v| 2.0 - 0.3 * v);
        assert!(matches!(critical_point_cubic(&x, &y, &default_windows((2.0, 6.0), 9)), Err(Error::DegenerateFit)));
    }

    #[test]
    fn sparse_window_is_short() {
        let (x, y) = scan(|v| v.powi(3));
        assert!(matches!(critical_point_cubic(&x, &y, &[(2.0, 3.0)]), Err(Error::ShortSeries(_))));
        // a short window among usable ones is skipped
        let (x, y) = scan(|v| 0.5 * (1.0 - ((v - 4.0) / 0.8).tanh()));
        let est = critical_point_cubic(&x, &y, &[(2.0, 3.0), (2.0, 6.0)]).unwrap();
        assert_eq!(est.windows, vec![(2.0, 6.0)]);
    }

    #[test]
    fn default_window_grid() {
        let w = default_windows((2.0, 6.0), 9);
        assert_eq!(w.len(), 9);
        assert_eq!(w[0], (2.0, 6.0));
        assert_eq!(w[8], (2.8, 5.2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn invariant_under_affine_rescaling(
            c in 3.0..5.0f64,
            w in 0.4..1.5f64,
            k in -8i32..8,
            shift in -4.0..4.0f64,
            a in 0.1..50.0f64,
        ) {
            let (x, y) = scan(|v| 0.5 * (1.0 - ((v - c) / w).tanh()));
            let windows = default_windows((2.0, 6.0), 9);
            let base = critical_point_cubic(&x, &y, &windows);
            prop_assume!(base.is_ok());
            let base = base.unwrap();
            // power-of-two scaling and sign flips commute exactly with the fit
            let s = 2f64.powi(k);
            for sign in [1.0, -1.0] {
                let ys: Vec<f64> = y.iter().map(|v| sign * s * v).collect();
                let est = critical_point_cubic(&x, &ys, &windows).unwrap();
                prop_assert_eq!(est.value.to_bits(), base.value.to_bits());
            }
            // general affine maps agree to rounding
            let ya: Vec<f64> = y.iter().map(|v| a * v + shift).collect();
            let est = critical_point_cubic(&x, &ya, &windows).unwrap();
            prop_assert!((est.value - base.value).abs() < 1e-9, "{} vs {}", est.value, base.value);
        }
    }
}
