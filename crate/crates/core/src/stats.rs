//! Error analysis helpers: binning, jackknife, merging and monotone
//! interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest number of bins a binned error is reported with.
pub const MIN_BINS: usize = 20;
/// Relative change between successive bin sizes accepted as a plateau.
pub const PLATEAU_TOL: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinnedEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_bins: usize,
    pub bin_size: usize,
    /// Whether the error stopped growing with bin size. When false the
    /// error is a lower bound taken at the largest admissible bin size.
    pub plateau: bool,
}

impl BinnedEstimate {
    pub fn exact(mean: f64) -> Self {
        BinnedEstimate { mean, stderr: 0.0, n_bins: 0, bin_size: 0, plateau: true }
    }

    /// Integrated autocorrelation time in units of the series spacing,
    /// given the naive (unbinned) error.
    pub fn tau_int(&self, naive_stderr: f64) -> f64 {
        if naive_stderr <= 0.0 {
            return 0.5;
        }
        0.5 * (self.stderr / naive_stderr).powi(2)
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Standard error of the mean assuming independent samples.
pub fn naive_stderr(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(x);
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

fn rebin(x: &[f64], size: usize) -> Vec<f64> {
    x.chunks_exact(size).map(mean).collect()
}

/// Binning analysis: the bin size doubles until the error changes by less
/// than 20% between successive sizes, keeping at least 20 bins.
pub fn binning(x: &[f64]) -> Result<BinnedEstimate> {
    if x.len() < MIN_BINS {
        return Err(Error::ShortSeries(format!("{} samples, need at least {MIN_BINS}", x.len())));
    }
    let m = mean(x);
    let mut size = 1;
    let mut err = naive_stderr(x);
    loop {
        let next = size * 2;
        if x.len() / next < MIN_BINS {
            return Ok(BinnedEstimate { mean: m, stderr: err, n_bins: x.len() / size, bin_size: size, plateau: false });
        }
        let e2 = naive_stderr(&rebin(x, next));
        let plateau = if err == 0.0 { e2 == 0.0 } else { (e2 - err).abs() <= PLATEAU_TOL * err };
        if plateau {
            // report the larger, more conservative of the two
            let (stderr, bin_size) = if e2 >= err { (e2, next) } else { (err, size) };
            return Ok(BinnedEstimate { mean: m, stderr, n_bins: x.len() / bin_size, bin_size, plateau: true });
        }
        size = next;
        err = e2;
    }
}

/// Jackknife over bins. `bins[k]` holds the per-bin means of every input
/// series; `f` maps a vector of series means to the derived quantity.
pub fn jackknife(bins: &[Vec<f64>], f: impl Fn(&[f64]) -> f64) -> (f64, f64) {
    let nb = bins.len();
    assert!(nb >= 2, "jackknife needs at least two bins");
    let width = bins[0].len();
    let mut total = vec![0.0; width];
    for b in bins {
        total.iter_mut().zip(b).for_each(|(t, v)| *t += v);
    }
    let full: Vec<f64> = total.iter().map(|t| t / nb as f64).collect();
    let theta = f(&full);
    let mut loo = Vec::with_capacity(nb);
    let mut buf = vec![0.0; width];
    for b in bins {
        for ((x, t), v) in buf.iter_mut().zip(&total).zip(b) {
            *x = (t - v) / (nb - 1) as f64;
        }
        loo.push(f(&buf));
    }
    let lm = mean(&loo);
    let var = loo.iter().map(|v| (v - lm).powi(2)).sum::<f64>() * (nb - 1) as f64 / nb as f64;
    // bias-corrected estimate
    (nb as f64 * theta - (nb - 1) as f64 * lm, var.sqrt())
}

/// Inverse-variance weighted merge of independent estimates. Estimates with
/// zero error dominate; if all are exact the plain mean is returned.
pub fn merge(parts: &[BinnedEstimate]) -> BinnedEstimate {
    assert!(!parts.is_empty());
    let exact: Vec<&BinnedEstimate> = parts.iter().filter(|p| p.stderr == 0.0).collect();
    let n_bins = parts.iter().map(|p| p.n_bins).sum();
    let bin_size = parts.iter().map(|p| p.bin_size).max().unwrap();
    let plateau = parts.iter().all(|p| p.plateau);
    if !exact.is_empty() {
        let m = exact.iter().map(|p| p.mean).sum::<f64>() / exact.len() as f64;
        return BinnedEstimate { mean: m, stderr: 0.0, n_bins, bin_size, plateau };
    }
    let (mut sw, mut swx) = (0.0, 0.0);
    for p in parts {
        let w = 1.0 / (p.stderr * p.stderr);
        sw += w;
        swx += w * p.mean;
    }
    BinnedEstimate { mean: swx / sw, stderr: (1.0 / sw).sqrt(), n_bins, bin_size, plateau }
}

/// Compares the means of the two halves of a series. Returns the
/// separation in units of the combined binned error.
pub fn half_separation(x: &[f64]) -> Result<f64> {
    let h = x.len() / 2;
    let a = binning(&x[..h])?;
    let b = binning(&x[h..2 * h])?;
    let err = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
    if err == 0.0 {
        return Ok(if a.mean == b.mean { 0.0 } else { f64::INFINITY });
    }
    Ok((a.mean - b.mean).abs() / err)
}

/// Linear-interpolated percentile, `p` in `[0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes).
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(Error::ShortSeries("interpolation needs two or more points".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Params("interpolation nodes must be strictly increasing".into()));
        }
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let s: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d = vec![s[0]; 2];
        } else {
            for k in 1..n - 1 {
                if s[k - 1] * s[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / s[k - 1] + w2 / s[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], s[0], s[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], s[n - 2], s[n - 3]);
        }
        Ok(Pchip { x, y, d })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let k = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.x[k + 1] - self.x[k];
        let u = (t - self.x[k]) / h;
        let (h00, h10) = (2.0 * u.powi(3) - 3.0 * u * u + 1.0, u.powi(3) - 2.0 * u * u + u);
        let (h01, h11) = (-2.0 * u.powi(3) + 3.0 * u * u, u.powi(3) - u * u);
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    /// Solves `eval(t) = target` for a monotone interpolant by bisection.
    pub fn invert(&self, target: f64) -> Result<f64> {
        let (a, b) = self.domain();
        let (ya, yb) = (self.y[0], *self.y.last().unwrap());
        let (lo, hi) = (ya.min(yb), ya.max(yb));
        if !(target >= lo && target <= hi) {
            return Err(Error::OutOfRange { value: target, lo, hi });
        }
        let rising = yb >= ya;
        let (mut l, mut r) = (a, b);
        for _ in 0..200 {
            let m = 0.5 * (l + r);
            if (self.eval(m) < target) == rising {
                l = m;
            } else {
                r = m;
            }
        }
        Ok(0.5 * (l + r))
    }
}

fn end_slope(h0: f64, h1: f64, s0: f64, s1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if d.signum() != s0.signum() {
        0.0
    } else if s0.signum() != s1.signum() && d.abs() > 3.0 * s0.abs() {
        3.0 * s0
    } else {
        d
    }
}
