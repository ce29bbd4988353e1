//! Bulk estimators built from z-basis moments.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lattice::{BulkMask, Lattice};
use crate::sv::{expectation_z, StateVector};

/// Unit normalisation of the structure factor is `(2/3)^2 N_b`.
pub const UNIT_NORM: f64 = 4.0 / 9.0;
/// Guard on the denominator of the symmetry error.
pub const SYM_GUARD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Exact,
    Shots,
    Qmc,
}

/// One- and two-point z moments over a set of sites (usually the bulk).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    /// Lattice indices the table refers to.
    pub sites: Vec<usize>,
    pub m: Vec<f64>,
    /// Row-major `sites.len()^2` table of `<Z_i Z_j>`.
    pub c: Vec<f64>,
    pub n_shots: usize,
    pub source: Source,
    /// Standard error of the bulk magnetisation, when known.
    pub m_stderr: f64,
}

impl MomentTable {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn c(&self, a: usize, b: usize) -> f64 {
        self.c[a * self.sites.len() + b]
    }

    /// Exact moments of a state over the mask's bulk sites.
    pub fn from_state(psi: &StateVector, mask: &BulkMask) -> Self {
        Self::from_state_sites(psi, &mask.bulk)
    }

    pub fn from_state_sites(psi: &StateVector, sites: &[usize]) -> Self {
        let (m, c) = expectation_z(psi, sites);
        MomentTable { sites: sites.to_vec(), m, c, n_shots: 0, source: Source::Exact, m_stderr: 0.0 }
    }

    /// Product state with the given per-site `<Z>`; `c_ij = m_i m_j` off the
    /// diagonal.
    pub fn product(sites: &[usize], m: Vec<f64>) -> Self {
        let k = sites.len();
        let mut c = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..k {
                c[a * k + b] = if a == b { 1.0 } else { m[a] * m[b] };
            }
        }
        MomentTable { sites: sites.to_vec(), m, c, n_shots: 0, source: Source::Exact, m_stderr: 0.0 }
    }

    /// Header `kind,i,j,value`: `m` rows carry `<Z_i>` (with `j = i`), `c`
    /// rows the upper triangle of `<Z_i Z_j>`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["kind", "i", "j", "value"]).map_err(csv_err)?;
        for (a, &i) in self.sites.iter().enumerate() {
            out.write_record(["m", &i.to_string(), &i.to_string(), &fmt(self.m[a])]).map_err(csv_err)?;
        }
        for (a, &i) in self.sites.iter().enumerate() {
            for (b, &j) in self.sites.iter().enumerate().skip(a) {
                out.write_record(["c", &i.to_string(), &j.to_string(), &fmt(self.c(a, b))]).map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> crate::error::Error {
    crate::error::Error::Schema(e.to_string())
}

pub(crate) fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

/// Running sums for building a table from sampled configurations.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    sites: Vec<usize>,
    sum_z: Vec<f64>,
    sum_zz: Vec<f64>,
    sum_m: f64,
    sum_m2: f64,
    count: usize,
    buf: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(sites: &[usize]) -> Self {
        let k = sites.len();
        MomentAccumulator {
            sites: sites.to_vec(),
            sum_z: vec![0.0; k],
            sum_zz: vec![0.0; k * k],
            sum_m: 0.0,
            sum_m2: 0.0,
            count: 0,
            buf: vec![0.0; k],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds one configuration; `rydberg(i)` is the occupation of site `i`.
    pub fn add(&mut self, rydberg: impl Fn(usize) -> bool) {
        let k = self.sites.len();
        for (a, &i) in self.sites.iter().enumerate() {
            self.buf[a] = if rydberg(i) { -1.0 } else { 1.0 };
        }
        let mut mtot = 0.0;
        for a in 0..k {
            let za = self.buf[a];
            mtot += za;
            self.sum_z[a] += za;
            let row = &mut self.sum_zz[a * k..(a + 1) * k];
            for (r, zb) in row.iter_mut().zip(&self.buf) {
                *r += za * zb;
            }
        }
        let mb = mtot / k as f64;
        self.sum_m += mb;
        self.sum_m2 += mb * mb;
        self.count += 1;
    }

    /// Sample variance of the per-configuration bulk magnetisation.
    pub fn m_sample_variance(&self) -> f64 {
        let n = self.count as f64;
        if self.count < 2 {
            return 0.0;
        }
        let mean = self.sum_m / n;
        ((self.sum_m2 / n - mean * mean) * n / (n - 1.0)).max(0.0)
    }

    pub fn finish(&self, source: Source) -> MomentTable {
        let n = self.count.max(1) as f64;
        MomentTable {
            sites: self.sites.clone(),
            m: self.sum_z.iter().map(|s| s / n).collect(),
            c: self.sum_zz.iter().map(|s| s / n).collect(),
            n_shots: self.count,
            source,
            m_stderr: (self.m_sample_variance() / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

pub fn bulk_magnetisation(t: &MomentTable) -> Estimate {
    let value = t.m.iter().sum::<f64>() / t.len() as f64;
    Estimate { value, stderr: t.m_stderr }
}

fn rel(lat: &Lattice, i: usize, j: usize) -> [f64; 2] {
    let (a, b) = (lat.sites()[i], lat.sites()[j]);
    [(a[0] - b[0]) / lat.a, (a[1] - b[1]) / lat.a]
}

/// `(1/N_b) sum_ij cos(q . r_ij) [c_ij - m_i m_j]`, or the non-connected
/// form without the subtraction. `q` is in radians per lattice constant.
pub fn structure_factor(t: &MomentTable, lat: &Lattice, q: [f64; 2], connected: bool) -> f64 {
    let k = t.len();
    let (mut re, mut im) = (0.0, 0.0);
    for a in 0..k {
        for b in 0..k {
            let r = rel(lat, t.sites[a], t.sites[b]);
            let phase = q[0] * r[0] + q[1] * r[1];
            let mut v = t.c(a, b);
            if connected {
                v -= t.m[a] * t.m[b];
            }
            re += phase.cos() * v;
            im += phase.sin() * v;
        }
    }
    debug_assert!(im.abs() <= 1e-9 * re.abs().max(1.0), "imaginary part {im}");
    re / k as f64
}

/// Divides by the perfect-order value `(2/3)^2 N_b`.
pub fn unit_normalise(s: f64, n_b: usize) -> f64 {
    s / (UNIT_NORM * n_b as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalisation {
    Raw,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureFactorMap {
    pub q: Vec<[f64; 2]>,
    pub s: Vec<f64>,
    pub normalisation: Normalisation,
    pub connected: bool,
}

impl StructureFactorMap {
    pub fn compute(t: &MomentTable, lat: &Lattice, grid: &[[f64; 2]], connected: bool, norm: Normalisation) -> Self {
        use rayon::prelude::*;
        let s = grid
            .par_iter()
            .map(|&q| {
                let v = structure_factor(t, lat, q, connected);
                match norm {
                    Normalisation::Raw => v,
                    Normalisation::Unit => unit_normalise(v, t.len()),
                }
            })
            .collect();
        StructureFactorMap { q: grid.to_vec(), s, normalisation: norm, connected }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["qx", "qy", "S"]).map_err(csv_err)?;
        for (q, s) in self.q.iter().zip(&self.s) {
            out.write_record([fmt(q[0]), fmt(q[1]), fmt(*s)]).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Scatter heatmap of the grid, one disc per q-point on a grey scale
    /// from the minimum (white) to the maximum (black).
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (400.0, 400.0, 20.0);
        let xs = self.q.iter().map(|q| q[0]);
        let ys = self.q.iter().map(|q| q[1]);
        let (x0, x1) = min_max(xs);
        let (y0, y1) = min_max(ys);
        let (s0, s1) = min_max(self.s.iter().copied());
        let sx = (w - 2.0 * pad) / (x1 - x0).max(1e-12);
        let sy = (h - 2.0 * pad) / (y1 - y0).max(1e-12);
        let r = 0.6 * (w - 2.0 * pad) / (self.q.len() as f64).sqrt().max(1.0);
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
        );
        svg.push_str(&format!("<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"));
        for (q, s) in self.q.iter().zip(&self.s) {
            let g = if s1 > s0 { (s - s0) / (s1 - s0) } else { 0.0 };
            let level = (255.0 * (1.0 - g)).round() as u8;
            let cx = pad + (q[0] - x0) * sx;
            let cy = h - pad - (q[1] - y0) * sy;
            svg.push_str(&format!(
                "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{r:.2}\" fill=\"rgb({level},{level},{level})\"/>\n"
            ));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementClass {
    /// Lattice-vector components `(dcol, drow)` of `r_j - r_i`.
    pub dcol: i64,
    pub drow: i64,
    pub r: [f64; 2],
    pub value: f64,
    pub n_pairs: usize,
}

/// Connected correlations averaged over all ordered bulk pairs sharing a
/// displacement vector.
pub fn real_space_map(t: &MomentTable, lat: &Lattice) -> Vec<DisplacementClass> {
    let mut acc: BTreeMap<(i64, i64), (f64, usize)> = BTreeMap::new();
    for (a, &i) in t.sites.iter().enumerate() {
        let (ri, ci) = lat.row_col(i);
        for (b, &j) in t.sites.iter().enumerate() {
            let (rj, cj) = lat.row_col(j);
            let key = (cj as i64 - ci as i64, rj as i64 - ri as i64);
            let e = acc.entry(key).or_insert((0.0, 0));
            e.0 += t.c(a, b) - t.m[a] * t.m[b];
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|((dcol, drow), (sum, n))| {
            let (c, r) = (dcol as f64, drow as f64);
            DisplacementClass {
                dcol,
                drow,
                r: [c + 0.5 * r, 0.5 * crate::lattice::SQRT3 * r],
                value: sum / n as f64,
                n_pairs: n,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnCorrelator {
    pub value: f64,
    pub n_bonds: usize,
}

/// Average non-connected `<Z_i Z_j>` over nearest-neighbour bonds with both
/// ends in the table.
pub fn nn_correlator(t: &MomentTable, lat: &Lattice) -> NnCorrelator {
    let pos: BTreeMap<usize, usize> = t.sites.iter().enumerate().map(|(a, &i)| (i, a)).collect();
    let (mut sum, mut n) = (0.0, 0);
    for (i, j) in lat.nn_bonds() {
        if let (Some(&a), Some(&b)) = (pos.get(&i), pos.get(&j)) {
            sum += t.c(a, b);
            n += 1;
        }
    }
    NnCorrelator { value: if n > 0 { sum / n as f64 } else { f64::NAN }, n_bonds: n }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    /// Variance of `M = (1/N_b) sum_bulk Z_i`.
    pub variance: f64,
    /// `F_Q = 4 (Delta A)^2` with `A = sum_bulk Z_i / 2`, i.e. `N_b^2` times
    /// the variance. A true Fisher information only for pure exact states.
    pub fisher: f64,
    pub pure_state: bool,
}

/// Variance of the bulk magnetisation from the moment table. The diagonal
/// `c_ii = 1` is used rather than the measured value, which removes the
/// independent readout-flip noise once the off-diagonal moments are
/// corrected. Sampled tables get the `n/(n-1)` unbiasing factor.
pub fn magnetisation_variance(t: &MomentTable) -> VarianceReport {
    let k = t.len();
    let mut v = 0.0;
    for a in 0..k {
        for b in 0..k {
            let c = if a == b { 1.0 } else { t.c(a, b) };
            v += c - t.m[a] * t.m[b];
        }
    }
    v /= (k * k) as f64;
    if t.source != Source::Exact && t.n_shots > 1 {
        let n = t.n_shots as f64;
        v *= n / (n - 1.0);
    }
    VarianceReport { variance: v, fisher: (k * k) as f64 * v, pure_state: t.source == Source::Exact }
}

/// Orbits of the bulk nearest-neighbour bonds under the rhombus point group
/// (row/column swap and inversion through the centre).
pub fn bond_orbits(t: &MomentTable, lat: &Lattice) -> Vec<Vec<(usize, usize)>> {
    let set: std::collections::BTreeSet<usize> = t.sites.iter().copied().collect();
    let bonds: Vec<(usize, usize)> =
        lat.nn_bonds().into_iter().filter(|(i, j)| set.contains(i) && set.contains(j)).collect();
    let rc: Vec<(i64, i64)> = t.sites.iter().map(|&i| lat.row_col(i)).map(|(r, c)| (r as i64, c as i64)).collect();
    let rsum = rc.iter().map(|p| p.0).min().unwrap_or(0) + rc.iter().map(|p| p.0).max().unwrap_or(0);
    let csum = rc.iter().map(|p| p.1).min().unwrap_or(0) + rc.iter().map(|p| p.1).max().unwrap_or(0);
    let square = lat.lx == lat.ly && rsum == csum;
    let image = |i: usize, g: usize| -> Option<usize> {
        let (r, c) = lat.row_col(i);
        let (r, c) = (r as i64, c as i64);
        let (r2, c2) = match g {
            0 => (r, c),
            1 => (rsum - r, csum - c),
            2 if square => (c, r),
            3 if square => (csum - c, rsum - r),
            _ => return None,
        };
        if r2 < 0 || c2 < 0 || r2 >= lat.ly as i64 || c2 >= lat.lx as i64 {
            return None;
        }
        Some(lat.index(r2 as usize, c2 as usize))
    };
    let key = |i: usize, j: usize| if i < j { (i, j) } else { (j, i) };
    let mut seen = std::collections::BTreeSet::new();
    let mut orbits = Vec::new();
    for &(i, j) in &bonds {
        if seen.contains(&key(i, j)) {
            continue;
        }
        let mut orbit = Vec::new();
        for g in 0..4 {
            if let (Some(a), Some(b)) = (image(i, g), image(j, g)) {
                let k = key(a, b);
                if set.contains(&a) && set.contains(&b) && seen.insert(k) {
                    orbit.push(k);
                }
            }
        }
        orbits.push(orbit);
    }
    orbits
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub orbits: Vec<Vec<(usize, usize)>>,
    /// Largest pairwise relative asymmetry within each orbit.
    pub eps: Vec<f64>,
    pub max_eps: f64,
}

/// `2 |C_a - C_b| / max(|C_a + C_b|, 0.05)`, maximised over pairs of bonds
/// in each symmetry orbit.
pub fn symmetry_diagnostic(t: &MomentTable, lat: &Lattice) -> SymmetryReport {
    let pos: BTreeMap<usize, usize> = t.sites.iter().enumerate().map(|(a, &i)| (i, a)).collect();
    let orbits = bond_orbits(t, lat);
    let eps: Vec<f64> = orbits
        .iter()
        .map(|orbit| {
            let vals: Vec<f64> = orbit.iter().map(|&(i, j)| t.c(pos[&i], pos[&j])).collect();
            let mut worst: f64 = 0.0;
            for a in 0..vals.len() {
                for b in (a + 1)..vals.len() {
                    let e = 2.0 * (vals[a] - vals[b]).abs() / (vals[a] + vals[b]).abs().max(SYM_GUARD);
                    worst = worst.max(e);
                }
            }
            worst
        })
        .collect();
    let max_eps = eps.iter().copied().fold(0.0, f64::max);
    SymmetryReport { orbits, eps, max_eps }
}
