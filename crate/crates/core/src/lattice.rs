//! Triangular lattices in the rhombus geometry used by the atom arrays.
//!
//! Sites are indexed row-major over `(row, col)` with position
//! `r = col * a1 + row * a2`, `a1 = (1, 0) a` and `a2 = (1/2, sqrt(3)/2) a`.
//! The site index is also the bit index of a basis state everywhere else in
//! the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Relative tolerance used to group equal distances into shells.
pub const SHELL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    /// Number of columns (along `a1`).
    pub lx: usize,
    /// Number of rows (along `a2`).
    pub ly: usize,
    pub a: f64,
    pub boundary: Boundary,
    sites: Vec<[f64; 2]>,
}

/// Serialized form: `{"L", "a", "periodic", "sites"}`.
#[derive(Serialize, Deserialize)]
struct LatticeJson {
    #[serde(rename = "L")]
    l: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rows: Option<usize>,
    a: f64,
    periodic: bool,
    sites: Vec<[f64; 2]>,
}

/// Builds an `l x l` rhombus.
///
/// With `commensurate` set, periodic lattices must have `l` divisible by 3 so
/// that the three-sublattice order fits on the torus.
pub fn build_rhombus(l: usize, a: f64, boundary: Boundary, commensurate: bool) -> Result<Lattice> {
    if commensurate && boundary == Boundary::Periodic && l % 3 != 0 {
        return Err(Error::Lattice(format!(
            "periodic lattice with L = {l} is not commensurate with 1/3 order (L must be a multiple of 3)"
        )));
    }
    Lattice::parallelogram(l, l, a, boundary)
}

impl Lattice {
    /// General `lx x ly` parallelogram; the rhombus is `lx == ly`.
    pub fn parallelogram(lx: usize, ly: usize, a: f64, boundary: Boundary) -> Result<Self> {
        if lx < 2 || ly < 1 || lx * ly < 2 {
            return Err(Error::Lattice(format!("lattice {lx}x{ly} is too small (need L >= 2)")));
        }
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::Lattice(format!("lattice constant must be positive, got {a}")));
        }
        let mut sites = Vec::with_capacity(lx * ly);
        for row in 0..ly {
            for col in 0..lx {
                let (c, r) = (col as f64, row as f64);
                sites.push([a * (c + 0.5 * r), a * (0.5 * SQRT3 * r)]);
            }
        }
        Ok(Lattice { lx, ly, a, boundary, sites })
    }

    /// Side length of a rhombus (`lx`).
    pub fn side(&self) -> usize {
        self.lx
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[[f64; 2]] {
        &self.sites
    }

    pub fn is_periodic(&self) -> bool {
        self.boundary == Boundary::Periodic
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.lx + col
    }

    pub fn row_col(&self, i: usize) -> (usize, usize) {
        (i / self.lx, i % self.lx)
    }

    /// Displacement `r_j - r_i` in units of the lattice constant. Periodic
    /// lattices use the minimum image over `lx * a1` and `ly * a2`.
    pub fn displacement(&self, i: usize, j: usize) -> [f64; 2] {
        let (ri, ci) = self.row_col(i);
        let (rj, cj) = self.row_col(j);
        let drow = rj as f64 - ri as f64;
        let dcol = cj as f64 - ci as f64;
        let vec = |c: f64, r: f64| [c + 0.5 * r, 0.5 * SQRT3 * r];
        if !self.is_periodic() {
            return vec(dcol, drow);
        }
        let mut best = vec(dcol, drow);
        let mut best_n2 = f64::INFINITY;
        for m in -1i32..=1 {
            for k in -1i32..=1 {
                let v = vec(dcol + (m * self.lx as i32) as f64, drow + (k * self.ly as i32) as f64);
                let n2 = v[0] * v[0] + v[1] * v[1];
                if n2 < best_n2 - 1e-12 {
                    best_n2 = n2;
                    best = v;
                }
            }
        }
        best
    }

    /// Physical distance between two sites (same units as `a`).
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        // canonical order keeps d(i, j) and d(j, i) bit-identical
        let d = self.displacement(i.min(j), i.max(j));
        self.a * (d[0] * d[0] + d[1] * d[1]).sqrt()
    }

    /// Distinct pair distances (units of `a`), ascending, grouped with
    /// relative tolerance [`SHELL_TOL`].
    pub fn shell_distances(&self) -> Vec<f64> {
        let n = self.n_sites();
        let mut all = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                all.push(self.distance(i, j) / self.a);
            }
        }
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut shells: Vec<f64> = Vec::new();
        for d in all {
            match shells.last() {
                Some(&last) if (d - last).abs() <= SHELL_TOL * last => {}
                _ => shells.push(d),
            }
        }
        shells
    }

    /// Shell index (1-based) of the pair, if it is within the known shells.
    pub fn shell_of(&self, shells: &[f64], i: usize, j: usize) -> Option<usize> {
        let d = self.distance(i, j) / self.a;
        shells
            .iter()
            .position(|&s| (d - s).abs() <= SHELL_TOL * s)
            .map(|k| k + 1)
    }

    /// Per-site lists of `(neighbour, shell)` for shells `1..=max_shell`.
    pub fn neighbor_shells(&self, max_shell: usize) -> Vec<Vec<(usize, usize)>> {
        let shells = self.shell_distances();
        let n = self.n_sites();
        let mut out = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                if let Some(s) = self.shell_of(&shells, i, j) {
                    if s <= max_shell {
                        out[i].push((j, s));
                    }
                }
            }
            out[i].sort_by_key(|&(j, s)| (s, j));
        }
        out
    }

    /// Nearest-neighbour bonds `(i, j)` with `i < j`.
    pub fn nn_bonds(&self) -> Vec<(usize, usize)> {
        let n = self.n_sites();
        let mut bonds = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.distance(i, j) / self.a - 1.0).abs() <= SHELL_TOL {
                    bonds.push((i, j));
                }
            }
        }
        bonds
    }

    /// Elementary triangles `[i, j, k]`: both up (`(r,c),(r,c+1),(r+1,c)`) and
    /// down (`(r,c+1),(r+1,c),(r+1,c+1)`) orientations, wrapping on periodic
    /// lattices.
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        let (lx, ly) = (self.lx, self.ly);
        let periodic = self.is_periodic();
        let mut tris = Vec::new();
        let wrap = |r: usize, c: usize| -> Option<usize> {
            if periodic {
                Some(self.index(r % ly, c % lx))
            } else if r < ly && c < lx {
                Some(self.index(r, c))
            } else {
                None
            }
        };
        for r in 0..ly {
            for c in 0..lx {
                if let (Some(a), Some(b), Some(d)) = (wrap(r, c), wrap(r, c + 1), wrap(r + 1, c)) {
                    tris.push([a, b, d]);
                }
                if let (Some(b), Some(d), Some(e)) = (wrap(r, c + 1), wrap(r + 1, c), wrap(r + 1, c + 1)) {
                    tris.push([b, d, e]);
                }
            }
        }
        tris
    }

    /// Sublattice label `(col + 2 row) mod 3`; the three sites of every
    /// elementary triangle carry distinct labels.
    pub fn sublattice(&self, i: usize) -> usize {
        let (row, col) = self.row_col(i);
        (col + 2 * row) % 3
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(LatticeJson {
            l: self.lx,
            rows: (self.ly != self.lx).then_some(self.ly),
            a: self.a,
            periodic: self.is_periodic(),
            sites: self.sites.clone(),
        })
        .expect("lattice serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let raw: LatticeJson =
            serde_json::from_value(v.clone()).map_err(|e| Error::Lattice(e.to_string()))?;
        let boundary = if raw.periodic { Boundary::Periodic } else { Boundary::Open };
        let lat = Lattice::parallelogram(raw.l, raw.rows.unwrap_or(raw.l), raw.a, boundary)?;
        let same = lat.sites.len() == raw.sites.len()
            && lat
                .sites
                .iter()
                .zip(&raw.sites)
                .all(|(p, q)| (p[0] - q[0]).abs() <= 1e-9 * raw.a && (p[1] - q[1]).abs() <= 1e-9 * raw.a);
        if !same {
            return Err(Error::Lattice("site list does not match the declared geometry".into()));
        }
        Ok(lat)
    }
}

/// Estimator region: the bulk `(L-4) x (L-4)` core and the one-site guard
/// ring around it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BulkMask {
    pub bulk: Vec<usize>,
    pub guard: Vec<usize>,
    /// Set when the lattice is too small to have a bulk.
    pub empty_bulk: bool,
}

impl BulkMask {
    /// Treats every site as bulk. Used for lattices smaller than `L = 5`.
    pub fn full(lat: &Lattice) -> Self {
        BulkMask { bulk: (0..lat.n_sites()).collect(), guard: Vec::new(), empty_bulk: false }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.bulk.binary_search(&i).is_ok()
    }

    pub fn in_guard(&self, i: usize) -> bool {
        self.guard.binary_search(&i).is_ok()
    }

    pub fn len(&self) -> usize {
        self.bulk.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bulk.is_empty()
    }
}

/// Bulk = rows and columns in `[2, L-3]`; guard = rows and columns in
/// `[1, L-2]` minus the bulk.
pub fn bulk_mask(lat: &Lattice) -> BulkMask {
    let inside = |v: usize, lo: usize, len: usize| len >= lo + 1 + lo && v >= lo && v + lo < len;
    let mut bulk = Vec::new();
    let mut guard = Vec::new();
    for i in 0..lat.n_sites() {
        let (r, c) = lat.row_col(i);
        if inside(r, 2, lat.ly) && inside(c, 2, lat.lx) {
            bulk.push(i);
        } else if inside(r, 1, lat.ly) && inside(c, 1, lat.lx) {
            guard.push(i);
        }
    }
    if bulk.is_empty() {
        log::warn!("lattice {}x{} has an empty bulk region", lat.lx, lat.ly);
        guard.clear();
    }
    let empty_bulk = bulk.is_empty();
    BulkMask { bulk, guard, empty_bulk }
}

/// Ordering wavevector of the three-sublattice phase, `(2 pi / 3)(1, sqrt 3)`
/// in radians per lattice constant.
pub fn q_one_third() -> [f64; 2] {
    let k = 2.0 * std::f64::consts::PI / 3.0;
    [k, k * SQRT3]
}

/// Reciprocal primitive vectors `b1, b2` with `a_i . b_j = 2 pi delta_ij`
/// (units of 1/a).
pub fn reciprocal_vectors() -> [[f64; 2]; 2] {
    let tau = 2.0 * std::f64::consts::PI;
    [[tau, -tau / SQRT3], [0.0, 2.0 * tau / SQRT3]]
}

/// `m x m` grid covering one Brillouin-zone cell: `q = (u/m) b1 + (v/m) b2`.
pub fn bz_grid(m: usize) -> Vec<[f64; 2]> {
    let [b1, b2] = reciprocal_vectors();
    let mut out = Vec::with_capacity(m * m);
    for u in 0..m {
        for v in 0..m {
            let (fu, fv) = (u as f64 / m as f64, v as f64 / m as f64);
            out.push([fu * b1[0] + fv * b2[0], fu * b1[1] + fv * b2[1]]);
        }
    }
    out
}
