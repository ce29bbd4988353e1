//! Material and device Hamiltonians and the exact map between them.
//!
//! All energies are angular frequencies (rad/s when physical units are used);
//! `hbar` is implicitly 1. The device Hamiltonian is
//!
//! `H_dev = sum_{i<j} U_ij n_i n_j + (Omega/2) sum_i X_i - delta sum_i n_i`
//!
//! with `n = (1 - Z)/2`, and the material Hamiltonian is
//!
//! `H_mat = J1 sum_<ij> Z_i Z_j + J2 sum_<<ij>> Z_i Z_j + sum_i (Dx X_i - Dz Z_i)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;

/// 2 pi x 1 MHz in rad/s.
pub const TWO_PI_MHZ: f64 = 2.0 * PI * 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub j1: f64,
    pub j2: f64,
    pub dx: f64,
    pub dz: f64,
}

impl MaterialParams {
    /// Defaults for the material: `J2 = 0.05 J1`, `Dx = 1.08 J1`.
    pub fn tmgo(j1: f64, dz_over_j1: f64) -> Self {
        MaterialParams { j1, j2: 0.05 * j1, dx: 1.08 * j1, dz: dz_over_j1 * j1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.j1 > 0.0) {
            return Err(Error::Params(format!("J1 must be positive, got {}", self.j1)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceLimits {
    pub omega_max: f64,
    pub delta_max: f64,
}

impl Default for DeviceLimits {
    fn default() -> Self {
        DeviceLimits { omega_max: 2.0 * TWO_PI_MHZ, delta_max: 14.0 * TWO_PI_MHZ }
    }
}

impl DeviceLimits {
    /// No ceilings; for runs in dimensionless units.
    pub fn unbounded() -> Self {
        DeviceLimits { omega_max: f64::INFINITY, delta_max: f64::INFINITY }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Van der Waals coefficient, angular frequency x length^6.
    pub c6: f64,
    /// Lattice spacing.
    pub r1: f64,
    pub omega: f64,
    pub delta: f64,
    #[serde(default)]
    pub limits: DeviceLimits,
}

impl DeviceParams {
    /// `C6 = 2 pi x 1949 GHz um^6`, `r1 = 9 um`, zero drive.
    pub fn default_physical() -> Self {
        DeviceParams {
            c6: 1949e3 * TWO_PI_MHZ,
            r1: 9.0,
            omega: 0.0,
            delta: 0.0,
            limits: DeviceLimits::default(),
        }
    }

    /// Dimensionless device with `U1 = 4` (so `J1 = 1`), spacing 1 and no limits.
    pub fn unit_j1(omega: f64, delta: f64) -> Self {
        DeviceParams { c6: 4.0, r1: 1.0, omega, delta, limits: DeviceLimits::unbounded() }
    }

    /// Nearest-neighbour interaction `C6 / r1^6`.
    pub fn u1(&self) -> f64 {
        self.c6 / self.r1.powi(6)
    }

    pub fn j1(&self) -> f64 {
        self.u1() / 4.0
    }

    pub fn with_drive(&self, omega: f64, delta: f64) -> Self {
        DeviceParams { omega, delta, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c6 > 0.0) || !(self.r1 > 0.0) {
            return Err(Error::Params(format!("C6 and r1 must be positive (C6 = {}, r1 = {})", self.c6, self.r1)));
        }
        self.check_drive(self.omega, self.delta)
    }

    pub fn check_drive(&self, omega: f64, delta: f64) -> Result<()> {
        let tol = 1e-9;
        if omega < 0.0 {
            return Err(Error::Params(format!("Rabi frequency must be non-negative, got {omega}")));
        }
        if omega > self.limits.omega_max * (1.0 + tol) {
            return Err(Error::Params(format!(
                "Rabi frequency {omega:.6e} exceeds the device ceiling {:.6e}",
                self.limits.omega_max
            )));
        }
        if delta.abs() > self.limits.delta_max * (1.0 + tol) {
            return Err(Error::Params(format!(
                "detuning {delta:.6e} outside the device range +/-{:.6e}",
                self.limits.delta_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldCalibration {
    /// `Dz / J1` per tesla.
    pub slope: f64,
    pub j1_physical: f64,
}

impl Default for FieldCalibration {
    fn default() -> Self {
        FieldCalibration { slope: 1.543, j1_physical: 2.0 * PI * 60e9 }
    }
}

pub fn field_to_dz(mu0_h: f64, cal: &FieldCalibration) -> f64 {
    cal.slope * mu0_h
}

pub fn dz_to_field(dz_over_j1: f64, cal: &FieldCalibration) -> f64 {
    dz_over_j1 / cal.slope
}

/// How `delta_U = (1/2) sum_ij U_ij / N` counts pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSum {
    /// Sum over ordered pairs, i.e. `delta_U = sum_{i<j} U_ij / N`.
    #[default]
    Ordered,
    /// Sum over unordered pairs, `delta_U = (1/2) sum_{i<j} U_ij / N`.
    Unordered,
}

/// Dense symmetric matrix of pair energies `U_ij = C6 / r_ij^6`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    n: usize,
    u: Vec<f64>,
}

impl InteractionMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.u[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.u[i * self.n..(i + 1) * self.n]
    }

    /// `(i, j, U_ij)` for `i < j` with nonzero coupling.
    pub fn pairs(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let v = self.get(i, j);
                if v != 0.0 {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    pub fn total_pair_sum(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                s += self.get(i, j);
            }
        }
        s
    }

    /// Uniform detuning offset `delta_U`.
    pub fn delta_u(&self, conv: PairSum) -> f64 {
        let ordered = self.total_pair_sum() / self.n as f64;
        match conv {
            PairSum::Ordered => ordered,
            PairSum::Unordered => 0.5 * ordered,
        }
    }
}

/// Full `r^-6` interaction matrix (no truncation).
pub fn interactions(lat: &Lattice, dev: &DeviceParams) -> InteractionMatrix {
    build_interactions(lat, dev, None)
}

/// Interaction matrix keeping only pairs within shell `max_shell`.
pub fn interactions_truncated(lat: &Lattice, dev: &DeviceParams, max_shell: usize) -> InteractionMatrix {
    build_interactions(lat, dev, Some(max_shell))
}

fn build_interactions(lat: &Lattice, dev: &DeviceParams, max_shell: Option<usize>) -> InteractionMatrix {
    let n = lat.n_sites();
    let shells = max_shell.map(|_| lat.shell_distances());
    let mut u = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            if let (Some(k), Some(sh)) = (max_shell, shells.as_ref()) {
                match lat.shell_of(sh, i, j) {
                    Some(s) if s <= k => {}
                    _ => continue,
                }
            }
            // Distances in units of r1; the lattice constant is only geometry.
            let rho = lat.distance(i, j) / lat.a;
            let v = dev.u1() / rho.powi(6);
            u[i * n + j] = v;
            u[j * n + i] = v;
        }
    }
    InteractionMatrix { n, u }
}

/// Ising form `sum_{i<j} J_ij Z_i Z_j + sum_i hz_i Z_i + hx sum_i X_i + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingForm {
    pub n: usize,
    pub couplings: Vec<(usize, usize, f64)>,
    pub hz: Vec<f64>,
    pub hx: f64,
    pub constant: f64,
}

/// z-diagonal part in occupation variables:
/// `sum_{i<j} V_ij n_i n_j + sum_i mu_i n_i + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalForm {
    pub n: usize,
    pub pairs: Vec<(usize, usize, f64)>,
    pub site: Vec<f64>,
    pub constant: f64,
}

impl DiagonalForm {
    pub fn energy(&self, state: u64) -> f64 {
        let occ = |i: usize| ((state >> i) & 1) as f64;
        let mut e = self.constant;
        for &(i, j, v) in &self.pairs {
            e += v * occ(i) * occ(j);
        }
        for (i, &m) in self.site.iter().enumerate() {
            e += m * occ(i);
        }
        e
    }

    pub fn energy_bits(&self, occ: &[bool]) -> f64 {
        let mut e = self.constant;
        for &(i, j, v) in &self.pairs {
            if occ[i] && occ[j] {
                e += v;
            }
        }
        for (i, &m) in self.site.iter().enumerate() {
            if occ[i] {
                e += m;
            }
        }
        e
    }

    /// Infinite-temperature average `Tr D / 2^N`.
    pub fn trace_average(&self) -> f64 {
        self.constant
            + 0.25 * self.pairs.iter().map(|p| p.2).sum::<f64>()
            + 0.5 * self.site.iter().sum::<f64>()
    }

    pub fn negated(&self) -> Self {
        DiagonalForm {
            n: self.n,
            pairs: self.pairs.iter().map(|&(i, j, v)| (i, j, -v)).collect(),
            site: self.site.iter().map(|m| -m).collect(),
            constant: -self.constant,
        }
    }
}

/// A z-diagonal part, a uniform term multiplying the Rydberg count, and a
/// uniform transverse field: `D + count_coeff * sum_i n_i + hx sum_i X_i`.
///
/// The device Hamiltonian has `count_coeff = -delta`, `hx = Omega/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinHamiltonian {
    pub diag: DiagonalForm,
    pub count_coeff: f64,
    pub hx: f64,
}

impl SpinHamiltonian {
    pub fn n(&self) -> usize {
        self.diag.n
    }

    /// Device Hamiltonian at fixed `(Omega, delta)`.
    pub fn rydberg(u: &InteractionMatrix, omega: f64, delta: f64) -> Self {
        SpinHamiltonian {
            diag: DiagonalForm { n: u.n(), pairs: u.pairs(), site: vec![0.0; u.n()], constant: 0.0 },
            count_coeff: -delta,
            hx: 0.5 * omega,
        }
    }

    pub fn from_ising(f: &IsingForm) -> Self {
        // Z = 1 - 2n: Z_i Z_j = 1 - 2 n_i - 2 n_j + 4 n_i n_j.
        let n = f.n;
        let mut site = vec![0.0; n];
        let mut constant = f.constant;
        let mut pairs = Vec::with_capacity(f.couplings.len());
        for &(i, j, jij) in &f.couplings {
            constant += jij;
            site[i] -= 2.0 * jij;
            site[j] -= 2.0 * jij;
            pairs.push((i, j, 4.0 * jij));
        }
        for (i, &h) in f.hz.iter().enumerate() {
            constant += h;
            site[i] -= 2.0 * h;
        }
        SpinHamiltonian { diag: DiagonalForm { n, pairs, site, constant }, count_coeff: 0.0, hx: f.hx }
    }

    /// Diagonal energy of a basis state.
    pub fn diagonal(&self, state: u64) -> f64 {
        self.diag.energy(state) + self.count_coeff * state.count_ones() as f64
    }

    /// Diagonal energy of an occupation pattern of any size.
    pub fn diagonal_bits(&self, occ: &[bool]) -> f64 {
        self.diag.energy_bits(occ) + self.count_coeff * occ.iter().filter(|&&o| o).count() as f64
    }

    /// `Tr H / 2^N`.
    pub fn trace_average(&self) -> f64 {
        self.diag.trace_average() + 0.5 * self.count_coeff * self.n() as f64
    }

    /// `-H`, used for negative temperatures.
    pub fn negated(&self) -> Self {
        SpinHamiltonian { diag: self.diag.negated(), count_coeff: -self.count_coeff, hx: -self.hx }
    }

    /// Folds the count term into the site energies.
    pub fn folded_diagonal(&self) -> DiagonalForm {
        let mut d = self.diag.clone();
        for m in d.site.iter_mut() {
            *m += self.count_coeff;
        }
        d
    }
}

/// Exact Ising rewriting of the device Hamiltonian, constant included.
pub fn rydberg_ising_form(u: &InteractionMatrix, omega: f64, delta: f64) -> IsingForm {
    let n = u.n();
    let mut couplings = Vec::new();
    let mut hz = vec![0.0; n];
    let mut constant = -0.5 * delta * n as f64;
    for (i, j, v) in u.pairs() {
        couplings.push((i, j, 0.25 * v));
        hz[i] -= 0.25 * v;
        hz[j] -= 0.25 * v;
        constant += 0.25 * v;
    }
    for h in hz.iter_mut() {
        *h += 0.5 * delta;
    }
    IsingForm { n, couplings, hz, hx: 0.5 * omega, constant }
}

/// Terms by which the device Hamiltonian differs from the material one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    /// Site-dependent longitudinal fields `Dz_i` (coefficient of `+Z_i`).
    pub site_fields: Vec<f64>,
    /// Couplings `U_ij / 4` beyond the second shell.
    pub tail: Vec<(usize, usize, f64)>,
    /// Coefficient of the next-nearest `Z Z` mismatch, `-(J2 - J1/27)`.
    pub nnn_mismatch: f64,
    /// Pairs in the second shell the mismatch acts on.
    pub nnn_pairs: Vec<(usize, usize)>,
    /// Pairs in the first shell.
    pub nn_pairs: Vec<(usize, usize)>,
    /// Identity offset so that `H_dev = H_mat + H_diff + offset` holds exactly.
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mapping {
    pub material: MaterialParams,
    /// Next-nearest coupling realised by the device, `U2 / 4 = J1 / 27` on an
    /// ideal lattice.
    pub j2_device: f64,
    pub delta_u: f64,
    pub residual: Residual,
}

impl Mapping {
    pub fn dx_over_j1(&self) -> f64 {
        self.material.dx / self.material.j1
    }

    pub fn dz_over_j1(&self) -> f64 {
        self.material.dz / self.material.j1
    }

    /// `H_mat + H_diff + offset` as an Ising form; equals the device
    /// Hamiltonian exactly.
    pub fn material_plus_residual(&self) -> IsingForm {
        let m = &self.material;
        let r = &self.residual;
        let n = r.site_fields.len();
        let mut couplings = Vec::new();
        for &(i, j) in &r.nn_pairs {
            couplings.push((i, j, m.j1));
        }
        for &(i, j) in &r.nnn_pairs {
            couplings.push((i, j, m.j2 + r.nnn_mismatch));
        }
        couplings.extend(r.tail.iter().copied());
        let hz = r.site_fields.iter().map(|f| f - m.dz).collect();
        IsingForm { n, couplings, hz, hx: m.dx, constant: r.offset }
    }
}

/// Maps a device set point onto material parameters.
///
/// `j2_target_over_j1` is the material next-nearest coupling the residual's
/// mismatch term is measured against (0.05 for the material).
pub fn map_device_to_material(
    dev: &DeviceParams,
    lat: &Lattice,
    conv: PairSum,
    j2_target_over_j1: f64,
) -> Mapping {
    let u = interactions(lat, dev);
    let n = lat.n_sites();
    let j1 = dev.j1();
    let delta_u = u.delta_u(conv);
    let dz = 0.5 * (delta_u - dev.delta);
    let dx = 0.5 * dev.omega;
    let j2 = j2_target_over_j1 * j1;

    let shells = lat.shell_distances();
    let mut nn_pairs = Vec::new();
    let mut nnn_pairs = Vec::new();
    let mut tail = Vec::new();
    let mut j2_device = j1 / 27.0;
    for i in 0..n {
        for j in (i + 1)..n {
            match lat.shell_of(&shells, i, j) {
                Some(1) => nn_pairs.push((i, j)),
                Some(2) => {
                    j2_device = 0.25 * u.get(i, j);
                    nnn_pairs.push((i, j));
                }
                _ => tail.push((i, j, 0.25 * u.get(i, j))),
            }
        }
    }
    // The Ising rewrite has hz_i = delta/2 - sum_j U_ij/4 and the material
    // part supplies -Dz = delta/2 - delta_U/2, leaving delta_U/2 - sum_j U_ij/4
    // (any pair-sum convention, since Dz uses the same delta_U).
    let site_fields: Vec<f64> =
        (0..n).map(|i| 0.5 * delta_u - 0.25 * u.row(i).iter().sum::<f64>()).collect();
    let form = rydberg_ising_form(&u, dev.omega, dev.delta);
    let residual = Residual {
        site_fields,
        tail,
        nnn_mismatch: -(j2 - j2_device),
        nnn_pairs,
        nn_pairs,
        offset: form.constant,
    };
    Mapping { material: MaterialParams { j1, j2, dx, dz }, j2_device, delta_u, residual }
}

/// Inverse map: picks `r1` so that `U1/4 = J1`, then `Omega = 2 Dx` and
/// `delta = delta_U - 2 Dz`.
pub fn map_material_to_device(
    mat: &MaterialParams,
    template: &DeviceParams,
    lat: &Lattice,
    conv: PairSum,
) -> Result<DeviceParams> {
    mat.validate()?;
    let r1 = (template.c6 / (4.0 * mat.j1)).powf(1.0 / 6.0);
    let mut dev = DeviceParams { r1, omega: 2.0 * mat.dx, delta: 0.0, ..*template };
    let u = interactions(lat, &dev);
    dev.delta = u.delta_u(conv) - 2.0 * mat.dz;
    if dev.omega < 0.0 || dev.omega > dev.limits.omega_max * (1.0 + 1e-9) {
        return Err(Error::Unreachable(format!(
            "required Omega = {:.6e} exceeds the ceiling {:.6e}",
            dev.omega, dev.limits.omega_max
        )));
    }
    if dev.delta.abs() > dev.limits.delta_max * (1.0 + 1e-9) {
        return Err(Error::Unreachable(format!(
            "required delta = {:.6e} outside +/-{:.6e}",
            dev.delta, dev.limits.delta_max
        )));
    }
    Ok(dev)
}

/// Device detuning realising `Dz / J1` on `lat`.
pub fn delta_for_dz(dev: &DeviceParams, lat: &Lattice, dz_over_j1: f64, conv: PairSum) -> f64 {
    interactions(lat, dev).delta_u(conv) - 2.0 * dz_over_j1 * dev.j1()
}

/// Device Rabi frequency realising `Dx / J1`.
pub fn omega_for_dx(dev: &DeviceParams, dx_over_j1: f64) -> f64 {
    2.0 * dx_over_j1 * dev.j1()
}

/// Material Hamiltonian on `lat` as an Ising form (first two shells).
pub fn material_ising_form(mat: &MaterialParams, lat: &Lattice) -> IsingForm {
    let shells = lat.shell_distances();
    let n = lat.n_sites();
    let mut couplings = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            match lat.shell_of(&shells, i, j) {
                Some(1) => couplings.push((i, j, mat.j1)),
                Some(2) if mat.j2 != 0.0 => couplings.push((i, j, mat.j2)),
                _ => {}
            }
        }
    }
    IsingForm { n, couplings, hz: vec![-mat.dz; n], hx: mat.dx, constant: 0.0 }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalEnergies {
    /// Energy per site of the polarised state, units of J1.
    pub e_up: f64,
    /// Energy per site of the three-sublattice state, units of J1.
    pub e_one_third: f64,
    /// `Dz / J1` where the two are degenerate.
    pub crossing: f64,
}

/// Per-site classical energies on the infinite lattice. With `j2_over_j1`,
/// the next-nearest term (`+3 J2` in both states, since next-nearest
/// neighbours share a sublattice) is included.
pub fn classical_energies(dz_over_j1: f64, j2_over_j1: Option<f64>) -> ClassicalEnergies {
    let nnn = 3.0 * j2_over_j1.unwrap_or(0.0);
    let e_up = 3.0 - dz_over_j1 + nnn;
    let e_one_third = -1.0 - dz_over_j1 / 3.0 + nnn;
    // (3 + nnn) - x = (-1 + nnn) - x/3  =>  x = 6
    let crossing = ((3.0 + nnn) - (-1.0 + nnn)) / (1.0 - 1.0 / 3.0);
    ClassicalEnergies { e_up, e_one_third, crossing }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_rhombus, Boundary, Lattice};
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn published_device_constants() {
        let dev = DeviceParams::default_physical();
        let u1_mhz = dev.u1() / TWO_PI_MHZ;
        assert!((u1_mhz - 1949e3 / 531_441.0).abs() < 1e-12);
        assert!((u1_mhz - 3.667).abs() < 5e-4);
    }

    #[test]
    fn shell_ratios() {
        let lat = build_rhombus(5, 9.0, Boundary::Open, false).unwrap();
        let dev = DeviceParams::default_physical();
        let u = interactions(&lat, &dev);
        let c = lat.index(2, 2);
        let u1 = u.get(c, lat.index(2, 3));
        let u2 = u.get(c, lat.index(3, 3));
        let u3 = u.get(c, lat.index(2, 4));
        assert!(rel(u1 / u2, 27.0) < 1e-12);
        assert!(rel(u1 / u3, 64.0) < 1e-12);
        for i in 0..u.n() {
            assert_eq!(u.get(i, i), 0.0);
            for j in 0..u.n() {
                assert_eq!(u.get(i, j), u.get(j, i));
            }
        }
    }

    #[test]
    fn mapping_examples() {
        let lat = build_rhombus(7, 9.0, Boundary::Open, false).unwrap();
        let mut dev = DeviceParams::default_physical();
        dev.c6 = 3.7 * TWO_PI_MHZ * 9f64.powi(6);
        dev.omega = 2.0 * TWO_PI_MHZ;
        let m = map_device_to_material(&dev, &lat, PairSum::Ordered, 0.05);
        assert!((m.dx_over_j1() - 1.081).abs() < 1e-3);
        assert!(rel(m.j2_device, m.material.j1 / 27.0) < 1e-12);
        let coeff = m.residual.nnn_mismatch / m.material.j1;
        assert!((coeff + (0.05 - 1.0 / 27.0)).abs() < 1e-12);
        assert!((coeff * 100.0 + 1.3).abs() < 0.01);
    }

    #[test]
    fn periodic_residual_fields_vanish() {
        let lat = build_rhombus(6, 1.0, Boundary::Periodic, true).unwrap();
        let dev = DeviceParams::unit_j1(1.0, 3.0);
        let m = map_device_to_material(&dev, &lat, PairSum::Ordered, 0.05);
        let max = m.residual.site_fields.iter().fold(0.0f64, |a, f| a.max(f.abs()));
        assert!(max < 1e-12, "{max}");
    }

    #[test]
    fn open_bulk_residual_is_flat_and_shrinks() {
        // On open lattices the bulk fields share a common offset (edges pull
        // the lattice average down) plus an r^-6 tail from missing sites.
        let dev = DeviceParams::unit_j1(1.0, 3.0);
        let mut offsets = Vec::new();
        for l in [7, 10, 13, 16] {
            let lat = build_rhombus(l, 1.0, Boundary::Open, false).unwrap();
            let m = map_device_to_material(&dev, &lat, PairSum::Ordered, 0.05);
            let mask = crate::lattice::bulk_mask(&lat);
            let f: Vec<f64> = mask.bulk.iter().map(|&i| m.residual.site_fields[i]).collect();
            let hi = f.iter().cloned().fold(f64::MIN, f64::max);
            let lo = f.iter().cloned().fold(f64::MAX, f64::min);
            assert!(hi - lo < 0.05 * dev.j1(), "L = {l}: spread {}", hi - lo);
            offsets.push(f.iter().map(|x| x.abs()).sum::<f64>() / f.len() as f64);
        }
        assert!(offsets.windows(2).all(|w| w[1] < w[0]), "{offsets:?}");
    }

    #[test]
    fn material_to_device_examples() {
        let lat = build_rhombus(7, 9.0, Boundary::Open, false).unwrap();
        let mut tmpl = DeviceParams::default_physical();
        tmpl.c6 = 3.7 * TWO_PI_MHZ * 9f64.powi(6);
        let j1 = 3.7 * TWO_PI_MHZ / 4.0;
        let mat = MaterialParams { j1, j2: 0.05 * j1, dx: 1.08 * j1, dz: 0.0 };
        let dev = map_material_to_device(&mat, &tmpl, &lat, PairSum::Ordered).unwrap();
        assert!((dev.omega / TWO_PI_MHZ - 2.0).abs() < 5e-3);
        assert!(rel(dev.r1, 9.0) < 1e-12);
        let du = interactions(&lat, &dev).delta_u(PairSum::Ordered);
        assert!(rel(dev.delta, du) < 1e-12);

        let too_strong = MaterialParams { dx: 1.2 * j1, ..mat };
        assert!(matches!(
            map_material_to_device(&too_strong, &tmpl, &lat, PairSum::Ordered),
            Err(Error::Unreachable(_))
        ));
        let too_far = MaterialParams { dz: -20.0 * j1, ..mat };
        assert!(matches!(map_material_to_device(&too_far, &tmpl, &lat, PairSum::Ordered), Err(Error::Unreachable(_))));
    }

    #[test]
    fn classical_crossing() {
        let c = classical_energies(0.0, None);
        assert_eq!((c.e_up, c.e_one_third), (3.0, -1.0));
        assert!((c.crossing - 6.0).abs() < 1e-15);
        let c2 = classical_energies(6.0, Some(0.05));
        assert!((c2.e_up - c2.e_one_third).abs() < 1e-12);
    }

    #[test]
    fn field_calibration() {
        let cal = FieldCalibration::default();
        assert_eq!(field_to_dz(0.0, &cal), 0.0);
        assert!((field_to_dz(3.89, &cal) - 6.0).abs() < 5e-3);
        assert!((dz_to_field(3.87, &cal) - 2.51).abs() < 5e-3);
        assert!((field_to_dz(18.0, &cal) - 27.8).abs() < 5e-2);
    }

    #[test]
    fn unordered_convention_halves_delta_u() {
        let lat = build_rhombus(4, 1.0, Boundary::Open, false).unwrap();
        let u = interactions(&lat, &DeviceParams::unit_j1(0.0, 0.0));
        assert!(rel(u.delta_u(PairSum::Unordered) * 2.0, u.delta_u(PairSum::Ordered)) < 1e-15);
    }

    #[test]
    fn device_limits_enforced() {
        let dev = DeviceParams::default_physical();
        assert!(dev.check_drive(2.0 * TWO_PI_MHZ, 14.0 * TWO_PI_MHZ).is_ok());
        assert!(dev.check_drive(2.1 * TWO_PI_MHZ, 0.0).is_err());
        assert!(dev.check_drive(1.0, -15.0 * TWO_PI_MHZ).is_err());
        assert!(dev.check_drive(-1.0, 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn ratios_are_scale_covariant(
            l in 2usize..6,
            c6 in 1.0f64..1e7,
            r1 in 1.0f64..12.0,
            omega in 0.0f64..10.0,
            delta in -30.0f64..30.0,
            k in -4i32..5,
            s in 0.3f64..3.0,
        ) {
            let map = |c6: f64, r1: f64| {
                let lat = build_rhombus(l, r1, Boundary::Open, false).unwrap();
                let dev = DeviceParams { c6, r1, omega, delta, limits: DeviceLimits::unbounded() };
                let m = map_device_to_material(&dev, &lat, PairSum::Ordered, 0.05);
                (m.dx_over_j1(), m.dz_over_j1())
            };
            let base = map(c6, r1);
            // powers of two scale without rounding
            let p = 2f64.powi(k);
            prop_assert_eq!(map(c6 * p.powi(6), r1 * p), base);
            let (dx, dz) = map(c6 * s.powi(6), r1 * s);
            prop_assert!((dx - base.0).abs() <= 1e-13 * base.0.abs().max(1.0));
            prop_assert!((dz - base.1).abs() <= 1e-12 * base.1.abs().max(1.0));
        }

        #[test]
        fn device_form_equals_material_plus_residual(
            lx in 2usize..5,
            ly in 1usize..4,
            periodic in any::<bool>(),
            omega in 0.0f64..5.0,
            delta in -20.0f64..20.0,
            j2 in 0.0f64..0.2,
            state in any::<u64>(),
        ) {
            prop_assume!(!periodic || ly >= 2);
            let b = if periodic { Boundary::Periodic } else { Boundary::Open };
            let lat = Lattice::parallelogram(lx, ly, 1.0, b).unwrap();
            let dev = DeviceParams::unit_j1(omega, delta);
            let u = interactions(&lat, &dev);
            let h = SpinHamiltonian::rydberg(&u, omega, delta);
            let f = map_device_to_material(&dev, &lat, PairSum::Ordered, j2).material_plus_residual();
            let g = SpinHamiltonian::from_ising(&f);
            let n = lat.n_sites();
            let s = state & ((1u64 << n) - 1);
            let (a, c) = (h.diagonal(s), g.diagonal(s));
            prop_assert!((a - c).abs() <= 1e-10 * a.abs().max(1.0), "{} vs {}", a, c);
            prop_assert!((h.hx - g.hx).abs() <= 1e-12 * h.hx.abs().max(1.0));
        }

        #[test]
        fn periodic_residual_fields_vanish_for_any_drive(k in 1usize..4, omega in 0.0f64..5.0, delta in -20.0f64..20.0) {
            let lat = build_rhombus(3 * k, 1.0, Boundary::Periodic, true).unwrap();
            let m = map_device_to_material(&DeviceParams::unit_j1(omega, delta), &lat, PairSum::Ordered, 0.05);
            prop_assert!(m.residual.site_fields.iter().all(|f| f.abs() < 1e-12));
        }
    }
}
