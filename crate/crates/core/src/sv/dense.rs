//! Dense-matrix reference computations for small systems (validation only).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;

use super::{check_cap, StateVector};
use crate::error::Result;
use crate::model::{IsingForm, SpinHamiltonian};

/// Largest system the dense routines accept.
pub const DENSE_CAP: usize = 10;

pub fn hamiltonian_matrix(h: &SpinHamiltonian) -> Result<DMatrix<f64>> {
    check_cap(h.n(), DENSE_CAP)?;
    Ok(build(h))
}

fn build(h: &SpinHamiltonian) -> DMatrix<f64> {
    let n = h.n();
    let dim = 1usize << n;
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    for b in 0..dim {
        m[(b, b)] = h.diagonal(b as u64);
        for i in 0..n {
            m[(b ^ (1 << i), b)] += h.hx;
        }
    }
    m
}

/// Dense matrix of an Ising form, built from Pauli products directly (no
/// occupation-variable rewrite), for cross-checking the mapping algebra.
pub fn ising_matrix(f: &IsingForm) -> Result<DMatrix<f64>> {
    check_cap(f.n, DENSE_CAP)?;
    let dim = 1usize << f.n;
    let z = |b: usize, i: usize| if (b >> i) & 1 == 1 { -1.0 } else { 1.0 };
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    for b in 0..dim {
        let mut d = f.constant;
        for &(i, j, c) in &f.couplings {
            d += c * z(b, i) * z(b, j);
        }
        for (i, &h) in f.hz.iter().enumerate() {
            d += h * z(b, i);
        }
        m[(b, b)] = d;
        for i in 0..f.n {
            m[(b ^ (1 << i), b)] += f.hx;
        }
    }
    Ok(m)
}

/// Full propagator `exp(-i H t)` for a time-independent Hamiltonian.
pub fn dense_oracle(h: &SpinHamiltonian, t: f64) -> Result<DMatrix<C64>> {
    let eig = SymmetricEigen::new(hamiltonian_matrix(h)?);
    Ok(propagator_from_eigen(&eig, t))
}

fn propagator_from_eigen(eig: &SymmetricEigen<f64, nalgebra::Dyn>, t: f64) -> DMatrix<C64> {
    let v = eig.eigenvectors.map(|x| C64::new(x, 0.0));
    let phases = DMatrix::from_diagonal(&DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&e| C64::new((e * t).cos(), -(e * t).sin())),
    ));
    &v * phases * v.adjoint()
}

/// Piecewise-constant propagation: `pieces` are applied in order.
pub fn propagate_pieces(psi: &StateVector, pieces: &[(SpinHamiltonian, f64)]) -> Result<StateVector> {
    let mut x = DVector::from_column_slice(psi.amplitudes());
    for (h, t) in pieces {
        let u = dense_oracle(h, *t)?;
        x = u * x;
    }
    Ok(StateVector::from_amplitudes(psi.n(), x.iter().copied().collect()))
}

pub fn propagate(h: &SpinHamiltonian, psi: &StateVector, t: f64) -> Result<StateVector> {
    propagate_pieces(psi, &[(h.clone(), t)])
}

/// Full spectrum and eigenvectors.
pub fn spectrum(h: &SpinHamiltonian) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    Ok(SymmetricEigen::new(hamiltonian_matrix(h)?))
}

/// Canonical averages at inverse temperature `beta` (any sign, nonzero or
/// zero): energy and the Boltzmann-weighted basis probabilities.
pub struct ThermalState {
    pub energy: f64,
    pub probabilities: Vec<f64>,
}

pub fn thermal(h: &SpinHamiltonian, beta: f64) -> Result<ThermalState> {
    let eig = spectrum(h)?;
    let e = &eig.eigenvalues;
    let shift = if beta >= 0.0 { e.min() } else { e.max() };
    let w: Vec<f64> = e.iter().map(|&x| (-beta * (x - shift)).exp()).collect();
    let z: f64 = w.iter().sum();
    let energy = e.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / z;
    let dim = e.len();
    let mut probabilities = vec![0.0; dim];
    for (k, wk) in w.iter().enumerate() {
        if *wk / z < 1e-300 {
            continue;
        }
        let col = eig.eigenvectors.column(k);
        for b in 0..dim {
            probabilities[b] += wk / z * col[b] * col[b];
        }
    }
    Ok(ThermalState { energy, probabilities })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_rhombus, Boundary, Lattice};
    use crate::model::{interactions, map_device_to_material, rydberg_ising_form, DeviceParams, PairSum};
    use crate::sv::{evolve, DiagonalCache, EvolveOptions};
    use crate::protocol::{make_quench, Timing};
    use crate::sv::expectation_z;
    use proptest::prelude::*;

    #[test]
    fn identity_at_zero_and_unitary() {
        let lat = build_rhombus(2, 1.0, Boundary::Open, false).unwrap();
        let h = SpinHamiltonian::rydberg(&interactions(&lat, &DeviceParams::unit_j1(1.0, 0.5)), 1.0, 0.5);
        let p0 = dense_oracle(&h, 0.0).unwrap();
        let id = DMatrix::<C64>::identity(16, 16);
        assert!((&p0 - &id).iter().all(|x| x.norm() < 1e-12));
        let p = dense_oracle(&h, 1.3).unwrap();
        let err = (p.adjoint() * &p - id).iter().map(|x| x.norm()).fold(0.0, f64::max);
        assert!(err <= 1e-10);
    }

    #[test]
    fn cap() {
        let lat = build_rhombus(4, 1.0, Boundary::Open, false).unwrap();
        let h = SpinHamiltonian::rydberg(&interactions(&lat, &DeviceParams::unit_j1(1.0, 0.5)), 1.0, 0.5);
        assert!(dense_oracle(&h, 1.0).is_err());
    }

    #[test]
    fn qpu_equals_material_plus_residual() {
        for (lx, ly, boundary) in [(3, 3, Boundary::Open), (4, 2, Boundary::Open), (3, 3, Boundary::Periodic), (5, 2, Boundary::Open)] {
            let lat = Lattice::parallelogram(lx, ly, 1.0, boundary).unwrap();
            let dev = DeviceParams::unit_j1(2.1, 3.3);
            let u = interactions(&lat, &dev);
            let h = SpinHamiltonian::rydberg(&u, dev.omega, dev.delta);
            let a = hamiltonian_matrix(&h).unwrap();
            for j2 in [0.05, 1.0 / 27.0] {
                let m = map_device_to_material(&dev, &lat, PairSum::Ordered, j2);
                let b = ising_matrix(&m.material_plus_residual()).unwrap();
                let scale = a.iter().map(|x| x.abs()).fold(0.0, f64::max);
                let err = (&a - &b).iter().map(|x| x.abs()).fold(0.0, f64::max);
                assert!(err <= 1e-10 * scale, "{lx}x{ly}: {err}");
            }
            let c = ising_matrix(&rydberg_ising_form(&u, dev.omega, dev.delta)).unwrap();
            assert!((&a - &c).iter().all(|x| x.abs() < 1e-10));
        }
    }

    fn split_step_error(dt: f64) -> f64 {
        let lat = Lattice::parallelogram(4, 2, 1.0, Boundary::Open).unwrap();
        let dev = DeviceParams::unit_j1(2.16, 6.0);
        let h = SpinHamiltonian::rydberg(&interactions(&lat, &dev), dev.omega, dev.delta);
        let cache = DiagonalCache::new(&h.diag);
        let p = make_quench(&dev, dev.delta, 1.0, &Timing::ideal()).unwrap();
        let psi0 = StateVector::all_up(8);
        let got = evolve(&psi0, &cache, &p, dt, &[1.0], &EvolveOptions::default()).unwrap();
        let want = propagate(&h, &psi0, 1.0).unwrap();
        got[0].max_deviation(&want)
    }

    #[test]
    fn split_step_matches_oracle_on_eight_sites() {
        let e1 = split_step_error(1e-3);
        let e2 = split_step_error(5e-4);
        assert!(e1 <= 1e-5, "{e1}");
        assert!(e1 / e2 >= 3.5, "{e1} / {e2}");
    }

    fn energy(m: &DMatrix<f64>, psi: &StateVector) -> f64 {
        let x = DVector::from_column_slice(psi.amplitudes());
        (x.adjoint() * m.map(|v| C64::new(v, 0.0)) * &x)[(0, 0)].re
    }

    /// Quench Hamiltonian on a small parallelogram, its cache and the
    /// largest step allowed by the default phase limit.
    fn quench_setup(lx: usize, ly: usize, b: Boundary, omega: f64, delta: f64) -> (SpinHamiltonian, DiagonalCache, f64) {
        let lat = Lattice::parallelogram(lx, ly, 1.0, b).unwrap();
        let u = interactions(&lat, &DeviceParams::unit_j1(0.0, 0.0));
        let cache = DiagonalCache::for_hamiltonian(&SpinHamiltonian::rydberg(&u, 0.0, 0.0));
        let dt_max = 0.9 * EvolveOptions::default().phase_limit / cache.spread(-delta).max(omega).max(1e-9);
        (SpinHamiltonian::rydberg(&u, omega, delta), cache, dt_max)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn quench_plateau_conserves_energy(
            lx in 2usize..4,
            ly in 1usize..3,
            omega in 0.1f64..3.0,
            delta in -8.0f64..8.0,
            excited in any::<u8>(),
        ) {
            let (h, cache, dt_max) = quench_setup(lx, ly, Boundary::Open, omega, delta);
            let dev = DeviceParams::unit_j1(omega, delta);
            let p = make_quench(&dev, delta, 20.0, &Timing::ideal()).unwrap();
            let n = h.n();
            let psi0 = StateVector::basis(n, excited as u64 & ((1 << n) - 1));
            let dt = dt_max.min(1e-3);
            let times: Vec<f64> = (0..=10).map(|k| 2.0 * k as f64).collect();
            let states = evolve(&psi0, &cache, &p, dt, &times, &EvolveOptions::default()).unwrap();
            let m = hamiltonian_matrix(&h).unwrap();
            let scale = SymmetricEigen::new(m.clone()).eigenvalues.iter().fold(0.0f64, |a, e| a.max(e.abs()));
            let e0 = energy(&m, &states[0]);
            for psi in &states {
                prop_assert!((energy(&m, psi) - e0).abs() <= 1e-6 * scale, "{} vs {}", energy(&m, psi), e0);
            }
        }

        #[test]
        fn translation_symmetry_is_preserved(omega in 0.0f64..3.0, delta in -10.0f64..10.0, t in 0.1f64..3.0) {
            let (_, cache, dt_max) = quench_setup(3, 3, Boundary::Periodic, omega, delta);
            let dev = DeviceParams::unit_j1(omega, delta);
            let p = make_quench(&dev, delta, t, &Timing::ideal()).unwrap();
            let psi = evolve(&StateVector::all_up(9), &cache, &p, dt_max.min(1e-2), &[t], &EvolveOptions::default()).unwrap();
            let (m, _) = expectation_z(&psi[0], &(0..9).collect::<Vec<_>>());
            for z in &m {
                prop_assert!((z - m[0]).abs() < 1e-8);
            }
        }

        #[test]
        fn splitting_error_is_second_order(
            lx in 2usize..4,
            ly in 1usize..3,
            omega in 0.3f64..3.0,
            delta in -8.0f64..8.0,
        ) {
            let (h, cache, dt_max) = quench_setup(lx, ly, Boundary::Open, omega, delta);
            let dev = DeviceParams::unit_j1(omega, delta);
            let p = make_quench(&dev, delta, 1.0, &Timing::ideal()).unwrap();
            let psi0 = StateVector::all_up(h.n());
            let want = propagate(&h, &psi0, 1.0).unwrap();
            let err = |dt: f64| {
                evolve(&psi0, &cache, &p, dt, &[1.0], &EvolveOptions::default()).unwrap()[0].max_deviation(&want)
            };
            let dt = 0.5 * dt_max.min(1e-2);
            let (e1, e2) = (err(dt), err(0.5 * dt));
            prop_assume!(e2 > 1e-11);
            prop_assert!(e1 / e2 >= 3.5, "{} / {}", e1, e2);
        }
    }
}
