//! End-to-end runs through the public API: ramp, evolve, read out, correct.

use trisim::lattice::{build_rhombus, Boundary, BulkMask};
use trisim::model::{delta_for_dz, interactions, omega_for_dx, DeviceParams, PairSum, SpinHamiltonian};
use trisim::observables::{bulk_magnetisation, MomentTable};
use trisim::protocol::{make_adiabatic, Timing};
use trisim::readout::{correct_moments, measure, DefectModel, ErrorRates, PairFormula, ShotSource};
use trisim::sv::{evolve, DiagonalCache, EvolveOptions, StateVector};

fn ramped_state(dz: f64) -> (trisim::lattice::Lattice, StateVector) {
    let lat = build_rhombus(3, 1.0, Boundary::Periodic, true).unwrap();
    let d0 = DeviceParams::unit_j1(0.0, 0.0);
    let dev = d0.with_drive(omega_for_dx(&d0, 1.08), 0.0);
    let delta = delta_for_dz(&dev, &lat, dz, PairSum::Ordered);
    let p = make_adiabatic(&dev, delta, 60.0, 0.9, &Timing::ideal()).unwrap();
    let cache = DiagonalCache::for_hamiltonian(&SpinHamiltonian::rydberg(&interactions(&lat, &dev), 0.0, 0.0));
    let rate = p.delta.segments.iter().fold(dev.omega, |r, s| r.max(cache.spread(-s.start)).max(cache.spread(-s.end)));
    let dt = 0.04 / rate;
    let psi = evolve(&StateVector::all_up(9), &cache, &p, dt, &[p.total_time], &EvolveOptions::default()).unwrap();
    (lat, psi.into_iter().next().unwrap())
}

#[test]
fn strong_field_ramp_stays_polarised_and_weak_field_ramp_orders() {
    let (lat, high) = ramped_state(10.0);
    let (_, low) = ramped_state(3.0);
    let full = BulkMask::full(&lat);
    let m_high = bulk_magnetisation(&MomentTable::from_state(&high, &full)).value;
    let m_low = bulk_magnetisation(&MomentTable::from_state(&low, &full)).value;
    assert!(m_high > 0.9, "{m_high}");
    assert!((m_low - 1.0 / 3.0).abs() < 0.1, "{m_low}");
}

#[test]
fn corrected_shots_recover_the_exact_magnetisation() {
    let (lat, psi) = ramped_state(4.0);
    let full = BulkMask::full(&lat);
    let exact = bulk_magnetisation(&MomentTable::from_state(&psi, &full)).value;
    let rates = ErrorRates { eps: 0.01, eps_prime: 0.04 };
    let shots = measure(ShotSource::State(&psi), &rates, &DefectModel::default(), 20_000, 3).unwrap();
    let c = correct_moments(&shots, &rates, &full, PairFormula::Derived).unwrap();
    let raw = bulk_magnetisation(&c.raw);
    let corrected = bulk_magnetisation(&c.corrected);
    assert!((corrected.value - exact).abs() < 4.0 * corrected.stderr, "{corrected:?} vs {exact}");
    assert!((raw.value - exact).abs() > (corrected.value - exact).abs());
}
