use super::*;
use crate::lattice::{build_rhombus, Boundary, Lattice};
use crate::model::{delta_for_dz, omega_for_dx, DeviceParams, PairSum};
use crate::sv::dense;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn device(lat: &Lattice, dx: f64, dz: f64) -> DeviceParams {
    let d0 = DeviceParams::unit_j1(0.0, 0.0);
    d0.with_drive(omega_for_dx(&d0, dx), delta_for_dz(&d0, lat, dz, PairSum::Ordered))
}

fn quick(beta: f64, seed: u64) -> SseConfig {
    SseConfig { beta, n_therm: 2_000, n_meas: 40_000, seed, truncation: Truncation::Exact, ..Default::default() }
}

fn within(got: &BinnedEstimate, want: f64, k: f64) -> bool {
    (got.mean - want).abs() <= k * got.stderr.max(1e-12)
}

#[test]
fn pair_energy_matches_exact_thermal() {
    let lat = Lattice::parallelogram(2, 1, 1.0, Boundary::Open).unwrap();
    let dev = device(&lat, 1.08, 4.0);
    let h = qmc_hamiltonian(&lat, &dev, Truncation::Exact).unwrap();
    let r = run_sse(&lat, &dev, &quick(1.0, 1), &Request::bulk(&[0, 1])).unwrap();
    let want = dense::thermal(&h, 1.0).unwrap().energy / 2.0;
    assert!(within(&r.energy, want, 3.0), "{:?} vs {want}", r.energy);
}

#[test]
fn classical_periodic_magnetisation_matches_enumeration() {
    let lat = build_rhombus(3, 1.0, Boundary::Periodic, true).unwrap();
    let dev = device(&lat, 0.0, 3.0);
    let h = qmc_hamiltonian(&lat, &dev, Truncation::Exact).unwrap();
    for t in [0.5, 2.0] {
        let beta = 1.0 / t;
        let (mut z, mut mz) = (0.0, 0.0);
        for s in 0u64..512 {
            let w = (-beta * h.diagonal(s)).exp();
            z += w;
            mz += w * (1.0 - 2.0 * s.count_ones() as f64 / 9.0);
        }
        let sites: Vec<usize> = (0..9).collect();
        let r = run_sse(&lat, &dev, &quick(beta, 2), &Request::bulk(&sites)).unwrap();
        // the frozen low-temperature chain reports a vanishing error bar
        assert!(within(&r.mz, mz / z, 3.0) || (r.mz.mean - mz / z).abs() < 1e-4, "T={t}: {:?} vs {}", r.mz, mz / z);
    }
}

fn chi_square_p(counts: &[u64], probs: &[f64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let mut chi = 0.0;
    let mut dof = 0;
    for (&c, &p) in counts.iter().zip(probs) {
        let e = p * total as f64;
        if e < 5.0 {
            continue;
        }
        chi += (c as f64 - e).powi(2) / e;
        dof += 1;
    }
    1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(chi)
}

/// Samples the tau = 0 configuration every `thin` sweeps.
fn state_counts(h: &SpinHamiltonian, beta: f64, samples: usize, thin: usize, seed: u64) -> Vec<u64> {
    let sim = if beta < 0.0 { h.negated() } else { h.clone() };
    let dec = Decomposition::new(&sim, 4e-3).unwrap();
    let mut ch = Chain::new(&dec, beta.abs(), seed, 0).unwrap();
    for _ in 0..5_000 {
        ch.sweep();
        ch.adjust_cutoff();
    }
    let mut counts = vec![0u64; 1 << h.n()];
    for _ in 0..samples {
        for _ in 0..thin {
            ch.sweep();
            ch.adjust_cutoff();
        }
        assert!(ch.consistent());
        let s: usize = ch.spins.iter().enumerate().map(|(i, &b)| (b as usize) << i).sum();
        counts[s] += 1;
    }
    counts
}

#[test]
fn detailed_balance_on_two_and_three_sites() {
    for (lx, beta) in [(2, 1.0), (3, 0.7), (3, -0.7)] {
        let lat = Lattice::parallelogram(lx, 1, 1.0, Boundary::Open).unwrap();
        let dev = device(&lat, 1.08, 2.0);
        let h = qmc_hamiltonian(&lat, &dev, Truncation::Exact).unwrap();
        let probs = dense::thermal(&h, beta).unwrap().probabilities;
        let counts = state_counts(&h, beta, 1_000_000, 2, 11);
        let p = chi_square_p(&counts, &probs);
        assert!(p > 1e-3, "N={lx} beta={beta}: p={p} counts={counts:?} probs={probs:?}");
    }
}

#[test]
fn negative_temperature_matches_exact_and_exceeds_infinite_t() {
    let lat = Lattice::parallelogram(3, 1, 1.0, Boundary::Open).unwrap();
    let dev = device(&lat, 1.08, 1.8);
    let h = qmc_hamiltonian(&lat, &dev, Truncation::Exact).unwrap();
    let r = run_sse(&lat, &dev, &quick(-0.8, 5), &Request::default()).unwrap();
    let want = dense::thermal(&h, -0.8).unwrap().energy / 3.0;
    assert!(within(&r.energy, want, 3.0), "{:?} vs {want}", r.energy);
    assert!(r.energy.mean > h.trace_average() / 3.0);
}

#[test]
fn low_temperature_approaches_ground_state() {
    let lat = Lattice::parallelogram(3, 2, 1.0, Boundary::Open).unwrap();
    let dev = device(&lat, 1.08, 3.0);
    let h = qmc_hamiltonian(&lat, &dev, Truncation::Exact).unwrap();
    let e0 = dense::spectrum(&h).unwrap().eigenvalues.min() / 6.0;
    let r = run_sse(&lat, &dev, &quick(30.0, 6), &Request::default()).unwrap();
    assert!(within(&r.energy, e0, 3.0) || (r.energy.mean - e0).abs() < 1e-3, "{:?} vs {e0}", r.energy);
}

#[test]
fn seed_determinism() {
    let lat = build_rhombus(3, 1.0, Boundary::Open, false).unwrap();
    let dev = device(&lat, 1.08, 4.0);
    let cfg = SseConfig { beta: 2.0, n_therm: 500, n_meas: 2_000, seed: 99, n_chains: 2, ..Default::default() };
    let req = Request { sites: (0..9).collect(), pairs: true, q_points: vec![crate::lattice::q_one_third()], histogram: true };
    let a = run_sse(&lat, &dev, &cfg, &req).unwrap();
    let b = run_sse(&lat, &dev, &cfg, &req).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = run_sse(&lat, &dev, &SseConfig { seed: 100, ..cfg }, &req).unwrap();
    assert_ne!(a.energy.mean, c.energy.mean);
}

#[test]
fn stderr_shrinks_with_more_measurements() {
    let lat = build_rhombus(3, 1.0, Boundary::Open, false).unwrap();
    let dev = device(&lat, 1.08, 4.0);
    let base = SseConfig { beta: 1.0, n_therm: 2_000, n_meas: 100_000, seed: 3, ..Default::default() };
    let a = run_sse(&lat, &dev, &base, &Request::default()).unwrap();
    let b = run_sse(&lat, &dev, &SseConfig { n_meas: 200_000, ..base }, &Request::default()).unwrap();
    let ratio = a.energy.stderr / b.energy.stderr;
    assert!((ratio / std::f64::consts::SQRT_2 - 1.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn rejects_bad_config() {
    let lat = build_rhombus(3, 1.0, Boundary::Open, false).unwrap();
    let dev = device(&lat, 1.08, 4.0);
    let req = Request::default();
    assert!(run_sse(&lat, &dev, &SseConfig { beta: 0.0, ..quick(1.0, 0) }, &req).is_err());
    assert!(run_sse(&lat, &dev, &SseConfig { n_meas: 0, ..quick(1.0, 0) }, &req).is_err());
    let big = build_rhombus(7, 1.0, Boundary::Open, false).unwrap();
    assert!(matches!(
        run_sse(&big, &dev, &quick(1.0, 0), &req),
        Err(Error::CapExceeded { .. })
    ));
}

#[test]
fn snapshots_classical_limits() {
    let lat = build_rhombus(3, 1.0, Boundary::Periodic, true).unwrap();
    let cfg = SseConfig { beta: 3.0, n_therm: 2_000, n_meas: 2_000, seed: 4, truncation: Truncation::Exact, ..Default::default() };
    let polar = snapshots(&lat, &device(&lat, 0.0, 10.0), &cfg, 50).unwrap();
    assert!(polar.spacing >= 1);
    assert!(polar.records.iter().all(|s| s.bits.iter().all(|&b| b == 0)));

    // a weak drive supplies the segment cuts the classical chain needs to move
    let dev = device(&lat, 0.3, 2.0);
    let ordered = snapshots(&lat, &dev, &cfg, 400).unwrap();
    let patterns: Vec<Vec<bool>> = (0..3).map(|s| (0..9).map(|i| lat.sublattice(i) == s).collect()).collect();
    let hits = ordered.records.iter().filter(|r| patterns.contains(&r.occupations(9))).count();
    let h = qmc_hamiltonian(&lat, &dev, Truncation::Exact).unwrap();
    let probs = dense::thermal(&h, 3.0).unwrap().probabilities;
    let p_order: f64 = [98usize, 140, 273].iter().map(|&s| probs[s]).sum();
    let frac = hits as f64 / ordered.records.len() as f64;
    assert!((frac - p_order).abs() < 0.08, "{frac} vs {p_order}");
}

#[test]
fn snapshot_stream_roundtrip() {
    let lat = build_rhombus(3, 1.0, Boundary::Open, false).unwrap();
    let cfg = SseConfig { beta: 1.0, n_therm: 100, n_meas: 100, seed: 8, ..Default::default() };
    let set = snapshots(&lat, &device(&lat, 1.08, 4.0), &cfg, 10).unwrap();
    let mut buf = Vec::new();
    write_snapshots(&mut buf, &set).unwrap();
    assert_eq!(buf.len(), 60 + 10 * (2 + 8));
    let (h, recs) = read_snapshots(&buf[..]).unwrap();
    assert_eq!(h, set.header);
    assert_eq!(recs, set.records);
    assert!(read_snapshots(&buf[..buf.len() - 1]).is_err());
}

#[test]
fn energy_curve_limits() {
    let lat = Lattice::parallelogram(3, 2, 1.0, Boundary::Open).unwrap();
    let dev = device(&lat, 1.08, 1.8);
    let cfg = SseConfig { n_therm: 2_000, n_meas: 20_000, truncation: Truncation::Exact, ..Default::default() };
    let temps = [-2.0, -1.0, 1.0, 50.0];
    let curve = energy_curve(&lat, &dev, &temps, &cfg).unwrap();
    let h = qmc_hamiltonian(&lat, &dev, Truncation::Exact).unwrap();
    assert!((curve.e_inf - h.trace_average() / 6.0).abs() < 1e-12);
    for (t, e) in temps.iter().zip(&curve.energy) {
        let want = dense::thermal(&h, 1.0 / t).unwrap().energy / 6.0;
        assert!(within(e, want, 4.0), "T={t}: {e:?} vs {want}");
    }
    // negative branch lies above the infinite-temperature energy
    assert!(curve.energy[0].mean > curve.e_inf && curve.energy[1].mean > curve.energy[0].mean);
    let (b, e, _) = curve.beta_grid();
    assert!(b.windows(2).all(|w| w[0] < w[1]));
    assert!(e.windows(2).all(|w| w[0] >= w[1] - 1e-2));
    assert!(energy_curve(&lat, &dev, &[0.0], &cfg).is_err());
}

fn signed_beta() -> impl Strategy<Value = f64> {
    prop_oneof![-3.0f64..-0.1, 0.1f64..3.0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn seeded_runs_are_bit_identical(
        l in 2usize..4,
        dx in 0.1f64..1.5,
        dz in -2.0f64..10.0,
        beta in signed_beta(),
        seed in any::<u64>(),
        n_chains in 1usize..3,
    ) {
        let lat = Lattice::parallelogram(l, 2, 1.0, Boundary::Open).unwrap();
        let dev = device(&lat, dx, dz);
        let cfg = SseConfig {
            beta,
            n_therm: 20,
            n_meas: 200,
            seed,
            n_chains,
            truncation: Truncation::Exact,
            stationarity_sigma: f64::INFINITY,
            ..Default::default()
        };
        let req = Request {
            sites: (0..lat.n_sites()).collect(),
            pairs: true,
            q_points: vec![crate::lattice::q_one_third()],
            histogram: true,
        };
        let a = run_sse(&lat, &dev, &cfg, &req).unwrap();
        let b = run_sse(&lat, &dev, &cfg, &req).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn operator_string_never_reaches_the_cutoff(
        l in 2usize..4,
        dx in 0.1f64..1.5,
        dz in -2.0f64..10.0,
        beta in signed_beta(),
        seed in any::<u64>(),
    ) {
        let lat = Lattice::parallelogram(l, 2, 1.0, Boundary::Open).unwrap();
        let dev = device(&lat, dx, dz);
        let h = qmc_hamiltonian(&lat, &dev, Truncation::Exact).unwrap();
        let sim = if beta < 0.0 { h.negated() } else { h };
        let dec = Decomposition::new(&sim, 1e-3 * dev.u1()).unwrap();
        let mut ch = Chain::new(&dec, beta.abs(), seed, 0).unwrap();
        for _ in 0..60 {
            ch.sweep();
            ch.adjust_cutoff();
            prop_assert!(ch.n_ops() < ch.cutoff());
            prop_assert!(ch.consistent());
        }
    }
}
