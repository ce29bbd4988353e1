//! Effective temperature of a quenched product state and the comparison of
//! long-time dynamics with the thermal ensemble.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SpinHamiltonian;
use crate::observables::Estimate;
use crate::qmc::EnergyCurve;
use crate::stats::Pchip;

pub const DEFAULT_HORIZON: f64 = 10.0;
pub const DEFAULT_TOLERANCE: f64 = 0.05;

/// Energy per site of a product state in the z basis. The transverse term
/// has zero expectation.
pub fn initial_energy(h: &SpinHamiltonian, rydberg: &[bool]) -> f64 {
    h.diagonal_bits(rydberg) / h.n() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTemperature {
    /// `k_B T / J1`; infinite when the energy equals the trace average.
    pub t_over_j1: f64,
    /// `J1 / k_B T`.
    pub beta: f64,
    /// Interval of `T/J1` from inverting the energy plus and minus the
    /// interpolated curve error.
    pub t_low: f64,
    pub t_high: f64,
    pub branch: Branch,
    pub energy: f64,
    pub e_inf: f64,
}

/// Weighted pool-adjacent-violators fit, non-increasing.
fn antitonic(y: &[f64], w: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for (&v, &wt) in y.iter().zip(w) {
        blocks.push((v, wt, 1));
        while blocks.len() > 1 && blocks[blocks.len() - 2].0 < blocks[blocks.len() - 1].0 {
            let (v2, w2, n2) = blocks.pop().unwrap();
            let (v1, w1, n1) = blocks.pop().unwrap();
            blocks.push(((v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2, n1 + n2));
        }
    }
    blocks.into_iter().flat_map(|(v, _, n)| std::iter::repeat_n(v, n)).collect()
}

/// Monotone interpolant of the curve in `J1/T`, with its error band.
struct Inverter {
    energy: Pchip,
    err: Pchip,
}

impl Inverter {
    fn new(curve: &EnergyCurve) -> Result<Self> {
        let (beta, e, err) = curve.beta_grid();
        let w: Vec<f64> = err.iter().map(|s| 1.0 / s.max(1e-9).powi(2)).collect();
        Ok(Inverter { energy: Pchip::new(beta.clone(), antitonic(&e, &w))?, err: Pchip::new(beta, err)? })
    }

    fn invert(&self, target: f64) -> Result<f64> {
        self.energy.invert(target)
    }

    /// Inversion clamped to the ends of the curve.
    fn invert_clamped(&self, target: f64) -> f64 {
        let (a, b) = self.energy.domain();
        let (ya, yb) = (self.energy.eval(a), self.energy.eval(b));
        if target >= ya {
            a
        } else if target <= yb {
            b
        } else {
            self.energy.invert(target).unwrap_or(a)
        }
    }
}

fn inv(beta: f64) -> f64 {
    if beta == 0.0 {
        f64::INFINITY
    } else {
        1.0 / beta
    }
}

/// Inverts the tabulated energy curve at `energy` (per site). The curve must
/// cover the energy; it is made monotone in `J1/T` by an error-weighted
/// antitonic fit before interpolation.
pub fn effective_temperature(curve: &EnergyCurve, energy: f64) -> Result<EffectiveTemperature> {
    let inv_curve = Inverter::new(curve)?;
    let beta = inv_curve.invert(energy)?;
    let branch = if energy > curve.e_inf { Branch::Negative } else { Branch::Positive };
    let sigma = inv_curve.err.eval(beta).abs();
    let b1 = inv_curve.invert_clamped(energy + sigma);
    let b2 = inv_curve.invert_clamped(energy - sigma);
    // T is monotone in beta on either side of zero
    let (t1, t2) = (inv(b1), inv(b2));
    let same_side = b1.signum() == b2.signum() && b1 != 0.0 && b2 != 0.0;
    let (t_low, t_high) = if same_side { (t1.min(t2), t1.max(t2)) } else { (f64::NEG_INFINITY, f64::INFINITY) };
    Ok(EffectiveTemperature { t_over_j1: inv(beta), beta, t_low, t_high, branch, energy, e_inf: curve.e_inf })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalisationReport {
    pub tail_mean: f64,
    pub tail_stderr: f64,
    pub thermal: Estimate,
    pub difference: f64,
    pub tolerance: f64,
    pub n_tail: usize,
    pub pass: bool,
}

/// Averages `values` over `times >= horizon` and compares with `thermal`.
/// `errors` are per-point standard errors of the series (shot noise), if
/// any; an exact series has none.
pub fn thermalisation_check(
    times: &[f64],
    values: &[f64],
    errors: Option<&[f64]>,
    thermal: Estimate,
    horizon: f64,
    tolerance: f64,
) -> Result<ThermalisationReport> {
    if times.len() != values.len() || errors.is_some_and(|e| e.len() != values.len()) {
        return Err(Error::Schema("series columns differ in length".into()));
    }
    let tail: Vec<usize> = (0..times.len()).filter(|&k| times[k] >= horizon).collect();
    if tail.is_empty() || times.last().is_none_or(|&t| t < horizon) {
        return Err(Error::ShortSeries(format!("series ends before t J1 = {horizon}")));
    }
    let n = tail.len() as f64;
    let tail_mean = tail.iter().map(|&k| values[k]).sum::<f64>() / n;
    let tail_stderr = errors.map_or(0.0, |e| tail.iter().map(|&k| e[k] * e[k]).sum::<f64>().sqrt() / n);
    let difference = tail_mean - thermal.value;
    let combined = (tail_stderr.powi(2) + thermal.stderr.powi(2)).sqrt();
    Ok(ThermalisationReport {
        tail_mean,
        tail_stderr,
        thermal,
        difference,
        tolerance,
        n_tail: tail.len(),
        pass: difference.abs() <= combined.max(tolerance),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Boundary, Lattice};
    use crate::model::{delta_for_dz, omega_for_dx, DeviceParams, PairSum};
    use crate::qmc::{qmc_hamiltonian, Truncation};
    use crate::stats::BinnedEstimate;
    use crate::sv::dense;
    use proptest::prelude::*;

    fn small_h(dz: f64) -> SpinHamiltonian {
        let lat = Lattice::parallelogram(2, 2, 1.0, Boundary::Open).unwrap();
        let d0 = DeviceParams::unit_j1(0.0, 0.0);
        let dev = d0.with_drive(omega_for_dx(&d0, 1.08), delta_for_dz(&d0, &lat, dz, PairSum::Ordered));
        qmc_hamiltonian(&lat, &dev, Truncation::Exact).unwrap()
    }

    /// Exact curve on a uniform grid of `J1/T` in `[-b_max, b_max]`.
    fn exact_curve(h: &SpinHamiltonian, b_max: f64, n: usize) -> EnergyCurve {
        let betas: Vec<f64> = (0..=2 * n).map(|k| -b_max + b_max * k as f64 / n as f64).filter(|b| *b != 0.0).collect();
        let energy =
            betas.iter().map(|&b| BinnedEstimate::exact(dense::thermal(h, b).unwrap().energy / h.n() as f64)).collect();
        EnergyCurve {
            t_over_j1: betas.iter().map(|b| 1.0 / b).collect(),
            energy,
            e_inf: h.trace_average() / h.n() as f64,
            j1: 1.0,
        }
    }

    #[test]
    fn all_up_energy_is_zero() {
        let h = small_h(1.8);
        assert_eq!(initial_energy(&h, &[false; 4]), 0.0);
    }

    #[test]
    fn branch_follows_trace_average() {
        let h = small_h(1.8);
        let curve = exact_curve(&h, 4.0, 40);
        let hot = effective_temperature(&curve, curve.e_inf + 0.1).unwrap();
        assert_eq!(hot.branch, Branch::Negative);
        assert!(hot.t_over_j1 < 0.0);
        let cold = effective_temperature(&curve, curve.e_inf - 0.1).unwrap();
        assert_eq!(cold.branch, Branch::Positive);
        assert!(cold.t_over_j1 > 0.0);
        assert!(matches!(effective_temperature(&curve, 1e3), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn antitonic_fit_pools_violators() {
        let fit = antitonic(&[3.0, 1.0, 2.0, 0.0], &[1.0; 4]);
        assert_eq!(fit, vec![3.0, 1.5, 1.5, 0.0]);
    }

    #[test]
    fn thermalisation_report() {
        let t: Vec<f64> = (0..=200).map(|k| k as f64 * 0.1).collect();
        let flat = vec![-0.2; t.len()];
        let th = Estimate { value: -0.2, stderr: 0.0 };
        let r = thermalisation_check(&t, &flat, None, th, DEFAULT_HORIZON, DEFAULT_TOLERANCE).unwrap();
        assert!(r.pass && r.difference.abs() < 1e-15);
        assert_eq!(r.n_tail, 101);
        let off: Vec<f64> = t.iter().map(|_| 0.0).collect();
        assert!(!thermalisation_check(&t, &off, None, th, 10.0, 0.05).unwrap().pass);
        let short = &t[..50];
        assert!(matches!(
            thermalisation_check(short, &flat[..50], None, th, 10.0, 0.05),
            Err(Error::ShortSeries(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn inversion_round_trips(u in 0.0..1.0f64, dz in 0.5..8.0f64) {
            let h = small_h(dz);
            let (b_max, n) = (3.0, 200);
            let curve = exact_curve(&h, b_max, n);
            let beta = -2.0 + 4.0 * u;
            prop_assume!(beta.abs() > 1e-3);
            let e = dense::thermal(&h, beta).unwrap().energy / h.n() as f64;
            // where the curve has saturated the temperature is not defined by the energy
            let slope = (dense::thermal(&h, beta + 1e-3).unwrap().energy / h.n() as f64 - e) / 1e-3;
            prop_assume!(slope.abs() > 1e-3);
            let got = effective_temperature(&curve, e).unwrap();
            let spacing = b_max / n as f64;
            prop_assert!((got.beta - beta).abs() <= 0.01 * spacing, "{} vs {beta}", got.beta);
        }
    }
}
