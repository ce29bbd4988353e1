//! Exact state-vector engine.
//!
//! Basis index bit `i` is site `i`; a set bit is the Rydberg state
//! (`Z = -1`), a clear bit the ground state (`Z = +1`). Memory is
//! `2^N x 16` bytes for the amplitudes plus `2^N x 9` bytes for the
//! diagonal cache.

mod checkpoint;
pub mod dense;
mod evolve;
mod lanczos;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{DiagonalForm, SpinHamiltonian};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use evolve::{evolve, evolve_steps, EvolveOptions};
pub use lanczos::{ground_state, Eigenpair, LanczosOptions};

pub const DEFAULT_SITE_CAP: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<C64>,
}

impl StateVector {
    pub fn from_amplitudes(n: usize, amps: Vec<C64>) -> Self {
        assert_eq!(amps.len(), 1usize << n, "amplitude count must be 2^N");
        StateVector { n, amps }
    }

    pub fn basis(n: usize, state: u64) -> Self {
        let mut amps = vec![C64::new(0.0, 0.0); 1 << n];
        amps[state as usize] = C64::new(1.0, 0.0);
        StateVector { n, amps }
    }

    /// `|g ... g>`, every site up.
    pub fn all_up(n: usize) -> Self {
        Self::basis(n, 0)
    }

    /// Equal-weight superposition of all basis states.
    pub fn uniform(n: usize) -> Self {
        let a = (1.0 / (1u64 << n) as f64).sqrt();
        StateVector { n, amps: vec![C64::new(a, 0.0); 1 << n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalize(&mut self) {
        let s = 1.0 / self.norm();
        self.amps.iter_mut().for_each(|a| *a *= s);
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    /// Max |a_k - b_k| over amplitudes.
    pub fn max_deviation(&self, other: &StateVector) -> f64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// `<psi| H |psi>`.
    pub fn energy(&self, cache: &DiagonalCache, count_coeff: f64, hx: f64) -> f64 {
        let mut out = vec![C64::new(0.0, 0.0); self.dim()];
        apply_hamiltonian_complex(cache, count_coeff, hx, &self.amps, &mut out);
        self.amps.iter().zip(&out).map(|(a, b)| (a.conj() * b).re).sum()
    }
}

/// Diagonal of the Hamiltonian split into a drive-independent part and the
/// Rydberg count, so that a detuning change only rescales one array.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalCache {
    n: usize,
    interaction: Vec<f64>,
    count: Vec<u8>,
    /// Per Rydberg count `k`: (min, max) of the interaction part.
    extremes: Vec<(f64, f64)>,
}

impl DiagonalCache {
    /// Incremental build: `E(b) = E(b without its lowest bit) + mu_low + sum_j V_low,j`.
    pub fn new(diag: &DiagonalForm) -> Self {
        let n = diag.n;
        let dim = 1usize << n;
        let mut v = vec![0.0; n * n];
        for &(i, j, x) in &diag.pairs {
            v[i * n + j] += x;
            v[j * n + i] += x;
        }
        let mut interaction = vec![0.0; dim];
        interaction[0] = diag.constant;
        for b in 1..dim {
            let low = b.trailing_zeros() as usize;
            let rest = b & (b - 1);
            let mut e = interaction[rest] + diag.site[low];
            let row = &v[low * n..(low + 1) * n];
            let mut r = rest;
            while r != 0 {
                let j = r.trailing_zeros() as usize;
                e += row[j];
                r &= r - 1;
            }
            interaction[b] = e;
        }
        Self::finish(n, interaction)
    }

    /// Direct evaluation of every basis energy; reference for [`DiagonalCache::new`].
    pub fn direct(diag: &DiagonalForm) -> Self {
        let n = diag.n;
        let interaction = (0..1u64 << n).map(|b| diag.energy(b)).collect();
        Self::finish(n, interaction)
    }

    pub fn for_hamiltonian(h: &SpinHamiltonian) -> Self {
        Self::new(&h.diag)
    }

    fn finish(n: usize, interaction: Vec<f64>) -> Self {
        let count: Vec<u8> = (0..interaction.len()).map(|b| (b as u64).count_ones() as u8).collect();
        let mut extremes = vec![(f64::INFINITY, f64::NEG_INFINITY); n + 1];
        for (e, &k) in interaction.iter().zip(&count) {
            let x = &mut extremes[k as usize];
            x.0 = x.0.min(*e);
            x.1 = x.1.max(*e);
        }
        DiagonalCache { n, interaction, count, extremes }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn interaction(&self) -> &[f64] {
        &self.interaction
    }

    pub fn count(&self) -> &[u8] {
        &self.count
    }

    #[inline]
    pub fn value(&self, b: usize, count_coeff: f64) -> f64 {
        self.interaction[b] + count_coeff * self.count[b] as f64
    }

    /// (min, max) of the full diagonal at the given count coefficient.
    pub fn range(&self, count_coeff: f64) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (k, &(a, b)) in self.extremes.iter().enumerate() {
            if a.is_finite() {
                lo = lo.min(a + count_coeff * k as f64);
                hi = hi.max(b + count_coeff * k as f64);
            }
        }
        (lo, hi)
    }

    /// Half-width of the diagonal spectrum; a constant shift of the diagonal
    /// only changes the global phase.
    pub fn spread(&self, count_coeff: f64) -> f64 {
        let (lo, hi) = self.range(count_coeff);
        0.5 * (hi - lo)
    }

    /// Crude upper bound on the operator norm.
    pub fn norm_estimate(&self, count_coeff: f64, hx: f64) -> f64 {
        let (lo, hi) = self.range(count_coeff);
        lo.abs().max(hi.abs()) + self.n as f64 * hx.abs()
    }
}

pub(crate) fn apply_hamiltonian_real(cache: &DiagonalCache, count_coeff: f64, hx: f64, x: &[f64], y: &mut [f64]) {
    let n = cache.n;
    y.par_iter_mut().enumerate().with_min_len(1 << 12).for_each(|(b, out)| {
        let mut acc = cache.value(b, count_coeff) * x[b];
        if hx != 0.0 {
            let mut s = 0.0;
            for i in 0..n {
                s += x[b ^ (1 << i)];
            }
            acc += hx * s;
        }
        *out = acc;
    });
}

pub(crate) fn apply_hamiltonian_complex(cache: &DiagonalCache, count_coeff: f64, hx: f64, x: &[C64], y: &mut [C64]) {
    let n = cache.n;
    y.par_iter_mut().enumerate().with_min_len(1 << 12).for_each(|(b, out)| {
        let mut acc = x[b] * cache.value(b, count_coeff);
        if hx != 0.0 {
            let mut s = C64::new(0.0, 0.0);
            for i in 0..n {
                s += x[b ^ (1 << i)];
            }
            acc += s * hx;
        }
        *out = acc;
    });
}

pub fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        return Err(Error::CapExceeded { n, cap });
    }
    Ok(())
}

/// Exact z-basis moments over `sites`: per-site `<Z_i>` and the pair table
/// `<Z_i Z_j>` (row-major, `sites.len()^2`).
pub fn expectation_z(psi: &StateVector, sites: &[usize]) -> (Vec<f64>, Vec<f64>) {
    z_moments_from_probabilities(&psi.probabilities(), sites)
}

pub fn z_moments_from_probabilities(probs: &[f64], sites: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let k = sites.len();
    // P(n_i = 1) and P(n_i = 1, n_j = 1), accumulated over set bits only.
    let mut p1 = vec![0.0; k];
    let mut p11 = vec![0.0; k * k];
    let mut local = Vec::with_capacity(k);
    for (b, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        local.clear();
        for (a, &s) in sites.iter().enumerate() {
            if (b >> s) & 1 == 1 {
                local.push(a);
            }
        }
        for (x, &a) in local.iter().enumerate() {
            p1[a] += p;
            for &c in &local[x + 1..] {
                p11[a * k + c] += p;
            }
        }
    }
    let total: f64 = probs.iter().sum();
    let m: Vec<f64> = p1.iter().map(|&q| total - 2.0 * q).collect();
    let mut c = vec![0.0; k * k];
    for a in 0..k {
        c[a * k + a] = total;
        for b in (a + 1)..k {
            let v = total - 2.0 * p1[a] - 2.0 * p1[b] + 4.0 * p11[a * k + b];
            c[a * k + b] = v;
            c[b * k + a] = v;
        }
    }
    (m, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_rhombus, Boundary};
    use crate::model::{interactions, DeviceParams};
    use proptest::prelude::*;

    #[test]
    fn incremental_cache_matches_direct() {
        let lat = build_rhombus(3, 1.0, Boundary::Open, false).unwrap();
        let u = interactions(&lat, &DeviceParams::unit_j1(1.0, 2.0));
        let mut h = SpinHamiltonian::rydberg(&u, 1.0, 2.0);
        h.diag.site = (0..9).map(|i| 0.1 * i as f64 - 0.3).collect();
        h.diag.constant = 0.7;
        let a = DiagonalCache::new(&h.diag);
        let b = DiagonalCache::direct(&h.diag);
        for (x, y) in a.interaction().iter().zip(b.interaction()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn product_state_moments() {
        let up = StateVector::all_up(4);
        let (m, c) = expectation_z(&up, &[0, 1, 2, 3]);
        assert!(m.iter().all(|&x| x == 1.0));
        assert!(c.iter().all(|&x| x == 1.0));

        let uni = StateVector::uniform(4);
        let (m, c) = expectation_z(&uni, &[0, 1, 2, 3]);
        for a in 0..4 {
            assert!(m[a].abs() < 1e-12);
            for b in 0..4 {
                let conn = c[a * 4 + b] - m[a] * m[b];
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((conn - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_third_product_moments() {
        let lat = build_rhombus(3, 1.0, Boundary::Periodic, true).unwrap();
        let mut state = 0u64;
        for i in 0..9 {
            if lat.sublattice(i) == 0 {
                state |= 1 << i;
            }
        }
        let psi = StateVector::basis(9, state);
        let sites: Vec<usize> = (0..9).collect();
        let (m, c) = expectation_z(&psi, &sites);
        let mz: f64 = m.iter().sum::<f64>() / 9.0;
        assert!((mz - 1.0 / 3.0).abs() < 1e-12);
        for i in 0..9 {
            for j in 0..9 {
                let zi = if lat.sublattice(i) == 0 { -1.0 } else { 1.0 };
                let zj = if lat.sublattice(j) == 0 { -1.0 } else { 1.0 };
                assert_eq!(c[i * 9 + j], zi * zj);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn cache_consistency(n in 2usize..7, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut pairs = Vec::new();
            for i in 0..n { for j in (i + 1)..n { pairs.push((i, j, rng.random_range(-3.0..3.0))); } }
            let diag = DiagonalForm {
                n,
                pairs,
                site: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
                constant: rng.random_range(-1.0..1.0),
            };
            let a = DiagonalCache::new(&diag);
            let b = DiagonalCache::direct(&diag);
            for (x, y) in a.interaction().iter().zip(b.interaction()) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
            let c = rng.random_range(-5.0..5.0);
            let (lo, hi) = a.range(c);
            let vals: Vec<f64> = (0..1usize << n).map(|k| a.value(k, c)).collect();
            prop_assert!((vals.iter().cloned().fold(f64::MAX, f64::min) - lo).abs() < 1e-12);
            prop_assert!((vals.iter().cloned().fold(f64::MIN, f64::max) - hi).abs() < 1e-12);
        }
    }
}
