//! Second-order split-step propagation.
//!
//! Each step applies `exp(-i D dt/2) prod_i exp(-i hx dt X_i) exp(-i D dt/2)`
//! with the drive sampled at the step midpoint. Adjacent half-step phases are
//! merged into one pass.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use super::{DiagonalCache, StateVector};
use crate::error::{Error, Result};
use crate::protocol::{Protocol, Step};

#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    /// Largest phase per step, `dt * max(spread(D), Omega)`, in radians.
    pub phase_limit: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { phase_limit: 0.05 }
    }
}

/// Pending diagonal phase `exp(-i (E_int * a + count * b))`.
#[derive(Default, Clone, Copy)]
struct PendingPhase {
    a: f64,
    b: f64,
}

impl PendingPhase {
    fn add(&mut self, tau: f64, count_coeff: f64) {
        self.a += tau;
        self.b += tau * count_coeff;
    }

    fn flush(&mut self, cache: &DiagonalCache, amps: &mut [C64]) {
        if self.a == 0.0 && self.b == 0.0 {
            return;
        }
        let (a, b) = (self.a, self.b);
        let e = cache.interaction();
        let c = cache.count();
        amps.par_iter_mut().enumerate().with_min_len(1 << 12).for_each(|(k, x)| {
            let phi = e[k] * a + c[k] as f64 * b;
            *x *= C64::new(phi.cos(), -phi.sin());
        });
        *self = PendingPhase::default();
    }
}

fn rotate_x(amps: &mut [C64], n: usize, theta: f64) {
    if theta == 0.0 {
        return;
    }
    let (c, s) = (theta.cos(), theta.sin());
    let mis = C64::new(0.0, -s);
    for i in 0..n {
        let bit = 1usize << i;
        // pairs (k, k | bit) with bit clear: split into blocks of 2*bit
        amps.par_chunks_mut(bit << 1).with_min_len((1 << 12) / (bit << 1).min(1 << 12)).for_each(|chunk| {
            let (lo, hi) = chunk.split_at_mut(bit);
            for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x0, x1) = (*a0, *a1);
                *a0 = x0 * c + x1 * mis;
                *a1 = x0 * mis + x1 * c;
            }
        });
    }
}

/// Propagates through a list of steps.
pub fn evolve_steps(psi: &mut StateVector, cache: &DiagonalCache, steps: &[Step], opts: &EvolveOptions) -> Result<()> {
    let n = psi.n();
    for s in steps {
        let phase = s.dt * cache.spread(-s.delta).max(s.omega.abs());
        if phase > opts.phase_limit {
            return Err(Error::DtTooLarge { phase, limit: opts.phase_limit });
        }
    }
    let mut pending = PendingPhase::default();
    for s in steps {
        pending.add(0.5 * s.dt, -s.delta);
        pending.flush(cache, psi.amplitudes_mut());
        rotate_x(psi.amplitudes_mut(), n, 0.5 * s.omega * s.dt);
        pending.add(0.5 * s.dt, -s.delta);
    }
    pending.flush(cache, psi.amplitudes_mut());
    Ok(())
}

/// Evolves `psi0` under `protocol`, returning the state at each time in
/// `t_out` (ascending, within `[0, T]`).
pub fn evolve(
    psi0: &StateVector,
    cache: &DiagonalCache,
    protocol: &Protocol,
    dt: f64,
    t_out: &[f64],
    opts: &EvolveOptions,
) -> Result<Vec<StateVector>> {
    if !(dt > 0.0) {
        return Err(Error::Params(format!("dt must be positive, got {dt}")));
    }
    let mut psi = psi0.clone();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(t_out.len());
    for &target in t_out {
        if target < t - 1e-15 || target > protocol.total_time * (1.0 + 1e-12) {
            return Err(Error::Params(format!("output time {target} not ascending within [0, T]")));
        }
        if target > t {
            let steps = protocol.sample_range(t, target, dt);
            evolve_steps(&mut psi, cache, &steps, opts)?;
            t = target;
        }
        out.push(psi.clone());
    }
    Ok(out)
}
