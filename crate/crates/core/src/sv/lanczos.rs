//! Restarted Lanczos with full reorthogonalisation and deflation.
//!
//! Eigenpairs are found one at a time; each new Krylov space is kept
//! orthogonal to the converged vectors, so degenerate levels come out as
//! separate pairs.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{apply_hamiltonian_real, check_cap, DiagonalCache, StateVector, DEFAULT_SITE_CAP};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    pub site_cap: usize,
    /// Largest Krylov space per restart.
    pub max_krylov: usize,
    pub max_restarts: usize,
    /// Residual target relative to the norm estimate.
    pub tol: f64,
    pub seed: u64,
    /// Memory budget for the Krylov basis, bytes.
    pub memory: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            site_cap: DEFAULT_SITE_CAP,
            max_krylov: 80,
            max_restarts: 200,
            tol: 1e-8,
            seed: 0x5eed,
            memory: 2 << 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub energy: f64,
    pub state: StateVector,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    // two passes of classical Gram-Schmidt
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, v);
            axpy(-c, q, v);
        }
    }
}

/// Lowest `n_states` eigenpairs of `D + count_coeff * N_ryd + hx * sum X`.
pub fn ground_state(
    cache: &DiagonalCache,
    count_coeff: f64,
    hx: f64,
    n_states: usize,
    opts: &LanczosOptions,
) -> Result<Vec<Eigenpair>> {
    check_cap(cache.n(), opts.site_cap)?;
    let dim = 1usize << cache.n();
    let n_states = n_states.min(dim);
    let hnorm = cache.norm_estimate(count_coeff, hx).max(1e-300);
    let tol = opts.tol * hnorm;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mem_cap = (opts.memory / (8 * dim)).max(4);

    let mut found: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::new();
    let mut hv = vec![0.0; dim];

    for _ in 0..n_states {
        let room = dim - found.len();
        let m_max = opts.max_krylov.min(room).min(mem_cap).max(1);
        let mut start: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut converged = None;
        for _restart in 0..opts.max_restarts {
            orthogonalize(&mut start, &found);
            let s = norm(&start);
            if s == 0.0 {
                return Err(Error::NoConvergence("start vector lies in the deflated space".into()));
            }
            start.iter_mut().for_each(|x| *x /= s);

            let mut basis: Vec<Vec<f64>> = vec![start.clone()];
            let mut alpha = Vec::new();
            let mut beta: Vec<f64> = Vec::new();
            loop {
                let k = basis.len() - 1;
                apply_hamiltonian_real(cache, count_coeff, hx, &basis[k], &mut hv);
                let a = dot(&basis[k], &hv);
                alpha.push(a);
                if basis.len() == m_max {
                    break;
                }
                let mut w = hv.clone();
                axpy(-a, &basis[k], &mut w);
                if k > 0 {
                    axpy(-beta[k - 1], &basis[k - 1], &mut w);
                }
                orthogonalize(&mut w, &basis);
                orthogonalize(&mut w, &found);
                let b = norm(&w);
                if b <= 1e-14 * hnorm {
                    break;
                }
                w.iter_mut().for_each(|x| *x /= b);
                beta.push(b);
                basis.push(w);
            }
            let m = alpha.len();
            let mut t = DMatrix::<f64>::zeros(m, m);
            for i in 0..m {
                t[(i, i)] = alpha[i];
                if i + 1 < m {
                    t[(i, i + 1)] = beta[i];
                    t[(i + 1, i)] = beta[i];
                }
            }
            let eig = SymmetricEigen::new(t);
            let (imin, _) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            let mut x = vec![0.0; dim];
            for (i, q) in basis.iter().enumerate() {
                axpy(eig.eigenvectors[(i, imin)], q, &mut x);
            }
            orthogonalize(&mut x, &found);
            let nx = norm(&x);
            x.iter_mut().for_each(|v| *v /= nx);
            apply_hamiltonian_real(cache, count_coeff, hx, &x, &mut hv);
            let e = dot(&x, &hv);
            axpy(-e, &x, &mut hv);
            let res = norm(&hv);
            if res <= tol {
                converged = Some((e, x, res));
                break;
            }
            start = x;
        }
        let (e, x, res) = converged
            .ok_or_else(|| Error::NoConvergence(format!("eigenpair {} not converged", found.len())))?;
        let amps = x.iter().map(|&v| C64::new(v, 0.0)).collect();
        out.push(Eigenpair { energy: e, state: StateVector::from_amplitudes(cache.n(), amps), residual: res });
        found.push(x);
    }
    out.sort_by(|a, b| a.energy.partial_cmp(&b.energy).unwrap());
    Ok(out)
}
