//! A single SSE Markov chain.
//!
//! The simulated Hamiltonian is written as
//! `H = -sum_t (w_t - C_t) - h sum_i (1 + X_i) + N h + c`
//! where each diagonal term `t` acts on one or two sites with a weight table
//! `w_t(n_a, n_b) = C_t - E_t(n_a, n_b) > 0`, and `h = |Omega/2|`. The sign
//! of the transverse field is irrelevant: every site carries an even number
//! of flips, so it is gauged away by a global z rotation.
//!
//! Vertex types in the operator string: identity, diagonal term `t`,
//! constant site operator `h` on site `i`, flip operator `h X_i`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::model::SpinHamiltonian;

const ID: u8 = 0;
const TERM: u8 = 1;
const CONST: u8 = 2;
const FLIP: u8 = 3;

#[derive(Debug, Clone, Copy, Default)]
struct Op {
    kind: u8,
    idx: u32,
}

#[derive(Debug, Clone)]
pub(crate) struct Term {
    a: u32,
    /// Second site; equal to `a` for one-site terms.
    b: u32,
    /// Indexed by `n_a | n_b << 1`.
    w: [f64; 4],
    wmax: f64,
}

impl Term {
    fn bits(&self, state: &[u8]) -> usize {
        (state[self.a as usize] | (state[self.b as usize] << 1)) as usize
    }
}

/// Diagonal terms of an SSE decomposition plus the constants needed to turn
/// operator counts back into energies.
#[derive(Debug, Clone)]
pub(crate) struct Decomposition {
    pub n: usize,
    pub terms: Vec<Term>,
    pub h: f64,
    /// `sum_t C_t + N h + c`, so that `<H> = -<n>/beta + offset`.
    pub offset: f64,
}

impl Decomposition {
    /// Site energies are spread evenly over the pair terms touching the
    /// site; sites without pairs get a one-site term.
    pub fn new(ham: &SpinHamiltonian, eps_shift: f64) -> Result<Self> {
        let d = ham.folded_diagonal();
        let n = d.n;
        let pairs: Vec<(usize, usize, f64)> = d.pairs.iter().copied().filter(|p| p.2 != 0.0).collect();
        let mut degree = vec![0usize; n];
        for &(i, j, _) in &pairs {
            degree[i] += 1;
            degree[j] += 1;
        }
        let share = |i: usize| if degree[i] > 0 { d.site[i] / degree[i] as f64 } else { 0.0 };
        let mut terms = Vec::new();
        let mut offset = d.constant;
        let mut push = |a: usize, b: usize, e: [f64; 4]| -> Result<()> {
            let emax = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let c = emax.max(0.0) + eps_shift;
            let w = [c - e[0], c - e[1], c - e[2], c - e[3]];
            if w.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::SignProblem);
            }
            offset += c;
            terms.push(Term { a: a as u32, b: b as u32, w, wmax: w.iter().copied().fold(0.0, f64::max) });
            Ok(())
        };
        for &(i, j, v) in &pairs {
            let (si, sj) = (share(i), share(j));
            push(i, j, [0.0, si, sj, v + si + sj])?;
        }
        for i in 0..n {
            if degree[i] == 0 && d.site[i] != 0.0 {
                // one-site term: n_b aliases n_a, so only entries 0 and 3 occur
                push(i, i, [0.0, d.site[i], d.site[i], d.site[i]])?;
            }
        }
        let h = ham.hx.abs();
        offset += n as f64 * h;
        Ok(Decomposition { n, terms, h, offset })
    }
}

pub(crate) struct Chain<'a> {
    dec: &'a Decomposition,
    beta: f64,
    alias: Option<WeightedAliasIndex<f64>>,
    w_total: f64,
    ops: Vec<Op>,
    n_ops: usize,
    pub spins: Vec<u8>,
    rng: ChaCha8Rng,
    // scratch for the cluster update
    bits: Vec<u8>,
    lists: Vec<Vec<u32>>,
    state: Vec<u8>,
}

impl<'a> Chain<'a> {
    pub fn new(dec: &'a Decomposition, beta: f64, seed: u64, stream: u64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Params(format!("chain needs a positive inverse temperature, got {beta}")));
        }
        let mut weights: Vec<f64> = dec.terms.iter().map(|t| t.wmax).collect();
        weights.extend(std::iter::repeat_n(dec.h, dec.n));
        let w_total: f64 = weights.iter().sum();
        let alias = if w_total > 0.0 {
            Some(WeightedAliasIndex::new(weights).map_err(|e| Error::Params(e.to_string()))?)
        } else {
            None
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let m0 = 20.max(dec.n);
        Ok(Chain {
            dec,
            beta,
            alias,
            w_total,
            ops: vec![Op::default(); m0],
            n_ops: 0,
            spins: vec![0; dec.n],
            rng,
            bits: Vec::new(),
            lists: vec![Vec::new(); dec.n],
            state: vec![0; dec.n],
        })
    }

    pub fn n_ops(&self) -> usize {
        self.n_ops
    }

    pub fn cutoff(&self) -> usize {
        self.ops.len()
    }

    /// Energy of one configuration from its operator count.
    pub fn energy_estimate(&self) -> f64 {
        -(self.n_ops as f64) / self.beta + self.dec.offset
    }

    pub fn sweep(&mut self) {
        self.diagonal_update();
        self.cluster_update();
    }

    /// Grows the cutoff to `4/3` of the operator count when the string is
    /// more than 3/4 full, inserting identities at uniformly random slots.
    /// Returns whether the cutoff changed.
    pub fn adjust_cutoff(&mut self) -> bool {
        let m = self.ops.len();
        if 4 * self.n_ops <= 3 * m {
            return false;
        }
        let target = (self.n_ops + self.n_ops / 3).max(m + 1);
        let mut extra = target - m;
        let mut remaining = target;
        let mut out = Vec::with_capacity(target);
        let mut it = self.ops.iter();
        while remaining > 0 {
            if self.rng.random_range(0..remaining) < extra {
                out.push(Op::default());
                extra -= 1;
            } else {
                out.push(*it.next().unwrap());
            }
            remaining -= 1;
        }
        self.ops = out;
        true
    }

    /// At an empty slot a vertex type `t` is drawn with probability
    /// `w_t^max / W` and inserted with probability
    /// `min(1, beta W / (M - n)) * w_t(s) / w_t^max`; a diagonal vertex is
    /// removed with `min(1, (M - n + 1) / (beta W))`. The insertion rate of
    /// type `t` is then `min(1, beta W/(M-n)) w_t(s)/W`, which balances the
    /// removal rate against the weight `beta^n (M - n)! / M! prod w`.
    fn diagonal_update(&mut self) {
        let m = self.ops.len();
        let bw = self.beta * self.w_total;
        let n_terms = self.dec.terms.len();
        self.state.copy_from_slice(&self.spins);
        for p in 0..m {
            let op = self.ops[p];
            match op.kind {
                ID => {
                    let Some(alias) = self.alias.as_ref() else { continue };
                    let base = (bw / (m - self.n_ops) as f64).min(1.0);
                    let u: f64 = self.rng.random();
                    if u >= base {
                        continue;
                    }
                    let t = alias.sample(&mut self.rng);
                    let accept = if t < n_terms {
                        let term = &self.dec.terms[t];
                        base * term.w[term.bits(&self.state)] / term.wmax
                    } else {
                        base
                    };
                    if u < accept {
                        self.ops[p] = if t < n_terms {
                            Op { kind: TERM, idx: t as u32 }
                        } else {
                            Op { kind: CONST, idx: (t - n_terms) as u32 }
                        };
                        self.n_ops += 1;
                    }
                }
                TERM | CONST => {
                    let accept = (m - self.n_ops + 1) as f64 / bw;
                    if accept >= 1.0 || self.rng.random::<f64>() < accept {
                        self.ops[p] = Op::default();
                        self.n_ops -= 1;
                    }
                }
                _ => self.state[op.idx as usize] ^= 1,
            }
        }
    }

    /// Line-segment update. On each site the imaginary-time world line is
    /// cut at the transverse vertices; flipping the spin on one segment
    /// toggles the two bounding vertices between constant and flip type
    /// (equal weight `h`), so the proposal is symmetric and the Metropolis
    /// ratio is the product of `w(flipped)/w(old)` over the diagonal terms
    /// the segment passes through. Without transverse vertices the whole
    /// world line is flipped.
    fn cluster_update(&mut self) {
        let m = self.ops.len();
        self.bits.resize(m, 0);
        for l in self.lists.iter_mut() {
            l.clear();
        }
        self.state.copy_from_slice(&self.spins);
        for p in 0..m {
            let op = self.ops[p];
            match op.kind {
                ID => {}
                TERM => {
                    let t = &self.dec.terms[op.idx as usize];
                    self.bits[p] = t.bits(&self.state) as u8;
                    self.lists[t.a as usize].push(p as u32);
                    if t.b != t.a {
                        self.lists[t.b as usize].push(p as u32);
                    }
                }
                CONST => self.lists[op.idx as usize].push(p as u32),
                _ => {
                    self.lists[op.idx as usize].push(p as u32);
                    self.state[op.idx as usize] ^= 1;
                }
            }
        }
        let mut lists = std::mem::take(&mut self.lists);
        let mut cuts: Vec<usize> = Vec::new();
        for (i, list) in lists.iter_mut().enumerate() {
            cuts.clear();
            cuts.extend((0..list.len()).filter(|&k| self.ops[list[k] as usize].kind >= CONST));
            if cuts.is_empty() {
                if self.try_flip(i, list, 0, list.len()) {
                    self.spins[i] ^= 1;
                }
                continue;
            }
            let nc = cuts.len();
            for s in 0..nc {
                let (start, end) = (cuts[s], cuts[(s + 1) % nc]);
                let wraps = end <= start;
                let accepted = if wraps {
                    self.try_flip_wrapped(i, list, start + 1, end)
                } else {
                    self.try_flip(i, list, start + 1, end)
                };
                if accepted {
                    if start != end {
                        self.toggle(list[start]);
                        self.toggle(list[end]);
                    }
                    if wraps {
                        self.spins[i] ^= 1;
                    }
                }
            }
        }
        self.lists = lists;
    }

    fn toggle(&mut self, p: u32) {
        let op = &mut self.ops[p as usize];
        op.kind = if op.kind == CONST { FLIP } else { CONST };
    }

    fn ratio(&self, i: usize, positions: &[u32]) -> f64 {
        let mut r = 1.0;
        for &p in positions {
            let op = self.ops[p as usize];
            if op.kind != TERM {
                continue;
            }
            let t = &self.dec.terms[op.idx as usize];
            let b = self.bits[p as usize] as usize;
            let mask = if t.a == t.b { 3 } else if t.a as usize == i { 1 } else { 2 };
            r *= t.w[b ^ mask] / t.w[b];
        }
        r
    }

    fn apply(&mut self, i: usize, positions: &[u32]) {
        for &p in positions {
            let op = self.ops[p as usize];
            if op.kind != TERM {
                continue;
            }
            let t = &self.dec.terms[op.idx as usize];
            let mask = if t.a == t.b { 3 } else if t.a as usize == i { 1 } else { 2 };
            self.bits[p as usize] ^= mask;
        }
    }

    fn metropolis(&mut self, r: f64) -> bool {
        r >= 1.0 || self.rng.random::<f64>() < r
    }

    fn try_flip(&mut self, i: usize, list: &[u32], from: usize, to: usize) -> bool {
        let seg = &list[from..to];
        let r = self.ratio(i, seg);
        if self.metropolis(r) {
            self.apply(i, seg);
            true
        } else {
            false
        }
    }

    fn try_flip_wrapped(&mut self, i: usize, list: &[u32], from: usize, to: usize) -> bool {
        let (tail, head) = (&list[from.min(list.len())..], &list[..to]);
        let r = self.ratio(i, tail) * self.ratio(i, head);
        if self.metropolis(r) {
            self.apply(i, tail);
            self.apply(i, head);
            true
        } else {
            false
        }
    }

    /// Checks the periodicity of the imaginary-time configuration and the
    /// stored operator count (used by tests).
    #[cfg(test)]
    pub fn consistent(&self) -> bool {
        let mut s = self.spins.clone();
        let mut count = 0;
        for op in &self.ops {
            if op.kind != ID {
                count += 1;
            }
            if op.kind == FLIP {
                s[op.idx as usize] ^= 1;
            }
        }
        s == self.spins && count == self.n_ops
    }
}
