//! Dense statevector engine.
//!
//! Amplitude index `c` encodes site `j` in bit `j - 1`. Rotation conventions:
//! `RX(θ) = exp(−iθσˣ/2)`, `RZ(θ) = exp(−iθσᶻ/2)`. A σʸ measurement is
//! realized by applying `S†` and then `H` before reading the computational
//! basis; σˣ by `H` alone.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, PAR_THRESHOLD, REDUCE_CHUNK};
use crate::model::{self, hamiltonian_terms, Axis, ModelParams, PauliString, MAX_SITES};
use crate::rng::{substream, StreamTag};
use crate::{Error, Result, C64};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Largest chain evolved through a precomputed dense propagator.
pub const DENSE_PROPAGATOR_MAX_SITES: usize = 10;
/// Per-step tolerance of the Krylov exponential.
pub const KRYLOV_TOL: f64 = 1e-12;
const KRYLOV_MAX_DIM: usize = 30;

/// Identifies the role a gate plays; used for gate-count metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GateLabel {
    Field,
    Bond,
    Hadamard,
    PauliX,
    PauliY,
    PauliZ,
    SDagger,
    Rz,
    Rx,
    Cnot,
    Custom,
}

/// One- or two-qubit unitary on 1-indexed sites.
///
/// For a two-qubit gate on `(a, b)` the 4×4 matrix acts on `|q_a q_b⟩` with
/// row index `2·q_a + q_b`.
#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    One {
        site: usize,
        matrix: [[C64; 2]; 2],
        label: GateLabel,
    },
    Two {
        sites: (usize, usize),
        matrix: [[C64; 4]; 4],
        label: GateLabel,
    },
}

impl Gate {
    pub fn one(site: usize, matrix: [[C64; 2]; 2], label: GateLabel) -> Gate {
        Gate::One { site, matrix, label }
    }

    pub fn two(a: usize, b: usize, matrix: [[C64; 4]; 4], label: GateLabel) -> Gate {
        Gate::Two { sites: (a, b), matrix, label }
    }

    pub fn hadamard(site: usize) -> Gate {
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        Gate::one(site, [[s, s], [s, -s]], GateLabel::Hadamard)
    }

    pub fn pauli(site: usize, axis: Axis) -> Gate {
        match axis {
            Axis::X => Gate::one(site, [[ZERO, ONE], [ONE, ZERO]], GateLabel::PauliX),
            Axis::Y => Gate::one(site, [[ZERO, -I], [I, ZERO]], GateLabel::PauliY),
            Axis::Z => Gate::one(site, [[ONE, ZERO], [ZERO, -ONE]], GateLabel::PauliZ),
        }
    }

    pub fn s_dagger(site: usize) -> Gate {
        Gate::one(site, [[ONE, ZERO], [ZERO, -I]], GateLabel::SDagger)
    }

    pub fn rz(site: usize, theta: f64) -> Gate {
        let m = C64::from_polar(1.0, -theta / 2.0);
        let p = C64::from_polar(1.0, theta / 2.0);
        Gate::one(site, [[m, ZERO], [ZERO, p]], GateLabel::Rz)
    }

    pub fn rx(site: usize, theta: f64) -> Gate {
        let c = C64::new((theta / 2.0).cos(), 0.0);
        let s = C64::new(0.0, -(theta / 2.0).sin());
        Gate::one(site, [[c, s], [s, c]], GateLabel::Rx)
    }

    /// CNOT with `control` and `target`.
    pub fn cnot(control: usize, target: usize) -> Gate {
        let mut m = [[ZERO; 4]; 4];
        m[0][0] = ONE;
        m[1][1] = ONE;
        m[2][3] = ONE;
        m[3][2] = ONE;
        Gate::two(control, target, m, GateLabel::Cnot)
    }

    /// `exp(iθ σˣ_a σˣ_b)`.
    pub fn xx_rotation(a: usize, b: usize, theta: f64) -> Gate {
        let c = C64::new(theta.cos(), 0.0);
        let s = C64::new(0.0, theta.sin());
        let mut m = [[ZERO; 4]; 4];
        for k in 0..4 {
            m[k][k] = c;
            m[k][3 - k] = s;
        }
        Gate::two(a, b, m, GateLabel::Bond)
    }

    /// `exp(i·dt·(g σᶻ + h σˣ))`, the exact single-site propagator.
    pub fn field_rotation(site: usize, g: f64, h: f64, dt: f64) -> Gate {
        let r = g.hypot(h);
        if r == 0.0 {
            return Gate::one(site, [[ONE, ZERO], [ZERO, ONE]], GateLabel::Field);
        }
        let c = (dt * r).cos();
        let s = (dt * r).sin() / r;
        // cos(rt)·I + i·sin(rt)/r·(g σᶻ + h σˣ)
        let m = [
            [C64::new(c, s * g), C64::new(0.0, s * h)],
            [C64::new(0.0, s * h), C64::new(c, -s * g)],
        ];
        Gate::one(site, m, GateLabel::Field)
    }

    pub fn label(&self) -> GateLabel {
        match self {
            Gate::One { label, .. } | Gate::Two { label, .. } => *label,
        }
    }

    pub fn is_two_qubit(&self) -> bool {
        matches!(self, Gate::Two { .. })
    }

    pub fn sites(&self) -> Vec<usize> {
        match self {
            Gate::One { site, .. } => vec![*site],
            Gate::Two { sites, .. } => vec![sites.0, sites.1],
        }
    }

    /// Dense matrix on the gate's own qubits (2×2 or 4×4).
    pub fn local_matrix(&self) -> DMatrix<C64> {
        match self {
            Gate::One { matrix, .. } => DMatrix::from_fn(2, 2, |r, c| matrix[r][c]),
            Gate::Two { matrix, .. } => DMatrix::from_fn(4, 4, |r, c| matrix[r][c]),
        }
    }

    /// Largest entry of `U†U − I`.
    pub fn unitarity_error(&self) -> f64 {
        let m = self.local_matrix();
        let n = m.nrows();
        (m.adjoint() * &m - DMatrix::<C64>::identity(n, n)).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn check(&self, n_sites: usize) -> Result<()> {
        let in_range = |s: usize| {
            if s == 0 || s > n_sites {
                Err(Error::SiteOutOfRange { site: s, n_sites })
            } else {
                Ok(())
            }
        };
        match self {
            Gate::One { site, .. } => in_range(*site),
            Gate::Two { sites: (a, b), .. } => {
                in_range(*a)?;
                in_range(*b)?;
                if a == b {
                    return Err(Error::DuplicateTargets(*a));
                }
                Ok(())
            }
        }
    }
}

/// Register of `n_sites` qubits as `2^n_sites` complex amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_sites: usize,
    amps: Vec<C64>,
}

fn check_register(n_sites: usize) -> Result<()> {
    if n_sites == 0 || n_sites > MAX_SITES {
        return Err(Error::ChainLength(n_sites, 1, MAX_SITES));
    }
    Ok(())
}

impl StateVector {
    /// `|0…0⟩`
    pub fn zeros(n_sites: usize) -> Result<Self> {
        check_register(n_sites)?;
        let mut amps = vec![ZERO; 1 << n_sites];
        amps[0] = ONE;
        Ok(StateVector { n_sites, amps })
    }

    pub fn basis_state(n_sites: usize, index: u64) -> Result<Self> {
        check_register(n_sites)?;
        if index >> n_sites != 0 {
            return Err(Error::InvalidParameter(format!("basis index {index} exceeds {n_sites} bits")));
        }
        let mut amps = vec![ZERO; 1 << n_sites];
        amps[index as usize] = ONE;
        Ok(StateVector { n_sites, amps })
    }

    /// `|→,…,→⟩`: Hadamard on every site of `|0…0⟩`.
    pub fn all_plus(n_sites: usize) -> Result<Self> {
        check_register(n_sites)?;
        let a = C64::new((0.5f64).powf(n_sites as f64 / 2.0), 0.0);
        Ok(StateVector { n_sites, amps: vec![a; 1 << n_sites] })
    }

    /// Wraps raw amplitudes; the length must be a power of two.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::InvalidParameter(format!("amplitude count {len} is not a power of two")));
        }
        let n_sites = len.trailing_zeros() as usize;
        check_register(n_sites)?;
        Ok(StateVector { n_sites, amps })
    }

    /// Haar-like random state from Gaussian amplitudes.
    pub fn random<R: Rng + ?Sized>(n_sites: usize, rng: &mut R) -> Result<Self> {
        check_register(n_sites)?;
        let mut gauss = || {
            // Box-Muller
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let amps: Vec<C64> = (0..1usize << n_sites).map(|_| C64::new(gauss(), gauss())).collect();
        let mut s = StateVector { n_sites, amps };
        s.normalize();
        Ok(s)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
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

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        linalg::norm_sqr(&self.amps).sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        linalg::scale(1.0 / n, &mut self.amps);
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        linalg::cdot(&self.amps, &other.amps)
    }

    /// `1 − |⟨self|other⟩|²`
    pub fn infidelity(&self, other: &StateVector) -> f64 {
        1.0 - self.inner(other).norm_sqr()
    }

    pub fn apply_gate(&mut self, gate: &Gate) -> Result<()> {
        gate.check(self.n_sites)?;
        match gate {
            Gate::One { site, matrix, .. } => apply_one(&mut self.amps, site - 1, matrix),
            Gate::Two { sites, matrix, .. } => apply_two(&mut self.amps, sites.0 - 1, sites.1 - 1, matrix),
        }
        Ok(())
    }

    pub fn apply_gates<'a>(&mut self, gates: impl IntoIterator<Item = &'a Gate>) -> Result<()> {
        for g in gates {
            self.apply_gate(g)?;
        }
        Ok(())
    }

    /// `⟨ψ|P|ψ⟩` for a Pauli string.
    pub fn expectation_pauli(&self, p: &PauliString) -> f64 {
        let amps = &self.amps;
        let chunk_sum = |start: usize, chunk: &[C64]| -> f64 {
            chunk
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let c = (start + k) as u64;
                    (amps[(c ^ p.flip) as usize].conj() * v).re * p.sign(c)
                })
                .sum::<f64>()
        };
        // only the real part of i^{n_y} Σ(...) survives for Hermitian P;
        // sum real and imaginary parts separately when n_y is odd
        let total: f64 = if p.n_y.is_multiple_of(2) {
            reduce_indexed(amps, chunk_sum)
        } else {
            let imag_sum = |start: usize, chunk: &[C64]| -> f64 {
                chunk
                    .iter()
                    .enumerate()
                    .map(|(k, v)| {
                        let c = (start + k) as u64;
                        (amps[(c ^ p.flip) as usize].conj() * v).im * p.sign(c)
                    })
                    .sum::<f64>()
            };
            reduce_indexed(amps, imag_sum)
        };
        match p.n_y % 4 {
            0 => total,
            1 => -total,
            2 => -total,
            _ => total,
        }
    }

    /// Exact `⟨σ^axis_site⟩`.
    pub fn expectation(&self, axis: Axis, site: usize) -> Result<f64> {
        let p = PauliString::from_factors(&[(site, axis)], self.n_sites)?;
        Ok(self.expectation_pauli(&p))
    }

    /// Exact `⟨σ^a_i σ^b_j⟩`.
    pub fn correlation(&self, a: (usize, Axis), b: (usize, Axis)) -> Result<f64> {
        let p = PauliString::from_factors(&[a, b], self.n_sites)?;
        Ok(self.expectation_pauli(&p))
    }

    /// Site-resolved expectations for one axis, sites in order.
    pub fn site_expectations(&self, axis: Axis) -> Vec<f64> {
        (1..=self.n_sites)
            .map(|j| self.expectation(axis, j).expect("site in range"))
            .collect()
    }

    /// Rotates every site so that a computational-basis readout measures the
    /// requested axis.
    pub fn rotate_to_measurement_basis(&mut self, axes: &[Axis]) -> Result<()> {
        if axes.len() != self.n_sites {
            return Err(Error::DimensionMismatch { expected: self.n_sites, got: axes.len() });
        }
        for (k, axis) in axes.iter().enumerate() {
            let site = k + 1;
            match axis {
                Axis::Z => {}
                Axis::X => self.apply_gate(&Gate::hadamard(site))?,
                Axis::Y => {
                    self.apply_gate(&Gate::s_dagger(site))?;
                    self.apply_gate(&Gate::hadamard(site))?;
                }
            }
        }
        Ok(())
    }

    /// Draws `shots` computational-basis outcomes of the state as it is.
    pub fn sample_computational<R: Rng + ?Sized>(&self, shots: u64, rng: &mut R) -> Vec<u64> {
        let mut cumulative = Vec::with_capacity(self.amps.len());
        let mut acc = 0.0;
        for a in &self.amps {
            acc += a.norm_sqr();
            cumulative.push(acc);
        }
        let last = self.amps.len() - 1;
        (0..shots)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                cumulative.partition_point(|&c| c <= u).min(last) as u64
            })
            .collect()
    }

    /// Samples every site in its own measurement basis.
    ///
    /// Bit `j − 1` of each outcome is 0 for the `+1` eigenvalue of the axis
    /// measured on site `j`.
    pub fn sample_bitstrings<R: Rng + ?Sized>(&self, axes: &[Axis], shots: u64, rng: &mut R) -> Result<Vec<u64>> {
        let mut rotated = self.clone();
        rotated.rotate_to_measurement_basis(axes)?;
        Ok(rotated.sample_computational(shots, rng))
    }

    /// Histogram of `shots` measurements, reproducible for a given seed.
    pub fn sample_counts(&self, axes: &[Axis], shots: u64, seed: u64) -> Result<Counts> {
        if shots == 0 {
            return Err(Error::InvalidParameter("shots must be at least 1; use expectation() for exact values".into()));
        }
        let mut rng = substream(seed, StreamTag::Sampling, 0, 0);
        let samples = self.sample_bitstrings(axes, shots, &mut rng)?;
        Ok(Counts::from_samples(self.n_sites, &samples))
    }

    /// `⟨H⟩` for the chain Hamiltonian.
    pub fn energy(&self, params: &ModelParams) -> Result<f64> {
        let op = HamiltonianOp::new(params)?;
        Ok(op.expectation(self))
    }

    /// Writes a little-endian binary snapshot: `L`, step and `dt` as f64,
    /// then interleaved re/im amplitudes.
    pub fn write_snapshot<W: Write>(&self, mut w: W, step: u64, dt: f64) -> Result<()> {
        w.write_all(&(self.n_sites as f64).to_le_bytes())?;
        w.write_all(&(step as f64).to_le_bytes())?;
        w.write_all(&dt.to_le_bytes())?;
        for a in &self.amps {
            w.write_all(&a.re.to_le_bytes())?;
            w.write_all(&a.im.to_le_bytes())?;
        }
        Ok(())
    }

    /// Inverse of [`write_snapshot`](Self::write_snapshot); returns `(state, step, dt)`.
    pub fn read_snapshot<R: Read>(mut r: R) -> Result<(StateVector, u64, f64)> {
        let mut buf = [0u8; 8];
        let mut next = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        };
        let n_sites = next(&mut r)? as usize;
        let step = next(&mut r)? as u64;
        let dt = next(&mut r)?;
        check_register(n_sites)?;
        let mut amps = Vec::with_capacity(1 << n_sites);
        for _ in 0..1usize << n_sites {
            let re = next(&mut r)?;
            let im = next(&mut r)?;
            amps.push(C64::new(re, im));
        }
        Ok((StateVector { n_sites, amps }, step, dt))
    }
}

/// Deterministic chunked reduction over amplitudes with their global index.
fn reduce_indexed<F>(amps: &[C64], f: F) -> f64
where
    F: Fn(usize, &[C64]) -> f64 + Sync,
{
    if amps.len() < PAR_THRESHOLD {
        return f(0, amps);
    }
    let partial: Vec<f64> = amps
        .par_chunks(REDUCE_CHUNK)
        .enumerate()
        .map(|(k, chunk)| f(k * REDUCE_CHUNK, chunk))
        .collect();
    partial.into_iter().sum()
}

fn apply_one(amps: &mut [C64], bit: usize, m: &[[C64; 2]; 2]) {
    let stride = 1usize << bit;
    let kernel = |chunk: &mut [C64]| {
        let (lo, hi) = chunk.split_at_mut(stride);
        for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
            let (x, y) = (*a, *b);
            *a = m[0][0] * x + m[0][1] * y;
            *b = m[1][0] * x + m[1][1] * y;
        }
    };
    if amps.len() >= PAR_THRESHOLD {
        amps.par_chunks_mut(2 * stride).with_min_len(PAR_THRESHOLD / (2 * stride)).for_each(kernel);
    } else {
        amps.chunks_mut(2 * stride).for_each(kernel);
    }
}

fn apply_two(amps: &mut [C64], bit_a: usize, bit_b: usize, m: &[[C64; 4]; 4]) {
    let (hi_bit, lo_bit) = if bit_a > bit_b { (bit_a, bit_b) } else { (bit_b, bit_a) };
    let a_is_hi = bit_a > bit_b;
    let half = 1usize << hi_bit;
    let lo = 1usize << lo_bit;
    // matrix index of (hi, lo) bit values
    let idx = |h: usize, l: usize| if a_is_hi { 2 * h + l } else { 2 * l + h };
    let perm = [idx(0, 0), idx(0, 1), idx(1, 0), idx(1, 1)];
    let kernel = |chunk: &mut [C64]| {
        let (lower, upper) = chunk.split_at_mut(half);
        for block in (0..half).step_by(2 * lo) {
            for i in block..block + lo {
                // amplitudes ordered as (hi, lo) = 00, 01, 10, 11
                let v = [lower[i], lower[i | lo], upper[i], upper[i | lo]];
                let mut x = [ZERO; 4];
                for k in 0..4 {
                    x[perm[k]] = v[k];
                }
                let mut y = [ZERO; 4];
                for r in 0..4 {
                    y[r] = m[r][0] * x[0] + m[r][1] * x[1] + m[r][2] * x[2] + m[r][3] * x[3];
                }
                lower[i] = y[perm[0]];
                lower[i | lo] = y[perm[1]];
                upper[i] = y[perm[2]];
                upper[i | lo] = y[perm[3]];
            }
        }
    };
    if amps.len() >= PAR_THRESHOLD {
        amps.par_chunks_mut(2 * half).with_min_len((PAR_THRESHOLD / (2 * half)).max(1)).for_each(kernel);
    } else {
        amps.chunks_mut(2 * half).for_each(kernel);
    }
}

/// Measurement histogram over bitstrings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n_sites: usize,
    pub shots: u64,
    pub histogram: BTreeMap<u64, u64>,
}

impl Counts {
    pub fn from_samples(n_sites: usize, samples: &[u64]) -> Counts {
        let mut histogram = BTreeMap::new();
        for &s in samples {
            *histogram.entry(s).or_insert(0) += 1;
        }
        Counts { n_sites, shots: samples.len() as u64, histogram }
    }

    /// Mean of `(−1)^bit` for one site.
    pub fn site_expectation(&self, site: usize) -> f64 {
        let mask = 1u64 << (site - 1);
        let signed: i64 = self
            .histogram
            .iter()
            .map(|(&b, &n)| if b & mask == 0 { n as i64 } else { -(n as i64) })
            .sum();
        signed as f64 / self.shots as f64
    }

    /// Mean of `(−1)^{bit_i + bit_j}`.
    pub fn pair_expectation(&self, i: usize, j: usize) -> f64 {
        let mask = (1u64 << (i - 1)) | (1u64 << (j - 1));
        let signed: i64 = self
            .histogram
            .iter()
            .map(|(&b, &n)| if (b & mask).count_ones().is_multiple_of(2) { n as i64 } else { -(n as i64) })
            .sum();
        signed as f64 / self.shots as f64
    }
}

/// Matrix-free chain Hamiltonian acting on full-register vectors.
#[derive(Debug, Clone)]
pub struct HamiltonianOp {
    n_sites: usize,
    diagonal: Vec<f64>,
    off_diagonal: Vec<(PauliString, C64)>,
}

impl HamiltonianOp {
    pub fn new(params: &ModelParams) -> Result<Self> {
        if params.validate().is_error() {
            return Err(Error::ChainLength(params.n_sites, model::MIN_SITES, MAX_SITES));
        }
        let n = params.n_sites;
        let mut diag_terms = Vec::new();
        let mut off_diagonal = Vec::new();
        for term in hamiltonian_terms(params) {
            let p = term.pauli_string(n)?;
            let coeff = p.prefactor() * term.coefficient;
            if p.is_diagonal() {
                diag_terms.push((p, coeff.re));
            } else {
                off_diagonal.push((p, coeff));
            }
        }
        let diagonal = (0..1u64 << n)
            .into_par_iter()
            .map(|c| diag_terms.iter().map(|(p, w)| w * p.sign(c)).sum())
            .collect();
        Ok(HamiltonianOp { n_sites: n, diagonal, off_diagonal })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// `out ← H·v`
    pub fn apply(&self, v: &[C64], out: &mut [C64]) {
        let row = |(c, o): (usize, &mut C64)| {
            let mut acc = v[c] * self.diagonal[c];
            for (p, w) in &self.off_diagonal {
                let src = c as u64 ^ p.flip;
                acc += w * p.sign(src) * v[src as usize];
            }
            *o = acc;
        };
        if v.len() >= PAR_THRESHOLD {
            out.par_iter_mut().enumerate().with_min_len(REDUCE_CHUNK).for_each(row);
        } else {
            out.iter_mut().enumerate().for_each(row);
        }
    }

    pub fn expectation(&self, state: &StateVector) -> f64 {
        let mut hv = vec![ZERO; state.dim()];
        self.apply(state.amplitudes(), &mut hv);
        linalg::cdot(state.amplitudes(), &hv).re
    }

    /// Dense real matrix; only sensible for small chains.
    pub fn to_dense_real(&self) -> DMatrix<f64> {
        let dim = self.diagonal.len();
        let mut m = DMatrix::<f64>::zeros(dim, dim);
        for c in 0..dim {
            m[(c, c)] += self.diagonal[c];
            for (p, w) in &self.off_diagonal {
                let r = c as u64 ^ p.flip;
                m[(r as usize, c)] += w.re * p.sign(c as u64);
            }
        }
        m
    }
}

/// Exact time evolution under the chain Hamiltonian.
///
/// Small chains use a dense propagator `V·exp(−iΛdt)·Vᵀ` built once; larger
/// chains use a Lanczos-Krylov exponential per step.
pub struct ExactPropagator {
    n_sites: usize,
    kind: PropagatorKind,
}

enum PropagatorKind {
    Dense(DMatrix<C64>),
    Krylov { op: HamiltonianOp, dt: f64, tol: f64 },
}

impl ExactPropagator {
    pub fn new(params: &ModelParams, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let op = HamiltonianOp::new(params)?;
        let kind = if params.n_sites <= DENSE_PROPAGATOR_MAX_SITES {
            let (values, vectors) = linalg::symmetric_eigen(op.to_dense_real());
            let vc = vectors.map(|x| C64::new(x, 0.0));
            let mut scaled = vc.clone();
            for (k, &e) in values.iter().enumerate() {
                let phase = C64::from_polar(1.0, -e * dt);
                scaled.column_mut(k).iter_mut().for_each(|x| *x *= phase);
            }
            PropagatorKind::Dense(scaled * vc.transpose())
        } else {
            PropagatorKind::Krylov { op, dt, tol: KRYLOV_TOL }
        };
        Ok(ExactPropagator { n_sites: params.n_sites, kind })
    }

    /// Forces the Krylov path regardless of size.
    pub fn krylov(params: &ModelParams, dt: f64, tol: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let op = HamiltonianOp::new(params)?;
        Ok(ExactPropagator { n_sites: params.n_sites, kind: PropagatorKind::Krylov { op, dt, tol } })
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.kind, PropagatorKind::Dense(_))
    }

    pub fn step(&self, state: &mut StateVector) -> Result<()> {
        if state.n_sites() != self.n_sites {
            return Err(Error::DimensionMismatch { expected: self.n_sites, got: state.n_sites() });
        }
        match &self.kind {
            PropagatorKind::Dense(u) => {
                let v = nalgebra::DVector::from_column_slice(state.amplitudes());
                let out = u * v;
                state.amplitudes_mut().copy_from_slice(out.as_slice());
            }
            PropagatorKind::Krylov { op, dt, tol } => krylov_expm(op, state.amplitudes_mut(), *dt, *tol),
        }
        Ok(())
    }
}

/// `v ← exp(−i·dt·H)·v` by Lanczos projection, subdividing `dt` when the
/// Krylov space saturates before reaching `tol`.
fn krylov_expm(op: &HamiltonianOp, v: &mut [C64], dt: f64, tol: f64) {
    let beta0 = linalg::norm_sqr(v).sqrt();
    if beta0 == 0.0 {
        return;
    }
    let dim = v.len();
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(KRYLOV_MAX_DIM);
    let mut q0 = v.to_vec();
    linalg::scale(1.0 / beta0, &mut q0);
    basis.push(q0);
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![ZERO; dim];
    let max_m = KRYLOV_MAX_DIM.min(dim);
    loop {
        let j = basis.len() - 1;
        op.apply(&basis[j], &mut w);
        let a = linalg::cdot(&basis[j], &w).re;
        alpha.push(a);
        // full reorthogonalization against the whole Krylov basis
        for q in &basis {
            let overlap = linalg::cdot(q, &w);
            linalg::axpy(-overlap, q, &mut w);
        }
        let b = linalg::norm_sqr(&w).sqrt();
        let coeffs = linalg::expm_tridiag_e1(&alpha, &beta, dt);
        let err = b * coeffs[coeffs.len() - 1].norm();
        let converged = err < tol || b < 1e-13;
        if converged || basis.len() == max_m {
            if !converged && dim > max_m {
                // split the step and retry
                krylov_expm(op, v, dt / 2.0, tol / 2.0);
                krylov_expm(op, v, dt / 2.0, tol / 2.0);
                return;
            }
            v.iter_mut().for_each(|x| *x = ZERO);
            for (q, c) in basis.iter().zip(coeffs.iter()) {
                linalg::axpy(c * beta0, q, v);
            }
            return;
        }
        beta.push(b);
        let mut next = w.clone();
        linalg::scale(1.0 / b, &mut next);
        basis.push(next);
    }
}

/// Exact evolution visiting the state at `t_k = k·dt`, `k = 0..=n_steps`.
pub fn exact_evolve_with<F>(state: &mut StateVector, params: &ModelParams, dt: f64, n_steps: usize, mut visit: F) -> Result<()>
where
    F: FnMut(usize, &StateVector),
{
    if params.n_sites != state.n_sites() {
        return Err(Error::DimensionMismatch { expected: params.n_sites, got: state.n_sites() });
    }
    let prop = ExactPropagator::new(params, dt)?;
    visit(0, state);
    for k in 1..=n_steps {
        prop.step(state)?;
        visit(k, state);
    }
    Ok(())
}

/// Exact evolution returning every snapshot including `t = 0`.
pub fn exact_evolve(state: &StateVector, params: &ModelParams, dt: f64, n_steps: usize) -> Result<Vec<StateVector>> {
    let mut snapshots = Vec::with_capacity(n_steps + 1);
    let mut s = state.clone();
    exact_evolve_with(&mut s, params, dt, n_steps, |_, st| snapshots.push(st.clone()))?;
    Ok(snapshots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn all_plus_amplitudes() {
        let s = StateVector::all_plus(1).unwrap();
        for a in s.amplitudes() {
            assert!((a - C64::new(FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
        }
        let s = StateVector::all_plus(12).unwrap();
        for j in 1..=12 {
            assert!((s.expectation(Axis::X, j).unwrap() - 1.0).abs() < 1e-12);
            assert!(s.expectation(Axis::Y, j).unwrap().abs() < 1e-12);
            assert!(s.expectation(Axis::Z, j).unwrap().abs() < 1e-12);
        }
        assert!(StateVector::all_plus(25).is_err());
        assert!(StateVector::all_plus(0).is_err());
    }

    #[test]
    fn all_plus_is_hadamard_layer() {
        let mut s = StateVector::zeros(5).unwrap();
        for j in 1..=5 {
            s.apply_gate(&Gate::hadamard(j)).unwrap();
        }
        let p = StateVector::all_plus(5).unwrap();
        assert!(s.infidelity(&p).abs() < 1e-14);
    }

    #[test]
    fn product_state_energy() {
        // ⟨σˣσˣ⟩ = ⟨σˣ⟩ = 1, ⟨σᶻ⟩ = 0 in |→→→⟩
        let s = StateVector::all_plus(3).unwrap();
        for (g, h) in [(0.0, 0.0), (0.7, 0.3), (1.0, 0.9)] {
            let e = s.energy(&ModelParams { n_sites: 3, g, h }).unwrap();
            assert!((e + 3.0 * (1.0 + h)).abs() < 1e-12);
        }
    }

    #[test]
    fn pauli_x_flips() {
        let mut s = StateVector::zeros(1).unwrap();
        assert!((s.expectation(Axis::Z, 1).unwrap() - 1.0).abs() < 1e-15);
        s.apply_gate(&Gate::pauli(1, Axis::X)).unwrap();
        assert_eq!(s.amplitudes()[1], ONE);
        assert!((s.expectation(Axis::Z, 1).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn hadamard_squared_is_identity() {
        let s0 = StateVector::random(6, &mut rng(3)).unwrap();
        let mut s = s0.clone();
        s.apply_gate(&Gate::hadamard(4)).unwrap();
        s.apply_gate(&Gate::hadamard(4)).unwrap();
        for (a, b) in s.amplitudes().iter().zip(s0.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn xx_rotation_on_plus_plus_is_phase() {
        let s0 = StateVector::all_plus(2).unwrap();
        let mut s = s0.clone();
        s.apply_gate(&Gate::xx_rotation(1, 2, 0.83)).unwrap();
        let overlap = s0.inner(&s);
        assert!((overlap.norm() - 1.0).abs() < 1e-12);
        assert!((overlap - C64::from_polar(1.0, 0.83)).norm() < 1e-12);
        for axis in Axis::ALL {
            for j in 1..=2 {
                let d = s.expectation(axis, j).unwrap() - s0.expectation(axis, j).unwrap();
                assert!(d.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rz_quarter_turn_gives_plus_y() {
        let mut s = StateVector::all_plus(3).unwrap();
        s.apply_gate(&Gate::rz(2, std::f64::consts::FRAC_PI_2)).unwrap();
        assert!((s.expectation(Axis::Y, 2).unwrap() - 1.0).abs() < 1e-12);
        assert!(s.expectation(Axis::Y, 1).unwrap().abs() < 1e-12);
    }

    #[test]
    fn gate_errors() {
        let mut s = StateVector::zeros(3).unwrap();
        assert!(matches!(s.apply_gate(&Gate::hadamard(4)), Err(Error::SiteOutOfRange { .. })));
        assert!(matches!(s.apply_gate(&Gate::hadamard(0)), Err(Error::SiteOutOfRange { .. })));
        assert!(matches!(s.apply_gate(&Gate::cnot(2, 2)), Err(Error::DuplicateTargets(2))));
        assert!(s.expectation(Axis::X, 9).is_err());
    }

    /// Embeds a local gate into the full register by explicit Kronecker
    /// products and index permutation, independent of the stride kernels.
    fn embed(gate: &Gate, n: usize) -> DMatrix<C64> {
        let dim = 1 << n;
        let local = gate.local_matrix();
        let sites = gate.sites();
        let mut full = DMatrix::<C64>::zeros(dim, dim);
        for col in 0..dim {
            for row in 0..dim {
                let other = sites.iter().fold(0usize, |m, s| m | 1 << (s - 1));
                if row & !other != col & !other {
                    continue;
                }
                let local_idx = |x: usize| sites.iter().fold(0, |acc, s| acc * 2 + ((x >> (s - 1)) & 1));
                full[(row, col)] = local[(local_idx(row), local_idx(col))];
            }
        }
        full
    }

    #[test]
    fn kernels_match_embedded_matrices() {
        let n = 5;
        let mut r = rng(11);
        let gates = vec![
            Gate::field_rotation(3, 0.4, 0.7, 0.3),
            Gate::xx_rotation(5, 2, 0.37),
            Gate::cnot(1, 4),
            Gate::cnot(4, 1),
            Gate::rx(5, 1.1),
            Gate::two(2, 3, {
                let mut m = [[ZERO; 4]; 4];
                // a non-symmetric permutation with phases
                m[0][1] = ONE;
                m[1][3] = I;
                m[2][0] = -ONE;
                m[3][2] = -I;
                m
            }, GateLabel::Custom),
        ];
        for g in &gates {
            let s0 = StateVector::random(n, &mut r).unwrap();
            let mut s = s0.clone();
            s.apply_gate(g).unwrap();
            let v = nalgebra::DVector::from_column_slice(s0.amplitudes());
            let expect = embed(g, n) * v;
            for (a, b) in s.amplitudes().iter().zip(expect.iter()) {
                assert!((a - b).norm() < 1e-12, "{:?}", g.label());
            }
        }
    }

    #[test]
    fn large_register_kernels_match_small_path() {
        // exercises the parallel branch (2^15 amplitudes)
        let n = 15;
        let s0 = StateVector::random(n, &mut rng(5)).unwrap();
        let mut s = s0.clone();
        s.apply_gate(&Gate::xx_rotation(15, 1, 0.2)).unwrap();
        s.apply_gate(&Gate::field_rotation(7, 0.3, 0.5, 0.4)).unwrap();
        // undo with the inverse gates
        s.apply_gate(&Gate::field_rotation(7, 0.3, 0.5, -0.4)).unwrap();
        s.apply_gate(&Gate::xx_rotation(15, 1, -0.2)).unwrap();
        assert!(s.infidelity(&s0).abs() < 1e-12);
    }

    #[test]
    fn gates_are_unitary() {
        let gates = [
            Gate::hadamard(1),
            Gate::s_dagger(1),
            Gate::rz(1, 0.3),
            Gate::rx(1, 2.1),
            Gate::field_rotation(1, 0.5, 0.3, 0.4),
            Gate::xx_rotation(1, 2, 0.4),
            Gate::cnot(1, 2),
        ];
        for g in &gates {
            assert!(g.unitarity_error() < 1e-12);
        }
    }

    #[test]
    fn norm_preserved_over_many_gates() {
        let n = 6;
        let mut r = rng(99);
        let mut s = StateVector::random(n, &mut r).unwrap();
        for k in 0..1000 {
            let a = r.random_range(1..=n);
            let mut b = r.random_range(1..=n);
            while b == a {
                b = r.random_range(1..=n);
            }
            let theta: f64 = r.random::<f64>() * 6.0;
            let g = match k % 4 {
                0 => Gate::xx_rotation(a, b, theta),
                1 => Gate::field_rotation(a, theta, 0.3, 0.7),
                2 => Gate::cnot(a, b),
                _ => Gate::hadamard(a),
            };
            s.apply_gate(&g).unwrap();
        }
        assert!((s.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn expectation_matches_dense_operator() {
        let n = 4;
        let s = StateVector::random(n, &mut rng(2)).unwrap();
        let v = nalgebra::DVector::from_column_slice(s.amplitudes());
        for axis in Axis::ALL {
            for j in 1..=n {
                let term = model::PauliTerm::new(1.0, vec![(j, axis)]);
                let m = model::dense_matrix(&[term], n).unwrap();
                let expect = (v.adjoint() * &m * &v)[(0, 0)].re;
                assert!((s.expectation(axis, j).unwrap() - expect).abs() < 1e-12);
            }
        }
        let term = model::PauliTerm::new(1.0, vec![(1, Axis::Y), (3, Axis::X)]);
        let m = model::dense_matrix(std::slice::from_ref(&term), n).unwrap();
        let expect = (v.adjoint() * &m * &v)[(0, 0)].re;
        assert!((s.correlation((1, Axis::Y), (3, Axis::X)).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn sampling_zero_state() {
        let s = StateVector::zeros(1).unwrap();
        let c = s.sample_counts(&[Axis::Z], 1000, 1).unwrap();
        assert_eq!(c.histogram.get(&0), Some(&1000));
        assert_eq!(c.shots, 1000);
        assert!(s.sample_counts(&[Axis::Z], 0, 1).is_err());
    }

    #[test]
    fn sampling_plus_state_in_z() {
        let s = StateVector::all_plus(1).unwrap();
        let shots = 100_000;
        let c = s.sample_counts(&[Axis::Z], shots, 7).unwrap();
        assert!(c.site_expectation(1).abs() < 3.0 / (shots as f64).sqrt());
        // deterministic for a fixed seed
        assert_eq!(c, s.sample_counts(&[Axis::Z], shots, 7).unwrap());
    }

    #[test]
    fn sampled_axes_reproduce_expectations() {
        let n = 4;
        let shots = 20_000u64;
        let mut r = rng(17);
        for trial in 0..6 {
            let s = StateVector::random(n, &mut r).unwrap();
            for axis in Axis::ALL {
                let counts = s.sample_counts(&vec![axis; n], shots, 100 + trial).unwrap();
                for j in 1..=n {
                    let exact = s.expectation(axis, j).unwrap();
                    let se = ((1.0 - exact * exact).max(1e-12) / shots as f64).sqrt();
                    let est = counts.site_expectation(j);
                    assert!((est - exact).abs() < 4.0 * se + 1e-12, "axis {axis} site {j}: {est} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn estimator_mean_converges_over_seeds() {
        let s = StateVector::random(3, &mut rng(4)).unwrap();
        let exact = s.expectation(Axis::Y, 2).unwrap();
        let shots = 2000;
        let seeds = 200;
        let mean: f64 = (0..seeds)
            .map(|k| s.sample_counts(&[Axis::Y; 3], shots, k).unwrap().site_expectation(2))
            .sum::<f64>()
            / seeds as f64;
        let se = ((1.0 - exact * exact) / (shots * seeds) as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se);
    }

    #[test]
    fn snapshot_round_trip() {
        let s = StateVector::random(4, &mut rng(8)).unwrap();
        let mut buf = Vec::new();
        s.write_snapshot(&mut buf, 17, 0.4).unwrap();
        assert_eq!(buf.len(), 24 + 16 * 16);
        assert_eq!(&buf[0..8], &4.0f64.to_le_bytes());
        let (back, step, dt) = StateVector::read_snapshot(&buf[..]).unwrap();
        assert_eq!((step, dt), (17, 0.4));
        assert_eq!(back, s);
    }

    /// Scaling-and-squaring Taylor exponential of `−i·dt·H`; independent of
    /// the eigen-decomposition and Krylov routes.
    fn expm_oracle(h: &DMatrix<C64>, dt: f64) -> DMatrix<C64> {
        let a = h * C64::new(0.0, -dt);
        let norm = a.map(|z| z.norm()).max() * a.nrows() as f64;
        let squarings = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
        let a = &a / C64::new(2f64.powi(squarings), 0.0);
        let dim = a.nrows();
        let mut term = DMatrix::<C64>::identity(dim, dim);
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &a / C64::new(k as f64, 0.0);
            sum += &term;
        }
        for _ in 0..squarings {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn exact_step_matches_dense_exponential_oracle() {
        let params = ModelParams { n_sites: 4, g: 0.7, h: 0.2 };
        let hm = model::dense_matrix(&hamiltonian_terms(&params), 4).unwrap();
        let u = expm_oracle(&hm, 0.1);
        let s0 = StateVector::random(4, &mut rng(21)).unwrap();
        let expect = &u * nalgebra::DVector::from_column_slice(s0.amplitudes());
        let snaps = exact_evolve(&s0, &params, 0.1, 1).unwrap();
        for (a, b) in snaps[1].amplitudes().iter().zip(expect.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
        // the Krylov route agrees as well
        let mut s = s0.clone();
        ExactPropagator::krylov(&params, 0.1, 1e-12).unwrap().step(&mut s).unwrap();
        for (a, b) in s.amplitudes().iter().zip(expect.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn krylov_subdivides_large_steps() {
        let params = ModelParams { n_sites: 6, g: 0.5, h: 0.3 };
        let hm = model::dense_matrix(&hamiltonian_terms(&params), 6).unwrap();
        let u = expm_oracle(&hm, 3.0);
        let s0 = StateVector::random(6, &mut rng(9)).unwrap();
        let expect = &u * nalgebra::DVector::from_column_slice(s0.amplitudes());
        let mut s = s0.clone();
        ExactPropagator::krylov(&params, 3.0, 1e-12).unwrap().step(&mut s).unwrap();
        for (a, b) in s.amplitudes().iter().zip(expect.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn stationary_at_classical_point() {
        let params = ModelParams { n_sites: 6, g: 0.0, h: 0.0 };
        let s0 = StateVector::all_plus(6).unwrap();
        for snap in exact_evolve(&s0, &params, 0.3, 10).unwrap() {
            assert!(snap.infidelity(&s0).abs() < 1e-12);
            for j in 1..=6 {
                assert!(snap.expectation(Axis::Y, j).unwrap().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_halving_agrees() {
        for n in [6, 11] {
            let params = ModelParams { n_sites: n, g: 0.5, h: 0.3 };
            let s0 = StateVector::all_plus(n).unwrap();
            let a = exact_evolve(&s0, &params, 0.2, 5).unwrap().pop().unwrap();
            let b = exact_evolve(&s0, &params, 0.1, 10).unwrap().pop().unwrap();
            assert!(a.infidelity(&b).abs() < 1e-8);
            let diff: f64 = a.amplitudes().iter().zip(b.amplitudes()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            assert!(diff < 1e-8);
        }
    }

    #[test]
    fn energy_and_norm_conserved() {
        let params = ModelParams { n_sites: 8, g: 0.5, h: 0.3 };
        let op = HamiltonianOp::new(&params).unwrap();
        let mut s = StateVector::all_plus(8).unwrap();
        exact_evolve_with(&mut s, &params, 0.05, 100, |_, st| {
            assert!((op.expectation(st) + 8.0 * 1.3).abs() < 1e-8);
            assert!((st.norm() - 1.0).abs() < 1e-10);
        })
        .unwrap();
        assert!(exact_evolve(&s, &params, 0.0, 3).is_err());
        assert!(exact_evolve(&s, &params, -0.1, 3).is_err());
    }
}
