//! Exact diagonalization in the zero-momentum sector.
//!
//! Basis states are translation orbits of computational-basis bitstrings,
//! each represented by its smallest member `r` with orbit size `N_r`. The k=0
//! state of an orbit is `|r̃⟩ = N_r^{-1/2} Σ_{s∈orbit} |s⟩`; a term mapping
//! `|r⟩ → φ|s⟩` contributes `φ·√(N_r/N_{r'})` to `⟨r̃'|H|r̃⟩`, where `r'` is
//! the representative of `s`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::model::{hamiltonian_terms, ModelParams};
use crate::{Error, Result};

pub const MAX_SECTOR_SITES: usize = 20;
/// Largest sector diagonalized densely.
pub const DENSE_MAX_DIM: usize = 4096;
/// Eigenvalues closer than this are one degenerate level.
pub const DEGENERACY_TOL: f64 = 1e-9;
/// Target residual `‖Av − λv‖` of the iterative solver.
pub const RESIDUAL_TOL: f64 = 1e-8;
const LANCZOS_MAX_ITER: usize = 800;

#[derive(Debug, Clone, PartialEq)]
pub struct SectorBasis {
    n_sites: usize,
    reps: Vec<u64>,
    orbit_sizes: Vec<u32>,
}

fn rotate(x: u64, n: usize) -> u64 {
    let mask = (1u64 << n) - 1;
    ((x << 1) | (x >> (n - 1))) & mask
}

/// Smallest member of the translation orbit of `x`, and the orbit size.
pub fn representative(x: u64, n: usize) -> (u64, u32) {
    let mut best = x;
    let mut y = x;
    for shift in 1..=n {
        y = rotate(y, n);
        if y == x {
            return (best, shift as u32);
        }
        best = best.min(y);
    }
    unreachable!("rotation by n is the identity")
}

pub fn build_zero_momentum_basis(n_sites: usize) -> Result<SectorBasis> {
    if !(2..=MAX_SECTOR_SITES).contains(&n_sites) {
        return Err(Error::ChainLength(n_sites, 2, MAX_SECTOR_SITES));
    }
    let pairs: Vec<(u64, u32)> = (0..1u64 << n_sites)
        .into_par_iter()
        .filter_map(|x| {
            let (rep, size) = representative(x, n_sites);
            (rep == x).then_some((x, size))
        })
        .collect();
    let (reps, orbit_sizes) = pairs.into_iter().unzip();
    Ok(SectorBasis { n_sites, reps, orbit_sizes })
}

impl SectorBasis {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.reps.len()
    }

    pub fn representatives(&self) -> &[u64] {
        &self.reps
    }

    pub fn orbit_sizes(&self) -> &[u32] {
        &self.orbit_sizes
    }

    /// Basis index of the orbit containing `state`.
    pub fn index_of(&self, state: u64) -> Option<usize> {
        let (rep, _) = representative(state, self.n_sites);
        self.reps.binary_search(&rep).ok()
    }
}

/// Real symmetric matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorMatrix {
    pub params: ModelParams,
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SectorMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.cols[range.clone()].binary_search(&col) {
            Ok(p) => self.values[range.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, v: &[f64], out: &mut [f64]) {
        let row = |(r, o): (usize, &mut f64)| {
            *o = (self.row_ptr[r]..self.row_ptr[r + 1]).map(|p| self.values[p] * v[self.cols[p]]).sum();
        };
        if self.dim >= 1 << 12 {
            out.par_iter_mut().enumerate().with_min_len(256).for_each(row);
        } else {
            out.iter_mut().enumerate().for_each(row);
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.cols[p])] += self.values[p];
            }
        }
        m
    }

    /// Largest `|A_rc − A_cr|`.
    pub fn symmetry_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.dim {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                worst = worst.max((self.values[p] - self.get(self.cols[p], r)).abs());
            }
        }
        worst
    }
}

/// Projects the chain Hamiltonian onto the k=0 sector.
pub fn assemble_sector_hamiltonian(params: &ModelParams, basis: &SectorBasis) -> Result<SectorMatrix> {
    if params.n_sites != basis.n_sites {
        return Err(Error::DimensionMismatch { expected: basis.n_sites, got: params.n_sites });
    }
    let n = params.n_sites;
    let mut strings = Vec::new();
    for term in hamiltonian_terms(params) {
        let p = term.pauli_string(n)?;
        if p.n_y % 2 == 1 {
            return Err(Error::InvalidParameter("sector assembly requires a real Hamiltonian".into()));
        }
        strings.push((p, term.coefficient * p.prefactor().re));
    }
    let sizes = &basis.orbit_sizes;
    // H is symmetric, so column r of H (the image of |r̃⟩) is stored as row r
    let rows: Vec<Vec<(usize, f64)>> = basis
        .reps
        .par_iter()
        .enumerate()
        .map(|(r_idx, &r)| {
            let mut entries: Vec<(usize, f64)> = Vec::with_capacity(strings.len());
            for (p, c) in &strings {
                let s = r ^ p.flip;
                let amp = c * p.sign(r);
                let (rep, size) = representative(s, n);
                let idx = basis.reps.binary_search(&rep).expect("orbit in basis");
                let w = (sizes[r_idx] as f64 / size as f64).sqrt();
                entries.push((idx, amp * w));
            }
            entries.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
            for (i, v) in entries {
                match merged.last_mut() {
                    Some(last) if last.0 == i => last.1 += v,
                    _ => merged.push((i, v)),
                }
            }
            merged.retain(|e| e.1 != 0.0);
            merged
        })
        .collect();
    let mut row_ptr = Vec::with_capacity(rows.len() + 1);
    let mut cols = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for row in rows {
        for (c, v) in row {
            cols.push(c);
            values.push(v);
        }
        row_ptr.push(cols.len());
    }
    Ok(SectorMatrix { params: *params, dim: basis.dim(), row_ptr, cols, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub energy: f64,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    Dense,
    Lanczos,
}

/// Lowest sector levels and the gaps `e_n = E_n − E_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLevels {
    #[serde(rename = "L")]
    pub n_sites: usize,
    pub g: f64,
    pub h: f64,
    pub sector: String,
    /// Distinct level energies `E_0 < E_1 < …`.
    #[serde(rename = "E")]
    pub energies: Vec<f64>,
    /// `e_n` for `n ≥ 1`; `gaps[n − 1] = E_n − E_0`.
    #[serde(rename = "e")]
    pub gaps: Vec<f64>,
    pub multiplicities: Vec<usize>,
    pub method: SolverMethod,
    /// Largest `‖Av − λv‖` over the returned eigenpairs.
    pub max_residual: f64,
}

impl EnergyLevels {
    fn from_eigenvalues(params: &ModelParams, values: &[f64], n_low: usize, method: SolverMethod, residual: f64) -> Self {
        let levels = merge_levels(values);
        let take = levels.len().min(n_low + 1);
        let energies: Vec<f64> = levels[..take].iter().map(|l| l.energy).collect();
        let gaps = energies.iter().skip(1).map(|e| e - energies[0]).collect();
        EnergyLevels {
            n_sites: params.n_sites,
            g: params.g,
            h: params.h,
            sector: "k=0".into(),
            energies,
            gaps,
            multiplicities: levels[..take].iter().map(|l| l.multiplicity).collect(),
            method,
            max_residual: residual,
        }
    }

    pub fn ground_energy(&self) -> f64 {
        self.energies[0]
    }

    /// `e_n`, 1-indexed.
    pub fn gap(&self, n: usize) -> Option<f64> {
        n.checked_sub(1).and_then(|i| self.gaps.get(i)).copied()
    }

    /// `e_mn = e_m − e_n`.
    pub fn difference(&self, m: usize, n: usize) -> Option<f64> {
        Some(self.gap(m)? - self.gap(n)?)
    }
}

/// Groups sorted eigenvalues closer than [`DEGENERACY_TOL`].
pub fn merge_levels(sorted: &[f64]) -> Vec<Level> {
    let mut levels: Vec<Level> = Vec::new();
    for &e in sorted {
        match levels.last_mut() {
            Some(last) if (e - last.energy).abs() < DEGENERACY_TOL => last.multiplicity += 1,
            _ => levels.push(Level { energy: e, multiplicity: 1 }),
        }
    }
    levels
}

/// Lowest `n_low + 1` levels, dense up to [`DENSE_MAX_DIM`], Lanczos beyond.
pub fn eigensolve(matrix: &SectorMatrix, n_low: usize) -> Result<EnergyLevels> {
    let method = if matrix.dim <= DENSE_MAX_DIM { SolverMethod::Dense } else { SolverMethod::Lanczos };
    eigensolve_with(matrix, n_low, method)
}

pub fn eigensolve_with(matrix: &SectorMatrix, n_low: usize, method: SolverMethod) -> Result<EnergyLevels> {
    if matrix.dim == 0 {
        return Err(Error::Empty("sector matrix"));
    }
    match method {
        SolverMethod::Dense => {
            let (values, vectors) = linalg::symmetric_eigen(matrix.to_dense());
            let want = values.len().min(n_low + 1 + 8);
            let mut residual = 0.0f64;
            let mut av = vec![0.0; matrix.dim];
            for k in 0..want {
                let v: Vec<f64> = vectors.column(k).iter().copied().collect();
                matrix.matvec(&v, &mut av);
                let r = av.iter().zip(&v).map(|(a, x)| (a - values[k] * x).powi(2)).sum::<f64>().sqrt();
                residual = residual.max(r);
            }
            Ok(EnergyLevels::from_eigenvalues(&matrix.params, &values, n_low, method, residual))
        }
        SolverMethod::Lanczos => {
            let (values, residual) = lanczos_lowest(matrix, n_low + 1, RESIDUAL_TOL)?;
            Ok(EnergyLevels::from_eigenvalues(&matrix.params, &values, n_low, method, residual))
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    if a.len() < linalg::PAR_THRESHOLD {
        return a.iter().zip(b).map(|(x, y)| x * y).sum();
    }
    let parts: Vec<f64> = a
        .par_chunks(linalg::REDUCE_CHUNK)
        .zip(b.par_chunks(linalg::REDUCE_CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
        .collect();
    parts.into_iter().sum()
}

/// Lanczos with full reorthogonalization for the `n_want` lowest eigenvalues.
///
/// Returns the eigenvalues and the largest explicit residual of their Ritz
/// vectors. Exactly degenerate eigenvalues are found once.
fn lanczos_lowest(matrix: &SectorMatrix, n_want: usize, tol: f64) -> Result<(Vec<f64>, f64)> {
    let dim = matrix.dim;
    let max_iter = LANCZOS_MAX_ITER.min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
    let n0 = dot(&q, &q).sqrt();
    q.iter_mut().for_each(|x| *x /= n0);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; dim];
    let mut last_residual = f64::INFINITY;
    loop {
        let j = basis.len() - 1;
        matrix.matvec(&basis[j], &mut w);
        alpha.push(dot(&basis[j], &w));
        // two passes of classical Gram-Schmidt against the whole basis
        for _ in 0..2 {
            let overlaps: Vec<f64> = basis.par_iter().map(|b| dot(b, &w)).collect();
            for (b, o) in basis.iter().zip(&overlaps) {
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= o * y);
            }
        }
        let b = dot(&w, &w).sqrt();
        let m = alpha.len();
        let exhausted = b < 1e-12 || m == dim;
        if m >= n_want && (m.is_multiple_of(10) || exhausted || m == max_iter) {
            let (theta, s) = linalg::symmetric_eigen(linalg::tridiagonal(&alpha, &beta));
            let k = n_want.min(m);
            let est = (0..k).map(|i| (b * s[(m - 1, i)]).abs()).fold(0.0, f64::max);
            last_residual = est;
            if est < tol * 0.1 || exhausted {
                // explicit residuals from the Ritz vectors
                let mut worst = 0.0f64;
                let mut y = vec![0.0; dim];
                let mut ay = vec![0.0; dim];
                for i in 0..k {
                    y.iter_mut().for_each(|x| *x = 0.0);
                    for (l, bv) in basis.iter().enumerate() {
                        let c = s[(l, i)];
                        y.iter_mut().zip(bv).for_each(|(x, v)| *x += c * v);
                    }
                    matrix.matvec(&y, &mut ay);
                    let r = ay.iter().zip(&y).map(|(a, x)| (a - theta[i] * x).powi(2)).sum::<f64>().sqrt();
                    worst = worst.max(r);
                }
                if worst < tol || exhausted {
                    return Ok((theta[..k].to_vec(), worst));
                }
                last_residual = worst;
            }
        }
        if m >= max_iter {
            return Err(Error::NoConvergence { iterations: m, residual: last_residual });
        }
        beta.push(b);
        let next: Vec<f64> = w.iter().map(|x| x / b).collect();
        basis.push(next);
    }
}

/// Many-body spectrum of the `h = 0` chain from its free-fermion solution.
///
/// Modes live on the antiperiodic grid `k = 2π(m + ½)/L` (even fermion
/// parity) and the periodic grid `k = 2πm/L` (odd parity). Paired modes cost
/// `ε(k) = 2√(1 + g² − 2g cos k)`; the unpaired modes `k = 0, π` carry the
/// signed energy `2(g − cos k)`. Each sector keeps only occupations of its
/// parity. Returns all `2^L` energies sorted.
pub fn free_fermion_spectrum(n_sites: usize, g: f64) -> Vec<f64> {
    use std::f64::consts::PI;
    let n = n_sites;
    let mode_energies = |offset: f64| -> Vec<f64> {
        (0..n)
            .map(|m| {
                let k = 2.0 * PI * (m as f64 + offset) / n as f64;
                let unpaired = (k.sin()).abs() < 1e-12;
                if unpaired {
                    2.0 * (g - k.cos())
                } else {
                    dispersion(g, k)
                }
            })
            .collect()
    };
    let mut out = Vec::with_capacity(1 << n);
    for (offset, parity) in [(0.5, 0u32), (0.0, 1u32)] {
        let modes = mode_energies(offset);
        let vacuum: f64 = -0.5 * modes.iter().sum::<f64>();
        for occ in 0..1u64 << n {
            if occ.count_ones() % 2 != parity {
                continue;
            }
            let e: f64 = vacuum + (0..n).filter(|&b| occ >> b & 1 == 1).map(|b| modes[b]).sum::<f64>();
            out.push(e);
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// `ε(k) = 2√(1 + g² − 2g cos k)`
pub fn dispersion(g: f64, k: f64) -> f64 {
    2.0 * (1.0 + g * g - 2.0 * g * k.cos()).max(0.0).sqrt()
}

/// Whether every value of `sub` can be matched to a distinct value of `sup`
/// within `tol`. Both inputs must be sorted ascending.
pub fn is_sub_multiset(sub: &[f64], sup: &[f64], tol: f64) -> bool {
    let mut p = 0;
    for &v in sub {
        while p < sup.len() && sup[p] < v - tol {
            p += 1;
        }
        if p == sup.len() || (sup[p] - v).abs() > tol {
            return false;
        }
        p += 1;
    }
    true
}

/// Basis, assembly and solve in one call.
pub fn zero_momentum_levels(params: &ModelParams, n_low: usize) -> Result<EnergyLevels> {
    let basis = build_zero_momentum_basis(params.n_sites)?;
    let matrix = assemble_sector_hamiltonian(params, &basis)?;
    eigensolve(&matrix, n_low)
}

/// Full sorted sector spectrum (dense); for oracle comparisons.
pub fn sector_spectrum(params: &ModelParams) -> Result<Vec<f64>> {
    let basis = build_zero_momentum_basis(params.n_sites)?;
    let matrix = assemble_sector_hamiltonian(params, &basis)?;
    Ok(linalg::symmetric_eigen(matrix.to_dense()).0)
}
