//! Hamiltonian parameters and term list for the periodic Ising chain
//!
//! ```text
//! H = -Σ_j ( σˣ_j σˣ_{j+1} + g σᶻ_j + h σˣ_j ),   site L+1 ≡ site 1
//! ```
//!
//! Energies and times are dimensionless (ħ = 1, bond coupling 1). Sites are
//! 1-indexed in this API; site `j` is bit `j - 1` of a basis-state index.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::noise::NoiseParams;
use crate::{Error, Result, C64};

/// Smallest chain the model accepts.
pub const MIN_SITES: usize = 2;
/// Largest register the statevector engine will allocate (2^24 amplitudes).
pub const MAX_SITES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::InvalidParameter(format!("unknown axis '{other}'"))),
        }
    }
}

/// Couplings of the periodic chain. Boundary conditions are always periodic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    #[serde(rename = "L")]
    pub n_sites: usize,
    /// Transverse field strength (σᶻ term).
    pub g: f64,
    /// Longitudinal field strength (σˣ term).
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Ok,
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub severity: Severity,
    pub messages: Vec<String>,
}

impl ValidationReport {
    fn new() -> Self {
        ValidationReport { severity: Severity::Ok, messages: Vec::new() }
    }

    fn push(&mut self, severity: Severity, msg: impl Into<String>) {
        self.severity = self.severity.max(severity);
        self.messages.push(msg.into());
    }

    pub fn is_ok(&self) -> bool {
        self.severity == Severity::Ok
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl ModelParams {
    /// Builds validated parameters. Warnings are logged, errors rejected.
    pub fn new(n_sites: usize, g: f64, h: f64) -> Result<Self> {
        let params = ModelParams { n_sites, g, h };
        let report = params.validate();
        if report.is_error() {
            if !(MIN_SITES..=MAX_SITES).contains(&n_sites) {
                return Err(Error::ChainLength(n_sites, MIN_SITES, MAX_SITES));
            }
            return Err(Error::InvalidParameter(report.messages.join("; ")));
        }
        for msg in &report.messages {
            log::warn!("{msg}");
        }
        Ok(params)
    }

    /// Classifies the parameters without rejecting them.
    ///
    /// The quench regime is `0 ≤ g ≤ 1`, `0 ≤ h < 1`; anything else is allowed
    /// but reported as a warning.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::new();
        if !(MIN_SITES..=MAX_SITES).contains(&self.n_sites) {
            report.push(
                Severity::Error,
                format!("L = {} outside [{MIN_SITES}, {MAX_SITES}]", self.n_sites),
            );
        }
        if !self.g.is_finite() || !self.h.is_finite() {
            report.push(Severity::Error, "couplings must be finite");
            return report;
        }
        if self.g < 0.0 || self.g > 1.0 {
            report.push(Severity::Warning, format!("g = {} outside the quench regime 0 <= g <= 1", self.g));
        }
        if self.h < 0.0 || self.h >= 1.0 {
            report.push(Severity::Warning, format!("h = {} outside the quench regime 0 <= h < 1", self.h));
        }
        report
    }

    /// Dimensionless scaling variable `2π(1 − g) / h^(8/15)`.
    pub fn eta(&self) -> f64 {
        eta(self.g, self.h)
    }
}

/// `η = 2π(1 − g) / h^(8/15)`; infinite at `h = 0` unless `g = 1`.
pub fn eta(g: f64, h: f64) -> f64 {
    let num = 2.0 * std::f64::consts::PI * (1.0 - g);
    if num == 0.0 {
        return 0.0;
    }
    num / h.powf(8.0 / 15.0)
}

/// Time grid and measurement settings for one quench.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchPlan {
    pub dt: f64,
    pub n_steps: usize,
    /// Shots per recorded time point; 0 records exact expectations.
    pub shots: u64,
    pub axes: Vec<Axis>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseParams>,
    /// Record the connected `σˣσˣ` correlator field as well.
    #[serde(default)]
    pub correlators: bool,
}

impl QuenchPlan {
    pub fn new(dt: f64, n_steps: usize) -> Self {
        QuenchPlan {
            dt,
            n_steps,
            shots: 0,
            axes: vec![Axis::X, Axis::Y],
            seed: 0,
            noise: None,
            correlators: false,
        }
    }

    pub fn with_shots(mut self, shots: u64, seed: u64) -> Self {
        self.shots = shots;
        self.seed = seed;
        self
    }

    pub fn with_axes(mut self, axes: &[Axis]) -> Self {
        let mut axes = axes.to_vec();
        axes.sort();
        axes.dedup();
        self.axes = axes;
        self
    }

    pub fn with_noise(mut self, noise: NoiseParams) -> Self {
        self.noise = Some(noise);
        self
    }

    pub fn with_correlators(mut self, on: bool) -> Self {
        self.correlators = on;
        self
    }

    pub fn total_time(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be at least 1".into()));
        }
        if let Some(noise) = &self.noise {
            noise.validate()?;
        }
        Ok(())
    }
}

/// A real-weighted product of single-site Pauli operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PauliTerm {
    pub coefficient: f64,
    /// `(site, axis)` pairs, sites 1-indexed.
    pub factors: Vec<(usize, Axis)>,
}

impl PauliTerm {
    pub fn new(coefficient: f64, factors: Vec<(usize, Axis)>) -> Self {
        PauliTerm { coefficient, factors }
    }

    pub fn pauli_string(&self, n_sites: usize) -> Result<PauliString> {
        PauliString::from_factors(&self.factors, n_sites)
    }

    /// Same term with every site index moved by `shift` around the ring.
    pub fn translated(&self, shift: usize, n_sites: usize) -> PauliTerm {
        let factors = self
            .factors
            .iter()
            .map(|&(site, axis)| ((site - 1 + shift) % n_sites + 1, axis))
            .collect();
        PauliTerm { coefficient: self.coefficient, factors }
    }
}

/// Bit-mask form of a Pauli string acting on computational basis states.
///
/// `P|c⟩ = i^{n_y} (−1)^{popcount(c & phase_mask)} |c ⊕ flip⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PauliString {
    pub flip: u64,
    pub phase_mask: u64,
    pub n_y: u32,
}

impl PauliString {
    pub fn from_factors(factors: &[(usize, Axis)], n_sites: usize) -> Result<Self> {
        let mut p = PauliString { flip: 0, phase_mask: 0, n_y: 0 };
        for &(site, axis) in factors {
            if site == 0 || site > n_sites {
                return Err(Error::SiteOutOfRange { site, n_sites });
            }
            let bit = 1u64 << (site - 1);
            if (p.flip | p.phase_mask) & bit != 0 {
                return Err(Error::DuplicateTargets(site));
            }
            match axis {
                Axis::X => p.flip |= bit,
                Axis::Z => p.phase_mask |= bit,
                Axis::Y => {
                    p.flip |= bit;
                    p.phase_mask |= bit;
                    p.n_y += 1;
                }
            }
        }
        Ok(p)
    }

    /// `i^{n_y}` prefactor.
    pub fn prefactor(&self) -> C64 {
        match self.n_y % 4 {
            0 => C64::new(1.0, 0.0),
            1 => C64::new(0.0, 1.0),
            2 => C64::new(-1.0, 0.0),
            _ => C64::new(0.0, -1.0),
        }
    }

    /// Sign `(−1)^{popcount(state & phase_mask)}`.
    #[inline]
    pub fn sign(&self, state: u64) -> f64 {
        if (state & self.phase_mask).count_ones() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn is_diagonal(&self) -> bool {
        self.flip == 0
    }
}

/// Term list of the Hamiltonian: bonds (−1), transverse (−g), longitudinal (−h).
///
/// Zero-coefficient terms are omitted. Bond `L` joins sites `L` and `1`.
pub fn hamiltonian_terms(params: &ModelParams) -> Vec<PauliTerm> {
    let n = params.n_sites;
    let mut terms = Vec::with_capacity(3 * n);
    for j in 1..=n {
        let next = j % n + 1;
        terms.push(PauliTerm::new(-1.0, vec![(j, Axis::X), (next, Axis::X)]));
    }
    if params.g != 0.0 {
        terms.extend((1..=n).map(|j| PauliTerm::new(-params.g, vec![(j, Axis::Z)])));
    }
    if params.h != 0.0 {
        terms.extend((1..=n).map(|j| PauliTerm::new(-params.h, vec![(j, Axis::X)])));
    }
    terms
}

/// Dense `2^L × 2^L` matrix of a term list. Intended for small chains.
pub fn dense_matrix(terms: &[PauliTerm], n_sites: usize) -> Result<DMatrix<C64>> {
    if n_sites > 12 {
        return Err(Error::InvalidParameter(format!(
            "dense matrix requested for {n_sites} sites (limit 12)"
        )));
    }
    let dim = 1usize << n_sites;
    let mut m = DMatrix::<C64>::zeros(dim, dim);
    for term in terms {
        let p = term.pauli_string(n_sites)?;
        let pre = p.prefactor() * term.coefficient;
        for col in 0..dim as u64 {
            let row = col ^ p.flip;
            m[(row as usize, col as usize)] += pre * p.sign(col);
        }
    }
    Ok(m)
}
