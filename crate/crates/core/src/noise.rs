//! Stochastic Pauli gate noise, bit-flip readout errors and twirled readout
//! mitigation.
//!
//! Gate noise is unraveled into pure-state trajectories: after every gate a
//! random non-identity Pauli hits each touched site with the configured
//! probability. Averaging observables over trajectories reproduces the
//! corresponding depolarizing channel.
//!
//! The default rates are placeholders for a generic superconducting device,
//! not calibration data of any particular machine.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::Axis;
use crate::statevec::{Gate, StateVector};
use crate::{Error, Result};

/// Asymmetric readout flip probabilities of one site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutPair {
    /// P(read 1 | true 0)
    pub p01: f64,
    /// P(read 0 | true 1)
    pub p10: f64,
}

impl ReadoutPair {
    pub const NONE: ReadoutPair = ReadoutPair { p01: 0.0, p10: 0.0 };

    pub fn new(p01: f64, p10: f64) -> Self {
        ReadoutPair { p01, p10 }
    }

    /// Flip probability of the twirl-symmetrized channel.
    pub fn p_eff(&self) -> f64 {
        0.5 * (self.p01 + self.p10)
    }

    pub fn is_zero(&self) -> bool {
        self.p01 == 0.0 && self.p10 == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Pauli error probability after a one-qubit gate.
    pub p1: f64,
    /// Pauli error probability after a two-qubit gate.
    pub p2: f64,
    /// Per-site readout errors; a single entry applies to every site.
    pub readout: Vec<ReadoutPair>,
    pub trajectories: usize,
    /// Randomly flip qubits before readout and undo the flip classically.
    #[serde(default = "default_true")]
    pub twirl: bool,
    /// Divide single-site estimates by the calibrated `1 − 2·p_eff`.
    #[serde(default = "default_true")]
    pub mitigate: bool,
}

fn default_true() -> bool {
    true
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            p1: 0.001,
            p2: 0.01,
            readout: vec![ReadoutPair::new(0.02, 0.02)],
            trajectories: 100,
            twirl: true,
            mitigate: true,
        }
    }
}

impl NoiseParams {
    /// No gate noise, no readout error, one trajectory.
    pub fn noiseless() -> Self {
        NoiseParams {
            p1: 0.0,
            p2: 0.0,
            readout: vec![ReadoutPair::NONE],
            trajectories: 1,
            twirl: true,
            mitigate: true,
        }
    }

    pub fn readout_only(p01: f64, p10: f64) -> Self {
        NoiseParams { readout: vec![ReadoutPair::new(p01, p10)], ..Self::noiseless() }
    }

    pub fn readout_for(&self, site: usize) -> ReadoutPair {
        match self.readout.len() {
            0 => ReadoutPair::NONE,
            1 => self.readout[0],
            _ => self.readout.get(site - 1).copied().unwrap_or(ReadoutPair::NONE),
        }
    }

    pub fn has_readout_error(&self) -> bool {
        self.readout.iter().any(|r| !r.is_zero())
    }

    pub fn has_gate_noise(&self) -> bool {
        self.p1 > 0.0 || self.p2 > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.p1, self.p2]
            .into_iter()
            .chain(self.readout.iter().flat_map(|r| [r.p01, r.p10]));
        for p in probs {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("probability {p} outside [0, 1)")));
            }
        }
        if self.trajectories == 0 {
            return Err(Error::InvalidParameter("trajectories must be at least 1".into()));
        }
        if self.p2 < self.p1 {
            log::warn!("two-qubit error rate {} below one-qubit rate {}", self.p2, self.p1);
        }
        Ok(())
    }
}

fn random_pauli<R: Rng + ?Sized>(rng: &mut R) -> Axis {
    Axis::ALL[rng.random_range(0..3)]
}

/// Pauli-trajectory noise following `gate`.
///
/// With probability `p1` (one-qubit gates) or `p2` (two-qubit gates) an error
/// event occurs; it applies an independent uniformly random non-identity
/// Pauli on every site the gate touched.
pub fn apply_gate_noise<R: Rng + ?Sized>(
    state: &mut StateVector,
    gate: &Gate,
    params: &NoiseParams,
    rng: &mut R,
) -> Result<()> {
    let p = if gate.is_two_qubit() { params.p2 } else { params.p1 };
    if p <= 0.0 {
        return Ok(());
    }
    if rng.random::<f64>() < p {
        for site in gate.sites() {
            state.apply_gate(&Gate::pauli(site, random_pauli(rng)))?;
        }
    }
    Ok(())
}

/// Flips each readout bit independently with the site's asymmetric rates.
pub fn apply_readout_error<R: Rng + ?Sized>(samples: &mut [u64], n_sites: usize, params: &NoiseParams, rng: &mut R) {
    if !params.has_readout_error() {
        return;
    }
    let rates: Vec<ReadoutPair> = (1..=n_sites).map(|j| params.readout_for(j)).collect();
    for s in samples.iter_mut() {
        for (bit, r) in rates.iter().enumerate() {
            let mask = 1u64 << bit;
            let p = if *s & mask == 0 { r.p01 } else { r.p10 };
            if p > 0.0 && rng.random::<f64>() < p {
                *s ^= mask;
            }
        }
    }
}

/// Samples `shots` outcomes with readout error, twirled if configured.
///
/// The twirl flips a random subset of qubits before readout (an `X` layer)
/// and undoes it on the classical record, which makes the effective
/// readout channel symmetric with flip probability `p_eff`.
pub fn sample_with_readout<R: Rng + ?Sized>(
    state: &StateVector,
    axes: &[Axis],
    shots: u64,
    params: &NoiseParams,
    rng: &mut R,
) -> Result<Vec<u64>> {
    let mut samples = state.sample_bitstrings(axes, shots, rng)?;
    if !params.has_readout_error() {
        return Ok(samples);
    }
    let n = state.n_sites();
    let full = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let masks: Vec<u64> = if params.twirl {
        (0..samples.len()).map(|_| rng.random::<u64>() & full).collect()
    } else {
        vec![0; samples.len()]
    };
    for (s, m) in samples.iter_mut().zip(&masks) {
        *s ^= m;
    }
    apply_readout_error(&mut samples, n, params, rng);
    for (s, m) in samples.iter_mut().zip(&masks) {
        *s ^= m;
    }
    Ok(samples)
}

/// Inverts the symmetric bit-flip channel for a single-site Pauli estimate.
pub fn trex_mitigate(raw_expectation: f64, p_eff: f64) -> Result<f64> {
    if !(p_eff < 0.5) {
        return Err(Error::NonInvertibleReadout(p_eff));
    }
    Ok(raw_expectation / (1.0 - 2.0 * p_eff))
}

/// Per-site readout calibration from `|0…0⟩` and `|1…1⟩` preparations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutCalibration {
    pub shots: u64,
    pub p01: Vec<f64>,
    pub p10: Vec<f64>,
    pub p_eff: Vec<f64>,
    pub p_eff_err: Vec<f64>,
}

impl ReadoutCalibration {
    /// `1 − 2·p_eff` per site, the factor mitigation divides by.
    pub fn attenuation(&self) -> Vec<f64> {
        self.p_eff.iter().map(|p| 1.0 - 2.0 * p).collect()
    }
}

pub fn calibrate_readout<R: Rng + ?Sized>(
    n_sites: usize,
    params: &NoiseParams,
    shots: u64,
    rng: &mut R,
) -> Result<ReadoutCalibration> {
    if shots < 1000 {
        return Err(Error::InvalidParameter(format!("calibration needs at least 1000 shots, got {shots}")));
    }
    let all_ones = if n_sites == 64 { u64::MAX } else { (1u64 << n_sites) - 1 };
    let z_axes = vec![Axis::Z; n_sites];
    // untwirled, so p01 and p10 are resolved separately
    let raw = NoiseParams { twirl: false, ..params.clone() };
    let zero = sample_with_readout(&StateVector::basis_state(n_sites, 0)?, &z_axes, shots, &raw, rng)?;
    let one = sample_with_readout(&StateVector::basis_state(n_sites, all_ones)?, &z_axes, shots, &raw, rng)?;
    let n = shots as f64;
    let mut cal = ReadoutCalibration {
        shots,
        p01: Vec::with_capacity(n_sites),
        p10: Vec::with_capacity(n_sites),
        p_eff: Vec::with_capacity(n_sites),
        p_eff_err: Vec::with_capacity(n_sites),
    };
    for bit in 0..n_sites {
        let mask = 1u64 << bit;
        let p01 = zero.iter().filter(|&&s| s & mask != 0).count() as f64 / n;
        let p10 = one.iter().filter(|&&s| s & mask == 0).count() as f64 / n;
        cal.p01.push(p01);
        cal.p10.push(p10);
        cal.p_eff.push(0.5 * (p01 + p10));
        cal.p_eff_err.push(0.5 * (p01 * (1.0 - p01) / n + p10 * (1.0 - p10) / n).sqrt());
    }
    Ok(cal)
}
