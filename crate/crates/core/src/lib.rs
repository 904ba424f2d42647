//! Classical simulation of the periodic Ising chain with transverse and
//! longitudinal fields.
//!
//! The crate covers the full quench-spectroscopy pipeline:
//!
//! - [`model`]: Hamiltonian parameters, quench plans and the Pauli term list.
//! - [`statevec`]: dense statevector engine (gates, exact evolution, sampling).
//! - [`trotter`]: first-order Trotter steps and the quench driver.
//! - [`edsolver`]: exact diagonalization in the zero-momentum sector.
//! - [`noise`]: stochastic Pauli noise, readout errors and twirled readout
//!   mitigation.
//! - [`obs`]: connected `σˣσˣ` correlators and light-cone diagnostics.
//! - [`spectro`]: power spectra, peak extraction and level matching.
//!
//! Sites are 1-indexed wherever they appear in the public API and map to
//! bit `site - 1` of a basis-state index (little-endian).

pub mod edsolver;
pub mod error;
pub mod model;
pub mod noise;
pub mod obs;
pub mod spectro;
pub mod statevec;
pub mod trotter;

mod linalg;
mod rng;

pub use edsolver::{EnergyLevels, SectorBasis, SectorMatrix};
pub use error::{Error, Result};
pub use model::{Axis, ModelParams, PauliString, PauliTerm, QuenchPlan, Severity, ValidationReport};
pub use noise::NoiseParams;
pub use obs::{CorrelatorField, FrontAnalysis};
pub use spectro::{EtaPoint, PeakLabel, PeakSet, Spectrum, TimeSeries, Window};
pub use statevec::{Counts, Gate, StateVector};
pub use trotter::{QuenchRecord, TrotterStep};

/// Complex amplitude type used throughout.
pub type C64 = num_complex::Complex64;
