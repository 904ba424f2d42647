//! Fixtures shared by the benchmarks.

use meson_core::spectro::TimeSeries;
use meson_core::{ModelParams, StateVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use meson_core;

pub fn params(n_sites: usize) -> ModelParams {
    ModelParams::new(n_sites, 0.5, 0.3).expect("valid benchmark parameters")
}

/// Reproducible Haar-like random state.
pub fn random_state(n_sites: usize) -> StateVector {
    let mut rng = ChaCha8Rng::seed_from_u64(n_sites as u64);
    StateVector::random(n_sites, &mut rng).expect("valid size")
}

/// Two damped tones sampled like a Trotter trace.
pub fn synthetic_series(n: usize, dt: f64) -> TimeSeries {
    let values = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            (3.8 * t).cos() + 0.3 * (5.1 * t).cos() * (-0.01 * t).exp()
        })
        .collect();
    TimeSeries::uniform(dt, values).expect("uniform grid")
}
