//! Connected `σˣσˣ` correlators and light-cone diagnostics.
//!
//! `G(r, t) = (1/L)·Σ_i [⟨σˣ_i σˣ_{i+r}⟩ − ⟨σˣ_i⟩⟨σˣ_{i+r}⟩]`, indices mod `L`,
//! stored for `1 ≤ r ≤ L/2` since `G(r) = G(L − r)` on the ring.

use serde::{Deserialize, Serialize};

use crate::model::Axis;
use crate::statevec::{Counts, StateVector};
use crate::{Error, Result};

/// Default `|G|` level defining the correlation front.
pub const DEFAULT_FRONT_THRESHOLD: f64 = 0.02;

/// Raw single-site and pair moments from which connected correlators follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XxMoments {
    /// `⟨σˣ_i⟩`, site `i = 1..=L` at index `i − 1`.
    pub site: Vec<f64>,
    /// `pair[r − 1][i − 1] = ⟨σˣ_i σˣ_{i+r}⟩` for `r = 1..=L/2`.
    pub pair: Vec<Vec<f64>>,
}

impl XxMoments {
    pub fn n_sites(&self) -> usize {
        self.site.len()
    }

    pub fn from_state(state: &StateVector) -> XxMoments {
        let n = state.n_sites();
        let site = state.site_expectations(Axis::X);
        let pair = (1..=n / 2)
            .map(|r| {
                (1..=n)
                    .map(|i| state.correlation((i, Axis::X), ((i - 1 + r) % n + 1, Axis::X)).expect("valid sites"))
                    .collect()
            })
            .collect();
        XxMoments { site, pair }
    }

    /// Moments from x-basis samples, optionally divided by per-site readout
    /// attenuation factors `1 − 2·p_eff`.
    pub fn from_counts(counts: &Counts, attenuation: Option<&[f64]>) -> XxMoments {
        let n = counts.n_sites;
        let f = |j: usize| attenuation.map_or(1.0, |a| a[j - 1]);
        let site = (1..=n).map(|j| counts.site_expectation(j) / f(j)).collect();
        let pair = (1..=n / 2)
            .map(|r| {
                (1..=n)
                    .map(|i| {
                        let j = (i - 1 + r) % n + 1;
                        counts.pair_expectation(i, j) / (f(i) * f(j))
                    })
                    .collect()
            })
            .collect();
        XxMoments { site, pair }
    }

    /// Weighted average of several moment sets (e.g. over trajectories).
    pub fn weighted_mean(parts: &[(f64, XxMoments)]) -> XxMoments {
        let first = &parts[0].1;
        let mut out = XxMoments {
            site: vec![0.0; first.site.len()],
            pair: first.pair.iter().map(|row| vec![0.0; row.len()]).collect(),
        };
        for (w, m) in parts {
            out.site.iter_mut().zip(&m.site).for_each(|(o, v)| *o += w * v);
            for (orow, mrow) in out.pair.iter_mut().zip(&m.pair) {
                orow.iter_mut().zip(mrow).for_each(|(o, v)| *o += w * v);
            }
        }
        out
    }

    /// Translation-averaged connected correlator at distance `r`.
    pub fn connected(&self, r: usize) -> f64 {
        let n = self.n_sites();
        let row = &self.pair[r - 1];
        (0..n).map(|i| row[i] - self.site[i] * self.site[(i + r) % n]).sum::<f64>() / n as f64
    }

    /// Connected correlator with reference site `i` fixed (no averaging).
    pub fn connected_at(&self, i: usize, r: usize) -> f64 {
        let n = self.n_sites();
        self.pair[r - 1][i - 1] - self.site[i - 1] * self.site[(i - 1 + r) % n]
    }

    pub fn connected_row(&self) -> Vec<f64> {
        (1..=self.pair.len()).map(|r| self.connected(r)).collect()
    }
}

/// Exact translation-averaged `G(r)` of a state.
pub fn connected_xx(state: &StateVector, r: usize) -> Result<f64> {
    let n = state.n_sites();
    if r == 0 || r > n / 2 {
        return Err(Error::InvalidParameter(format!("distance {r} outside [1, {}]", n / 2)));
    }
    let mut total = 0.0;
    for i in 1..=n {
        let j = (i - 1 + r) % n + 1;
        let xx = state.correlation((i, Axis::X), (j, Axis::X))?;
        total += xx - state.expectation(Axis::X, i)? * state.expectation(Axis::X, j)?;
    }
    Ok(total / n as f64)
}

/// `G(r, t_k)` on a quench time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorField {
    pub n_sites: usize,
    pub times: Vec<f64>,
    /// `values[k][r − 1]`
    pub values: Vec<Vec<f64>>,
}

impl CorrelatorField {
    pub fn max_distance(&self) -> usize {
        self.n_sites / 2
    }

    pub fn get(&self, r: usize, k: usize) -> f64 {
        self.values[k][r - 1]
    }

    /// `G(r, ·)` as a time series.
    pub fn at_distance(&self, r: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[r - 1]).collect()
    }

    /// Number of sign changes of the discrete time derivative of `G(r, ·)`.
    pub fn derivative_sign_changes(&self, r: usize) -> usize {
        let series = self.at_distance(r);
        let diffs: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).filter(|d| d.abs() > 1e-12).collect();
        diffs.windows(2).filter(|w| w[0].signum() != w[1].signum()).count()
    }
}

/// Correlation front `r*(t)` and its linear fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontAnalysis {
    pub threshold: f64,
    /// Largest `r` with `|G(r, t_k)| > threshold`, per time point.
    pub front: Vec<Option<usize>>,
    /// Front saturates at this distance (`L/2`).
    pub r_limit: usize,
    /// Slope of `r*(t)` over the pre-saturation window.
    pub velocity: Option<f64>,
    /// Index range `[start, end)` of the fitted window.
    pub fit_window: Option<(usize, usize)>,
    /// The front never reached `r_limit` within the record.
    pub stalled: bool,
}

impl FrontAnalysis {
    pub fn is_empty(&self) -> bool {
        self.front.iter().all(Option::is_none)
    }

    pub fn max_front(&self) -> usize {
        self.front.iter().flatten().copied().max().unwrap_or(0)
    }

    /// Front radius at time index `k`, 0 when below threshold everywhere.
    pub fn radius(&self, k: usize) -> usize {
        self.front[k].unwrap_or(0)
    }
}

/// Extracts the correlation front and fits its velocity.
///
/// The fit covers the points from the first nonempty front up to (not
/// including) the first time it reaches `L/2`. A field entirely below
/// `threshold` yields an empty front with no velocity.
pub fn lightcone_front(field: &CorrelatorField, threshold: f64) -> FrontAnalysis {
    let r_limit = field.max_distance();
    let front: Vec<Option<usize>> = field
        .values
        .iter()
        .map(|row| row.iter().enumerate().filter(|(_, g)| g.abs() > threshold).map(|(i, _)| i + 1).max())
        .collect();
    let start = front.iter().position(Option::is_some);
    let (velocity, fit_window) = match start {
        Some(s) => {
            let end = front[s..].iter().position(|f| f.is_some_and(|r| r >= r_limit)).map_or(front.len(), |p| s + p);
            let pts: Vec<(f64, f64)> = (s..end).map(|k| (field.times[k], front[k].unwrap_or(0) as f64)).collect();
            (linear_slope(&pts), Some((s, end)))
        }
        None => (None, None),
    };
    let stalled = start.is_some() && front.iter().flatten().all(|&r| r < r_limit);
    FrontAnalysis { threshold, front, r_limit, velocity, fit_window, stalled }
}

fn linear_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Maximal quasiparticle group velocity of `ε(k) = 2√(1 + g² − 2g cos k)`.
pub fn max_group_velocity(g: f64) -> f64 {
    2.0 * g.abs().min(1.0)
}

/// Ballistic bound on the correlation front speed, `2·v_max`.
pub fn front_velocity_bound(g: f64) -> f64 {
    2.0 * max_group_velocity(g)
}
