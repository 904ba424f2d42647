//! First-order Trotter steps and the quench driver.
//!
//! One step applies, in order: the exact single-site propagator
//! `exp(i·dt·(g σᶻ + h σˣ))` on every site, `exp(i·dt·σˣσˣ)` on the odd bonds
//! `(1,2), (3,4), …`, then on the even bonds `(2,3), (4,5), …, (L,1)`. For odd
//! `L` the wrap bond `(L,1)` joins the even layer.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Axis, ModelParams, QuenchPlan};
use crate::noise::{self, NoiseParams, ReadoutCalibration};
use crate::obs::{CorrelatorField, XxMoments};
use crate::rng::{substream, StreamTag};
use crate::statevec::{Counts, Gate, GateLabel, StateVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateCounts {
    pub one_qubit: usize,
    pub two_qubit: usize,
    pub cnot: usize,
}

impl GateCounts {
    fn of(gates: &[Gate]) -> GateCounts {
        let mut c = GateCounts::default();
        for g in gates {
            if g.is_two_qubit() {
                c.two_qubit += 1;
            } else {
                c.one_qubit += 1;
            }
            if g.label() == GateLabel::Cnot {
                c.cnot += 1;
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrotterStep {
    pub gates: Vec<Gate>,
    pub dt: f64,
    pub counts: GateCounts,
}

/// Bonds `(j, j+1)` split into the odd and even layers (1-indexed sites).
pub fn bond_layers(n_sites: usize) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let mut odd = Vec::new();
    let mut even = Vec::new();
    for j in 1..=n_sites {
        let bond = (j, j % n_sites + 1);
        if j % 2 == 1 && j < n_sites {
            odd.push(bond);
        } else {
            even.push(bond);
        }
    }
    (odd, even)
}

pub fn build_step(params: &ModelParams, dt: f64) -> Result<TrotterStep> {
    if params.validate().is_error() {
        return Err(Error::InvalidParameter(params.validate().messages.join("; ")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let n = params.n_sites;
    let (odd, even) = bond_layers(n);
    let mut gates: Vec<Gate> = (1..=n).map(|j| Gate::field_rotation(j, params.g, params.h, dt)).collect();
    gates.extend(odd.iter().chain(&even).map(|&(a, b)| Gate::xx_rotation(a, b, dt)));
    let counts = GateCounts::of(&gates);
    Ok(TrotterStep { gates, dt, counts })
}

/// Rewrites every `exp(iθσˣσˣ)` as `(H⊗H)·CNOT·RZ(−2θ)·CNOT·(H⊗H)`.
pub fn decompose_to_native(step: &TrotterStep) -> TrotterStep {
    let mut gates = Vec::with_capacity(step.gates.len() * 4);
    for g in &step.gates {
        match g {
            Gate::Two { sites: (a, b), matrix, label: GateLabel::Bond } => {
                let theta = matrix[0][3].im.atan2(matrix[0][0].re);
                gates.push(Gate::hadamard(*a));
                gates.push(Gate::hadamard(*b));
                gates.push(Gate::cnot(*a, *b));
                gates.push(Gate::rz(*b, -2.0 * theta));
                gates.push(Gate::cnot(*a, *b));
                gates.push(Gate::hadamard(*a));
                gates.push(Gate::hadamard(*b));
            }
            other => gates.push(other.clone()),
        }
    }
    let counts = GateCounts::of(&gates);
    TrotterStep { gates, dt: step.dt, counts }
}

/// Observables of one quench, one row per recorded time `t_k = k·dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchRecord {
    pub params: ModelParams,
    pub plan: QuenchPlan,
    pub times: Vec<f64>,
    /// `site_values[axis][k][j − 1] = ⟨σ^axis_j(t_k)⟩`
    pub site_values: BTreeMap<Axis, Vec<Vec<f64>>>,
    /// Site means `Σ_j ⟨σ^axis_j⟩ / L`.
    pub aggregates: BTreeMap<Axis, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlator: Option<CorrelatorField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<ReadoutCalibration>,
    pub gate_counts: GateCounts,
    pub native_gate_counts: GateCounts,
}

impl QuenchRecord {
    pub fn aggregate(&self, axis: Axis) -> Option<&[f64]> {
        self.aggregates.get(&axis).map(Vec::as_slice)
    }

    pub fn sigma_y(&self) -> Option<&[f64]> {
        self.aggregate(Axis::Y)
    }

    pub fn sigma_x(&self) -> Option<&[f64]> {
        self.aggregate(Axis::X)
    }

    pub fn n_points(&self) -> usize {
        self.times.len()
    }
}

/// Measurements of one time point in one trajectory.
struct Snapshot {
    sites: Vec<Vec<f64>>,
    xx: Option<XxMoments>,
}

struct Recorder<'a> {
    plan: &'a QuenchPlan,
    noise: Option<&'a NoiseParams>,
    attenuation: Option<Vec<f64>>,
}

impl Recorder<'_> {
    fn record(&self, state: &StateVector, k: usize, trajectory: usize, shots: u64) -> Result<Snapshot> {
        let n = state.n_sites();
        if self.plan.shots == 0 {
            let sites = self.plan.axes.iter().map(|&a| state.site_expectations(a)).collect();
            let xx = self.plan.correlators.then(|| XxMoments::from_state(state));
            return Ok(Snapshot { sites, xx });
        }
        let mut sites = Vec::with_capacity(self.plan.axes.len());
        let mut xx = None;
        for &axis in &self.plan.axes {
            let counts = self.sample(state, axis, k, trajectory, shots)?;
            sites.push(
                (1..=n)
                    .map(|j| counts.site_expectation(j) / self.attenuation.as_ref().map_or(1.0, |a| a[j - 1]))
                    .collect(),
            );
            if axis == Axis::X && self.plan.correlators {
                xx = Some(XxMoments::from_counts(&counts, self.attenuation.as_deref()));
            }
        }
        if self.plan.correlators && xx.is_none() {
            let counts = self.sample(state, Axis::X, k, trajectory, shots)?;
            xx = Some(XxMoments::from_counts(&counts, self.attenuation.as_deref()));
        }
        Ok(Snapshot { sites, xx })
    }

    fn sample(&self, state: &StateVector, axis: Axis, k: usize, trajectory: usize, shots: u64) -> Result<Counts> {
        let n = state.n_sites();
        let axis_code = axis as u64;
        let mut rng = substream(self.plan.seed, StreamTag::Sampling, k as u64, trajectory as u64 * 4 + axis_code);
        let axes = vec![axis; n];
        let samples = match self.noise {
            Some(noise) => noise::sample_with_readout(state, &axes, shots, noise, &mut rng)?,
            None => state.sample_bitstrings(&axes, shots, &mut rng)?,
        };
        Ok(Counts::from_samples(n, &samples))
    }
}

fn run_trajectory(
    params: &ModelParams,
    step: &TrotterStep,
    recorder: &Recorder<'_>,
    trajectory: usize,
    shots: u64,
) -> Result<Vec<Snapshot>> {
    let plan = recorder.plan;
    let mut state = StateVector::all_plus(params.n_sites)?;
    let mut out = Vec::with_capacity(plan.n_steps + 1);
    out.push(recorder.record(&state, 0, trajectory, shots)?);
    let gate_noise = recorder.noise.filter(|n| n.has_gate_noise());
    let mut rng = substream(plan.seed, StreamTag::GateNoise, trajectory as u64, 0);
    for k in 1..=plan.n_steps {
        for gate in &step.gates {
            state.apply_gate(gate)?;
            if let Some(noise) = gate_noise {
                noise::apply_gate_noise(&mut state, gate, noise, &mut rng)?;
            }
        }
        out.push(recorder.record(&state, k, trajectory, shots)?);
    }
    Ok(out)
}

/// Runs a quench from `|→,…,→⟩`, recording after every full step.
///
/// With `plan.shots == 0` exact expectations are recorded; otherwise each
/// time point is estimated from fresh samples drawn from an independent
/// random stream. With noise configured, `noise.trajectories` Pauli
/// trajectories run in parallel; shots are split among them and the results
/// are pooled in trajectory order.
pub fn run_quench(params: &ModelParams, plan: &QuenchPlan) -> Result<QuenchRecord> {
    plan.validate()?;
    let step = build_step(params, plan.dt)?;
    let n = params.n_sites;
    let noise = plan.noise.as_ref();
    let trajectories = noise.map_or(1, |p| p.trajectories);

    let calibration = match noise {
        Some(p) if plan.shots > 0 && p.has_readout_error() && p.mitigate => {
            let mut rng = substream(plan.seed, StreamTag::Calibration, 0, 0);
            let cal = noise::calibrate_readout(n, p, plan.shots.max(1000), &mut rng)?;
            if let Some(&bad) = cal.p_eff.iter().find(|&&p| p >= 0.5) {
                return Err(Error::NonInvertibleReadout(bad));
            }
            Some(cal)
        }
        _ => None,
    };
    let recorder = Recorder { plan, noise, attenuation: calibration.as_ref().map(|c| c.attenuation()) };

    // shots split as evenly as possible, earlier trajectories take the remainder
    let share = |t: usize| -> u64 {
        if plan.shots == 0 {
            return 0;
        }
        let base = plan.shots / trajectories as u64;
        base + u64::from((t as u64) < plan.shots % trajectories as u64)
    };
    let weight = |t: usize| -> f64 {
        if plan.shots == 0 {
            1.0 / trajectories as f64
        } else {
            share(t) as f64 / plan.shots as f64
        }
    };
    let active: Vec<usize> = (0..trajectories).filter(|&t| plan.shots == 0 || share(t) > 0).collect();

    let runs: Vec<Vec<Snapshot>> = if active.len() == 1 {
        vec![run_trajectory(params, &step, &recorder, active[0], share(active[0]))?]
    } else {
        active
            .par_iter()
            .map(|&t| run_trajectory(params, &step, &recorder, t, share(t)))
            .collect::<Result<_>>()?
    };

    let n_points = plan.n_steps + 1;
    let times: Vec<f64> = (0..n_points).map(|k| k as f64 * plan.dt).collect();
    let mut site_values = BTreeMap::new();
    let mut aggregates = BTreeMap::new();
    for (a, &axis) in plan.axes.iter().enumerate() {
        let per_time: Vec<Vec<f64>> = (0..n_points)
            .map(|k| {
                let mut row = vec![0.0; n];
                for (run, &t) in runs.iter().zip(&active) {
                    let w = weight(t);
                    row.iter_mut().zip(&run[k].sites[a]).for_each(|(r, v)| *r += w * v);
                }
                row
            })
            .collect();
        aggregates.insert(axis, per_time.iter().map(|row| row.iter().sum::<f64>() / n as f64).collect());
        site_values.insert(axis, per_time);
    }
    let correlator = plan.correlators.then(|| {
        let values = (0..n_points)
            .map(|k| {
                let parts: Vec<(f64, XxMoments)> = runs
                    .iter()
                    .zip(&active)
                    .map(|(run, &t)| (weight(t), run[k].xx.clone().expect("correlators recorded")))
                    .collect();
                XxMoments::weighted_mean(&parts).connected_row()
            })
            .collect();
        CorrelatorField { n_sites: n, times: times.clone(), values }
    });

    Ok(QuenchRecord {
        params: *params,
        plan: plan.clone(),
        times,
        site_values,
        aggregates,
        correlator,
        calibration,
        gate_counts: step.counts,
        native_gate_counts: decompose_to_native(&step).counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{dense_matrix, hamiltonian_terms};
    use crate::C64;
    use nalgebra::{DMatrix, DVector};

    /// Full-register matrix of a gate list via per-basis-state application.
    fn product_matrix(gates: &[Gate], n: usize) -> DMatrix<C64> {
        let dim = 1 << n;
        let mut m = DMatrix::<C64>::zeros(dim, dim);
        for col in 0..dim {
            let mut s = StateVector::basis_state(n, col as u64).unwrap();
            s.apply_gates(gates).unwrap();
            for (row, a) in s.amplitudes().iter().enumerate() {
                m[(row, col)] = *a;
            }
        }
        m
    }

    fn expm_hermitian(h: &DMatrix<C64>, dt: f64) -> DMatrix<C64> {
        let eig = h.clone().symmetric_eigen();
        let mut d = DMatrix::<C64>::zeros(h.nrows(), h.nrows());
        for (k, &e) in eig.eigenvalues.iter().enumerate() {
            d[(k, k)] = C64::from_polar(1.0, -e * dt);
        }
        &eig.eigenvectors * d * eig.eigenvectors.adjoint()
    }

    fn spectral_norm(m: &DMatrix<C64>) -> f64 {
        m.clone().singular_values().max()
    }

    #[test]
    fn layer_structure() {
        let (odd, even) = bond_layers(12);
        assert_eq!(odd.len(), 6);
        assert_eq!(even.len(), 6);
        assert_eq!(odd[0], (1, 2));
        assert_eq!(*even.last().unwrap(), (12, 1));
        let (odd, even) = bond_layers(5);
        assert_eq!(odd, vec![(1, 2), (3, 4)]);
        assert_eq!(even, vec![(2, 3), (4, 5), (5, 1)]);

        let step = build_step(&ModelParams { n_sites: 12, g: 0.5, h: 0.3 }, 0.4).unwrap();
        assert_eq!(step.counts, GateCounts { one_qubit: 12, two_qubit: 12, cnot: 0 });
        for g in &step.gates {
            assert!(g.unitarity_error() < 1e-12);
        }
    }

    #[test]
    fn classical_point_step_is_exact() {
        let params = ModelParams { n_sites: 5, g: 0.0, h: 0.0 };
        for dt in [0.1, 0.4, 1.3] {
            let step = build_step(&params, dt).unwrap();
            let u = product_matrix(&step.gates, 5);
            let exact = expm_hermitian(&dense_matrix(&hamiltonian_terms(&params), 5).unwrap(), dt);
            assert!((u - exact).map(|z| z.norm()).max() < 1e-12);
        }
    }

    #[test]
    fn step_error_is_second_order() {
        let params = ModelParams { n_sites: 6, g: 0.5, h: 0.3 };
        let h = dense_matrix(&hamiltonian_terms(&params), 6).unwrap();
        let errs: Vec<f64> = [0.4, 0.2, 0.1]
            .iter()
            .map(|&dt| {
                let u = product_matrix(&build_step(&params, dt).unwrap().gates, 6);
                spectral_norm(&(u - expm_hermitian(&h, dt)))
            })
            .collect();
        // least-squares slope of log(err) vs log(dt)
        let xs: Vec<f64> = [0.4f64, 0.2, 0.1].iter().map(|x| x.ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let mx = xs.iter().sum::<f64>() / 3.0;
        let my = ys.iter().sum::<f64>() / 3.0;
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope - 2.0).abs() < 0.15, "slope {slope}, errors {errs:?}");
    }

    fn equal_up_to_phase(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
        let (idx, _) = b.iter().enumerate().max_by(|x, y| x.1.norm().total_cmp(&y.1.norm())).unwrap();
        let phase = a.as_slice()[idx] / b.as_slice()[idx];
        (a - b * phase).map(|z| z.norm()).max()
    }

    #[test]
    fn native_rewrite_matches_bond_gate() {
        for theta in [0.0, 0.3, std::f64::consts::FRAC_PI_2, -1.2] {
            let step = TrotterStep {
                gates: vec![Gate::xx_rotation(1, 2, theta)],
                dt: theta,
                counts: GateCounts::default(),
            };
            let native = decompose_to_native(&step);
            assert_eq!(native.gates.len(), 7);
            assert_eq!(native.counts.cnot, 2);
            let a = product_matrix(&native.gates, 2);
            let b = product_matrix(&step.gates, 2);
            assert!(equal_up_to_phase(&a, &b) < 1e-12, "theta {theta}");
            if theta == 0.0 {
                assert!(equal_up_to_phase(&a, &DMatrix::identity(4, 4)) < 1e-12);
            }
        }
        let step = build_step(&ModelParams { n_sites: 12, g: 0.5, h: 0.3 }, 0.4).unwrap();
        assert_eq!(decompose_to_native(&step).counts.cnot, 24);
    }

    #[test]
    fn stationary_quench() {
        let params = ModelParams { n_sites: 6, g: 0.0, h: 0.0 };
        let rec = run_quench(&params, &QuenchPlan::new(0.4, 20)).unwrap();
        assert_eq!(rec.n_points(), 21);
        for (y, x) in rec.sigma_y().unwrap().iter().zip(rec.sigma_x().unwrap()) {
            assert!(y.abs() < 1e-12);
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quench_matches_dense_gate_product() {
        let params = ModelParams { n_sites: 4, g: 0.25, h: 0.3 };
        let plan = QuenchPlan::new(0.4, 3).with_axes(&Axis::ALL);
        let rec = run_quench(&params, &plan).unwrap();
        let u = product_matrix(&build_step(&params, 0.4).unwrap().gates, 4);
        let mut v = DVector::from_element(16, C64::new(0.25, 0.0));
        for k in 0..=3 {
            if k > 0 {
                v = &u * v;
            }
            for axis in Axis::ALL {
                for j in 1..=4 {
                    let op = dense_matrix(&[crate::model::PauliTerm::new(1.0, vec![(j, axis)])], 4).unwrap();
                    let e = (v.adjoint() * &op * &v)[(0, 0)].re;
                    assert!((rec.site_values[&axis][k][j - 1] - e).abs() < 1e-10);
                }
            }
        }
        for k in 0..=3 {
            let mean = rec.site_values[&Axis::Y][k].iter().sum::<f64>() / 4.0;
            assert!((rec.sigma_y().unwrap()[k] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn translation_by_two_covariance() {
        let params = ModelParams { n_sites: 8, g: 0.6, h: 0.3 };
        let rec = run_quench(&params, &QuenchPlan::new(0.4, 15)).unwrap();
        for row in &rec.site_values[&Axis::Y] {
            for j in 0..8 {
                assert!((row[j] - row[(j + 2) % 8]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sampled_trace_near_exact() {
        let params = ModelParams { n_sites: 6, g: 0.5, h: 0.3 };
        let exact = run_quench(&params, &QuenchPlan::new(0.4, 20)).unwrap();
        let shots = 20_000;
        let sampled = run_quench(&params, &QuenchPlan::new(0.4, 20).with_shots(shots, 42)).unwrap();
        let bound = 4.0 / ((6 * shots) as f64).sqrt();
        let ok = exact
            .sigma_y()
            .unwrap()
            .iter()
            .zip(sampled.sigma_y().unwrap())
            .filter(|(a, b)| (*a - *b).abs() < bound)
            .count();
        assert!(ok >= 20, "{ok}/21 within bound");
        let again = run_quench(&params, &QuenchPlan::new(0.4, 20).with_shots(shots, 42)).unwrap();
        assert_eq!(sampled, again);
    }

    #[test]
    fn zero_noise_matches_noiseless_bitwise() {
        let params = ModelParams { n_sites: 5, g: 0.5, h: 0.3 };
        let base = QuenchPlan::new(0.4, 10).with_correlators(true);
        let plain = run_quench(&params, &base).unwrap();
        let noisy = run_quench(&params, &base.clone().with_noise(NoiseParams::noiseless())).unwrap();
        assert_eq!(plain.aggregates, noisy.aggregates);
        assert_eq!(plain.correlator, noisy.correlator);

        let shots = base.clone().with_shots(4000, 3);
        let plain = run_quench(&params, &shots).unwrap();
        let noisy = run_quench(&params, &shots.with_noise(NoiseParams::noiseless())).unwrap();
        assert_eq!(plain.aggregates, noisy.aggregates);
    }

    #[test]
    fn gate_noise_damps_signal() {
        let params = ModelParams { n_sites: 4, g: 0.25, h: 0.3 };
        let noise = NoiseParams { p1: 0.02, p2: 0.05, readout: vec![], trajectories: 64, twirl: true, mitigate: true };
        let rec = run_quench(&params, &QuenchPlan::new(0.4, 30).with_noise(noise)).unwrap();
        let clean = run_quench(&params, &QuenchPlan::new(0.4, 30)).unwrap();
        let late_noisy = rec.sigma_x().unwrap()[30];
        let late_clean = clean.sigma_x().unwrap()[30];
        assert!(late_noisy.abs() < late_clean.abs());
    }

    #[test]
    fn rejects_bad_plans() {
        let params = ModelParams { n_sites: 4, g: 0.25, h: 0.3 };
        assert!(run_quench(&params, &QuenchPlan::new(0.0, 3)).is_err());
        assert!(run_quench(&params, &QuenchPlan::new(0.4, 0)).is_err());
        let bad = NoiseParams { trajectories: 0, ..NoiseParams::default() };
        assert!(run_quench(&params, &QuenchPlan::new(0.4, 3).with_noise(bad)).is_err());
    }
}
