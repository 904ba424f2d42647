//! Power spectra of observable traces, peak extraction and level labeling.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::edsolver::{self, EnergyLevels};
use crate::model::{eta, Axis, ModelParams, QuenchPlan};
use crate::trotter::{run_quench, QuenchRecord};
use crate::{Error, Result, C64};

pub const MIN_SERIES_LEN: usize = 8;
pub const DEFAULT_PAD: usize = 8;
pub const DEFAULT_MIN_HEIGHT_FRAC: f64 = 0.05;
/// Floor of the default matching tolerance `max(Δω, 0.05)`.
pub const MATCH_TOL_FLOOR: f64 = 0.05;
/// Two candidates whose distances to a peak differ by less than this are a tie.
pub const TIE_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub dt: f64,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl TimeSeries {
    /// Checks that `times` is a strictly uniform grid and values are finite.
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: times.len(), got: values.len() });
        }
        if times.len() < 2 {
            return Err(Error::Empty("time series"));
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) {
            return Err(Error::NonUniformGrid(1));
        }
        let t0 = times[0];
        for (k, t) in times.iter().enumerate() {
            // compare against the ideal grid so drift cannot accumulate
            if (t - (t0 + k as f64 * dt)).abs() > 1e-9 * dt.max(t.abs()) {
                return Err(Error::NonUniformGrid(k));
            }
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value at index {k}")));
        }
        Ok(TimeSeries { times, values, dt, provenance: BTreeMap::new() })
    }

    pub fn uniform(dt: f64, values: Vec<f64>) -> Result<Self> {
        let times = (0..values.len()).map(|k| k as f64 * dt).collect();
        Self::new(times, values)
    }

    /// The spatially averaged trace of `axis`, tagged with the run parameters.
    pub fn from_record(record: &QuenchRecord, axis: Axis) -> Result<Self> {
        let values = record
            .aggregate(axis)
            .ok_or_else(|| Error::InvalidParameter(format!("axis {axis} was not recorded")))?
            .to_vec();
        let mut series = Self::new(record.times.clone(), values)?;
        series.provenance = record_provenance(&record.params, &record.plan);
        series.provenance.insert("observable".into(), format!("sigma_{axis}"));
        Ok(series)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn record_provenance(params: &ModelParams, plan: &QuenchPlan) -> BTreeMap<String, String> {
    [
        ("L", params.n_sites.to_string()),
        ("g", params.g.to_string()),
        ("h", params.h.to_string()),
        ("dt", plan.dt.to_string()),
        ("n_steps", plan.n_steps.to_string()),
        ("shots", plan.shots.to_string()),
        ("seed", plan.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    #[default]
    Hann,
}

impl Window {
    pub fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann if n < 2 => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|k| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / (n - 1) as f64).cos()))
                .collect(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Window::Rectangular => "rectangular",
            Window::Hann => "hann",
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rectangular" | "rect" | "none" => Ok(Window::Rectangular),
            "hann" | "hanning" => Ok(Window::Hann),
            other => Err(Error::InvalidParameter(format!("unknown window '{other}'"))),
        }
    }
}

/// One-sided power spectrum `|X(ω_m)|²` for `ω_m = m·Δω`, `m = 0..=N_pad/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub omegas: Vec<f64>,
    pub power: Vec<f64>,
    pub window: Window,
    pub pad: usize,
    pub n_samples: usize,
    pub dt: f64,
}

impl Spectrum {
    /// `Δω = 2π/(N_pad·dt)`
    pub fn resolution(&self) -> f64 {
        2.0 * std::f64::consts::PI / ((self.n_samples * self.pad) as f64 * self.dt)
    }

    pub fn n_padded(&self) -> usize {
        self.n_samples * self.pad
    }

    /// Sum of `|X_k|²` over all `N_pad` bins, rebuilt from the positive half.
    pub fn two_sided_power(&self) -> f64 {
        let n = self.n_padded();
        let last = self.power.len() - 1;
        let mut total = self.power[0];
        for (m, p) in self.power.iter().enumerate().skip(1) {
            total += if n.is_multiple_of(2) && m == last { *p } else { 2.0 * p };
        }
        total
    }

    pub fn max_power(&self) -> f64 {
        self.power.iter().skip(1).copied().fold(0.0, f64::max)
    }
}

pub fn power_spectrum(series: &TimeSeries, window: Window, pad: usize) -> Result<Spectrum> {
    if series.len() < MIN_SERIES_LEN {
        return Err(Error::InvalidParameter(format!(
            "series has {} samples, need at least {MIN_SERIES_LEN}",
            series.len()
        )));
    }
    if pad == 0 {
        return Err(Error::InvalidParameter("pad factor must be at least 1".into()));
    }
    let n = series.len();
    let mean = series.values.iter().sum::<f64>() / n as f64;
    let w = window.weights(n);
    let n_pad = n * pad;
    let mut buf: Vec<C64> = vec![C64::new(0.0, 0.0); n_pad];
    for k in 0..n {
        buf[k] = C64::new((series.values[k] - mean) * w[k], 0.0);
    }
    FftPlanner::new().plan_fft_forward(n_pad).process(&mut buf);
    let d_omega = 2.0 * std::f64::consts::PI / (n_pad as f64 * series.dt);
    let half = n_pad / 2;
    Ok(Spectrum {
        omegas: (0..=half).map(|m| m as f64 * d_omega).collect(),
        power: buf[..=half].iter().map(|x| x.norm_sqr()).collect(),
        window,
        pad,
        n_samples: n,
        dt: series.dt,
    })
}

/// Candidate level: `e_m` when `n == 0`, otherwise `e_m − e_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub m: usize,
    pub n: usize,
    pub value: f64,
}

impl Candidate {
    pub fn name(&self) -> String {
        match self.n {
            0 => format!("e{}", self.m),
            n if self.m < 10 => format!("e{}{}", self.m, n),
            n => format!("e{},{}", self.m, n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PeakLabel {
    /// Rest energy `e_n`.
    Gap { n: usize, value: f64 },
    /// Level difference `e_m − e_n`.
    Difference { m: usize, n: usize, value: f64 },
    /// No unique candidate within tolerance; ties list every tied candidate.
    Unassigned { candidates: Vec<Candidate> },
}

impl PeakLabel {
    pub fn name(&self) -> String {
        match self {
            PeakLabel::Gap { n, value } => Candidate { m: *n, n: 0, value: *value }.name(),
            PeakLabel::Difference { m, n, value } => Candidate { m: *m, n: *n, value: *value }.name(),
            PeakLabel::Unassigned { .. } => "unassigned".into(),
        }
    }

    fn from_candidate(c: Candidate) -> Self {
        if c.n == 0 {
            PeakLabel::Gap { n: c.m, value: c.value }
        } else {
            PeakLabel::Difference { m: c.m, n: c.n, value: c.value }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub omega: f64,
    pub height: f64,
    /// Full width at half maximum.
    pub width: f64,
    pub label: PeakLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSet {
    /// Sorted by frequency.
    pub peaks: Vec<Peak>,
    pub resolution: f64,
    /// Tolerance used by [`match_peaks`], if labeled.
    pub tolerance: Option<f64>,
}

impl PeakSet {
    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    /// Half-bin uncertainty of every peak position.
    pub fn uncertainty(&self) -> f64 {
        0.5 * self.resolution
    }

    pub fn gap(&self, n: usize) -> Option<&Peak> {
        self.peaks.iter().find(|p| matches!(p.label, PeakLabel::Gap { n: k, .. } if k == n))
    }

    pub fn difference(&self, m: usize, n: usize) -> Option<&Peak> {
        self.peaks
            .iter()
            .find(|p| matches!(p.label, PeakLabel::Difference { m: a, n: b, .. } if a == m && b == n))
    }
}

/// Local maxima of the spectrum above `min_height_frac · max`, excluding ω=0.
///
/// Positions come from a three-point parabola through the top bin. Of two
/// maxima closer than `min_separation`, only the higher one is kept.
pub fn find_peaks(spec: &Spectrum, min_height_frac: f64, min_separation: f64) -> Result<PeakSet> {
    if spec.power.len() < 3 {
        return Err(Error::Empty("spectrum"));
    }
    if !(min_height_frac > 0.0 && min_height_frac < 1.0) {
        return Err(Error::InvalidParameter(format!("min_height_frac {min_height_frac} not in (0, 1)")));
    }
    let p = &spec.power;
    let top = spec.max_power();
    let resolution = spec.resolution();
    let mut found = Vec::new();
    if top > 0.0 {
        let cut = min_height_frac * top;
        for m in 1..p.len() {
            let right = p.get(m + 1).copied().unwrap_or(f64::NEG_INFINITY);
            if p[m] > p[m - 1] && p[m] >= right && p[m] > cut {
                found.push(refine(spec, m));
            }
        }
    }
    found.sort_by(|a, b| b.height.total_cmp(&a.height).then(a.omega.total_cmp(&b.omega)));
    let mut kept: Vec<Peak> = Vec::new();
    for peak in found {
        if kept.iter().all(|k| (k.omega - peak.omega).abs() >= min_separation) {
            kept.push(peak);
        }
    }
    kept.sort_by(|a, b| a.omega.total_cmp(&b.omega));
    Ok(PeakSet { peaks: kept, resolution, tolerance: None })
}

fn refine(spec: &Spectrum, m: usize) -> Peak {
    let p = &spec.power;
    let d = spec.resolution();
    let (mut omega, mut height) = (spec.omegas[m], p[m]);
    if m + 1 < p.len() {
        let (a, b, c) = (p[m - 1], p[m], p[m + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            let delta = 0.5 * (a - c) / denom;
            omega += delta * d;
            height = b - 0.25 * (a - c) * delta;
        }
    }
    let half = 0.5 * p[m];
    let mut lo = spec.omegas[0];
    for k in (0..m).rev() {
        if p[k] < half {
            lo = spec.omegas[k] + d * (half - p[k]) / (p[k + 1] - p[k]);
            break;
        }
    }
    let mut hi = spec.omegas[p.len() - 1];
    for k in m + 1..p.len() {
        if p[k] < half {
            hi = spec.omegas[k] - d * (half - p[k]) / (p[k - 1] - p[k]);
            break;
        }
    }
    Peak { omega, height, width: hi - lo, label: PeakLabel::Unassigned { candidates: Vec::new() } }
}

/// Candidate set `{e_n} ∪ {e_m − e_n : m > n}` from the known gaps.
pub fn candidates(levels: &EnergyLevels) -> Vec<Candidate> {
    let gaps = &levels.gaps;
    let mut out: Vec<Candidate> = (0..gaps.len()).map(|i| Candidate { m: i + 1, n: 0, value: gaps[i] }).collect();
    for m in 1..=gaps.len() {
        for n in 1..m {
            out.push(Candidate { m, n, value: gaps[m - 1] - gaps[n - 1] });
        }
    }
    out
}

pub fn default_tolerance(resolution: f64) -> f64 {
    resolution.max(MATCH_TOL_FLOOR)
}

/// Labels peaks by greedy closest-first matching; each candidate is used at
/// most once. A peak whose best free candidates tie within [`TIE_MARGIN`] is
/// left unassigned and records all of them.
pub fn match_peaks(peaks: &PeakSet, levels: &EnergyLevels, tol: f64) -> PeakSet {
    let cands = candidates(levels);
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in peaks.peaks.iter().enumerate() {
        for (c, cand) in cands.iter().enumerate() {
            let d = (p.omega - cand.value).abs();
            if d <= tol {
                pairs.push((d, i, c));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = peaks.clone();
    out.tolerance = Some(tol);
    for p in &mut out.peaks {
        p.label = PeakLabel::Unassigned { candidates: Vec::new() };
    }
    let mut peak_done = vec![false; peaks.len()];
    let mut cand_used = vec![false; cands.len()];
    for &(d, i, c) in &pairs {
        if peak_done[i] || cand_used[c] {
            continue;
        }
        let tied: Vec<usize> = pairs
            .iter()
            .filter(|&&(d2, i2, c2)| i2 == i && c2 != c && !cand_used[c2] && d2 - d < TIE_MARGIN)
            .map(|&(_, _, c2)| c2)
            .collect();
        peak_done[i] = true;
        if tied.is_empty() {
            cand_used[c] = true;
            out.peaks[i].label = PeakLabel::from_candidate(cands[c]);
        } else {
            let candidates = std::iter::once(c).chain(tied).map(|k| cands[k]).collect();
            out.peaks[i].label = PeakLabel::Unassigned { candidates };
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectroOptions {
    pub window: Window,
    pub pad: usize,
    pub min_height_frac: f64,
    /// Defaults to `2Δω` when `None`.
    pub min_separation: Option<f64>,
    /// Number of ED gaps used as candidates.
    pub n_low: usize,
    /// Defaults to `max(Δω, 0.05)` when `None`.
    pub tolerance: Option<f64>,
}

impl Default for SpectroOptions {
    fn default() -> Self {
        SpectroOptions {
            window: Window::Hann,
            pad: DEFAULT_PAD,
            min_height_frac: DEFAULT_MIN_HEIGHT_FRAC,
            min_separation: None,
            n_low: 6,
            tolerance: None,
        }
    }
}

/// Spectrum, peaks, and labels against `levels` if given.
pub fn analyze(series: &TimeSeries, levels: Option<&EnergyLevels>, opts: &SpectroOptions) -> Result<(Spectrum, PeakSet)> {
    let spec = power_spectrum(series, opts.window, opts.pad)?;
    let d = spec.resolution();
    let peaks = find_peaks(&spec, opts.min_height_frac, opts.min_separation.unwrap_or(2.0 * d))?;
    let peaks = match levels {
        Some(l) => match_peaks(&peaks, l, opts.tolerance.unwrap_or_else(|| default_tolerance(d))),
        None => peaks,
    };
    Ok((spec, peaks))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaPoint {
    pub g: f64,
    pub h: f64,
    pub eta: f64,
    /// Peak positions labeled `e_1, e_2, …`, `None` where no peak matched.
    pub extracted: Vec<Option<f64>>,
    /// Half the frequency resolution.
    pub uncertainty: f64,
    pub reference: EnergyLevels,
    pub peaks: PeakSet,
}

impl EtaPoint {
    pub fn e(&self, n: usize) -> Option<f64> {
        n.checked_sub(1).and_then(|i| self.extracted.get(i).copied().flatten())
    }
}

/// One quench, spectrum and ED solve per `g`, at fixed `h`.
pub fn eta_point(template: &ModelParams, g: f64, h: f64, plan: &QuenchPlan, opts: &SpectroOptions) -> Result<EtaPoint> {
    let params = ModelParams::new(template.n_sites, g, h)?;
    let record = run_quench(&params, plan)?;
    let series = TimeSeries::from_record(&record, Axis::Y)?;
    let reference = edsolver::zero_momentum_levels(&params, opts.n_low)?;
    let (_, peaks) = analyze(&series, Some(&reference), opts)?;
    let extracted = (1..=opts.n_low).map(|n| peaks.gap(n).map(|p| p.omega)).collect();
    Ok(EtaPoint { g, h, eta: eta(g, h), extracted, uncertainty: peaks.uncertainty(), reference, peaks })
}

/// Points are independent; with `parallel` they run on the rayon pool and are
/// returned in input order.
pub fn eta_sweep(
    g_list: &[f64],
    h: f64,
    template: &ModelParams,
    plan: &QuenchPlan,
    opts: &SpectroOptions,
    parallel: bool,
) -> Result<Vec<EtaPoint>> {
    if g_list.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    let mut plan = plan.clone();
    if !plan.axes.contains(&Axis::Y) {
        plan.axes.push(Axis::Y);
    }
    let run = |&g: &f64| eta_point(template, g, h, &plan, opts);
    if parallel {
        g_list.par_iter().map(run).collect()
    } else {
        g_list.iter().map(run).collect()
    }
}
