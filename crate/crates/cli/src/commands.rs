//! Subcommand implementations. Every command writes only inside the
//! configured output directory and returns the paths it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::info;
use serde::Serialize;
use serde_json::json;

use meson_core::edsolver::{self, EnergyLevels};
use meson_core::obs::{self, FrontAnalysis};
use meson_core::spectro::{self, PeakSet, Spectrum};
use meson_core::trotter::{run_quench, QuenchRecord};
use meson_core::{Axis, ModelParams, QuenchPlan, TimeSeries};

use crate::config::RunConfig;

/// Largest chain for which `ed` also compares against the free-fermion
/// spectrum at `h = 0`.
const FREE_FERMION_CHECK_MAX_SITES: usize = 16;
const FREE_FERMION_TOL: f64 = 1e-8;

/// Files produced by one command, written together once all are rendered.
#[derive(Debug, Default)]
struct Outputs {
    files: Vec<(String, String)>,
}

impl Outputs {
    fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.add(name, text);
        Ok(())
    }

    fn write(self, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut paths = Vec::new();
        for (name, contents) in self.files {
            let path = dir.join(name);
            fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
            info!("wrote {}", path.display());
            paths.push(path);
        }
        Ok(paths)
    }
}

fn provenance_line(pairs: &[(&str, String)]) -> String {
    let body: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("# {}\n", body.join(" "))
}

fn model_provenance(params: &ModelParams, plan: &QuenchPlan) -> Vec<(&'static str, String)> {
    vec![
        ("L", params.n_sites.to_string()),
        ("g", params.g.to_string()),
        ("h", params.h.to_string()),
        ("dt", plan.dt.to_string()),
        ("n_steps", plan.n_steps.to_string()),
        ("shots", plan.shots.to_string()),
        ("seed", plan.seed.to_string()),
        ("noise", plan.noise.is_some().to_string()),
    ]
}

/// Trace CSV: `t`, one aggregate column per axis, optional per-site columns.
pub fn trace_csv(record: &QuenchRecord, per_site: bool) -> String {
    let mut out = provenance_line(&model_provenance(&record.params, &record.plan));
    let axes: Vec<Axis> = record.aggregates.keys().copied().collect();
    let mut header = vec!["t".to_string()];
    header.extend(axes.iter().map(|a| format!("sigma_{a}")));
    if per_site {
        for a in &axes {
            header.extend((1..=record.params.n_sites).map(|j| format!("{a}_{j}")));
        }
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for (k, t) in record.times.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(axes.iter().map(|a| record.aggregates[a][k].to_string()));
        if per_site {
            for a in &axes {
                row.extend(record.site_values[a][k].iter().map(f64::to_string));
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn cmd_quench(cfg: &RunConfig) -> anyhow::Result<Vec<PathBuf>> {
    let record = run_quench(&cfg.model, &cfg.quench_plan())?;
    let mut out = Outputs::default();
    if cfg.output.format.csv() {
        out.add("quench.csv", trace_csv(&record, cfg.output.per_site));
    }
    if cfg.output.format.json() {
        out.json("quench.json", &json!({ "eta": cfg.model.eta(), "record": record }))?;
    }
    out.write(&cfg.output.dir)
}

#[derive(Debug, Serialize)]
struct LevelsReport<'a> {
    #[serde(flatten)]
    levels: &'a EnergyLevels,
    #[serde(skip_serializing_if = "Option::is_none")]
    free_fermion_check: Option<bool>,
}

fn free_fermion_check(params: &ModelParams) -> anyhow::Result<Option<bool>> {
    if params.h != 0.0 || params.n_sites > FREE_FERMION_CHECK_MAX_SITES {
        return Ok(None);
    }
    let sector = edsolver::sector_spectrum(params)?;
    let oracle = edsolver::free_fermion_spectrum(params.n_sites, params.g);
    Ok(Some(edsolver::is_sub_multiset(&sector, &oracle, FREE_FERMION_TOL)))
}

pub fn cmd_ed(cfg: &RunConfig) -> anyhow::Result<Vec<PathBuf>> {
    let levels = edsolver::zero_momentum_levels(&cfg.model, cfg.spectro.n_low)?;
    let check = free_fermion_check(&cfg.model)?;
    let mut out = Outputs::default();
    if cfg.output.format.json() {
        out.json("levels.json", &LevelsReport { levels: &levels, free_fermion_check: check })?;
    }
    if cfg.output.format.csv() {
        let mut csv = provenance_line(&[
            ("L", cfg.model.n_sites.to_string()),
            ("g", cfg.model.g.to_string()),
            ("h", cfg.model.h.to_string()),
            ("sector", levels.sector.clone()),
        ]);
        csv.push_str("n,E,e,multiplicity\n");
        for (n, e) in levels.energies.iter().enumerate() {
            let gap = if n == 0 { 0.0 } else { levels.gaps[n - 1] };
            csv.push_str(&format!("{n},{e},{gap},{}\n", levels.multiplicities[n]));
        }
        out.add("levels.csv", csv);
    }
    out.write(&cfg.output.dir)
}

/// A trace read back from CSV with its provenance pairs.
#[derive(Debug, Clone)]
pub struct Trace {
    pub provenance: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Trace {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut provenance = BTreeMap::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for pair in rest.split_whitespace() {
                    if let Some((k, v)) = pair.split_once('=') {
                        provenance.insert(k.to_string(), v.to_string());
                    }
                }
                continue;
            }
            match &columns {
                None => columns = Some(line.split(',').map(|s| s.trim().to_string()).collect()),
                Some(cols) => {
                    let row: Vec<f64> = line
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<Result<_, _>>()
                        .with_context(|| format!("line {}: non-numeric value", no + 1))?;
                    if row.len() != cols.len() {
                        bail!("line {}: expected {} columns, found {}", no + 1, cols.len(), row.len());
                    }
                    rows.push(row);
                }
            }
        }
        let Some(columns) = columns else { bail!("trace has no header row") };
        Ok(Trace { provenance, columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// Model parameters from the provenance line, if complete and valid.
    pub fn model(&self) -> Option<ModelParams> {
        let get = |k: &str| self.provenance.get(k);
        let params = ModelParams::new(get("L")?.parse().ok()?, get("g")?.parse().ok()?, get("h")?.parse().ok()?).ok()?;
        (params.n_sites <= edsolver::MAX_SECTOR_SITES).then_some(params)
    }

    pub fn series(&self, column: &str) -> anyhow::Result<TimeSeries> {
        let times = self.column("t").context("trace has no 't' column")?;
        let values = self.column(column).with_context(|| format!("trace has no '{column}' column"))?;
        let mut series = TimeSeries::new(times, values)?;
        series.provenance = self.provenance.clone();
        Ok(series)
    }
}

fn spectrum_csv(spec: &Spectrum, provenance: &BTreeMap<String, String>) -> String {
    let mut pairs: Vec<(&str, String)> = provenance.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    pairs.push(("window", spec.window.to_string()));
    pairs.push(("pad", spec.pad.to_string()));
    pairs.push(("resolution", spec.resolution().to_string()));
    let mut out = provenance_line(&pairs);
    out.push_str("omega,power\n");
    for (w, p) in spec.omegas.iter().zip(&spec.power) {
        out.push_str(&format!("{w},{p}\n"));
    }
    out
}

#[derive(Debug, Serialize)]
struct PeakReport<'a> {
    source: BTreeMap<String, String>,
    uncertainty: f64,
    #[serde(flatten)]
    peaks: &'a PeakSet,
    #[serde(skip_serializing_if = "Option::is_none")]
    levels: Option<&'a EnergyLevels>,
}

/// Spectrum and labeled peaks for the `sigma_y` column of a trace CSV.
pub fn cmd_spectrum(cfg: &RunConfig, input: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let trace = Trace::parse(&text)?;
    let series = trace.series("sigma_y")?;
    let levels = match trace.model() {
        Some(params) => Some(edsolver::zero_momentum_levels(&params, cfg.spectro.n_low)?),
        None => None,
    };
    let (spec, peaks) = spectro::analyze(&series, levels.as_ref(), &cfg.spectro)?;
    let mut out = Outputs::default();
    if cfg.output.format.csv() {
        out.add("spectrum.csv", spectrum_csv(&spec, &trace.provenance));
    }
    if cfg.output.format.json() {
        let report = PeakReport {
            source: trace.provenance.clone(),
            uncertainty: peaks.uncertainty(),
            peaks: &peaks,
            levels: levels.as_ref(),
        };
        out.json("peaks.json", &report)?;
    }
    out.write(&cfg.output.dir)
}

fn sweep_csv(points: &[spectro::EtaPoint], n_low: usize) -> String {
    let mut header = vec!["g".to_string(), "h".to_string(), "eta".to_string()];
    for n in 1..=n_low {
        header.push(format!("e{n}"));
        header.push(format!("e{n}_err"));
    }
    header.extend((1..=n_low).map(|n| format!("ed_e{n}")));
    let mut out = String::new();
    if let Some(p) = points.first() {
        out = provenance_line(&[("L", p.reference.n_sites.to_string()), ("resolution", p.peaks.resolution.to_string())]);
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for p in points {
        let mut row = vec![p.g.to_string(), p.h.to_string(), p.eta.to_string()];
        for n in 1..=n_low {
            match p.e(n) {
                Some(e) => {
                    row.push(e.to_string());
                    row.push(p.uncertainty.to_string());
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        row.extend((1..=n_low).map(|n| p.reference.gap(n).map_or_else(String::new, |e| e.to_string())));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn cmd_sweep(cfg: &RunConfig, parallel: bool) -> anyhow::Result<Vec<PathBuf>> {
    let points = spectro::eta_sweep(
        &cfg.sweep.g,
        cfg.sweep.h,
        &cfg.model,
        &cfg.quench_plan(),
        &cfg.spectro,
        parallel,
    )?;
    let mut out = Outputs::default();
    if cfg.output.format.csv() {
        out.add("sweep.csv", sweep_csv(&points, cfg.spectro.n_low));
    }
    if cfg.output.format.json() {
        out.json("sweep.json", &points)?;
    }
    out.write(&cfg.output.dir)
}

#[derive(Debug, Serialize)]
struct FrontReport<'a> {
    #[serde(rename = "L")]
    n_sites: usize,
    g: f64,
    h: f64,
    #[serde(flatten)]
    front: &'a FrontAnalysis,
    max_group_velocity: f64,
    velocity_bound: f64,
    /// Sign changes of `dG/dt` at each distance `r = 1, 2, …`.
    sign_changes: Vec<usize>,
}

pub fn cmd_correlate(cfg: &RunConfig) -> anyhow::Result<Vec<PathBuf>> {
    let plan = QuenchPlan {
        dt: cfg.correlate.dt,
        n_steps: cfg.correlate.n_steps,
        axes: vec![Axis::X],
        correlators: true,
        ..cfg.quench_plan()
    };
    let record = run_quench(&cfg.model, &plan)?;
    let field = record.correlator.as_ref().context("correlators were not recorded")?;
    let front = obs::lightcone_front(field, cfg.correlate.threshold);
    let mut out = Outputs::default();
    if cfg.output.format.csv() {
        let mut pairs = model_provenance(&cfg.model, &plan);
        pairs.push(("threshold", cfg.correlate.threshold.to_string()));
        let mut csv = provenance_line(&pairs);
        csv.push_str("t,r,G\n");
        for (k, t) in field.times.iter().enumerate() {
            for r in 1..=field.max_distance() {
                csv.push_str(&format!("{t},{r},{}\n", field.get(r, k)));
            }
        }
        out.add("correlator.csv", csv);
    }
    if cfg.output.format.json() {
        let report = FrontReport {
            n_sites: cfg.model.n_sites,
            g: cfg.model.g,
            h: cfg.model.h,
            front: &front,
            max_group_velocity: obs::max_group_velocity(cfg.model.g),
            velocity_bound: obs::front_velocity_bound(cfg.model.g),
            sign_changes: (1..=field.max_distance()).map(|r| field.derivative_sign_changes(r)).collect(),
        };
        out.json("front.json", &report)?;
    }
    out.write(&cfg.output.dir)
}
