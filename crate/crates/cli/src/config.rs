//! Flat `section.key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are comma
//! separated. `emit` writes every key, so `parse(emit(c)) == c`.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use meson_core::noise::ReadoutPair;
use meson_core::spectro::SpectroOptions;
use meson_core::{Axis, ModelParams, NoiseParams, QuenchPlan, Window};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    Csv,
    Json,
    #[default]
    Both,
}

impl Format {
    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Both => "both",
        }
    }
}

impl FromStr for Format {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "both" => Ok(Format::Both),
            other => err(format!("unknown format '{other}' (expected csv, json or both)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub shots: u64,
    pub seed: u64,
    pub axes: Vec<Axis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub g: Vec<f64>,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelateConfig {
    pub threshold: f64,
    pub dt: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: Format,
    pub per_site: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelParams,
    pub plan: PlanConfig,
    pub noise: Option<NoiseParams>,
    pub spectro: SpectroOptions,
    pub sweep: SweepConfig,
    pub correlate: CorrelateConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelParams { n_sites: 12, g: 0.5, h: 0.3 },
            plan: PlanConfig { dt: 0.4, n_steps: 100, shots: 0, seed: 0, axes: vec![Axis::X, Axis::Y] },
            noise: None,
            spectro: SpectroOptions::default(),
            sweep: SweepConfig { g: (0..11).map(|k| (25 + 5 * k) as f64 / 100.0).collect(), h: 0.3 },
            correlate: CorrelateConfig { threshold: meson_core::obs::DEFAULT_FRONT_THRESHOLD, dt: 0.1, n_steps: 300 },
            output: OutputConfig { dir: PathBuf::from("out"), format: Format::Both, per_site: false },
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError(format!("{key}: cannot parse '{v}'")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, ConfigError> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn auto(key: &str, v: &str) -> Result<Option<f64>, ConfigError> {
    if v == "auto" {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn show_auto(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(format!("line {}: expected 'key = value'", no + 1));
            };
            cfg.set(key.trim(), value.trim()).map_err(|e| ConfigError(format!("line {}: {e}", no + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        if let Some(rest) = key.strip_prefix("noise.") {
            if rest == "enabled" {
                let on: bool = num(key, v)?;
                self.noise = match (on, self.noise.take()) {
                    (true, Some(n)) => Some(n),
                    (true, None) => Some(NoiseParams::default()),
                    (false, _) => None,
                };
                return Ok(());
            }
            let noise = self.noise.get_or_insert_with(NoiseParams::default);
            match rest {
                "p1" => noise.p1 = num(key, v)?,
                "p2" => noise.p2 = num(key, v)?,
                "p01" | "p10" => {
                    let values: Vec<f64> = list(key, v)?;
                    let n = values.len().max(noise.readout.len());
                    let mut pairs: Vec<ReadoutPair> = (0..n).map(|i| noise.readout_for(i + 1)).collect();
                    for (i, pair) in pairs.iter_mut().enumerate() {
                        let x = if values.len() == 1 { values[0] } else { *values.get(i).unwrap_or(&0.0) };
                        if rest == "p01" {
                            pair.p01 = x;
                        } else {
                            pair.p10 = x;
                        }
                    }
                    noise.readout = pairs;
                }
                "trajectories" => noise.trajectories = num(key, v)?,
                "twirl" => noise.twirl = num(key, v)?,
                "mitigate" => noise.mitigate = num(key, v)?,
                _ => return err(format!("unknown key '{key}'")),
            }
            return Ok(());
        }
        match key {
            "model.L" => self.model.n_sites = num(key, v)?,
            "model.g" => self.model.g = num(key, v)?,
            "model.h" => self.model.h = num(key, v)?,
            "plan.dt" => self.plan.dt = num(key, v)?,
            "plan.n_steps" => self.plan.n_steps = num(key, v)?,
            "plan.shots" => self.plan.shots = num(key, v)?,
            "plan.seed" => self.plan.seed = num(key, v)?,
            "plan.axes" => {
                self.plan.axes = v
                    .split(',')
                    .map(|s| s.trim().parse::<Axis>().map_err(|e| ConfigError(format!("{key}: {e}"))))
                    .collect::<Result<_, _>>()?
            }
            "spectro.window" => {
                self.spectro.window = v.parse::<Window>().map_err(|e| ConfigError(format!("{key}: {e}")))?
            }
            "spectro.pad" => self.spectro.pad = num(key, v)?,
            "spectro.min_height_frac" => self.spectro.min_height_frac = num(key, v)?,
            "spectro.min_separation" => self.spectro.min_separation = auto(key, v)?,
            "spectro.tolerance" => self.spectro.tolerance = auto(key, v)?,
            "spectro.n_low" => self.spectro.n_low = num(key, v)?,
            "sweep.g" => self.sweep.g = list(key, v)?,
            "sweep.h" => self.sweep.h = num(key, v)?,
            "correlate.threshold" => self.correlate.threshold = num(key, v)?,
            "correlate.dt" => self.correlate.dt = num(key, v)?,
            "correlate.n_steps" => self.correlate.n_steps = num(key, v)?,
            "output.dir" => self.output.dir = PathBuf::from(v),
            "output.format" => self.output.format = v.parse()?,
            "output.per_site" => self.output.per_site = num(key, v)?,
            _ => return err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let report = self.model.validate();
        if report.is_error() {
            return err(report.messages.join("; "));
        }
        self.quench_plan().validate().map_err(|e| ConfigError(e.to_string()))?;
        if let Some(n) = &self.noise {
            n.validate().map_err(|e| ConfigError(e.to_string()))?;
        }
        let s = &self.spectro;
        if s.pad == 0 {
            return err("spectro.pad must be at least 1");
        }
        if !(s.min_height_frac > 0.0 && s.min_height_frac < 1.0) {
            return err("spectro.min_height_frac must lie in (0, 1)");
        }
        if s.n_low == 0 {
            return err("spectro.n_low must be at least 1");
        }
        if self.sweep.g.is_empty() || self.sweep.g.iter().any(|g| !g.is_finite()) || !self.sweep.h.is_finite() {
            return err("sweep grid must be non-empty and finite");
        }
        if !(self.correlate.threshold > 0.0) || !(self.correlate.dt > 0.0) || self.correlate.n_steps == 0 {
            return err("correlate.threshold, correlate.dt and correlate.n_steps must be positive");
        }
        Ok(())
    }

    pub fn emit(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("model.L", self.model.n_sites.to_string());
        kv("model.g", self.model.g.to_string());
        kv("model.h", self.model.h.to_string());
        kv("plan.dt", self.plan.dt.to_string());
        kv("plan.n_steps", self.plan.n_steps.to_string());
        kv("plan.shots", self.plan.shots.to_string());
        kv("plan.seed", self.plan.seed.to_string());
        kv("plan.axes", join(&self.plan.axes));
        kv("noise.enabled", self.noise.is_some().to_string());
        if let Some(n) = &self.noise {
            kv("noise.p1", n.p1.to_string());
            kv("noise.p2", n.p2.to_string());
            kv("noise.p01", join(&n.readout.iter().map(|r| r.p01).collect::<Vec<_>>()));
            kv("noise.p10", join(&n.readout.iter().map(|r| r.p10).collect::<Vec<_>>()));
            kv("noise.trajectories", n.trajectories.to_string());
            kv("noise.twirl", n.twirl.to_string());
            kv("noise.mitigate", n.mitigate.to_string());
        }
        kv("spectro.window", self.spectro.window.to_string());
        kv("spectro.pad", self.spectro.pad.to_string());
        kv("spectro.min_height_frac", self.spectro.min_height_frac.to_string());
        kv("spectro.min_separation", show_auto(self.spectro.min_separation));
        kv("spectro.tolerance", show_auto(self.spectro.tolerance));
        kv("spectro.n_low", self.spectro.n_low.to_string());
        kv("sweep.g", join(&self.sweep.g));
        kv("sweep.h", self.sweep.h.to_string());
        kv("correlate.threshold", self.correlate.threshold.to_string());
        kv("correlate.dt", self.correlate.dt.to_string());
        kv("correlate.n_steps", self.correlate.n_steps.to_string());
        kv("output.dir", self.output.dir.display().to_string());
        kv("output.format", self.output.format.as_str().to_string());
        kv("output.per_site", self.output.per_site.to_string());
        out
    }

    pub fn quench_plan(&self) -> QuenchPlan {
        let mut plan = QuenchPlan::new(self.plan.dt, self.plan.n_steps)
            .with_shots(self.plan.shots, self.plan.seed)
            .with_axes(&self.plan.axes);
        if let Some(n) = &self.noise {
            plan = plan.with_noise(n.clone());
        }
        plan
    }
}
