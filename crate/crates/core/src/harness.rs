//! Experiment configuration, the three studies and the `slm` command line.
//!
//! A configuration file is TOML with the sections `process`, `material`,
//! `path`, `controller` and `experiment`; every key has a default, so an
//! empty file is the 316L case study. Any key can be overridden from the
//! environment as `SLM_<SECTION>_<KEY>`, e.g. `SLM_PROCESS_NX=15`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::beam::{BeamPath, OutputWeights};
use crate::error::{Error, Result};
use crate::fom::{Record, SimResult};
use crate::io::{self, fmt};
use crate::lqr::{self, ClosedLoopOptions, ClosedLoopRun, GainSidecar, TrackingSpec};
use crate::params::{MaterialParams, ProcessParams};
use crate::plant::{run_build, ConstantPower, MaterialMode, Plant, PlantKind};
use crate::rom::{self, RomConfig, SweepRow};

const SECTIONS: [&str; 5] = ["process", "material", "path", "controller", "experiment"];
const ENV_PREFIX: &str = "SLM_";

/// Laser path of every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PathSpec {
    /// Inward square spiral from the corner `(margin, margin)`.
    Spiral { margin: f64, pitch: f64 },
    /// One straight pass.
    Line { from: [f64; 2], to: [f64; 2] },
    /// Waypoint CSV with columns `x`, `y`.
    File { file: PathBuf },
}

impl Default for PathSpec {
    fn default() -> Self {
        PathSpec::Spiral { margin: 100e-6, pitch: 100e-6 }
    }
}

impl PathSpec {
    /// Horizontal pass through the middle of the footprint.
    pub fn centre_line(p: &ProcessParams) -> Self {
        PathSpec::Line { from: [100e-6, p.ly / 2.0], to: [p.lx - 100e-6, p.ly / 2.0] }
    }

    pub fn build(&self, p: &ProcessParams) -> Result<BeamPath<f64>> {
        match self {
            PathSpec::Spiral { margin, pitch } => BeamPath::square_spiral(p, *margin, *pitch),
            PathSpec::Line { from, to } => BeamPath::line(p, *from, *to),
            PathSpec::File { file } => BeamPath::load_csv(file, p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSpec {
    /// Constant melt-pool temperature reference [K].
    pub setpoint: f64,
    pub q: f64,
    pub r: f64,
    /// Layers kept explicit in the controller's model.
    pub gamma: usize,
    /// Use the raw absorbed-power weights as the output row.
    pub raw_output: bool,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        Self { setpoint: 1700.0, q: 1.0, r: 1.0, gamma: 1, raw_output: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub plant: PlantKind,
    pub material_mode: MaterialMode,
    /// Power of open-loop runs [W]; the controller's first-layer mean when unset.
    pub baseline_power: Option<f64>,
    /// ROI sizes compared by the reduction and ROI studies.
    pub gammas: Vec<usize>,
    /// Layer whose trajectories the ROI study compares.
    pub compare_layer: usize,
    pub out: PathBuf,
    /// Seed for randomized runs.
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            plant: PlantKind::Fom,
            material_mode: MaterialMode::Geometric,
            baseline_power: None,
            gammas: vec![1, 2, 4],
            compare_layer: 19,
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub process: ProcessParams,
    pub material: MaterialParams,
    pub path: PathSpec,
    pub controller: ControllerSpec,
    pub experiment: ExperimentSpec,
}

/// Applies `SLM_<SECTION>_<KEY>=value` pairs to a parsed TOML document.
/// Values are read as TOML literals, falling back to plain strings.
pub fn apply_overrides<I>(doc: &mut toml::Table, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
        let rest = rest.to_ascii_lowercase();
        let Some(section) = SECTIONS.iter().find(|s| rest.starts_with(&format!("{s}_"))) else {
            continue;
        };
        let key = &rest[section.len() + 1..];
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.clone()));
        let table = doc
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("section {section} is not a table")))?;
        log::debug!("override {section}.{key} = {value}");
        table.insert(key.to_string(), value);
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, std::iter::empty())
    }

    pub fn from_toml_with<I>(text: &str, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        apply_overrides(&mut doc, vars)?;
        let cfg: Self = toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file and applies environment overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_with(&text, std::env::vars())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn hash(&self) -> Result<String> {
        Ok(io::hash_hex(self.to_toml()?.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.process.validate()?;
        self.material.validate()?;
        self.process.samples_per_layer()?;
        RomConfig::new(self.controller.gamma)?;
        for &g in &self.experiment.gammas {
            RomConfig::new(g)?;
        }
        if self.experiment.gammas.is_empty() {
            return Err(Error::Config("gammas must not be empty".into()));
        }
        let c = &self.controller;
        if !(c.q >= 0.0 && c.r > 0.0 && c.setpoint.is_finite()) {
            return Err(Error::Config(format!("controller weights q={} r={} setpoint={}", c.q, c.r, c.setpoint)));
        }
        if let Some(p) = self.experiment.baseline_power {
            if !(0.0..=self.process.p_max).contains(&p) {
                return Err(Error::Config(format!("baseline power {p} outside [0, {}]", self.process.p_max)));
            }
        }
        if self.experiment.compare_layer == 0 {
            return Err(Error::Config("compare_layer counts from 1".into()));
        }
        if let PathSpec::File { file } = &self.path {
            if !file.is_file() {
                return Err(Error::Config(format!("waypoint file {} not found", file.display())));
            }
        }
        self.beam_path()?;
        Ok(())
    }

    pub fn beam_path(&self) -> Result<BeamPath<f64>> {
        self.path.build(&self.process)
    }

    pub fn output_weights(&self) -> OutputWeights {
        if self.controller.raw_output {
            OutputWeights::Raw
        } else {
            OutputWeights::Normalized
        }
    }

    pub fn tracking_spec(&self) -> Result<TrackingSpec<f64>> {
        let c = &self.controller;
        Ok(TrackingSpec::constant(c.setpoint, self.process.samples_per_layer()?, c.q, c.r, self.process.p_max))
    }

    fn closed_loop_options(&self, plant: PlantKind) -> ClosedLoopOptions {
        ClosedLoopOptions {
            plant,
            mode: self.experiment.material_mode,
            output: self.output_weights(),
            layers: self.process.layers,
            record: Record::default(),
        }
    }
}

/// Closed loop with the configured ROI.
pub fn run_controlled(cfg: &ExperimentConfig) -> Result<ClosedLoopRun<f64>> {
    let path = cfg.beam_path()?;
    lqr::run_closed_loop(
        &cfg.process,
        &cfg.material,
        &path,
        &cfg.tracking_spec()?,
        RomConfig::new(cfg.controller.gamma)?,
        cfg.closed_loop_options(cfg.experiment.plant),
    )
}

/// Open loop at constant power on the configured plant.
pub fn run_open_loop(cfg: &ExperimentConfig, power: f64, record: Record) -> Result<SimResult<f64>> {
    let path = cfg.beam_path()?;
    let reduction = match cfg.experiment.plant {
        PlantKind::Fom => None,
        PlantKind::Rom => Some(RomConfig::new(cfg.controller.gamma)?),
    };
    let mut plant = Plant::new(
        &cfg.process,
        &cfg.material,
        &path,
        cfg.output_weights(),
        cfg.experiment.material_mode,
        reduction,
    )?;
    run_build(&mut plant, &mut ConstantPower { power }, &path, cfg.process.layers, record)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerComparison {
    pub layer: usize,
    pub controlled_mean_y: f64,
    pub controlled_mean_u: f64,
    pub controlled_mean_abs_error: f64,
    pub uncontrolled_mean_y: f64,
    pub uncontrolled_mean_u: f64,
    pub uncontrolled_mean_abs_error: f64,
}

#[derive(Debug, Clone)]
pub struct BuildupReport {
    pub controlled: ClosedLoopRun<f64>,
    pub uncontrolled: SimResult<f64>,
    pub baseline_power: f64,
    pub layers: Vec<LayerComparison>,
}

/// Closed loop against an open-loop run at constant power.
pub fn study_controlled_vs_uncontrolled(cfg: &ExperimentConfig) -> Result<BuildupReport> {
    let controlled = run_controlled(cfg)?;
    let baseline_power = match cfg.experiment.baseline_power {
        Some(p) => p,
        None => controlled.sim.layers.first().map_or(0.0, |l| l.mean_input()),
    };
    let uncontrolled = run_open_loop(cfg, baseline_power, Record::default())?;
    let setpoint = cfg.controller.setpoint;
    let layers = controlled
        .sim
        .layers
        .iter()
        .zip(&uncontrolled.layers)
        .map(|(c, u)| LayerComparison {
            layer: c.layer,
            controlled_mean_y: c.mean_output(),
            controlled_mean_u: c.mean_input(),
            controlled_mean_abs_error: c.mean_abs_error(setpoint),
            uncontrolled_mean_y: u.mean_output(),
            uncontrolled_mean_u: u.mean_input(),
            uncontrolled_mean_abs_error: u.mean_abs_error(setpoint),
        })
        .collect();
    Ok(BuildupReport { controlled, uncontrolled, baseline_power, layers })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoiRun {
    pub gamma: usize,
    pub synthesis_seconds: f64,
    /// Outputs of the compared layer.
    #[serde(skip)]
    pub outputs: Vec<f64>,
    #[serde(skip)]
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoiReport {
    pub layer: usize,
    pub runs: Vec<RoiRun>,
    /// RMS difference of each run's outputs from the first run's [K].
    pub rms_to_first: Vec<f64>,
}

pub fn rms_difference(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::SamplingMismatch(format!("{} vs {} samples", a.len(), b.len())));
    }
    Ok((a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt())
}

/// Closed-loop runs that differ only in the controller's ROI.
pub fn study_roi_sensitivity(cfg: &ExperimentConfig, gammas: &[usize], layer: usize) -> Result<RoiReport> {
    if gammas.is_empty() {
        return Err(Error::Config("no gammas to compare".into()));
    }
    let mut runs = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let mut c = cfg.clone();
        c.controller.gamma = gamma;
        c.process.layers = c.process.layers.max(layer);
        let run = run_controlled(&c)?;
        let trace = run
            .sim
            .layer(layer)
            .ok_or_else(|| Error::Config(format!("layer {layer} was not simulated")))?;
        runs.push(RoiRun {
            gamma,
            synthesis_seconds: run.synthesis_seconds,
            outputs: trace.outputs.clone(),
            times: trace.times.clone(),
        });
    }
    let rms_to_first = runs.iter().map(|r| rms_difference(&runs[0].outputs, &r.outputs)).collect::<Result<_>>()?;
    Ok(RoiReport { layer, runs, rms_to_first })
}

fn layer_file(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("layer_{k:02}.csv"))
}

pub fn write_layers(dir: &Path, sim: &SimResult<f64>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for trace in &sim.layers {
        io::write_layer_csv(&layer_file(dir, trace.layer), trace)?;
    }
    Ok(())
}

fn write_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-layer summary rows of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
struct LayerSummary {
    layer: usize,
    mean_y: String,
    mean_u: String,
    mean_abs_error: String,
    energy: String,
    solid_cells: usize,
}

fn summarize(sim: &SimResult<f64>, setpoint: f64) -> Vec<LayerSummary> {
    sim.layers
        .iter()
        .map(|l| LayerSummary {
            layer: l.layer,
            mean_y: fmt(l.mean_output()),
            mean_u: fmt(l.mean_input()),
            mean_abs_error: fmt(l.mean_abs_error(setpoint)),
            energy: fmt(l.energy),
            solid_cells: l.solid_cells,
        })
        .collect()
}

/// Writes `controlled/`, `uncontrolled/` and `layers.csv` under `dir`.
pub fn write_buildup(dir: &Path, report: &BuildupReport, setpoint: f64) -> Result<()> {
    write_layers(&dir.join("controlled"), &report.controlled.sim)?;
    write_layers(&dir.join("uncontrolled"), &report.uncontrolled)?;
    write_rows(&dir.join("controlled").join("layers.csv"), &summarize(&report.controlled.sim, setpoint))?;
    write_rows(&dir.join("uncontrolled").join("layers.csv"), &summarize(&report.uncontrolled, setpoint))?;
    Ok(())
}

pub fn write_roi(dir: &Path, report: &RoiReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(format!("roi_layer_{:02}.csv", report.layer)))?;
    let mut header = vec!["t".to_string()];
    header.extend(report.runs.iter().map(|r| format!("y_gamma{}", r.gamma)));
    w.write_record(&header)?;
    let times = &report.runs[0].times;
    for (l, t) in times.iter().enumerate() {
        let mut row = vec![fmt(*t)];
        row.extend(report.runs.iter().map(|r| fmt(r.outputs[l])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunMetadata<'a, S: Serialize> {
    command: &'a str,
    schema_version: u32,
    package_version: &'a str,
    config_hash: String,
    config: &'a ExperimentConfig,
    wall_seconds: f64,
    result: S,
}

fn write_metadata<S: Serialize>(dir: &Path, command: &str, cfg: &ExperimentConfig, wall: f64, result: S) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = RunMetadata {
        command,
        schema_version: io::CSV_SCHEMA_VERSION,
        package_version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash()?,
        config: cfg,
        wall_seconds: wall,
        result,
    };
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

#[derive(Parser, Debug)]
#[command(name = "slm", version, about = "Layer-wise thermal simulation and in-layer LQR control of a powder-bed build")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Open-loop build at constant power.
    Simulate(Common),
    /// Closed-loop build next to an open-loop baseline.
    Control(Common),
    /// Top-layer error of reduced models against the full model.
    RomError(Common),
    /// Closed-loop trajectories for several ROI sizes.
    CompareRoi(Common),
    /// Offline gain schedules as binary files with JSON sidecars.
    ExportGains(Common),
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML configuration; defaults to the 316L case study.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<usize>,
    /// Comma-separated ROI sizes.
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<usize>>,
    #[arg(long)]
    layers: Option<usize>,
    /// Layer compared by `compare-roi`.
    #[arg(long)]
    layer: Option<usize>,
    #[arg(long, value_parser = parse_plant)]
    plant: Option<PlantKind>,
    #[arg(long, value_parser = parse_mode)]
    material_mode: Option<MaterialMode>,
    #[arg(long)]
    raw_output: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Constant power of open-loop runs [W].
    #[arg(long)]
    baseline_power: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_plant(s: &str) -> std::result::Result<PlantKind, String> {
    match s {
        "fom" => Ok(PlantKind::Fom),
        "rom" => Ok(PlantKind::Rom),
        _ => Err(format!("expected fom or rom, got {s}")),
    }
}

fn parse_mode(s: &str) -> std::result::Result<MaterialMode, String> {
    match s {
        "geometric" => Ok(MaterialMode::Geometric),
        "thermal" => Ok(MaterialMode::Thermal),
        _ => Err(format!("expected geometric or thermal, got {s}")),
    }
}

impl Common {
    fn resolve(&self, command: &str) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::from_toml_with("", std::env::vars())?,
        };
        if command == "rom-error" && self.config.is_none() {
            cfg.path = PathSpec::centre_line(&cfg.process);
        }
        if let Some(g) = self.gamma {
            cfg.controller.gamma = g;
        }
        if let Some(g) = &self.gammas {
            cfg.experiment.gammas = g.clone();
        }
        if let Some(n) = self.layers {
            cfg.process.layers = n;
        }
        if let Some(l) = self.layer {
            cfg.experiment.compare_layer = l;
            cfg.process.layers = cfg.process.layers.max(l);
        }
        if let Some(p) = self.plant {
            cfg.experiment.plant = p;
        }
        if let Some(m) = self.material_mode {
            cfg.experiment.material_mode = m;
        }
        if self.raw_output {
            cfg.controller.raw_output = true;
        }
        if let Some(o) = &self.out {
            cfg.experiment.out = o.clone();
        }
        if let Some(p) = self.baseline_power {
            cfg.experiment.baseline_power = Some(p);
        }
        if let Some(s) = self.seed {
            cfg.experiment.seed = s;
        }
        if cfg.experiment.compare_layer > cfg.process.layers {
            cfg.experiment.compare_layer = cfg.process.layers;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn final_error(sim: &SimResult<f64>, setpoint: f64) -> f64 {
    sim.layers.last().map_or(0.0, |l| l.mean_abs_error(setpoint))
}

fn final_energy(sim: &SimResult<f64>) -> f64 {
    sim.layers.last().map_or(0.0, |l| l.energy)
}

fn execute(command: &Command) -> Result<String> {
    let start = Instant::now();
    let (name, common) = match command {
        Command::Simulate(c) => ("simulate", c),
        Command::Control(c) => ("control", c),
        Command::RomError(c) => ("rom-error", c),
        Command::CompareRoi(c) => ("compare-roi", c),
        Command::ExportGains(c) => ("export-gains", c),
    };
    let cfg = common.resolve(name)?;
    let out = cfg.experiment.out.clone();
    let setpoint = cfg.controller.setpoint;
    std::fs::create_dir_all(&out)?;
    let summary = match command {
        Command::Simulate(_) => {
            let power = cfg.experiment.baseline_power.unwrap_or(cfg.process.p_max / 2.0);
            let sim = run_open_loop(&cfg, power, Record::default())?;
            write_layers(&out, &sim)?;
            write_rows(&out.join("layers.csv"), &summarize(&sim, setpoint))?;
            let wall = start.elapsed().as_secs_f64();
            write_metadata(&out, name, &cfg, wall, serde_json::json!({ "power": power }))?;
            format!(
                "simulate: {} layers at {power} W, final mean |y-y^d| {:.3} K, energy {:.6e} J, {wall:.2} s",
                sim.layers.len(),
                final_error(&sim, setpoint),
                final_energy(&sim)
            )
        }
        Command::Control(_) => {
            let report = study_controlled_vs_uncontrolled(&cfg)?;
            write_buildup(&out, &report, setpoint)?;
            let wall = start.elapsed().as_secs_f64();
            let sim = &report.controlled.sim;
            write_metadata(
                &out,
                name,
                &cfg,
                wall,
                serde_json::json!({
                    "baseline_power": report.baseline_power,
                    "synthesis_seconds": report.controlled.synthesis_seconds,
                    "layers": report.layers,
                }),
            )?;
            format!(
                "control: gamma {}, final mean |y-y^d| {:.3} K (baseline {:.3} K at {:.3} W), energy {:.6e} J, {wall:.2} s",
                cfg.controller.gamma,
                final_error(sim, setpoint),
                final_error(&report.uncontrolled, setpoint),
                report.baseline_power,
                final_energy(sim)
            )
        }
        Command::RomError(_) => {
            let power = cfg.experiment.baseline_power.unwrap_or(cfg.process.p_max / 2.0);
            let path = cfg.beam_path()?;
            let rows: Vec<SweepRow> = rom::error_sweep(
                &cfg.process,
                &cfg.material,
                &path,
                &cfg.experiment.gammas,
                cfg.process.layers,
                power,
                cfg.experiment.material_mode,
            )?;
            rom::write_sweep_csv(&out.join("rom_error.csv"), &rows)?;
            let wall = start.elapsed().as_secs_f64();
            write_metadata(&out, name, &cfg, wall, serde_json::json!({ "power": power, "rows": rows.len() }))?;
            let worst = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
            format!("rom-error: {} rows, largest relative error {worst:.3e}, {wall:.2} s", rows.len())
        }
        Command::CompareRoi(_) => {
            let report = study_roi_sensitivity(&cfg, &cfg.experiment.gammas, cfg.experiment.compare_layer)?;
            write_roi(&out, &report)?;
            let wall = start.elapsed().as_secs_f64();
            write_metadata(&out, name, &cfg, wall, &report)?;
            let worst = report.rms_to_first.iter().copied().fold(0.0, f64::max);
            format!(
                "compare-roi: layer {}, largest RMS difference {worst:.4} K over gammas {:?}, {wall:.2} s",
                report.layer, cfg.experiment.gammas
            )
        }
        Command::ExportGains(_) => {
            let path = cfg.beam_path()?;
            let rom_cfg = RomConfig::new(cfg.controller.gamma)?;
            let spec = cfg.tracking_spec()?;
            let graphs = lqr::controller_graphs(&cfg.process, &cfg.material, &path, cfg.process.layers, rom_cfg)?;
            let schedules = lqr::synthesize_layers(&cfg.process, &path, &graphs, &spec, cfg.output_weights())?;
            let hash = cfg.hash()?;
            for (i, s) in schedules.iter().enumerate() {
                let stem = format!("gains_layer_{:02}", i + 1);
                lqr::write_gains(&out.join(format!("{stem}.bin")), s)?;
                let side = GainSidecar {
                    layer: i + 1,
                    horizon: s.horizon(),
                    dim: s.dim(),
                    q: spec.q,
                    r: spec.r,
                    p_max: spec.p_max,
                    gamma: rom_cfg.gamma,
                    config_hash: hash.clone(),
                };
                std::fs::write(out.join(format!("{stem}.json")), serde_json::to_string_pretty(&side)?)?;
            }
            let wall = start.elapsed().as_secs_f64();
            format!("export-gains: {} layers, gamma {}, {wall:.2} s", schedules.len(), rom_cfg.gamma)
        }
    };
    Ok(summary)
}

/// Entry point of the `slm` binary; returns the process exit code.
pub fn cli_run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
