//! Run configuration, study orchestration and result files for the `snls` binary.
//!
//! Every CSV starts with a `#` line carrying the code version, the config hash
//! and the master seed; `summary.json` carries the same three fields.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{Nonlinearity, Scheme, StepPlan};
use crate::experiments::{
    self, applicable_functionals, DetectorOptions, ScatterVerdict, Setup, SweepOptions,
};
use crate::field::io::{fmt_f64, load_field};
use crate::field::{strichartz_admissible, Exponent, Field, Grid};
use crate::functionals::{self, Functional, Quadrature};
use crate::noise::{SpatialProfile, TemporalProfile};
use crate::transforms::{identity_battery, Criticality, ExponentTable};
use crate::{Error, Result, VERSION};

/// Environment variable giving the default worker count.
pub const THREADS_ENV: &str = "SNLS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "snls", version, about = "Stochastic NLS simulator and verification harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One path: snapshots, noise increments and Itô ledgers.
    Simulate(RunArgs),
    /// Itô ledgers of every applicable functional along one path.
    ItoCheck(RunArgs),
    /// Ledger residuals at dt, dt/2, ... on one bridge-refined path.
    Converge(RunArgs),
    /// Scattering detector over M paths.
    Scatter(RunArgs),
    /// Noise-regularization sweep over Re v1.
    Sweep(RunArgs),
    /// Lens and operator identities on the initial datum.
    Transforms(RunArgs),
    /// Derived exponents for (d, alpha).
    Exponents(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; never changes any number, only wall time.
    #[arg(long, env = THREADS_ENV)]
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    Simulate,
    ItoCheck,
    Converge,
    Scatter,
    Sweep,
    Transforms,
    Exponents,
}

impl std::fmt::Display for Study {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let v = self.to_possible_value().expect("no skipped variants");
        f.write_str(v.get_name())
    }
}

impl std::str::FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        <Study as ValueEnum>::from_str(s, true).map_err(|_| Error::Config(format!("unknown study {s}")))
    }
}

impl Command {
    pub fn split(&self) -> (Study, &RunArgs) {
        match self {
            Command::Simulate(a) => (Study::Simulate, a),
            Command::ItoCheck(a) => (Study::ItoCheck, a),
            Command::Converge(a) => (Study::Converge, a),
            Command::Scatter(a) => (Study::Scatter, a),
            Command::Sweep(a) => (Study::Sweep, a),
            Command::Transforms(a) => (Study::Transforms, a),
            Command::Exponents(a) => (Study::Exponents, a),
        }
    }
}

pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const BLOW_UP: i32 = 3;
    pub const INTERNAL: i32 = 4;
}

/// Exit code for an error escaping a study.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::InvalidGrid(_)
        | Error::InvalidExponent(_)
        | Error::BeyondHorizon { .. } => exit::CONFIG,
        Error::BlowUp { .. } => exit::BLOW_UP,
        _ => exit::INTERNAL,
    }
}

// ---------------------------------------------------------------- config

/// Top-level run configuration (TOML). Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    /// Output directory; relative paths resolve against the working directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub problem: ProblemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeConfig>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub d: usize,
    pub alpha: f64,
    /// `-1` defocusing, `1` focusing, `0` linear.
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub datum: Option<Datum>,
}

/// Initial datum `X₀`. Positions are measured from the box center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Datum {
    /// `A e^{-|x|²/(2w²)} e^{i k x₁}`.
    Gaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        momentum: f64,
    },
    /// `A sech(|x|) e^{i k x₁}`.
    Sech {
        amplitude: f64,
        #[serde(default)]
        momentum: f64,
    },
    /// `A e^{2πi m·x/L}`.
    PlaneWave { amplitude: f64, mode: Vec<i64> },
    /// Binary field file; relative to the config file.
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Points per axis, a power of two.
    pub n: usize,
    /// Box side (dimensionless).
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    pub dt: f64,
    /// Steps between stored snapshots.
    #[serde(default = "one")]
    pub stride: usize,
    /// `T_h`, end of the Brownian mesh; defaults to `t_end`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "strang")]
    pub scheme: Scheme,
    /// Abort when `sup|X|` exceeds this.
    #[serde(default = "cap")]
    pub blowup_cap: f64,
}

fn one() -> usize {
    1
}
fn strang() -> Scheme {
    Scheme::Strang
}
fn cap() -> f64 {
    1e6
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Brownian mesh cells on `[0, T_h]`; defaults to one per step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_cells: Option<usize>,
    /// Require `Re φ_k ≡ 0` on every channel.
    #[serde(default)]
    pub conservative: bool,
    #[serde(default)]
    pub channels: Vec<ChannelConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub spatial: SpatialProfile,
    pub temporal: TemporalProfile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Path index for single-path studies.
    #[serde(default)]
    pub path: usize,
    /// `M` for multi-path studies.
    #[serde(default = "one")]
    pub paths: usize,
    /// Refinement levels for `converge`.
    #[serde(default = "three")]
    pub levels: usize,
    #[serde(default = "milstein")]
    pub quadrature: Quadrature,
    /// Defaults to every applicable functional.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functionals: Option<Vec<Functional>>,
    #[serde(default)]
    pub detector: DetectorOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepOptions>,
}

fn three() -> usize {
    3
}
fn milstein() -> Quadrature {
    Quadrature::Milstein
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            path: 0,
            paths: 1,
            levels: 3,
            quadrature: Quadrature::Milstein,
            functionals: None,
            detector: DetectorOptions::default(),
            sweep: None,
        }
    }
}

/// A parsed config together with the directory it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sha-256 of the canonical TOML rendering, without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let text = toml::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn exponents(&self) -> Result<ExponentTable> {
        let p = &self.problem;
        ExponentTable::new(p.d, p.alpha, p.lambda).map_err(|e| Error::Config(format!("problem: {e}")))
    }

    fn grid(&self) -> Result<Grid> {
        let g = self.grid.as_ref().ok_or_else(|| Error::Config("missing [grid] block".into()))?;
        Grid::new(self.problem.d, g.n, g.length).map_err(|e| Error::Config(format!("grid: {e}")))
    }

    fn time(&self) -> Result<&TimeConfig> {
        self.time.as_ref().ok_or_else(|| Error::Config("missing [time] block".into()))
    }

    /// Checks that apply to the selected study.
    pub fn validate(&self, study: Study) -> Result<()> {
        let table = self.exponents()?;
        let p = &self.problem;
        if ![-1.0, 0.0, 1.0].contains(&p.lambda) {
            return Err(Error::Config(format!("problem.lambda = {} must be -1, 0 or 1", p.lambda)));
        }
        if study == Study::Exponents {
            return Ok(());
        }
        if table.criticality == Criticality::Super {
            return Err(Error::Config(format!(
                "problem.alpha = {} is energy-supercritical for d = {}",
                p.alpha, p.d
            )));
        }
        if p.lambda == 1.0 && table.criticality != Criticality::MassSub {
            log::warn!("focusing and alpha >= 1 + 4/d: solutions may blow up");
        }
        self.grid()?;
        if p.datum.is_none() {
            return Err(Error::Config("missing problem.datum".into()));
        }
        if study == Study::Transforms {
            return Ok(());
        }
        let t = self.time()?;
        if !(t.t_end > 0.0) || !(t.dt > 0.0) || t.dt > t.t_end {
            return Err(Error::Config(format!("time: need 0 < dt <= t_end, got dt = {}, t_end = {}", t.dt, t.t_end)));
        }
        if t.stride == 0 {
            return Err(Error::Config("time.stride must be at least 1".into()));
        }
        if !(t.blowup_cap > 0.0) {
            return Err(Error::Config("time.blowup_cap must be positive".into()));
        }
        let horizon = t.horizon.unwrap_or(t.t_end);
        if horizon < t.t_end {
            return Err(Error::Config(format!("time.horizon {horizon} is before t_end {}", t.t_end)));
        }
        if self.noise.mesh_cells == Some(0) {
            return Err(Error::Config("noise.mesh_cells must be positive".into()));
        }
        for (k, c) in self.noise.channels.iter().enumerate() {
            c.spatial.validate().map_err(|e| Error::Config(format!("noise.channels[{k}]: {e}")))?;
            c.temporal.validate().map_err(|e| Error::Config(format!("noise.channels[{k}]: {e}")))?;
            if self.noise.conservative && !c.spatial.is_conservative() {
                return Err(Error::Config(format!(
                    "noise.channels[{k}]: conservative noise needs a purely imaginary spatial profile"
                )));
            }
        }
        let e = &self.experiment;
        match study {
            Study::Scatter => {
                e.detector.validate()?;
                if e.paths == 0 {
                    return Err(Error::Config("experiment.paths must be positive".into()));
                }
                for (k, c) in self.noise.channels.iter().enumerate() {
                    if !c.temporal.quartic_moment_finite() {
                        return Err(Error::Config(format!(
                            "noise.channels[{k}]: scattering needs ∫(1+s⁴)g² < ∞ (decaying temporal profile)"
                        )));
                    }
                }
            }
            Study::Sweep => {
                e.detector.validate()?;
                let s = e
                    .sweep
                    .as_ref()
                    .ok_or_else(|| Error::Config("sweep study needs an [experiment.sweep] block".into()))?;
                if p.d != 3 {
                    log::warn!("the regularization statement is for d >= 3; running d = {} anyway", p.d);
                }
                if s.paths == 0 || s.v1_re.is_empty() {
                    return Err(Error::Config("experiment.sweep needs paths > 0 and a nonempty v1_re".into()));
                }
                if s.channel >= self.noise.channels.len() {
                    return Err(Error::Config(format!("experiment.sweep.channel {} does not exist", s.channel)));
                }
                for (k, c) in self.noise.channels.iter().enumerate() {
                    if !c.spatial.is_constant() || !c.temporal.bounded_below() {
                        return Err(Error::Config(format!(
                            "noise.channels[{k}]: the sweep needs constant spatial profiles and g bounded below"
                        )));
                    }
                }
                if self.noise.conservative {
                    return Err(Error::Config("the sweep varies Re v1; noise.conservative must be false".into()));
                }
            }
            Study::Converge => {
                if e.levels < 2 {
                    return Err(Error::Config("experiment.levels must be at least 2".into()));
                }
            }
            _ => {}
        }
        if let Some(fs) = &e.functionals {
            if fs.contains(&Functional::PcEnergy) && p.lambda != -1.0 {
                return Err(Error::Config("pc_energy needs lambda = -1".into()));
            }
        }
        Ok(())
    }

    /// `X₀` on the configured grid.
    pub fn initial_datum(&self, base: &Path) -> Result<Field> {
        self.datum(&self.grid()?, base)
    }

    fn datum(&self, grid: &Grid, base: &Path) -> Result<Field> {
        let datum = self.problem.datum.as_ref().ok_or_else(|| Error::Config("missing problem.datum".into()))?;
        let f = match datum {
            Datum::Gaussian {
                amplitude,
                width,
                momentum,
            } => {
                if !(*width > 0.0) {
                    return Err(Error::Config("datum width must be positive".into()));
                }
                Field::from_fn(grid, |x| {
                    let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
                    Complex64::from_polar(amplitude * (-r2 / (2.0 * width * width)).exp(), momentum * x[0])
                })
            }
            Datum::Sech { amplitude, momentum } => Field::from_fn(grid, |x| {
                let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                Complex64::from_polar(amplitude / r.cosh(), momentum * x[0])
            }),
            Datum::PlaneWave { amplitude, mode } => {
                if mode.len() != grid.dim() {
                    return Err(Error::Config(format!("plane_wave mode needs {} entries", grid.dim())));
                }
                let k0 = 2.0 * std::f64::consts::PI / grid.length();
                Field::from_fn(grid, |x| {
                    let phase: f64 = mode.iter().enumerate().map(|(j, m)| k0 * *m as f64 * x[j]).sum();
                    Complex64::from_polar(*amplitude, phase)
                })
            }
            Datum::File { path } => {
                let f = load_field(&base.join(path)).map_err(|e| Error::Config(format!("datum file: {e}")))?;
                if f.grid() != grid {
                    return Err(Error::Config("datum file grid differs from [grid]".into()));
                }
                f
            }
        };
        if !f.is_finite() {
            return Err(Error::Config("datum has non-finite values".into()));
        }
        Ok(f)
    }

    /// Builds the per-path setup used by every study.
    pub fn setup(&self, base: &Path) -> Result<Setup> {
        let grid = self.grid()?;
        let t = self.time()?;
        let horizon = t.horizon.unwrap_or(t.t_end);
        let mesh_cells = match self.noise.mesh_cells {
            Some(c) => c,
            None => (horizon / t.dt).round().max(1.0) as usize,
        };
        let mut plan = StepPlan::strang(t.dt).with_stride(t.stride).with_scheme(t.scheme);
        plan.blowup_cap = t.blowup_cap;
        Ok(Setup {
            x0: self.datum(&grid, base)?,
            grid,
            nl: Nonlinearity::new(self.problem.alpha, self.problem.lambda),
            plan,
            t_end: t.t_end,
            horizon,
            mesh_cells,
            channels: self.noise.channels.iter().map(|c| (c.spatial.clone(), c.temporal.clone())).collect(),
            master_seed: self.master_seed,
        })
    }
}

/// Reads and parses a config file; `--seed` and `--out` are applied on top.
pub fn load_config(args: &RunArgs) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    let mut config = RunConfig::parse(&text)?;
    if let Some(s) = args.seed {
        config.master_seed = s;
    }
    if let Some(o) = &args.out {
        config.output = Some(o.clone());
    }
    let base_dir = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, base_dir })
}

// ---------------------------------------------------------------- output

/// Output directory plus the provenance stamped into every file.
pub struct Sink {
    pub dir: PathBuf,
    pub config_hash: String,
    pub seed: u64,
}

impl Sink {
    fn new(config: &RunConfig) -> Result<Self> {
        let dir = config.output.clone().unwrap_or_else(|| PathBuf::from("snls-out"));
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            config_hash: config.hash(),
            seed: config.master_seed,
        })
    }

    fn stamp(&self) -> String {
        format!("# {VERSION} config_hash={} seed={}\n", self.config_hash, self.seed)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        w.write_all(self.stamp().as_bytes())?;
        Ok(w)
    }

    fn csv(&self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let mut out = csv::Writer::from_writer(self.create(name)?);
        out.write_record(header)?;
        for r in rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }

    fn summary(&self, study: Study, body: serde_json::Value) -> Result<()> {
        let mut doc = serde_json::json!({
            "version": VERSION,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "study": study,
        });
        if let (Some(d), serde_json::Value::Object(b)) = (doc.as_object_mut(), body) {
            d.extend(b);
        }
        std::fs::write(self.dir.join("summary.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(())
    }
}

fn headers(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn verdict_row(prefix: Vec<String>, v: &ScatterVerdict, windows: usize) -> Vec<String> {
    let mut row = prefix;
    row.push(v.flag.to_string());
    row.push(v.blow_up.map(fmt_f64).unwrap_or_default());
    for m in 0..windows {
        row.push(v.deltas.get(m).map(|d| fmt_f64(*d)).unwrap_or_default());
    }
    row
}

fn delta_headers(windows: usize) -> Vec<String> {
    (0..windows).map(|m| format!("delta_{m}")).collect()
}

// ---------------------------------------------------------------- studies

fn functionals_for(config: &RunConfig, setup: &Setup) -> Vec<Functional> {
    config
        .experiment
        .functionals
        .clone()
        .unwrap_or_else(|| applicable_functionals(setup))
}

fn write_ledgers(sink: &Sink, ledgers: &[functionals::ItoLedger]) -> Result<serde_json::Value> {
    let mut out = serde_json::Map::new();
    for l in ledgers {
        let name = l.functional.name();
        let mut w = sink.create(&format!("ledger_{name}.csv"))?;
        l.write_csv(&mut w)?;
        w.flush()?;
        out.insert(
            name.into(),
            serde_json::json!({
                "final_residual": l.final_residual(),
                "max_abs_residual": l.max_abs_residual(),
                "initial_value": l.value[0],
                "final_value": l.value[l.value.len() - 1],
            }),
        );
    }
    Ok(serde_json::Value::Object(out))
}

fn simulate(config: &RunConfig, setup: &Setup, sink: &Sink, with_snapshots: bool) -> Result<()> {
    let path = config.experiment.path;
    let traj = setup.run_path(path)?;
    if with_snapshots {
        traj.export(&sink.dir.join("snapshots"), &sink.config_hash, sink.seed)?;
        let mut w = sink.create("noise_paths.csv")?;
        setup.model(path)?.write_paths_csv(&mut w)?;
        w.flush()?;
    }
    let ledgers = functionals_for(config, setup)
        .into_iter()
        .map(|f| functionals::ito_replay(&traj, f, config.experiment.quadrature))
        .collect::<Result<Vec<_>>>()?;
    let summary = write_ledgers(sink, &ledgers)?;
    let study = if with_snapshots { Study::Simulate } else { Study::ItoCheck };
    sink.summary(
        study,
        serde_json::json!({
            "path": path,
            "path_seed": setup.path_seed(path),
            "steps": traj.steps(),
            "snapshots": traj.series.len(),
            "final_time": traj.final_time(),
            "sup_max": traj.sup_max,
            "max_boundary_mass": traj.boundary_mass.iter().cloned().fold(0.0, f64::max),
            "quadrature": config.experiment.quadrature,
            "ledgers": summary,
        }),
    )
}

fn converge(config: &RunConfig, setup: &Setup, sink: &Sink) -> Result<()> {
    let e = &config.experiment;
    let which = functionals_for(config, setup);
    let report = experiments::convergence_study(setup, e.path, &which, e.levels, e.quadrature)?;
    let mut rows = Vec::new();
    for r in &report.rows {
        for (dt, res) in report.dts.iter().zip(&r.residuals) {
            rows.push(vec![r.functional.name().to_string(), fmt_f64(*dt), fmt_f64(*res)]);
        }
    }
    sink.csv("converge.csv", &headers(&["functional", "dt", "residual"]), &rows)?;
    sink.summary(Study::Converge, serde_json::to_value(&report)?)
}

fn scatter(config: &RunConfig, setup: &Setup, sink: &Sink) -> Result<()> {
    let e = &config.experiment;
    let study = experiments::scatter_study(setup, &e.detector, e.paths)?;
    let w = e.detector.windows;
    let mut header = headers(&["path", "flag", "blow_up"]);
    header.extend(delta_headers(w));
    let rows: Vec<_> = study
        .verdicts
        .iter()
        .enumerate()
        .map(|(p, v)| verdict_row(vec![p.to_string()], v, w))
        .collect();
    sink.csv("verdicts.csv", &header, &rows)?;
    sink.summary(
        Study::Scatter,
        serde_json::json!({
            "paths": e.paths,
            "fraction": study.fraction,
            "blow_ups": study.blow_ups,
            "detector": e.detector,
            "window_times": e.detector.window_times(setup.t_end),
        }),
    )
}

fn sweep(config: &RunConfig, setup: &Setup, sink: &Sink) -> Result<()> {
    let e = &config.experiment;
    let opts = e.sweep.as_ref().ok_or_else(|| Error::Config("missing [experiment.sweep]".into()))?;
    let r = experiments::regularization_sweep(setup, opts, &e.detector, &sink.config_hash)?;
    let header = headers(&[
        "v1_re",
        "paths",
        "scattered",
        "fraction",
        "proxy_scattered",
        "proxy_fraction",
        "mean_epsilon",
        "mean_epsilon_lensed",
        "blow_ups",
    ]);
    let rows: Vec<_> = r
        .rows
        .iter()
        .map(|row| {
            vec![
                fmt_f64(row.v1_re),
                row.paths.to_string(),
                row.scattered.to_string(),
                fmt_f64(row.fraction),
                row.proxy_scattered.to_string(),
                fmt_f64(row.proxy_fraction),
                fmt_f64(row.mean_epsilon),
                fmt_f64(row.mean_epsilon_lensed),
                row.blow_ups.to_string(),
            ]
        })
        .collect();
    sink.csv("sweep.csv", &header, &rows)?;
    let w = e.detector.windows;
    let mut vh = headers(&["v1_re", "path", "epsilon", "flag", "blow_up"]);
    vh.extend(delta_headers(w));
    let mut vrows = Vec::new();
    for (i, (vs, eps)) in r.verdicts.iter().zip(&r.epsilons).enumerate() {
        for (p, (v, ep)) in vs.iter().zip(eps).enumerate() {
            vrows.push(verdict_row(vec![fmt_f64(opts.v1_re[i]), p.to_string(), fmt_f64(*ep)], v, w));
        }
    }
    sink.csv("verdicts.csv", &vh, &vrows)?;
    sink.summary(
        Study::Sweep,
        serde_json::json!({
            "rows": r.rows,
            "theta": r.theta,
            "sigma_norm": r.sigma_norm,
            "calibrated_c": r.calibrated_c,
            "epsilon_threshold": r.epsilon_threshold,
            "detector": e.detector,
        }),
    )
}

fn transforms(config: &RunConfig, base: &Path, sink: &Sink) -> Result<bool> {
    let x0 = config.initial_datum(base)?;
    let checks = identity_battery(&x0, config.problem.alpha)?;
    let rows: Vec<_> = checks
        .iter()
        .map(|c| vec![c.name.clone(), fmt_f64(c.value), fmt_f64(c.tolerance), c.pass.to_string()])
        .collect();
    sink.csv("transforms.csv", &headers(&["check", "value", "tolerance", "pass"]), &rows)?;
    let pass = checks.iter().all(|c| c.pass);
    sink.summary(Study::Transforms, serde_json::json!({ "pass": pass, "checks": checks }))?;
    Ok(pass)
}

fn exponents(config: &RunConfig, sink: &Sink) -> Result<()> {
    let t = config.exponents()?;
    let d = t.d as u32;
    let half = |p: f64| if p.is_finite() { format!("{p}") } else { "inf".into() };
    let mut admissible = Vec::new();
    let pairs = [
        (Exponent::ratio(2 * (d as i64) + 4, d as i64), Exponent::ratio(2 * (d as i64) + 4, d as i64)),
        (Exponent::int(2), Exponent::Infinite),
    ];
    for (p, q) in pairs {
        admissible.push(serde_json::json!({
            "p": half(p.to_f64()),
            "q": half(q.to_f64()),
            "admissible": strichartz_admissible(p, q, d),
        }));
    }
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "inf".into());
    let mut out = std::io::stdout().lock();
    writeln!(out, "d = {}", t.d)?;
    writeln!(out, "alpha = {}", t.alpha)?;
    writeln!(out, "strauss = {}", t.strauss)?;
    writeln!(out, "q_tilde = {}", fmt_opt(t.q_tilde))?;
    writeln!(out, "h_power = {}", t.h_power)?;
    writeln!(out, "theta = {}", fmt_opt(t.theta))?;
    writeln!(out, "p1 = {}", t.p1)?;
    writeln!(out, "q2 = {}", fmt_opt(t.q2))?;
    writeln!(out, "criticality = {}", serde_json::to_value(t.criticality)?.as_str().unwrap_or(""))?;
    sink.summary(Study::Exponents, serde_json::json!({ "exponents": t, "strichartz": admissible }))
}

/// Validates, builds and runs one study; returns the process exit code.
pub fn run(study: Study, loaded: &LoadedConfig) -> i32 {
    match run_inner(study, loaded) {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("snls {study}: {e}");
            code
        }
    }
}

fn run_inner(study: Study, loaded: &LoadedConfig) -> Result<i32> {
    let config = &loaded.config;
    config.validate(study)?;
    let sink = Sink::new(config)?;
    log::info!("{study}: config {} seed {} -> {}", sink.config_hash, sink.seed, sink.dir.display());
    match study {
        Study::Exponents => {
            exponents(config, &sink)?;
            return Ok(exit::OK);
        }
        Study::Transforms => {
            if transforms(config, &loaded.base_dir, &sink)? {
                return Ok(exit::OK);
            }
            eprintln!("snls transforms: identity battery failed, see transforms.csv");
            return Ok(exit::INTERNAL);
        }
        _ => {}
    }
    let setup = config.setup(&loaded.base_dir)?;
    match study {
        Study::Simulate => simulate(config, &setup, &sink, true)?,
        Study::ItoCheck => simulate(config, &setup, &sink, false)?,
        Study::Converge => converge(config, &setup, &sink)?,
        Study::Scatter => scatter(config, &setup, &sink)?,
        Study::Sweep => sweep(config, &setup, &sink)?,
        Study::Transforms | Study::Exponents => unreachable!(),
    }
    Ok(exit::OK)
}

/// Entry point of the binary: parses arguments, sizes the worker pool and runs.
pub fn main_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    let (study, args) = cli.command.split();
    let loaded = match load_config(args) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("snls {study}: {e}");
            return exit_code(&e);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        if n == 0 {
            eprintln!("snls: --threads must be positive");
            return exit::CONFIG;
        }
        pool = pool.num_threads(n);
    }
    match pool.build() {
        Ok(pool) => pool.install(|| run(study, &loaded)),
        Err(e) => {
            eprintln!("snls: cannot start worker pool: {e}");
            exit::INTERNAL
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
master_seed = 7
[problem]
d = 1
alpha = 3.0
lambda = -1.0
datum = { kind = "gaussian", amplitude = 1.0, width = 1.0 }
[grid]
n = 64
length = 20.0
[time]
t_end = 0.1
dt = 0.01
"#;

    #[test]
    fn parses_and_hashes() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.experiment.detector.windows, 4);
        assert!(c.validate(Study::Simulate).is_ok());
        let mut d = c.clone();
        d.output = Some("elsewhere".into());
        assert_eq!(c.hash(), d.hash());
        d.master_seed = 8;
        assert_ne!(c.hash(), d.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn unknown_keys_and_bad_values() {
        let typo = MINIMAL.replace("stride", "strid").replace("dt = 0.01", "dt = 0.01\nstrid = 2");
        assert!(matches!(RunConfig::parse(&typo), Err(Error::Config(_))));
        let bad = RunConfig::parse(&MINIMAL.replace("alpha = 3.0", "alpha = 1.0")).unwrap();
        let e = bad.validate(Study::Simulate).unwrap_err();
        assert_eq!(exit_code(&e), exit::CONFIG);
        assert!(e.to_string().contains("alpha"));
        let sweep = RunConfig::parse(MINIMAL).unwrap();
        assert!(sweep.validate(Study::Sweep).is_err());
    }

    #[test]
    fn sweep_requires_h2() {
        let text = format!(
            "{MINIMAL}\n[[noise.channels]]\nspatial = {{ kind = \"gaussian_decay\", re = 1.0, im = 0.0, width = 2.0 }}\ntemporal = {{ kind = \"constant\", c0 = 1.0 }}\n[experiment.sweep]\nv1_re = [0.0, 1.0]\npaths = 2\n"
        );
        let c = RunConfig::parse(&text).unwrap();
        let e = c.validate(Study::Sweep).unwrap_err().to_string();
        assert!(e.contains("constant spatial"), "{e}");
    }
}
