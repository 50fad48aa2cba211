//! Multi-path studies: scattering detection, the noise-regularization sweep,
//! the mass martingale, Itô ledgers and refinement studies.
//!
//! Paths run in parallel on the current rayon pool; results are collected in
//! path order, so every number is independent of the worker count.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve_x, Nonlinearity, StepPlan, Trajectory};
use crate::field::{Field, Grid};
use crate::functionals::{self, ito_replay, Functional, ItoLedger, Quadrature};
use crate::noise::{mix_seed, NoiseModel, SpatialProfile, TemporalProfile, TimeMesh};
use crate::transforms::{scattering_pullback, ExponentTable};
use crate::{Error, Result};

/// Everything needed to run one path of the stochastic equation.
#[derive(Clone, Debug)]
pub struct Setup {
    pub grid: Grid,
    pub x0: Field,
    pub nl: Nonlinearity,
    pub plan: StepPlan,
    pub t_end: f64,
    /// `T_h`: end of the Brownian mesh and reference time of `φ*`.
    pub horizon: f64,
    /// Cells of the Brownian mesh on `[0, T_h]`.
    pub mesh_cells: usize,
    pub channels: Vec<(SpatialProfile, TemporalProfile)>,
    pub master_seed: u64,
}

impl Setup {
    pub fn path_seed(&self, path: usize) -> u64 {
        mix_seed(self.master_seed, path as u64)
    }

    pub fn model(&self, path: usize) -> Result<NoiseModel> {
        let mesh = TimeMesh::uniform(self.horizon, self.mesh_cells)?;
        if self.channels.is_empty() {
            return NoiseModel::new(Vec::new(), &mesh);
        }
        NoiseModel::sampled(self.channels.clone(), &mesh, self.path_seed(path))
    }

    pub fn run_path(&self, path: usize) -> Result<Trajectory> {
        evolve_x(&self.x0, &self.model(path)?, self.nl, &self.plan, self.t_end)
    }

    /// Same datum and grid with `λ = 0` and no noise.
    pub fn linear_control(&self) -> Setup {
        Setup {
            nl: Nonlinearity::new(self.nl.alpha, 0.0),
            channels: Vec::new(),
            ..self.clone()
        }
    }

    pub fn exponents(&self) -> Result<ExponentTable> {
        ExponentTable::new(self.grid.dim(), self.nl.alpha, self.nl.lambda)
    }
}

fn par_paths<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorNorm {
    H1,
    Sigma,
}

/// Gauge removed before the free flow is undone: `φ*` or `φ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PullbackGauge {
    Star,
    Plain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorOptions {
    #[serde(default = "default_norm")]
    pub norm: DetectorNorm,
    #[serde(default = "default_windows")]
    pub windows: usize,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default = "default_gauge")]
    pub gauge: PullbackGauge,
}

fn default_norm() -> DetectorNorm {
    DetectorNorm::H1
}
fn default_windows() -> usize {
    4
}
fn default_ratio() -> f64 {
    0.5
}
fn default_gauge() -> PullbackGauge {
    PullbackGauge::Star
}

impl Default for DetectorOptions {
    fn default() -> Self {
        Self {
            norm: default_norm(),
            windows: default_windows(),
            ratio: default_ratio(),
            gauge: default_gauge(),
        }
    }
}

impl DetectorOptions {
    pub fn validate(&self) -> Result<()> {
        if self.windows < 2 {
            return Err(Error::Config(format!("detector needs at least 2 windows, got {}", self.windows)));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!("detector ratio {} must lie in (0, 1]", self.ratio)));
        }
        Ok(())
    }

    /// `t_m = T₀ 2^{m/2}`, `m = 0..=windows`, ending at `t_end`.
    pub fn window_times(&self, t_end: f64) -> Vec<f64> {
        let t0 = t_end * 2f64.powf(-(self.windows as f64) / 2.0);
        (0..=self.windows).map(|m| t0 * 2f64.powf(m as f64 / 2.0)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScatterVerdict {
    /// Snapshot times actually used.
    pub times: Vec<f64>,
    /// `δ_m = |w(t_{m+1}) - w(t_m)|`.
    pub deltas: Vec<f64>,
    pub flag: bool,
    /// Time of a blow-up abort, if any.
    pub blow_up: Option<f64>,
}

impl ScatterVerdict {
    pub fn blown_up(t: f64) -> Self {
        Self {
            times: Vec::new(),
            deltas: Vec::new(),
            flag: false,
            blow_up: Some(t),
        }
    }
}

/// Cauchy test on the pullbacks `w(t_m)` at dyadic window times. The flag is
/// set when the last difference is below `ratio` times the first, or when every
/// difference is at the round-off floor `1e-12 max_m |w(t_m)|`.
pub fn detect_scattering(traj: &Trajectory, opts: &DetectorOptions) -> Result<ScatterVerdict> {
    opts.validate()?;
    let targets = opts.window_times(traj.final_time());
    let mut times = Vec::new();
    let mut pulls = Vec::new();
    for t in targets {
        let (i, actual) = traj.snapshot_near(t);
        if (actual - t).abs() > 0.5 * traj.dt + 1e-12 {
            return Err(Error::InvalidArgument(format!("no snapshot near window time {t}")));
        }
        let x = &traj.series.fields()[i];
        pulls.push(scattering_pullback(x, actual, &traj.model, opts.gauge == PullbackGauge::Star)?);
        times.push(actual);
    }
    let norm = |f: &Field| match opts.norm {
        DetectorNorm::H1 => f.norm_h1(),
        DetectorNorm::Sigma => f.norm_sigma(),
    };
    let mut deltas = Vec::new();
    for w in pulls.windows(2) {
        deltas.push(norm(&w[1].sub(&w[0])?));
    }
    let scale = pulls.iter().map(norm).fold(0.0, f64::max);
    let floor = 1e-12 * scale;
    let flag = deltas.iter().all(|d| *d <= floor) || deltas[deltas.len() - 1] < opts.ratio * deltas[0];
    Ok(ScatterVerdict {
        times,
        deltas,
        flag,
        blow_up: None,
    })
}

fn verdict_for(setup: &Setup, model: &NoiseModel, opts: &DetectorOptions) -> Result<ScatterVerdict> {
    let plan = setup.plan.clone().with_marks(&opts.window_times(setup.t_end));
    match evolve_x(&setup.x0, model, setup.nl, &plan, setup.t_end) {
        Ok(traj) => detect_scattering(&traj, opts),
        Err(Error::BlowUp { t, .. }) => Ok(ScatterVerdict::blown_up(t)),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScatterStudy {
    pub verdicts: Vec<ScatterVerdict>,
    pub fraction: f64,
    pub blow_ups: usize,
}

/// Runs the detector on paths `0..paths`.
pub fn scatter_study(setup: &Setup, opts: &DetectorOptions, paths: usize) -> Result<ScatterStudy> {
    opts.validate()?;
    let verdicts = par_paths(paths, |p| verdict_for(setup, &setup.model(p)?, opts))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let flagged = verdicts.iter().filter(|v| v.flag).count();
    Ok(ScatterStudy {
        fraction: flagged as f64 / paths.max(1) as f64,
        blow_ups: verdicts.iter().filter(|v| v.blow_up.is_some()).count(),
        verdicts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOptions {
    /// `Re v₁` grid; the first entry is the calibration baseline.
    pub v1_re: Vec<f64>,
    #[serde(default)]
    pub v1_im: f64,
    /// Index of the channel whose amplitude is varied.
    #[serde(default)]
    pub channel: usize,
    pub paths: usize,
    /// Hölder exponent; defaults to the value in the exponent table.
    #[serde(default)]
    pub theta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub v1_re: f64,
    pub paths: usize,
    pub scattered: usize,
    pub fraction: f64,
    pub proxy_scattered: usize,
    pub proxy_fraction: f64,
    /// Mean of `ε̂ = ∫₀^T e^{(α-1)θ Re φ}`.
    pub mean_epsilon: f64,
    /// Mean of the lensed `ε̃̂`.
    pub mean_epsilon_lensed: f64,
    pub blow_ups: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub master_seed: u64,
    pub config_hash: String,
    pub theta: f64,
    /// `|X₀|_Σ`.
    pub sigma_norm: f64,
    /// Calibrated constant of the stopping criterion `2^α C^α |X₀|_Σ^{α-1} ε̂^{1/θ} > 1`.
    pub calibrated_c: f64,
    /// `ε̂` threshold equivalent to `calibrated_c`.
    pub epsilon_threshold: f64,
    /// Per `(v₁, path)` verdicts, row-major in `v1_re`.
    pub verdicts: Vec<Vec<ScatterVerdict>>,
    pub epsilons: Vec<Vec<f64>>,
}

struct SweepCell {
    verdict: ScatterVerdict,
    eps: f64,
    eps_lensed: f64,
}

/// Varies `Re v₁` on one channel over a frozen set of Brownian paths, recording
/// detector verdicts and the `ε̂` stopping-criterion proxy. Constant spatial
/// profiles and temporal profiles bounded below are required.
pub fn regularization_sweep(
    setup: &Setup,
    sweep: &SweepOptions,
    detector: &DetectorOptions,
    config_hash: &str,
) -> Result<SweepResult> {
    detector.validate()?;
    if sweep.v1_re.is_empty() || sweep.paths == 0 {
        return Err(Error::Config("sweep needs a nonempty v1 grid and at least one path".into()));
    }
    if sweep.channel >= setup.channels.len() {
        return Err(Error::Config(format!(
            "sweep channel {} but only {} channels configured",
            sweep.channel,
            setup.channels.len()
        )));
    }
    for (k, (sp, tp)) in setup.channels.iter().enumerate() {
        if !sp.is_constant() || !tp.bounded_below() {
            return Err(Error::Config(format!(
                "channel {k}: the sweep requires constant spatial profiles and temporal profiles bounded below"
            )));
        }
    }
    let table = setup.exponents()?;
    let theta = match sweep.theta.or(table.theta) {
        Some(t) if t > 1.0 => t,
        _ => return Err(Error::Config("sweep needs a finite theta > 1".into())),
    };
    let alpha = setup.nl.alpha;
    let d = setup.grid.dim();
    let nv = sweep.v1_re.len();
    let cells = par_paths(nv * sweep.paths, |idx| -> Result<SweepCell> {
        let (vi, p) = (idx / sweep.paths, idx % sweep.paths);
        let v1 = Complex64::new(sweep.v1_re[vi], sweep.v1_im);
        let model = setup.model(p)?.with_amplitude(sweep.channel, v1)?;
        Ok(SweepCell {
            eps: model.epsilon_theta(alpha, theta, setup.t_end, None)?,
            eps_lensed: model.epsilon_theta(alpha, theta, setup.t_end, Some(d))?,
            verdict: verdict_for(setup, &model, detector)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let sigma_norm = setup.x0.norm_sigma();
    let baseline = &cells[..sweep.paths];
    let base_eps = baseline.iter().map(|c| c.eps).sum::<f64>() / sweep.paths as f64;
    let base_fraction = baseline.iter().filter(|c| c.verdict.flag).count() as f64 / sweep.paths as f64;
    // C at which the baseline mean sits exactly on the criterion; halved when the
    // detector says the baseline mostly scatters
    let c_star = (2f64.powf(alpha) * sigma_norm.powf(alpha - 1.0) * base_eps.powf(1.0 / theta)).powf(-1.0 / alpha);
    let (calibrated_c, epsilon_threshold) = if base_fraction <= 0.5 {
        (c_star, base_eps)
    } else {
        (0.5 * c_star, base_eps * 2f64.powf(alpha * theta))
    };

    let mut rows = Vec::new();
    let mut verdicts = Vec::new();
    let mut epsilons = Vec::new();
    for (vi, chunk) in cells.chunks(sweep.paths).enumerate() {
        let n = sweep.paths as f64;
        let scattered = chunk.iter().filter(|c| c.verdict.flag).count();
        let proxy = chunk.iter().filter(|c| c.verdict.blow_up.is_none() && c.eps < epsilon_threshold).count();
        rows.push(SweepRow {
            v1_re: sweep.v1_re[vi],
            paths: sweep.paths,
            scattered,
            fraction: scattered as f64 / n,
            proxy_scattered: proxy,
            proxy_fraction: proxy as f64 / n,
            mean_epsilon: chunk.iter().map(|c| c.eps).sum::<f64>() / n,
            mean_epsilon_lensed: chunk.iter().map(|c| c.eps_lensed).sum::<f64>() / n,
            blow_ups: chunk.iter().filter(|c| c.verdict.blow_up.is_some()).count(),
        });
        verdicts.push(chunk.iter().map(|c| c.verdict.clone()).collect());
        epsilons.push(chunk.iter().map(|c| c.eps).collect());
    }
    Ok(SweepResult {
        rows,
        master_seed: setup.master_seed,
        config_hash: config_hash.to_string(),
        theta,
        sigma_norm,
        calibrated_c,
        epsilon_threshold,
        verdicts,
        epsilons,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub paths: usize,
    pub mass0: f64,
    pub mean: f64,
    /// Standard error of the sample mean of `|X(T)|₂²`.
    pub std_error: f64,
    pub masses: Vec<f64>,
}

impl MartingaleReport {
    /// `|mean - mass0| ≤ k · SE`.
    pub fn within(&self, k: f64) -> bool {
        (self.mean - self.mass0).abs() <= k * self.std_error
    }
}

/// Sample mean and standard error of `|X(T)|₂²` over paths `0..paths`.
pub fn mass_martingale(setup: &Setup, paths: usize) -> Result<MartingaleReport> {
    if paths < 2 {
        return Err(Error::Config("the martingale test needs at least 2 paths".into()));
    }
    let mut quiet = setup.clone();
    quiet.plan.snapshot_stride = usize::MAX;
    let masses = par_paths(paths, |p| quiet.run_path(p).map(|t| functionals::mass(t.final_field())))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n = paths as f64;
    let mean = masses.iter().sum::<f64>() / n;
    let var = masses.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MartingaleReport {
        paths,
        mass0: functionals::mass(&setup.x0),
        mean,
        std_error: (var / n).sqrt(),
        masses,
    })
}

/// Functionals whose identities apply to the setup (`pc_energy` needs `λ = -1`).
pub fn applicable_functionals(setup: &Setup) -> Vec<Functional> {
    Functional::ALL
        .into_iter()
        .filter(|f| *f != Functional::PcEnergy || setup.nl.lambda == -1.0)
        .collect()
}

#[derive(Clone, Debug)]
pub struct ItoSuite {
    pub trajectory: Trajectory,
    pub ledgers: Vec<ItoLedger>,
}

/// All applicable ledgers along one path at the configured step.
pub fn ito_suite(setup: &Setup, path: usize, quad: Quadrature) -> Result<ItoSuite> {
    let trajectory = setup.run_path(path)?;
    let ledgers = applicable_functionals(setup)
        .into_iter()
        .map(|f| ito_replay(&trajectory, f, quad))
        .collect::<Result<Vec<_>>>()?;
    Ok(ItoSuite { trajectory, ledgers })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub functional: Functional,
    /// `|residual(T)|` per level.
    pub residuals: Vec<f64>,
    /// Least-squares slope of `log₂|residual|` against `log₂ dt`.
    pub slope: f64,
    /// Every residual is at the round-off floor; the slope is meaningless.
    pub saturated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub dts: Vec<f64>,
    pub quadrature: Quadrature,
    pub rows: Vec<ConvergenceRow>,
    /// `|X_ℓ(T) - X_{ℓ+1}(T)|₂` for consecutive levels.
    pub self_differences: Vec<f64>,
    pub self_slope: Option<f64>,
}

impl ConvergenceReport {
    pub fn row(&self, f: Functional) -> Option<&ConvergenceRow> {
        self.rows.iter().find(|r| r.functional == f)
    }
}

/// Least-squares slope of `log₂ y` against `log₂ x`.
pub fn fitted_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.log2()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.max(f64::MIN_POSITIVE).log2()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Ledger residuals on one bridge-refined path at `dt, dt/2, …, dt/2^{levels-1}`.
pub fn convergence_study(
    setup: &Setup,
    path: usize,
    which: &[Functional],
    levels: usize,
    quad: Quadrature,
) -> Result<ConvergenceReport> {
    if levels < 2 {
        return Err(Error::Config("a convergence study needs at least 2 levels".into()));
    }
    let model = setup.model(path)?;
    let dts: Vec<f64> = (0..levels).map(|l| setup.plan.dt / 2f64.powi(l as i32)).collect();
    let runs = par_paths(levels, |l| -> Result<(Vec<(f64, f64)>, Field)> {
        let mut plan = setup.plan.clone();
        plan.dt = dts[l];
        plan.snapshot_stride = 1;
        plan.marks.clear();
        let traj = evolve_x(&setup.x0, &model, setup.nl, &plan, setup.t_end)?;
        let res = which
            .iter()
            .map(|f| {
                let l = ito_replay(&traj, *f, quad)?;
                let scale = l.value.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                Ok((l.final_residual().abs(), scale))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((res, traj.final_field().clone()))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let rows = which
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let residuals: Vec<f64> = runs.iter().map(|r| r.0[i].0).collect();
            let scale = runs.iter().map(|r| r.0[i].1).fold(0.0, f64::max);
            ConvergenceRow {
                functional: *f,
                slope: fitted_slope(&dts, &residuals),
                saturated: residuals.iter().all(|r| *r <= 1e-12 * scale.max(1e-300)),
                residuals,
            }
        })
        .collect();
    let self_differences = runs
        .windows(2)
        .map(|w| w[0].1.sub(&w[1].1).map(|d| d.norm_l2()))
        .collect::<Result<Vec<_>>>()?;
    let self_slope = (self_differences.len() >= 2).then(|| fitted_slope(&dts[..self_differences.len()], &self_differences));
    Ok(ConvergenceReport {
        dts,
        quadrature: quad,
        rows,
        self_differences,
        self_slope,
    })
}
