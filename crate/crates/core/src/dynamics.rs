//! Pathwise split-step integrators for `X`, the deterministic NLS, the lensed
//! damped equation and the homogeneous evolution `V(t,s)`.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::field::fft::FftNd;
use crate::field::{io, Field, Grid, SpaceTimeSeries};
use crate::noise::{NoiseModel, TemporalProfile};
use crate::transforms::ExponentTable;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Lie,
    Strang,
}

/// Time step and composition. Substeps run in the order noise, linear, nonlinear
/// (Lie) or noise, linear/2, nonlinear, linear/2 (Strang).
#[derive(Clone, Debug, PartialEq)]
pub struct StepPlan {
    pub dt: f64,
    pub scheme: Scheme,
    pub snapshot_stride: usize,
    pub blowup_cap: f64,
    /// Extra snapshot times; each is rounded to the nearest step.
    pub marks: Vec<f64>,
}

impl StepPlan {
    pub fn strang(dt: f64) -> Self {
        Self {
            dt,
            scheme: Scheme::Strang,
            snapshot_stride: 1,
            blowup_cap: 1e6,
            marks: Vec::new(),
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.snapshot_stride = stride.max(1);
        self
    }

    pub fn with_marks(mut self, marks: &[f64]) -> Self {
        self.marks = marks.to_vec();
        self
    }

    /// Step counts (from `t0`) after which a snapshot is stored.
    fn snapshot_steps(&self, t0: f64, steps: usize) -> Vec<bool> {
        let mut due: Vec<bool> = (0..=steps)
            .map(|n| n > 0 && (n % self.snapshot_stride == 0 || n == steps))
            .collect();
        for m in &self.marks {
            let n = ((m - t0) / self.dt).round();
            if n >= 1.0 && n <= steps as f64 {
                due[n as usize] = true;
            }
        }
        due
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt = {} must be positive", self.dt)));
        }
        Ok(())
    }

    fn steps_between(&self, t0: f64, t1: f64) -> Result<usize> {
        let r = (t1 - t0) / self.dt;
        let n = r.round();
        if n < 0.0 || (r - n).abs() > 1e-9 * r.abs().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "[{t0}, {t1}] is not a whole number of steps of {}",
                self.dt
            )));
        }
        Ok(n as usize)
    }
}

/// `F(u) = |u|^{α-1} u` with coupling `λ` (`λ = 0` gives the linear flow).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    pub alpha: f64,
    pub lambda: f64,
}

impl Nonlinearity {
    pub fn new(alpha: f64, lambda: f64) -> Self {
        Self { alpha, lambda }
    }

    pub fn linear() -> Self {
        Self {
            alpha: 3.0,
            lambda: 0.0,
        }
    }
}

/// A run: snapshots plus every noise increment the integrator consumed.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub series: SpaceTimeSeries,
    /// `increments[n][k]`: `Δβ_k` used on step `n`.
    pub increments: Vec<Vec<f64>>,
    pub t0: f64,
    pub dt: f64,
    pub snapshot_stride: usize,
    pub exponents: ExponentTable,
    /// Noise model at integrator resolution (one mesh cell per step).
    pub model: NoiseModel,
    /// `max_n |X_n|_∞`.
    pub sup_max: f64,
    /// Fraction of `|X|₂²` outside `|x| < L/4`, per snapshot.
    pub boundary_mass: Vec<f64>,
}

impl Trajectory {
    pub fn final_field(&self) -> &Field {
        self.series.fields().last().unwrap()
    }

    pub fn final_time(&self) -> f64 {
        *self.series.times().last().unwrap()
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    /// Snapshot nearest to `t` (index, time).
    pub fn snapshot_near(&self, t: f64) -> (usize, f64) {
        let times = self.series.times();
        let i = times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().partial_cmp(&(b.1 - t).abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        (i, times[i])
    }

    /// One binary file per snapshot plus `manifest.json`.
    pub fn export(&self, dir: &Path, config_hash: &str, seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (i, f) in self.series.fields().iter().enumerate() {
            let name = format!("snapshot_{i:05}.bin");
            io::save_field(f, &dir.join(&name))?;
            files.push(name);
        }
        let manifest = serde_json::json!({
            "version": crate::VERSION,
            "config_hash": config_hash,
            "seed": seed,
            "times": self.series.times().iter().map(|t| io::fmt_f64(*t)).collect::<Vec<_>>(),
            "files": files,
            "dt": io::fmt_f64(self.dt),
            "steps": self.steps(),
            "channels": self.model.len(),
            "path_seeds": self.model.channels().iter().map(|c| c.path.seed()).collect::<Vec<_>>(),
        });
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

/// `e^{itΔ}`: Fourier multiplier `e^{-i|k|²t}`.
pub fn free_propagate(f: &Field, t: f64) -> Field {
    if t == 0.0 {
        return f.clone();
    }
    f.fourier_multiply(|k| Complex64::from_polar(1.0, -(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) * t))
}

/// Exact flow of `∂_t f = -iλ|f|^{α-1} f` over `dt`.
pub fn step_nonlinear(f: &Field, dt: f64, alpha: f64, lambda: f64) -> Field {
    f.map(|v| v * Complex64::from_polar(1.0, -lambda * v.norm().powf(alpha - 1.0) * dt))
}

/// Exact flow of `dX = Σ_k X G_k dβ_k - μX dt` over one cell starting at `t`:
/// multiplication by `exp(Σ_k G_k Δβ_k - ½ Σ_k (G_k² + |G_k|²) dt)`.
pub fn step_noise(f: &Field, model: &NoiseModel, t: f64, increments: &[f64], dt: f64) -> Result<Field> {
    if increments.len() != model.len() {
        return Err(Error::InvalidArgument(format!(
            "{} increments for {} channels",
            increments.len(),
            model.len()
        )));
    }
    let mut p = Propagator::new(f.grid(), model);
    let mut data = f.values().to_vec();
    p.noise(&mut data, t, increments, dt, false);
    Ok(Field::from_raw(f.grid(), data))
}

/// Per-worker kernel state: FFT, multipliers and sampled channel profiles.
pub(crate) struct Propagator {
    grid: Grid,
    fft: FftNd,
    k2: Vec<f64>,
    lin_cache: Vec<(f64, Vec<Complex64>)>,
    phis: Vec<Vec<Complex64>>,
    prods: Vec<Vec<Complex64>>,
    temporals: Vec<TemporalProfile>,
    exponent: Vec<Complex64>,
}

impl Propagator {
    pub(crate) fn new(grid: &Grid, model: &NoiseModel) -> Self {
        let pos = grid.positions();
        let phis = model
            .channels()
            .iter()
            .map(|c| pos.iter().map(|x| c.spatial.value(x)).collect())
            .collect();
        let prods = model
            .channels()
            .iter()
            .map(|c| pos.iter().map(|x| c.spatial.product_derivative(x, &[])).collect())
            .collect();
        Self {
            grid: grid.clone(),
            fft: FftNd::new(grid),
            k2: grid.wavenumber_sq(),
            lin_cache: Vec::new(),
            phis,
            prods,
            temporals: model.channels().iter().map(|c| c.temporal.clone()).collect(),
            exponent: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    /// Flow of `∂_t f = -iΔf` for time `tau`: multiplier `e^{+i|k|²tau}`.
    pub(crate) fn linear(&mut self, data: &mut [Complex64], tau: f64) {
        let idx = match self.lin_cache.iter().position(|(t, _)| *t == tau) {
            Some(i) => i,
            None => {
                let m = self.k2.iter().map(|k2| Complex64::from_polar(1.0, k2 * tau)).collect();
                self.lin_cache.push((tau, m));
                self.lin_cache.len() - 1
            }
        };
        let mult = &self.lin_cache[idx].1;
        self.fft.apply_multiplier(data, mult);
    }

    fn nonlinear(data: &mut [Complex64], alpha: f64, coupling: f64, dt: f64) {
        if coupling == 0.0 {
            return;
        }
        let p = alpha - 1.0;
        for v in data.iter_mut() {
            let m = if p == 2.0 { v.norm_sqr() } else { v.norm().powf(p) };
            *v *= Complex64::from_polar(1.0, -coupling * m * dt);
        }
    }

    pub(crate) fn noise(&mut self, data: &mut [Complex64], t: f64, dbeta: &[f64], dt: f64, inverse: bool) {
        if self.phis.is_empty() {
            return;
        }
        let mut active = false;
        self.exponent.iter_mut().for_each(|e| *e = Complex64::new(0.0, 0.0));
        for k in 0..self.phis.len() {
            let g = self.temporals[k].value(t);
            if g == 0.0 {
                continue;
            }
            active = true;
            let a = g * dbeta[k];
            let b = g * g * dt;
            for ((e, p), q) in self.exponent.iter_mut().zip(&self.phis[k]).zip(&self.prods[k]) {
                *e += p * a - q * b;
            }
        }
        if !active {
            return;
        }
        let s = if inverse { -1.0 } else { 1.0 };
        for (v, e) in data.iter_mut().zip(&self.exponent) {
            *v *= (e * s).exp();
        }
    }

    /// One step of the `X` scheme starting at `t`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn step(
        &mut self,
        data: &mut [Complex64],
        t: f64,
        dbeta: &[f64],
        dt: f64,
        scheme: Scheme,
        alpha: f64,
        coupling: f64,
    ) {
        self.noise(data, t, dbeta, dt, false);
        match scheme {
            Scheme::Strang => {
                self.linear(data, 0.5 * dt);
                Self::nonlinear(data, alpha, coupling, dt);
                self.linear(data, 0.5 * dt);
            }
            Scheme::Lie => {
                self.linear(data, dt);
                Self::nonlinear(data, alpha, coupling, dt);
            }
        }
    }

    /// Exact inverse of a linear (`λ = 0`) step.
    pub(crate) fn unstep_linear(&mut self, data: &mut [Complex64], t: f64, dbeta: &[f64], dt: f64) {
        self.linear(data, -dt);
        self.noise(data, t, dbeta, dt, true);
    }

    pub(crate) fn grid(&self) -> &Grid {
        &self.grid
    }
}

fn sup(data: &[Complex64]) -> f64 {
    data.iter().map(|v| v.norm()).fold(0.0, |a: f64, b| if b.is_nan() { f64::NAN } else { a.max(b) })
}

/// Model at the resolution of `plan.dt`: the mesh must be uniform with cell
/// `dt·2^m`; paths are bridge-refined `m` times.
pub fn model_at_step(model: &NoiseModel, dt: f64) -> Result<NoiseModel> {
    if model.is_empty() {
        let cells = (model.horizon() / dt).round();
        if cells < 1.0 || ((model.horizon() / dt) - cells).abs() > 1e-9 * cells {
            return Err(Error::InvalidArgument(format!(
                "horizon {} is not a whole number of steps {dt}",
                model.horizon()
            )));
        }
        let mesh = crate::noise::TimeMesh::uniform(model.horizon(), cells as usize)?;
        return NoiseModel::new(Vec::new(), &mesh);
    }
    let h = model.mesh().uniform_step().ok_or_else(|| {
        Error::InvalidArgument("integration requires a uniform Brownian mesh".into())
    })?;
    let r = h / dt;
    let m = r.log2().round();
    if m < 0.0 || (r - 2f64.powf(m)).abs() > 1e-9 * r {
        return Err(Error::InvalidArgument(format!(
            "dt = {dt} must equal the mesh cell {h} divided by a power of two"
        )));
    }
    model.refine_times(m as u32)
}

struct RunSpec<'a> {
    model: &'a NoiseModel,
    nl: Nonlinearity,
    plan: &'a StepPlan,
    t0: f64,
    first_step: usize,
    steps: usize,
}

fn run(x0: &Field, spec: RunSpec<'_>) -> Result<Trajectory> {
    let RunSpec {
        model,
        nl,
        plan,
        t0,
        first_step,
        steps,
    } = spec;
    let grid = x0.grid().clone();
    let exponents = ExponentTable::new(grid.dim(), nl.alpha, nl.lambda)?;
    let mut prop = Propagator::new(&grid, model);
    let mut data = x0.values().to_vec();
    let mut series = SpaceTimeSeries::new();
    let core = grid.length() / 4.0;
    let mut boundary_mass = vec![x0.mass_fraction_outside(core)];
    series.push(t0, x0.clone())?;
    let dt = plan.dt;
    let mut increments = Vec::with_capacity(steps);
    let mut sup_max = sup(&data);
    let due = plan.snapshot_steps(t0, steps);
    for n in 0..steps {
        let cell = first_step + n;
        let t = t0 + n as f64 * dt;
        let dbeta: Vec<f64> = model.channels().iter().map(|c| c.path.increments()[cell]).collect();
        prop.step(&mut data, t, &dbeta, dt, plan.scheme, nl.alpha, nl.lambda);
        increments.push(dbeta);
        let s = sup(&data);
        if !s.is_finite() || s > plan.blowup_cap {
            return Err(Error::BlowUp {
                t: t + dt,
                step: n + 1,
                sup: s,
            });
        }
        sup_max = sup_max.max(s);
        if due[n + 1] {
            let f = Field::from_raw(&grid, data.clone());
            boundary_mass.push(f.mass_fraction_outside(core));
            series.push(t0 + (n + 1) as f64 * dt, f)?;
        }
    }
    Ok(Trajectory {
        series,
        increments,
        t0,
        dt,
        snapshot_stride: plan.snapshot_stride,
        exponents,
        model: model.clone(),
        sup_max,
        boundary_mass,
    })
}

/// Integrates the stochastic equation for `X` on `[0, T]` along the model's paths.
pub fn evolve_x(x0: &Field, model: &NoiseModel, nl: Nonlinearity, plan: &StepPlan, t_end: f64) -> Result<Trajectory> {
    plan.validate()?;
    if t_end > model.horizon() * (1.0 + 1e-12) {
        return Err(Error::BeyondHorizon {
            t: t_end,
            horizon: model.horizon(),
        });
    }
    if !x0.is_finite() {
        return Err(Error::NonFinite("initial datum"));
    }
    let steps = plan.steps_between(0.0, t_end)?;
    let fine = model_at_step(model, plan.dt)?;
    run(
        x0,
        RunSpec {
            model: &fine,
            nl,
            plan,
            t0: 0.0,
            first_step: 0,
            steps,
        },
    )
}

/// Deterministic NLS `∂_t u = -iΔu - iλF(u)` on `[t0, t1]`.
pub fn evolve_deterministic(u: &Field, nl: Nonlinearity, plan: &StepPlan, t0: f64, t1: f64) -> Result<Trajectory> {
    plan.validate()?;
    let steps = plan.steps_between(t0, t1)?;
    let model = NoiseModel::silent(t1.max(1.0))?;
    run(
        u,
        RunSpec {
            model: &model,
            nl,
            plan,
            t0,
            first_step: 0,
            steps,
        },
    )
}

/// Lensed damped equation on `[t0, t1] ⊂ [0, 1)`:
/// `∂_t w = -iΔw - iλ h(t) e^{(α-1) Re φ̃(t)} |w|^{α-1} w`, `φ̃(t) = φ(t/(1-t))`.
/// Constant spatial profiles only.
pub fn evolve_lensed(
    w0: &Field,
    model: &NoiseModel,
    nl: Nonlinearity,
    plan: &StepPlan,
    t0: f64,
    t1: f64,
) -> Result<Trajectory> {
    plan.validate()?;
    if !(t1 < 1.0) || t0 < 0.0 {
        return Err(Error::InvalidArgument(format!("[{t0}, {t1}] must lie in [0, 1)")));
    }
    if !model.has_constant_profiles() {
        return Err(Error::InvalidArgument(
            "the lensed integrator supports constant spatial profiles only".into(),
        ));
    }
    let steps = plan.steps_between(t0, t1)?;
    let grid = w0.grid().clone();
    let exponents = ExponentTable::new(grid.dim(), nl.alpha, nl.lambda)?;
    let dt = plan.dt;
    let re_phi = |t: f64| -> Result<f64> { Ok(model.phi_scalar(t / (1.0 - t))?.re) };
    let silent = NoiseModel::silent(1.0)?;
    let mut prop = Propagator::new(&grid, &silent);
    let mut data = w0.values().to_vec();
    let mut series = SpaceTimeSeries::new();
    let core = grid.length() / 4.0;
    let mut boundary_mass = vec![w0.mass_fraction_outside(core)];
    series.push(t0, w0.clone())?;
    let mut sup_max = sup(&data);
    let mut prev = re_phi(t0)?;
    let due = plan.snapshot_steps(t0, steps);
    for n in 0..steps {
        let ta = t0 + n as f64 * dt;
        let tb = ta + dt;
        let next = re_phi(tb)?;
        let weight = exponents.h(0.5 * (ta + tb)) * ((nl.alpha - 1.0) * 0.5 * (prev + next)).exp();
        prev = next;
        match plan.scheme {
            Scheme::Strang => {
                prop.linear(&mut data, 0.5 * dt);
                Propagator::nonlinear(&mut data, nl.alpha, nl.lambda * weight, dt);
                prop.linear(&mut data, 0.5 * dt);
            }
            Scheme::Lie => {
                prop.linear(&mut data, dt);
                Propagator::nonlinear(&mut data, nl.alpha, nl.lambda * weight, dt);
            }
        }
        let s = sup(&data);
        if !s.is_finite() || s > plan.blowup_cap {
            return Err(Error::BlowUp { t: tb, step: n + 1, sup: s });
        }
        sup_max = sup_max.max(s);
        if due[n + 1] {
            let f = Field::from_raw(&grid, data.clone());
            boundary_mass.push(f.mass_fraction_outside(core));
            series.push(t0 + (n + 1) as f64 * dt, f)?;
        }
    }
    Ok(Trajectory {
        series,
        increments: vec![Vec::new(); steps],
        t0,
        dt,
        snapshot_stride: plan.snapshot_stride,
        exponents,
        model: silent,
        sup_max,
        boundary_mass,
    })
}

fn step_index(t: f64, dt: f64) -> Result<usize> {
    let r = t / dt;
    let n = r.round();
    if n < 0.0 || (r - n).abs() > 1e-9 * r.max(1.0) {
        return Err(Error::InvalidArgument(format!("time {t} is not on the step grid {dt}")));
    }
    Ok(n as usize)
}

fn gauge_field(model: &NoiseModel, t: f64, grid: &Grid, star: bool) -> Result<Field> {
    if star {
        model.phi_star(t, grid)
    } else {
        model.phi(t, grid)
    }
}

/// `V(t,s)v = e^{-ψ(t)} Λ(t,s) [e^{ψ(s)} v]`, `ψ = φ` or `φ*`, where `Λ` is the
/// linear stochastic flow of the `X` scheme.
pub fn homogeneous_evolve(
    v: &Field,
    s: f64,
    t: f64,
    model: &NoiseModel,
    star: bool,
    plan: &StepPlan,
) -> Result<Field> {
    if s > t {
        return Err(Error::InvalidArgument(format!("s = {s} exceeds t = {t}")));
    }
    if t > model.horizon() * (1.0 + 1e-12) {
        return Err(Error::BeyondHorizon { t, horizon: model.horizon() });
    }
    if s == t {
        return Ok(v.clone());
    }
    let fine = model_at_step(model, plan.dt)?;
    let (ns, nt) = (step_index(s, plan.dt)?, step_index(t, plan.dt)?);
    let grid = v.grid();
    let psi_s = gauge_field(&fine, s, grid, star)?;
    let mut data = v.zip_map(&psi_s, |a, p| a * p.exp())?.into_values();
    let mut prop = Propagator::new(grid, &fine);
    for n in ns..nt {
        let dbeta: Vec<f64> = fine.channels().iter().map(|c| c.path.increments()[n]).collect();
        prop.step(&mut data, n as f64 * plan.dt, &dbeta, plan.dt, plan.scheme, 3.0, 0.0);
    }
    let psi_t = gauge_field(&fine, t, grid, star)?;
    Field::from_raw(grid, data).zip_map(&psi_t, |a, p| a * (-p).exp())
}

/// `V(s,t)` for `s ≤ t`: the exact inverse of the discrete forward flow.
pub fn homogeneous_evolve_backward(
    v: &Field,
    t: f64,
    s: f64,
    model: &NoiseModel,
    star: bool,
    plan: &StepPlan,
) -> Result<Field> {
    if s > t {
        return Err(Error::InvalidArgument(format!("s = {s} exceeds t = {t}")));
    }
    if s == t {
        return Ok(v.clone());
    }
    let fine = model_at_step(model, plan.dt)?;
    let (ns, nt) = (step_index(s, plan.dt)?, step_index(t, plan.dt)?);
    let grid = v.grid();
    let psi_t = gauge_field(&fine, t, grid, star)?;
    let mut data = v.zip_map(&psi_t, |a, p| a * p.exp())?.into_values();
    let mut prop = Propagator::new(grid, &fine);
    for n in (ns..nt).rev() {
        let dbeta: Vec<f64> = fine.channels().iter().map(|c| c.path.increments()[n]).collect();
        prop.unstep_linear(&mut data, n as f64 * plan.dt, &dbeta, plan.dt);
    }
    let psi_s = gauge_field(&fine, s, grid, star)?;
    debug_assert_eq!(prop.grid(), grid);
    Field::from_raw(grid, data).zip_map(&psi_s, |a, p| a * (-p).exp())
}
