//! Scalar functionals, their Itô integrands, and residual replay along stored
//! trajectories.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Nonlinearity, Trajectory};
use crate::field::{io::fmt_f64, Field, Grid};
use crate::noise::NoiseModel;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    Mass,
    Hamiltonian,
    Virial,
    Momentum,
    PcEnergy,
}

impl Functional {
    pub const ALL: [Functional; 5] = [
        Functional::Mass,
        Functional::Hamiltonian,
        Functional::Virial,
        Functional::Momentum,
        Functional::PcEnergy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Functional::Mass => "mass",
            Functional::Hamiltonian => "hamiltonian",
            Functional::Virial => "virial",
            Functional::Momentum => "momentum",
            Functional::PcEnergy => "pc_energy",
        }
    }
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Functional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Functional::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown functional {s:?}")))
    }
}

fn integrate(grid: &Grid, it: impl Iterator<Item = f64>) -> f64 {
    it.sum::<f64>() * grid.cell_volume()
}

fn lp_power(f: &Field, p: f64) -> f64 {
    integrate(f.grid(), f.values().iter().map(|v| v.norm().powf(p)))
}

/// `|f|₂²`.
pub fn mass(f: &Field) -> f64 {
    integrate(f.grid(), f.values().iter().map(|v| v.norm_sqr()))
}

/// `H = ½|∇f|₂² - λ/(α+1) |f|_{α+1}^{α+1}`.
pub fn hamiltonian(f: &Field, alpha: f64, lambda: f64) -> f64 {
    0.5 * f.gradient_sq_norm() - lambda / (alpha + 1.0) * lp_power(f, alpha + 1.0)
}

/// `V = ∫ |x|² |f|²`.
pub fn virial(f: &Field) -> f64 {
    let r2 = f.grid().radius_sq();
    integrate(f.grid(), f.values().iter().zip(&r2).map(|(v, r)| r * v.norm_sqr()))
}

fn x_dot(pos: &[[f64; 3]], grad: &[Field], i: usize) -> Complex64 {
    grad.iter().enumerate().map(|(a, g)| g.values()[i] * pos[i][a]).sum()
}

/// `G = Im ∫ x·∇f̄ f`.
pub fn momentum(f: &Field) -> f64 {
    let grad = f.gradient();
    let pos = f.grid().positions();
    integrate(
        f.grid(),
        f.values().iter().enumerate().map(|(i, v)| (x_dot(&pos, &grad, i).conj() * v).im),
    )
}

/// Both evaluations of the pseudo-conformal energy at time `s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PcEnergy {
    /// `∫ |(x - 2i(1+s)∇) f|²`.
    pub kinetic: f64,
    /// `8/(1+α) (1+s)² |f|_{α+1}^{α+1}`.
    pub potential: f64,
    /// `8(1+s)² H_{λ=-1} - 4(1+s) G + V`.
    pub decomposition: f64,
}

impl PcEnergy {
    pub fn direct(&self) -> f64 {
        self.kinetic + self.potential
    }

    pub fn relative_gap(&self) -> f64 {
        let d = self.direct();
        let gap = (d - self.decomposition).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / d.abs().max(self.decomposition.abs())
        }
    }
}

pub fn pc_energy_parts(f: &Field, s: f64, alpha: f64) -> Result<PcEnergy> {
    if !(s >= 0.0) {
        return Err(Error::InvalidArgument(format!("pc_energy needs s >= 0, got {s}")));
    }
    let a = 1.0 + s;
    let grid = f.grid();
    let grad = f.gradient();
    let pos = grid.positions();
    let kinetic = integrate(
        grid,
        f.values().iter().enumerate().map(|(i, v)| {
            (0..grid.dim())
                .map(|j| (v * pos[i][j] - Complex64::new(0.0, 2.0 * a) * grad[j].values()[i]).norm_sqr())
                .sum::<f64>()
        }),
    );
    let potential = 8.0 / (1.0 + alpha) * a * a * lp_power(f, alpha + 1.0);
    let decomposition = 8.0 * a * a * hamiltonian(f, alpha, -1.0) - 4.0 * a * momentum(f) + virial(f);
    Ok(PcEnergy {
        kinetic,
        potential,
        decomposition,
    })
}

/// `E(s) = ∫ |(x - 2i(1+s)∇) f|² + 8/(1+α) (1+s)² |f|_{α+1}^{α+1}`, checked
/// against `8(1+s)² H - 4(1+s) G + V` (defocusing `H`) to `1e-8` relative.
pub fn pc_energy(f: &Field, s: f64, alpha: f64) -> Result<f64> {
    let p = pc_energy_parts(f, s, alpha)?;
    if p.relative_gap() > 1e-8 {
        return Err(Error::Consistency(format!(
            "pc_energy: direct {} vs decomposition {} at s = {s}",
            p.direct(),
            p.decomposition
        )));
    }
    Ok(p.direct())
}

/// `Ẽ₁(w, t) = 4|∇w|₂² + 8/(1+α) (1-t)^{d(α-1)/2-2} |w|_{α+1}^{α+1}`, which equals
/// `E(X(s))` when `w = X̃(t)`, `t = s/(1+s)`.
pub fn lensed_energy(w: &Field, t: f64, alpha: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("lensed time {t} must lie in [0, 1)")));
    }
    let d = w.grid().dim() as f64;
    Ok(4.0 * w.gradient_sq_norm()
        + 8.0 / (1.0 + alpha) * (1.0 - t).powf(d * (alpha - 1.0) / 2.0 - 2.0) * lp_power(w, alpha + 1.0))
}

pub fn evaluate(which: Functional, f: &Field, t: f64, nl: Nonlinearity) -> Result<f64> {
    Ok(match which {
        Functional::Mass => mass(f),
        Functional::Hamiltonian => hamiltonian(f, nl.alpha, nl.lambda),
        Functional::Virial => virial(f),
        Functional::Momentum => momentum(f),
        Functional::PcEnergy => pc_energy(f, t, nl.alpha)?,
    })
}

/// Drift and per-channel diffusion integrands of `d F(X)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Integrands {
    pub drift: f64,
    pub sigma: Vec<f64>,
}

/// Pointwise channel data at time `t`: `G_k`, `∇G_k`.
struct ChannelData {
    g: Vec<Vec<Complex64>>,
    dg: Vec<Vec<[Complex64; 3]>>,
}

impl ChannelData {
    fn new(model: &NoiseModel, t: f64, grid: &Grid) -> Self {
        let pos = grid.positions();
        let d = grid.dim();
        let mut g = Vec::new();
        let mut dg = Vec::new();
        for ch in model.channels() {
            let amp = ch.temporal.value(t);
            g.push(pos.iter().map(|x| ch.spatial.value(x) * amp).collect());
            dg.push(
                pos.iter()
                    .map(|x| {
                        let mut out = [Complex64::new(0.0, 0.0); 3];
                        for (a, o) in out.iter_mut().enumerate().take(d) {
                            *o = ch.spatial.derivative(x, &[a]) * amp;
                        }
                        out
                    })
                    .collect(),
            );
        }
        Self { g, dg }
    }
}

struct Eval<'a> {
    f: &'a Field,
    grid: &'a Grid,
    pos: Vec<[f64; 3]>,
    grad: Vec<Field>,
    ch: ChannelData,
    nl: Nonlinearity,
}

impl<'a> Eval<'a> {
    fn new(f: &'a Field, model: &NoiseModel, t: f64, nl: Nonlinearity) -> Self {
        let grid = f.grid();
        Self {
            f,
            grid,
            pos: grid.positions(),
            grad: f.gradient(),
            ch: ChannelData::new(model, t, grid),
            nl,
        }
    }

    fn sum(&self, it: impl Iterator<Item = f64>) -> f64 {
        integrate(self.grid, it)
    }

    fn d(&self) -> usize {
        self.grid.dim()
    }

    fn abs_pow(&self) -> Vec<f64> {
        self.f.values().iter().map(|v| v.norm().powf(self.nl.alpha + 1.0)).collect()
    }

    /// `∂_j (G_k X)` by the product rule with analytic `∇G_k`.
    fn grad_gx(&self, k: usize, i: usize, j: usize) -> Complex64 {
        self.ch.dg[k][i][j] * self.f.values()[i] + self.ch.g[k][i] * self.grad[j].values()[i]
    }

    fn mass(&self) -> Integrands {
        let v = self.f.values();
        let sigma = self
            .ch
            .g
            .iter()
            .map(|g| self.sum(g.iter().zip(v).map(|(g, x)| 2.0 * g.re * x.norm_sqr())))
            .collect();
        Integrands { drift: 0.0, sigma }
    }

    fn virial(&self) -> Integrands {
        let v = self.f.values();
        let sigma = self
            .ch
            .g
            .iter()
            .map(|g| {
                self.sum(
                    g.iter()
                        .zip(v)
                        .zip(&self.pos)
                        .map(|((g, x), p)| 2.0 * g.re * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) * x.norm_sqr()),
                )
            })
            .collect();
        Integrands {
            drift: 4.0 * momentum(self.f),
            sigma,
        }
    }

    /// `a₁` and `σ_{1,k}`.
    fn hamiltonian(&self) -> Integrands {
        let v = self.f.values();
        let (alpha, lambda) = (self.nl.alpha, self.nl.lambda);
        let ap = self.abs_pow();
        let n = v.len();
        let d = self.d();
        let nch = self.ch.g.len();
        // μ and ∇μ = Σ_k Re(Ḡ_k ∇G_k)
        let mut drift = 0.0;
        for i in 0..n {
            let mu: f64 = (0..nch).map(|k| 0.5 * self.ch.g[k][i].norm_sqr()).sum();
            let mut acc = 0.0;
            for j in 0..d {
                let dmu: f64 = (0..nch).map(|k| (self.ch.g[k][i].conj() * self.ch.dg[k][i][j]).re).sum();
                let dmux = v[i] * dmu + self.grad[j].values()[i] * mu;
                acc -= (self.grad[j].values()[i].conj() * dmux).re;
                for k in 0..nch {
                    acc += 0.5 * self.grad_gx(k, i, j).norm_sqr();
                }
            }
            let re2: f64 = (0..nch).map(|k| self.ch.g[k][i].re.powi(2)).sum();
            acc -= lambda * (alpha - 1.0) / 2.0 * re2 * ap[i];
            drift += acc;
        }
        drift *= self.grid.cell_volume();
        let sigma = (0..nch)
            .map(|k| {
                self.sum((0..n).map(|i| {
                    let kin: f64 = (0..d)
                        .map(|j| (self.grad[j].values()[i].conj() * self.grad_gx(k, i, j)).re)
                        .sum();
                    kin - lambda * self.ch.g[k][i].re * ap[i]
                }))
            })
            .collect();
        Integrands { drift, sigma }
    }

    fn momentum_coefficient(&self) -> f64 {
        let d = self.d() as f64;
        4.0 * self.nl.lambda / (self.nl.alpha + 1.0) * (1.0 - d * (self.nl.alpha - 1.0) / 4.0)
    }

    /// `a₃` and `σ_{3,k}`.
    fn momentum_parts(&self) -> (f64, Vec<f64>) {
        let v = self.f.values();
        let n = v.len();
        let d = self.d();
        let nch = self.ch.g.len();
        let xg = |k: usize, i: usize| -> Complex64 { (0..d).map(|j| self.ch.dg[k][i][j] * self.pos[i][j]).sum() };
        let a3 = -self.sum((0..n).map(|i| {
            (0..nch)
                .map(|k| (xg(k, i) * self.ch.g[k][i].conj()).im * v[i].norm_sqr())
                .sum::<f64>()
        }));
        let sigma = (0..nch)
            .map(|k| {
                self.sum((0..n).map(|i| {
                    let xgrad = x_dot(&self.pos, &self.grad, i);
                    d as f64 * v[i].norm_sqr() * self.ch.g[k][i].im
                        - 2.0 * (xgrad * v[i].conj() * self.ch.g[k][i].conj()).im
                }))
            })
            .collect();
        (a3, sigma)
    }

    fn momentum(&self) -> Integrands {
        let (a3, sigma) = self.momentum_parts();
        let lp = self.abs_pow().into_iter().sum::<f64>() * self.grid.cell_volume();
        let drift =
            4.0 * hamiltonian(self.f, self.nl.alpha, self.nl.lambda) + self.momentum_coefficient() * lp + a3;
        Integrands { drift, sigma }
    }

    fn pc_energy(&self, s: f64) -> Integrands {
        let a = 1.0 + s;
        let h = self.hamiltonian();
        let (a3, s3) = self.momentum_parts();
        let v = self.virial();
        let lp = self.abs_pow().into_iter().sum::<f64>() * self.grid.cell_volume();
        let drift = 8.0 * a * a * h.drift - 4.0 * a * a3 - 4.0 * a * self.momentum_coefficient() * lp;
        let sigma = (0..h.sigma.len())
            .map(|k| 8.0 * a * a * h.sigma[k] - 4.0 * a * s3[k] + v.sigma[k])
            .collect();
        Integrands { drift, sigma }
    }
}

/// Integrands of the Itô expansion of `which` at the state `f` and time `t`.
/// The pseudo-conformal energy identity holds for `λ = -1` only.
pub fn ito_integrands(f: &Field, model: &NoiseModel, t: f64, which: Functional, nl: Nonlinearity) -> Result<Integrands> {
    if which == Functional::PcEnergy && nl.lambda != -1.0 {
        return Err(Error::InvalidArgument(
            "the pseudo-conformal energy identity requires lambda = -1".into(),
        ));
    }
    let e = Eval::new(f, model, t, nl);
    Ok(match which {
        Functional::Mass => e.mass(),
        Functional::Hamiltonian => e.hamiltonian(),
        Functional::Virial => e.virial(),
        Functional::Momentum => e.momentum(),
        Functional::PcEnergy => e.pc_energy(t),
    })
}

/// Quadrature of the stochastic integrals in a replay.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// `σ(t_i) ΔB`.
    LeftPoint,
    /// `σ(t_i) ΔB_k + ½ Σ_j Dσ_k[G_j X] (ΔB_j ΔB_k - δ_jk Δt)`; the Lévy-area part of
    /// the `j ≠ k` terms is dropped.
    Milstein,
}

/// Residual series of one Itô identity along a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct ItoLedger {
    pub functional: Functional,
    pub times: Vec<f64>,
    pub value: Vec<f64>,
    pub drift_cum: Vec<f64>,
    /// `stoch_cum[k][i]`.
    pub stoch_cum: Vec<Vec<f64>>,
    pub residual: Vec<f64>,
}

impl ItoLedger {
    pub fn final_residual(&self) -> f64 {
        *self.residual.last().unwrap()
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.residual.iter().fold(0.0, |a: f64, r| a.max(r.abs()))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "value".into(), "drift_cum".into()];
        header.extend((0..self.stoch_cum.len()).map(|k| format!("stoch_cum_{k}")));
        header.push("residual".into());
        out.write_record(&header)?;
        for i in 0..self.times.len() {
            let mut row = vec![fmt_f64(self.times[i]), fmt_f64(self.value[i]), fmt_f64(self.drift_cum[i])];
            row.extend(self.stoch_cum.iter().map(|s| fmt_f64(s[i])));
            row.push(fmt_f64(self.residual[i]));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn milstein_terms(
    f: &Field,
    model: &NoiseModel,
    t: f64,
    which: Functional,
    nl: Nonlinearity,
    db: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    let nch = model.len();
    let gs = model.channel_values(t, f.grid());
    let mut out = vec![0.0; nch];
    for j in 0..nch {
        let dir = f.mul(&gs[j])?;
        let scale = f.norm_l2().max(1e-300) / dir.norm_l2().max(1e-300);
        let eps = 1e-4 * scale.min(1.0);
        let plus = ito_integrands(&f.add(&dir.scale(Complex64::new(eps, 0.0)))?, model, t, which, nl)?;
        let minus = ito_integrands(&f.sub(&dir.scale(Complex64::new(eps, 0.0)))?, model, t, which, nl)?;
        for k in 0..nch {
            let dsigma = (plus.sigma[k] - minus.sigma[k]) / (2.0 * eps);
            let w = db[j] * db[k] - if j == k { dt } else { 0.0 };
            out[k] += 0.5 * dsigma * w;
        }
    }
    Ok(out)
}

/// Replays the Itô identity of `which` along `traj` with the increments the
/// integrator consumed: trapezoid rule for the drift, `quad` for the
/// stochastic integrals, both evaluated at snapshot times.
pub fn ito_replay(traj: &Trajectory, which: Functional, quad: Quadrature) -> Result<ItoLedger> {
    let times = traj.series.times();
    let fields = traj.series.fields();
    let model = &traj.model;
    let nch = model.len();
    let nl = Nonlinearity::new(traj.exponents.alpha, traj.exponents.lambda);
    let steps: Vec<usize> = times.iter().map(|t| ((t - traj.t0) / traj.dt).round() as usize).collect();
    let total = *steps.last().unwrap();
    if traj.increments.len() < total || traj.increments.iter().take(total).any(|v| v.len() != nch) {
        return Err(Error::MissingIncrements(format!(
            "{} stored steps for {total} integrated steps and {nch} channels",
            traj.increments.len()
        )));
    }
    let m = times.len();
    let mut value = Vec::with_capacity(m);
    let mut integ = Vec::with_capacity(m);
    for (f, &t) in fields.iter().zip(times) {
        value.push(evaluate(which, f, t, nl)?);
        integ.push(ito_integrands(f, model, t, which, nl)?);
    }
    let mut drift_cum = vec![0.0; m];
    let mut stoch_cum = vec![vec![0.0; m]; nch];
    for i in 0..m - 1 {
        let h = times[i + 1] - times[i];
        drift_cum[i + 1] = drift_cum[i] + 0.5 * (integ[i].drift + integ[i + 1].drift) * h;
        let mut db = vec![0.0; nch];
        for inc in &traj.increments[steps[i]..steps[i + 1]] {
            for (b, x) in db.iter_mut().zip(inc) {
                *b += x;
            }
        }
        let extra = match quad {
            Quadrature::LeftPoint => vec![0.0; nch],
            Quadrature::Milstein => milstein_terms(&fields[i], model, times[i], which, nl, &db, h)?,
        };
        for k in 0..nch {
            stoch_cum[k][i + 1] = stoch_cum[k][i] + integ[i].sigma[k] * db[k] + extra[k];
        }
    }
    let residual = (0..m)
        .map(|i| value[i] - value[0] - drift_cum[i] - stoch_cum.iter().map(|s| s[i]).sum::<f64>())
        .collect();
    Ok(ItoLedger {
        functional: which,
        times: times.to_vec(),
        value,
        drift_cum,
        stoch_cum,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{evolve_deterministic, StepPlan};
    use crate::noise::{SpatialProfile, TemporalProfile, TimeMesh};

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn zero_and_even_fields() {
        let g = Grid::new(2, 16, 10.0).unwrap();
        let z = Field::zeros(&g);
        assert_eq!(mass(&z), 0.0);
        assert_eq!(hamiltonian(&z, 3.0, 1.0), 0.0);
        assert_eq!(virial(&z), 0.0);
        assert_eq!(momentum(&z), 0.0);
        assert_eq!(pc_energy(&z, 0.5, 3.0).unwrap(), 0.0);
        let gauss = Field::from_fn(&g, |x| c((-(x[0] * x[0] + x[1] * x[1])).exp()));
        assert!(momentum(&gauss).abs() < 1e-14);
    }

    #[test]
    fn soliton_hamiltonian() {
        // |∇u|² = 2∫sech²tanh² = 2(∫sech² - ∫sech⁴) = 4/3, |u|⁴₄ = 4∫sech⁴ = 16/3
        let g = Grid::new(1, 1024, 40.0).unwrap();
        let u = Field::from_fn(&g, |x| c(2f64.sqrt() / x[0].cosh()));
        let expect = 0.5 * (4.0 / 3.0) - 0.25 * 16.0 / 3.0;
        assert!((hamiltonian(&u, 3.0, 1.0) - expect).abs() < 1e-10);
        assert!((mass(&u) - 4.0).abs() < 1e-10);
    }

    #[test]
    fn pc_energy_identity_and_homogeneity() {
        let g = Grid::new(2, 32, 16.0).unwrap();
        let f = Field::from_fn(&g, |x| {
            Complex64::from_polar((-(x[0] * x[0] + 2.0 * x[1] * x[1]) / 3.0).exp(), 0.7 * x[0] - 0.2 * x[1] * x[1])
        });
        for s in [0.0, 0.4, 3.0] {
            let p = pc_energy_parts(&f, s, 3.0).unwrap();
            assert!(p.relative_gap() < 1e-12, "{}", p.relative_gap());
            let cf = f.scale(Complex64::new(0.0, 1.7));
            let q = pc_energy_parts(&cf, s, 3.0).unwrap();
            assert!((q.kinetic - 1.7f64.powi(2) * p.kinetic).abs() < 1e-12 * q.kinetic);
            assert!((q.potential - 1.7f64.powi(4) * p.potential).abs() < 1e-12 * q.potential);
        }
        assert!(pc_energy(&f, -1.0, 3.0).is_err());
    }

    fn model(amp: Complex64, spatial_const: bool) -> NoiseModel {
        let mesh = TimeMesh::uniform(1.0, 10).unwrap();
        let sp = if spatial_const {
            SpatialProfile::constant(amp)
        } else {
            SpatialProfile::gaussian_decay(amp, 2.0)
        };
        NoiseModel::sampled(vec![(sp, TemporalProfile::Constant { c0: 1.0 })], &mesh, 1).unwrap()
    }

    #[test]
    fn trivial_integrands() {
        let g = Grid::new(1, 64, 20.0).unwrap();
        let f = Field::from_fn(&g, |x| Complex64::new((-x[0] * x[0]).exp(), 0.3 * x[0] * (-x[0] * x[0]).exp()));
        let nl = Nonlinearity::new(3.0, -1.0);
        let cons = model(Complex64::new(0.0, 0.8), false);
        let i0 = ito_integrands(&f, &cons, 0.1, Functional::Mass, nl).unwrap();
        assert_eq!(i0.sigma, vec![0.0]);
        let flat = model(Complex64::new(0.5, 0.2), true);
        let e = Eval::new(&f, &flat, 0.1, nl);
        assert_eq!(e.momentum_parts().0, 0.0);
        assert!(ito_integrands(&f, &flat, 0.0, Functional::PcEnergy, Nonlinearity::new(3.0, 1.0)).is_err());
    }

    #[test]
    fn sigma1_is_a_directional_derivative() {
        let g = Grid::new(1, 128, 24.0).unwrap();
        let f = Field::from_fn(&g, |x| {
            Complex64::from_polar(1.2 * (-x[0] * x[0] / 2.0).exp(), 0.5 * x[0])
        });
        let nl = Nonlinearity::new(3.0, 1.0);
        let m = model(c(0.6), false);
        let sig = ito_integrands(&f, &m, 0.2, Functional::Hamiltonian, nl).unwrap().sigma[0];
        let gk = &m.channel_values(0.2, &g)[0];
        let h = |e: f64| {
            let p = f.zip_map(gk, |x, gv| x * (gv * e).exp()).unwrap();
            hamiltonian(&p, 3.0, 1.0)
        };
        let eps = 1e-5;
        let fd = (h(eps) - h(-eps)) / (2.0 * eps);
        assert!((fd - sig).abs() < 1e-7 * sig.abs().max(1.0), "{fd} {sig}");
    }

    #[test]
    fn deterministic_virial_replay_converges() {
        let g = Grid::new(1, 256, 40.0).unwrap();
        let u0 = Field::from_fn(&g, |x| Complex64::from_polar((-x[0] * x[0] / 2.0).exp(), 0.4 * x[0]));
        let nl = Nonlinearity::new(3.0, -1.0);
        let res = |dt: f64| {
            let tr = evolve_deterministic(&u0, nl, &StepPlan::strang(dt), 0.0, 1.0).unwrap();
            let mass_l = ito_replay(&tr, Functional::Mass, Quadrature::LeftPoint).unwrap();
            assert!(mass_l.max_abs_residual() < 1e-10);
            ito_replay(&tr, Functional::Virial, Quadrature::LeftPoint).unwrap().final_residual().abs()
        };
        let (a, b) = (res(0.02), res(0.01));
        assert!((a / b).log2() > 1.9, "{a} {b}");
    }

    #[test]
    fn deterministic_momentum_and_energy_replays() {
        let g = Grid::new(1, 256, 40.0).unwrap();
        let u0 = Field::from_fn(&g, |x| c(1.3 * (-x[0] * x[0] / 2.0).exp()));
        let nl = Nonlinearity::new(3.0, -1.0);
        let tr = evolve_deterministic(&u0, nl, &StepPlan::strang(0.005), 0.0, 1.0).unwrap();
        for which in [Functional::Momentum, Functional::PcEnergy, Functional::Hamiltonian] {
            let l = ito_replay(&tr, which, Quadrature::LeftPoint).unwrap();
            let scale = l.value.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(l.max_abs_residual() < 1e-4 * scale, "{which}: {}", l.max_abs_residual());
        }
        let mut buf = Vec::new();
        ito_replay(&tr, Functional::Virial, Quadrature::LeftPoint).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,value,drift_cum,residual\n"));
    }
}
