//! Gauge rescaling, pseudo-conformal lens, dilation/modulation operators and
//! scattering pullbacks.

mod exponents;

pub use exponents::{Criticality, ExponentTable};

use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::{free_propagate, homogeneous_evolve_backward, StepPlan};
use crate::field::{Field, Grid, SpaceTimeSeries};
use crate::functionals;
use crate::noise::NoiseModel;
use crate::{Error, Result};

/// Relative `L²` mass allowed outside the safe core `|x| < L/4`.
pub const CORE_TOL: f64 = 1e-8;
/// Relative `L²` mass allowed in the top third of the spectrum of an interpolated field.
pub const SPECTRAL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// `f e^{±ψ}`; `z = e^{-φ}X` is `gauge(X, φ, Minus)`.
pub fn gauge(f: &Field, psi: &Field, sign: Sign) -> Result<Field> {
    let s = match sign {
        Sign::Plus => 1.0,
        Sign::Minus => -1.0,
    };
    f.zip_map(psi, |v, p| v * (p * s).exp())
}

/// `M_σ f = e^{iσ|x|²/4} f`.
pub fn modulation(f: &Field, sigma: f64) -> Field {
    if sigma == 0.0 {
        return f.clone();
    }
    let r2 = f.grid().radius_sq();
    let v = f
        .values()
        .iter()
        .zip(&r2)
        .map(|(v, r)| v * Complex64::from_polar(1.0, sigma * r / 4.0))
        .collect();
    Field::from_values(f.grid(), v).expect("modulation keeps values finite")
}

fn check_core(f: &Field, what: &str) -> Result<()> {
    let out = f.mass_fraction_outside(f.grid().length() / 4.0);
    if out > CORE_TOL {
        return Err(Error::Aliasing(format!(
            "{what}: fraction {out:.3e} of the mass lies outside |x| < L/4"
        )));
    }
    Ok(())
}

fn check_band(f: &Field, what: &str) -> Result<()> {
    let tail = f.spectral_tail_fraction();
    if tail > SPECTRAL_TOL {
        return Err(Error::Aliasing(format!(
            "{what}: fraction {tail:.3e} of the mass lies in the top third of the spectrum"
        )));
    }
    Ok(())
}

/// Trigonometric interpolation weights for evaluating at `β x_j`, one row per
/// target point; rows for points outside the box are zero.
fn interpolation_matrix(grid: &Grid, beta: f64) -> Vec<f64> {
    let n = grid.n();
    let l = grid.length();
    let xs = grid.axis_positions();
    let nf = n as f64;
    let mut a = vec![0.0; n * n];
    for (j, xj) in xs.iter().enumerate() {
        let y = beta * xj;
        if !(-l / 2.0..l / 2.0).contains(&y) {
            continue;
        }
        for (m, xm) in xs.iter().enumerate() {
            let th = 2.0 * std::f64::consts::PI * (y - xm) / l;
            let half = (0.5 * th).sin();
            let dirichlet = if half.abs() < 1e-13 {
                // limit of sin((n-1)θ/2)/sin(θ/2) as θ → 2πq
                (nf - 1.0) * (0.5 * (nf - 2.0) * th).cos()
            } else {
                (0.5 * (nf - 1.0) * th).sin() / half
            };
            a[j * n + m] = (dirichlet + (0.5 * nf * th).cos()) / nf;
        }
    }
    a
}

fn apply_axis(data: &[Complex64], grid: &Grid, axis: usize, a: &[f64]) -> Vec<Complex64> {
    let n = grid.n();
    let d = grid.dim();
    let stride = n.pow((d - 1 - axis) as u32);
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for base in 0..data.len() {
        if (base / stride) % n != 0 {
            continue;
        }
        for (m, l) in line.iter_mut().enumerate() {
            *l = data[base + m * stride];
        }
        for j in 0..n {
            let row = &a[j * n..(j + 1) * n];
            let mut acc = Complex64::new(0.0, 0.0);
            for (w, v) in row.iter().zip(&line) {
                acc += v * *w;
            }
            out[base + j * stride] = acc;
        }
    }
    out
}

/// `D_β f(x) = β^{d/2} f(βx)` by trigonometric interpolation. Errors if the source
/// is not band-limited, or if source or result leave the safe core.
pub fn dilation(f: &Field, beta: f64) -> Result<Field> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("dilation factor {beta} must be positive")));
    }
    if beta == 1.0 {
        return Ok(f.clone());
    }
    check_band(f, "dilation source")?;
    check_core(f, "dilation source")?;
    let grid = f.grid();
    let a = interpolation_matrix(grid, beta);
    let mut data = f.values().to_vec();
    for axis in 0..grid.dim() {
        data = apply_axis(&data, grid, axis, &a);
    }
    let s = beta.powf(grid.dim() as f64 / 2.0);
    data.iter_mut().for_each(|v| *v *= s);
    let out = Field::from_values(grid, data)?;
    check_core(&out, "dilation result")?;
    Ok(out)
}

/// Lens parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lens {
    pub t_max: f64,
}

impl Default for Lens {
    fn default() -> Self {
        Self { t_max: 0.9 }
    }
}

impl Lens {
    fn check(&self, t: f64) -> Result<()> {
        if !(t >= 0.0) || t >= self.t_max || self.t_max >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "lens time {t} outside [0, {})",
                self.t_max.min(1.0)
            )));
        }
        Ok(())
    }

    /// `ṽ(t, x) = (1-t)^{-d/2} v(s, x/(1-t)) e^{i|x|²/(4(1-t))}`, `t = s/(1+s)`.
    pub fn forward(&self, v: &Field, s: f64) -> Result<Field> {
        if !(s >= 0.0) {
            return Err(Error::InvalidArgument(format!("s = {s} must be nonnegative")));
        }
        let t = s / (1.0 + s);
        self.check(t)?;
        let beta = 1.0 + s;
        Ok(modulation(&dilation(v, beta)?, beta))
    }

    /// Inverse of [`Lens::forward`]: returns `v(s)`, `s = t/(1-t)`.
    pub fn inverse(&self, w: &Field, t: f64) -> Result<Field> {
        self.check(t)?;
        let beta = 1.0 - t;
        dilation(&modulation(w, -1.0 / beta), beta)
    }
}

pub fn pct_forward(v: &Field, s: f64) -> Result<Field> {
    Lens::default().forward(v, s)
}

pub fn pct_inverse(w: &Field, t: f64) -> Result<Field> {
    Lens::default().inverse(w, t)
}

/// `e^{itΔ} e^{-ψ(t)} X(t)` with `ψ = φ*` (`star`) or `φ`.
pub fn scattering_pullback(x: &Field, t: f64, model: &NoiseModel, star: bool) -> Result<Field> {
    let psi = if star {
        model.phi_star(t, x.grid())?
    } else {
        model.phi(t, x.grid())?
    };
    Ok(free_propagate(&gauge(x, &psi, Sign::Minus)?, t))
}

/// `V(0,t) e^{-φ*(t)} X(t)` with the star homogeneous flow at resolution `plan.dt`.
pub fn homogeneous_pullback(x: &Field, t: f64, model: &NoiseModel, plan: &StepPlan) -> Result<Field> {
    let z = gauge(x, &model.phi_star(t, x.grid())?, Sign::Minus)?;
    homogeneous_evolve_backward(&z, t, 0.0, model, true, plan)
}

/// `max_s |T(s) z*(s) - M_{-1} T(t) z̃*(t)|₂ / |z*(s)|₂` over paired samples with
/// `t = s/(1+s)`.
pub fn asymptotic_equivalence_check(z: &SpaceTimeSeries, zt: &SpaceTimeSeries) -> Result<f64> {
    if z.len() != zt.len() || z.grid() != zt.grid() {
        return Err(Error::GridMismatch);
    }
    let mut worst: f64 = 0.0;
    for ((s, a), (t, b)) in z.times().iter().zip(z.fields()).zip(zt.times().iter().zip(zt.fields())) {
        if (t - s / (1.0 + s)).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "sample times {s} and {t} are not related by t = s/(1+s)"
            )));
        }
        let lhs = free_propagate(a, *s);
        let rhs = modulation(&free_propagate(b, *t), -1.0);
        let norm = a.norm_l2();
        let dev = lhs.sub(&rhs)?.norm_l2();
        worst = worst.max(if norm > 0.0 { dev / norm } else { dev });
    }
    Ok(worst)
}

/// One entry of [`identity_battery`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    /// Worst relative deviation observed.
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityCheck {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Lens times used by [`identity_battery`].
pub const BATTERY_TIMES: [f64; 3] = [0.25, 0.5, 1.0];

/// Algebraic identities of the lens and the dilation/modulation operators,
/// evaluated on `v`:
/// lens round trip, `|ṽ|_{α+1}^{α+1} = (1-t)^{-d(α-1)/2} |v|_{α+1}^{α+1}`,
/// `Ẽ₁(ṽ, t) = E(v, s)`, the two evaluations of `E`,
/// `e^{itΔ} D_β = D_β e^{iβ²tΔ}` and
/// `e^{itΔ} M_σ = M_{σ/a} D_{1/a} e^{i(t/a)Δ}`, `a = 1 + σt`.
pub fn identity_battery(v: &Field, alpha: f64) -> Result<Vec<IdentityCheck>> {
    let d = v.grid().dim() as f64;
    let p = alpha + 1.0;
    let lp = |f: &Field| -> Result<f64> { Ok(f.norm_lp(p)?.powf(p)) };
    let (mut trip, mut scaling, mut e1, mut gap) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for s in BATTERY_TIMES {
        let t = s / (1.0 + s);
        let w = pct_forward(v, s)?;
        trip = trip.max(pct_inverse(&w, t)?.relative_l2_distance(v)?);
        scaling = scaling.max(rel(lp(&w)?, (1.0 - t).powf(-d * (alpha - 1.0) / 2.0) * lp(v)?));
        let parts = functionals::pc_energy_parts(v, s, alpha)?;
        e1 = e1.max(rel(functionals::lensed_energy(&w, t, alpha)?, parts.direct()));
        gap = gap.max(parts.relative_gap());
    }
    let (t, b) = (0.1, 1.5);
    let dil = free_propagate(&dilation(v, b)?, t).relative_l2_distance(&dilation(&free_propagate(v, b * b * t), b)?)?;
    let mut md: f64 = 0.0;
    for (sig, t) in [(0.5, 0.3), (-0.5, 0.4)] {
        let a = 1.0 + sig * t;
        let lhs = free_propagate(&modulation(v, sig), t);
        let rhs = modulation(&dilation(&free_propagate(v, t / a), 1.0 / a)?, sig / a);
        md = md.max(lhs.relative_l2_distance(&rhs)?);
    }
    Ok(vec![
        IdentityCheck::new("pct_round_trip", trip, 1e-8),
        IdentityCheck::new("pct_lp_scaling", scaling, 1e-6),
        IdentityCheck::new("lensed_energy", e1, 1e-6),
        IdentityCheck::new("pc_energy_decomposition", gap, 1e-8),
        IdentityCheck::new("dilation_propagator", dil, 1e-7),
        IdentityCheck::new("modulation_propagator", md, 1e-7),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{SpatialProfile, TemporalProfile, TimeMesh};

    fn grid() -> Grid {
        Grid::new(1, 256, 40.0).unwrap()
    }

    fn gaussian(g: &Grid) -> Field {
        Field::from_fn(g, |x| Complex64::new(1.0, 0.3 * x[0]) * (-x[0] * x[0] / 2.0).exp())
    }

    fn close(a: &Field, b: &Field, tol: f64) {
        let d = a.relative_l2_distance(b).unwrap();
        assert!(d <= tol, "{d:e} > {tol:e}");
    }

    #[test]
    fn gauge_inverse_and_modulus() {
        let g = grid();
        let f = gaussian(&g);
        assert_eq!(gauge(&f, &Field::zeros(&g), Sign::Plus).unwrap(), f);
        let psi = Field::from_fn(&g, |x| Complex64::new(0.3 * x[0].sin(), x[0].cos()));
        let back = gauge(&gauge(&f, &psi, Sign::Plus).unwrap(), &psi, Sign::Minus).unwrap();
        assert!(back.sub(&f).unwrap().sup_norm() < 1e-14);
        let mesh = TimeMesh::uniform(1.0, 20).unwrap();
        let m = NoiseModel::sampled(
            vec![(
                SpatialProfile::gaussian_decay(Complex64::new(0.0, 1.0), 2.0),
                TemporalProfile::Constant { c0: 1.0 },
            )],
            &mesh,
            5,
        )
        .unwrap();
        let phi = m.phi(0.7, &g).unwrap();
        let z = gauge(&f, &phi, Sign::Minus).unwrap();
        for (a, b) in z.values().iter().zip(f.values()) {
            assert!((a.norm() - b.norm()).abs() < 1e-15);
        }
    }

    #[test]
    fn dilation_modulation_algebra() {
        let g = grid();
        let f = gaussian(&g);
        close(&dilation(&f, 1.0).unwrap(), &f, 0.0);
        assert_eq!(modulation(&f, 0.0), f);
        let d = dilation(&f, 1.7).unwrap();
        assert!((d.norm_l2() - f.norm_l2()).abs() < 1e-8 * f.norm_l2());
        let exact = Field::from_fn(&g, |x| {
            let y = 1.7 * x[0];
            Complex64::new(1.0, 0.3 * y) * (-y * y / 2.0).exp() * 1.7f64.sqrt()
        });
        close(&d, &exact, 1e-10);
        close(&dilation(&dilation(&f, 2.0).unwrap(), 0.6).unwrap(), &dilation(&f, 1.2).unwrap(), 1e-8);
        let mm = modulation(&modulation(&f, 0.3), 0.5);
        close(&mm, &modulation(&f, 0.8), 1e-15);
        assert!(dilation(&f, 0.2).is_err());
        assert!(dilation(&f, -1.0).is_err());
    }

    #[test]
    fn operator_identities() {
        let g = grid();
        let f = gaussian(&g);
        let (t, b) = (0.1, 2.0);
        let lhs = free_propagate(&dilation(&f, b).unwrap(), t);
        let rhs = dilation(&free_propagate(&f, b * b * t), b).unwrap();
        close(&lhs, &rhs, 1e-8);
        for (sig, t) in [(0.5, 0.3), (-0.5, 0.4), (1.0, 0.2)] {
            let a = 1.0 + sig * t;
            let lhs = free_propagate(&modulation(&f, sig), t);
            let rhs = modulation(&dilation(&free_propagate(&f, t / a), 1.0 / a).unwrap(), sig / a);
            close(&lhs, &rhs, 1e-7);
        }
    }

    #[test]
    fn lens_round_trip_and_scaling() {
        let g = grid();
        let v = gaussian(&g);
        close(&pct_forward(&v, 0.0).unwrap(), &modulation(&v, 1.0), 0.0);
        for s in [0.25, 0.6, 1.0] {
            let t = s / (1.0 + s);
            let w = pct_forward(&v, s).unwrap();
            close(&pct_inverse(&w, t).unwrap(), &v, 1e-8);
            assert!((w.norm_l2() - v.norm_l2()).abs() < 1e-8 * v.norm_l2());
            let p = |f: &Field| f.norm_lp(4.0).unwrap().powi(4);
            let expect = (1.0 - t).powf(-1.0) * p(&v);
            assert!((p(&w) - expect).abs() < 1e-6 * expect);
        }
        assert!(pct_forward(&v, 9.5).is_err());
        assert!(pct_inverse(&v, 0.95).is_err());
    }

    #[test]
    fn equivalence_of_free_flows() {
        let g = grid();
        let z0 = gaussian(&g);
        let mut z = SpaceTimeSeries::new();
        let mut zt = SpaceTimeSeries::new();
        for s in [0.0, 0.25, 0.5, 1.0] {
            z.push(s, free_propagate(&z0, -s)).unwrap();
            let t = s / (1.0 + s);
            zt.push(t, free_propagate(&modulation(&z0, 1.0), -t)).unwrap();
        }
        assert!(asymptotic_equivalence_check(&z, &zt).unwrap() < 1e-8);
        let mut zp = SpaceTimeSeries::new();
        for (s, f) in z.times().iter().zip(z.fields()) {
            zp.push(*s, f.scale(Complex64::from_polar(1.0, 0.7))).unwrap();
        }
        let mut ztp = SpaceTimeSeries::new();
        for (t, f) in zt.times().iter().zip(zt.fields()) {
            ztp.push(*t, f.scale(Complex64::from_polar(1.0, 0.7))).unwrap();
        }
        let a = asymptotic_equivalence_check(&z, &zt).unwrap();
        let b = asymptotic_equivalence_check(&zp, &ztp).unwrap();
        assert!((a - b).abs() < 1e-12);
        // the lensed free flow is the lens image of the free flow
        for s in [0.25, 1.0] {
            let t = s / (1.0 + s);
            close(&pct_forward(&free_propagate(&z0, -s), s).unwrap(), &free_propagate(&modulation(&z0, 1.0), -t), 1e-8);
        }
    }

    #[test]
    fn battery_on_gaussian() {
        let g = grid();
        for c in identity_battery(&gaussian(&g), 3.0).unwrap() {
            assert!(c.pass, "{c:?}");
        }
    }

    #[test]
    fn pullbacks() {
        let g = grid();
        let x0 = gaussian(&g);
        let silent = NoiseModel::silent(2.0).unwrap();
        let p0 = scattering_pullback(&x0, 0.0, &silent, true).unwrap();
        for t in [0.5, 1.0, 2.0] {
            let xt = free_propagate(&x0, -t);
            close(&scattering_pullback(&xt, t, &silent, true).unwrap(), &p0, 1e-12);
        }
        let mesh = TimeMesh::uniform(2.0, 40).unwrap();
        let off = NoiseModel::sampled(
            vec![(
                SpatialProfile::gaussian_decay(Complex64::new(0.3, 1.0), 3.0),
                TemporalProfile::Compact { c: 1.0, t0: 0.0 },
            )],
            &mesh,
            9,
        )
        .unwrap();
        let xt = free_propagate(&x0, -1.0);
        assert_eq!(scattering_pullback(&xt, 1.0, &off, true).unwrap(), free_propagate(&xt, 1.0));
        let plan = StepPlan::strang(0.05);
        let hp = homogeneous_pullback(&xt, 1.0, &silent, &plan).unwrap();
        close(&hp, &x0, 1e-12);
    }
}
