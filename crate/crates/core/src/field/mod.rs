//! Periodic spectral grid, complex fields, differential operators and norms.

pub mod fft;
mod grid;
pub mod io;
mod series;
mod strichartz;

pub use grid::Grid;
pub use series::{BandContribution, LsNorm, SpaceTimeSeries};
pub use strichartz::{strichartz_admissible, Exponent};

use num_complex::Complex64;

use crate::{Error, Result, I};
use fft::FftNd;
use grid::norm_sq;

/// Complex function sampled on a [`Grid`], row-major, axis 0 slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<Complex64>,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64; 3]) -> Complex64) -> Self {
        let values = grid.positions().iter().map(f).collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        let f = Self {
            grid: grid.clone(),
            values,
        };
        if !f.is_finite() {
            return Err(Error::NonFinite("field values"));
        }
        Ok(f)
    }

    pub(crate) fn from_raw(grid: &Grid, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub(crate) fn check_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Field {
        Field::from_raw(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(
        &self,
        other: &Field,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Field> {
        self.check_grid(other)?;
        Ok(Field::from_raw(
            &self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn scale(&self, c: Complex64) -> Field {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a * b)
    }

    /// `∫ conj(self)·other dx`.
    pub fn inner(&self, other: &Field) -> Result<Complex64> {
        self.check_grid(other)?;
        let s: Complex64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(s * self.grid.cell_volume())
    }

    /// Riemann-sum `L^p` norm; `p = f64::INFINITY` gives the sup norm.
    pub fn norm_lp(&self, p: f64) -> Result<f64> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidExponent(p));
        }
        if p.is_infinite() {
            return Ok(self.sup_norm());
        }
        let s: f64 = if p == 2.0 {
            self.values.iter().map(|v| v.norm_sqr()).sum()
        } else {
            self.values.iter().map(|v| v.norm().powf(p)).sum()
        };
        Ok((s * self.grid.cell_volume()).powf(1.0 / p))
    }

    pub fn norm_l2(&self) -> f64 {
        let s: f64 = self.values.iter().map(|v| v.norm_sqr()).sum();
        (s * self.grid.cell_volume()).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `|self - other|₂ / |other|₂` (absolute distance when `other` vanishes).
    pub fn relative_l2_distance(&self, other: &Field) -> Result<f64> {
        let diff = self.sub(other)?.norm_l2();
        let base = other.norm_l2();
        Ok(if base > 0.0 { diff / base } else { diff })
    }

    /// Fourier coefficients normalized so that `Σ|f̂|² = |f|₂²`.
    pub fn spectrum(&self) -> Vec<Complex64> {
        let mut data = self.values.clone();
        FftNd::new(&self.grid).forward(&mut data);
        let s = (self.grid.cell_volume() / self.grid.len() as f64).sqrt();
        data.iter_mut().for_each(|v| *v *= s);
        data
    }

    /// Applies the Fourier multiplier `m(k)`.
    pub fn fourier_multiply(&self, m: impl Fn(&[f64; 3]) -> Complex64) -> Field {
        let mult: Vec<Complex64> = self.grid.wavevectors().iter().map(m).collect();
        let mut data = self.values.clone();
        FftNd::new(&self.grid).apply_multiplier(&mut data, &mult);
        Field::from_raw(&self.grid, data)
    }

    /// Spectral gradient, one field per axis.
    pub fn gradient(&self) -> Vec<Field> {
        let mut fft = FftNd::new(&self.grid);
        let mut hat = self.values.clone();
        fft.forward(&mut hat);
        let kv = self.grid.wavevectors();
        let n = self.grid.n();
        let kmax = -(self.grid.axis_wavenumbers()[n / 2]);
        (0..self.grid.dim())
            .map(|a| {
                let mut d: Vec<Complex64> = hat
                    .iter()
                    .zip(&kv)
                    .map(|(v, k)| {
                        // the Nyquist mode has no odd-derivative partner
                        if (k[a] + kmax).abs() < 1e-12 * kmax {
                            Complex64::new(0.0, 0.0)
                        } else {
                            I * k[a] * v
                        }
                    })
                    .collect();
                fft.inverse(&mut d);
                Field::from_raw(&self.grid, d)
            })
            .collect()
    }

    pub fn laplacian(&self) -> Field {
        self.fourier_multiply(|k| Complex64::new(-norm_sq(k), 0.0))
    }

    /// `|∇f|₂²` computed in Fourier space.
    pub fn gradient_sq_norm(&self) -> f64 {
        self.gradient().iter().map(|g| g.norm_l2().powi(2)).sum()
    }

    pub fn norm_h1(&self) -> f64 {
        (self.norm_l2().powi(2) + self.gradient_sq_norm()).sqrt()
    }

    /// `| |x| f |₂` with `x` measured from the box center.
    pub fn weighted_norm(&self) -> f64 {
        let s: f64 = self
            .grid
            .radius_sq()
            .iter()
            .zip(&self.values)
            .map(|(r2, v)| r2 * v.norm_sqr())
            .sum();
        (s * self.grid.cell_volume()).sqrt()
    }

    /// Σ-norm: `|f|_{H¹} + | |x| f |₂`.
    pub fn norm_sigma(&self) -> f64 {
        self.norm_h1() + self.weighted_norm()
    }

    /// Fraction of `|f|₂²` carried by modes with some `|k_j|` above two thirds of `k_max`.
    pub fn spectral_tail_fraction(&self) -> f64 {
        let hat = self.spectrum();
        let cut = 2.0 / 3.0 * self.grid.k_max();
        let dim = self.grid.dim();
        let mut tail = 0.0;
        let mut total = 0.0;
        for (v, k) in hat.iter().zip(self.grid.wavevectors()) {
            let e = v.norm_sqr();
            total += e;
            if k[..dim].iter().any(|kj| kj.abs() > cut) {
                tail += e;
            }
        }
        if total > 0.0 {
            tail / total
        } else {
            0.0
        }
    }

    /// Fraction of `|f|₂²` located at `|x| ≥ radius`.
    pub fn mass_fraction_outside(&self, radius: f64) -> f64 {
        let r2 = radius * radius;
        let mut out = 0.0;
        let mut total = 0.0;
        for (v, x2) in self.values.iter().zip(self.grid.radius_sq()) {
            let e = v.norm_sqr();
            total += e;
            if x2 >= r2 {
                out += e;
            }
        }
        if total > 0.0 {
            out / total
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn gaussian(g: &Grid) -> Field {
        Field::from_fn(g, |x| c((-norm_sq(x) / 2.0).exp()))
    }

    #[test]
    fn lp_norms() {
        let g = Grid::new(1, 256, 40.0).unwrap();
        assert_eq!(Field::zeros(&g).norm_lp(3.0).unwrap(), 0.0);
        let cst = Field::from_fn(&g, |_| Complex64::new(0.6, 0.8) * 2.0);
        assert!((cst.norm_lp(2.0).unwrap() - 2.0 * 40f64.sqrt()).abs() < 1e-12);
        let gs = gaussian(&g);
        assert!((gs.norm_lp(2.0).unwrap() - PI.powf(0.25)).abs() < 1e-10);
        assert!(matches!(gs.norm_lp(0.5), Err(Error::InvalidExponent(_))));
        assert_eq!(gs.norm_lp(f64::INFINITY).unwrap(), 1.0);
        let g2 = Grid::new(2, 16, 4.0).unwrap();
        let cst2 = Field::from_fn(&g2, |_| c(-3.0));
        assert!((cst2.norm_lp(2.0).unwrap() - 3.0 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn h1_sigma_norms() {
        let g = Grid::new(1, 256, 40.0).unwrap();
        let k = 2.0 * PI * 3.0 / 40.0;
        let pw = Field::from_fn(&g, |x| Complex64::from_polar(2.0, k * x[0]));
        let expect = 2.0 * 40f64.sqrt() * (1.0 + k * k).sqrt();
        assert!((pw.norm_h1() - expect).abs() < 1e-10 * expect);
        assert_eq!(Field::zeros(&g).norm_sigma(), 0.0);
        // e^{-x²/2}: |f|² = √π, |f'|² = √π/2, |x f|² = √π/2
        let gs = gaussian(&g);
        let sp = PI.sqrt();
        let expect = (1.5 * sp).sqrt() + (0.5 * sp).sqrt();
        assert!((gs.norm_sigma() - expect).abs() < 1e-10);
    }

    #[test]
    fn derivatives() {
        let g = Grid::new(1, 256, 40.0).unwrap();
        let cst = Field::from_fn(&g, |_| c(1.5));
        for d in cst.gradient() {
            assert!(d.sup_norm() < 1e-14);
        }
        let k = 2.0 * PI * 5.0 / 40.0;
        let pw = Field::from_fn(&g, |x| Complex64::from_polar(1.0, k * x[0]));
        let dx = &pw.gradient()[0];
        let expect = pw.scale(I * k);
        assert!(dx.sub(&expect).unwrap().sup_norm() < 1e-12);
        let lap = pw.laplacian();
        assert!(lap.sub(&pw.scale(c(-k * k))).unwrap().sup_norm() < 1e-12);
        let gs = gaussian(&g);
        let exact = Field::from_fn(&g, |x| c((x[0] * x[0] - 1.0) * (-x[0] * x[0] / 2.0).exp()));
        assert!(gs.laplacian().sub(&exact).unwrap().sup_norm() < 1e-8);
    }

    #[test]
    fn laplacian_3d_gaussian() {
        let g = Grid::new(3, 32, 16.0).unwrap();
        let gs = gaussian(&g);
        let exact = Field::from_fn(&g, |x| {
            let r2 = norm_sq(x);
            c((r2 - 3.0) * (-r2 / 2.0).exp())
        });
        assert!(gs.laplacian().sub(&exact).unwrap().sup_norm() < 1e-6);
    }

    #[test]
    fn parseval() {
        let g = Grid::new(2, 16, 7.0).unwrap();
        let f = Field::from_fn(&g, |x| Complex64::new((x[0] * 1.3).sin(), x[1].cos() * x[0]));
        let spec: f64 = f.spectrum().iter().map(|v| v.norm_sqr()).sum();
        let l2 = f.norm_l2();
        assert!((spec.sqrt() - l2).abs() < 1e-12 * l2);
    }
}
