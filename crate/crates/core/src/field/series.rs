use num_complex::Complex64;
use serde::Serialize;

use super::fft::FftNd;
use super::{Field, Grid};
use crate::{Error, Result};

/// Snapshots `u(t_i)` on one grid at strictly increasing times.
#[derive(Clone, Debug, Default)]
pub struct SpaceTimeSeries {
    times: Vec<f64>,
    fields: Vec<Field>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BandContribution {
    pub k: i32,
    /// `2^{±k} ‖S_k u‖²` for this band.
    pub weighted_sq: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LsNorm {
    pub value: f64,
    pub bands: Vec<BandContribution>,
}

/// Interpolation-inequality quantities on a slab: `‖|f|^{α-1} g‖_{L^{p₁'}}`, `‖f‖_{L^{p₁}}`,
/// `‖f‖_{L^{q₂}W^{1,p₂}}`, `‖g‖_{L^{p₁}}`, and the implied constant.
#[derive(Clone, Debug, Serialize)]
pub struct InterH1Report {
    pub lhs: f64,
    pub f_p1: f64,
    pub f_q2_w1p2: f64,
    pub g_p1: f64,
    pub implied_constant: f64,
}

impl SpaceTimeSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, f: Field) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(Error::InvalidArgument(format!(
                    "snapshot time {t} not after {last}"
                )));
            }
            self.fields[0].check_grid(&f)?;
        }
        self.times.push(t);
        self.fields.push(f);
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, &Field)> {
        self.times.last().map(|&t| (t, self.fields.last().unwrap()))
    }

    pub fn grid(&self) -> Option<&Grid> {
        self.fields.first().map(|f| f.grid())
    }

    fn need_two(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::InvalidArgument(
                "space-time quadrature needs at least two snapshots".into(),
            ));
        }
        Ok(())
    }

    /// Trapezoid rule in time of `a(t_i)`.
    fn trapezoid(&self, a: &[f64]) -> f64 {
        self.times
            .windows(2)
            .zip(a.windows(2))
            .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
            .sum()
    }

    /// `‖u‖_{L^q_t L^p_x}`: trapezoid in time of `|u(t)|_p^q`, then the `1/q` power.
    pub fn spacetime_norm(&self, p: f64, q: f64) -> Result<f64> {
        self.need_two()?;
        if q.is_nan() || q < 1.0 {
            return Err(Error::InvalidExponent(q));
        }
        let norms = self
            .fields
            .iter()
            .map(|f| f.norm_lp(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(time_norm(self, &norms, q))
    }

    /// Truncated local smoothing norm over bands `k ∈ [-K, K]`.
    pub fn local_smoothing_norm(&self, band_range: u32) -> Result<LsNorm> {
        self.ls_generic(band_range, false)
    }

    /// Truncated dual local smoothing norm over bands `k ∈ [-K, K]`.
    pub fn local_smoothing_dual_norm(&self, band_range: u32) -> Result<LsNorm> {
        self.ls_generic(band_range, true)
    }

    fn ls_generic(&self, band_range: u32, dual: bool) -> Result<LsNorm> {
        if band_range < 1 {
            return Err(Error::InvalidArgument("band range K must be >= 1".into()));
        }
        self.need_two()?;
        let grid = self.fields[0].grid().clone();
        let r: Vec<f64> = grid.radius_sq().iter().map(|r2| r2.sqrt()).collect();
        let kabs: Vec<f64> = grid.wavenumber_sq().iter().map(|k2| k2.sqrt()).collect();
        let rmax = (grid.dim() as f64).sqrt() * grid.length() / 2.0;
        let jmax = rmax.log2().floor().max(1.0) as i32;
        let mut fft = FftNd::new(&grid);
        let hats: Vec<Vec<Complex64>> = self
            .fields
            .iter()
            .map(|f| {
                let mut h = f.values().to_vec();
                fft.forward(&mut h);
                h
            })
            .collect();
        let vol = grid.cell_volume();
        let k = band_range as i32;
        let mut bands = Vec::with_capacity(2 * band_range as usize + 1);
        let mut total = 0.0;
        for kk in -k..=k {
            let cutoff: Vec<f64> = kabs.iter().map(|&a| band_cutoff(a, kk)).collect();
            if cutoff.iter().all(|&c| c == 0.0) {
                bands.push(BandContribution { k: kk, weighted_sq: 0.0 });
                continue;
            }
            // shell integrals ∫∫ w |S_k u|², inner regions first
            let nshell = (jmax + 2) as usize;
            let mut per_time = vec![vec![0.0; nshell + 1]; self.len()];
            for (ti, h) in hats.iter().enumerate() {
                let mut band: Vec<Complex64> =
                    h.iter().zip(&cutoff).map(|(v, c)| v * c).collect();
                fft.inverse(&mut band);
                for (v, &rr) in band.iter().zip(&r) {
                    let e = v.norm_sqr() * vol;
                    accumulate_shells(&mut per_time[ti], e, rr, kk, dual);
                }
            }
            let integ: Vec<f64> = (0..=nshell)
                .map(|s| self.trapezoid(&per_time.iter().map(|p| p[s]).collect::<Vec<_>>()))
                .collect();
            let norm_k = combine_shells(&integ, kk, dual);
            let w = if dual { 2f64.powi(-kk) } else { 2f64.powi(kk) };
            let contrib = w * norm_k * norm_k;
            total += contrib;
            bands.push(BandContribution {
                k: kk,
                weighted_sq: contrib,
            });
        }
        Ok(LsNorm {
            value: total.sqrt(),
            bands,
        })
    }

    /// Measures the three norms of the `H¹` interpolation inequality for the
    /// pair `(f, g)` of series on the same times; `d ≥ 3`.
    pub fn inter_h1_report(&self, g: &SpaceTimeSeries, alpha: f64) -> Result<InterH1Report> {
        self.need_two()?;
        if g.times != self.times {
            return Err(Error::InvalidArgument("series use different times".into()));
        }
        let grid = self.fields[0].grid().clone();
        let d = grid.dim() as f64;
        if d < 3.0 {
            return Err(Error::InvalidArgument("the inequality needs d >= 3".into()));
        }
        let p1 = 2.0 + 4.0 / d;
        let p1d = 2.0 * (d + 2.0) / (d + 4.0);
        let p2 = 2.0 * d * (d + 2.0) / (d * d + 4.0);
        let q2 = 2.0 * (d + 2.0) / (d - 2.0);
        let mut lhs_t = Vec::new();
        let mut f_w1 = Vec::new();
        for (f, gg) in self.fields.iter().zip(&g.fields) {
            let prod = f.zip_map(gg, |a, b| b * a.norm().powf(alpha - 1.0))?;
            lhs_t.push(prod.norm_lp(p1d)?);
            let grad = f.gradient();
            let gabs = Field::from_raw(
                &grid,
                (0..grid.len())
                    .map(|i| {
                        let s: f64 = grad.iter().map(|c| c.values()[i].norm_sqr()).sum();
                        Complex64::new(s.sqrt(), 0.0)
                    })
                    .collect(),
            );
            f_w1.push(f.norm_lp(p2)? + gabs.norm_lp(p2)?);
        }
        let lhs = time_norm(self, &lhs_t, p1d);
        let f_p1 = self.spacetime_norm(p1, p1)?;
        let f_q2_w1p2 = time_norm(self, &f_w1, q2);
        let g_p1 = g.spacetime_norm(p1, p1)?;
        let e1 = 2.0 - (alpha - 1.0) * (d - 2.0) / 2.0;
        let e2 = d * (alpha - 1.0) / 2.0 - 2.0;
        let rhs = f_p1.powf(e1) * f_q2_w1p2.powf(e2) * g_p1;
        Ok(InterH1Report {
            lhs,
            f_p1,
            f_q2_w1p2,
            g_p1,
            implied_constant: if rhs > 0.0 { lhs / rhs } else { 0.0 },
        })
    }
}

fn time_norm(s: &SpaceTimeSeries, norms: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        return norms.iter().copied().fold(0.0, f64::max);
    }
    let pw: Vec<f64> = norms.iter().map(|n| n.powf(q)).collect();
    s.trapezoid(&pw).powf(1.0 / q)
}

/// Raised-cosine dyadic cutoff: `cos²(π/2 (log₂|ξ| - k))` on `|log₂|ξ| - k| < 1`.
/// The family sums to one on `ξ ≠ 0`; the zero mode belongs to no band.
pub fn band_cutoff(xi: f64, k: i32) -> f64 {
    if xi <= 0.0 {
        return 0.0;
    }
    let u = xi.log2() - k as f64;
    if u.abs() >= 1.0 {
        0.0
    } else {
        (std::f64::consts::FRAC_PI_2 * u).cos().powi(2)
    }
}

// Slot 0: inner region (D_0 for k ≥ 0, D_{<-k} for k < 0); slot j ≥ 1: shell D_j
// weighted per the band.
fn accumulate_shells(acc: &mut [f64], e: f64, r: f64, k: i32, dual: bool) {
    let nshell = acc.len() - 1;
    let inner_radius = if k >= 0 { 2.0 } else { 2f64.powi(-k) };
    if r <= inner_radius {
        acc[0] += e;
    }
    let j = if r < 2.0 { 0 } else { r.log2().floor() as usize };
    if j >= 1 && j <= nshell {
        let base = if k >= 0 { (1.0 + r * r).sqrt() } else { r + 2f64.powi(-k) };
        let w = if dual { base } else { 1.0 / base };
        acc[j] += w * e;
    }
}

fn combine_shells(integ: &[f64], k: i32, dual: bool) -> f64 {
    let jmin = if k >= 0 { 1 } else { (-k) as usize };
    let inner = integ[0].sqrt();
    let shells = integ.iter().skip(jmin.max(1)).map(|v| v.sqrt());
    let outer = if dual {
        shells.sum::<f64>()
    } else {
        shells.fold(0.0, f64::max)
    };
    let pref = if k >= 0 {
        1.0
    } else if dual {
        2f64.powf(-(k as f64) / 2.0)
    } else {
        2f64.powf(k as f64 / 2.0)
    };
    pref * inner + outer
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use std::f64::consts::PI;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn cutoffs_partition_unity() {
        for &xi in &[0.01, 0.3, 1.0, 1.7, 5.0, 100.0] {
            let s: f64 = (-12..=12).map(|k| band_cutoff(xi, k)).sum();
            assert!((s - 1.0).abs() < 1e-14, "xi = {xi}: {s}");
        }
        assert_eq!(band_cutoff(0.0, 0), 0.0);
    }

    #[test]
    fn spacetime_basics() {
        let g = Grid::new(1, 64, 20.0).unwrap();
        let mut s = SpaceTimeSeries::new();
        s.push(0.0, Field::zeros(&g)).unwrap();
        assert!(s.spacetime_norm(2.0, 2.0).is_err());
        s.push(1.0, Field::zeros(&g)).unwrap();
        assert_eq!(s.spacetime_norm(6.0, 6.0).unwrap(), 0.0);
        assert!(s.push(0.5, Field::zeros(&g)).is_err());
        let f = Field::from_fn(&g, |x| c((-x[0] * x[0]).exp()));
        let mut s2 = SpaceTimeSeries::new();
        for t in [0.0, 0.5, 2.0] {
            s2.push(t, f.clone()).unwrap();
        }
        let v = s2.spacetime_norm(3.0, f64::INFINITY).unwrap();
        assert!((v - f.norm_lp(3.0).unwrap()).abs() < 1e-15);
        assert_eq!(s.local_smoothing_norm(3).unwrap().value, 0.0);
    }

    #[test]
    fn free_gaussian_l6() {
        // u(t) = e^{-itΔ} e^{-x²/2}: |u(t,x)| = (1+4t²)^{-1/4} e^{-x²/(2(1+4t²))}
        // so |u(t)|_6^6 = (1+4t²)^{-3/2} √(π(1+4t²)/3)
        let g = Grid::new(1, 1024, 160.0).unwrap();
        let u0 = Field::from_fn(&g, |x| c((-x[0] * x[0] / 2.0).exp()));
        let mut s = SpaceTimeSeries::new();
        let nt = 400;
        for i in 0..=nt {
            let t = 10.0 * i as f64 / nt as f64;
            s.push(t, u0.fourier_multiply(|k| Complex64::from_polar(1.0, k[0] * k[0] * t)))
                .unwrap();
        }
        let num = s.spacetime_norm(6.0, 6.0).unwrap();
        // closed-form oracle, fine Simpson quadrature in time
        let m = 20000;
        let h = 10.0 / m as f64;
        let w = |t: f64| {
            let a = 1.0 + 4.0 * t * t;
            a.powf(-1.5) * (PI * a / 3.0).sqrt()
        };
        let mut acc = w(0.0) + w(10.0);
        for i in 1..m {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * w(i as f64 * h);
        }
        let exact = (acc * h / 3.0).powf(1.0 / 6.0);
        assert!((num - exact).abs() < 0.01 * exact, "{num} vs {exact}");
    }

    #[test]
    fn single_band_concentration() {
        let g = Grid::new(1, 256, 64.0).unwrap();
        let k0 = 2i32;
        let xi = 2f64.powi(k0);
        // Gaussian envelope keeps the spectrum inside one octave around 2^{k0}
        let f = Field::from_fn(&g, |x| Complex64::from_polar((-x[0] * x[0] / 50.0).exp(), xi * x[0]));
        let mut s = SpaceTimeSeries::new();
        s.push(0.0, f.clone()).unwrap();
        s.push(1.0, f).unwrap();
        let ls = s.local_smoothing_norm(6).unwrap();
        let total: f64 = ls.bands.iter().map(|b| b.weighted_sq).sum();
        let near: f64 = ls
            .bands
            .iter()
            .filter(|b| (b.k - k0).abs() <= 1)
            .map(|b| b.weighted_sq)
            .sum();
        assert!(near >= 0.95 * total);
        let d = s.local_smoothing_dual_norm(6).unwrap();
        assert!(d.value > 0.0);
    }
}
