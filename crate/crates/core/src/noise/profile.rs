use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Spatial factor `φ_k(x) = amp · f(|x|²)` with a real radial shape `f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialProfile {
    Constant { re: f64, im: f64 },
    GaussianDecay { re: f64, im: f64, width: f64 },
    InversePoly { re: f64, im: f64, power: f64 },
}

/// `[f, f', f'', f''']` in the variable `s = |x|²`.
pub(crate) type Jet = [f64; 4];

impl SpatialProfile {
    pub fn constant(v: Complex64) -> Self {
        SpatialProfile::Constant { re: v.re, im: v.im }
    }

    pub fn gaussian_decay(amp: Complex64, width: f64) -> Self {
        SpatialProfile::GaussianDecay {
            re: amp.re,
            im: amp.im,
            width,
        }
    }

    pub fn inverse_poly(amp: Complex64, power: f64) -> Self {
        SpatialProfile::InversePoly {
            re: amp.re,
            im: amp.im,
            power,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SpatialProfile::GaussianDecay { width, .. } if !(width > 0.0) => {
                Err(Error::Config(format!("gaussian_decay width {width} must be positive")))
            }
            SpatialProfile::InversePoly { power, .. } if !(power >= 3.0) => {
                Err(Error::Config(format!("inverse_poly power {power} must be >= 3")))
            }
            _ => Ok(()),
        }
    }

    pub fn amplitude(&self) -> Complex64 {
        match *self {
            SpatialProfile::Constant { re, im }
            | SpatialProfile::GaussianDecay { re, im, .. }
            | SpatialProfile::InversePoly { re, im, .. } => Complex64::new(re, im),
        }
    }

    pub fn with_amplitude(&self, amp: Complex64) -> Self {
        match *self {
            SpatialProfile::Constant { .. } => Self::constant(amp),
            SpatialProfile::GaussianDecay { width, .. } => Self::gaussian_decay(amp, width),
            SpatialProfile::InversePoly { power, .. } => Self::inverse_poly(amp, power),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, SpatialProfile::Constant { .. })
    }

    /// `Re φ_k ≡ 0`.
    pub fn is_conservative(&self) -> bool {
        self.amplitude().re == 0.0
    }

    pub(crate) fn jet(&self, s: f64) -> Jet {
        match *self {
            SpatialProfile::Constant { .. } => [1.0, 0.0, 0.0, 0.0],
            SpatialProfile::GaussianDecay { width, .. } => {
                let a = 1.0 / (2.0 * width * width);
                let f = (-a * s).exp();
                [f, -a * f, a * a * f, -a * a * a * f]
            }
            SpatialProfile::InversePoly { power, .. } => {
                let q = power / 2.0;
                let u = 1.0 + s;
                let f = u.powf(-q);
                [
                    f,
                    -q * f / u,
                    q * (q + 1.0) * f / (u * u),
                    -q * (q + 1.0) * (q + 2.0) * f / (u * u * u),
                ]
            }
        }
    }

    pub fn value(&self, x: &[f64; 3]) -> Complex64 {
        self.derivative(x, &[])
    }

    /// `∂^γ φ_k(x)` for a multi-index given as a list of axes, `|γ| ≤ 3`.
    pub fn derivative(&self, x: &[f64; 3], axes: &[usize]) -> Complex64 {
        let s = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        self.amplitude() * radial_derivative(&self.jet(s), x, axes)
    }

    /// `∂^γ [(Re φ_k) φ_k](x)`.
    pub fn product_derivative(&self, x: &[f64; 3], axes: &[usize]) -> Complex64 {
        let s = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        let amp = self.amplitude();
        amp * amp.re * radial_derivative(&square_jet(&self.jet(s)), x, axes)
    }
}

pub(crate) fn square_jet(j: &Jet) -> Jet {
    let [f, f1, f2, f3] = *j;
    [
        f * f,
        2.0 * f * f1,
        2.0 * f1 * f1 + 2.0 * f * f2,
        6.0 * f1 * f2 + 2.0 * f * f3,
    ]
}

fn delta(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

/// Cartesian derivative of `x ↦ f(|x|²)` from its radial jet.
pub(crate) fn radial_derivative(j: &Jet, x: &[f64; 3], axes: &[usize]) -> f64 {
    match *axes {
        [] => j[0],
        [a] => 2.0 * x[a] * j[1],
        [a, b] => 2.0 * delta(a, b) * j[1] + 4.0 * x[a] * x[b] * j[2],
        [a, b, c] => {
            4.0 * (delta(a, b) * x[c] + delta(a, c) * x[b] + delta(b, c) * x[a]) * j[2]
                + 8.0 * x[a] * x[b] * x[c] * j[3]
        }
        _ => panic!("derivatives beyond third order are not provided"),
    }
}

/// Temporal factor `g_k(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TemporalProfile {
    /// `g ≡ c0`.
    Constant { c0: f64 },
    /// `g = c` on `[0, t0)`, zero afterwards.
    Compact { c: f64, t0: f64 },
    /// `g = c (1+t)^{-rate}`.
    PolyDecay { c: f64, rate: f64 },
    /// `g = c e^{-rate t}`.
    ExpDecay { c: f64, rate: f64 },
}

impl TemporalProfile {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TemporalProfile::Constant { c0 } if !(c0 > 0.0) => {
                Err(Error::Config(format!("constant profile needs c0 > 0, got {c0}")))
            }
            TemporalProfile::Compact { t0, .. } if !(t0 >= 0.0) => {
                Err(Error::Config(format!("compact profile needs t0 >= 0, got {t0}")))
            }
            TemporalProfile::PolyDecay { rate, .. } if !(rate > 2.5) => {
                Err(Error::Config(format!("poly_decay needs rate > 5/2, got {rate}")))
            }
            TemporalProfile::ExpDecay { rate, .. } if !(rate > 0.0) => {
                Err(Error::Config(format!("exp_decay needs rate > 0, got {rate}")))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            TemporalProfile::Constant { c0 } => c0,
            TemporalProfile::Compact { c, t0 } => {
                if t < t0 {
                    c
                } else {
                    0.0
                }
            }
            TemporalProfile::PolyDecay { c, rate } => c * (1.0 + t).powf(-rate),
            TemporalProfile::ExpDecay { c, rate } => c * (-rate * t).exp(),
        }
    }

    /// `∫_T^∞ g²(s) ds` in closed form.
    pub fn tail_sq(&self, t: f64) -> f64 {
        match *self {
            TemporalProfile::Constant { .. } => f64::INFINITY,
            TemporalProfile::Compact { c, t0 } => c * c * (t0 - t).max(0.0),
            TemporalProfile::PolyDecay { c, rate } => {
                c * c * (1.0 + t).powf(1.0 - 2.0 * rate) / (2.0 * rate - 1.0)
            }
            TemporalProfile::ExpDecay { c, rate } => c * c * (-2.0 * rate * t).exp() / (2.0 * rate),
        }
    }

    /// `inf_t g(t) > 0`.
    pub fn bounded_below(&self) -> bool {
        matches!(*self, TemporalProfile::Constant { c0 } if c0 > 0.0)
    }

    /// `∫₀^∞ (1+s⁴) g²(s) ds < ∞`.
    pub fn quartic_moment_finite(&self) -> bool {
        match *self {
            TemporalProfile::Constant { .. } => false,
            TemporalProfile::PolyDecay { rate, .. } => rate > 2.5,
            _ => true,
        }
    }

    /// `(1-t)^{-3} (τ ln ln τ^{-1})^{1/2}` with `τ = ∫_{t/(1-t)}^∞ g²`; the inner
    /// argument of `ln ln` is clamped below at `e`.
    pub fn ilog_diagnostic(&self, t: f64) -> f64 {
        if !(0.0..1.0).contains(&t) {
            return f64::NAN;
        }
        let tau = self.tail_sq(t / (1.0 - t));
        if tau == 0.0 {
            return 0.0;
        }
        let arg = (1.0 / tau).max(std::f64::consts::E);
        (1.0 - t).powi(-3) * (tau * arg.ln().ln()).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(p: &SpatialProfile, x: [f64; 3], axes: &[usize], product: bool) -> Complex64 {
        // central difference of one order lower, along the last axis
        let (&last, rest) = axes.split_last().unwrap();
        let h = 1e-5;
        let mut xp = x;
        let mut xm = x;
        xp[last] += h;
        xm[last] -= h;
        let ev = |y: &[f64; 3]| {
            if product {
                p.product_derivative(y, rest)
            } else {
                p.derivative(y, rest)
            }
        };
        (ev(&xp) - ev(&xm)) / (2.0 * h)
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let profiles = [
            SpatialProfile::gaussian_decay(Complex64::new(0.7, -0.4), 1.3),
            SpatialProfile::inverse_poly(Complex64::new(-0.2, 1.1), 3.5),
        ];
        let x = [0.4, -0.9, 0.3];
        let multi: [&[usize]; 6] = [&[0], &[1], &[0, 0], &[0, 2], &[1, 1, 2], &[0, 1, 2]];
        for p in &profiles {
            for axes in multi {
                for product in [false, true] {
                    let an = if product {
                        p.product_derivative(&x, axes)
                    } else {
                        p.derivative(&x, axes)
                    };
                    let num = fd(p, x, axes, product);
                    assert!((an - num).norm() < 1e-7, "{p:?} {axes:?} {an} {num}");
                }
            }
        }
    }

    #[test]
    fn constant_profile_is_flat() {
        let p = SpatialProfile::constant(Complex64::new(2.0, 0.5));
        assert_eq!(p.value(&[1.0, 2.0, 3.0]), Complex64::new(2.0, 0.5));
        assert_eq!(p.derivative(&[1.0, 2.0, 3.0], &[0, 1]), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn temporal_tails() {
        let e = TemporalProfile::ExpDecay { c: 0.5, rate: 1.5 };
        assert!((e.tail_sq(0.0) - 0.25 / 3.0).abs() < 1e-15);
        let p = TemporalProfile::PolyDecay { c: 1.0, rate: 3.0 };
        assert!((p.tail_sq(1.0) - 2f64.powi(-5) / 5.0).abs() < 1e-15);
        let c = TemporalProfile::Compact { c: 2.0, t0: 1.0 };
        assert_eq!(c.tail_sq(3.0), 0.0);
        assert_eq!(c.tail_sq(0.5), 2.0);
        assert!(TemporalProfile::PolyDecay { c: 1.0, rate: 2.0 }.validate().is_err());
        assert!(e.ilog_diagnostic(0.5).is_finite());
        assert_eq!(c.ilog_diagnostic(0.9), 0.0);
    }
}
