use serde::Serialize;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criticality {
    MassSub,
    MassCritical,
    InterCritical,
    EnergyCritical,
    Super,
}

/// Exponents derived from `(d, α)`. `None` marks an infinite value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExponentTable {
    pub d: usize,
    pub alpha: f64,
    pub lambda: f64,
    /// `α(d) = (2 - d + √(d² + 12d + 4)) / (2d)`.
    pub strauss: f64,
    /// `(d(α-1) - 4)/2`, so that `h(t) = (1-t)^{h_power}`.
    pub h_power: f64,
    /// `2(α² - 1)/(4 - (α-1)(d-2))`.
    pub q_tilde: Option<f64>,
    /// Hölder exponent with `1/θ = 1 - (d-2)(α-1)/4`.
    pub theta: Option<f64>,
    /// `p₁ = 2 + 4/d`.
    pub p1: f64,
    /// `p₁' = 2(d+2)/(d+4)`.
    pub p1_dual: f64,
    /// `p₂ = 2d(d+2)/(d²+4)`.
    pub p2: f64,
    /// `q₂ = 2(d+2)/(d-2)`.
    pub q2: Option<f64>,
    /// `(p, q) = (d(α+1)/(d+α-1), 4(α+1)/((d-2)(α-1)))`.
    pub local_pair: (f64, Option<f64>),
    pub criticality: Criticality,
    /// `d = 3`, the setting of the scattering results.
    pub theorem_faithful: bool,
}

fn finite(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

impl ExponentTable {
    pub fn new(d: usize, alpha: f64, lambda: f64) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidArgument(format!("dimension {d} not in 1..=3")));
        }
        if !(alpha > 1.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha = {alpha} must exceed 1")));
        }
        if !lambda.is_finite() {
            return Err(Error::InvalidArgument("lambda must be finite".into()));
        }
        let df = d as f64;
        let strauss = (2.0 - df + (df * df + 12.0 * df + 4.0).sqrt()) / (2.0 * df);
        let mass_crit = 1.0 + 4.0 / df;
        let criticality = if alpha < mass_crit {
            Criticality::MassSub
        } else if alpha == mass_crit {
            Criticality::MassCritical
        } else if d <= 2 {
            Criticality::InterCritical
        } else {
            let energy_crit = 1.0 + 4.0 / (df - 2.0);
            if alpha < energy_crit {
                Criticality::InterCritical
            } else if alpha == energy_crit {
                Criticality::EnergyCritical
            } else {
                Criticality::Super
            }
        };
        let gap = 4.0 - (alpha - 1.0) * (df - 2.0);
        Ok(Self {
            d,
            alpha,
            lambda,
            strauss,
            h_power: (df * (alpha - 1.0) - 4.0) / 2.0,
            q_tilde: finite(2.0 * (alpha * alpha - 1.0), gap),
            theta: finite(4.0, gap),
            p1: 2.0 + 4.0 / df,
            p1_dual: 2.0 * (df + 2.0) / (df + 4.0),
            p2: 2.0 * df * (df + 2.0) / (df * df + 4.0),
            q2: finite(2.0 * (df + 2.0), df - 2.0),
            local_pair: (
                df * (alpha + 1.0) / (df + alpha - 1.0),
                finite(4.0 * (alpha + 1.0), (df - 2.0) * (alpha - 1.0)),
            ),
            criticality,
            theorem_faithful: d == 3,
        })
    }

    /// `h(t) = (1-t)^{h_power}`.
    pub fn h(&self, t: f64) -> f64 {
        (1.0 - t).powf(self.h_power)
    }
}
