use crate::{Error, Result};

/// Uniform periodic grid on the cube `[-L/2, L/2)^d`, origin at the box center.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    n: usize,
    length: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!("n = {n} must be a power of two >= 8")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("box length {length} must be positive")));
        }
        Ok(Self { dim, n, length })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Number of grid points, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `dx^d`.
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    /// Largest resolvable wavenumber per axis, `π n / L`.
    pub fn k_max(&self) -> f64 {
        std::f64::consts::PI * self.n as f64 / self.length
    }

    /// Positions `(j - n/2) dx`, `j = 0..n`.
    pub fn axis_positions(&self) -> Vec<f64> {
        let dx = self.dx();
        let h = (self.n / 2) as f64;
        (0..self.n).map(|j| (j as f64 - h) * dx).collect()
    }

    /// Wavenumbers in FFT order: `(2π/L)·{0, 1, …, n/2-1, -n/2, …, -1}`.
    pub fn axis_wavenumbers(&self) -> Vec<f64> {
        let base = 2.0 * std::f64::consts::PI / self.length;
        let n = self.n as i64;
        (0..n)
            .map(|j| if j < n / 2 { j } else { j - n })
            .map(|m| m as f64 * base)
            .collect()
    }

    fn axis_indices(&self, idx: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        let mut rem = idx;
        for a in (0..self.dim).rev() {
            out[a] = rem % self.n;
            rem /= self.n;
        }
        out
    }

    fn lift(&self, axis: &[f64]) -> Vec<[f64; 3]> {
        (0..self.len())
            .map(|idx| {
                let ai = self.axis_indices(idx);
                let mut p = [0.0; 3];
                for a in 0..self.dim {
                    p[a] = axis[ai[a]];
                }
                p
            })
            .collect()
    }

    /// Position of every grid point in row-major order (unused axes are zero).
    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.lift(&self.axis_positions())
    }

    /// Wavevector of every spectral index in row-major FFT order.
    pub fn wavevectors(&self) -> Vec<[f64; 3]> {
        self.lift(&self.axis_wavenumbers())
    }

    pub fn radius_sq(&self) -> Vec<f64> {
        self.positions().iter().map(norm_sq).collect()
    }

    pub fn wavenumber_sq(&self) -> Vec<f64> {
        self.wavevectors().iter().map(norm_sq).collect()
    }

    /// Flat index of the point nearest to `x`.
    pub fn nearest_index(&self, x: &[f64]) -> usize {
        let dx = self.dx();
        let h = (self.n / 2) as f64;
        let mut idx = 0usize;
        for a in 0..self.dim {
            let xa = x.get(a).copied().unwrap_or(0.0);
            let j = (xa / dx + h).round().clamp(0.0, (self.n - 1) as f64) as usize;
            idx = idx * self.n + j;
        }
        idx
    }
}

pub(crate) fn norm_sq(p: &[f64; 3]) -> f64 {
    p[0] * p[0] + p[1] * p[1] + p[2] * p[2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(0, 16, 1.0).is_err());
        assert!(Grid::new(4, 16, 1.0).is_err());
        assert!(Grid::new(1, 12, 1.0).is_err());
        assert!(Grid::new(1, 4, 1.0).is_err());
        assert!(Grid::new(1, 16, -1.0).is_err());
    }

    #[test]
    fn positions_centered() {
        let g = Grid::new(2, 8, 8.0).unwrap();
        let p = g.positions();
        assert_eq!(p.len(), 64);
        assert_eq!(p[0], [-4.0, -4.0, 0.0]);
        assert_eq!(p[g.nearest_index(&[0.0, 0.0])], [0.0, 0.0, 0.0]);
        let k = g.axis_wavenumbers();
        assert_eq!(k[4], -std::f64::consts::PI);
        assert!((k[1] - 2.0 * std::f64::consts::PI / 8.0).abs() < 1e-15);
    }
}
