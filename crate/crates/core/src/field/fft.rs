use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Grid;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Separable n-d FFT with its own scratch; one per worker.
pub struct FftNd {
    n: usize,
    dim: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    lines: Vec<Complex64>,
}

impl FftNd {
    pub fn new(grid: &Grid) -> Self {
        let n = grid.n();
        let (fwd, inv) = PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            (p.plan_fft_forward(n), p.plan_fft_inverse(n))
        });
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        Self {
            n,
            dim: grid.dim(),
            fwd,
            inv,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            lines: Vec::new(),
        }
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        let plan = self.fwd.clone();
        self.apply(data, plan.as_ref());
    }

    /// Inverse transform normalized by `1/n^d`, in place.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        let plan = self.inv.clone();
        self.apply(data, plan.as_ref());
        let s = 1.0 / data.len() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    fn apply(&mut self, data: &mut [Complex64], plan: &dyn Fft<f64>) {
        let n = self.n;
        for axis in 0..self.dim {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            if stride == 1 {
                plan.process_with_scratch(data, &mut self.scratch);
                continue;
            }
            let block = n * stride;
            self.lines.resize(block, Complex64::new(0.0, 0.0));
            for chunk in data.chunks_exact_mut(block) {
                for i in 0..stride {
                    for j in 0..n {
                        self.lines[i * n + j] = chunk[j * stride + i];
                    }
                }
                plan.process_with_scratch(&mut self.lines, &mut self.scratch);
                for i in 0..stride {
                    for j in 0..n {
                        chunk[j * stride + i] = self.lines[i * n + j];
                    }
                }
            }
        }
    }

    /// `data ← F⁻¹[m(k) F[data]]`.
    pub fn apply_multiplier(&mut self, data: &mut [Complex64], multiplier: &[Complex64]) {
        self.forward(data);
        for (v, m) in data.iter_mut().zip(multiplier) {
            *v *= m;
        }
        self.inverse(data);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_3d() {
        let g = Grid::new(3, 8, 5.0).unwrap();
        let data: Vec<Complex64> = (0..g.len())
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut work = data.clone();
        let mut fft = FftNd::new(&g);
        fft.forward(&mut work);
        fft.inverse(&mut work);
        for (a, b) in data.iter().zip(&work) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn axis_mode_lands_in_right_bin() {
        // e^{i 2π x_1 / L} along the middle axis of a 3-d grid
        let g = Grid::new(3, 8, 8.0).unwrap();
        let k0 = 2.0 * std::f64::consts::PI / 8.0;
        let mut data: Vec<Complex64> = g
            .positions()
            .iter()
            .map(|p| Complex64::from_polar(1.0, k0 * p[1]))
            .collect();
        FftNd::new(&g).forward(&mut data);
        let kv = g.wavevectors();
        for (v, k) in data.iter().zip(&kv) {
            if (k[1] - k0).abs() < 1e-12 && k[0] == 0.0 && k[2] == 0.0 {
                assert!((v.norm() - g.len() as f64).abs() < 1e-9);
            } else {
                assert!(v.norm() < 1e-9);
            }
        }
    }
}
