use std::sync::Arc;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Standard normal draw addressed by `(seed, channel, level, cell)`.
///
/// The ChaCha key comes from `seed`, the stream from `(channel, level)` and the
/// word position from `cell`, so every draw is independent of evaluation order.
pub fn counter_normal(seed: u64, channel: u32, level: i32, cell: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = ((channel as u64) << 32) | ((level as i64 + (1 << 20)) as u64 & 0xffff_ffff);
    rng.set_stream(stream);
    rng.set_word_pos(cell as u128 * 4);
    let a = rng.next_u64();
    let b = rng.next_u64();
    let u1 = ((a >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// SplitMix64 finalizer, used to derive per-path seeds from a master seed.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Increasing mesh `0 = t₀ < t₁ < … < t_M`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeMesh {
    times: Arc<Vec<f64>>,
}

impl TimeMesh {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::InvalidArgument("mesh must start at 0 and have a cell".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::InvalidArgument("mesh times must increase strictly".into()));
        }
        Ok(Self {
            times: Arc::new(times),
        })
    }

    pub fn uniform(horizon: f64, cells: usize) -> Result<Self> {
        if cells == 0 || !(horizon > 0.0) {
            return Err(Error::InvalidArgument("uniform mesh needs cells > 0, horizon > 0".into()));
        }
        let h = horizon / cells as f64;
        let mut t: Vec<f64> = (0..=cells).map(|i| i as f64 * h).collect();
        t[cells] = horizon;
        Self::new(t)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn cells(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn cell_width(&self, m: usize) -> f64 {
        self.times[m + 1] - self.times[m]
    }

    /// Common cell width if the mesh is uniform to relative `1e-9`.
    pub fn uniform_step(&self) -> Option<f64> {
        let h = self.horizon() / self.cells() as f64;
        self.times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h)
            .then_some(h)
    }

    fn refined(&self) -> TimeMesh {
        let mut t = Vec::with_capacity(2 * self.times.len() - 1);
        for w in self.times.windows(2) {
            t.push(w[0]);
            t.push(0.5 * (w[0] + w[1]));
        }
        t.push(self.horizon());
        TimeMesh { times: Arc::new(t) }
    }

    fn coarsened(&self) -> TimeMesh {
        TimeMesh {
            times: Arc::new(self.times.iter().step_by(2).copied().collect()),
        }
    }

    /// Locates `t`: cell index and fraction within the cell.
    pub(crate) fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let h = self.horizon();
        if t > h * (1.0 + 1e-12) || t < 0.0 {
            return Err(Error::BeyondHorizon { t, horizon: h });
        }
        let times = &self.times;
        let m = match times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => return Ok((i.min(times.len() - 2), if i == times.len() - 1 { 1.0 } else { 0.0 })),
            Err(i) => i.saturating_sub(1).min(times.len() - 2),
        };
        let frac = ((t - times[m]) / (times[m + 1] - times[m])).clamp(0.0, 1.0);
        Ok((m, frac))
    }
}

/// Brownian increments on a mesh with seeded, order-independent sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath {
    mesh: TimeMesh,
    increments: Vec<f64>,
    seed: u64,
    channel: u32,
    level: i32,
    parent: Option<Arc<BrownianPath>>,
}

impl BrownianPath {
    /// Increments `√Δt_m · ξ(seed, channel, 0, m)`.
    pub fn sample(mesh: &TimeMesh, seed: u64, channel: u32) -> Self {
        let increments = (0..mesh.cells())
            .map(|m| mesh.cell_width(m).sqrt() * counter_normal(seed, channel, 0, m as u64))
            .collect();
        Self {
            mesh: mesh.clone(),
            increments,
            seed,
            channel,
            level: 0,
            parent: None,
        }
    }

    /// Path with prescribed increments (a frozen path).
    pub fn from_increments(mesh: &TimeMesh, increments: Vec<f64>, channel: u32) -> Result<Self> {
        if increments.len() != mesh.cells() {
            return Err(Error::InvalidArgument(format!(
                "{} increments for {} cells",
                increments.len(),
                mesh.cells()
            )));
        }
        Ok(Self {
            mesh: mesh.clone(),
            increments,
            seed: 0,
            channel,
            level: 0,
            parent: None,
        })
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn channel(&self) -> u32 {
        self.channel
    }

    pub fn level(&self) -> i32 {
        self.level
    }

    /// Brownian-bridge midpoint refinement. Each increment `Δ` splits into
    /// `a = Δ/2 + √Δt/2·ξ`, `b = Δ - a`, with `a + b == Δ` in floating point.
    pub fn refine(&self) -> Self {
        let level = self.level + 1;
        let mut inc = Vec::with_capacity(2 * self.increments.len());
        for (m, &d) in self.increments.iter().enumerate() {
            let xi = counter_normal(self.seed, self.channel, level, m as u64);
            let a = 0.5 * d + 0.5 * self.mesh.cell_width(m).sqrt() * xi;
            let b = exact_complement(d, a);
            inc.push(a);
            inc.push(b);
        }
        Self {
            mesh: self.mesh.refined(),
            increments: inc,
            seed: self.seed,
            channel: self.channel,
            level,
            parent: Some(Arc::new(self.clone())),
        }
    }

    pub fn refine_times(&self, times: u32) -> Self {
        (0..times).fold(self.clone(), |p, _| p.refine())
    }

    /// Path on the halved mesh. A refined path returns the path it was refined
    /// from; otherwise increments are pairwise sums.
    pub fn coarsen(&self) -> Result<Self> {
        if let Some(p) = &self.parent {
            return Ok((**p).clone());
        }
        if self.increments.len() % 2 != 0 {
            return Err(Error::InvalidArgument("odd cell count cannot be coarsened".into()));
        }
        Ok(Self {
            mesh: self.mesh.coarsened(),
            increments: self.increments.chunks_exact(2).map(|c| c[0] + c[1]).collect(),
            seed: self.seed,
            channel: self.channel,
            level: self.level - 1,
            parent: None,
        })
    }

    /// `β(t_m)` at every mesh node.
    pub fn values(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.increments.len() + 1);
        out.push(0.0);
        for d in &self.increments {
            acc += d;
            out.push(acc);
        }
        out
    }
}

// b with fl(a + b) == d; b = d - a is corrected by at most a few ulps.
fn exact_complement(d: f64, a: f64) -> f64 {
    let mut b = d - a;
    for _ in 0..8 {
        let s = a + b;
        if s == d {
            return b;
        }
        b = if s < d { next_up(b) } else { next_down(b) };
    }
    b
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    f64::from_bits(if x > 0.0 { bits + 1 } else { bits - 1 })
}

fn next_down(x: f64) -> f64 {
    -next_up(-x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinism_and_independence_of_order() {
        let mesh = TimeMesh::uniform(1.0, 64).unwrap();
        let a = BrownianPath::sample(&mesh, 7, 0);
        let b = BrownianPath::sample(&mesh, 7, 0);
        assert_eq!(a, b);
        let c = BrownianPath::sample(&mesh, 7, 1);
        assert_ne!(a.increments(), c.increments());
        let single = (0.125f64 / 8.0).sqrt() * counter_normal(7, 0, 0, 9);
        assert_eq!(a.increments()[9], single);
    }

    #[test]
    fn clt_mean_bound() {
        // statistical: |mean| of 10⁵ standard normals within 4/√10⁵
        let n = 100_000u64;
        let mean: f64 = (0..n).map(|m| counter_normal(2024, 3, 0, m)).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "{mean}");
        let var: f64 = (0..n).map(|m| counter_normal(2024, 3, 0, m).powi(2)).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn refine_coarsen_identity() {
        let mesh = TimeMesh::uniform(2.0, 50).unwrap();
        let p = BrownianPath::sample(&mesh, 11, 2);
        let r = p.refine().refine();
        assert_eq!(r.increments().len(), 200);
        let back = r.coarsen().unwrap().coarsen().unwrap();
        assert_eq!(back.increments(), p.increments());
        assert_eq!(back.mesh(), p.mesh());
        // pairwise sums of the fine increments reproduce the coarse ones to rounding
        let fine = BrownianPath::from_increments(r.mesh(), r.increments().to_vec(), 2).unwrap();
        let summed = fine.coarsen().unwrap().coarsen().unwrap();
        for (a, b) in summed.increments().iter().zip(p.increments()) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn bridge_variance() {
        // fine increments of a refined path have variance Δt/2 and are uncorrelated
        let mesh = TimeMesh::uniform(1000.0, 20000).unwrap();
        let r = BrownianPath::sample(&mesh, 5, 0).refine();
        let inc = r.increments();
        let n = inc.len() as f64;
        let var: f64 = inc.iter().map(|x| x * x).sum::<f64>() / n;
        assert!((var / 0.025 - 1.0).abs() < 0.03, "{var}");
        let cov: f64 = inc.chunks_exact(2).map(|c| c[0] * c[1]).sum::<f64>() / (n / 2.0);
        assert!(cov.abs() < 0.03 * 0.025);
    }

    #[test]
    fn locate_nodes() {
        let mesh = TimeMesh::uniform(1.0, 4).unwrap();
        assert_eq!(mesh.locate(0.5).unwrap(), (2, 0.0));
        assert_eq!(mesh.locate(1.0).unwrap(), (3, 1.0));
        let (m, f) = mesh.locate(0.3).unwrap();
        assert_eq!(m, 1);
        assert!((f - 0.2).abs() < 1e-12);
        assert!(mesh.locate(1.5).is_err());
    }
}
