//! Brownian drivers, noise channels `G_k = g_k(t) φ_k(x)`, the rescaling
//! processes `φ`, `φ*` and the derived coefficient fields.

mod path;
mod profile;

pub use path::{counter_normal, mix_seed, BrownianPath, TimeMesh};
pub use profile::{SpatialProfile, TemporalProfile};

use num_complex::Complex64;
use serde::Serialize;

use crate::field::{Field, Grid};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub spatial: SpatialProfile,
    pub temporal: TemporalProfile,
    pub path: BrownianPath,
}

/// Left-point cumulative integrals `I_k(t_m) = Σ g_k(t_i)Δβ_i`, `J_k(t_m) = Σ g_k(t_i)²Δt_i`.
#[derive(Clone, Debug, PartialEq)]
struct Cumulative {
    i: Vec<f64>,
    j: Vec<f64>,
}

/// `N` noise channels sharing one Brownian mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    channels: Vec<Channel>,
    mesh: TimeMesh,
    cum: Vec<Cumulative>,
}

/// Per-time sup statistics `sup_x ⟨x⟩² |∂^β b|` (`|β| ≤ 2`) and `sup_x ⟨x⟩² |∂^γ c|` (`|γ| ≤ 1`).
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct FlatnessRow {
    pub t: f64,
    pub b: [f64; 3],
    pub c: [f64; 2],
}

/// `∂φ` up to third order at one point.
struct PhiJet {
    d1: [Complex64; 3],
    d2: [[Complex64; 3]; 3],
    d3: [[[Complex64; 3]; 3]; 3],
}

impl NoiseModel {
    pub fn new(channels: Vec<Channel>, mesh: &TimeMesh) -> Result<Self> {
        for (k, ch) in channels.iter().enumerate() {
            ch.spatial.validate()?;
            ch.temporal.validate()?;
            if ch.path.mesh() != mesh {
                return Err(Error::InvalidArgument(format!(
                    "channel {k} path lives on a different mesh"
                )));
            }
        }
        let cum = channels
            .iter()
            .map(|ch| {
                let mut i = vec![0.0];
                let mut j = vec![0.0];
                for (m, d) in ch.path.increments().iter().enumerate() {
                    let g = ch.temporal.value(mesh.times()[m]);
                    i.push(i[m] + g * d);
                    j.push(j[m] + g * g * mesh.cell_width(m));
                }
                Cumulative { i, j }
            })
            .collect();
        Ok(Self {
            channels,
            mesh: mesh.clone(),
            cum,
        })
    }

    /// Model without noise on `[0, horizon]`.
    pub fn silent(horizon: f64) -> Result<Self> {
        Self::new(Vec::new(), &TimeMesh::uniform(horizon, 1)?)
    }

    /// Channel `k` driven by `BrownianPath::sample(mesh, seed, k)`.
    pub fn sampled(
        profiles: Vec<(SpatialProfile, TemporalProfile)>,
        mesh: &TimeMesh,
        seed: u64,
    ) -> Result<Self> {
        let channels = profiles
            .into_iter()
            .enumerate()
            .map(|(k, (spatial, temporal))| Channel {
                spatial,
                temporal,
                path: BrownianPath::sample(mesh, seed, k as u32),
            })
            .collect();
        Self::new(channels, mesh)
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    pub fn horizon(&self) -> f64 {
        self.mesh.horizon()
    }

    /// All `Re φ_k ≡ 0`.
    pub fn is_conservative(&self) -> bool {
        self.channels.iter().all(|c| c.spatial.is_conservative())
    }

    /// All spatial profiles constant, as the regularization sweep requires.
    pub fn has_constant_profiles(&self) -> bool {
        self.channels.iter().all(|c| c.spatial.is_constant())
    }

    /// Same model with every path refined `times` times by Brownian bridges.
    pub fn refine_times(&self, times: u32) -> Result<Self> {
        if self.channels.is_empty() {
            let mut mesh = self.mesh.clone();
            for _ in 0..times {
                let p = BrownianPath::from_increments(&mesh, vec![0.0; mesh.cells()], 0)?;
                mesh = p.refine().mesh().clone();
            }
            return Self::new(Vec::new(), &mesh);
        }
        let channels: Vec<Channel> = self
            .channels
            .iter()
            .map(|c| Channel {
                spatial: c.spatial.clone(),
                temporal: c.temporal.clone(),
                path: c.path.refine_times(times),
            })
            .collect();
        let mesh = channels[0].path.mesh().clone();
        Self::new(channels, &mesh)
    }

    /// Same paths with channel `k`'s spatial amplitude replaced.
    pub fn with_amplitude(&self, k: usize, amp: Complex64) -> Result<Self> {
        let mut channels = self.channels.clone();
        let ch = channels
            .get_mut(k)
            .ok_or_else(|| Error::InvalidArgument(format!("no channel {k}")))?;
        ch.spatial = ch.spatial.with_amplitude(amp);
        Self::new(channels, &self.mesh)
    }

    /// `(I_k(t), J_k(t))` per channel, linear between mesh nodes.
    pub fn gauge_scalars(&self, t: f64) -> Result<Vec<(f64, f64)>> {
        let (m, f) = self.mesh.locate(t)?;
        Ok(self
            .cum
            .iter()
            .map(|c| {
                (
                    c.i[m] + f * (c.i[m + 1] - c.i[m]),
                    c.j[m] + f * (c.j[m + 1] - c.j[m]),
                )
            })
            .collect())
    }

    /// Scalars of `φ*(t) = φ(t) - φ(T_h)`.
    pub fn star_scalars(&self, t: f64) -> Result<Vec<(f64, f64)>> {
        let now = self.gauge_scalars(t)?;
        Ok(now
            .iter()
            .zip(&self.cum)
            .map(|(&(i, j), c)| (i - c.i.last().unwrap(), j - c.j.last().unwrap()))
            .collect())
    }

    fn combine_at(&self, x: &[f64; 3], scalars: &[(f64, f64)], axes: &[usize]) -> Complex64 {
        self.channels
            .iter()
            .zip(scalars)
            .map(|(ch, &(i, j))| {
                if i == 0.0 && j == 0.0 {
                    return Complex64::new(0.0, 0.0);
                }
                ch.spatial.derivative(x, axes) * i - ch.spatial.product_derivative(x, axes) * j
            })
            .sum()
    }

    fn combine(&self, grid: &Grid, scalars: &[(f64, f64)], axes: &[usize]) -> Field {
        Field::from_fn(grid, |x| self.combine_at(x, scalars, axes))
    }

    /// `φ(t,x) = Σ_k [φ_k(x) I_k(t) - (Re φ_k φ_k)(x) J_k(t)]`.
    pub fn phi(&self, t: f64, grid: &Grid) -> Result<Field> {
        Ok(self.combine(grid, &self.gauge_scalars(t)?, &[]))
    }

    /// `φ*(t) = φ(t) - φ(T_h)`.
    pub fn phi_star(&self, t: f64, grid: &Grid) -> Result<Field> {
        self.phi(t, grid)?.sub(&self.phi(self.horizon(), grid)?)
    }

    /// Scalar `φ(t)` for constant profiles.
    pub fn phi_scalar(&self, t: f64) -> Result<Complex64> {
        self.require_constant()?;
        let s = self.gauge_scalars(t)?;
        Ok(self.combine_at(&[0.0; 3], &s, &[]))
    }

    fn require_constant(&self) -> Result<()> {
        if !self.has_constant_profiles() {
            return Err(Error::InvalidArgument(
                "operation requires constant spatial profiles".into(),
            ));
        }
        Ok(())
    }

    /// `G_k(t,x)` for every channel at the grid points.
    pub fn channel_values(&self, t: f64, grid: &Grid) -> Vec<Field> {
        self.channels
            .iter()
            .map(|ch| {
                let g = ch.temporal.value(t);
                Field::from_fn(grid, |x| ch.spatial.value(x) * g)
            })
            .collect()
    }

    /// `μ = ½ Σ |G_k|²`.
    pub fn mu(&self, t: f64, grid: &Grid) -> Field {
        let mut out = Field::zeros(grid);
        for g in self.channel_values(t, grid) {
            out = out.zip_map(&g, |a, b| a + 0.5 * b.norm_sqr()).unwrap();
        }
        out
    }

    /// `μ̂ = Σ (Re G_k) G_k`.
    pub fn mu_hat(&self, t: f64, grid: &Grid) -> Field {
        let mut out = Field::zeros(grid);
        for g in self.channel_values(t, grid) {
            out = out.zip_map(&g, |a, b| a + b * b.re).unwrap();
        }
        out
    }

    fn b_from(&self, grid: &Grid, s: &[(f64, f64)]) -> Vec<Field> {
        (0..grid.dim())
            .map(|a| self.combine(grid, s, &[a]).scale(Complex64::new(2.0, 0.0)))
            .collect()
    }

    fn c_from(&self, grid: &Grid, s: &[(f64, f64)]) -> Field {
        let d = grid.dim();
        Field::from_fn(grid, |x| {
            (0..d)
                .map(|a| {
                    let g = self.combine_at(x, s, &[a]);
                    g * g + self.combine_at(x, s, &[a, a])
                })
                .sum()
        })
    }

    /// `b = 2∇φ`.
    pub fn coeff_b(&self, t: f64, grid: &Grid) -> Result<Vec<Field>> {
        Ok(self.b_from(grid, &self.gauge_scalars(t)?))
    }

    /// `c = Σ_j (∂_j φ)² + Δφ`.
    pub fn coeff_c(&self, t: f64, grid: &Grid) -> Result<Field> {
        Ok(self.c_from(grid, &self.gauge_scalars(t)?))
    }

    pub fn coeff_b_star(&self, t: f64, grid: &Grid) -> Result<Vec<Field>> {
        Ok(self.b_from(grid, &self.star_scalars(t)?))
    }

    pub fn coeff_c_star(&self, t: f64, grid: &Grid) -> Result<Field> {
        Ok(self.c_from(grid, &self.star_scalars(t)?))
    }

    fn jet_at(&self, x: &[f64; 3], s: &[(f64, f64)], d: usize) -> PhiJet {
        let z = Complex64::new(0.0, 0.0);
        let mut j = PhiJet {
            d1: [z; 3],
            d2: [[z; 3]; 3],
            d3: [[[z; 3]; 3]; 3],
        };
        for a in 0..d {
            j.d1[a] = self.combine_at(x, s, &[a]);
            for b in a..d {
                let v = self.combine_at(x, s, &[a, b]);
                j.d2[a][b] = v;
                j.d2[b][a] = v;
                for c in b..d {
                    let w = self.combine_at(x, s, &[a, b, c]);
                    for p in permutations(a, b, c) {
                        j.d3[p[0]][p[1]][p[2]] = w;
                    }
                }
            }
        }
        j
    }

    /// Flatness statistics of `(b, c)` (or `(b*, c*)` when `star`) at each time.
    pub fn flatness_report(&self, times: &[f64], grid: &Grid, star: bool) -> Result<Vec<FlatnessRow>> {
        let d = grid.dim();
        let pos = grid.positions();
        times
            .iter()
            .map(|&t| {
                let s = if star {
                    self.star_scalars(t)?
                } else {
                    self.gauge_scalars(t)?
                };
                let mut row = FlatnessRow {
                    t,
                    b: [0.0; 3],
                    c: [0.0; 2],
                };
                if self.channels.is_empty() {
                    return Ok(row);
                }
                for x in &pos {
                    let w = 1.0 + x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
                    let j = self.jet_at(x, &s, d);
                    for i in 0..d {
                        row.b[0] = row.b[0].max(w * 2.0 * j.d1[i].norm());
                        for a in 0..d {
                            row.b[1] = row.b[1].max(w * 2.0 * j.d2[i][a].norm());
                            for b in 0..d {
                                row.b[2] = row.b[2].max(w * 2.0 * j.d3[i][a][b].norm());
                            }
                        }
                    }
                    let c: Complex64 = (0..d).map(|a| j.d1[a] * j.d1[a] + j.d2[a][a]).sum();
                    row.c[0] = row.c[0].max(w * c.norm());
                    for l in 0..d {
                        let dc: Complex64 = (0..d)
                            .map(|a| 2.0 * j.d1[a] * j.d2[l][a] + j.d3[l][a][a])
                            .sum();
                        row.c[1] = row.c[1].max(w * dc.norm());
                    }
                }
                Ok(row)
            })
            .collect()
    }

    /// Pathwise `∫₀^H e^{(α-1)θ Re φ(s)} ds`, or with the lensed weight
    /// `(1+s)^{-(d(α-1)-4)θ/2 - 2}` when `lensed_dim` is given. Constant profiles only.
    pub fn epsilon_theta(
        &self,
        alpha: f64,
        theta: f64,
        horizon: f64,
        lensed_dim: Option<usize>,
    ) -> Result<f64> {
        self.require_constant()?;
        if !(theta > 1.0) {
            return Err(Error::InvalidArgument(format!("theta = {theta} must exceed 1")));
        }
        if horizon > self.horizon() * (1.0 + 1e-12) {
            return Err(Error::BeyondHorizon {
                t: horizon,
                horizon: self.horizon(),
            });
        }
        let weight_power = lensed_dim.map(|d| -(d as f64 * (alpha - 1.0) - 4.0) * theta / 2.0 - 2.0);
        let integrand = |t: f64| -> Result<f64> {
            let re = self.phi_scalar(t)?.re;
            let w = weight_power.map_or(1.0, |p| (1.0 + t).powf(p));
            Ok(w * ((alpha - 1.0) * theta * re).exp())
        };
        let mut nodes: Vec<f64> = self
            .mesh
            .times()
            .iter()
            .copied()
            .take_while(|&t| t < horizon)
            .collect();
        nodes.push(horizon);
        let mut acc = 0.0;
        let mut prev = integrand(nodes[0])?;
        for w in nodes.windows(2) {
            let next = integrand(w[1])?;
            acc += 0.5 * (w[1] - w[0]) * (prev + next);
            prev = next;
        }
        Ok(acc)
    }

    /// `∫_{T_h}^∞ g_k²` per channel; logs a warning above `1e-8`.
    pub fn tail_bounds(&self) -> Vec<f64> {
        let h = self.horizon();
        self.channels
            .iter()
            .enumerate()
            .map(|(k, ch)| {
                let tail = ch.temporal.tail_sq(h);
                if tail > 1e-8 {
                    log::warn!("channel {k}: neglected tail ∫_{h}^∞ g² = {tail:e} exceeds 1e-8");
                } else {
                    log::info!("channel {k}: neglected tail ∫_{h}^∞ g² = {tail:e}");
                }
                tail
            })
            .collect()
    }

    /// CSV `t, dbeta_0, …` over the mesh cells (left endpoints).
    pub fn write_paths_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        use crate::field::io::fmt_f64;
        let mut out = csv::Writer::from_writer(w);
        let mut head = vec!["t".to_string()];
        head.extend((0..self.len()).map(|k| format!("dbeta_{k}")));
        out.write_record(&head)?;
        for m in 0..self.mesh.cells() {
            let mut rec = vec![fmt_f64(self.mesh.times()[m])];
            rec.extend(self.channels.iter().map(|c| fmt_f64(c.path.increments()[m])));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn permutations(a: usize, b: usize, c: usize) -> [[usize; 3]; 6] {
    [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]]
}
