//! MLS-MPM solver with APIC transfers and quadratic B-spline kernels.
//!
//! Every Gaussian is one particle. After each step the deformed covariance
//! `F cov0 F^T` is written to a renderable splat list.

mod constitutive;
mod grid;

pub use constitutive::{
    deformed_covariance, energy_density, guard_inversion, kirchhoff_stress, kirchhoff_stress_with_det, pk1_stress, GUARD_DET,
    GUARD_SIGMA_MAX, GUARD_SIGMA_MIN,
};
pub use grid::{bspline_weights, Boundary, BoundaryConfig, Node, SimGrid, BOUNDARY_BAND};

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::decompose_covariance;
use crate::render::Splat;
use crate::scene::{Gaussian, MaterialError, MaterialParams, Scene};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("deformation gradient inverted (det F = {det})")]
    Inverted { det: f64 },
    #[error("non-finite grid state at substep {substep}")]
    NonFinite { substep: u64 },
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error("scene has no particles")]
    EmptyScene,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveWindow {
    pub start: u64,
    pub end: u64,
}

/// External push: `force` is spread as a uniform acceleration over the grid
/// mass within `radius` of `center` for substeps in `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceEvent {
    pub center: [f64; 3],
    pub radius: f64,
    pub force: [f64; 3],
    pub active_window: ActiveWindow,
}

impl ForceEvent {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(SimError::Config(format!("force radius must be positive, got {}", self.radius)));
        }
        if !self.force.iter().chain(&self.center).all(|v| v.is_finite()) {
            return Err(SimError::Config("force event has non-finite components".into()));
        }
        if self.active_window.end < self.active_window.start {
            return Err(SimError::Config("force window ends before it starts".into()));
        }
        Ok(())
    }

    fn active_at(&self, substep: u64) -> bool {
        self.active_window.start <= substep && substep < self.active_window.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub grid_resolution: usize,
    pub substeps: usize,
    pub dt: f64,
    pub gravity: [f64; 3],
    /// Grid velocity damping rate in 1/s; `v *= 1 / (1 + damping * dt)`.
    pub damping: f64,
    /// Empty space left around the scene on each side, as a fraction of its
    /// largest extent.
    pub domain_margin: f64,
    pub boundary: BoundaryConfig,
    /// Nodes lighter than this carry no velocity.
    pub mass_epsilon: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            grid_resolution: 64,
            substeps: 80,
            dt: 5e-4,
            gravity: [0.0; 3],
            damping: 12.0,
            domain_margin: 0.25,
            boundary: BoundaryConfig::default(),
            mass_epsilon: 1e-12,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.grid_resolution < 2 * BOUNDARY_BAND + 2 {
            return Err(SimError::Config(format!("grid_resolution must be at least {}", 2 * BOUNDARY_BAND + 2)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Config("dt must be positive".into()));
        }
        if !(self.damping >= 0.0) || !(self.domain_margin >= 0.0) || !(self.mass_epsilon >= 0.0) {
            return Err(SimError::Config("damping, domain_margin and mass_epsilon must be non-negative".into()));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(SimError::Config("gravity must be finite".into()));
        }
        if self.boundary.z_max != Boundary::Sticky {
            return Err(SimError::Config("the z_max face anchors the tissue and must be sticky".into()));
        }
        Ok(())
    }
}

/// Structure-of-arrays particle state.
#[derive(Debug, Clone, PartialEq)]
pub struct Particles {
    pub x: Vec<Vector3<f64>>,
    pub v: Vec<Vector3<f64>>,
    pub mass: Vec<f64>,
    pub volume0: Vec<f64>,
    pub f: Vec<Matrix3<f64>>,
    pub c: Vec<Matrix3<f64>>,
    pub cov0: Vec<Matrix3<f64>>,
}

impl Particles {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn momentum(&self) -> Vector3<f64> {
        self.v.iter().zip(&self.mass).fold(Vector3::zeros(), |a, (v, m)| a + v * *m)
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Rest particles for `gaussians`. Padded particles fill `prod(2 s)`;
    /// others `4/3 pi prod(s)` capped at one grid cell.
    pub fn from_gaussians(gaussians: &[Gaussian], density: f64, dx: f64) -> Self {
        let n = gaussians.len();
        let mut p = Self {
            x: Vec::with_capacity(n),
            v: vec![Vector3::zeros(); n],
            mass: Vec::with_capacity(n),
            volume0: Vec::with_capacity(n),
            f: vec![Matrix3::identity(); n],
            c: vec![Matrix3::zeros(); n],
            cov0: Vec::with_capacity(n),
        };
        let cell = dx * dx * dx;
        for g in gaussians {
            let s = g.scale();
            let vol = if g.padded {
                8.0 * s.x * s.y * s.z
            } else {
                (4.0 / 3.0 * std::f64::consts::PI * s.x * s.y * s.z).min(cell)
            };
            let vol = if vol > 0.0 && vol.is_finite() { vol } else { cell };
            p.x.push(g.position);
            p.volume0.push(vol);
            p.mass.push(density * vol);
            p.cov0.push(g.covariance());
        }
        p
    }
}

/// Base node of the 3x3x3 stencil around `x` and the offset `x - base` in cells.
#[inline]
fn locate(grid: &SimGrid, x: &Vector3<f64>) -> ([usize; 3], Vector3<f64>) {
    let g = grid.grid_coord(x);
    let base = [(g.x - 0.5) as usize, (g.y - 0.5) as usize, (g.z - 0.5) as usize];
    (base, Vector3::new(g.x - base[0] as f64, g.y - base[1] as f64, g.z - base[2] as f64))
}

#[derive(Clone, Copy)]
struct TransferConsts {
    dt: f64,
    dx: f64,
    inv_dx2: f64,
    mu: f64,
    lambda: f64,
}

/// One particle's scatter data.
#[derive(Debug, Clone, Copy, Default)]
struct Stencil {
    base: [usize; 3],
    w: [[f64; 3]; 3],
    m: f64,
    /// Momentum contribution at stencil node `(0, 0, 0)`.
    q: Vector3<f64>,
    /// Affine momentum per unit node offset.
    a: Matrix3<f64>,
}

impl Stencil {
    /// Applies the inversion guard to `f` and builds the scatter data.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    fn new(
        k: &TransferConsts,
        grid: &SimGrid,
        f: &mut Matrix3<f64>,
        x: &Vector3<f64>,
        v: &Vector3<f64>,
        c: &Matrix3<f64>,
        m: f64,
        vol: f64,
    ) -> Self {
        let mut det = f.determinant();
        if det < GUARD_DET {
            *f = guard_inversion(f);
            det = f.determinant();
        }
        let (base, fx) = locate(grid, x);
        let tau = kirchhoff_stress_with_det(f, det, k.mu, k.lambda);
        let a = (tau * (-k.dt * vol * k.inv_dx2) + c * m) * k.dx;
        Stencil {
            base,
            w: [bspline_weights(fx.x), bspline_weights(fx.y), bspline_weights(fx.z)],
            m,
            q: v * m - a * fx,
            a,
        }
    }

    #[inline]
    fn extend_box(&self, lo: &mut [usize; 3], hi: &mut [usize; 3]) {
        for ax in 0..3 {
            lo[ax] = lo[ax].min(self.base[ax]);
            hi[ax] = hi[ax].max(self.base[ax] + 3);
        }
    }

    /// Adds the contribution to the 3x3 nodes at x offset `oi`; `nodes`
    /// starts at node `(base_x + oi, base_y, base_z)`.
    #[inline]
    fn scatter_plane(&self, oi: usize, nz: usize, nodes: &mut [Node]) {
        let wx = self.w[0][oi];
        let a = &self.a;
        let az = [a[(0, 2)], a[(1, 2)], a[(2, 2)], 0.0];
        let oi = oi as f64;
        for oj in 0..3 {
            let wxy = wx * self.w[1][oj];
            let oj_f = oj as f64;
            let mut t = [0.0; 4];
            for c in 0..3 {
                t[c] = self.q[c] + a[(c, 0)] * oi + a[(c, 1)] * oj_f;
            }
            t[3] = self.m;
            let row = &mut nodes[oj * nz..oj * nz + 3];
            for (ok, node) in row.iter_mut().enumerate() {
                let w = wxy * self.w[2][ok];
                for c in 0..4 {
                    node[c] += t[c] * w;
                    t[c] += az[c];
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Energy {
    pub kinetic: f64,
    pub strain: f64,
    pub potential: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.kinetic + self.strain + self.potential
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub particles: Particles,
    pub grid: SimGrid,
    pub material: MaterialParams,
    pub cfg: SimConfig,
    pub forces: Vec<ForceEvent>,
    appearance: Vec<Gaussian>,
    initial: Particles,
    substep: u64,
    steps: u64,
    mu: f64,
    lambda: f64,
    stencils: Vec<Stencil>,
    order: Vec<u32>,
    bin_start: Vec<u32>,
    cursor: Vec<u32>,
}

impl Simulation {
    pub fn new(scene: &Scene, cfg: SimConfig) -> Result<Self, SimError> {
        if scene.is_empty() {
            return Err(SimError::EmptyScene);
        }
        let grid = SimGrid::around(&scene.bounds, cfg.grid_resolution, cfg.domain_margin, cfg.boundary);
        Self::with_grid(scene, grid, cfg)
    }

    /// Uses a caller-supplied grid instead of one fitted to the scene.
    pub fn with_grid(scene: &Scene, grid: SimGrid, cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        scene.material.validate()?;
        let particles = Particles::from_gaussians(&scene.gaussians, scene.material.density, grid.dx);
        let (mu, lambda) = scene.material.lame();
        Ok(Self {
            initial: particles.clone(),
            particles,
            grid,
            material: scene.material,
            cfg,
            forces: Vec::new(),
            appearance: scene.gaussians.clone(),
            substep: 0,
            steps: 0,
            mu,
            lambda,
            stencils: Vec::new(),
            order: Vec::new(),
            bin_start: Vec::new(),
            cursor: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn substep_count(&self) -> u64 {
        self.substep
    }

    pub fn step_count(&self) -> u64 {
        self.steps
    }

    /// Takes effect on the next substep.
    pub fn set_material(&mut self, material: MaterialParams) -> Result<(), SimError> {
        material.validate()?;
        self.material = material;
        (self.mu, self.lambda) = material.lame();
        Ok(())
    }

    pub fn add_force(&mut self, event: ForceEvent) -> Result<(), SimError> {
        event.validate()?;
        self.forces.push(event);
        Ok(())
    }

    /// Whether any particle stencil overlaps the force region.
    pub fn force_region_has_mass(&self, center: &Vector3<f64>, radius: f64) -> bool {
        let reach = radius + 1.5 * self.grid.dx;
        self.particles.x.iter().any(|x| (x - center).norm() <= reach)
    }

    /// Restores the initial particles and clears pending forces.
    pub fn reset(&mut self) {
        self.particles = self.initial.clone();
        self.forces.clear();
        self.substep = 0;
        self.steps = 0;
        (self.mu, self.lambda) = self.material.lame();
    }

    pub fn substep(&mut self) -> Result<(), SimError> {
        self.particle_to_grid();
        self.grid_update()?;
        self.grid_to_particle();
        self.substep += 1;
        Ok(())
    }

    /// Runs the configured number of substeps.
    pub fn step(&mut self) -> Result<(), SimError> {
        for _ in 0..self.cfg.substeps {
            self.substep()?;
        }
        self.steps += 1;
        self.forces.retain(|f| f.active_window.end > self.substep);
        Ok(())
    }

    /// Scatter mass, APIC momentum and stress impulses to the grid. Leaves
    /// momentum (not velocity) in the grid nodes.
    ///
    /// Every node sums its contributions in particle index order, so the
    /// result does not depend on the thread count.
    pub fn particle_to_grid(&mut self) {
        let dx = self.grid.dx;
        let k = TransferConsts { dt: self.cfg.dt, dx, inv_dx2: 4.0 / (dx * dx), mu: self.mu, lambda: self.lambda };
        // Nodes outside the active box are always zero.
        self.grid.clear_active();
        let (ny, nz) = (self.grid.res[1], self.grid.res[2]);
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let p = &mut self.particles;

        if rayon::current_num_threads() == 1 {
            for n in 0..p.len() {
                let s = Stencil::new(&k, &self.grid, &mut p.f[n], &p.x[n], &p.v[n], &p.c[n], p.mass[n], p.volume0[n]);
                s.extend_box(&mut lo, &mut hi);
                for oi in 0..3 {
                    let start = ((s.base[0] + oi) * ny + s.base[1]) * nz + s.base[2];
                    s.scatter_plane(oi, nz, &mut self.grid.nodes[start..]);
                }
            }
        } else {
            let grid = &self.grid;
            let stencils = &mut self.stencils;
            stencils.resize(p.len(), Stencil::default());
            (&mut *stencils, &mut p.f, &p.x, &p.v, &p.c, &p.mass, &p.volume0).into_par_iter().for_each(
                |(st, f, x, v, c, &m, &vol)| *st = Stencil::new(&k, grid, f, x, v, c, m, vol),
            );

            // Stable counting sort by base x: each bin stays in index order.
            let nx = self.grid.res[0];
            self.bin_start.clear();
            self.bin_start.resize(nx + 1, 0);
            for s in stencils.iter() {
                self.bin_start[s.base[0] + 1] += 1;
                s.extend_box(&mut lo, &mut hi);
            }
            for i in 0..nx {
                self.bin_start[i + 1] += self.bin_start[i];
            }
            self.cursor.clear();
            self.cursor.extend_from_slice(&self.bin_start);
            self.order.resize(stencils.len(), 0);
            for (n, s) in stencils.iter().enumerate() {
                let b = s.base[0];
                self.order[self.cursor[b] as usize] = n as u32;
                self.cursor[b] += 1;
            }

            let plane = ny * nz;
            let (order, bin_start, stencils) = (&self.order, &self.bin_start, &*stencils);
            let x0 = lo[0].min(hi[0]);
            let x1 = hi[0];
            self.grid.nodes[x0 * plane..x1 * plane]
                .par_chunks_mut(plane)
                .enumerate()
                .for_each(|(off, nodes)| {
                    let i = x0 + off;
                    // Merge the three bins reaching plane i back into index order.
                    let mut bins = [&order[0..0]; 3];
                    for (slot, b) in (i.saturating_sub(2)..=i).enumerate() {
                        bins[slot] = &order[bin_start[b] as usize..bin_start[b + 1] as usize];
                    }
                    loop {
                        let mut pick = None;
                        for (slot, bin) in bins.iter().enumerate() {
                            if let Some(&n) = bin.first() {
                                if pick.is_none_or(|(m, _)| n < m) {
                                    pick = Some((n, slot));
                                }
                            }
                        }
                        let Some((n, slot)) = pick else { break };
                        bins[slot] = &bins[slot][1..];
                        let s = &stencils[n as usize];
                        let start = s.base[1] * nz + s.base[2];
                        s.scatter_plane(i - s.base[0], nz, &mut nodes[start..]);
                    }
                });
        }
        if p.is_empty() {
            (lo, hi) = ([0; 3], [0; 3]);
        }
        self.grid.active = [[lo[0], hi[0]], [lo[1], hi[1]], [lo[2], hi[2]]];
    }

    /// Momentum to velocity, external accelerations, damping, boundaries.
    pub fn grid_update(&mut self) -> Result<(), SimError> {
        let dt = self.cfg.dt;
        let eps = self.cfg.mass_epsilon;
        let gravity = Vector3::from(self.cfg.gravity);
        let substep = self.substep;
        let [[x0, x1], [y0, y1], [z0, z1]] = self.grid.active;
        let (ny, nz) = (self.grid.res[1], self.grid.res[2]);
        let plane = ny * nz;

        // Region masses of active force events, from node masses. Each event
        // only visits the node box around its sphere.
        let active: Vec<&ForceEvent> = self.forces.iter().filter(|f| f.active_at(substep)).collect();
        let mut regions = Vec::with_capacity(active.len());
        for ev in &active {
            let c = Vector3::from(ev.center);
            let span = |axis: usize, lo: usize, hi: usize| {
                let g = (c[axis] - self.grid.origin[axis]) / self.grid.dx;
                let r = ev.radius / self.grid.dx;
                let a = (g - r).floor().max(lo as f64) as usize;
                let b = ((g + r).ceil() + 1.0).clamp(lo as f64, hi as f64) as usize;
                [a.min(b), b]
            };
            let bx = [span(0, x0, x1), span(1, y0, y1), span(2, z0, z1)];
            let mut m = 0.0;
            for i in bx[0][0]..bx[0][1] {
                for j in bx[1][0]..bx[1][1] {
                    for k in bx[2][0]..bx[2][1] {
                        let idx = (i * ny + j) * nz + k;
                        let nm = self.grid.mass(idx);
                        if nm > eps && (self.grid.node_position(i, j, k) - c).norm() <= ev.radius {
                            m += nm;
                        }
                    }
                }
            }
            if m > 0.0 {
                regions.push((c, ev.radius, bx, Vector3::from(ev.force) / m));
            } else {
                log::warn!("force event at {:?} r={} covers no material; ignored", ev.center, ev.radius);
            }
        }
        let damp = 1.0 / (1.0 + self.cfg.damping * dt);

        let origin = self.grid.origin;
        let dx = self.grid.dx;
        let (res, boundary) = (self.grid.res, self.grid.boundary);
        let band = |idx: usize, r: usize| idx < BOUNDARY_BAND || idx >= r - BOUNDARY_BAND;
        let bad = self.grid.nodes[x0 * plane..x1 * plane]
            .par_chunks_mut(plane)
            .enumerate()
            .map(|(off, nodes)| {
                let i = x0 + off;
                let band_i = band(i, res[0]);
                let mut bad = false;
                for j in y0..y1 {
                    let band_ij = band_i || band(j, res[1]);
                    for k in z0..z1 {
                        let node = &mut nodes[j * nz + k];
                        let m = node[3];
                        if m <= eps {
                            node[..3].fill(0.0);
                            continue;
                        }
                        let mut v = Vector3::new(node[0], node[1], node[2]) / m + gravity * dt;
                        for (c, r, bx, a) in &regions {
                            let inside = (bx[0][0]..bx[0][1]).contains(&i)
                                && (bx[1][0]..bx[1][1]).contains(&j)
                                && (bx[2][0]..bx[2][1]).contains(&k);
                            if inside {
                                let pos = origin + Vector3::new(i as f64, j as f64, k as f64) * dx;
                                if (pos - c).norm() <= *r {
                                    v += a * dt;
                                }
                            }
                        }
                        v *= damp;
                        if band_ij || band(k, res[2]) {
                            grid::project_boundary(res, &boundary, [i, j, k], &mut v);
                        }
                        bad |= !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite());
                        node[..3].copy_from_slice(v.as_slice());
                    }
                }
                bad
            })
            .reduce(|| false, |a, b| a || b);
        if bad {
            return Err(SimError::NonFinite { substep });
        }
        Ok(())
    }

    /// Gathers velocity and affine velocity, updates `F` and advects.
    pub fn grid_to_particle(&mut self) {
        let dt = self.cfg.dt;
        let dx = self.grid.dx;
        let inv_dx2 = 4.0 / (dx * dx);
        let grid = &self.grid;
        let nz = grid.res[2];
        let ny = grid.res[1];
        let interior = grid.interior();
        let p = &mut self.particles;
        let max_speed = (&mut p.x, &mut p.v, &mut p.c, &mut p.f)
            .into_par_iter()
            .map(|(x, v, c, f)| {
                let (base, fx) = locate(grid, x);
                // Separable sums: sum w v and sum w v o per axis.
                let nodes = &grid.nodes;
                let [wx, wy, wz] = [bspline_weights(fx.x), bspline_weights(fx.y), bspline_weights(fx.z)];
                let mut nv = Vector3::zeros();
                let mut so = [Vector3::zeros(); 3];
                for oi in 0..3 {
                    let mut vi = Vector3::zeros();
                    let mut vj = Vector3::zeros();
                    let mut vk = Vector3::zeros();
                    let plane = ((base[0] + oi) * ny + base[1]) * nz + base[2];
                    for oj in 0..3 {
                        let row = plane + oj * nz;
                        let vel = |n: &Node| Vector3::new(n[0], n[1], n[2]);
                        let (g0, g1, g2) = (vel(&nodes[row]), vel(&nodes[row + 1]), vel(&nodes[row + 2]));
                        let a = g1 * wz[1] + g2 * (2.0 * wz[2]);
                        let t0 = g0 * wz[0] + g1 * wz[1] + g2 * wz[2];
                        vi += t0 * wy[oj];
                        vj += t0 * (wy[oj] * oj as f64);
                        vk += a * wy[oj];
                    }
                    nv += vi * wx[oi];
                    so[0] += vi * (wx[oi] * oi as f64);
                    so[1] += vj * wx[oi];
                    so[2] += vk * wx[oi];
                }
                let nc = Matrix3::from_columns(&[
                    (so[0] - nv * fx.x) * dx,
                    (so[1] - nv * fx.y) * dx,
                    (so[2] - nv * fx.z) * dx,
                ]);
                *v = nv;
                *c = nc * inv_dx2;
                *f = (Matrix3::identity() + *c * dt) * *f;
                *x += nv * dt;
                for a in 0..3 {
                    x[a] = x[a].clamp(interior.min[a], interior.max[a]);
                }
                nv.norm()
            })
            .reduce(|| 0.0, f64::max);
        if max_speed * dt >= dx {
            log::warn!("CFL violated: max speed {max_speed:.3e} * dt >= dx {dx:.3e}");
        }
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.particles.x
    }

    pub fn energy(&self) -> Energy {
        let g = Vector3::from(self.cfg.gravity);
        let p = &self.particles;
        let mut e = Energy::default();
        for i in 0..p.len() {
            e.kinetic += 0.5 * p.mass[i] * p.v[i].norm_squared();
            e.strain += p.volume0[i] * energy_density(&p.f[i], self.mu, self.lambda);
            e.potential -= p.mass[i] * g.dot(&p.x[i]);
        }
        e
    }

    /// Current positions with deformed covariances.
    pub fn splats(&self) -> Vec<Splat> {
        let p = &self.particles;
        (0..p.len())
            .into_par_iter()
            .map(|i| {
                let g = &self.appearance[i];
                Splat {
                    position: p.x[i],
                    covariance: deformed_covariance(&p.f[i], &p.cov0[i]),
                    color: g.color,
                    opacity: g.opacity(),
                }
            })
            .collect()
    }

    /// Deformed scene with covariances re-factored into rotation and scale.
    pub fn to_scene(&self) -> Scene {
        let p = &self.particles;
        let gaussians = (0..p.len())
            .into_par_iter()
            .map(|i| {
                let base = &self.appearance[i];
                if p.f[i] == Matrix3::identity() {
                    return Gaussian { position: p.x[i], ..*base };
                }
                let (rotation, scale) = decompose_covariance(&deformed_covariance(&p.f[i], &p.cov0[i]));
                Gaussian {
                    position: p.x[i],
                    rotation,
                    log_scale: scale.map(|s| s.max(1e-12).ln()),
                    ..*base
                }
            })
            .collect();
        Scene::new(gaussians, self.material)
    }
}
