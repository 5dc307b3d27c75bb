//! Shared scenarios for the integration tests.
#![allow(dead_code)]

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatsim::camera::{Camera, Raster};
use splatsim::math::logit;
use splatsim::render::{rasterize_backward, rasterize_gaussians, RenderSettings};
use splatsim::scene::Gaussian;

/// Five random Gaussians in front of a 32x32 camera.
pub fn random_scene(seed: u64) -> (Vec<Gaussian>, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = Camera::centered(32, 32, 36.0);
    let gaussians = (0..5)
        .map(|_| {
            let z = rng.random_range(2.0..4.0);
            let p = Vector3::new(rng.random_range(-0.3..0.3) * z, rng.random_range(-0.3..0.3) * z, z);
            let q = Vector4::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let s = Vector3::new(rng.random_range(0.1..0.4), rng.random_range(0.1..0.4), rng.random_range(0.1..0.4));
            let c = Vector3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            Gaussian::new(p, q, s, c, rng.random_range(0.3..0.9))
        })
        .collect();
    (gaussians, cam)
}

/// Number of scalar parameters checked per Gaussian.
pub const CHECKED: usize = 14;

/// Reads or writes parameter `k` in the factored form the analytic gradient
/// is expressed in (linear scale and opacity).
fn param(g: &Gaussian, k: usize) -> f64 {
    match k {
        0..=2 => g.position[k],
        3..=6 => g.rotation[k - 3],
        7..=9 => g.log_scale[k - 7].exp(),
        10..=12 => g.color[k - 10],
        _ => g.opacity(),
    }
}

fn set_param(g: &mut Gaussian, k: usize, v: f64) {
    match k {
        0..=2 => g.position[k] = v,
        3..=6 => g.rotation[k - 3] = v,
        7..=9 => g.log_scale[k - 7] = v.ln(),
        10..=12 => g.color[k - 10] = v,
        _ => g.opacity_logit = logit(v),
    }
}

/// Worst relative error between analytic and central-difference gradients of
/// a random linear functional of color and depth. Returns the error and a
/// description of where it occurred.
pub fn gradient_check(seed: u64) -> (f64, String) {
    let (gaussians, cam) = random_scene(seed);
    let settings = RenderSettings::smooth();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let n = cam.width * cam.height;
    let wc: Vec<[f64; 3]> =
        (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let wd: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
    let gc = Raster { width: cam.width, height: cam.height, data: wc.clone() };
    let gd = Raster { width: cam.width, height: cam.height, data: wd.clone() };

    let objective = |gs: &[Gaussian]| -> f64 {
        let out = rasterize_gaussians(gs, &cam, &settings);
        let mut l = 0.0;
        for i in 0..n {
            for ch in 0..3 {
                l += wc[i][ch] * out.color.data[i][ch];
            }
            l += wd[i] * out.depth.data[i];
        }
        l
    };

    let out = rasterize_gaussians(&gaussians, &cam, &settings);
    let grads = rasterize_backward(&gaussians, &cam, &settings, &out, &gc, &gd);
    let h = 1e-6;
    let mut worst = (0.0, String::new());
    for (i, g) in grads.iter().enumerate() {
        let analytic: Vec<f64> = g
            .position
            .iter()
            .chain(g.rotation.iter())
            .chain(g.scale.iter())
            .chain(g.color.iter())
            .chain(std::iter::once(&g.opacity))
            .copied()
            .collect();
        for k in 0..CHECKED {
            let x = param(&gaussians[i], k);
            let mut plus = gaussians.clone();
            let mut minus = gaussians.clone();
            set_param(&mut plus[i], k, x + h);
            set_param(&mut minus[i], k, x - h);
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let a = analytic[k];
            // Absolute floor for gradients that are numerically zero.
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("gaussian {i} param {k}: analytic {a:.9e} fd {fd:.9e}"));
            }
        }
    }
    worst
}

pub mod hemisphere {
    use nalgebra::{Matrix3, Vector3};
    use splatsim::camera::Camera;
    use splatsim::fixtures;
    use splatsim::mpm::{ActiveWindow, ForceEvent, SimConfig, Simulation};
    use splatsim::padding::{compute_opacity_field, pad_interior};
    use splatsim::scene::Scene;
    use splatsim::spatial::PointGrid;

    pub const CENTER: Vector3<f64> = Vector3::new(0.0, 0.0, 3.0);
    pub const RADIUS: f64 = 1.0;
    pub const SHELL: usize = 1500;
    pub const PAD_GRID: usize = 32;
    pub const TAU: f64 = 0.1;

    /// Camera on the axis, 8 radii in front of the center, framing the shell.
    pub fn camera() -> Camera {
        let d = 8.0 * RADIUS;
        Camera::centered(160, 128, 160.0 * d / (2.4 * RADIUS))
            .with_pose(Matrix3::identity(), Vector3::new(0.0, 0.0, d - CENTER.z))
    }

    pub fn shell() -> Scene {
        fixtures::hemisphere_shell(CENTER, RADIUS, SHELL)
    }

    pub fn padded(shell: &Scene) -> Scene {
        let field = compute_opacity_field(shell, PAD_GRID);
        pad_interior(shell, &field, &camera(), TAU)
    }

    /// Largest nearest-neighbour distance among the first `n` particles.
    pub fn surface_gap(sim: &Simulation, n: usize) -> f64 {
        let pts = &sim.particles.x[..n];
        let grid = PointGrid::new(pts, 0.05);
        (0..n).map(|i| grid.k_nearest(&pts[i], 1, Some(i))[0].0).fold(0.0, f64::max)
    }

    /// Downward push on the apex for 40 substeps; returns the surface gap
    /// after two full steps.
    pub fn pushed_gap(scene: &Scene) -> f64 {
        let mut sim = Simulation::new(scene, SimConfig::default()).unwrap();
        sim.add_force(ForceEvent {
            center: [0.0, 0.0, CENTER.z - RADIUS],
            radius: 0.3,
            force: [0.0, 0.0, 20000.0],
            active_window: ActiveWindow { start: 0, end: 40 },
        })
        .unwrap();
        for _ in 0..2 {
            sim.step().unwrap();
        }
        surface_gap(&sim, SHELL)
    }
}

pub mod recovery {
    use nalgebra::Vector3;
    use splatsim::fixtures;
    use splatsim::mpm::{ActiveWindow, ForceEvent, SimConfig, Simulation};

    pub const HOLD_STEPS: u64 = 5;
    pub const RELEASE_STEPS: usize = 50;

    /// Max particle displacement after each step of a push-and-release on a
    /// padded block: `(during hold, after release)`.
    pub fn run() -> (Vec<f64>, Vec<f64>) {
        let scene = fixtures::padded_block(Vector3::new(-0.4, -0.4, 2.0), [17, 17, 9], 0.05);
        let cfg = SimConfig { grid_resolution: 32, ..Default::default() };
        let mut sim = Simulation::new(&scene, cfg).unwrap();
        let sub = sim.cfg.substeps as u64;
        sim.add_force(ForceEvent {
            center: [0.0, 0.0, 2.0],
            radius: 0.2,
            force: [0.0, 0.0, 200.0],
            active_window: ActiveWindow { start: 0, end: HOLD_STEPS * sub },
        })
        .unwrap();
        let mut disp = || {
            sim.step().unwrap();
            sim.particles.x.iter().zip(&scene.gaussians).map(|(x, g)| (x - g.position).norm()).fold(0.0, f64::max)
        };
        let hold = (0..HOLD_STEPS).map(|_| disp()).collect();
        let release = (0..RELEASE_STEPS).map(|_| disp()).collect();
        (hold, release)
    }

    /// Largest rise between consecutive samples, relative to the peak.
    pub fn worst_rise(series: &[f64], peak: f64) -> f64 {
        series.windows(2).map(|w| (w[1] - w[0]) / peak).fold(0.0, f64::max)
    }
}

pub mod physics {
    use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use splatsim::fixtures;
    use splatsim::mpm::*;

    pub fn free_boundary() -> BoundaryConfig {
        let mut b = BoundaryConfig::uniform(Boundary::Free);
        b.z_max = Boundary::Sticky;
        b
    }

    /// 10x10x10 block at the center of a 32^3 grid with dx = 0.01.
    pub fn centered_block_sim(cfg: SimConfig) -> Simulation {
        let dx = 0.01;
        let grid = SimGrid::new(Vector3::zeros(), dx, [32; 3], cfg.boundary);
        let h = dx / 2.0;
        let scene = fixtures::block(Vector3::repeat(13.0 * dx + 0.25 * h), [10; 3], h, true);
        Simulation::with_grid(&scene, grid, cfg).unwrap()
    }

    pub fn random_rotations(n: usize, seed: u64) -> Vec<Matrix3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis };
                Rotation3::from_axis_angle(&Unit::new_normalize(axis), rng.random_range(-3.1..3.1)).into_inner()
            })
            .collect()
    }

    /// Largest relative mismatch between particle and grid mass / momentum
    /// after P2G, over `substeps` substeps of a moving, sheared 1k block.
    pub fn transfer_conservation(substeps: usize) -> (f64, f64) {
        let cfg = SimConfig { boundary: free_boundary(), ..Default::default() };
        let mut sim = centered_block_sim(cfg);
        for (i, v) in sim.particles.v.iter_mut().enumerate() {
            *v = Vector3::new(0.3, -0.2, 0.1) + Vector3::new(0.0, 0.01 * (i % 7) as f64, 0.0);
        }
        for f in &mut sim.particles.f {
            *f = Matrix3::new(1.01, 0.02, 0.0, 0.0, 0.99, 0.01, 0.0, 0.0, 1.0);
        }
        let (mut dm, mut dp) = (0.0f64, 0.0f64);
        for _ in 0..substeps {
            let m_p = sim.particles.total_mass();
            let p_p = sim.particles.momentum();
            sim.particle_to_grid();
            dm = dm.max(((sim.grid.total_mass() - m_p) / m_p).abs());
            dp = dp.max((sim.grid.total_momentum() - p_p).norm() / p_p.norm());
            sim.grid_update().unwrap();
            sim.grid_to_particle();
        }
        (dm, dp)
    }

    /// Mean Cauchy stress sigma_xx over E * eps in a bar held at uniaxial
    /// strain eps = 1e-3 by slip grips, after settling.
    pub fn small_strain_ratio() -> f64 {
        let dx = 0.01;
        let res = [24usize, 16, 16];
        let mut b = free_boundary();
        b.x_min = Boundary::Slip;
        b.x_max = Boundary::Slip;
        let grid = SimGrid::new(Vector3::zeros(), dx, res, b);
        let h = dx / 2.0;
        // End layers sit inside the x boundary bands and act as grips.
        let nx = 2 * (res[0] - 3) + 1;
        let scene = fixtures::block(Vector3::new(dx, 6.0 * dx + 0.25 * h, 6.0 * dx + 0.25 * h), [nx, 8, 8], h, true);
        let cfg = SimConfig { damping: 100.0, boundary: b, ..Default::default() };
        let mut sim = Simulation::with_grid(&scene, grid, cfg).unwrap();
        let eps = 1e-3;
        for f in &mut sim.particles.f {
            *f = Matrix3::from_diagonal(&Vector3::new(1.0 + eps, 1.0, 1.0));
        }
        for _ in 0..600 {
            sim.substep().unwrap();
        }
        let (mu, lambda) = sim.material.lame();
        let (mut sigma, mut n) = (0.0, 0.0);
        for (x, f) in sim.particles.x.iter().zip(&sim.particles.f) {
            if x.x > 6.0 * dx && x.x < 18.0 * dx {
                sigma += (pk1_stress(f, mu, lambda).unwrap() * f.transpose() / f.determinant())[(0, 0)];
                n += 1.0;
            }
        }
        sigma / n / (sim.material.youngs_modulus * eps)
    }

    /// Random deformation gradients with det > 1e-3.
    pub fn random_deformations(n: usize, seed: u64) -> Vec<Matrix3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let f = Matrix3::from_fn(|_, _| rng.random_range(-1.5..1.5)) + Matrix3::identity();
            if f.determinant() > 1e-3 {
                out.push(f);
            }
        }
        out
    }
}
