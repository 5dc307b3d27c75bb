//! Throughput measurements shared by the CLI `bench` command and the tests.

use std::time::Instant;

use nalgebra::Vector3;
use serde::Serialize;

use crate::camera::Camera;
use crate::mpm::{ActiveWindow, ForceEvent, SimConfig, SimError, Simulation};
use crate::render::{rasterize_gaussians, RenderSettings};
use crate::scene::{Gaussian, MaterialParams, Scene};

/// Slab of exactly `n` particles on a lattice of spacing `h`; the top and
/// bottom layers are visible, the rest padded.
pub fn slab(n: usize, h: f64) -> Scene {
    let layers = ((n as f64).cbrt() / 2.0).ceil().max(1.0) as usize;
    let side = ((n as f64 / layers as f64).sqrt().ceil() as usize).max(1);
    let origin = Vector3::new(-0.5 * side as f64 * h, -0.5 * side as f64 * h, 2.0);
    let mut gaussians = Vec::with_capacity(n);
    'fill: for k in 0..layers + 1 {
        for j in 0..side {
            for i in 0..side {
                if gaussians.len() == n {
                    break 'fill;
                }
                let p = origin + Vector3::new(i as f64, j as f64, k as f64) * h;
                let mut g = Gaussian::isotropic(p, 0.5 * h, Vector3::new(0.8, 0.45, 0.4), 0.9);
                if k != 0 && k + 1 < layers {
                    g.padded = true;
                    g.opacity_logit = f64::NEG_INFINITY;
                }
                gaussians.push(g);
            }
        }
    }
    Scene::new(gaussians, MaterialParams::default())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpmBench {
    pub particles: usize,
    pub grid_resolution: usize,
    pub substeps_per_step: usize,
    pub steps: usize,
    pub seconds: f64,
    pub steps_per_sec: f64,
    /// Particle updates (particles x substeps) per second.
    pub particle_substeps_per_sec: f64,
}

/// Times `steps` full steps on a pushed [`slab`] of `particles` particles.
pub fn mpm_throughput(particles: usize, grid_resolution: usize, steps: usize) -> Result<MpmBench, SimError> {
    let scene = slab(particles, 0.02);
    let cfg = SimConfig { grid_resolution, ..Default::default() };
    let mut sim = Simulation::new(&scene, cfg)?;
    let c = scene.bounds.center();
    sim.add_force(ForceEvent {
        center: [c.x, c.y, scene.bounds.min.z],
        radius: 0.25 * scene.bounds.extent().x,
        force: [0.0, 0.0, 50.0],
        active_window: ActiveWindow { start: 0, end: u64::MAX },
    })?;
    // One untimed step to size the internal buffers.
    sim.step()?;
    let t = Instant::now();
    for _ in 0..steps {
        sim.step()?;
    }
    let seconds = t.elapsed().as_secs_f64();
    let substeps = sim.cfg.substeps;
    Ok(MpmBench {
        particles,
        grid_resolution,
        substeps_per_step: substeps,
        steps,
        seconds,
        steps_per_sec: steps as f64 / seconds,
        particle_substeps_per_sec: (particles * substeps * steps) as f64 / seconds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenderBench {
    pub gaussians: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub ms_per_frame: f64,
}

/// Times forward renders of the tissue fixture scene.
pub fn render_throughput(gaussians: usize, width: usize, height: usize, frames: usize) -> RenderBench {
    let scene = crate::fixtures::tissue_scene(gaussians, 0);
    let cam = Camera::framing(&scene.bounds, width, height);
    let settings = RenderSettings::default();
    let t = Instant::now();
    for _ in 0..frames {
        std::hint::black_box(rasterize_gaussians(&scene.gaussians, &cam, &settings));
    }
    let ms_per_frame = t.elapsed().as_secs_f64() * 1e3 / frames.max(1) as f64;
    RenderBench { gaussians, width, height, frames, ms_per_frame }
}
