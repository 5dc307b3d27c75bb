//! Synthetic scenes and frame sets with known ground truth.

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{Camera, Frame, Raster};
use crate::render::{rasterize_gaussians, RenderSettings};
use crate::scene::{Gaussian, MaterialParams, Scene};

/// Height of the wavy tissue surface at `(x, y)`.
pub fn tissue_height(x: f64, y: f64) -> f64 {
    3.0 + 0.15 * (2.0 * x).sin() * (1.5 * y).cos() + 0.05 * (5.0 * x + 3.0 * y).sin()
}

fn tissue_color(x: f64, y: f64) -> Vector3<f64> {
    Vector3::new(
        0.75 + 0.2 * (3.0 * x).sin(),
        0.35 + 0.15 * (2.5 * y + 1.0).cos(),
        0.3 + 0.12 * (2.0 * x - 2.0 * y).sin(),
    )
}

/// `n` Gaussians on a jittered lattice over the wavy surface, oriented with
/// the surface and slightly flattened along its normal.
pub fn tissue_scene(n: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (half_x, half_y) = (1.3, 1.1);
    let aspect = half_x / half_y;
    let ny = ((n as f64 / aspect).sqrt().round() as usize).max(1);
    let nx = n.div_ceil(ny);
    let sx = 2.0 * half_x / nx as f64;
    let sy = 2.0 * half_y / ny as f64;
    let mut gaussians = Vec::with_capacity(n);
    'outer: for j in 0..ny {
        for i in 0..nx {
            if gaussians.len() == n {
                break 'outer;
            }
            let x = -half_x + (i as f64 + 0.5 + rng.random_range(-0.3..0.3)) * sx;
            let y = -half_y + (j as f64 + 0.5 + rng.random_range(-0.3..0.3)) * sy;
            let z = tissue_height(x, y);
            let h = 1e-4;
            let gx = (tissue_height(x + h, y) - tissue_height(x - h, y)) / (2.0 * h);
            let gy = (tissue_height(x, y + h) - tissue_height(x, y - h)) / (2.0 * h);
            let normal = Vector3::new(-gx, -gy, 1.0).normalize();
            // Rotation taking +z to the surface normal.
            let axis = Vector3::z().cross(&normal);
            let angle = axis.norm().atan2(normal.z);
            let q = if axis.norm() > 1e-12 {
                let a = axis.normalize() * (0.5 * angle).sin();
                Vector4::new((0.5 * angle).cos(), a.x, a.y, a.z)
            } else {
                Vector4::new(1.0, 0.0, 0.0, 0.0)
            };
            let tangential = 0.75 * sx.max(sy) * rng.random_range(0.9..1.1);
            let scale = Vector3::new(tangential, tangential * rng.random_range(0.8..1.0), 0.35 * tangential);
            let jitter = Vector3::new(rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03), 0.0);
            let color = (tissue_color(x, y) + jitter).map(|c| c.clamp(0.0, 1.0));
            gaussians.push(Gaussian::new(Vector3::new(x, y, z), q, scale, color, 0.95));
        }
    }
    Scene::new(gaussians, MaterialParams::default())
}

/// Pinhole cameras looking down `+z` from near the origin, shifted sideways.
pub fn tissue_cameras(width: usize, height: usize, views: usize) -> Vec<Camera> {
    let focal = 1.5 * width as f64;
    (0..views)
        .map(|v| {
            let t = v as f64 - (views as f64 - 1.0) / 2.0;
            let eye = Vector3::new(0.08 * t, -0.04 * t, 0.0);
            Camera::centered(width, height, focal).with_pose(Matrix3::identity(), -eye)
        })
        .collect()
}

/// Slanted bar of tool pixels, placed differently per view.
pub fn tool_mask(width: usize, height: usize, view: usize) -> Raster<bool> {
    let mut mask = Raster::filled(width, height, false);
    let (w, h) = (width as f64, height as f64);
    let x0 = w * (0.55 + 0.12 * view as f64);
    let half = 0.04 * w;
    for y in 0..height {
        // Bar enters from the bottom edge and stops at 40% height.
        if (y as f64) < 0.4 * h {
            continue;
        }
        let cx = x0 + 0.5 * (y as f64 - h);
        for x in 0..width {
            if (x as f64 - cx).abs() <= half {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Renders `scene` into RGB-D frames with tool masks. Depth is
/// alpha-normalized; uncovered pixels are added to the mask.
pub fn render_frames(scene: &Scene, cameras: &[Camera]) -> Vec<Frame> {
    let settings = RenderSettings { normalize_depth: true, ..Default::default() };
    cameras
        .iter()
        .enumerate()
        .map(|(v, cam)| {
            let out = rasterize_gaussians(&scene.gaussians, cam, &settings);
            let mut mask = tool_mask(cam.width, cam.height, v);
            for i in 0..mask.data.len() {
                if !(out.depth.data[i] > 0.0) || out.alpha.data[i] < 0.5 {
                    mask.data[i] = true;
                }
            }
            let image = Raster {
                width: cam.width,
                height: cam.height,
                data: out.color.data.iter().map(|c| c.map(|v| v.clamp(0.0, 1.0))).collect(),
            };
            Frame { image, depth: out.depth, mask, camera: cam.clone() }
        })
        .collect()
}

/// Ground truth plus its rendered frames.
pub struct TissueFixture {
    pub truth: Scene,
    pub frames: Vec<Frame>,
}

/// 500 Gaussians viewed by 3 cameras at 160x128 unless overridden.
pub fn tissue_fixture(gaussians: usize, width: usize, height: usize, views: usize, seed: u64) -> TissueFixture {
    let truth = tissue_scene(gaussians, seed);
    let frames = render_frames(&truth, &tissue_cameras(width, height, views));
    TissueFixture { truth, frames }
}

pub fn default_tissue_fixture(seed: u64) -> TissueFixture {
    tissue_fixture(500, 160, 128, 3, seed)
}

/// Open hemispherical shell of radius `radius` centered at `center`, bulging
/// toward `-z` (toward a camera in front of it), with the rim in the plane
/// `z = center.z`.
pub fn hemisphere_shell(center: Vector3<f64>, radius: f64, n: usize) -> Scene {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let spacing = (2.0 * std::f64::consts::PI * radius * radius / n as f64).sqrt();
    let gaussians = (0..n)
        .map(|i| {
            // Fibonacci lattice on the lower half (cos theta in (0, 1]).
            let c = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - c * c).sqrt();
            let phi = golden * i as f64;
            let dir = Vector3::new(r * phi.cos(), r * phi.sin(), -c);
            let color = Vector3::new(0.8, 0.4 + 0.2 * dir.x, 0.35 + 0.2 * dir.y);
            Gaussian::isotropic(center + dir * radius, 0.6 * spacing, color, 0.95)
        })
        .collect();
    Scene::new(gaussians, MaterialParams::default())
}

/// Strictly inside the solid hemisphere bounded by [`hemisphere_shell`].
pub fn inside_hemisphere(p: &Vector3<f64>, center: &Vector3<f64>, radius: f64) -> bool {
    (p - center).norm() < radius && p.z <= center.z
}

/// Solid lattice block of `dims` particles with spacing `h`, min corner at
/// `origin`. Each particle fills one lattice cell.
pub fn block(origin: Vector3<f64>, dims: [usize; 3], h: f64, padded: bool) -> Scene {
    let mut gaussians = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let p = origin + Vector3::new(i as f64, j as f64, k as f64) * h;
                let mut g = Gaussian::isotropic(p, 0.5 * h, Vector3::new(0.8, 0.45, 0.4), if padded { 0.0 } else { 0.9 });
                g.padded = padded;
                gaussians.push(g);
            }
        }
    }
    Scene::new(gaussians, MaterialParams::default())
}

/// Block whose outer layer is visible and whose interior is padded.
pub fn padded_block(origin: Vector3<f64>, dims: [usize; 3], h: f64) -> Scene {
    let mut scene = block(origin, dims, h, false);
    let mut idx = 0;
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let interior = [i, j, k].iter().zip(&dims).all(|(&a, &n)| a > 0 && a + 1 < n);
                if interior {
                    let g = &mut scene.gaussians[idx];
                    g.padded = true;
                    g.opacity_logit = f64::NEG_INFINITY;
                }
                idx += 1;
            }
        }
    }
    scene
}
