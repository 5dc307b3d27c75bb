use rayon::prelude::*;

use super::{traverse_pixel, Binned, RenderSettings, Splat};
use crate::camera::{Camera, Raster, RgbImage};
use crate::scene::{Gaussian, Scene};

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: RgbImage,
    pub depth: Raster<f64>,
    pub alpha: Raster<f64>,
}

impl RenderOutput {
    pub fn blank(width: usize, height: usize) -> Self {
        Self {
            color: Raster::filled(width, height, [0.0; 3]),
            depth: Raster::filled(width, height, 0.0),
            alpha: Raster::filled(width, height, 0.0),
        }
    }
}

pub fn rasterize(scene: &Scene, cam: &Camera) -> RenderOutput {
    rasterize_gaussians(&scene.gaussians, cam, &RenderSettings::default())
}

pub fn rasterize_gaussians(gaussians: &[Gaussian], cam: &Camera, settings: &RenderSettings) -> RenderOutput {
    let splats: Vec<Splat> = gaussians.par_iter().map(Splat::from).collect();
    rasterize_splats(&splats, cam, settings)
}

pub fn rasterize_splats(splats: &[Splat], cam: &Camera, settings: &RenderSettings) -> RenderOutput {
    let binned = Binned::build(splats, cam, settings);
    let ts = settings.tile_size.max(1);
    let (w, h) = (cam.width, cam.height);

    // (color, depth, alpha) per pixel of each tile, in tile-row-major order.
    let tiles: Vec<Vec<([f64; 3], f64, f64)>> = (0..binned.tiles_x * binned.tiles_y)
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % binned.tiles_x, t / binned.tiles_x);
            let list = binned.tile(t);
            let mut out = Vec::with_capacity(ts * ts);
            for y in ty * ts..((ty + 1) * ts).min(h) {
                for x in tx * ts..((tx + 1) * ts).min(w) {
                    let mut color = [0.0; 3];
                    let mut depth = 0.0;
                    let mut alpha = 0.0;
                    traverse_pixel(x as f64, y as f64, list, &binned.projected, settings, |p, c| {
                        let wgt = c.alpha * c.transmittance;
                        color[0] += p.color.x * wgt;
                        color[1] += p.color.y * wgt;
                        color[2] += p.color.z * wgt;
                        depth += p.depth * wgt;
                        alpha += wgt;
                    });
                    if settings.normalize_depth {
                        depth = if alpha > 0.0 { depth / alpha } else { 0.0 };
                    }
                    out.push((color, depth, alpha));
                }
            }
            out
        })
        .collect();

    let mut output = RenderOutput::blank(w, h);
    for (t, px) in tiles.into_iter().enumerate() {
        let (tx, ty) = (t % binned.tiles_x, t / binned.tiles_x);
        let mut it = px.into_iter();
        for y in ty * ts..((ty + 1) * ts).min(h) {
            for x in tx * ts..((tx + 1) * ts).min(w) {
                let (c, d, a) = it.next().expect("tile pixel count");
                let i = y * w + x;
                output.color.data[i] = c;
                output.depth.data[i] = d;
                output.alpha.data[i] = a;
            }
        }
    }
    output
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn gray_splat(x: f64, z: f64, value: f64, opacity: f64) -> Splat {
        Splat {
            position: Vector3::new(x, 0.0, z),
            covariance: Matrix3::identity() * 1e-4,
            color: Vector3::repeat(value),
            opacity,
        }
    }

    #[test]
    fn empty_scene_is_black() {
        let cam = Camera::centered(20, 10, 10.0);
        let out = rasterize(&Scene::empty(), &cam);
        assert_eq!(out, RenderOutput::blank(20, 10));
    }

    #[test]
    fn opaque_gaussian_at_its_center_pixel() {
        let cam = Camera::centered(21, 21, 10.0);
        let g = Gaussian::isotropic(Vector3::new(0.0, 0.0, 2.0), 0.05, Vector3::new(1.0, 0.0, 0.0), 1.0);
        let out = rasterize(&Scene::new(vec![g], Default::default()), &cam);
        assert_eq!(*out.color.get(10, 10), [1.0, 0.0, 0.0]);
        assert_eq!(*out.alpha.get(10, 10), 1.0);
        assert_eq!(*out.depth.get(10, 10), 2.0);
    }

    #[test]
    fn two_layer_composite() {
        let cam = Camera::centered(21, 21, 10.0);
        let s = RenderSettings::default();
        let splats = [gray_splat(0.0, 2.0, 0.0, 0.5), gray_splat(0.0, 1.0, 1.0, 0.5)];
        let out = rasterize_splats(&splats, &cam, &s);
        assert_eq!(out.color.get(10, 10)[0], 0.5);
        assert_eq!(*out.alpha.get(10, 10), 0.75);
        assert_eq!(*out.depth.get(10, 10), 0.5 * 1.0 + 0.25 * 2.0);
    }

    #[test]
    fn normalized_depth_divides_by_alpha() {
        let cam = Camera::centered(21, 21, 10.0);
        let s = RenderSettings { normalize_depth: true, ..Default::default() };
        let out = rasterize_splats(&[gray_splat(0.0, 2.0, 1.0, 0.5)], &cam, &s);
        assert_eq!(*out.depth.get(10, 10), 2.0);
    }

    #[test]
    fn opaque_front_hides_back() {
        let cam = Camera::centered(21, 21, 10.0);
        let s = RenderSettings::default();
        let front = gray_splat(0.0, 1.0, 0.25, 1.0);
        let back = Splat { color: Vector3::new(1.0, 1.0, 1.0), ..gray_splat(0.0, 2.0, 1.0, 1.0) };
        let both = rasterize_splats(&[back, front.clone()], &cam, &s);
        let alone = rasterize_splats(&[front], &cam, &s);
        assert_eq!(both.color.get(10, 10), alone.color.get(10, 10));
        assert_eq!(both.depth.get(10, 10), alone.depth.get(10, 10));
    }
}
