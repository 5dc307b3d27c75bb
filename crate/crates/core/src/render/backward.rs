//! Reverse-mode derivatives of the compositing sum.
//!
//! For a pixel with contributions `i = 0..n` (front to back), channel values
//! `v_i` (color, depth, 1 for alpha), alphas `a_i` and transmittances `T_i`,
//! the output is `sum_i v_i a_i T_i` and
//!
//! ```text
//! d out / d a_i = T_i (v_i - U_i),   U_i = sum_{j>i} v_j a_j prod_{i<k<j} (1 - a_k)
//! ```
//!
//! `U_i` is accumulated back to front, so fully opaque layers need no
//! division by `1 - a_i`.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use super::{traverse_pixel, Binned, Contribution, ProjectedGaussian, RenderOutput, RenderSettings, Splat};
use crate::camera::{Camera, Raster, RgbImage};
use crate::math::rotation_grad_to_quat;
use crate::scene::Gaussian;

/// Loss gradient with respect to one render primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatGrad {
    pub position: Vector3<f64>,
    /// Symmetric gradient with respect to the 3D covariance.
    pub covariance: Matrix3<f64>,
    pub color: Vector3<f64>,
    pub opacity: f64,
    /// Gradient with respect to the projected 2D center, in pixels.
    pub pixel_center: Vector2<f64>,
}

impl SplatGrad {
    fn zero() -> Self {
        Self {
            position: Vector3::zeros(),
            covariance: Matrix3::zeros(),
            color: Vector3::zeros(),
            opacity: 0.0,
            pixel_center: Vector2::zeros(),
        }
    }
}

/// Loss gradient with respect to the factored Gaussian parameters (linear
/// scale and opacity, raw quaternion components `(w, x, y, z)`).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrad {
    pub position: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub scale: Vector3<f64>,
    pub color: Vector3<f64>,
    pub opacity: f64,
    pub pixel_center: Vector2<f64>,
}

/// Image-space gradient of one projected Gaussian:
/// center (2), conic (a, b, c), color (3), opacity, depth.
type Grad2d = [f64; 10];

fn accumulate_pixel(
    contribs: &[(Contribution, &ProjectedGaussian)],
    upstream: [f64; 5],
    local: &mut [Grad2d],
) {
    let mut behind = [0.0f64; 5];
    for &(c, p) in contribs.iter().rev() {
        let v = [p.color.x, p.color.y, p.color.z, p.depth, 1.0];
        let w = c.alpha * c.transmittance;
        let mut g_alpha = 0.0;
        for ch in 0..5 {
            g_alpha += upstream[ch] * (v[ch] - behind[ch]);
        }
        g_alpha *= c.transmittance;

        let g = &mut local[c.slot];
        g[5] += upstream[0] * w;
        g[6] += upstream[1] * w;
        g[7] += upstream[2] * w;
        g[9] += upstream[3] * w;
        if !c.clamped {
            g[8] += g_alpha * c.falloff;
            let g_power = g_alpha * c.alpha;
            let [a, b, cc] = p.conic;
            let (dx, dy) = (c.dx, c.dy);
            g[0] += g_power * (a * dx + b * dy);
            g[1] += g_power * (b * dx + cc * dy);
            g[2] += g_power * (-0.5 * dx * dx);
            g[3] += g_power * (-dx * dy);
            g[4] += g_power * (-0.5 * dy * dy);
        }
        for ch in 0..5 {
            behind[ch] = v[ch] * c.alpha + (1.0 - c.alpha) * behind[ch];
        }
    }
}

fn chain_to_splat(p: &ProjectedGaussian, splat: &Splat, g: &Grad2d, cam: &Camera) -> SplatGrad {
    let [a, b, c] = p.conic;
    let conic = Matrix2::new(a, b, b, c);
    let g_conic = Matrix2::new(g[2], 0.5 * g[3], 0.5 * g[3], g[4]);
    let g_cov2d = -(conic * g_conic * conic);

    let jw = p.jw;
    let g_cov3 = jw.transpose() * g_cov2d * jw;
    let g_jw = 2.0 * g_cov2d * jw * splat.covariance;
    let g_j = g_jw * cam.rotation.transpose();

    let (x, y, z) = (p.cam_pos.x, p.cam_pos.y, p.cam_pos.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let (z2, z3) = (z * z, z * z * z);
    let mut gt = Vector3::zeros();
    // Jacobian entries: J00 = fx/z, J02 = -fx x/z^2, J11 = fy/z, J12 = -fy y/z^2.
    gt.x += g_j[(0, 2)] * (-fx / z2);
    gt.y += g_j[(1, 2)] * (-fy / z2);
    gt.z += g_j[(0, 0)] * (-fx / z2)
        + g_j[(0, 2)] * (2.0 * fx * x / z3)
        + g_j[(1, 1)] * (-fy / z2)
        + g_j[(1, 2)] * (2.0 * fy * y / z3);
    // Projected center.
    let (gu, gv) = (g[0], g[1]);
    gt.x += gu * fx / z;
    gt.y += gv * fy / z;
    gt.z += -gu * fx * x / z2 - gv * fy * y / z2;
    // Rendered depth is camera z.
    gt.z += g[9];

    SplatGrad {
        position: cam.rotation.transpose() * gt,
        covariance: g_cov3,
        color: Vector3::new(g[5], g[6], g[7]),
        opacity: g[8],
        pixel_center: Vector2::new(gu, gv),
    }
}

/// Gradients of `L = sum_p grad_color(p) . C(p) + grad_depth(p) D(p)` with
/// respect to every splat. `output` must come from the same inputs.
pub fn splat_backward(
    splats: &[Splat],
    cam: &Camera,
    settings: &RenderSettings,
    output: &RenderOutput,
    grad_color: &RgbImage,
    grad_depth: &Raster<f64>,
) -> Vec<SplatGrad> {
    let binned = Binned::build(splats, cam, settings);
    let ts = settings.tile_size.max(1);
    let (w, h) = (cam.width, cam.height);

    let tile_grads: Vec<Vec<Grad2d>> = (0..binned.tiles_x * binned.tiles_y)
        .into_par_iter()
        .map(|t| {
            let list = binned.tile(t);
            let mut local = vec![[0.0; 10]; list.len()];
            if list.is_empty() {
                return local;
            }
            let (tx, ty) = (t % binned.tiles_x, t / binned.tiles_x);
            let mut contribs: Vec<(Contribution, &ProjectedGaussian)> = Vec::new();
            for y in ty * ts..((ty + 1) * ts).min(h) {
                for x in tx * ts..((tx + 1) * ts).min(w) {
                    let i = y * w + x;
                    let gc = grad_color.data[i];
                    let gd = grad_depth.data[i];
                    if gc == [0.0; 3] && gd == 0.0 {
                        continue;
                    }
                    contribs.clear();
                    traverse_pixel(x as f64, y as f64, list, &binned.projected, settings, |p, c| {
                        contribs.push((c, p))
                    });
                    let (gd_raw, g_alpha_out) = if settings.normalize_depth {
                        let a = output.alpha.data[i];
                        if a > 0.0 {
                            (gd / a, -gd * output.depth.data[i] / a)
                        } else {
                            (0.0, 0.0)
                        }
                    } else {
                        (gd, 0.0)
                    };
                    accumulate_pixel(&contribs, [gc[0], gc[1], gc[2], gd_raw, g_alpha_out], &mut local);
                }
            }
            local
        })
        .collect();

    // Fixed tile order keeps the reduction bitwise reproducible.
    let mut per_projected = vec![[0.0; 10]; binned.projected.len()];
    for (t, local) in tile_grads.iter().enumerate() {
        for (slot, &k) in binned.tile(t).iter().enumerate() {
            let dst = &mut per_projected[k as usize];
            for (d, s) in dst.iter_mut().zip(&local[slot]) {
                *d += s;
            }
        }
    }

    let mut grads = vec![SplatGrad::zero(); splats.len()];
    let chained: Vec<(usize, SplatGrad)> = binned
        .projected
        .par_iter()
        .zip(per_projected.par_iter())
        .map(|(p, g)| (p.source_index, chain_to_splat(p, &splats[p.source_index], g, cam)))
        .collect();
    for (i, g) in chained {
        grads[i] = g;
    }
    grads
}

/// Gradients with respect to the factored Gaussian parameters.
pub fn rasterize_backward(
    gaussians: &[Gaussian],
    cam: &Camera,
    settings: &RenderSettings,
    output: &RenderOutput,
    grad_color: &RgbImage,
    grad_depth: &Raster<f64>,
) -> Vec<GaussianGrad> {
    let splats: Vec<Splat> = gaussians.par_iter().map(Splat::from).collect();
    let sg = splat_backward(&splats, cam, settings, output, grad_color, grad_depth);
    gaussians
        .par_iter()
        .zip(sg.into_par_iter())
        .map(|(g, s)| {
            let r = g.rotation_matrix();
            let scale = g.scale();
            let gc = &s.covariance;
            let mut g_scale = Vector3::zeros();
            for k in 0..3 {
                let col = r.column(k);
                g_scale[k] = 2.0 * scale[k] * (col.transpose() * gc * col)[(0, 0)];
            }
            let s2 = Matrix3::from_diagonal(&scale.map(|v| v * v));
            let g_r = 2.0 * gc * r * s2;
            GaussianGrad {
                position: s.position,
                rotation: rotation_grad_to_quat(&g.rotation, &g_r),
                scale: g_scale,
                color: s.color,
                opacity: s.opacity,
                pixel_center: s.pixel_center,
            }
        })
        .collect()
}
