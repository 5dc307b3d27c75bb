//! Tile-based Gaussian splat rasterizer with an analytic backward pass.
//!
//! Every Gaussian is projected with the affine (EWA) approximation
//! `cov2d = J W cov W^T J^T + low_pass I`, binned into 16x16 pixel tiles and
//! alpha-composited front to back in ascending camera depth (ties broken by
//! source index). Rendered depth composites the Gaussians' camera-z with the
//! same weights as color.

mod backward;
mod forward;

pub use backward::{rasterize_backward, splat_backward, GaussianGrad, SplatGrad};
pub use forward::{rasterize, rasterize_gaussians, rasterize_splats, RenderOutput};

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::scene::Gaussian;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    /// Added to both diagonal entries of the projected covariance (pixels^2).
    pub low_pass: f64,
    /// Contributions with alpha below this are skipped.
    pub alpha_min: f64,
    /// Upper clamp on per-Gaussian alpha.
    pub alpha_max: f64,
    /// Per-pixel traversal stops once transmittance falls below this.
    pub min_transmittance: f64,
    /// Footprint half-width in standard deviations of the major 2D axis.
    pub footprint_sigma: f64,
    pub near_plane: f64,
    pub tile_size: usize,
    /// Divide rendered depth by accumulated alpha.
    pub normalize_depth: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            low_pass: 0.3,
            alpha_min: 1.0 / 255.0,
            alpha_max: 1.0,
            min_transmittance: 1e-4,
            footprint_sigma: 3.0,
            near_plane: 0.01,
            tile_size: 16,
            normalize_depth: false,
        }
    }
}

impl RenderSettings {
    /// Settings without any of the cut-offs (alpha floor, footprint, early
    /// termination), so the image is a smooth function of the parameters.
    /// Used for finite-difference checks.
    pub fn smooth() -> Self {
        Self { alpha_min: 0.0, min_transmittance: 0.0, footprint_sigma: 1e4, ..Self::default() }
    }
}

/// Render primitive: a Gaussian with an explicit covariance. The simulator
/// produces these directly since deformed covariances are no longer kept in
/// rotation/scale form.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat {
    pub position: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    pub color: Vector3<f64>,
    pub opacity: f64,
}

impl From<&Gaussian> for Splat {
    fn from(g: &Gaussian) -> Self {
        Self { position: g.position, covariance: g.covariance(), color: g.color, opacity: g.opacity() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGaussian {
    pub pixel_center: Vector2<f64>,
    /// Image-plane covariance including the low-pass term.
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d` as `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: Vector3<f64>,
    pub opacity: f64,
    /// Footprint radius in pixels.
    pub radius: f64,
    pub source_index: usize,
    pub(crate) cam_pos: Vector3<f64>,
    pub(crate) jw: Matrix2x3<f64>,
}

/// Projects one splat; `None` when it is behind the near plane, degenerate,
/// or its footprint misses the viewport.
pub fn project(
    splat: &Splat,
    cam: &Camera,
    settings: &RenderSettings,
    source_index: usize,
) -> Option<ProjectedGaussian> {
    let t = cam.world_to_camera(&splat.position);
    if !(t.z > settings.near_plane) {
        return None;
    }
    let (x, y, z) = (t.x, t.y, t.z);
    let j = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * y / (z * z),
    );
    let jw = j * cam.rotation;
    let m = jw * splat.covariance * jw.transpose();
    let a = m[(0, 0)] + settings.low_pass;
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let c = m[(1, 1)] + settings.low_pass;
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let lambda_max = 0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let radius = settings.footprint_sigma * lambda_max.sqrt();
    let center = cam.project(&t);
    if center.x + radius < 0.0
        || center.x - radius > (cam.width as f64 - 1.0)
        || center.y + radius < 0.0
        || center.y - radius > (cam.height as f64 - 1.0)
    {
        return None;
    }
    Some(ProjectedGaussian {
        pixel_center: center,
        cov2d: Matrix2::new(a, b, b, c),
        conic: [c / det, -b / det, a / det],
        depth: z,
        color: splat.color,
        opacity: splat.opacity,
        radius,
        source_index,
        cam_pos: t,
        jw,
    })
}

/// Projected Gaussians in compositing order plus their per-tile lists.
pub(crate) struct Binned {
    pub projected: Vec<ProjectedGaussian>,
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// `tile_offsets[t]..tile_offsets[t + 1]` indexes `tile_entries`.
    pub tile_offsets: Vec<usize>,
    /// Indices into `projected`, depth-sorted within each tile.
    pub tile_entries: Vec<u32>,
}

impl Binned {
    pub fn tile(&self, t: usize) -> &[u32] {
        &self.tile_entries[self.tile_offsets[t]..self.tile_offsets[t + 1]]
    }

    fn pixel_span(p: &ProjectedGaussian, cam: &Camera) -> (usize, usize, usize, usize) {
        let x0 = (p.pixel_center.x - p.radius).ceil().max(0.0) as usize;
        let y0 = (p.pixel_center.y - p.radius).ceil().max(0.0) as usize;
        let x1 = (p.pixel_center.x + p.radius).floor().min(cam.width as f64 - 1.0) as usize;
        let y1 = (p.pixel_center.y + p.radius).floor().min(cam.height as f64 - 1.0) as usize;
        (x0, y0, x1, y1)
    }

    pub fn build(splats: &[Splat], cam: &Camera, settings: &RenderSettings) -> Self {
        use rayon::prelude::*;
        let mut projected: Vec<ProjectedGaussian> = splats
            .par_iter()
            .enumerate()
            .filter(|(_, s)| s.opacity > 0.0)
            .filter_map(|(i, s)| project(s, cam, settings, i))
            .collect();
        projected.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source_index.cmp(&b.source_index)));

        let ts = settings.tile_size.max(1);
        let tiles_x = cam.width.div_ceil(ts);
        let tiles_y = cam.height.div_ceil(ts);
        let n_tiles = tiles_x * tiles_y;
        let spans: Vec<(usize, usize, usize, usize)> = projected
            .iter()
            .map(|p| {
                let (x0, y0, x1, y1) = Self::pixel_span(p, cam);
                (x0 / ts, y0 / ts, x1 / ts, y1 / ts)
            })
            .collect();
        let mut counts = vec![0usize; n_tiles + 1];
        for &(tx0, ty0, tx1, ty1) in &spans {
            if tx0 > tx1 || ty0 > ty1 {
                continue;
            }
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    counts[ty * tiles_x + tx + 1] += 1;
                }
            }
        }
        for t in 0..n_tiles {
            counts[t + 1] += counts[t];
        }
        let mut cursor = counts.clone();
        let mut entries = vec![0u32; counts[n_tiles]];
        for (k, &(tx0, ty0, tx1, ty1)) in spans.iter().enumerate() {
            if tx0 > tx1 || ty0 > ty1 {
                continue;
            }
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    let t = ty * tiles_x + tx;
                    entries[cursor[t]] = k as u32;
                    cursor[t] += 1;
                }
            }
        }
        Self { projected, tiles_x, tiles_y, tile_offsets: counts, tile_entries: entries }
    }
}

/// One composited contribution at a pixel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Contribution {
    /// Position within the tile list.
    pub slot: usize,
    pub alpha: f64,
    /// exp(power), the unscaled Gaussian falloff.
    pub falloff: f64,
    /// Transmittance before this Gaussian.
    pub transmittance: f64,
    pub clamped: bool,
    pub dx: f64,
    pub dy: f64,
}

/// Front-to-back traversal of one pixel, calling `visit` for each accepted
/// contribution. Returns the final transmittance.
#[inline]
pub(crate) fn traverse_pixel<'a>(
    px: f64,
    py: f64,
    list: &[u32],
    projected: &'a [ProjectedGaussian],
    settings: &RenderSettings,
    mut visit: impl FnMut(&'a ProjectedGaussian, Contribution),
) -> f64 {
    let mut t = 1.0;
    for (slot, &k) in list.iter().enumerate() {
        let p = &projected[k as usize];
        let dx = px - p.pixel_center.x;
        let dy = py - p.pixel_center.y;
        if dx.abs() > p.radius || dy.abs() > p.radius {
            continue;
        }
        let [a, b, c] = p.conic;
        let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
        if power > 0.0 {
            continue;
        }
        let falloff = power.exp();
        let raw = p.opacity * falloff;
        let clamped = raw > settings.alpha_max;
        let alpha = if clamped { settings.alpha_max } else { raw };
        if alpha < settings.alpha_min || alpha <= 0.0 {
            continue;
        }
        visit(p, Contribution { slot, alpha, falloff, transmittance: t, clamped, dx, dy });
        t *= 1.0 - alpha;
        if t < settings.min_transmittance {
            break;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn splat(pos: [f64; 3], cov: Matrix3<f64>) -> Splat {
        Splat { position: pos.into(), covariance: cov, color: Vector3::repeat(1.0), opacity: 1.0 }
    }

    #[test]
    fn on_axis_projection_scales_by_focal_over_depth() {
        let cam = Camera::centered(201, 201, 100.0);
        let s = RenderSettings::default();
        let p = project(&splat([0.0, 0.0, 1.0], Matrix3::identity()), &cam, &s, 0).unwrap();
        let raw = p.cov2d - Matrix2::identity() * s.low_pass;
        assert!((raw - Matrix2::new(10000.0, 0.0, 0.0, 10000.0)).norm() < 1e-9);

        let far = project(&splat([0.0, 0.0, 2.0], Matrix3::identity()), &cam, &s, 0).unwrap();
        let raw_far = far.cov2d - Matrix2::identity() * s.low_pass;
        assert!((raw_far * 4.0 - raw).norm() < 1e-9);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = Camera::centered(64, 64, 50.0);
        let s = RenderSettings::default();
        assert!(project(&splat([0.0, 0.0, -1.0], Matrix3::identity() * 0.01), &cam, &s, 0).is_none());
    }

    #[test]
    fn off_screen_footprint_is_culled() {
        let cam = Camera::centered(64, 64, 50.0);
        let s = RenderSettings::default();
        let cov = Matrix3::identity() * 1e-4;
        assert!(project(&splat([100.0, 0.0, 1.0], cov), &cam, &s, 0).is_none());
        assert!(project(&splat([0.0, 0.0, 1.0], cov), &cam, &s, 0).is_some());
    }

    #[test]
    fn tile_lists_are_depth_sorted() {
        let cam = Camera::centered(40, 40, 50.0);
        let s = RenderSettings::default();
        let cov = Matrix3::identity() * 0.01;
        let splats: Vec<Splat> =
            [3.0, 1.0, 2.0, 1.0].iter().map(|&z| splat([0.0, 0.0, z], cov)).collect();
        let b = Binned::build(&splats, &cam, &s);
        for t in 0..b.tiles_x * b.tiles_y {
            let list = b.tile(t);
            for w in list.windows(2) {
                let (p, q) = (&b.projected[w[0] as usize], &b.projected[w[1] as usize]);
                assert!((p.depth, p.source_index) < (q.depth, q.source_index));
            }
        }
    }
}
