use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scene::Aabb;

/// Nodes within this many cells of a face obey that face's condition.
pub const BOUNDARY_BAND: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Zero velocity.
    #[default]
    Sticky,
    /// Zero normal velocity, free tangential motion.
    Slip,
    /// Only motion through the wall is removed; material may separate.
    Free,
}

/// One condition per face, in the order `x_min x_max y_min y_max z_min z_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    pub x_min: Boundary,
    pub x_max: Boundary,
    pub y_min: Boundary,
    pub y_max: Boundary,
    pub z_min: Boundary,
    pub z_max: Boundary,
}

impl BoundaryConfig {
    pub fn uniform(b: Boundary) -> Self {
        Self { x_min: b, x_max: b, y_min: b, y_max: b, z_min: b, z_max: b }
    }

    pub fn faces(&self) -> [Boundary; 6] {
        [self.x_min, self.x_max, self.y_min, self.y_max, self.z_min, self.z_max]
    }
}

/// Grid node `[vx, vy, vz, mass]`. Holds momentum instead of velocity between
/// the scatter and the grid update.
pub type Node = [f64; 4];

/// Eulerian background grid. Node `(i, j, k)` sits at `origin + dx (i, j, k)`
/// and is stored at `(i * ny + j) * nz + k`.
#[derive(Debug, Clone)]
pub struct SimGrid {
    pub origin: Vector3<f64>,
    pub dx: f64,
    pub res: [usize; 3],
    pub boundary: [Boundary; 6],
    pub nodes: Vec<Node>,
    /// Half-open node box touched by the last scatter.
    pub(crate) active: [[usize; 2]; 3],
}

impl SimGrid {
    pub fn new(origin: Vector3<f64>, dx: f64, res: [usize; 3], boundary: BoundaryConfig) -> Self {
        assert!(res.iter().all(|&r| r >= 2 * BOUNDARY_BAND + 1), "grid too small");
        assert!(dx > 0.0 && dx.is_finite());
        let n = res[0] * res[1] * res[2];
        Self {
            origin,
            dx,
            res,
            boundary: boundary.faces(),
            nodes: vec![[0.0; 4]; n],
            active: [[0, res[0]], [0, res[1]], [0, res[2]]],
        }
    }

    /// Cubic grid of `res` nodes per axis around `bounds`. The largest extent
    /// spans `res - 6 - 2 * margin * res` cells; the `z_max` face of the
    /// bounds sits just inside the boundary band so the tissue base is held
    /// by that face, and the other axes are centered.
    pub fn around(bounds: &Aabb, res: usize, margin: f64, boundary: BoundaryConfig) -> Self {
        let extent = bounds.extent();
        let max_extent = extent.max().max(1e-9);
        let usable = (res as f64 - 2.0 * BOUNDARY_BAND as f64) / (1.0 + 2.0 * margin.max(0.0));
        let dx = max_extent / usable.max(1.0);
        let mid = (res as f64 - 1.0) / 2.0;
        let center = bounds.center();
        let mut origin = center - Vector3::repeat(mid * dx);
        // bounds.max.z maps to grid coordinate res - BAND - 0.5.
        origin.z = bounds.max.z - (res as f64 - BOUNDARY_BAND as f64 - 0.5) * dx;
        Self::new(origin, dx, [res; 3], boundary)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.res[1] + j) * self.res[2] + k
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.dx
    }

    /// Grid-space coordinate clamped so the 3x3x3 stencil stays in range.
    #[inline]
    pub fn grid_coord(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let g = (x - self.origin) / self.dx;
        Vector3::new(
            g.x.clamp(0.5, self.res[0] as f64 - 1.5 - 1e-9),
            g.y.clamp(0.5, self.res[1] as f64 - 1.5 - 1e-9),
            g.z.clamp(0.5, self.res[2] as f64 - 1.5 - 1e-9),
        )
    }

    /// World-space box particles are confined to.
    pub fn interior(&self) -> Aabb {
        let lo = self.origin + Vector3::repeat(0.5 * self.dx);
        let hi = self.origin
            + Vector3::new(
                self.res[0] as f64 - 1.5 - 1e-9,
                self.res[1] as f64 - 1.5 - 1e-9,
                self.res[2] as f64 - 1.5 - 1e-9,
            ) * self.dx;
        Aabb::new(lo, hi)
    }

    pub fn total_mass(&self) -> f64 {
        self.nodes.iter().map(|n| n[3]).sum()
    }

    /// Sum of node momenta; meaningful between scatter and grid update.
    pub fn total_momentum(&self) -> Vector3<f64> {
        self.nodes.iter().fold(Vector3::zeros(), |a, n| a + Vector3::new(n[0], n[1], n[2]))
    }

    #[inline]
    pub fn mass(&self, idx: usize) -> f64 {
        self.nodes[idx][3]
    }

    /// Node velocity (momentum before the grid update).
    #[inline]
    pub fn velocity(&self, idx: usize) -> Vector3<f64> {
        let n = &self.nodes[idx];
        Vector3::new(n[0], n[1], n[2])
    }

    pub(crate) fn clear_active(&mut self) {
        let [[x0, x1], [y0, y1], [z0, z1]] = self.active;
        let plane = self.res[1] * self.res[2];
        let nz = self.res[2];
        self.nodes[x0 * plane..x1 * plane].par_chunks_mut(plane).for_each(|n| {
            for j in y0..y1 {
                n[j * nz + z0..j * nz + z1].fill([0.0; 4]);
            }
        });
    }

    /// Applies the face conditions to the node at `(i, j, k)`.
    #[inline]
    pub fn apply_boundary(&self, idx: [usize; 3], v: &mut Vector3<f64>) {
        project_boundary(self.res, &self.boundary, idx, v);
    }
}

#[inline]
pub(crate) fn project_boundary(res: [usize; 3], faces: &[Boundary; 6], idx: [usize; 3], v: &mut Vector3<f64>) {
    for axis in 0..3 {
        let r = res[axis];
        let (face, outward) = if idx[axis] < BOUNDARY_BAND {
            (2 * axis, -1.0)
        } else if idx[axis] >= r - BOUNDARY_BAND {
            (2 * axis + 1, 1.0)
        } else {
            continue;
        };
        match faces[face] {
            Boundary::Sticky => {
                *v = Vector3::zeros();
                return;
            }
            Boundary::Slip => v[axis] = 0.0,
            Boundary::Free => {
                if v[axis] * outward > 0.0 {
                    v[axis] = 0.0;
                }
            }
        }
    }
}

/// Quadratic B-spline weights for one axis given `fx = x - base` in `[0.5, 1.5)`.
#[inline]
pub fn bspline_weights(fx: f64) -> [f64; 3] {
    [0.5 * (1.5 - fx).powi(2), 0.75 - (fx - 1.0).powi(2), 0.5 * (fx - 0.5).powi(2)]
}
