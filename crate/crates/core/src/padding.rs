//! Interior padding: invisible support particles behind the visible surface.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::scene::{Aabb, Gaussian, Scene};
use crate::spatial::PointGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PaddingConfig {
    /// Nodes per axis.
    pub grid: usize,
    /// Minimum occluder opacity.
    pub tau: f64,
}

impl Default for PaddingConfig {
    fn default() -> Self {
        Self { grid: 100, tau: 0.1 }
    }
}

impl PaddingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.grid < 2 {
            return Err(format!("padding grid must have at least 2 nodes per axis, got {}", self.grid));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(format!("tau must be non-negative, got {}", self.tau));
        }
        Ok(())
    }
}

/// Summed Gaussian opacity sampled on a lattice spanning the scene bounds.
/// Node `(i, j, k)` is at `bounds.min + (i, j, k) * cell_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpacityField {
    pub bounds: Aabb,
    pub dims: [usize; 3],
    pub cell_size: Vector3<f64>,
    pub values: Vec<f64>,
}

impl OpacityField {
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.bounds.min + Vector3::new(i as f64, j as f64, k as f64).component_mul(&self.cell_size)
    }

    /// Nearest node to `p`, or `None` outside the lattice (half a cell of slack).
    pub fn nearest_node(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let c = self.cell_size[a];
            if c > 0.0 {
                let t = ((p[a] - self.bounds.min[a]) / c).round();
                if t < 0.0 || t > (self.dims[a] - 1) as f64 {
                    return None;
                }
                out[a] = t as usize;
            } else if (p[a] - self.bounds.min[a]).abs() > 1e-12 * (1.0 + p[a].abs()) {
                return None;
            }
        }
        Some(out)
    }
}

/// Cutoff on the squared Mahalanobis distance (3 sigma).
const SUPPORT_SQ: f64 = 9.0;

pub fn compute_opacity_field(scene: &Scene, grid: usize) -> OpacityField {
    let grid = grid.max(2);
    let bounds = scene.bounds;
    let cell_size = bounds.extent() / (grid - 1) as f64;
    let dims = [grid; 3];
    let plane = grid * grid;
    let mut values = vec![0.0; grid * grid * grid];

    // Per-Gaussian precision matrix and node box.
    struct Support {
        center: Vector3<f64>,
        precision: Matrix3<f64>,
        opacity: f64,
        lo: [usize; 3],
        hi: [usize; 3],
    }
    let node_range = |a: usize, lo: f64, hi: f64| -> Option<(usize, usize)> {
        let c = cell_size[a];
        let (min, n) = (bounds.min[a], grid);
        if c > 0.0 {
            let l = ((lo - min) / c).ceil().max(0.0);
            let h = ((hi - min) / c).floor().min((n - 1) as f64);
            (l <= h).then_some((l as usize, h as usize))
        } else {
            (lo <= min && min <= hi).then_some((0, n - 1))
        }
    };
    let supports: Vec<Support> = scene
        .gaussians
        .iter()
        .filter(|g| g.opacity() > 0.0)
        .filter_map(|g| {
            let r = g.rotation_matrix();
            let inv_s2 = g.scale().map(|s| 1.0 / (s * s));
            let precision = r * Matrix3::from_diagonal(&inv_s2) * r.transpose();
            let cov = g.covariance();
            let mut lo = [0; 3];
            let mut hi = [0; 3];
            for a in 0..3 {
                let reach = 3.0 * cov[(a, a)].sqrt();
                let (l, h) = node_range(a, g.position[a] - reach, g.position[a] + reach)?;
                lo[a] = l;
                hi[a] = h;
            }
            Some(Support { center: g.position, precision, opacity: g.opacity(), lo, hi })
        })
        .collect();

    // Plane-wise gather in Gaussian order keeps sums reproducible.
    let mut by_plane: Vec<Vec<u32>> = vec![Vec::new(); grid];
    for (s_idx, s) in supports.iter().enumerate() {
        for list in &mut by_plane[s.lo[0]..=s.hi[0]] {
            list.push(s_idx as u32);
        }
    }
    values.par_chunks_mut(plane).zip(&by_plane).enumerate().for_each(|(i, (out, list))| {
        for &s_idx in list {
            let s = &supports[s_idx as usize];
            for j in s.lo[1]..=s.hi[1] {
                for k in s.lo[2]..=s.hi[2] {
                    let x = bounds.min + Vector3::new(i as f64, j as f64, k as f64).component_mul(&cell_size);
                    let d = x - s.center;
                    let m = d.dot(&(s.precision * d));
                    if m <= SUPPORT_SQ {
                        out[j * grid + k] += s.opacity * (-0.5 * m).exp();
                    }
                }
            }
        }
    });
    OpacityField { bounds, dims, cell_size, values }
}

/// Whether the node is hidden behind a denser node on its camera ray.
fn occluded(field: &OpacityField, node: [usize; 3], eye: &Vector3<f64>, step: f64, tau: f64) -> bool {
    let value = field.get(node[0], node[1], node[2]);
    let target = field.node_position(node[0], node[1], node[2]);
    let to_node = target - eye;
    let dist = to_node.norm();
    if !(dist > 0.0) {
        return false;
    }
    let dir = to_node / dist;
    // Enter the lattice box first.
    let (mut t0, t1) = (0.0f64, dist);
    let lo = field.bounds.min - field.cell_size * 0.5;
    let hi = field.bounds.max + field.cell_size * 0.5;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            continue;
        }
        let (ta, tb) = ((lo[a] - eye[a]) / dir[a], (hi[a] - eye[a]) / dir[a]);
        t0 = t0.max(ta.min(tb));
    }
    let threshold = value.max(tau);
    let mut t = t0;
    while t < t1 {
        let p = eye + dir * t;
        if let Some(n) = field.nearest_node(&p) {
            if n == node {
                break;
            }
            if field.get(n[0], n[1], n[2]) > threshold {
                return true;
            }
        }
        t += step;
    }
    false
}

/// Appends an invisible padded Gaussian at every occluded lattice node not
/// already holding one.
pub fn pad_interior(scene: &Scene, field: &OpacityField, cam: &Camera, tau: f64) -> Scene {
    let originals: Vec<&Gaussian> = scene.gaussians.iter().filter(|g| !g.padded).collect();
    if originals.is_empty() {
        return scene.clone();
    }
    let positive: Vec<f64> = field.cell_size.iter().copied().filter(|c| *c > 0.0).collect();
    let Some(step) = positive.iter().copied().reduce(f64::min) else {
        return scene.clone();
    };
    let eye = cam.center();
    let [nx, ny, nz] = field.dims;

    let mut occupied = vec![false; field.values.len()];
    for g in scene.gaussians.iter().filter(|g| g.padded) {
        if let Some(n) = field.nearest_node(&g.position) {
            occupied[field.index(n[0], n[1], n[2])] = true;
        }
    }

    let hits: Vec<Vec<[usize; 3]>> = (0..nx)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            for j in 0..ny {
                for k in 0..nz {
                    if !occupied[field.index(i, j, k)] && occluded(field, [i, j, k], &eye, step, tau) {
                        out.push([i, j, k]);
                    }
                }
            }
            out
        })
        .collect();

    // Isotropic cube with the cell's volume.
    let cell_volume: f64 = positive.iter().product::<f64>() * step.powi(3 - positive.len() as i32);
    let scale = 0.5 * cell_volume.cbrt();
    let positions: Vec<Vector3<f64>> = originals.iter().map(|g| g.position).collect();
    let spacing = (scene.bounds.extent().max() / (positions.len() as f64).cbrt()).max(step);
    let lookup = PointGrid::new(&positions, spacing);

    let mut out = scene.clone();
    for n in hits.into_iter().flatten() {
        let p = field.node_position(n[0], n[1], n[2]);
        let (_, nearest) = lookup.nearest(&p).expect("non-empty originals");
        let mut g = Gaussian::isotropic(p, scale, originals[nearest].color, 0.0);
        g.padded = true;
        out.gaussians.push(g);
    }
    out
}
