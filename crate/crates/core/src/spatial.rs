//! Uniform hash grid for nearest-neighbour queries on point sets.

use std::collections::HashMap;

use nalgebra::Vector3;

pub struct PointGrid<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
}

impl<'a> PointGrid<'a> {
    /// `cell` should be on the order of the typical point spacing.
    pub fn new(points: &'a [Vector3<f64>], cell: f64) -> Self {
        let cell = if cell > 0.0 && cell.is_finite() { cell } else { 1.0 };
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key_of(p, cell)).or_default().push(i as u32);
        }
        Self { points, cell, cells }
    }

    fn key_of(p: &Vector3<f64>, cell: f64) -> [i64; 3] {
        [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64]
    }

    /// Up to `k` nearest points to `q` (excluding index `skip`), as
    /// `(distance, index)` sorted by distance then index.
    pub fn k_nearest(&self, q: &Vector3<f64>, k: usize, skip: Option<usize>) -> Vec<(f64, usize)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let available = self.points.len() - usize::from(skip.is_some());
        let want = k.min(available);
        let center = Self::key_of(q, self.cell);
        let mut best: Vec<(f64, usize)> = Vec::new();
        let mut ring: i64 = 0;
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let key = [center[0] + dx, center[1] + dy, center[2] + dz];
                        if let Some(ids) = self.cells.get(&key) {
                            for &i in ids {
                                let i = i as usize;
                                if Some(i) != skip {
                                    best.push(((self.points[i] - q).norm(), i));
                                }
                            }
                        }
                    }
                }
            }
            best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            best.truncate(want);
            // Anything outside the searched shell is at least `ring * cell` away.
            if best.len() == want && best.last().is_some_and(|b| b.0 <= ring as f64 * self.cell) {
                return best;
            }
            if ring >= 64 {
                let mut all: Vec<(f64, usize)> = (0..self.points.len())
                    .filter(|&i| Some(i) != skip)
                    .map(|i| ((self.points[i] - q).norm(), i))
                    .collect();
                all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                all.truncate(want);
                return all;
            }
            ring += 1;
        }
    }

    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(f64, usize)> {
        self.k_nearest(q, 1, None).into_iter().next()
    }
}
