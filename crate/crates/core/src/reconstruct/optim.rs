use nalgebra::{Vector3, Vector4};

use crate::math::sigmoid;
use crate::render::GaussianGrad;
use crate::scene::Gaussian;

pub const PARAMS_PER_GAUSSIAN: usize = 14;

/// Parameter groups with their own learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Position,
    Rotation,
    LogScale,
    Color,
    OpacityLogit,
}

impl ParamGroup {
    /// Group of flat parameter slot `k`.
    pub fn of(k: usize) -> Self {
        match k {
            0..=2 => Self::Position,
            3..=6 => Self::Rotation,
            7..=9 => Self::LogScale,
            10..=12 => Self::Color,
            _ => Self::OpacityLogit,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Unconstrained optimizer view of a Gaussian:
/// `[x y z | qw qx qy qz | log s (3) | r g b | opacity logit]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawParams(pub [f64; PARAMS_PER_GAUSSIAN]);

impl RawParams {
    pub fn from_gaussian(g: &Gaussian) -> Self {
        let mut v = [0.0; PARAMS_PER_GAUSSIAN];
        v[0..3].copy_from_slice(g.position.as_slice());
        v[3..7].copy_from_slice(g.rotation.as_slice());
        v[7..10].copy_from_slice(g.log_scale.as_slice());
        v[10..13].copy_from_slice(g.color.as_slice());
        v[13] = g.opacity_logit;
        Self(v)
    }

    pub fn to_gaussian(&self, padded: bool) -> Gaussian {
        let v = &self.0;
        Gaussian {
            position: Vector3::new(v[0], v[1], v[2]),
            rotation: Vector4::new(v[3], v[4], v[5], v[6]),
            log_scale: self.log_scale(),
            color: Vector3::new(v[10], v[11], v[12]),
            opacity_logit: v[13],
            padded,
        }
    }

    pub fn log_scale(&self) -> Vector3<f64> {
        Vector3::new(self.0[7], self.0[8], self.0[9])
    }

    pub fn opacity_logit(&self) -> f64 {
        self.0[13]
    }

    pub fn log_anisotropy(&self) -> f64 {
        let s = self.log_scale();
        s.max() - s.min()
    }

    pub fn set_position(&mut self, p: Vector3<f64>) {
        self.0[0..3].copy_from_slice(p.as_slice());
    }

    pub fn set_log_scale(&mut self, s: Vector3<f64>) {
        self.0[7..10].copy_from_slice(s.as_slice());
    }

    /// Maps renderer gradients (linear scale and opacity) into this
    /// parameterization.
    pub fn chain_gradient(&self, g: &GaussianGrad, gauss: &Gaussian) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut out = [0.0; PARAMS_PER_GAUSSIAN];
        out[0..3].copy_from_slice(g.position.as_slice());
        out[3..7].copy_from_slice(g.rotation.as_slice());
        let scale = gauss.scale();
        for k in 0..3 {
            out[7 + k] = g.scale[k] * scale[k];
        }
        out[10..13].copy_from_slice(g.color.as_slice());
        let o = sigmoid(self.0[13]);
        out[13] = g.opacity * o * (1.0 - o);
        out
    }

    /// Restores the invariants the optimizer step can break.
    fn project(&mut self) {
        let q = Vector4::new(self.0[3], self.0[4], self.0[5], self.0[6]);
        let n = q.norm();
        if n > 0.0 && n.is_finite() {
            for k in 0..4 {
                self.0[3 + k] /= n;
            }
        } else {
            self.0[3..7].copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        }
        for k in 10..13 {
            self.0[k] = self.0[k].clamp(0.0, 1.0);
        }
    }
}

/// Adam with one learning rate per [`ParamGroup`] and a shared step count.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
    v: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            step: 0,
            m: vec![[0.0; PARAMS_PER_GAUSSIAN]; n],
            v: vec![[0.0; PARAMS_PER_GAUSSIAN]; n],
        }
    }

    pub fn push(&mut self) {
        self.m.push([0.0; PARAMS_PER_GAUSSIAN]);
        self.v.push([0.0; PARAMS_PER_GAUSSIAN]);
    }

    pub fn retain(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.m.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.v.retain(|_| *it.next().unwrap());
    }

    /// `lrs` is indexed by [`ParamGroup`] order.
    pub fn step(&mut self, params: &mut [RawParams], grads: &[[f64; PARAMS_PER_GAUSSIAN]], lrs: &[f64; 5]) {
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let slot_lr: [f64; PARAMS_PER_GAUSSIAN] = std::array::from_fn(|k| lrs[ParamGroup::of(k).index()]);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..PARAMS_PER_GAUSSIAN {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p.0[k] -= slot_lr[k] * mh / (vh.sqrt() + self.eps);
            }
            p.project();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_round_trip() {
        let g = Gaussian::new(
            Vector3::new(1.0, 2.0, 3.0),
            Vector4::new(0.5, 0.5, 0.5, 0.5),
            Vector3::new(0.1, 0.2, 0.3),
            Vector3::new(0.1, 0.5, 0.9),
            0.25,
        );
        assert_eq!(RawParams::from_gaussian(&g).to_gaussian(false), g);
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut p = vec![RawParams([0.0; PARAMS_PER_GAUSSIAN])];
        p[0].0[3] = 1.0;
        let mut g = [0.0; PARAMS_PER_GAUSSIAN];
        g[0] = 3.0;
        g[10] = -0.5;
        let mut adam = Adam::new(1);
        adam.step(&mut p, &[g], &[0.1, 0.0, 0.0, 0.2, 0.0]);
        assert!((p[0].0[0] + 0.1).abs() < 1e-12);
        assert!((p[0].0[10] - 0.2).abs() < 1e-12);
        assert_eq!(p[0].0[1], 0.0);
    }

    #[test]
    fn groups_cover_all_slots() {
        let groups: Vec<ParamGroup> = (0..PARAMS_PER_GAUSSIAN).map(ParamGroup::of).collect();
        assert_eq!(groups[13], ParamGroup::OpacityLogit);
        assert_eq!(groups.iter().filter(|g| **g == ParamGroup::Rotation).count(), 4);
    }
}
