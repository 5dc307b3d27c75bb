use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{logit, quat_to_rotation, sigmoid};

#[derive(Debug, Error, PartialEq)]
pub enum InvalidGaussian {
    #[error("non-finite position")]
    Position,
    #[error("rotation quaternion is not unit length (norm {0})")]
    Rotation(f64),
    #[error("scale must be finite and strictly positive")]
    Scale,
    #[error("color channel outside [0, 1]")]
    Color,
    #[error("opacity outside [0, 1]")]
    Opacity,
}

/// One anisotropic splat. Scale and opacity are held in the log / logit
/// parameterization the optimizer works in, which is also what the scene
/// file stores, so save/load round-trips are bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: Vector4<f64>,
    pub log_scale: Vector3<f64>,
    pub color: Vector3<f64>,
    pub opacity_logit: f64,
    /// Interior support particle inserted by padding.
    pub padded: bool,
}

impl Gaussian {
    pub fn new(
        position: Vector3<f64>,
        rotation: Vector4<f64>,
        scale: Vector3<f64>,
        color: Vector3<f64>,
        opacity: f64,
    ) -> Self {
        Self {
            position,
            rotation: rotation.normalize(),
            log_scale: scale.map(f64::ln),
            color,
            opacity_logit: logit(opacity),
            padded: false,
        }
    }

    pub fn isotropic(position: Vector3<f64>, scale: f64, color: Vector3<f64>, opacity: f64) -> Self {
        Self::new(
            position,
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            Vector3::repeat(scale),
            color,
            opacity,
        )
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_rotation(&self.rotation)
    }

    /// `R diag(scale^2) R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s2 = self.scale().map(|s| s * s);
        r * Matrix3::from_diagonal(&s2) * r.transpose()
    }

    /// max(scale) / min(scale), evaluated as a difference of logs.
    pub fn log_anisotropy(&self) -> f64 {
        self.log_scale.max() - self.log_scale.min()
    }

    pub fn validate(&self) -> Result<(), InvalidGaussian> {
        if !self.position.iter().all(|v| v.is_finite()) {
            return Err(InvalidGaussian::Position);
        }
        let n = self.rotation.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(InvalidGaussian::Rotation(n));
        }
        if !self.log_scale.iter().all(|v| v.is_finite()) {
            return Err(InvalidGaussian::Scale);
        }
        if !self.color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(InvalidGaussian::Color);
        }
        if self.opacity_logit.is_nan() {
            return Err(InvalidGaussian::Opacity);
        }
        Ok(())
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = Self::new(first, first);
        for p in it {
            b.min = b.min.inf(p);
            b.max = b.max.sup(p);
        }
        Some(b)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Vector3<f64> {
        0.5 * (self.min + self.max)
    }

    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - tol && p[a] <= self.max[a] + tol)
    }

    /// Grows degenerate (flat) axes so every side is at least `min_side`.
    pub fn with_min_side(mut self, min_side: f64) -> Self {
        for a in 0..3 {
            let e = self.max[a] - self.min[a];
            if e < min_side {
                let c = 0.5 * (self.max[a] + self.min[a]);
                self.min[a] = c - 0.5 * min_side;
                self.max[a] = c + 0.5 * min_side;
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaterialError {
    #[error("Young's modulus must be positive, got {0}")]
    YoungsModulus(f64),
    #[error("Poisson ratio must lie in [0, 0.5), got {0}")]
    PoissonRatio(f64),
    #[error("density must be positive, got {0}")]
    Density(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialParams {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self { youngs_modulus: 3000.0, poisson_ratio: 0.45, density: 1000.0 }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<(), MaterialError> {
        if !(self.youngs_modulus > 0.0 && self.youngs_modulus.is_finite()) {
            return Err(MaterialError::YoungsModulus(self.youngs_modulus));
        }
        // nu = 0 is admitted: lambda collapses to zero but the model stays valid.
        if !(self.poisson_ratio >= 0.0 && self.poisson_ratio < 0.5) {
            return Err(MaterialError::PoissonRatio(self.poisson_ratio));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(MaterialError::Density(self.density));
        }
        Ok(())
    }

    /// Lamé parameters `(mu, lambda)`.
    pub fn lame(&self) -> (f64, f64) {
        lame(self.youngs_modulus, self.poisson_ratio)
    }
}

/// Lamé parameters from Young's modulus and Poisson ratio.
pub fn lame(youngs_modulus: f64, poisson_ratio: f64) -> (f64, f64) {
    let e = youngs_modulus;
    let nu = poisson_ratio;
    let mu = e / (2.0 * (1.0 + nu));
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    (mu, lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian>,
    pub material: MaterialParams,
    pub bounds: Aabb,
}

impl Scene {
    /// Builds a scene whose bounds enclose every Gaussian center.
    pub fn new(gaussians: Vec<Gaussian>, material: MaterialParams) -> Self {
        let bounds = Aabb::from_points(gaussians.iter().map(|g| &g.position))
            .unwrap_or_else(|| Aabb::new(Vector3::zeros(), Vector3::zeros()));
        Self { gaussians, material, bounds }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), MaterialParams::default())
    }

    pub fn recompute_bounds(&mut self) {
        if let Some(b) = Aabb::from_points(self.gaussians.iter().map(|g| &g.position)) {
            self.bounds = b;
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn axis_gaussian(scale: [f64; 3], rotation: Vector4<f64>) -> Gaussian {
        Gaussian::new(
            Vector3::zeros(),
            rotation,
            Vector3::from(scale),
            Vector3::repeat(0.5),
            0.5,
        )
    }

    #[test]
    fn covariance_identity_cases() {
        let id = Vector4::new(1.0, 0.0, 0.0, 0.0);
        let c = axis_gaussian([1.0, 1.0, 1.0], id).covariance();
        assert!((c - Matrix3::identity()).norm() < 1e-12);
        let c = axis_gaussian([2.0, 1.0, 1.0], id).covariance();
        assert!((c - Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0))).norm() < 1e-12);
    }

    #[test]
    fn covariance_rotated_about_z() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let c = axis_gaussian([2.0, 1.0, 1.0], Vector4::new(h, 0.0, 0.0, h)).covariance();
        assert!((c - Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0))).norm() < 1e-12);
    }

    #[test]
    fn lame_values() {
        let (mu, la) = lame(1.0, 0.25);
        assert!((mu - 0.4).abs() < 1e-15 && (la - 0.4).abs() < 1e-15);
        let (mu, la) = lame(2.0, 0.0);
        assert_eq!((mu, la), (1.0, 0.0));
        let (mu, la) = lame(3000.0, 0.45);
        assert!((mu - 3000.0 / 2.9).abs() < 1e-9);
        assert!((la - 1350.0 / (1.45 * 0.1)).abs() < 1e-9);
        assert!((mu - 1034.4827586).abs() < 1e-6 && (la - 9310.3448276).abs() < 1e-6);
    }

    #[test]
    fn material_rejects_incompressible() {
        let m = MaterialParams { poisson_ratio: 0.5, ..Default::default() };
        assert!(m.validate().is_err());
        assert!(MaterialParams::default().validate().is_ok());
    }

    #[test]
    fn opacity_extremes_are_exact() {
        let g = Gaussian::isotropic(Vector3::zeros(), 1.0, Vector3::zeros(), 1.0);
        assert_eq!(g.opacity(), 1.0);
        let g = Gaussian::isotropic(Vector3::zeros(), 1.0, Vector3::zeros(), 0.0);
        assert_eq!(g.opacity(), 0.0);
    }

    proptest! {
        #[test]
        fn covariance_is_spd(
            q in prop::array::uniform4(-1.0f64..1.0),
            s in prop::array::uniform3(-4.0f64..2.0),
        ) {
            let q = Vector4::from(q);
            prop_assume!(q.norm() > 1e-3);
            let g = axis_gaussian([s[0].exp(), s[1].exp(), s[2].exp()], q);
            let c = g.covariance();
            prop_assert!((c - c.transpose()).norm() <= 1e-9 * c.norm());
            let mut eig: Vec<f64> = c.symmetric_eigen().eigenvalues.iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            let mut expect: Vec<f64> = g.scale().iter().map(|v| v * v).collect();
            expect.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&expect) {
                prop_assert!(*a > 0.0);
                prop_assert!((a - b).abs() <= 1e-6 * b.max(1.0));
            }
        }
    }
}
