use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    Focal { fx: f64, fy: f64 },
    #[error("principal point ({cx}, {cy}) outside the {width}x{height} image")]
    PrincipalPoint { cx: f64, cy: f64, width: usize, height: usize },
    #[error("pose rotation is not orthonormal")]
    Rotation,
}

/// Pinhole camera. Pixel `(u, v)` is centered on the integer coordinate, so
/// the camera-space point `(x, y, z)` lands on `u = fx x / z + cx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vector3<f64>,
}

impl Camera {
    /// Identity-pose camera with the principal point at the image center.
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn with_pose(mut self, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        self.rotation = rotation;
        self.translation = translation;
        self
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::Focal { fx: self.fx, fy: self.fy });
        }
        if !(self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64)
        {
            return Err(CameraError::PrincipalPoint {
                cx: self.cx,
                cy: self.cy,
                width: self.width,
                height: self.height,
            });
        }
        if (self.rotation * self.rotation.transpose() - Matrix3::identity()).norm() > 1e-6 {
            return Err(CameraError::Rotation);
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Viewing direction (camera +z) in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    pub fn project(&self, p_cam: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }

    /// World point seen at pixel `(u, v)` with camera-z `depth`.
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let p_cam = Vector3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth);
        self.camera_to_world(&p_cam)
    }

    /// Uniformly rescales the image (and intrinsics) to a new width.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
            rotation: self.rotation,
            translation: self.translation,
        }
    }

    pub fn pose_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Camera on the -z side of `bounds`, looking down +z, framing its xy extent.
    pub fn framing(bounds: &crate::Aabb, width: usize, height: usize) -> Self {
        let ext = bounds.extent();
        let c = bounds.center();
        let half = (0.5 * ext.x.max(ext.y * width as f64 / height as f64)).max(1e-6);
        let dist = 2.5 * half;
        let eye = Vector3::new(c.x, c.y, bounds.min.z - dist);
        let focal = 0.45 * width as f64 * dist / half;
        Self::centered(width, height, focal).with_pose(Matrix3::identity(), -eye)
    }
}

/// JSON form of a camera as stored in `cameras.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    #[serde(default)]
    pub frame: Option<usize>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// 4x4 world-to-camera transform, row-major.
    pub world_to_camera: [f64; 16],
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let m = c.pose_matrix();
        let mut rows = [0.0; 16];
        for r in 0..4 {
            for col in 0..4 {
                rows[r * 4 + col] = m[(r, col)];
            }
        }
        Self {
            frame: None,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            world_to_camera: rows,
        }
    }
}

impl TryFrom<&CameraRecord> for Camera {
    type Error = CameraError;

    fn try_from(r: &CameraRecord) -> Result<Self, CameraError> {
        let m = &r.world_to_camera;
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        let cam = Camera {
            fx: r.fx,
            fy: r.fy,
            cx: r.cx,
            cy: r.cy,
            width: r.width,
            height: r.height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }
}

/// Row-major H x W raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }
}

pub type RgbImage = Raster<[f64; 3]>;

/// One posed RGB-D observation with its tool mask (`true` = tool pixel).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: RgbImage,
    pub depth: Raster<f64>,
    pub mask: Raster<bool>,
    pub camera: Camera,
}

#[derive(Debug, Error, PartialEq)]
pub enum FrameInvariant {
    #[error("{raster} is {got_w}x{got_h}, camera expects {want_w}x{want_h}")]
    Resolution { raster: &'static str, got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error("depth must be positive on unmasked pixel ({x}, {y}), got {value}")]
    Depth { x: usize, y: usize, value: f64 },
}

impl Frame {
    pub fn validate(&self) -> Result<(), FrameInvariant> {
        let (w, h) = (self.camera.width, self.camera.height);
        let dims = [
            ("image", self.image.width, self.image.height),
            ("depth", self.depth.width, self.depth.height),
            ("mask", self.mask.width, self.mask.height),
        ];
        for (name, gw, gh) in dims {
            if gw != w || gh != h {
                return Err(FrameInvariant::Resolution {
                    raster: name,
                    got_w: gw,
                    got_h: gh,
                    want_w: w,
                    want_h: h,
                });
            }
        }
        for (i, (&d, &m)) in self.depth.data.iter().zip(&self.mask.data).enumerate() {
            if !m && !(d > 0.0 && d.is_finite()) {
                return Err(FrameInvariant::Depth { x: i % w, y: i / w, value: d });
            }
        }
        Ok(())
    }

    pub fn unmasked_count(&self) -> usize {
        self.mask.data.iter().filter(|m| !**m).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trip() {
        let cam = Camera::centered(64, 48, 50.0).with_pose(
            *nalgebra::Rotation3::from_euler_angles(0.1, -0.2, 0.3).matrix(),
            Vector3::new(0.5, -1.0, 2.0),
        );
        let back = Camera::try_from(&CameraRecord::from(&cam)).unwrap();
        assert_eq!(back, cam);
    }

    #[test]
    fn back_projection_inverts_projection() {
        let cam = Camera::centered(64, 48, 50.0)
            .with_pose(*nalgebra::Rotation3::from_euler_angles(0.1, 0.2, 0.0).matrix(), Vector3::new(0.0, 0.0, 1.0));
        let p = cam.back_project(10.0, 20.0, 3.0);
        let pc = cam.world_to_camera(&p);
        let uv = cam.project(&pc);
        assert!((uv - Vector2::new(10.0, 20.0)).norm() < 1e-9);
        assert!((pc.z - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_principal_point_outside() {
        let mut cam = Camera::centered(10, 10, 5.0);
        cam.cx = 10.0;
        assert!(matches!(cam.validate(), Err(CameraError::PrincipalPoint { .. })));
    }
}
