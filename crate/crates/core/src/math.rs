//! Small linear-algebra helpers shared by the renderer, the optimizer and the
//! simulator.

use nalgebra::{Matrix3, Vector4};

/// Rotation matrix of the quaternion `(w, x, y, z)`, normalized first.
pub fn quat_to_rotation(q: &Vector4<f64>) -> Matrix3<f64> {
    let n = q.norm();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient with respect to the rotation matrix back onto the raw
/// (not necessarily normalized) quaternion `(w, x, y, z)`.
pub fn rotation_grad_to_quat(q: &Vector4<f64>, grad_r: &Matrix3<f64>) -> Vector4<f64> {
    let n = q.norm();
    let u = q / n;
    let (w, x, y, z) = (u[0], u[1], u[2], u[3]);
    let g = grad_r;
    let dw = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let dx = Matrix3::new(
        0.0,
        2.0 * y,
        2.0 * z,
        2.0 * y,
        -4.0 * x,
        -2.0 * w,
        2.0 * z,
        2.0 * w,
        -4.0 * x,
    );
    let dy = Matrix3::new(
        -4.0 * y,
        2.0 * x,
        2.0 * w,
        2.0 * x,
        0.0,
        2.0 * z,
        -2.0 * w,
        2.0 * z,
        -4.0 * y,
    );
    let dz = Matrix3::new(
        -4.0 * z,
        -2.0 * w,
        2.0 * x,
        2.0 * w,
        -4.0 * z,
        2.0 * y,
        2.0 * x,
        2.0 * y,
        0.0,
    );
    let grad_unit = Vector4::new(
        g.component_mul(&dw).sum(),
        g.component_mul(&dx).sum(),
        g.component_mul(&dy).sum(),
        g.component_mul(&dz).sum(),
    );
    // Project through the normalization q / |q|.
    (grad_unit - u * u.dot(&grad_unit)) / n
}

/// Symmetric eigen-decomposition `cov = R diag(s^2) R^T` returned as a
/// proper-rotation quaternion `(w, x, y, z)` and the standard deviations.
pub fn decompose_covariance(cov: &Matrix3<f64>) -> (Vector4<f64>, nalgebra::Vector3<f64>) {
    let sym = 0.5 * (cov + cov.transpose());
    let eig = sym.symmetric_eigen();
    let mut r = eig.eigenvectors;
    if r.determinant() < 0.0 {
        r.column_mut(2).neg_mut();
    }
    let rot = nalgebra::Rotation3::from_matrix_unchecked(r);
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
    let s = eig.eigenvalues.map(|v| v.max(1e-30).sqrt());
    (Vector4::new(q.w, q.i, q.j, q.k), s)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
