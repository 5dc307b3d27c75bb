//! Neo-Hookean elasticity.

use nalgebra::Matrix3;

use super::SimError;

/// Singular values are clamped to this range when the guard triggers.
pub const GUARD_SIGMA_MIN: f64 = 0.05;
pub const GUARD_SIGMA_MAX: f64 = 4.0;
/// `det F` below which the guard triggers.
pub const GUARD_DET: f64 = 1e-4;

/// First Piola-Kirchhoff stress `mu (F - F^-T) + lambda ln(J) F^-T`.
pub fn pk1_stress(f: &Matrix3<f64>, mu: f64, lambda: f64) -> Result<Matrix3<f64>, SimError> {
    let det = f.determinant();
    if !(det > 0.0) {
        return Err(SimError::Inverted { det });
    }
    let f_inv_t = f.try_inverse().ok_or(SimError::Inverted { det })?.transpose();
    Ok((f - f_inv_t) * mu + f_inv_t * (lambda * det.ln()))
}

/// Kirchhoff stress `P F^T = mu (F F^T - I) + lambda ln(J) I`; avoids the inverse.
#[inline]
pub fn kirchhoff_stress(f: &Matrix3<f64>, mu: f64, lambda: f64) -> Matrix3<f64> {
    kirchhoff_stress_with_det(f, f.determinant(), mu, lambda)
}

/// [`kirchhoff_stress`] with `det F` already known.
#[inline]
pub fn kirchhoff_stress_with_det(f: &Matrix3<f64>, det: f64, mu: f64, lambda: f64) -> Matrix3<f64> {
    let ln_j = det.ln();
    let mut tau = (f * f.transpose()) * mu;
    for k in 0..3 {
        tau[(k, k)] += lambda * ln_j - mu;
    }
    tau
}

/// Strain energy density `mu/2 (tr(F^T F) - 3) - mu ln J + lambda/2 (ln J)^2`.
pub fn energy_density(f: &Matrix3<f64>, mu: f64, lambda: f64) -> f64 {
    let ln_j = f.determinant().ln();
    0.5 * mu * (f.norm_squared() - 3.0) - mu * ln_j + 0.5 * lambda * ln_j * ln_j
}

/// Returns `F` unchanged unless `det F < GUARD_DET`, in which case the
/// singular values are clamped and the result is a proper (det > 0) matrix.
pub fn guard_inversion(f: &Matrix3<f64>) -> Matrix3<f64> {
    if f.determinant() >= GUARD_DET {
        return *f;
    }
    let svd = f.svd(true, true);
    let (Some(mut u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Matrix3::identity();
    };
    let mut sigma = svd.singular_values.map(|s| s.clamp(GUARD_SIGMA_MIN, GUARD_SIGMA_MAX));
    if u.determinant() * v_t.determinant() < 0.0 {
        // Reflection: flip the weakest direction instead of keeping det < 0.
        let k = sigma.imin();
        u.column_mut(k).neg_mut();
        sigma[k] = sigma[k].max(GUARD_SIGMA_MIN);
    }
    let g = u * Matrix3::from_diagonal(&sigma) * v_t;
    if !g.iter().all(|x| x.is_finite()) {
        return Matrix3::identity();
    }
    g
}

/// Deformed covariance `F cov0 F^T`.
pub fn deformed_covariance(f: &Matrix3<f64>, cov0: &Matrix3<f64>) -> Matrix3<f64> {
    f * cov0 * f.transpose()
}
