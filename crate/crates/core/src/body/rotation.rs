//! Axis-angle rotations and their derivatives.

use nalgebra::{Matrix3, Rotation3, Vector3};

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues map from an axis-angle vector to a rotation matrix.
pub fn exp(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = r.norm_squared();
    let k = skew(r);
    if theta2 < 1e-16 {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let theta = theta2.sqrt();
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    Matrix3::identity() + a * k + b * k * k
}

/// Partial derivatives of [`exp`] with respect to each component of `r`.
///
/// Uses the closed form `dR/dr_i = (r_i [r]x + [r x (I - R) e_i]x) R / |r|^2`,
/// switching to a second-order expansion near the identity.
pub fn exp_derivatives(r: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let theta2 = r.norm_squared();
    let mut out = [Matrix3::zeros(); 3];
    if theta2 < 1e-10 {
        let kr = skew(r);
        for (i, d) in out.iter_mut().enumerate() {
            let ei = skew(&Vector3::ith(i, 1.0));
            *d = ei + 0.5 * (ei * kr + kr * ei);
        }
        return out;
    }
    let rot = exp(r);
    let kr = skew(r);
    let i_minus_r = Matrix3::identity() - rot;
    for (i, d) in out.iter_mut().enumerate() {
        let col = i_minus_r.column(i).into_owned();
        let m = r[i] * kr + skew(&r.cross(&col));
        *d = m * rot / theta2;
    }
    out
}

/// Inverse of [`exp`], returning the axis-angle vector with angle in `[0, pi]`.
pub fn log(m: &Matrix3<f64>) -> Vector3<f64> {
    Rotation3::from_matrix_unchecked(*m).scaled_axis()
}
