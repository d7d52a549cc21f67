//! Continuous 6D rotation encoding and a few rotation helpers.
//!
//! A 6D vector holds the first two columns of a rotation matrix. Decoding
//! runs Gram-Schmidt on the two 3-vectors and completes the frame with a
//! cross product, so any non-degenerate input maps to a proper rotation.

use nalgebra::{Matrix3, Unit, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Rot6 = [f64; 6];

/// Below this norm a 6D column is treated as zero.
const DEGENERATE_EPS: f64 = 1e-12;

pub const IDENTITY_6D: Rot6 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Intermediate quantities of the Gram-Schmidt decode, kept for the
/// backward pass.
#[derive(Clone, Copy, Debug)]
struct Decoded {
    a2: Vector3<f64>,
    n1: f64,
    n2: f64,
    b1: Vector3<f64>,
    b2: Vector3<f64>,
    b3: Vector3<f64>,
}

fn decode(v: &[f64]) -> Result<Decoded> {
    if v.len() != 6 {
        return Err(Error::Shape(format!("6D rotation needs 6 values, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("6D rotation component".into()));
    }
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);
    let n1 = a1.norm();
    if n1 < DEGENERATE_EPS {
        return Err(Error::Degenerate6d("first column is zero"));
    }
    let b1 = a1 / n1;
    let u = a2 - b1 * b1.dot(&a2);
    let n2 = u.norm();
    if n2 < DEGENERATE_EPS * a2.norm().max(1.0) {
        return Err(Error::Degenerate6d("columns are parallel or second column is zero"));
    }
    let b2 = u / n2;
    let b3 = b1.cross(&b2);
    Ok(Decoded { a2, n1, n2, b1, b2, b3 })
}

pub fn rot6d_to_matrix(v: &[f64]) -> Result<Matrix3<f64>> {
    let d = decode(v)?;
    Ok(Matrix3::from_columns(&[d.b1, d.b2, d.b3]))
}

/// Pulls a gradient with respect to the decoded matrix back onto the six
/// input coordinates.
pub fn rot6d_backward(v: &[f64], grad: &Matrix3<f64>) -> Result<Rot6> {
    let d = decode(v)?;
    let mut gb1: Vector3<f64> = grad.column(0).into();
    let mut gb2: Vector3<f64> = grad.column(1).into();
    let gb3: Vector3<f64> = grad.column(2).into();

    // b3 = b1 x b2
    gb1 += d.b2.cross(&gb3);
    gb2 += gb3.cross(&d.b1);

    // b2 = u / |u|
    let gu = (gb2 - d.b2 * d.b2.dot(&gb2)) / d.n2;

    // u = a2 - (b1 . a2) b1
    let b1_gu = d.b1.dot(&gu);
    let ga2 = gu - d.b1 * b1_gu;
    gb1 -= d.a2 * b1_gu + gu * d.b1.dot(&d.a2);

    // b1 = a1 / |a1|
    let ga1 = (gb1 - d.b1 * d.b1.dot(&gb1)) / d.n1;

    Ok([ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z])
}

/// Largest absolute entry of `RᵀR - I` plus the determinant error.
pub fn orthonormality_residual(r: &Matrix3<f64>) -> f64 {
    let rtr = r.transpose() * r - Matrix3::identity();
    rtr.amax() + (r.determinant() - 1.0).abs()
}

pub fn matrix_to_rot6d(r: &Matrix3<f64>) -> Result<Rot6> {
    let residual = orthonormality_residual(r);
    if !residual.is_finite() || residual > 1e-6 {
        return Err(Error::NotOrthonormal { residual });
    }
    Ok(matrix_to_rot6d_unchecked(r))
}

pub(crate) fn matrix_to_rot6d_unchecked(r: &Matrix3<f64>) -> Rot6 {
    [r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 1)], r[(1, 1)], r[(2, 1)]]
}

/// Decode then re-encode, snapping an arbitrary 6D vector onto the
/// canonical encoding of its rotation.
pub fn normalize_rot6d(v: &[f64]) -> Result<Rot6> {
    Ok(matrix_to_rot6d_unchecked(&rot6d_to_matrix(v)?))
}

pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    match Unit::try_new(*axis, 1e-15) {
        Some(axis) => *UnitQuaternion::from_axis_angle(&axis, angle).to_rotation_matrix().matrix(),
        None => Matrix3::identity(),
    }
}

/// Minimal rotation taking direction `from` onto direction `to`.
///
/// Antiparallel inputs rotate by π about `fallback_axis` (or any axis
/// orthogonal to `from` when the fallback is unusable).
pub fn rotation_between(from: &Vector3<f64>, to: &Vector3<f64>, fallback_axis: &Vector3<f64>) -> Matrix3<f64> {
    let (Some(f), Some(t)) = (from.try_normalize(1e-15), to.try_normalize(1e-15)) else {
        return Matrix3::identity();
    };
    let axis = f.cross(&t);
    let sin = axis.norm();
    let cos = f.dot(&t).clamp(-1.0, 1.0);
    if sin > 1e-12 {
        return axis_angle(&axis, sin.atan2(cos));
    }
    if cos > 0.0 {
        return Matrix3::identity();
    }
    let mut perp = fallback_axis - f * f.dot(fallback_axis);
    if perp.norm() < 1e-9 {
        perp = f.cross(&Vector3::x());
        if perp.norm() < 1e-9 {
            perp = f.cross(&Vector3::y());
        }
    }
    axis_angle(&perp, std::f64::consts::PI)
}
