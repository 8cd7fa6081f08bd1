//! Rotation helpers: the continuous 6D representation, axis rotations and
//! validity checks.
//!
//! Rotations are held as `Mat3` everywhere inside the crate; the 6D form is
//! only used where rotations cross into feature vectors.

use nalgebra::{Matrix3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::KinematicsError;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Reflection across the sagittal plane `x = 0`.
pub fn sagittal_reflection() -> Mat3 {
    Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0))
}

/// First two columns of a rotation matrix, column-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation6D(pub [f64; 6]);

impl Rotation6D {
    pub const IDENTITY: Rotation6D = Rotation6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn from_slice(s: &[f64]) -> Self {
        let mut r = [0.0; 6];
        r.copy_from_slice(&s[..6]);
        Rotation6D(r)
    }

    pub fn first(&self) -> Vec3 {
        Vec3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn second(&self) -> Vec3 {
        Vec3::new(self.0[3], self.0[4], self.0[5])
    }
}

const DEGENERATE_NORM: f64 = 1e-8;
const DEGENERATE_COS: f64 = 1.0 - 1e-8;

/// Gram-Schmidt decode of a 6D rotation. The third column is the cross
/// product of the orthonormalized first two.
pub fn rot6d_to_matrix(r: &Rotation6D) -> Result<Mat3, KinematicsError> {
    let a = r.first();
    let b = r.second();
    let na = a.norm();
    let nb = b.norm();
    if !(na > DEGENERATE_NORM && nb > DEGENERATE_NORM) {
        return Err(KinematicsError::DegenerateRotation(format!(
            "column norms {na:e}, {nb:e}"
        )));
    }
    let cos = a.dot(&b) / (na * nb);
    if !(cos.abs() < DEGENERATE_COS) {
        return Err(KinematicsError::DegenerateRotation(format!(
            "columns nearly parallel (cos = {cos})"
        )));
    }
    Ok(gram_schmidt(&a, &b))
}

/// Unchecked Gram-Schmidt; callers guarantee non-degenerate input.
pub(crate) fn gram_schmidt(a: &Vec3, b: &Vec3) -> Mat3 {
    let e1 = a / a.norm();
    let b_perp = b - e1 * e1.dot(b);
    let e2 = b_perp / b_perp.norm();
    let e3 = e1.cross(&e2);
    Mat3::from_columns(&[e1, e2, e3])
}

/// Backward pass of [`gram_schmidt`]: maps the gradient w.r.t. the output
/// matrix onto the gradients w.r.t. the two input columns.
pub(crate) fn gram_schmidt_backward(a: &Vec3, b: &Vec3, grad: &Mat3) -> (Vec3, Vec3) {
    let na = a.norm();
    let e1 = a / na;
    let s = e1.dot(b);
    let b_perp = b - e1 * s;
    let nbp = b_perp.norm();
    let e2 = b_perp / nbp;

    let g1 = grad.column(0).into_owned();
    let g2 = grad.column(1).into_owned();
    let g3 = grad.column(2).into_owned();

    // e3 = e1 x e2
    let mut ge1 = g1 + e2.cross(&g3);
    let ge2 = g2 + g3.cross(&e1);

    // e2 = b_perp / |b_perp|
    let gbp = (ge2 - e2 * e2.dot(&ge2)) / nbp;
    // b_perp = b - (e1 . b) e1
    let gb = gbp - e1 * e1.dot(&gbp);
    ge1 -= gbp * s + b * e1.dot(&gbp);

    // e1 = a / |a|
    let ga = (ge1 - e1 * e1.dot(&ge1)) / na;
    (ga, gb)
}

/// Returns the first two columns of `m`. Fails when `m` is not a proper
/// rotation within 1e-6.
pub fn rot6d_from_matrix(m: &Mat3) -> Result<Rotation6D, KinematicsError> {
    check_rotation(m, 1e-6)?;
    Ok(rot6d_from_matrix_unchecked(m))
}

pub(crate) fn rot6d_from_matrix_unchecked(m: &Mat3) -> Rotation6D {
    Rotation6D([
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ])
}

pub fn check_rotation(m: &Mat3, tol: f64) -> Result<(), KinematicsError> {
    let ortho = (m.transpose() * m - Mat3::identity()).abs().max();
    let det = m.determinant();
    if ortho > tol || (det - 1.0).abs() > tol || !m.iter().all(|v| v.is_finite()) {
        return Err(KinematicsError::NotARotation(format!(
            "orthogonality error {ortho:e}, det {det}"
        )));
    }
    Ok(())
}

pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle)
        .to_rotation_matrix()
        .into_inner()
}

/// Projects a near-rotation back onto SO(3) via the polar decomposition.
pub fn orthonormalize(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * v_t;
    }
    r
}

/// Rotation that takes unit vector `from` onto unit vector `to` along the
/// shortest arc.
pub fn rotation_between(from: &Vec3, to: &Vec3) -> Mat3 {
    match UnitQuaternion::rotation_between(from, to) {
        Some(q) => q.to_rotation_matrix().into_inner(),
        // antiparallel: rotate by pi about any perpendicular axis
        None => {
            let helper = if from.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            axis_angle(&from.cross(&helper), std::f64::consts::PI)
        }
    }
}

/// Yaw of a rotation about +Z.
pub fn yaw_of(m: &Mat3) -> f64 {
    m[(1, 0)].atan2(m[(0, 0)])
}
