use super::rotation::{rotation_between, Mat3, Vec3};

/// Analytic two-bone inverse kinematics.
///
/// `upper_world` is placed at `base`; its child sits at `mid_offset` and the
/// end effector at `end_offset` from the child (both rest offsets, local to
/// their parents). `rest_pole` is the bend direction in the upper joint's
/// rest frame and `pole` the desired bend direction in world space.
///
/// Returns the world rotations of the upper and middle joints. Targets out
/// of reach are clamped onto the reachable shell.
pub fn two_bone_ik(
    base: &Vec3,
    target: &Vec3,
    mid_offset: &Vec3,
    end_offset: &Vec3,
    rest_pole: &Vec3,
    pole: &Vec3,
) -> (Mat3, Mat3) {
    let a = mid_offset.norm();
    let b = end_offset.norm();
    let to_target = target - base;
    let lo = (a - b).abs() + 1e-6;
    let hi = a + b - 1e-6;
    let d = to_target.norm().clamp(lo, hi);
    let u = if to_target.norm() > 1e-12 {
        to_target.normalize()
    } else {
        -Vec3::z()
    };
    let mut v = pole - u * u.dot(pole);
    if v.norm() < 1e-9 {
        v = u.cross(&Vec3::x()).cross(&u);
    }
    let v = v.normalize();

    let cos_alpha = ((a * a + d * d - b * b) / (2.0 * a * d)).clamp(-1.0, 1.0);
    let sin_alpha = (1.0 - cos_alpha * cos_alpha).sqrt();
    let mid = base + (u * cos_alpha + v * sin_alpha) * a;
    let end = base + u * d;

    let frame = |dir: &Vec3, normal: &Vec3| {
        let n = (normal - dir * dir.dot(normal)).normalize();
        Mat3::from_columns(&[*dir, n, dir.cross(&n)])
    };
    let d_rest = mid_offset.normalize();
    let n_rest = d_rest.cross(rest_pole);
    let d_world = (mid - base).normalize();
    let n_world = u.cross(&v);
    let upper = frame(&d_world, &n_world) * frame(&d_rest, &n_rest).transpose();

    let current = (upper * end_offset).normalize();
    let wanted = (end - mid).normalize();
    let middle = rotation_between(&current, &wanted) * upper;
    (upper, middle)
}
