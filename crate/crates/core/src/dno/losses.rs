use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{ContactPlan, DnoError, ObservationSet, PointRef};
use crate::kinematics::rotation::Vec3;
use crate::kinematics::SkeletonSpec;
use crate::representation::{DecodedGrad, DecodedMotion};

/// Unweighted task losses of one iterate plus their weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub lk: f64,
    pub foot: f64,
    pub ch: f64,
    pub close: f64,
    pub contact: f64,
    pub decorr: f64,
    pub total: f64,
}

fn l1(v: &Vec3) -> f64 {
    v.x.abs() + v.y.abs() + v.z.abs()
}

fn l1_grad(v: &Vec3, scale: f64) -> Vec3 {
    v.map(|c| sign(c) * scale)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Derivative of `clamp(v, 0, 1)`.
fn clamp01_slope(v: f64) -> f64 {
    if v > 0.0 && v < 1.0 {
        1.0
    } else {
        0.0
    }
}

/// `(1/N) Σ_i ‖x_i‖²` over the rows of the noise.
pub fn loss_lk(x_t: ArrayView2<f64>) -> f64 {
    x_t.iter().map(|v| v * v).sum::<f64>() / x_t.nrows().max(1) as f64
}

pub(crate) fn loss_lk_grad(x_t: ArrayView2<f64>, scale: f64) -> Array2<f64> {
    x_t.mapv(|v| 2.0 * scale * v / x_t.nrows().max(1) as f64)
}

/// Ground-contact term: `(1/(N−1)) Σ_{i<N−1} Σ_feet |z| · clamp(f, 0, 1)`
/// with predicted contacts `f`.
pub fn loss_ch(skel: &SkeletonSpec, motion: &DecodedMotion) -> f64 {
    loss_ch_impl(skel, motion, None)
}

pub(crate) fn loss_ch_impl(skel: &SkeletonSpec, motion: &DecodedMotion, mut grad: Option<(&mut DecodedGrad, f64)>) -> f64 {
    let n = motion.frames;
    let norm = (n - 1) as f64;
    let mut s = 0.0;
    for i in 0..n - 1 {
        for (k, &j) in skel.foot_joints.iter().enumerate() {
            let z = motion.position(i, j).z;
            let c = motion.contacts[(i, k)];
            let f = clamp01(c);
            s += z.abs() * f;
            if let Some((g, scale)) = grad.as_mut() {
                let at = i * motion.joints + j;
                g.positions[at].z += *scale * sign(z) * f / norm;
                g.contacts[(i, k)] += *scale * z.abs() * clamp01_slope(c) / norm;
            }
        }
    }
    s / norm
}

/// Skating term with predicted contacts:
/// `(1/(N−1)) Σ_{i<N−1} Σ_feet clamp(f,0,1)² ‖p_{i+1} − p_i‖²`.
pub fn loss_foot_skate(skel: &SkeletonSpec, motion: &DecodedMotion) -> f64 {
    loss_foot_skate_impl(skel, motion, None)
}

pub(crate) fn loss_foot_skate_impl(
    skel: &SkeletonSpec,
    motion: &DecodedMotion,
    mut grad: Option<(&mut DecodedGrad, f64)>,
) -> f64 {
    let n = motion.frames;
    let jn = motion.joints;
    let norm = (n - 1) as f64;
    let mut s = 0.0;
    for i in 0..n - 1 {
        for (k, &j) in skel.foot_joints.iter().enumerate() {
            let d = motion.position(i + 1, j) - motion.position(i, j);
            let c = motion.contacts[(i, k)];
            let f = clamp01(c);
            let d2 = d.norm_squared();
            s += f * f * d2;
            if let Some((g, scale)) = grad.as_mut() {
                let gp = d * (2.0 * *scale * f * f / norm);
                g.positions[(i + 1) * jn + j] += gp;
                g.positions[i * jn + j] -= gp;
                g.contacts[(i, k)] += *scale * 2.0 * f * d2 * clamp01_slope(c) / norm;
            }
        }
    }
    s / norm
}

/// `(1/|O|) Σ ‖ĉ − c‖₁` at the observed keyframes.
pub fn loss_close(motion: &DecodedMotion, observations: &ObservationSet) -> Result<f64, DnoError> {
    loss_close_impl(motion, observations, None)
}

pub(crate) fn loss_close_impl(
    motion: &DecodedMotion,
    observations: &ObservationSet,
    mut grad: Option<(&mut DecodedGrad, f64)>,
) -> Result<f64, DnoError> {
    if observations.is_empty() {
        return Err(DnoError::EmptyObservationSet);
    }
    let m = observations.len() as f64;
    let mut s = 0.0;
    for o in &observations.entries {
        if o.frame >= motion.frames {
            return Err(DnoError::FrameOutOfRange {
                frame: o.frame,
                frames: motion.frames,
            });
        }
        let d = o.point.position(motion, o.frame) - o.target;
        s += l1(&d);
        if let Some((g, scale)) = grad.as_mut() {
            o.point.accumulate(motion, o.frame, l1_grad(&d, *scale / m), g);
        }
    }
    Ok(s / m)
}

/// `(1/|ν|) Σ ‖v̂_a − v̂_b‖₁` at each triple's frame.
pub fn loss_contact(skel: &SkeletonSpec, motion: &DecodedMotion, plan: &ContactPlan) -> Result<f64, DnoError> {
    loss_contact_impl(skel, motion, plan, None)
}

pub(crate) fn loss_contact_impl(
    skel: &SkeletonSpec,
    motion: &DecodedMotion,
    plan: &ContactPlan,
    mut grad: Option<(&mut DecodedGrad, f64)>,
) -> Result<f64, DnoError> {
    if plan.is_empty() {
        return Err(DnoError::EmptyContactPlan);
    }
    let m = plan.len() as f64;
    let mut s = 0.0;
    for t in &plan.triples {
        if t.frame >= motion.frames {
            return Err(DnoError::FrameOutOfRange {
                frame: t.frame,
                frames: motion.frames,
            });
        }
        let a = PointRef::vertex(skel, &t.a)?;
        let b = PointRef::vertex(skel, &t.b)?;
        let d = a.position(motion, t.frame) - b.position(motion, t.frame);
        s += l1(&d);
        if let Some((g, scale)) = grad.as_mut() {
            let gd = l1_grad(&d, *scale / m);
            a.accumulate(motion, t.frame, gd, g);
            b.accumulate(motion, t.frame, -gd, g);
        }
    }
    Ok(s / m)
}

const DECORR_SCALES: [usize; 3] = [1, 2, 4];

/// Rows mean-pooled in blocks of `s`, scaled by `√s` so i.i.d. unit noise
/// stays unit variance.
fn pool(x: ArrayView2<f64>, s: usize) -> Array2<f64> {
    let (n, d) = x.dim();
    let m = n / s;
    let k = 1.0 / (s as f64).sqrt();
    Array2::from_shape_fn((m, d), |(i, c)| (0..s).map(|r| x[(i * s + r, c)]).sum::<f64>() * k)
}

/// Lag-1 autocorrelation of the rows pooled over every column.
fn lag1(y: ArrayView2<f64>) -> f64 {
    let (m, d) = y.dim();
    let mut s = 0.0;
    for i in 0..m - 1 {
        for c in 0..d {
            s += y[(i, c)] * y[(i + 1, c)];
        }
    }
    s / ((m - 1) * d) as f64
}

/// Noise regularizer: squared lag-1 temporal autocorrelation at ×1, ×2
/// and ×4 mean-pooled resolutions, plus `mean² + (var − 1)²` of all
/// entries. Scales with fewer than two pooled rows are skipped.
pub fn loss_decorr(x_t: ArrayView2<f64>) -> f64 {
    let mut total = 0.0;
    for &s in &DECORR_SCALES {
        if x_t.nrows() / s >= 2 {
            let rho = lag1(pool(x_t, s).view());
            total += rho * rho;
        }
    }
    let (mean, var) = moments(x_t);
    total + mean * mean + (var - 1.0) * (var - 1.0)
}

fn moments(x: ArrayView2<f64>) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Gradient of [`loss_decorr`].
pub fn loss_decorr_grad(x_t: ArrayView2<f64>) -> Array2<f64> {
    let (n, d) = x_t.dim();
    let mut g = Array2::<f64>::zeros((n, d));
    for &s in &DECORR_SCALES {
        let m = n / s;
        if m < 2 {
            continue;
        }
        let y = pool(x_t, s);
        let rho = lag1(y.view());
        let coef = 2.0 * rho / ((m - 1) * d) as f64 / (s as f64).sqrt();
        for i in 0..m {
            for c in 0..d {
                let mut gy = 0.0;
                if i > 0 {
                    gy += y[(i - 1, c)];
                }
                if i + 1 < m {
                    gy += y[(i + 1, c)];
                }
                for r in 0..s {
                    g[(i * s + r, c)] += coef * gy;
                }
            }
        }
    }
    let (mean, var) = moments(x_t);
    let cnt = x_t.len() as f64;
    let gm = 2.0 * mean / cnt;
    let gv = 2.0 * (var - 1.0) * 2.0 / cnt;
    g.zip_mut_with(&x_t, |gi, &x| *gi += gm + gv * (x - mean));
    g
}
