use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{DiffusionError, FeatureStats};
use crate::kinematics::rotation::{Mat3, Vec3};
use crate::kinematics::{KinematicsError, SkeletonSpec};
use crate::representation::{decode_world, DecodedGrad, DecodedMotion, RepresentationError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub recon: f64,
    pub geo: f64,
    pub foot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            recon: 1.0,
            geo: 1.0,
            foot: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipLosses {
    pub recon: f64,
    pub geo: f64,
    pub foot: f64,
    pub total: f64,
}

impl ClipLosses {
    fn weighted(recon: f64, geo: f64, foot: f64, w: &LossWeights) -> Self {
        ClipLosses {
            recon,
            geo,
            foot,
            total: w.recon * recon + w.geo * geo + w.foot * foot,
        }
    }
}

/// Mean squared error over all elements.
pub fn recon_loss(x0: ArrayView2<f64>, x0_hat: ArrayView2<f64>) -> f64 {
    let n = x0.len().max(1) as f64;
    x0.iter().zip(x0_hat.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}

/// `(1/N) Σ_frames Σ_joints ‖p − p̂‖²`.
pub fn geo_loss(target: &DecodedMotion, pred: &DecodedMotion) -> f64 {
    let s: f64 = target
        .positions
        .iter()
        .zip(&pred.positions)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    s / target.frames as f64
}

/// `(1/(N−1)) Σ_i Σ_feet f_k^i² ‖p_k^{i+1} − p_k^i‖²`.
pub fn foot_skate_loss(skel: &SkeletonSpec, motion: &DecodedMotion, contacts: ArrayView2<f64>) -> f64 {
    let n = motion.frames;
    let mut s = 0.0;
    for i in 0..n - 1 {
        for (k, &j) in skel.foot_joints.iter().enumerate() {
            let d = motion.position(i + 1, j) - motion.position(i, j);
            s += contacts[(i, k)].powi(2) * d.norm_squared();
        }
    }
    s / (n - 1) as f64
}

/// Adds the gradient of [`foot_skate_loss`] (times `scale`) w.r.t. positions.
pub(crate) fn foot_skate_grad(
    skel: &SkeletonSpec,
    motion: &DecodedMotion,
    contacts: ArrayView2<f64>,
    scale: f64,
    grad: &mut DecodedGrad,
) {
    let n = motion.frames;
    let jn = motion.joints;
    for i in 0..n - 1 {
        for (k, &j) in skel.foot_joints.iter().enumerate() {
            let d = motion.position(i + 1, j) - motion.position(i, j);
            let g = d * (2.0 * scale * contacts[(i, k)].powi(2) / (n - 1) as f64);
            grad.positions[(i + 1) * jn + j] += g;
            grad.positions[i * jn + j] -= g;
        }
    }
}

fn decode_canonical(skel: &SkeletonSpec, raw: ArrayView2<f64>) -> Result<Option<DecodedMotion>, DiffusionError> {
    match decode_world(skel, raw, &Vec3::zeros(), &Mat3::identity()) {
        Ok(m) => Ok(Some(m)),
        Err(RepresentationError::Kinematics(KinematicsError::DegenerateRotation(_))) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Training losses of one clip given the clean features and the model's
/// prediction, both in model space, plus the gradient of the weighted
/// total w.r.t. the prediction when `want_grad`. Geometric terms decode
/// both from the origin with identity heading; contact weights come from
/// the clean clip. A prediction that does not decode contributes only
/// its reconstruction term.
pub fn clip_losses(
    skel: &SkeletonSpec,
    stats: &FeatureStats,
    x0: ArrayView2<f64>,
    x0_hat: ArrayView2<f64>,
    weights: &LossWeights,
    want_grad: bool,
) -> Result<(ClipLosses, Option<Array2<f64>>), DiffusionError> {
    let recon = recon_loss(x0, x0_hat);
    let mut grad = want_grad.then(|| (&x0_hat - &x0) * (2.0 * weights.recon / x0.len() as f64));
    if weights.geo == 0.0 && weights.foot == 0.0 {
        return Ok((ClipLosses::weighted(recon, 0.0, 0.0, weights), grad));
    }
    let raw = stats.denormalize(x0);
    let raw_hat = stats.denormalize(x0_hat);
    let target = decode_canonical(skel, raw.view())?
        .ok_or_else(|| DiffusionError::InvalidConfig("clean clip does not decode".into()))?;
    let Some(pred) = decode_canonical(skel, raw_hat.view())? else {
        log::debug!("prediction has a degenerate rotation; geometric losses skipped");
        return Ok((ClipLosses::weighted(recon, 0.0, 0.0, weights), grad));
    };
    let contacts = target.contacts.view();
    let geo = geo_loss(&target, &pred);
    let foot = foot_skate_loss(skel, &pred, contacts);
    if let Some(g) = grad.as_mut() {
        let mut dg = DecodedGrad::zeros(pred.frames, pred.joints);
        let scale = 2.0 * weights.geo / pred.frames as f64;
        for (slot, (p, q)) in dg.positions.iter_mut().zip(pred.positions.iter().zip(&target.positions)) {
            *slot = (p - q) * scale;
        }
        foot_skate_grad(skel, &pred, contacts, weights.foot, &mut dg);
        let raw_grad = pred.backward(skel, raw_hat.view(), &dg);
        *g += &stats.raw_grad_to_model(raw_grad.view());
    }
    Ok((ClipLosses::weighted(recon, geo, foot, weights), grad))
}
