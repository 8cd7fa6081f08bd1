//! Canonicalized per-frame motion features.
//!
//! Each frame is flattened as
//! `[τ (3) | φ (6) | γ (6) | θ (6·(J-1)) | joints (3·J) | contacts (4)]`:
//! root velocity in the current heading frame, heading-free root
//! orientation, per-frame heading delta, local joint rotations, joint
//! positions in the frame's canonical frame, and foot-contact
//! probabilities. Velocities are forward differences in meters per frame.

mod decode;
mod io;

use ndarray::{Array2, ArrayView1};
use thiserror::Error;

use crate::kinematics::rotation::{rot6d_from_matrix_unchecked, rot_z, Mat3, Vec3};
use crate::kinematics::{world_pose, KinematicsError, Pose, SkeletonSpec};

pub use decode::{decode, decode_world, DecodedGrad, DecodedMotion};
pub use io::{read_features, write_features, FEATURE_MAGIC, FEATURE_VERSION};

#[derive(Debug, Error)]
pub enum RepresentationError {
    #[error("sequence has {0} frames, at least 2 required")]
    TooShort(usize),
    #[error("skeleton mismatch: {0}")]
    SkeletonMismatch(String),
    #[error("root forward axis is vertical and no previous heading was supplied")]
    GimbalDegenerate,
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("feature file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Column offsets of each block inside a flattened frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub joints: usize,
}

impl FeatureLayout {
    pub const TAU: usize = 0;
    pub const PHI: usize = 3;
    pub const GAMMA: usize = 9;
    pub const THETA: usize = 15;

    pub fn new(joints: usize) -> Self {
        FeatureLayout { joints }
    }

    pub fn for_skeleton(skel: &SkeletonSpec) -> Self {
        Self::new(skel.joint_count())
    }

    /// `3 + 6 + 6 + 6·(J-1) + 3·J + 4`.
    pub fn dim(&self) -> usize {
        3 + 6 + 6 + 6 * (self.joints - 1) + 3 * self.joints + 4
    }

    /// Start of the 6D rotation of non-root joint `joint` (1-based joint index).
    pub fn theta(&self, joint: usize) -> usize {
        Self::THETA + 6 * (joint - 1)
    }

    pub fn positions(&self) -> usize {
        Self::THETA + 6 * (self.joints - 1)
    }

    pub fn contacts(&self) -> usize {
        self.positions() + 3 * self.joints
    }
}

/// An `N × D` feature matrix tied to one skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFeatures {
    pub data: Array2<f64>,
    pub skeleton_hash: u64,
    pub frame_rate: f64,
}

impl MotionFeatures {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn check(&self, skel: &SkeletonSpec) -> Result<(), RepresentationError> {
        if self.skeleton_hash != skel.hash() {
            return Err(RepresentationError::SkeletonMismatch(format!(
                "features for skeleton {:016x}, got {:016x}",
                self.skeleton_hash,
                skel.hash()
            )));
        }
        let d = FeatureLayout::for_skeleton(skel).dim();
        if self.dim() != d {
            return Err(RepresentationError::SkeletonMismatch(format!(
                "feature dim {} but skeleton implies {d}",
                self.dim()
            )));
        }
        if self.frames() < 2 {
            return Err(RepresentationError::TooShort(self.frames()));
        }
        Ok(())
    }
}

/// Splits a root orientation into a yaw about +Z and the remaining tilt,
/// `root = heading · tilt`. The yaw is that of the body-forward axis (+Y)
/// projected onto the ground plane. When that axis is vertical the
/// `fallback` heading is reused.
pub fn heading_decompose(
    root_orient: &Mat3,
    fallback: Option<&Mat3>,
) -> Result<(Mat3, Mat3), RepresentationError> {
    let forward = root_orient.column(1);
    let heading = if forward.x.hypot(forward.y) < 1e-6 {
        *fallback.ok_or(RepresentationError::GimbalDegenerate)?
    } else {
        rot_z((-forward.x).atan2(forward.y))
    };
    let tilt = heading.transpose() * root_orient;
    Ok((heading, tilt))
}

/// Ground-truth contact labels: a foot joint is in contact when it is
/// below 5 cm and moves less than 1 cm to the next frame.
pub fn contact_labels(skel: &SkeletonSpec, poses: &[Pose]) -> Result<Array2<f64>, RepresentationError> {
    if poses.len() < 2 {
        return Err(RepresentationError::TooShort(poses.len()));
    }
    let feet: Vec<Vec<Vec3>> = poses
        .iter()
        .map(|p| {
            let pos = world_pose(skel, p)?.positions;
            Ok(skel.foot_joints.iter().map(|&f| pos[f]).collect())
        })
        .collect::<Result<_, KinematicsError>>()?;
    Ok(contacts_from_feet(&feet))
}

pub(crate) const CONTACT_HEIGHT: f64 = 0.05;
pub(crate) const CONTACT_SPEED: f64 = 0.01;

fn contacts_from_feet(feet: &[Vec<Vec3>]) -> Array2<f64> {
    let n = feet.len();
    let mut out = Array2::zeros((n, 4));
    for i in 0..n {
        let (a, b) = if i + 1 < n { (i, i + 1) } else { (i - 1, i) };
        for k in 0..4 {
            let moved = (feet[b][k] - feet[a][k]).norm();
            if feet[i][k].z < CONTACT_HEIGHT && moved < CONTACT_SPEED {
                out[(i, k)] = 1.0;
            }
        }
    }
    out
}

fn put_rot6d(row: &mut [f64], at: usize, m: &Mat3) {
    row[at..at + 6].copy_from_slice(&rot6d_from_matrix_unchecked(m).0);
}

/// Encodes a pose sequence into canonical features. Contacts are labelled
/// with [`contact_labels`] when not supplied.
pub fn encode(
    skel: &SkeletonSpec,
    poses: &[Pose],
    contacts: Option<&Array2<f64>>,
) -> Result<MotionFeatures, RepresentationError> {
    let n = poses.len();
    if n < 2 {
        return Err(RepresentationError::TooShort(n));
    }
    for p in poses {
        p.check(skel)?;
    }
    let labels;
    let contacts = match contacts {
        Some(c) => {
            if c.dim() != (n, 4) {
                return Err(RepresentationError::SkeletonMismatch(format!(
                    "contacts shaped {:?}, expected ({n}, 4)",
                    c.dim()
                )));
            }
            c
        }
        None => {
            labels = contact_labels(skel, poses)?;
            &labels
        }
    };

    let layout = FeatureLayout::for_skeleton(skel);
    let jn = skel.joint_count();
    let mut headings = Vec::with_capacity(n);
    let mut tilts = Vec::with_capacity(n);
    for p in poses {
        let (h, t) = heading_decompose(&p.root_orient, headings.last())?;
        headings.push(h);
        tilts.push(t);
    }

    let mut data = Array2::zeros((n, layout.dim()));
    for i in 0..n {
        let (a, b) = if i + 1 < n { (i, i + 1) } else { (i - 1, i) };
        let mut row = vec![0.0; layout.dim()];
        let h_inv = headings[i].transpose();
        let velocity = headings[a].transpose() * (poses[b].root_position - poses[a].root_position);
        row[0..3].copy_from_slice(velocity.as_slice());
        put_rot6d(&mut row, FeatureLayout::PHI, &tilts[i]);
        let delta = if i + 1 < n {
            h_inv * headings[i + 1]
        } else {
            Mat3::identity()
        };
        put_rot6d(&mut row, FeatureLayout::GAMMA, &delta);
        for j in 1..jn {
            put_rot6d(&mut row, layout.theta(j), &poses[i].local_rots[j - 1]);
        }
        let world = world_pose(skel, &poses[i])?;
        let root = poses[i].root_position;
        let ground = Vec3::new(root.x, root.y, 0.0);
        let base = layout.positions();
        for (j, p) in world.positions.iter().enumerate() {
            let local = h_inv * (p - ground);
            row[base + 3 * j..base + 3 * j + 3].copy_from_slice(local.as_slice());
        }
        let c = layout.contacts();
        for k in 0..4 {
            row[c + k] = contacts[(i, k)].clamp(0.0, 1.0);
        }
        data.row_mut(i).assign(&ArrayView1::from(&row));
    }
    Ok(MotionFeatures {
        data,
        skeleton_hash: skel.hash(),
        frame_rate: skel.frame_rate,
    })
}
