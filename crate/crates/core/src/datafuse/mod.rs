//! Synthetic body and hand clips, and the fusion pipeline that turns them
//! into a training set: mirroring, time reversal, wrist-preserving merges
//! and penetration filtering.

mod dataset;
mod gait;
mod hands;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::rotation::{sagittal_reflection, Mat3};
use crate::kinematics::{mirror_pose, penetration_in_world, world_pose, KinematicsError, Pose, SkeletonSpec};
use crate::representation::RepresentationError;

pub use dataset::{
    build_dataset, hand_pools, load_dataset, ClipEntry, DatasetConfig, DatasetCounts, DatasetManifest, PairingRecord,
};
pub use gait::{gait_poses, GaitParams, Reach, STANCE_FRACTION};
pub use hands::{curl_to_fist, synth_hand_with, HandLimits};

#[derive(Debug, Error)]
pub enum DatafuseError {
    #[error("clip lengths differ: body {body}, hand {hand}")]
    LengthMismatch { body: usize, hand: usize },
    #[error("expected a {expected:?} hand clip, got {got:?}")]
    SideMismatch { expected: Side, got: Side },
    #[error("hand clip has {got} joints per frame, skeleton expects {expected}")]
    HandShape { expected: usize, got: usize },
    #[error("body clip {0} still penetrates after exhausting the hand retry budget")]
    RetryExhausted(usize),
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Representation(#[from] RepresentationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn joints(self, skel: &SkeletonSpec) -> &[usize] {
        match self {
            Side::Left => &skel.left_hand_joints,
            Side::Right => &skel.right_hand_joints,
        }
    }
}

/// Full-body poses with the fingers at rest.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyClip {
    pub poses: Vec<Pose>,
    pub source_tag: String,
}

/// Local finger rotations of one hand, `frames × hand joints`, ordered as
/// the skeleton's hand joint list for that side.
#[derive(Debug, Clone, PartialEq)]
pub struct HandClip {
    pub local_rots: Vec<Vec<Mat3>>,
    pub side: Side,
}

impl HandClip {
    pub fn frames(&self) -> usize {
        self.local_rots.len()
    }
}

/// Seeded locomotion clip; see [`GaitParams::sample`].
pub fn synth_body_clip(seed: u64, frames: usize, skel: &SkeletonSpec) -> BodyClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = GaitParams::sample(&mut rng);
    BodyClip {
        poses: gait_poses(skel, &params, frames).0,
        source_tag: format!("gait:{seed}"),
    }
}

/// Seeded finger motion for one hand. The same seed drives both sides
/// identically, so the right hand equals the mirrored left hand.
pub fn synth_hand_clip(seed: u64, frames: usize, skel: &SkeletonSpec, side: Side) -> HandClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synth_hand_with(skel, side, frames, &HandLimits::default(), &mut rng)
}

const FLIP_TAG: &str = "+flip";

/// Mirrors every frame across the sagittal plane.
pub fn flip_clip(skel: &SkeletonSpec, clip: &BodyClip) -> Result<BodyClip, DatafuseError> {
    let poses = clip
        .poses
        .iter()
        .map(|p| mirror_pose(skel, p))
        .collect::<Result<_, _>>()?;
    let source_tag = match clip.source_tag.strip_suffix(FLIP_TAG) {
        Some(base) => base.to_string(),
        None => format!("{}{FLIP_TAG}", clip.source_tag),
    };
    Ok(BodyClip { poses, source_tag })
}

/// Turns a hand clip into the opposite hand's by the same reflection used
/// for whole poses.
pub fn flip_hand(skel: &SkeletonSpec, clip: &HandClip) -> Result<HandClip, DatafuseError> {
    let from = clip.side.joints(skel);
    let to = clip.side.other().joints(skel);
    check_hand_shape(skel, clip)?;
    let slot: Vec<usize> = from
        .iter()
        .map(|&j| {
            let m = skel.mirror(j);
            to.iter()
                .position(|&k| k == m)
                .ok_or_else(|| KinematicsError::IncompleteMirrorMap(skel.joints[j].name.clone()))
        })
        .collect::<Result<_, _>>()?;
    let s = sagittal_reflection();
    let local_rots = clip
        .local_rots
        .iter()
        .map(|frame| {
            let mut out = vec![Mat3::identity(); to.len()];
            for (k, r) in frame.iter().enumerate() {
                out[slot[k]] = s * r * s;
            }
            out
        })
        .collect();
    Ok(HandClip {
        local_rots,
        side: clip.side.other(),
    })
}

pub fn time_reverse(clip: &HandClip) -> HandClip {
    HandClip {
        local_rots: clip.local_rots.iter().rev().cloned().collect(),
        side: clip.side,
    }
}

fn check_hand_shape(skel: &SkeletonSpec, clip: &HandClip) -> Result<(), DatafuseError> {
    let expected = clip.side.joints(skel).len();
    match clip.local_rots.iter().find(|f| f.len() != expected) {
        Some(f) => Err(DatafuseError::HandShape { expected, got: f.len() }),
        None => Ok(()),
    }
}

/// Replaces the finger articulation of `body` with the two hand clips. The
/// wrists keep the body's rotations.
pub fn merge_body_hand(
    skel: &SkeletonSpec,
    body: &BodyClip,
    left: &HandClip,
    right: &HandClip,
) -> Result<Vec<Pose>, DatafuseError> {
    for (clip, side) in [(left, Side::Left), (right, Side::Right)] {
        if clip.side != side {
            return Err(DatafuseError::SideMismatch {
                expected: side,
                got: clip.side,
            });
        }
        if clip.frames() != body.poses.len() {
            return Err(DatafuseError::LengthMismatch {
                body: body.poses.len(),
                hand: clip.frames(),
            });
        }
        check_hand_shape(skel, clip)?;
    }
    let mut poses = body.poses.clone();
    for (i, pose) in poses.iter_mut().enumerate() {
        pose.check(skel)?;
        for clip in [left, right] {
            for (&j, r) in clip.side.joints(skel).iter().zip(&clip.local_rots[i]) {
                *pose.rotation_mut(j) = *r;
            }
        }
    }
    Ok(poses)
}

/// Default rejection threshold for hand/body overlap, meters.
pub const PENETRATION_THRESHOLD: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum FilterOutcome {
    /// Deepest overlap seen, at or below the threshold.
    Accept { max_depth: f64 },
    /// Deepest overlap and the frame where it occurs.
    Reject { depth: f64, frame: usize },
}

impl FilterOutcome {
    pub fn accepted(&self) -> bool {
        matches!(self, FilterOutcome::Accept { .. })
    }

    pub fn depth(&self) -> f64 {
        match *self {
            FilterOutcome::Accept { max_depth } => max_depth,
            FilterOutcome::Reject { depth, .. } => depth,
        }
    }
}

/// Body joints tested against the hands: everything outside the hands
/// except the forearm segments the wrists attach to.
pub fn filter_body_joints(skel: &SkeletonSpec) -> Vec<usize> {
    let forearms: Vec<usize> = skel.wrist_joints.iter().filter_map(|&w| skel.parent(w)).collect();
    skel.body_joints().into_iter().filter(|j| !forearms.contains(j)).collect()
}

/// Rejects a clip when any frame's hand/body capsule overlap exceeds
/// `threshold`.
pub fn penetration_filter(skel: &SkeletonSpec, poses: &[Pose], threshold: f64) -> Result<FilterOutcome, DatafuseError> {
    let hands = skel.hand_joints();
    let body = filter_body_joints(skel);
    let mut worst = (0.0, 0);
    for (i, pose) in poses.iter().enumerate() {
        let world = world_pose(skel, pose)?;
        let depth = penetration_in_world(skel, &world, &hands, &body)?.depth;
        if depth > worst.0 {
            worst = (depth, i);
        }
    }
    Ok(if worst.0 > threshold {
        FilterOutcome::Reject {
            depth: worst.0,
            frame: worst.1,
        }
    } else {
        FilterOutcome::Accept { max_depth: worst.0 }
    })
}

#[cfg(test)]
mod tests;
