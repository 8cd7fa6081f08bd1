//! Articulated body model: skeleton topology, rotations, forward
//! kinematics, sagittal mirroring, labelled surface points and capsule
//! self-penetration.
//!
//! World frame is Z-up, right-handed, in meters. Bodies face +Y in their
//! rest pose, so the sagittal mirror plane is `x = 0`.

mod capsule;
mod catalog;
mod ik;
pub mod presets;
pub mod rotation;
mod skeleton;

use std::collections::BTreeMap;

use thiserror::Error;

pub use capsule::segment_distance;
pub use catalog::{VertexCatalog, VertexEntry, VertexEntryConfig};
pub use ik::two_bone_ik;
pub use rotation::{Mat3, Rotation6D, Vec3};
pub use skeleton::{Capsule, CapsuleConfig, Joint, JointConfig, SkeletonConfig, SkeletonSpec};

use rotation::sagittal_reflection;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(String),
    #[error("not a rotation: {0}")]
    NotARotation(String),
    #[error("pose has {got} local rotations, skeleton expects {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("unknown vertex label {0:?}")]
    UnknownLabel(String),
    #[error("incomplete mirror map: {0}")]
    IncompleteMirrorMap(String),
    #[error("joint {0} has no collision capsule")]
    MissingCapsule(usize),
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
}

/// Root state plus one local rotation per non-root joint.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub root_position: Vec3,
    pub root_orient: Mat3,
    pub local_rots: Vec<Mat3>,
}

impl Pose {
    pub fn rest(skel: &SkeletonSpec) -> Self {
        Pose {
            root_position: Vec3::zeros(),
            root_orient: Mat3::identity(),
            local_rots: skel.rest_rotations(),
        }
    }

    /// Rest pose standing on the ground plane.
    pub fn standing(skel: &SkeletonSpec) -> Self {
        let mut pose = Self::rest(skel);
        pose.root_position.z = skel.rest_root_height();
        pose
    }

    /// Local rotation of `joint`; the root's is its world orientation.
    pub fn rotation(&self, joint: usize) -> &Mat3 {
        if joint == 0 {
            &self.root_orient
        } else {
            &self.local_rots[joint - 1]
        }
    }

    pub fn rotation_mut(&mut self, joint: usize) -> &mut Mat3 {
        if joint == 0 {
            &mut self.root_orient
        } else {
            &mut self.local_rots[joint - 1]
        }
    }

    pub fn check(&self, skel: &SkeletonSpec) -> Result<(), KinematicsError> {
        let expected = skel.joint_count() - 1;
        if self.local_rots.len() != expected {
            return Err(KinematicsError::SizeMismatch {
                expected,
                got: self.local_rots.len(),
            });
        }
        Ok(())
    }
}

/// World positions and accumulated rotations of every joint.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldPose {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Mat3>,
}

pub fn forward_kinematics(skel: &SkeletonSpec, pose: &Pose) -> Result<Vec<Vec3>, KinematicsError> {
    Ok(world_pose(skel, pose)?.positions)
}

pub fn world_pose(skel: &SkeletonSpec, pose: &Pose) -> Result<WorldPose, KinematicsError> {
    pose.check(skel)?;
    let n = skel.joint_count();
    let mut positions = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    positions.push(pose.root_position);
    rotations.push(pose.root_orient);
    for (i, joint) in skel.joints.iter().enumerate().skip(1) {
        let p = joint.parent.expect("non-root joint has a parent");
        let parent_rot = rotations[p];
        positions.push(positions[p] + parent_rot * joint.rest_offset);
        rotations.push(parent_rot * pose.local_rots[i - 1]);
    }
    Ok(WorldPose {
        positions,
        rotations,
    })
}

pub fn vertex_positions(
    skel: &SkeletonSpec,
    catalog: &VertexCatalog,
    pose: &Pose,
    labels: &[&str],
) -> Result<BTreeMap<String, Vec3>, KinematicsError> {
    let world = world_pose(skel, pose)?;
    labels
        .iter()
        .map(|&label| {
            let entry = catalog
                .get(label)
                .ok_or_else(|| KinematicsError::UnknownLabel(label.to_string()))?;
            Ok((label.to_string(), vertex_in_world(&world, entry)))
        })
        .collect()
}

pub fn vertex_in_world(world: &WorldPose, entry: &VertexEntry) -> Vec3 {
    world.positions[entry.joint] + world.rotations[entry.joint] * entry.offset
}

/// Reflects a pose across `x = 0` and swaps left/right joints.
pub fn mirror_pose(skel: &SkeletonSpec, pose: &Pose) -> Result<Pose, KinematicsError> {
    pose.check(skel)?;
    if skel.mirror_map.len() != skel.joint_count() {
        return Err(KinematicsError::IncompleteMirrorMap(format!(
            "{} entries for {} joints",
            skel.mirror_map.len(),
            skel.joint_count()
        )));
    }
    let s = sagittal_reflection();
    let mut local_rots = pose.local_rots.clone();
    for j in 1..skel.joint_count() {
        local_rots[skel.mirror(j) - 1] = s * pose.local_rots[j - 1] * s;
    }
    Ok(Pose {
        root_position: s * pose.root_position,
        root_orient: s * pose.root_orient * s,
        local_rots,
    })
}

/// World-space axis segment of a capsule.
pub fn capsule_segment(world: &WorldPose, capsule: &Capsule) -> (Vec3, Vec3) {
    let p = world.positions[capsule.joint];
    let r = world.rotations[capsule.joint];
    (p + r * capsule.a, p + r * capsule.b)
}

/// Deepest capsule overlap and the joints involved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penetration {
    pub depth: f64,
    pub joints: Option<(usize, usize)>,
}

/// Maximum overlap `r_a + r_b - dist` over capsule pairs drawn from the two
/// joint subsets, skipping identical and parent/child pairs. Zero means no
/// contact.
pub fn self_penetration(
    skel: &SkeletonSpec,
    pose: &Pose,
    subset_a: &[usize],
    subset_b: &[usize],
) -> Result<f64, KinematicsError> {
    let world = world_pose(skel, pose)?;
    Ok(penetration_in_world(skel, &world, subset_a, subset_b)?.depth)
}

pub fn penetration_in_world(
    skel: &SkeletonSpec,
    world: &WorldPose,
    subset_a: &[usize],
    subset_b: &[usize],
) -> Result<Penetration, KinematicsError> {
    let mut by_joint: Vec<Vec<&Capsule>> = vec![Vec::new(); skel.joint_count()];
    for c in &skel.capsules {
        by_joint[c.joint].push(c);
    }
    for &j in subset_a.iter().chain(subset_b) {
        if by_joint.get(j).map_or(true, |c| c.is_empty()) {
            return Err(KinematicsError::MissingCapsule(j));
        }
    }
    let mut best = Penetration {
        depth: 0.0,
        joints: None,
    };
    for &a in subset_a {
        for &b in subset_b {
            if a == b || skel.is_parent_child(a, b) {
                continue;
            }
            for ca in &by_joint[a] {
                let (pa, qa) = capsule_segment(world, ca);
                for cb in &by_joint[b] {
                    let (pb, qb) = capsule_segment(world, cb);
                    let depth = ca.radius + cb.radius - segment_distance(&pa, &qa, &pb, &qb);
                    if depth > best.depth {
                        best = Penetration {
                            depth,
                            joints: Some((a, b)),
                        };
                    }
                }
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
pub(crate) mod tests;
