use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::catalog::{VertexCatalog, VertexEntryConfig};
use super::rotation::{sagittal_reflection, Mat3, Vec3};
use super::KinematicsError;

/// On-disk description of a skeleton. Joints reference each other by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonConfig {
    pub name: String,
    pub frame_rate: f64,
    pub joints: Vec<JointConfig>,
    /// Left ankle, left toe, right ankle, right toe.
    pub foot_joints: [String; 4],
    /// Left wrist, right wrist.
    pub wrist_joints: [String; 2],
    pub left_hand_joints: Vec<String>,
    pub right_hand_joints: Vec<String>,
    /// Left/right pairs; unlisted joints mirror onto themselves.
    pub mirror_pairs: Vec<(String, String)>,
    pub capsules: Vec<CapsuleConfig>,
    #[serde(default)]
    pub vertices: Vec<VertexEntryConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub name: String,
    pub parent: Option<String>,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapsuleConfig {
    pub joint: String,
    pub radius: f64,
    /// Axis endpoints in the joint's local frame.
    pub from: [f64; 3],
    pub to: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub rest_offset: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub joint: usize,
    pub radius: f64,
    pub a: Vec3,
    pub b: Vec3,
}

/// Validated kinematic tree with collision proxies and symmetry data.
#[derive(Debug, Clone)]
pub struct SkeletonSpec {
    pub name: String,
    pub joints: Vec<Joint>,
    pub foot_joints: [usize; 4],
    pub wrist_joints: [usize; 2],
    pub left_hand_joints: Vec<usize>,
    pub right_hand_joints: Vec<usize>,
    pub mirror_map: Vec<usize>,
    pub capsules: Vec<Capsule>,
    pub frame_rate: f64,
    catalog: VertexCatalog,
    hash: u64,
    config: SkeletonConfig,
}

impl SkeletonSpec {
    pub fn from_config(config: SkeletonConfig) -> Result<Self, KinematicsError> {
        let invalid = |msg: String| KinematicsError::InvalidSkeleton(msg);
        if config.joints.is_empty() {
            return Err(invalid("no joints".into()));
        }
        if !(config.frame_rate > 0.0) {
            return Err(invalid(format!("frame rate {}", config.frame_rate)));
        }
        let mut index = HashMap::new();
        for (i, j) in config.joints.iter().enumerate() {
            if index.insert(j.name.clone(), i).is_some() {
                return Err(invalid(format!("duplicate joint name {}", j.name)));
            }
        }
        let lookup = |name: &str| -> Result<usize, KinematicsError> {
            index
                .get(name)
                .copied()
                .ok_or_else(|| invalid(format!("unknown joint {name}")))
        };

        let mut joints = Vec::with_capacity(config.joints.len());
        for (i, j) in config.joints.iter().enumerate() {
            let parent = match &j.parent {
                None if i == 0 => None,
                None => return Err(invalid(format!("joint {} has no parent", j.name))),
                Some(_) if i == 0 => return Err(invalid("root joint must not have a parent".into())),
                Some(p) => {
                    let p = lookup(p)?;
                    if p >= i {
                        return Err(invalid(format!(
                            "joint {} listed before its parent",
                            j.name
                        )));
                    }
                    Some(p)
                }
            };
            joints.push(Joint {
                name: j.name.clone(),
                parent,
                rest_offset: Vec3::from(j.offset),
            });
        }

        let mut foot_joints = [0; 4];
        for (slot, name) in foot_joints.iter_mut().zip(&config.foot_joints) {
            *slot = lookup(name)?;
        }
        let wrist_joints = [lookup(&config.wrist_joints[0])?, lookup(&config.wrist_joints[1])?];
        let left_hand_joints = config
            .left_hand_joints
            .iter()
            .map(|n| lookup(n))
            .collect::<Result<Vec<_>, _>>()?;
        let right_hand_joints = config
            .right_hand_joints
            .iter()
            .map(|n| lookup(n))
            .collect::<Result<Vec<_>, _>>()?;

        let mut mirror_map: Vec<usize> = (0..joints.len()).collect();
        let mut paired = vec![false; joints.len()];
        for (l, r) in &config.mirror_pairs {
            let (l, r) = (lookup(l)?, lookup(r)?);
            if l == r || paired[l] || paired[r] {
                return Err(invalid(format!(
                    "mirror pair ({}, {}) overlaps another pair",
                    joints[l].name, joints[r].name
                )));
            }
            paired[l] = true;
            paired[r] = true;
            mirror_map[l] = r;
            mirror_map[r] = l;
        }

        let capsules = config
            .capsules
            .iter()
            .map(|c| {
                if !(c.radius > 0.0) {
                    return Err(invalid(format!("capsule on {} has radius {}", c.joint, c.radius)));
                }
                Ok(Capsule {
                    joint: lookup(&c.joint)?,
                    radius: c.radius,
                    a: Vec3::from(c.from),
                    b: Vec3::from(c.to),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let catalog = VertexCatalog::from_config(&config.vertices, &index)?;
        let hash = config_hash(&config);

        let skel = SkeletonSpec {
            name: config.name.clone(),
            joints,
            foot_joints,
            wrist_joints,
            left_hand_joints,
            right_hand_joints,
            mirror_map,
            capsules,
            frame_rate: config.frame_rate,
            catalog,
            hash,
            config,
        };
        skel.check_symmetry()?;
        Ok(skel)
    }

    pub fn from_json(text: &str) -> Result<Self, KinematicsError> {
        let config: SkeletonConfig =
            serde_json::from_str(text).map_err(|e| KinematicsError::InvalidSkeleton(e.to_string()))?;
        Self::from_config(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, KinematicsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KinematicsError::InvalidSkeleton(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn check_symmetry(&self) -> Result<(), KinematicsError> {
        let m = &self.mirror_map;
        let bad = |msg: &str| KinematicsError::IncompleteMirrorMap(msg.to_string());
        if m.iter().enumerate().any(|(i, &j)| m[j] != i) {
            return Err(bad("mirror map is not an involution"));
        }
        if self.left_hand_joints.len() != self.right_hand_joints.len()
            || self
                .left_hand_joints
                .iter()
                .zip(&self.right_hand_joints)
                .any(|(&l, &r)| m[l] != r)
        {
            return Err(bad("left hand joints do not mirror onto right hand joints"));
        }
        let [la, lt, ra, rt] = self.foot_joints;
        if m[la] != ra || m[lt] != rt {
            return Err(bad("foot joints are not mirror pairs"));
        }
        if m[self.wrist_joints[0]] != self.wrist_joints[1] {
            return Err(bad("wrists are not a mirror pair"));
        }
        if m[0] != 0 {
            return Err(bad("root must mirror onto itself"));
        }
        let s = sagittal_reflection();
        for (i, j) in self.joints.iter().enumerate() {
            let mirrored = &self.joints[m[i]];
            let parent_ok = match (j.parent, mirrored.parent) {
                (None, None) => true,
                (Some(p), Some(q)) => m[p] == q,
                _ => false,
            };
            if !parent_ok || (s * j.rest_offset - mirrored.rest_offset).norm() > 1e-9 {
                return Err(KinematicsError::IncompleteMirrorMap(format!(
                    "joint {} is not the reflection of {}",
                    j.name, mirrored.name
                )));
            }
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.joints[joint].parent
    }

    pub fn is_parent_child(&self, a: usize, b: usize) -> bool {
        self.joints[a].parent == Some(b) || self.joints[b].parent == Some(a)
    }

    pub fn children(&self, joint: usize) -> impl Iterator<Item = usize> + '_ {
        self.joints
            .iter()
            .enumerate()
            .filter(move |(_, j)| j.parent == Some(joint))
            .map(|(i, _)| i)
    }

    /// Wrists and finger joints of both hands.
    pub fn hand_joints(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.wrist_joints.to_vec();
        out.extend(&self.left_hand_joints);
        out.extend(&self.right_hand_joints);
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Every joint outside [`Self::hand_joints`].
    pub fn body_joints(&self) -> Vec<usize> {
        let hands = self.hand_joints();
        (0..self.joint_count()).filter(|j| !hands.contains(j)).collect()
    }

    pub fn catalog(&self) -> &VertexCatalog {
        &self.catalog
    }

    pub fn config(&self) -> &SkeletonConfig {
        &self.config
    }

    /// Stable content hash of the configuration.
    pub fn hash(&self) -> u64 {
        self.hash
    }

    /// Height of the root above the lowest foot joint in the rest pose;
    /// the root height at which the rest pose stands on `z = 0`.
    pub fn rest_root_height(&self) -> f64 {
        let mut pos = vec![Vec3::zeros(); self.joint_count()];
        for (i, j) in self.joints.iter().enumerate().skip(1) {
            pos[i] = pos[j.parent.unwrap()] + j.rest_offset;
        }
        -self
            .foot_joints
            .iter()
            .map(|&f| pos[f].z)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn mirror(&self, joint: usize) -> usize {
        self.mirror_map[joint]
    }

    pub(crate) fn rest_rotations(&self) -> Vec<Mat3> {
        vec![Mat3::identity(); self.joint_count() - 1]
    }
}

fn config_hash(config: &SkeletonConfig) -> u64 {
    let bytes = serde_json::to_vec(config).expect("skeleton config serializes");
    let digest = Sha256::digest(&bytes);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
