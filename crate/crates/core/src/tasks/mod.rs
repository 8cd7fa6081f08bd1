//! Task files: keypoint tracking, rigid grasp following, and contact plans.
//!
//! Tracking task (`frames` required; everything else optional):
//!
//! ```json
//! {
//!   "frames": 60,
//!   "init_position": [0.0, 0.0, 0.93],
//!   "init_yaw": 0.0,
//!   "targets": [{"reference": "pelvis", "frame": 12, "position": [0.1, 0.5, 0.9]}],
//!   "tracks": [{"reference": "head", "positions": [[0, 0, 1.6], "... one per frame"], "stride": 4}],
//!   "contacts": [{"a": "left_palm", "b": "right_palm", "frame": 30}]
//! }
//! ```
//!
//! A reference is a joint name or a catalog vertex label (joints win). A
//! track expands to one target per keyframe: `keyframes` if given,
//! otherwise every `stride`-th frame (default 4). `init_position` defaults
//! to rest standing height above the origin.
//!
//! Grasp task:
//!
//! ```json
//! {
//!   "frames": 60,
//!   "object": [{"rotation": [[1,0,0],[0,1,0],[0,0,1]], "translation": [0, 0.4, 0.9]}, "... one per frame"],
//!   "grasp": [{"joint": "right_index2", "local": [0.02, 0.0, 0.03]}],
//!   "active": [20, 60]
//! }
//! ```
//!
//! Contact plan: `{"triples": [{"a": "left_palm", "b": "right_palm", "frame": 30}]}`.

mod llm;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dno::{ContactPlan, ContactTriple, DnoError, DnoTask, ObservationSet};
use crate::kinematics::rotation::{check_rotation, Mat3, Vec3};
use crate::kinematics::{SkeletonSpec, VertexCatalog};

pub use llm::{
    build_prompt, extract_json, fixture_reply, llm_plan, ChatMessage, ChatTransport, FixtureTransport, HttpTransport,
    LlmConfig, ENV_KEY, ENV_MODEL, ENV_TIMEOUT, ENV_URL, FIXTURE_NAMES,
};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown reference {0:?}")]
    UnknownReference(String),
    #[error("frame {frame} outside a sequence of {frames}")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("grasp active range is empty")]
    EmptyActiveRange,
    #[error("unknown vertex label {label:?}{}", nearest.as_ref().map(|n| format!(" (did you mean {n:?}?)")).unwrap_or_default())]
    UnknownLabel { label: String, nearest: Option<String> },
    #[error("contact triple pairs {0:?} with itself")]
    SelfContact(String),
    #[error("endpoint error: {detail}")]
    EndpointError { detail: String, raw: Option<String> },
    #[error("no valid plan after {attempts} attempts: {reason}")]
    InvalidPlanAfterRetries { attempts: usize, reason: String, raw: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for TaskError {
    fn from(e: serde_json::Error) -> Self {
        TaskError::Schema(e.to_string())
    }
}

impl From<DnoError> for TaskError {
    fn from(e: DnoError) -> Self {
        match e {
            DnoError::UnresolvableReference(r) => TaskError::UnknownReference(r),
            DnoError::FrameOutOfRange { frame, frames } => TaskError::FrameOutOfRange { frame, frames },
            DnoError::UnknownLabel(label) => TaskError::UnknownLabel { label, nearest: None },
            other => TaskError::Schema(other.to_string()),
        }
    }
}

pub const DEFAULT_KEYFRAME_STRIDE: usize = 4;

/// The joint set used for full tracking.
pub const TRACKING_JOINTS: [&str; 6] = ["pelvis", "head", "left_wrist", "right_wrist", "left_ankle", "right_ankle"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub reference: String,
    pub frame: usize,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSpec {
    pub reference: String,
    /// One world position per frame.
    pub positions: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingTask {
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_position: Option<[f64; 3]>,
    #[serde(default)]
    pub init_yaw: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<TargetSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tracks: Vec<TrackSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contacts: Vec<ContactTriple>,
}

impl TrackingTask {
    /// Explicit targets followed by expanded tracks, in file order.
    pub fn expanded_targets(&self) -> Result<Vec<TargetSpec>, TaskError> {
        let mut out = self.targets.clone();
        for t in &self.tracks {
            if t.positions.len() != self.frames {
                return Err(TaskError::Schema(format!(
                    "track {:?} has {} positions for {} frames",
                    t.reference,
                    t.positions.len(),
                    self.frames
                )));
            }
            let keys: Vec<usize> = match (&t.keyframes, t.stride) {
                (Some(k), _) => k.clone(),
                (None, Some(0)) => return Err(TaskError::Schema("stride must be positive".into())),
                (None, s) => (0..self.frames).step_by(s.unwrap_or(DEFAULT_KEYFRAME_STRIDE)).collect(),
            };
            for k in keys {
                let position = *t.positions.get(k).ok_or(TaskError::FrameOutOfRange {
                    frame: k,
                    frames: self.frames,
                })?;
                out.push(TargetSpec {
                    reference: t.reference.clone(),
                    frame: k,
                    position,
                });
            }
        }
        Ok(out)
    }

    pub fn observations(&self, skel: &SkeletonSpec) -> Result<ObservationSet, TaskError> {
        let items = self
            .expanded_targets()?
            .into_iter()
            .map(|t| (t.reference, t.frame, Vec3::from(t.position)));
        Ok(ObservationSet::new(skel, items, self.frames)?)
    }

    /// Observations plus any contact triples, ready for optimization.
    pub fn to_dno_task(&self, skel: &SkeletonSpec) -> Result<DnoTask, TaskError> {
        let mut task = DnoTask::new(skel, self.frames);
        if let Some(p) = self.init_position {
            task.init_position = Vec3::from(p);
        }
        task.init_yaw = self.init_yaw;
        let has_targets = !self.targets.is_empty() || !self.tracks.is_empty();
        if has_targets {
            task.observations = Some(self.observations(skel)?);
        }
        if !self.contacts.is_empty() {
            let plan = ContactPlan {
                triples: self.contacts.clone(),
            };
            task.contacts = Some(checked_plan(plan, skel.catalog(), self.frames)?);
        }
        Ok(task)
    }
}

/// Parses and fully validates a tracking task.
pub fn parse_tracking_task(text: &str, skel: &SkeletonSpec) -> Result<TrackingTask, TaskError> {
    let task: TrackingTask = serde_json::from_str(text)?;
    if task.frames < 2 {
        return Err(TaskError::Schema(format!("frames must be at least 2, got {}", task.frames)));
    }
    task.to_dno_task(skel)?;
    Ok(task)
}

pub fn load_tracking_task(path: &Path, skel: &SkeletonSpec) -> Result<TrackingTask, TaskError> {
    parse_tracking_task(&std::fs::read_to_string(path)?, skel)
}

/// Reads a tracking or grasp task file; files with an `object` trajectory
/// are grasp tasks.
pub fn load_task(path: &Path, skel: &SkeletonSpec) -> Result<DnoTask, TaskError> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("object").is_some() {
        parse_grasp_task(&text, skel)?.to_dno_task(skel)
    } else {
        parse_tracking_task(&text, skel)?.to_dno_task(skel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidTransform {
    /// Row-major rotation matrix.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn from_parts(r: &Mat3, t: &Vec3) -> Self {
        RigidTransform {
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::from_fn(|i, j| self.rotation[i][j])
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.matrix() * p + Vec3::from(self.translation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspPoint {
    pub joint: String,
    /// Position in the object's frame.
    pub local: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspTask {
    pub frames: usize,
    pub object: Vec<RigidTransform>,
    pub grasp: Vec<GraspPoint>,
    /// Half-open frame range during which the grasp holds.
    pub active: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_position: Option<[f64; 3]>,
    #[serde(default)]
    pub init_yaw: f64,
}

impl GraspTask {
    pub fn validate(&self, skel: &SkeletonSpec) -> Result<(), TaskError> {
        if self.object.len() != self.frames {
            return Err(TaskError::Schema(format!(
                "object trajectory has {} transforms for {} frames",
                self.object.len(),
                self.frames
            )));
        }
        for (i, t) in self.object.iter().enumerate() {
            check_rotation(&t.matrix(), 1e-6)
                .map_err(|e| TaskError::Schema(format!("object transform {i}: {e}")))?;
        }
        let [start, end] = self.active;
        if start >= end {
            return Err(TaskError::EmptyActiveRange);
        }
        if end > self.frames {
            return Err(TaskError::FrameOutOfRange {
                frame: end - 1,
                frames: self.frames,
            });
        }
        if self.grasp.is_empty() {
            return Err(TaskError::Schema("grasp lists no joints".into()));
        }
        let hand = skel.hand_joints();
        for g in &self.grasp {
            let j = skel
                .joint_index(&g.joint)
                .ok_or_else(|| TaskError::UnknownReference(g.joint.clone()))?;
            if !hand.contains(&j) {
                return Err(TaskError::Schema(format!("{:?} is not a hand joint", g.joint)));
            }
        }
        Ok(())
    }
}

/// One target per active frame and grasped joint: the grasp point carried
/// by that frame's object transform.
pub fn compose_grasp_targets(task: &GraspTask, skel: &SkeletonSpec) -> Result<ObservationSet, TaskError> {
    task.validate(skel)?;
    let [start, end] = task.active;
    let items = (start..end).flat_map(|k| {
        task.grasp
            .iter()
            .map(move |g| (g.joint.clone(), k, task.object[k].apply(&Vec3::from(g.local))))
    });
    Ok(ObservationSet::new(skel, items, task.frames)?)
}

pub fn parse_grasp_task(text: &str, skel: &SkeletonSpec) -> Result<GraspTask, TaskError> {
    let task: GraspTask = serde_json::from_str(text)?;
    task.validate(skel)?;
    Ok(task)
}

impl GraspTask {
    pub fn to_dno_task(&self, skel: &SkeletonSpec) -> Result<DnoTask, TaskError> {
        let mut task = DnoTask::new(skel, self.frames);
        if let Some(p) = self.init_position {
            task.init_position = Vec3::from(p);
        }
        task.init_yaw = self.init_yaw;
        task.observations = Some(compose_grasp_targets(self, skel)?);
        Ok(task)
    }
}

/// A reason a contact plan cannot be used as-is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanViolation {
    UnknownLabel {
        triple: usize,
        label: String,
        nearest: Option<String>,
    },
    FrameOutOfRange {
        triple: usize,
        frame: usize,
        frames: usize,
    },
    SelfContact {
        triple: usize,
        label: String,
    },
}

impl std::fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlanViolation::UnknownLabel { triple, label, nearest } => {
                write!(f, "triple {triple}: unknown label {label:?}")?;
                if let Some(n) = nearest {
                    write!(f, " (nearest: {n:?})")?;
                }
                Ok(())
            }
            PlanViolation::FrameOutOfRange { triple, frame, frames } => {
                write!(f, "triple {triple}: frame {frame} outside [0, {frames})")
            }
            PlanViolation::SelfContact { triple, label } => write!(f, "triple {triple}: {label:?} paired with itself"),
        }
    }
}

/// Every violation in `plan`, or `Ok` when there are none.
pub fn validate_plan(plan: &ContactPlan, catalog: &VertexCatalog, frames: usize) -> Result<(), Vec<PlanViolation>> {
    let mut out = Vec::new();
    for (i, t) in plan.triples.iter().enumerate() {
        for label in [&t.a, &t.b] {
            if catalog.get(label).is_none() {
                out.push(PlanViolation::UnknownLabel {
                    triple: i,
                    label: label.clone(),
                    nearest: catalog.nearest_label(label).map(String::from),
                });
            }
        }
        if t.a == t.b {
            out.push(PlanViolation::SelfContact {
                triple: i,
                label: t.a.clone(),
            });
        }
        if t.frame >= frames {
            out.push(PlanViolation::FrameOutOfRange {
                triple: i,
                frame: t.frame,
                frames,
            });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

fn violation_error(v: &PlanViolation) -> TaskError {
    match v.clone() {
        PlanViolation::UnknownLabel { label, nearest, .. } => TaskError::UnknownLabel { label, nearest },
        PlanViolation::FrameOutOfRange { frame, frames, .. } => TaskError::FrameOutOfRange { frame, frames },
        PlanViolation::SelfContact { label, .. } => TaskError::SelfContact(label),
    }
}

/// Deduplicates (first occurrence wins) and validates.
fn checked_plan(plan: ContactPlan, catalog: &VertexCatalog, frames: usize) -> Result<ContactPlan, TaskError> {
    let mut seen = HashSet::new();
    let triples: Vec<ContactTriple> = plan.triples.into_iter().filter(|t| seen.insert(t.clone())).collect();
    if triples.is_empty() {
        return Err(TaskError::Schema("contact plan has no triples".into()));
    }
    let plan = ContactPlan { triples };
    validate_plan(&plan, catalog, frames).map_err(|v| violation_error(&v[0]))?;
    Ok(plan)
}

pub fn parse_contact_plan(text: &str, skel: &SkeletonSpec, frames: usize) -> Result<ContactPlan, TaskError> {
    let plan: ContactPlan = serde_json::from_str(text)?;
    checked_plan(plan, skel.catalog(), frames)
}
