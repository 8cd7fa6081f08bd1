//! Diffusion noise optimization: task losses on the decoded output of the
//! deterministic sampler, minimized over the initial noise.

mod check;
mod losses;
mod optimize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::kinematics::rotation::Vec3;
use crate::kinematics::SkeletonSpec;
use crate::representation::{DecodedGrad, DecodedMotion, RepresentationError};

pub use check::{gradient_check, GradCheck};
pub use losses::{
    loss_ch, loss_close, loss_contact, loss_decorr, loss_decorr_grad, loss_foot_skate, loss_lk, LossTerms,
};
pub use optimize::{
    evaluate, initial_noise, optimize_from, optimize_noise, write_trace, DnoOptions, DnoResult, Evaluation, Prior, TraceRow,
    TRACE_CSV_HEADER,
};

#[derive(Debug, Error)]
pub enum DnoError {
    #[error("observation set is empty")]
    EmptyObservationSet,
    #[error("contact plan is empty")]
    EmptyContactPlan,
    #[error("cannot resolve {0:?} to a joint or catalog vertex")]
    UnresolvableReference(String),
    #[error("unknown vertex label {0:?}")]
    UnknownLabel(String),
    #[error("frame {frame} outside a sequence of {frames}")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("task defines neither observations nor a contact plan")]
    NoActiveConstraint,
    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize, trace: Vec<TraceRow> },
    #[error("invalid stage: {0}")]
    InvalidStage(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Representation(#[from] RepresentationError),
}

/// A tracked point: a joint, or a catalog vertex rigidly attached to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointRef {
    Joint(usize),
    Vertex { joint: usize, offset: Vec3 },
}

impl PointRef {
    /// Joint name first, then catalog label.
    pub fn resolve(skel: &SkeletonSpec, name: &str) -> Result<Self, DnoError> {
        if let Some(j) = skel.joint_index(name) {
            return Ok(PointRef::Joint(j));
        }
        skel.catalog()
            .get(name)
            .map(|e| PointRef::Vertex {
                joint: e.joint,
                offset: e.offset,
            })
            .ok_or_else(|| DnoError::UnresolvableReference(name.to_string()))
    }

    /// Catalog vertex only.
    pub fn vertex(skel: &SkeletonSpec, label: &str) -> Result<Self, DnoError> {
        skel.catalog()
            .get(label)
            .map(|e| PointRef::Vertex {
                joint: e.joint,
                offset: e.offset,
            })
            .ok_or_else(|| DnoError::UnknownLabel(label.to_string()))
    }

    pub fn position(&self, motion: &DecodedMotion, frame: usize) -> Vec3 {
        match *self {
            PointRef::Joint(j) => motion.position(frame, j),
            PointRef::Vertex { joint, offset } => motion.position(frame, joint) + motion.rotation(frame, joint) * offset,
        }
    }

    /// Adds the pull-back of `g = ∂ℓ/∂position` into `grad`.
    pub fn accumulate(&self, motion: &DecodedMotion, frame: usize, g: Vec3, grad: &mut DecodedGrad) {
        let at = |j: usize| frame * motion.joints + j;
        match *self {
            PointRef::Joint(j) => grad.positions[at(j)] += g,
            PointRef::Vertex { joint, offset } => {
                grad.positions[at(joint)] += g;
                grad.rotations[at(joint)] += g * offset.transpose();
            }
        }
    }
}

/// One tracking constraint `(reference, keyframe, world target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub reference: String,
    pub point: PointRef,
    pub frame: usize,
    pub target: Vec3,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationSet {
    pub entries: Vec<Observation>,
}

impl ObservationSet {
    /// Resolves references and checks keyframes against `frames`.
    pub fn new<S: AsRef<str>>(
        skel: &SkeletonSpec,
        items: impl IntoIterator<Item = (S, usize, Vec3)>,
        frames: usize,
    ) -> Result<Self, DnoError> {
        let entries = items
            .into_iter()
            .map(|(name, frame, target)| {
                if frame >= frames {
                    return Err(DnoError::FrameOutOfRange { frame, frames });
                }
                Ok(Observation {
                    reference: name.as_ref().to_string(),
                    point: PointRef::resolve(skel, name.as_ref())?,
                    frame,
                    target,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(ObservationSet { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `(vertex j, vertex k, frame τ)`: the two vertices should touch at τ.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactTriple {
    pub a: String,
    pub b: String,
    pub frame: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactPlan {
    pub triples: Vec<ContactTriple>,
}

impl ContactPlan {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Weights and length of one optimization stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptStage {
    pub epochs: usize,
    pub lambda_lk: f64,
    pub lambda_foot: f64,
    pub lambda_ch: f64,
    pub lambda_close: f64,
    /// Defaults to `lambda_close` when absent.
    pub lambda_contact: Option<f64>,
    pub lambda_decorr: f64,
    pub lr: f64,
}

impl Default for OptStage {
    fn default() -> Self {
        OptStage::stage_one()
    }
}

impl OptStage {
    pub const DEFAULT_LR: f64 = 5e-2;

    pub fn stage_one() -> Self {
        OptStage {
            epochs: 800,
            lambda_lk: 0.5,
            lambda_foot: 0.5,
            lambda_ch: 0.5,
            lambda_close: 1.0,
            lambda_contact: None,
            lambda_decorr: 1.0,
            lr: Self::DEFAULT_LR,
        }
    }

    pub fn stage_two() -> Self {
        OptStage {
            epochs: 800,
            lambda_lk: 0.1,
            lambda_foot: 0.1,
            lambda_ch: 0.1,
            ..Self::stage_one()
        }
    }

    /// The two-stage default schedule.
    pub fn defaults() -> Vec<OptStage> {
        vec![Self::stage_one(), Self::stage_two()]
    }

    pub fn contact_weight(&self) -> f64 {
        self.lambda_contact.unwrap_or(self.lambda_close)
    }

    pub fn validate(&self) -> Result<(), DnoError> {
        let weights = [
            self.lambda_lk,
            self.lambda_foot,
            self.lambda_ch,
            self.lambda_close,
            self.contact_weight(),
            self.lambda_decorr,
        ];
        if self.epochs == 0 {
            return Err(DnoError::InvalidStage("epochs must be positive".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(DnoError::InvalidStage(format!("negative or non-finite weight in {self:?}")));
        }
        Ok(())
    }
}

/// What the optimized motion must satisfy, and where decoding starts.
#[derive(Debug, Clone, PartialEq)]
pub struct DnoTask {
    pub frames: usize,
    pub observations: Option<ObservationSet>,
    pub contacts: Option<ContactPlan>,
    pub init_position: Vec3,
    /// Initial heading as a yaw about +Z, radians.
    pub init_yaw: f64,
}

impl DnoTask {
    /// Decoding starts with the root at rest height above the origin,
    /// facing +Y.
    pub fn new(skel: &SkeletonSpec, frames: usize) -> Self {
        DnoTask {
            frames,
            observations: None,
            contacts: None,
            init_position: Vec3::new(0.0, 0.0, skel.rest_root_height()),
            init_yaw: 0.0,
        }
    }
}
