use ndarray::{Array2, ArrayView2};

use super::{FeatureLayout, MotionFeatures, RepresentationError};
use crate::kinematics::rotation::{gram_schmidt_backward, rot6d_to_matrix, Mat3, Rotation6D, Vec3};
use crate::kinematics::{Pose, SkeletonSpec, WorldPose};

/// World-space reconstruction of a feature matrix together with the
/// intermediates needed to backpropagate through it.
#[derive(Debug, Clone)]
pub struct DecodedMotion {
    pub frames: usize,
    pub joints: usize,
    /// `frames × joints`, row-major.
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Mat3>,
    /// Raw contact block, `frames × 4`.
    pub contacts: Array2<f64>,
    headings: Vec<Mat3>,
    deltas: Vec<Mat3>,
    tilts: Vec<Mat3>,
    locals: Vec<Mat3>,
}

/// Upstream gradients w.r.t. a [`DecodedMotion`].
#[derive(Debug, Clone)]
pub struct DecodedGrad {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Mat3>,
    pub contacts: Array2<f64>,
}

impl DecodedGrad {
    pub fn zeros(frames: usize, joints: usize) -> Self {
        DecodedGrad {
            positions: vec![Vec3::zeros(); frames * joints],
            rotations: vec![Mat3::zeros(); frames * joints],
            contacts: Array2::zeros((frames, 4)),
        }
    }
}

impl DecodedMotion {
    pub fn position(&self, frame: usize, joint: usize) -> Vec3 {
        self.positions[frame * self.joints + joint]
    }

    pub fn rotation(&self, frame: usize, joint: usize) -> Mat3 {
        self.rotations[frame * self.joints + joint]
    }

    pub fn frame_positions(&self, frame: usize) -> &[Vec3] {
        &self.positions[frame * self.joints..(frame + 1) * self.joints]
    }

    pub fn world_pose(&self, frame: usize) -> WorldPose {
        let r = frame * self.joints..(frame + 1) * self.joints;
        WorldPose {
            positions: self.positions[r.clone()].to_vec(),
            rotations: self.rotations[r].to_vec(),
        }
    }

    pub fn poses(&self) -> Vec<Pose> {
        (0..self.frames)
            .map(|i| {
                let base = i * (self.joints - 1);
                Pose {
                    root_position: self.position(i, 0),
                    root_orient: self.rotation(i, 0),
                    local_rots: self.locals[base..base + self.joints - 1].to_vec(),
                }
            })
            .collect()
    }

    /// Backpropagates `grad` to the feature matrix `x` that produced this
    /// decoding. The joint-position block receives no gradient since
    /// decoding does not read it.
    pub fn backward(&self, skel: &SkeletonSpec, x: ArrayView2<f64>, grad: &DecodedGrad) -> Array2<f64> {
        let layout = FeatureLayout::for_skeleton(skel);
        let (n, jn) = (self.frames, self.joints);
        let mut out = Array2::zeros(x.raw_dim());
        let mut g_heading_next = Mat3::zeros();
        let mut g_root_next = Vec3::zeros();
        let mut g_pos = vec![Vec3::zeros(); jn];
        let mut g_rot = vec![Mat3::zeros(); jn];

        for i in (0..n).rev() {
            let row = x.row(i);
            let row = row.as_slice().expect("contiguous rows");
            g_pos.copy_from_slice(&grad.positions[i * jn..(i + 1) * jn]);
            g_rot.copy_from_slice(&grad.rotations[i * jn..(i + 1) * jn]);

            for j in (1..jn).rev() {
                let p = skel.joints[j].parent.expect("non-root");
                let gp = g_pos[j];
                g_pos[p] += gp;
                let local = self.locals[i * (jn - 1) + j - 1];
                let gw = g_rot[j];
                g_rot[p] += gp * skel.joints[j].rest_offset.transpose() + gw * local.transpose();
                let g_local = self.rotation(i, p).transpose() * gw;
                let at = layout.theta(j);
                write_6d_grad(&mut out, i, at, row, &g_local);
            }

            let heading = self.headings[i];
            let mut g_heading = g_rot[0] * self.tilts[i].transpose();
            let g_tilt = heading.transpose() * g_rot[0];
            write_6d_grad(&mut out, i, FeatureLayout::PHI, row, &g_tilt);
            let mut g_root = g_pos[0];

            // root_{i+1} = root_i + H_i τ_i ; H_{i+1} = H_i Γ_i
            let tau = Vec3::new(row[0], row[1], row[2]);
            g_root += g_root_next;
            g_heading += g_root_next * tau.transpose() + g_heading_next * self.deltas[i].transpose();
            let g_tau = heading.transpose() * g_root_next;
            for k in 0..3 {
                out[(i, k)] = g_tau[k];
            }
            let g_delta = heading.transpose() * g_heading_next;
            write_6d_grad(&mut out, i, FeatureLayout::GAMMA, row, &g_delta);

            g_heading_next = g_heading;
            g_root_next = g_root;
        }

        let c = layout.contacts();
        for i in 0..n {
            for k in 0..4 {
                out[(i, c + k)] = grad.contacts[(i, k)];
            }
        }
        out
    }
}

fn write_6d_grad(out: &mut Array2<f64>, frame: usize, at: usize, row: &[f64], g: &Mat3) {
    let r = Rotation6D::from_slice(&row[at..at + 6]);
    let (ga, gb) = gram_schmidt_backward(&r.first(), &r.second(), g);
    for k in 0..3 {
        out[(frame, at + k)] += ga[k];
        out[(frame, at + 3 + k)] += gb[k];
    }
}

/// Integrates heading and root position from the initial state and runs
/// forward kinematics for every frame.
pub fn decode_world(
    skel: &SkeletonSpec,
    x: ArrayView2<f64>,
    init_position: &Vec3,
    init_heading: &Mat3,
) -> Result<DecodedMotion, RepresentationError> {
    let layout = FeatureLayout::for_skeleton(skel);
    let (n, d) = x.dim();
    if d != layout.dim() {
        return Err(RepresentationError::SkeletonMismatch(format!(
            "feature dim {d} but skeleton implies {}",
            layout.dim()
        )));
    }
    if n < 2 {
        return Err(RepresentationError::TooShort(n));
    }
    let jn = skel.joint_count();
    let mut positions = Vec::with_capacity(n * jn);
    let mut rotations = Vec::with_capacity(n * jn);
    let mut headings = Vec::with_capacity(n);
    let mut deltas = Vec::with_capacity(n);
    let mut tilts = Vec::with_capacity(n);
    let mut locals = Vec::with_capacity(n * (jn - 1));
    let mut contacts = Array2::zeros((n, 4));

    let mut heading = *init_heading;
    let mut root = *init_position;
    for i in 0..n {
        let row = x.row(i);
        let row = row.as_slice().expect("contiguous rows");
        let rot6 = |at: usize| rot6d_to_matrix(&Rotation6D::from_slice(&row[at..at + 6]));
        let tilt = rot6(FeatureLayout::PHI)?;
        let delta = rot6(FeatureLayout::GAMMA)?;
        let base = positions.len();
        positions.push(root);
        rotations.push(heading * tilt);
        for j in 1..jn {
            let local = rot6(layout.theta(j))?;
            let p = skel.joints[j].parent.expect("non-root");
            let parent_rot: Mat3 = rotations[base + p];
            positions.push(positions[base + p] + parent_rot * skel.joints[j].rest_offset);
            rotations.push(parent_rot * local);
            locals.push(local);
        }
        let c = layout.contacts();
        for k in 0..4 {
            contacts[(i, k)] = row[c + k];
        }
        headings.push(heading);
        tilts.push(tilt);
        deltas.push(delta);
        root += heading * Vec3::new(row[0], row[1], row[2]);
        heading *= delta;
    }
    Ok(DecodedMotion {
        frames: n,
        joints: jn,
        positions,
        rotations,
        contacts,
        headings,
        deltas,
        tilts,
        locals,
    })
}

/// Reconstructs poses and contact probabilities from features.
pub fn decode(
    skel: &SkeletonSpec,
    features: &MotionFeatures,
    init_position: &Vec3,
    init_heading: &Mat3,
) -> Result<(Vec<Pose>, Array2<f64>), RepresentationError> {
    features.check(skel)?;
    let decoded = decode_world(skel, features.data.view(), init_position, init_heading)?;
    let contacts = decoded.contacts.clone();
    Ok((decoded.poses(), contacts))
}
