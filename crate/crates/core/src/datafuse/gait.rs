//! Procedural locomotion with exact foot plants.
//!
//! The root follows a circular arc (a straight line when the turn rate is
//! zero). Each foot alternates between a stance phase, where it stays at a
//! plant location under its hip, and a swing phase, where it travels to the
//! next plant along a raised arc. Legs are posed with two-bone IK; arms
//! counter-swing and may blend into a reach towards a target in front of
//! the body.

use std::f64::consts::PI;

use nalgebra::UnitQuaternion;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kinematics::rotation::{rot_x, rot_y, rot_z, Mat3, Vec3};
use crate::kinematics::{two_bone_ik, Pose, SkeletonSpec};

/// Fraction of a gait cycle each foot spends planted.
pub const STANCE_FRACTION: f64 = 0.6;

/// Wrist targets, in the heading frame relative to the pelvis, reached over
/// a bump-shaped window of the clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reach {
    pub left: [f64; 3],
    pub right: [f64; 3],
    /// Window start and length as fractions of the clip.
    pub start: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitParams {
    /// Meters per second along the arc.
    pub speed: f64,
    /// Radians per second, positive turns left.
    pub turn_rate: f64,
    pub initial_heading: f64,
    pub start: [f64; 2],
    /// Seconds per full gait cycle (two steps).
    pub cycle: f64,
    /// Initial phase in cycles.
    pub phase: f64,
    pub step_height: f64,
    /// Pelvis height drop relative to the rest height.
    pub crouch: f64,
    /// Peak arm swing, radians.
    pub arm_swing: f64,
    /// Arm adduction from the rest pose, radians.
    pub arm_lower: f64,
    pub elbow_bend: f64,
    pub reach: Option<Reach>,
}

impl GaitParams {
    /// Standing still with arms relaxed.
    pub fn idle() -> Self {
        GaitParams {
            speed: 0.0,
            turn_rate: 0.0,
            initial_heading: 0.0,
            start: [0.0, 0.0],
            cycle: 1.0,
            phase: 0.0,
            step_height: 0.0,
            crouch: 0.02,
            arm_swing: 0.0,
            arm_lower: 0.4,
            elbow_bend: 0.2,
            reach: None,
        }
    }

    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let speed: f64 = if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.2..1.5) };
        // cadence rises with speed so that the stance excursion stays within
        // leg reach
        let cycle = (0.25 / (0.5 * STANCE_FRACTION * speed.max(1e-3))).min(rng.gen_range(0.95..1.2));
        let reach = if rng.gen_bool(0.5) {
            let start: f64 = rng.gen_range(0.0..0.5);
            let length = rng.gen_range(0.3..(1.0 - start).max(0.31));
            if rng.gen_bool(0.5) {
                let c = [0.0, rng.gen_range(0.25..0.45), rng.gen_range(0.05..0.45)];
                let gap = rng.gen_range(0.03..0.15);
                Some(Reach {
                    left: [c[0] - gap, c[1], c[2]],
                    right: [c[0] + gap, c[1], c[2]],
                    start,
                    length,
                })
            } else {
                let mut side = |sign: f64| {
                    [
                        sign * rng.gen_range(0.1..0.4),
                        rng.gen_range(0.2..0.45),
                        rng.gen_range(-0.1..0.5),
                    ]
                };
                Some(Reach {
                    left: side(-1.0),
                    right: side(1.0),
                    start,
                    length,
                })
            }
        } else {
            None
        };
        GaitParams {
            speed,
            turn_rate: if speed > 0.0 { rng.gen_range(-0.6..0.6) } else { 0.0 },
            initial_heading: rng.gen_range(-PI..PI),
            start: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            cycle,
            phase: rng.gen_range(0.0..1.0),
            step_height: rng.gen_range(0.05..0.1),
            crouch: 0.02 + 0.03 * speed + rng.gen_range(0.0..0.02),
            arm_swing: rng.gen_range(0.2..0.5),
            arm_lower: rng.gen_range(0.3..0.6),
            elbow_bend: rng.gen_range(0.1..0.5),
            reach,
        }
    }

    fn walking(&self) -> bool {
        self.speed > 1e-6 || self.turn_rate.abs() > 1e-6
    }

    fn heading_at(&self, t: f64) -> f64 {
        self.initial_heading + self.turn_rate * t
    }

    /// Ground-plane root position at time `t`.
    fn ground_at(&self, t: f64) -> Vec3 {
        let (psi0, psi) = (self.initial_heading, self.heading_at(t));
        let (dx, dy) = if self.turn_rate.abs() < 1e-9 {
            (-psi0.sin() * self.speed * t, psi0.cos() * self.speed * t)
        } else {
            let k = self.speed / self.turn_rate;
            (k * (psi.cos() - psi0.cos()), k * (psi.sin() - psi0.sin()))
        };
        Vec3::new(self.start[0] + dx, self.start[1] + dy, 0.0)
    }
}

/// Leg joint indices, resolved from the foot joints.
struct Leg {
    hip: usize,
    knee: usize,
    ankle: usize,
    toe: usize,
}

struct Arm {
    shoulder: usize,
    elbow: usize,
    wrist: usize,
    side: f64,
    /// Hand pointing axis and palm normal in the wrist's rest frame.
    hand_frame: Option<Mat3>,
}

fn legs(skel: &SkeletonSpec) -> [Leg; 2] {
    let f = skel.foot_joints;
    let leg = |ankle: usize, toe: usize| {
        let knee = skel.parent(ankle).expect("ankle has a parent");
        let hip = skel.parent(knee).expect("knee has a parent");
        Leg {
            hip,
            knee,
            ankle,
            toe,
        }
    };
    [leg(f[0], f[1]), leg(f[2], f[3])]
}

fn arms(skel: &SkeletonSpec) -> [Arm; 2] {
    let arm = |wrist: usize, side: f64| {
        let elbow = skel.parent(wrist).expect("wrist has a parent");
        let shoulder = skel.parent(elbow).expect("elbow has a parent");
        let palm = skel.joints[wrist].name.replace("wrist", "palm");
        let hand_frame = skel.catalog().get(&palm).and_then(|entry| {
            let along: Vec3 = skel.children(wrist).map(|c| skel.joints[c].rest_offset).sum();
            if along.norm() < 1e-9 {
                return None;
            }
            let along = along.normalize();
            let normal = entry.offset - along * along.dot(&entry.offset);
            (normal.norm() > 1e-9).then(|| {
                let normal = normal.normalize();
                Mat3::from_columns(&[along, normal, along.cross(&normal)])
            })
        });
        Arm {
            shoulder,
            elbow,
            wrist,
            side,
            hand_frame,
        }
    };
    [arm(skel.wrist_joints[0], -1.0), arm(skel.wrist_joints[1], 1.0)]
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Where a foot is and which way it points at time `t`, plus whether it is
/// planted.
fn foot_state(params: &GaitParams, lateral: f64, ankle_height: f64, offset: f64, t: f64) -> (Vec3, f64, bool) {
    let plant = |cycle_start: f64| {
        let tm = cycle_start + 0.5 * STANCE_FRACTION * params.cycle;
        let psi = params.heading_at(tm);
        let p = params.ground_at(tm) + rot_z(psi) * Vec3::new(lateral, 0.0, 0.0);
        (Vec3::new(p.x, p.y, ankle_height), psi)
    };
    if !params.walking() {
        let (p, psi) = plant(-0.5 * STANCE_FRACTION * params.cycle);
        return (p, psi, true);
    }
    let cycles = t / params.cycle + params.phase + offset;
    let k = cycles.floor();
    let u = cycles - k;
    let start = (k - params.phase - offset) * params.cycle;
    let (here, psi_here) = plant(start);
    if u < STANCE_FRACTION {
        return (here, psi_here, true);
    }
    let (next, psi_next) = plant(start + params.cycle);
    let s = (u - STANCE_FRACTION) / (1.0 - STANCE_FRACTION);
    let w = smoothstep(s);
    let mut p = here + (next - here) * w;
    p.z = ankle_height + params.step_height * (PI * s).sin();
    (p, psi_here + (psi_next - psi_here) * w, false)
}

/// Poses for `frames` frames of the gait described by `params`, along with
/// the generator's own plant schedule (`frames × 2`, left then right).
pub fn gait_poses(skel: &SkeletonSpec, params: &GaitParams, frames: usize) -> (Vec<Pose>, Vec<[bool; 2]>) {
    let legs = legs(skel);
    let arms = arms(skel);
    let root_height = skel.rest_root_height();
    let mut poses = Vec::with_capacity(frames);
    let mut plants = Vec::with_capacity(frames);
    for i in 0..frames {
        let t = i as f64 / skel.frame_rate;
        let psi = params.heading_at(t);
        let heading = rot_z(psi);
        let gait_phase = t / params.cycle + params.phase;
        let bob = if params.walking() {
            -0.012 * (4.0 * PI * gait_phase).cos()
        } else {
            0.004 * (2.0 * PI * t / 4.0).sin()
        };
        let mut pose = Pose::rest(skel);
        let ground = params.ground_at(t);
        pose.root_position = Vec3::new(ground.x, ground.y, root_height - params.crouch + bob);
        pose.root_orient = heading * rot_x(-0.04 * params.speed);
        let world_root = pose.root_orient;

        let mut planted = [false; 2];
        for (l, leg) in legs.iter().enumerate() {
            let hip_offset = skel.joints[leg.hip].rest_offset;
            let toe_offset = skel.joints[leg.toe].rest_offset;
            let ankle_height = (-toe_offset.z).max(0.0);
            let (target, foot_yaw, stance) =
                foot_state(params, hip_offset.x, ankle_height, 0.5 * l as f64, t);
            planted[l] = stance;
            let hip_pos = pose.root_position + world_root * hip_offset;
            let forward = heading * Vec3::y();
            let (upper, middle) = two_bone_ik(
                &hip_pos,
                &target,
                &skel.joints[leg.knee].rest_offset,
                &skel.joints[leg.ankle].rest_offset,
                &Vec3::y(),
                &forward,
            );
            let foot = rot_z(foot_yaw);
            *pose.rotation_mut(leg.hip) = world_root.transpose() * upper;
            *pose.rotation_mut(leg.knee) = upper.transpose() * middle;
            *pose.rotation_mut(leg.ankle) = middle.transpose() * foot;
        }
        plants.push(planted);

        // slight forward lean of the trunk with speed, head compensates
        if let Some(spine) = skel.children(0).find(|&c| !legs.iter().any(|l| l.hip == c)) {
            *pose.rotation_mut(spine) = rot_x(-0.03 * params.speed);
        }

        let swing_scale = params.speed.min(1.0);
        let reach_weight = params.reach.map_or(0.0, |r| {
            let u = (i as f64 / (frames.max(2) - 1) as f64 - r.start) / r.length;
            if (0.0..=1.0).contains(&u) {
                (PI * u).sin().powi(2)
            } else {
                0.0
            }
        });
        for (a, arm) in arms.iter().enumerate() {
            // right arm swings with the left leg
            let leg_phase = gait_phase + 0.5 * (1 - a) as f64;
            let swing = params.arm_swing * swing_scale * (2.0 * PI * leg_phase).cos();
            *pose.rotation_mut(arm.shoulder) = rot_x(swing) * rot_y(arm.side * params.arm_lower);
            *pose.rotation_mut(arm.elbow) = rot_x(params.elbow_bend + 0.3 * swing.max(0.0));
            if reach_weight > 1e-9 {
                if let Some(reach) = params.reach {
                    let target = if a == 0 { reach.left } else { reach.right };
                    apply_reach(skel, &mut pose, arm, heading, Vec3::from(target), reach_weight);
                }
            }
        }
        poses.push(pose);
    }
    (poses, plants)
}

fn apply_reach(skel: &SkeletonSpec, pose: &mut Pose, arm: &Arm, heading: Mat3, target: Vec3, weight: f64) {
    let world = crate::kinematics::world_pose(skel, pose).expect("pose built for this skeleton");
    let shoulder_pos = world.positions[arm.shoulder];
    let parent_rot = world.rotations[skel.parent(arm.shoulder).expect("shoulder has a parent")];
    let swing_wrist = world.positions[arm.wrist];
    let reach_wrist = pose.root_position + heading * target;
    let goal = swing_wrist + (reach_wrist - swing_wrist) * weight;
    let outward = heading * Vec3::new(arm.side, 0.0, 0.0);
    let backward = heading * -Vec3::y();
    let pole = outward * 0.6 + backward * 0.3 - Vec3::z() * 0.7;
    let (upper, middle) = two_bone_ik(
        &shoulder_pos,
        &goal,
        &skel.joints[arm.elbow].rest_offset,
        &skel.joints[arm.wrist].rest_offset,
        &-Vec3::y(),
        &pole,
    );
    let swing_hand = world.rotations[arm.wrist];
    let hand = match arm.hand_frame {
        Some(rest) => {
            // fingers forward, palm towards the midline
            let medial = Vec3::new(-arm.side, 0.0, 0.0);
            let wanted = heading * Mat3::from_columns(&[Vec3::y(), medial, Vec3::y().cross(&medial)]);
            let reach_hand = wanted * rest.transpose();
            let q0 = UnitQuaternion::from_matrix(&swing_hand);
            let q1 = UnitQuaternion::from_matrix(&reach_hand);
            *q0.slerp(&q1, weight).to_rotation_matrix().matrix()
        }
        None => swing_hand,
    };
    *pose.rotation_mut(arm.shoulder) = parent_rot.transpose() * upper;
    *pose.rotation_mut(arm.elbow) = upper.transpose() * middle;
    *pose.rotation_mut(arm.wrist) = middle.transpose() * hand;
}
