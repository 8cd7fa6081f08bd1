//! Procedural finger articulation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{HandClip, Side};
use crate::kinematics::rotation::{axis_angle, Mat3, Vec3};
use crate::kinematics::SkeletonSpec;

/// Rotation limits applied to every finger joint, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandLimits {
    /// Flexion towards the palm (positive) and hyperextension (negative).
    pub flex_min: f64,
    pub flex_max: f64,
    /// Side-to-side spread at the finger base.
    pub spread_max: f64,
}

impl Default for HandLimits {
    fn default() -> Self {
        HandLimits {
            flex_min: -0.15,
            flex_max: 1.4,
            spread_max: 0.15,
        }
    }
}

/// Flexion and spread axes of one hand's finger joints, in their rest
/// frames (which coincide with the wrist's rest frame).
struct HandAxes {
    joints: Vec<usize>,
    flex: Vec<Vec3>,
    spread: Vec3,
    is_base: Vec<bool>,
    finger: Vec<usize>,
    fingers: usize,
}

fn hand_axes(skel: &SkeletonSpec, side: Side) -> HandAxes {
    let wrist = skel.wrist_joints[side.index()];
    let joints = match side {
        Side::Left => skel.left_hand_joints.clone(),
        Side::Right => skel.right_hand_joints.clone(),
    };
    let along: Vec3 = skel.children(wrist).map(|c| skel.joints[c].rest_offset).sum();
    let along = along.try_normalize(1e-12).unwrap_or(-Vec3::z());
    let palm = skel.joints[wrist].name.replace("wrist", "palm");
    // palm normal from the catalog, else anything perpendicular to the hand
    let normal = skel
        .catalog()
        .get(&palm)
        .map(|e| e.offset - along * along.dot(&e.offset))
        .and_then(|n| n.try_normalize(1e-12))
        .unwrap_or_else(|| along.cross(&Vec3::y()).normalize());

    let mut flex = Vec::with_capacity(joints.len());
    let mut is_base = Vec::with_capacity(joints.len());
    let mut finger = Vec::with_capacity(joints.len());
    let mut fingers = 0;
    for &j in &joints {
        let parent = skel.parent(j).expect("finger joint has a parent");
        let base = parent == wrist;
        if base {
            finger.push(fingers);
            fingers += 1;
        } else {
            let p = joints.iter().position(|&k| k == parent).expect("finger chains stay in the hand");
            finger.push(finger[p]);
        }
        is_base.push(base);
        let dir = skel
            .children(j)
            .next()
            .map(|c| skel.joints[c].rest_offset)
            .unwrap_or(skel.joints[j].rest_offset);
        let dir = dir.try_normalize(1e-12).unwrap_or(along);
        flex.push(dir.cross(&normal).try_normalize(1e-12).unwrap_or(along.cross(&normal)));
    }
    HandAxes {
        joints,
        flex,
        // mirrored so that both hands spread the same way for equal angles
        spread: match side {
            Side::Left => normal,
            Side::Right => -normal,
        },
        is_base,
        finger,
        fingers,
    }
}

fn pose_hand(axes: &HandAxes, curl: &[f64], spread: &[f64]) -> Vec<Mat3> {
    (0..axes.joints.len())
        .map(|k| {
            let f = axes.finger[k];
            let bend = axis_angle(&axes.flex[k], curl[f]);
            if axes.is_base[k] {
                axis_angle(&axes.spread, spread[f]) * bend
            } else {
                bend
            }
        })
        .collect()
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Random smooth finger motion: each finger's flexion and spread follow a
/// smoothstep spline through random keys drawn inside `limits`.
pub fn synth_hand_with<R: Rng>(
    skel: &SkeletonSpec,
    side: Side,
    frames: usize,
    limits: &HandLimits,
    rng: &mut R,
) -> HandClip {
    let axes = hand_axes(skel, side);
    let keys = rng.gen_range(2..=5usize);
    let mut curl_keys = vec![vec![0.0; axes.fingers]; keys];
    let mut spread_keys = vec![vec![0.0; axes.fingers]; keys];
    for k in 0..keys {
        let grip: f64 = rng.gen_range(0.0..1.0);
        for f in 0..axes.fingers {
            let own: f64 = rng.gen_range(0.0..1.0);
            let u = 0.6 * grip + 0.4 * own;
            curl_keys[k][f] = limits.flex_min + (limits.flex_max - limits.flex_min) * u;
            spread_keys[k][f] = rng.gen_range(-limits.spread_max..=limits.spread_max);
        }
    }
    let local_rots = (0..frames)
        .map(|i| {
            let x = i as f64 / (frames.max(2) - 1) as f64 * (keys - 1) as f64;
            let k = (x.floor() as usize).min(keys - 2);
            let w = smoothstep(x - k as f64);
            let lerp = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| a + (b - a) * w).collect() };
            pose_hand(
                &axes,
                &lerp(&curl_keys[k], &curl_keys[k + 1]),
                &lerp(&spread_keys[k], &spread_keys[k + 1]),
            )
        })
        .collect();
    HandClip { local_rots, side }
}

/// Open hand closing into a fist: every joint's flexion rises smoothly from
/// zero to `limits.flex_max`.
pub fn curl_to_fist(skel: &SkeletonSpec, side: Side, frames: usize, limits: &HandLimits) -> HandClip {
    let axes = hand_axes(skel, side);
    let spread = vec![0.0; axes.fingers];
    let local_rots = (0..frames)
        .map(|i| {
            let u = smoothstep(i as f64 / (frames.max(2) - 1) as f64);
            pose_hand(&axes, &vec![u * limits.flex_max; axes.fingers], &spread)
        })
        .collect();
    HandClip { local_rots, side }
}
