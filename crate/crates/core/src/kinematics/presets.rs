//! Built-in skeletons.
//!
//! `desk37` is the default 37-joint body (3 trunk joints, 7 per side for legs
//! and arms, 10 finger segments per hand). `full55` mirrors the joint
//! bookkeeping of a 55-joint parametric body (22 body, jaw, two eyes, 15
//! finger segments per hand) for dimension checks. Both ship as JSON under
//! `assets/` and are regenerated from these builders.

use std::f64::consts::FRAC_1_SQRT_2;

use super::catalog::VertexEntryConfig;
use super::skeleton::{CapsuleConfig, JointConfig, SkeletonConfig, SkeletonSpec};

pub const DESK37_JSON: &str = include_str!("../../assets/skeleton_desk37.json");
pub const FULL55_JSON: &str = include_str!("../../assets/skeleton_full55.json");

const FINGERS: [&str; 5] = ["thumb", "index", "middle", "ring", "pinky"];
const SIDES: [(&str, f64); 2] = [("left", -1.0), ("right", 1.0)];

/// Loads the bundled 37-joint skeleton.
pub fn desk37() -> SkeletonSpec {
    SkeletonSpec::from_json(DESK37_JSON).expect("bundled desk skeleton is valid")
}

/// Loads the bundled 55-joint skeleton.
pub fn full55() -> SkeletonSpec {
    SkeletonSpec::from_json(FULL55_JSON).expect("bundled 55-joint skeleton is valid")
}

pub fn by_name(name: &str) -> Option<SkeletonSpec> {
    match name {
        "desk37" => Some(desk37()),
        "full55" => Some(full55()),
        _ => None,
    }
}

#[derive(Default)]
struct Builder {
    joints: Vec<JointConfig>,
    capsules: Vec<CapsuleConfig>,
    vertices: Vec<VertexEntryConfig>,
    pairs: Vec<(String, String)>,
}

impl Builder {
    fn joint(&mut self, name: &str, parent: Option<&str>, offset: [f64; 3]) {
        self.joints.push(JointConfig {
            name: name.to_string(),
            parent: parent.map(str::to_string),
            offset: round3(offset),
        });
    }

    fn capsule(&mut self, joint: &str, radius: f64, from: [f64; 3], to: [f64; 3]) {
        self.capsules.push(CapsuleConfig {
            joint: joint.to_string(),
            radius,
            from: round3(from),
            to: round3(to),
        });
    }

    fn vertex(&mut self, label: &str, joint: &str, offset: [f64; 3]) {
        self.vertices.push(VertexEntryConfig {
            label: label.to_string(),
            joint: joint.to_string(),
            offset: round3(offset),
        });
    }

    /// Bone capsule from the joint origin to the given child offset.
    fn bone(&mut self, joint: &str, radius: f64, child_offset: [f64; 3]) {
        self.capsule(joint, radius, [0.0; 3], child_offset);
    }
}

fn round3(v: [f64; 3]) -> [f64; 3] {
    v.map(|x| (x * 1e6).round() / 1e6 + 0.0)
}

fn scale(v: [f64; 3], s: f64) -> [f64; 3] {
    v.map(|x| x * s)
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    scale(v, 1.0 / n)
}

fn mirror_x(v: [f64; 3], sign: f64) -> [f64; 3] {
    [v[0] * sign, v[1], v[2]]
}

/// Per finger: (name, distance along the hand, spread along +Y, segment
/// lengths after the base, fingertip length).
fn finger_layout(segments: usize) -> Vec<(&'static str, f64, f64, Vec<f64>, f64)> {
    let lens = |a: f64, b: f64| -> Vec<f64> {
        if segments == 2 {
            vec![a + b * 0.5]
        } else {
            vec![a, b]
        }
    };
    vec![
        (FINGERS[0], 0.035, 0.035, lens(0.032, 0.026), 0.022),
        (FINGERS[1], 0.090, 0.025, lens(0.036, 0.022), 0.020),
        (FINGERS[2], 0.095, 0.008, lens(0.040, 0.025), 0.021),
        (FINGERS[3], 0.090, -0.010, lens(0.036, 0.022), 0.020),
        (FINGERS[4], 0.080, -0.027, lens(0.028, 0.018), 0.018),
    ]
}

/// Adds wrist-attached fingers, hand capsules and hand vertices for one side.
fn add_hand(b: &mut Builder, side: &str, sign: f64, segments: usize) -> Vec<String> {
    let wrist = format!("{side}_wrist");
    // hand axis hangs down and out; palm faces the thigh
    let dir = [sign * FRAC_1_SQRT_2, 0.0, -FRAC_1_SQRT_2];
    let palm_normal = [-sign * FRAC_1_SQRT_2, 0.0, -FRAC_1_SQRT_2];
    let mut names = Vec::new();
    for (finger, along, spread, lens, tip) in finger_layout(segments) {
        let fdir = if finger == "thumb" {
            normalize(add(dir, [0.0, 0.8, 0.0]))
        } else {
            dir
        };
        let base = add(scale(dir, along), [0.0, spread, 0.0]);
        let mut parent = wrist.clone();
        let mut offset = base;
        let mut segment_lens = lens.clone();
        segment_lens.push(tip);
        for (s, len) in segment_lens.iter().enumerate() {
            let name = format!("{side}_{finger}{}", s + 1);
            b.joint(&name, Some(&parent), offset);
            let next = scale(fdir, *len);
            b.bone(&name, 0.009, next);
            names.push(name.clone());
            if s + 1 == segment_lens.len() {
                b.vertex(&format!("{side}_{finger}_tip"), &name, next);
                b.vertex(
                    &format!("{side}_{finger}_pad"),
                    &name,
                    add(scale(next, 0.5), scale(palm_normal, 0.009)),
                );
            }
            parent = name;
            offset = next;
        }
    }
    b.capsule(&wrist, 0.03, [0.0; 3], scale(dir, 0.07));
    b.vertex(
        &format!("{side}_palm"),
        &wrist,
        add(scale(dir, 0.045), scale(palm_normal, 0.03)),
    );
    b.vertex(
        &format!("{side}_back_of_hand"),
        &wrist,
        add(scale(dir, 0.045), scale(palm_normal, -0.03)),
    );
    b.vertex(&format!("{side}_wrist_inner"), &wrist, scale(palm_normal, 0.025));
    names
}

fn add_leg(b: &mut Builder, side: &str, sign: f64, root: &str, foot_name: &str) {
    let hip = format!("{side}_hip");
    let knee = format!("{side}_knee");
    let ankle = format!("{side}_ankle");
    let toe = format!("{side}_{foot_name}");
    b.joint(&hip, Some(root), mirror_x([0.09, 0.0, -0.06], sign));
    b.joint(&knee, Some(&hip), [0.0, 0.0, -0.40]);
    b.joint(&ankle, Some(&knee), [0.0, 0.0, -0.40]);
    b.joint(&toe, Some(&ankle), [0.0, 0.13, -0.03]);
    b.bone(&hip, 0.07, [0.0, 0.0, -0.40]);
    b.bone(&knee, 0.05, [0.0, 0.0, -0.40]);
    b.bone(&ankle, 0.035, [0.0, 0.13, -0.03]);
    b.bone(&toe, 0.02, [0.0, 0.04, 0.0]);
    b.vertex(&format!("{side}_thigh_front"), &hip, [0.0, 0.07, -0.2]);
    b.vertex(&format!("{side}_thigh_outer"), &hip, mirror_x([0.07, 0.0, -0.2], sign));
    b.vertex(&format!("{side}_thigh_inner"), &hip, mirror_x([-0.07, 0.0, -0.2], sign));
    b.vertex(&format!("{side}_knee_front"), &knee, [0.0, 0.05, 0.0]);
    b.vertex(&format!("{side}_shin"), &knee, [0.0, 0.05, -0.2]);
    b.vertex(&format!("{side}_heel"), &ankle, [0.0, -0.03, -0.03]);
    b.vertex(&format!("{side}_toe_tip"), &toe, [0.0, 0.05, 0.0]);
}

fn add_arm(b: &mut Builder, side: &str, sign: f64, attach: &str, shoulder_offset: [f64; 3]) {
    let shoulder = format!("{side}_shoulder");
    let elbow = format!("{side}_elbow");
    let wrist = format!("{side}_wrist");
    let upper = mirror_x([0.19, 0.0, -0.19], sign);
    let fore = mirror_x([0.177, 0.0, -0.177], sign);
    b.joint(&shoulder, Some(attach), mirror_x(shoulder_offset, sign));
    b.joint(&elbow, Some(&shoulder), upper);
    b.joint(&wrist, Some(&elbow), fore);
    b.bone(&shoulder, 0.045, upper);
    b.bone(&elbow, 0.04, fore);
    b.vertex(&format!("{side}_shoulder_top"), &shoulder, [0.0, 0.0, 0.045]);
    b.vertex(&format!("{side}_upper_arm"), &shoulder, add(scale(upper, 0.5), [0.0, 0.045, 0.0]));
    b.vertex(&format!("{side}_elbow_tip"), &elbow, [0.0, -0.04, 0.0]);
    b.vertex(&format!("{side}_forearm"), &elbow, add(scale(fore, 0.5), [0.0, 0.04, 0.0]));
}

fn add_trunk_vertices(b: &mut Builder, chest: &str, head: &str) {
    b.vertex("head_top", head, [0.0, 0.0, 0.23]);
    b.vertex("forehead", head, [0.0, 0.09, 0.12]);
    b.vertex("nose", head, [0.0, 0.1, 0.08]);
    b.vertex("mouth", head, [0.0, 0.085, 0.04]);
    b.vertex("chin", head, [0.0, 0.07, 0.0]);
    b.vertex("back_of_head", head, [0.0, -0.09, 0.1]);
    for (side, sign) in SIDES {
        b.vertex(&format!("{side}_cheek"), head, mirror_x([0.06, 0.07, 0.06], sign));
        b.vertex(&format!("{side}_ear"), head, mirror_x([0.09, 0.0, 0.08], sign));
        b.vertex(&format!("{side}_chest"), chest, mirror_x([0.08, 0.12, 0.12], sign));
        b.vertex(&format!("{side}_hip"), "pelvis", mirror_x([0.13, 0.0, 0.0], sign));
        b.vertex(&format!("{side}_buttock"), "pelvis", mirror_x([0.07, -0.12, -0.02], sign));
        b.vertex(&format!("{side}_waist"), "pelvis", mirror_x([0.12, 0.0, 0.15], sign));
    }
    b.vertex("sternum", chest, [0.0, 0.13, 0.15]);
    b.vertex("upper_back", chest, [0.0, -0.13, 0.15]);
    b.vertex("belly", "pelvis", [0.0, 0.12, 0.1]);
    b.vertex("lower_back", "pelvis", [0.0, -0.12, 0.1]);
}

fn finish(b: Builder, name: &str, hands: [Vec<String>; 2], foot: &str) -> SkeletonConfig {
    let mut pairs = b.pairs;
    for j in &b.joints {
        if let Some(rest) = j.name.strip_prefix("left_") {
            pairs.push((j.name.clone(), format!("right_{rest}")));
        }
    }
    let [left, right] = hands;
    SkeletonConfig {
        name: name.to_string(),
        frame_rate: 30.0,
        joints: b.joints,
        foot_joints: [
            "left_ankle".into(),
            format!("left_{foot}"),
            "right_ankle".into(),
            format!("right_{foot}"),
        ],
        wrist_joints: ["left_wrist".into(), "right_wrist".into()],
        left_hand_joints: left,
        right_hand_joints: right,
        mirror_pairs: pairs,
        capsules: b.capsules,
        vertices: b.vertices,
    }
}

pub fn desk37_config() -> SkeletonConfig {
    let mut b = Builder::default();
    b.joint("pelvis", None, [0.0; 3]);
    b.joint("spine", Some("pelvis"), [0.0, 0.0, 0.25]);
    b.joint("head", Some("spine"), [0.0, 0.0, 0.30]);
    b.capsule("pelvis", 0.12, [0.0, 0.0, -0.02], [0.0, 0.0, 0.18]);
    b.capsule("spine", 0.13, [0.0, 0.0, 0.0], [0.0, 0.0, 0.20]);
    b.capsule("head", 0.09, [0.0, 0.0, 0.02], [0.0, 0.0, 0.14]);
    for (side, sign) in SIDES {
        add_leg(&mut b, side, sign, "pelvis", "toe");
    }
    for (side, sign) in SIDES {
        add_arm(&mut b, side, sign, "spine", [0.17, 0.0, 0.18]);
    }
    let hands = SIDES.map(|(side, sign)| add_hand(&mut b, side, sign, 2));
    add_trunk_vertices(&mut b, "spine", "head");
    finish(b, "desk37", hands, "toe")
}

pub fn full55_config() -> SkeletonConfig {
    let mut b = Builder::default();
    b.joint("pelvis", None, [0.0; 3]);
    b.joint("spine1", Some("pelvis"), [0.0, 0.0, 0.10]);
    b.joint("spine2", Some("spine1"), [0.0, 0.0, 0.12]);
    b.joint("spine3", Some("spine2"), [0.0, 0.0, 0.05]);
    b.joint("neck", Some("spine3"), [0.0, 0.0, 0.20]);
    b.joint("head", Some("neck"), [0.0, 0.0, 0.08]);
    b.joint("jaw", Some("head"), [0.0, 0.03, 0.0]);
    b.capsule("pelvis", 0.12, [0.0, 0.0, -0.02], [0.0, 0.0, 0.08]);
    b.capsule("spine1", 0.12, [0.0; 3], [0.0, 0.0, 0.12]);
    b.capsule("spine2", 0.13, [0.0; 3], [0.0, 0.0, 0.05]);
    b.capsule("spine3", 0.13, [0.0; 3], [0.0, 0.0, 0.12]);
    b.capsule("neck", 0.05, [0.0; 3], [0.0, 0.0, 0.08]);
    b.capsule("head", 0.09, [0.0, 0.0, 0.04], [0.0, 0.0, 0.14]);
    b.capsule("jaw", 0.04, [0.0, 0.02, 0.0], [0.0, 0.04, 0.0]);
    for (side, sign) in SIDES {
        b.joint(&format!("{side}_eye"), Some("head"), mirror_x([0.03, 0.08, 0.06], sign));
        b.capsule(&format!("{side}_eye"), 0.012, [0.0; 3], [0.0; 3]);
    }
    for (side, sign) in SIDES {
        add_leg(&mut b, side, sign, "pelvis", "foot");
    }
    for (side, sign) in SIDES {
        let collar = format!("{side}_collar");
        b.joint(&collar, Some("spine3"), mirror_x([0.07, 0.0, 0.10], sign));
        b.bone(&collar, 0.04, mirror_x([0.10, 0.0, 0.03], sign));
        add_arm(&mut b, side, sign, &collar, [0.10, 0.0, 0.03]);
    }
    let hands = SIDES.map(|(side, sign)| add_hand(&mut b, side, sign, 3));
    add_trunk_vertices(&mut b, "spine3", "head");
    finish(b, "full55", hands, "foot")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_assets_match_builders() {
        assert_eq!(desk37().config(), &desk37_config());
        assert_eq!(full55().config(), &full55_config());
    }

    /// Rewrites the bundled JSON assets from the builders.
    #[test]
    #[ignore]
    fn regenerate_assets() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
        for (file, config) in [
            ("skeleton_desk37.json", desk37_config()),
            ("skeleton_full55.json", full55_config()),
        ] {
            let text = serde_json::to_string_pretty(&config).unwrap();
            std::fs::write(dir.join(file), text + "\n").unwrap();
        }
    }

    #[test]
    fn joint_counts() {
        assert_eq!(desk37().joint_count(), 37);
        assert_eq!(full55().joint_count(), 55);
    }
}
