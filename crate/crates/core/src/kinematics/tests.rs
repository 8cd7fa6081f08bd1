use super::rotation::tests::random_rotation;
use super::rotation::{axis_angle, rot_x, rot_z};
use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn chain_skeleton() -> SkeletonSpec {
    let joint = |name: &str, parent: Option<&str>, offset: [f64; 3]| JointConfig {
        name: name.into(),
        parent: parent.map(Into::into),
        offset,
    };
    SkeletonSpec::from_config(SkeletonConfig {
        name: "chain".into(),
        frame_rate: 30.0,
        joints: vec![joint("root", None, [0.0; 3]), joint("tip", Some("root"), [0.0, 1.0, 0.0])],
        foot_joints: ["root".into(), "root".into(), "root".into(), "root".into()],
        wrist_joints: ["root".into(), "root".into()],
        left_hand_joints: vec![],
        right_hand_joints: vec![],
        mirror_pairs: vec![],
        capsules: vec![],
        vertices: vec![],
    })
    .unwrap()
}

pub(crate) fn random_pose<R: Rng>(skel: &SkeletonSpec, rng: &mut R, max_angle: f64) -> Pose {
    let mut pose = Pose::rest(skel);
    pose.root_position = Vec3::new(
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-2.0..2.0),
        rng.gen_range(0.5..1.5),
    );
    pose.root_orient = random_rotation(rng);
    for r in pose.local_rots.iter_mut() {
        let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        *r = axis_angle(&axis, rng.gen_range(-max_angle..max_angle));
    }
    pose
}

#[test]
fn rest_pose_sums_offsets_along_chain() {
    let skel = presets::desk37();
    let fk = forward_kinematics(&skel, &Pose::rest(&skel)).unwrap();
    for (i, joint) in skel.joints.iter().enumerate() {
        let mut expected = Vec3::zeros();
        let mut j = i;
        while let Some(p) = skel.joints[j].parent {
            expected += skel.joints[j].rest_offset;
            j = p;
        }
        assert!((fk[i] - expected).norm() < 1e-15, "{}", joint.name);
    }
}

#[test]
fn translation_shifts_every_joint() {
    let skel = presets::desk37();
    let rest = forward_kinematics(&skel, &Pose::rest(&skel)).unwrap();
    let mut pose = Pose::rest(&skel);
    pose.root_position = Vec3::new(1.0, 2.0, 3.0);
    let moved = forward_kinematics(&skel, &pose).unwrap();
    for (a, b) in rest.iter().zip(&moved) {
        assert!((b - a - Vec3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
    }
}

#[test]
fn root_roll_lifts_child() {
    let skel = chain_skeleton();
    let mut pose = Pose::rest(&skel);
    pose.root_orient = rot_x(std::f64::consts::FRAC_PI_2);
    let fk = forward_kinematics(&skel, &pose).unwrap();
    assert!((fk[1] - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
}

#[test]
fn rigid_root_transform_moves_point_cloud_rigidly() {
    let skel = presets::desk37();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let pose = random_pose(&skel, &mut rng, 1.0);
        let base = forward_kinematics(&skel, &pose).unwrap();
        let rot = random_rotation(&mut rng);
        let shift = Vec3::new(rng.gen(), rng.gen(), rng.gen());
        let mut moved = pose.clone();
        moved.root_orient = rot * pose.root_orient;
        moved.root_position = rot * pose.root_position + shift;
        let fk = forward_kinematics(&skel, &moved).unwrap();
        for (a, b) in base.iter().zip(&fk) {
            assert!((rot * a + shift - b).norm() < 1e-9);
        }
    }
}

#[test]
fn size_mismatch_is_reported() {
    let skel = presets::desk37();
    let mut pose = Pose::rest(&skel);
    pose.local_rots.pop();
    assert_eq!(
        forward_kinematics(&skel, &pose),
        Err(KinematicsError::SizeMismatch {
            expected: 36,
            got: 35
        })
    );
}

#[test]
fn vertex_on_joint_and_rest_offsets() {
    let mut config = presets::desk37_config();
    config.vertices.push(VertexEntryConfig {
        label: "pelvis_origin".into(),
        joint: "pelvis".into(),
        offset: [0.0; 3],
    });
    config.vertices.push(VertexEntryConfig {
        label: "pelvis_side".into(),
        joint: "pelvis".into(),
        offset: [0.1, 0.0, 0.0],
    });
    let skel = SkeletonSpec::from_config(config).unwrap();
    let mut pose = Pose::rest(&skel);
    pose.root_position = Vec3::new(0.3, -0.2, 0.9);
    let v = vertex_positions(&skel, skel.catalog(), &pose, &["pelvis_origin", "pelvis_side"]).unwrap();
    assert_eq!(v["pelvis_origin"], pose.root_position);
    assert!((v["pelvis_side"] - pose.root_position - Vec3::new(0.1, 0.0, 0.0)).norm() < 1e-15);
    assert_eq!(
        vertex_positions(&skel, skel.catalog(), &pose, &["nope"]),
        Err(KinematicsError::UnknownLabel("nope".into()))
    );
}

#[test]
fn vertex_matches_auxiliary_child_joint() {
    let base = presets::desk37_config();
    let entry = base.vertices.iter().find(|v| v.label == "forehead").unwrap().clone();
    let mut aux_config = base.clone();
    aux_config.joints.push(JointConfig {
        name: "aux".into(),
        parent: Some(entry.joint.clone()),
        offset: entry.offset,
    });
    let skel = SkeletonSpec::from_config(base).unwrap();
    let aux = SkeletonSpec::from_config(aux_config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let pose = random_pose(&skel, &mut rng, 1.2);
        let v = vertex_positions(&skel, skel.catalog(), &pose, &["forehead"]).unwrap()["forehead"];
        let mut aux_pose = pose.clone();
        aux_pose.local_rots.push(Mat3::identity());
        let fk = forward_kinematics(&aux, &aux_pose).unwrap();
        assert!((fk[aux.joint_count() - 1] - v).norm() < 1e-12);
    }
}

#[test]
fn mirror_fixed_points_and_translation() {
    let skel = presets::desk37();
    let rest = Pose::rest(&skel);
    assert_eq!(mirror_pose(&skel, &rest).unwrap(), rest);
    let mut pose = Pose::rest(&skel);
    pose.root_position = Vec3::new(0.5, 1.0, 0.0);
    let m = mirror_pose(&skel, &pose).unwrap();
    assert_eq!(m.root_position, Vec3::new(-0.5, 1.0, 0.0));
}

#[test]
fn mirror_is_involution_and_reflects_fk() {
    let skel = presets::desk37();
    let s = rotation::sagittal_reflection();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let pose = random_pose(&skel, &mut rng, 1.5);
        let m = mirror_pose(&skel, &pose).unwrap();
        for r in std::iter::once(&m.root_orient).chain(&m.local_rots) {
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
        let back = mirror_pose(&skel, &m).unwrap();
        assert!((back.root_position - pose.root_position).norm() < 1e-9);
        for (a, b) in back.local_rots.iter().zip(&pose.local_rots) {
            assert!((a - b).abs().max() < 1e-9);
        }
        let fk = forward_kinematics(&skel, &pose).unwrap();
        let fk_m = forward_kinematics(&skel, &m).unwrap();
        for i in 0..skel.joint_count() {
            assert!((fk_m[skel.mirror(i)] - s * fk[i]).norm() < 1e-9);
        }
    }
}

#[test]
fn both_presets_are_mirror_consistent() {
    for skel in [presets::desk37(), presets::full55()] {
        for (i, &j) in skel.mirror_map.iter().enumerate() {
            assert_eq!(skel.mirror(j), i);
        }
        assert_eq!(skel.left_hand_joints.len(), skel.right_hand_joints.len());
        assert!(skel.capsules.iter().all(|c| c.radius > 0.0));
        // every joint carries a collision proxy
        for j in 0..skel.joint_count() {
            assert!(skel.capsules.iter().any(|c| c.joint == j), "{}", skel.joints[j].name);
        }
    }
}

#[test]
fn desk_catalog_covers_required_regions() {
    let skel = presets::desk37();
    for label in [
        "left_palm",
        "right_palm",
        "head_top",
        "left_hip",
        "right_hip",
        "left_thigh_front",
        "right_thigh_front",
    ] {
        assert!(skel.catalog().get(label).is_some(), "{label}");
    }
    assert_eq!(skel.catalog().nearest_label("left_plam"), Some("left_palm"));
}

#[test]
fn invalid_skeletons_are_rejected() {
    let mut config = presets::desk37_config();
    config.joints.swap(1, 2);
    assert!(matches!(
        SkeletonSpec::from_config(config),
        Err(KinematicsError::InvalidSkeleton(_))
    ));

    let mut config = presets::desk37_config();
    config.capsules[0].radius = 0.0;
    assert!(SkeletonSpec::from_config(config).is_err());

    let mut config = presets::desk37_config();
    config.mirror_pairs.retain(|(l, _)| l != "left_knee");
    assert!(matches!(
        SkeletonSpec::from_config(config),
        Err(KinematicsError::IncompleteMirrorMap(_))
    ));

    let mut config = presets::desk37_config();
    config.joints[4].offset[0] += 0.01;
    assert!(SkeletonSpec::from_config(config).is_err());
}

#[test]
fn rest_pose_hands_do_not_touch_body() {
    let skel = presets::desk37();
    let depth = self_penetration(&skel, &Pose::standing(&skel), &skel.hand_joints(), &skel.body_joints()).unwrap();
    assert_eq!(depth, 0.0);
}

/// Places the left palm capsule's midpoint on the spine capsule's midpoint.
pub(crate) fn hand_through_torso(skel: &SkeletonSpec) -> (Pose, f64) {
    let spine = skel.joint_index("spine").unwrap();
    let shoulder = skel.joint_index("left_shoulder").unwrap();
    let elbow = skel.joint_index("left_elbow").unwrap();
    let wrist = skel.wrist_joints[0];
    let torso = skel.capsules.iter().find(|c| c.joint == spine).unwrap();
    let palm = skel.capsules.iter().find(|c| c.joint == wrist).unwrap();
    let mut pose = Pose::standing(skel);
    let rest = world_pose(skel, &pose).unwrap();
    let target = rest.positions[spine] + (torso.a + torso.b) * 0.5;
    let fore = skel.joints[wrist].rest_offset;
    let reach = fore + (palm.a + palm.b) * 0.5;
    assert!(reach.normalize().dot(&fore.normalize()) > 1.0 - 1e-9);
    let (upper, middle) = two_bone_ik(
        &rest.positions[shoulder],
        &target,
        &skel.joints[elbow].rest_offset,
        &reach,
        &-Vec3::y(),
        &-Vec3::y(),
    );
    *pose.rotation_mut(shoulder) = upper;
    *pose.rotation_mut(elbow) = upper.transpose() * middle;
    (pose, palm.radius + torso.radius)
}

#[test]
fn coincident_capsule_centers_give_sum_of_radii() {
    let skel = presets::desk37();
    let (pose, expected) = hand_through_torso(&skel);
    let depth = self_penetration(&skel, &pose, &skel.hand_joints(), &skel.body_joints()).unwrap();
    assert!((depth - expected).abs() < 1e-9, "{depth} vs {expected}");
}

#[test]
fn penetration_is_symmetric_and_nonnegative() {
    let skel = presets::desk37();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hands = skel.hand_joints();
    let body = skel.body_joints();
    for _ in 0..50 {
        let pose = random_pose(&skel, &mut rng, 2.0);
        let ab = self_penetration(&skel, &pose, &hands, &body).unwrap();
        let ba = self_penetration(&skel, &pose, &body, &hands).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab >= 0.0);
    }
}

#[test]
fn missing_capsule_is_reported() {
    let mut config = presets::desk37_config();
    config.capsules.retain(|c| c.joint != "head");
    let skel = SkeletonSpec::from_config(config).unwrap();
    let head = skel.joint_index("head").unwrap();
    assert_eq!(
        self_penetration(&skel, &Pose::rest(&skel), &[head], &[0]),
        Err(KinematicsError::MissingCapsule(head))
    );
}

/// Dense sampling oracle: 1000 points along each capsule axis, minimum
/// pairwise distance, then the overlap of the radii.
fn sampled_penetration(skel: &SkeletonSpec, pose: &Pose, a: &[usize], b: &[usize]) -> f64 {
    let world = world_pose(skel, pose).unwrap();
    let samples = |c: &Capsule| -> Vec<Vec3> {
        let (p, q) = capsule_segment(&world, c);
        (0..1000).map(|k| p + (q - p) * (k as f64 / 999.0)).collect()
    };
    let mut best = 0.0f64;
    for ca in skel.capsules.iter().filter(|c| a.contains(&c.joint)) {
        for cb in skel.capsules.iter().filter(|c| b.contains(&c.joint)) {
            if ca.joint == cb.joint || skel.is_parent_child(ca.joint, cb.joint) {
                continue;
            }
            let (pa, qa) = capsule_segment(&world, ca);
            let (pb, qb) = capsule_segment(&world, cb);
            // cheap reject: endpoints far apart cannot overlap
            let span = (qa - pa).norm() + (qb - pb).norm() + ca.radius + cb.radius;
            if (pa - pb).norm() > span + 0.01 {
                continue;
            }
            let sa = samples(ca);
            let sb = samples(cb);
            let d = sa
                .iter()
                .flat_map(|x| sb.iter().map(move |y| (x - y).norm()))
                .fold(f64::INFINITY, f64::min);
            best = best.max(ca.radius + cb.radius - d);
        }
    }
    best
}

#[test]
fn penetration_agrees_with_sampling_oracle() {
    let skel = presets::desk37();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let hands = skel.hand_joints();
    let body = skel.body_joints();
    let mut penetrating = 0;
    for k in 0..12 {
        let pose = if k % 3 == 0 {
            hand_through_torso(&skel).0
        } else {
            let mut p = Pose::standing(&skel);
            for j in ["left_shoulder", "right_shoulder", "left_elbow", "right_elbow"] {
                let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                *p.rotation_mut(skel.joint_index(j).unwrap()) = axis_angle(&axis, rng.gen_range(-2.5..2.5));
            }
            p.root_orient = rot_z(rng.gen_range(-3.0..3.0));
            p
        };
        let exact = self_penetration(&skel, &pose, &hands, &body).unwrap();
        let oracle = sampled_penetration(&skel, &pose, &hands, &body);
        assert!((exact - oracle).abs() < 2e-3, "{exact} vs {oracle}");
        if exact > 0.0 {
            penetrating += 1;
        }
    }
    assert!(penetrating >= 4);
}
