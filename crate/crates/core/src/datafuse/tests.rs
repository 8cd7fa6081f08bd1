use super::*;
use crate::kinematics::rotation::{yaw_of, Vec3};
use crate::kinematics::tests::hand_through_torso;
use crate::kinematics::{presets, vertex_in_world};
use crate::representation::{contact_labels, encode};

fn max_rot_diff(a: &[Pose], b: &[Pose]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| {
            let mut m = (p.root_position - q.root_position).abs().max();
            m = m.max((p.root_orient - q.root_orient).abs().max());
            for (r, s) in p.local_rots.iter().zip(&q.local_rots) {
                m = m.max((r - s).abs().max());
            }
            m
        })
        .fold(0.0, f64::max)
}

fn hand_diff(a: &HandClip, b: &HandClip) -> f64 {
    assert_eq!(a.side, b.side);
    a.local_rots
        .iter()
        .flatten()
        .zip(b.local_rots.iter().flatten())
        .map(|(r, s)| (r - s).abs().max())
        .fold(0.0, f64::max)
}

fn walking_params(turn_rate: f64) -> GaitParams {
    GaitParams {
        speed: 1.0,
        turn_rate,
        cycle: 0.8,
        crouch: 0.05,
        step_height: 0.08,
        arm_swing: 0.3,
        ..GaitParams::idle()
    }
}

#[test]
fn body_generator_is_deterministic() {
    let skel = presets::desk37();
    assert_eq!(synth_body_clip(5, 30, &skel), synth_body_clip(5, 30, &skel));
    assert_ne!(synth_body_clip(5, 30, &skel).poses, synth_body_clip(6, 30, &skel).poses);
}

#[test]
fn idle_clip_is_stationary() {
    let skel = presets::desk37();
    let (poses, plants) = gait_poses(&skel, &GaitParams::idle(), 40);
    assert!(plants.iter().all(|p| p[0] && p[1]));
    let f = encode(&skel, &poses, None).unwrap();
    let tau = f.data.slice(ndarray::s![.., 0..2]).mapv(f64::abs).fold(0.0f64, |m, v| m.max(*v));
    assert!(tau < 1e-12);
    assert!(contact_labels(&skel, &poses).unwrap().iter().all(|&c| c == 1.0));
}

#[test]
fn planted_feet_stay_fixed_and_alternate() {
    let skel = presets::desk37();
    for turn in [0.0, 0.4, -0.4] {
        let (poses, plants) = gait_poses(&skel, &walking_params(turn), 120);
        let feet: Vec<Vec<Vec3>> = poses
            .iter()
            .map(|p| {
                let w = world_pose(&skel, p).unwrap();
                skel.foot_joints.iter().map(|&f| w.positions[f]).collect()
            })
            .collect();
        for side in 0..2 {
            let mut switches = 0;
            for i in 1..poses.len() {
                if plants[i][side] != plants[i - 1][side] {
                    switches += 1;
                }
                if plants[i][side] && plants[i - 1][side] {
                    for k in [2 * side, 2 * side + 1] {
                        assert!((feet[i][k] - feet[i - 1][k]).norm() < 1e-9, "foot slid at frame {i}");
                    }
                    // toe on the ground
                    assert!(feet[i][2 * side + 1].z.abs() < 1e-9);
                }
            }
            assert!(switches >= 4, "side {side} only switched {switches} times");
        }
        // some foot is always down
        assert!(plants.iter().all(|p| p[0] || p[1]));
        let labels = contact_labels(&skel, &poses).unwrap();
        for i in 0..poses.len() - 1 {
            for side in 0..2 {
                if plants[i][side] && plants[i + 1][side] {
                    assert_eq!(labels[(i, 2 * side)], 1.0);
                    assert_eq!(labels[(i, 2 * side + 1)], 1.0);
                }
            }
        }
    }
}

fn planted_slip(skel: &SkeletonSpec, poses: &[Pose], plants: &[[bool; 2]]) -> f64 {
    let feet: Vec<Vec<Vec3>> = poses
        .iter()
        .map(|p| {
            let w = world_pose(skel, p).unwrap();
            skel.foot_joints.iter().map(|&f| w.positions[f]).collect()
        })
        .collect();
    let mut worst: f64 = 0.0;
    for i in 1..poses.len() {
        for side in 0..2 {
            if plants[i][side] && plants[i - 1][side] {
                for k in [2 * side, 2 * side + 1] {
                    worst = worst.max((feet[i][k] - feet[i - 1][k]).norm());
                }
            }
        }
    }
    worst
}

#[test]
fn sampled_gaits_keep_plants_within_reach() {
    use rand::SeedableRng;
    let skel = presets::desk37();
    for seed in 0..200 {
        let params = GaitParams::sample(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let (poses, plants) = gait_poses(&skel, &params, 90);
        let slip = planted_slip(&skel, &poses, &plants);
        assert!(slip < 1e-9, "seed {seed}: planted foot moved {slip} ({params:?})");
    }
}

#[test]
fn random_body_clips_rarely_penetrate() {
    let skel = presets::desk37();
    let hands = skel.hand_joints();
    let body = filter_body_joints(&skel);
    let (mut frames, mut clean) = (0usize, 0usize);
    for seed in 0..1000 {
        for pose in synth_body_clip(seed, 120, &skel).poses {
            let w = world_pose(&skel, &pose).unwrap();
            frames += 1;
            if penetration_in_world(&skel, &w, &hands, &body).unwrap().depth == 0.0 {
                clean += 1;
            }
        }
    }
    let rate = clean as f64 / frames as f64;
    assert!(rate >= 0.99, "penetration-free rate {rate}");
}

#[test]
fn flip_is_an_involution_and_mirrors_turns() {
    let skel = presets::desk37();
    let clip = synth_body_clip(3, 40, &skel);
    let twice = flip_clip(&skel, &flip_clip(&skel, &clip).unwrap()).unwrap();
    assert!(max_rot_diff(&clip.poses, &twice.poses) < 1e-9);
    assert_eq!(twice.source_tag, clip.source_tag);

    let rest = BodyClip {
        poses: vec![Pose::standing(&skel); 5],
        source_tag: "rest".into(),
    };
    assert!(max_rot_diff(&rest.poses, &flip_clip(&skel, &rest).unwrap().poses) < 1e-15);

    // turning right (negative yaw rate) becomes turning left
    let (poses, _) = gait_poses(&skel, &walking_params(-0.5), 60);
    let right = BodyClip {
        poses,
        source_tag: "arc".into(),
    };
    let left = flip_clip(&skel, &right).unwrap();
    let turn = |c: &BodyClip| yaw_of(&c.poses[59].root_orient) - yaw_of(&c.poses[0].root_orient);
    assert!(turn(&right) < -0.5);
    assert!(turn(&left) > 0.5);
    assert!((turn(&right) + turn(&left)).abs() < 1e-9);
    // and the path bends to the other side of the initial heading
    let lateral = |c: &BodyClip| c.poses[59].root_position.x - c.poses[0].root_position.x;
    assert!(lateral(&right) > 0.1 && lateral(&left) < -0.1);
}

#[test]
fn hand_generator_is_deterministic_and_bounded() {
    let skel = presets::desk37();
    let limits = HandLimits::default();
    let a = synth_hand_clip(11, 50, &skel, Side::Left);
    assert_eq!(a, synth_hand_clip(11, 50, &skel, Side::Left));
    assert_eq!(a.local_rots[0].len(), skel.left_hand_joints.len());
    let bound = limits.flex_max.max(-limits.flex_min) + limits.spread_max + 1e-9;
    for seed in 0..50 {
        for r in synth_hand_clip(seed, 50, &skel, Side::Right).local_rots.iter().flatten() {
            let angle = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            assert!(angle <= bound, "angle {angle}");
        }
    }
}

fn tip_to_palm(skel: &SkeletonSpec, hand: &HandClip) -> Vec<f64> {
    let side = hand.side;
    let prefix = if side == Side::Left { "left" } else { "right" };
    let body = BodyClip {
        poses: vec![Pose::standing(skel); hand.frames()],
        source_tag: String::new(),
    };
    let rest_other = HandClip {
        local_rots: vec![vec![Mat3::identity(); side.other().joints(skel).len()]; hand.frames()],
        side: side.other(),
    };
    let (l, r) = match side {
        Side::Left => (hand, &rest_other),
        Side::Right => (&rest_other, hand),
    };
    let tip = skel.catalog().get(&format!("{prefix}_middle_tip")).unwrap();
    let palm = skel.catalog().get(&format!("{prefix}_palm")).unwrap();
    merge_body_hand(skel, &body, l, r)
        .unwrap()
        .iter()
        .map(|p| {
            let w = world_pose(skel, p).unwrap();
            (vertex_in_world(&w, tip) - vertex_in_world(&w, palm)).norm()
        })
        .collect()
}

#[test]
fn fist_closes_monotonically_and_reversal_opens() {
    let skel = presets::desk37();
    for side in [Side::Left, Side::Right] {
        let fist = curl_to_fist(&skel, side, 30, &HandLimits::default());
        let d = tip_to_palm(&skel, &fist);
        assert!(d.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{d:?}");
        assert!(d[29] < 0.6 * d[0]);
        let opened = tip_to_palm(&skel, &time_reverse(&fist));
        assert!(opened.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }
}

#[test]
fn hand_flip_involution_and_generator_symmetry() {
    let skel = presets::desk37();
    let left = synth_hand_clip(4, 30, &skel, Side::Left);
    let twice = flip_hand(&skel, &flip_hand(&skel, &left).unwrap()).unwrap();
    assert!(hand_diff(&left, &twice) < 1e-12);

    let rest = HandClip {
        local_rots: vec![vec![Mat3::identity(); skel.left_hand_joints.len()]; 3],
        side: Side::Left,
    };
    let flipped = flip_hand(&skel, &rest).unwrap();
    assert_eq!(flipped.side, Side::Right);
    assert!(flipped.local_rots.iter().flatten().all(|r| *r == Mat3::identity()));

    let limits = HandLimits::default();
    let mirrored_fist = flip_hand(&skel, &curl_to_fist(&skel, Side::Left, 20, &limits)).unwrap();
    assert!(hand_diff(&mirrored_fist, &curl_to_fist(&skel, Side::Right, 20, &limits)) < 1e-9);
    let mirrored = flip_hand(&skel, &left).unwrap();
    assert!(hand_diff(&mirrored, &synth_hand_clip(4, 30, &skel, Side::Right)) < 1e-9);
}

#[test]
fn time_reverse_involution_and_fixed_point() {
    let skel = presets::desk37();
    let clip = synth_hand_clip(9, 25, &skel, Side::Right);
    assert_eq!(time_reverse(&time_reverse(&clip)), clip);
    let constant = HandClip {
        local_rots: vec![clip.local_rots[3].clone(); 6],
        side: Side::Right,
    };
    assert_eq!(time_reverse(&constant), constant);
}

#[test]
fn merge_keeps_wrists_and_composes_fingers() {
    let skel = presets::desk37();
    let n = 30;
    let body = synth_body_clip(21, n, &skel);
    let rest = |side: Side| HandClip {
        local_rots: vec![vec![Mat3::identity(); side.joints(&skel).len()]; n],
        side,
    };
    assert_eq!(merge_body_hand(&skel, &body, &rest(Side::Left), &rest(Side::Right)).unwrap(), body.poses);

    let left = synth_hand_clip(1, n, &skel, Side::Left);
    let right = synth_hand_clip(2, n, &skel, Side::Right);
    let merged = merge_body_hand(&skel, &body, &left, &right).unwrap();
    for i in 0..n {
        let before = world_pose(&skel, &body.poses[i]).unwrap();
        let after = world_pose(&skel, &merged[i]).unwrap();
        for (h, clip) in [(0, &left), (1, &right)] {
            let w = skel.wrist_joints[h];
            assert!((before.rotations[w] - after.rotations[w]).abs().max() < 1e-9);
            // fingertips: hand-local chain, then the body's wrist transform
            let joints = clip.side.joints(&skel);
            let mut local_pos = vec![Vec3::zeros(); skel.joint_count()];
            let mut local_rot = vec![Mat3::identity(); skel.joint_count()];
            for (k, &j) in joints.iter().enumerate() {
                let p = skel.parent(j).unwrap();
                let (pp, pr) = if p == w {
                    (Vec3::zeros(), Mat3::identity())
                } else {
                    (local_pos[p], local_rot[p])
                };
                local_pos[j] = pp + pr * skel.joints[j].rest_offset;
                local_rot[j] = pr * clip.local_rots[i][k];
            }
            for &j in joints {
                let expected = before.positions[w] + before.rotations[w] * local_pos[j];
                assert!((after.positions[j] - expected).norm() < 1e-9);
            }
        }
    }
}

#[test]
fn merge_rejects_mismatches() {
    let skel = presets::desk37();
    let body = synth_body_clip(0, 10, &skel);
    let l = synth_hand_clip(0, 10, &skel, Side::Left);
    let r = synth_hand_clip(0, 10, &skel, Side::Right);
    assert!(matches!(
        merge_body_hand(&skel, &body, &r, &l),
        Err(DatafuseError::SideMismatch { .. })
    ));
    let short = synth_hand_clip(0, 9, &skel, Side::Right);
    assert!(matches!(
        merge_body_hand(&skel, &body, &l, &short),
        Err(DatafuseError::LengthMismatch { body: 10, hand: 9 })
    ));
}

#[test]
fn filter_accepts_rest_and_rejects_hand_through_torso() {
    let skel = presets::desk37();
    let rest = vec![Pose::standing(&skel); 4];
    assert_eq!(
        penetration_filter(&skel, &rest, PENETRATION_THRESHOLD).unwrap(),
        FilterOutcome::Accept { max_depth: 0.0 }
    );
    let (bad, expected) = hand_through_torso(&skel);
    let mut poses = rest.clone();
    poses[2] = bad;
    match penetration_filter(&skel, &poses, PENETRATION_THRESHOLD).unwrap() {
        FilterOutcome::Reject { depth, frame } => {
            assert_eq!(frame, 2);
            assert!((depth - expected).abs() < 1e-9);
        }
        other => panic!("expected rejection, got {other:?}"),
    }
}

#[test]
fn seeded_merge_acceptance_rate_is_stable() {
    let skel = presets::desk37();
    let rate = || {
        let accepted = (0..40u64)
            .filter(|&s| {
                let body = synth_body_clip(s, 30, &skel);
                let l = synth_hand_clip(s + 100, 30, &skel, Side::Left);
                let r = synth_hand_clip(s + 200, 30, &skel, Side::Right);
                let merged = merge_body_hand(&skel, &body, &l, &r).unwrap();
                penetration_filter(&skel, &merged, PENETRATION_THRESHOLD).unwrap().accepted()
            })
            .count();
        accepted as f64 / 40.0
    };
    let first = rate();
    assert_eq!(first, rate());
    assert!(first > 0.5, "acceptance rate {first}");
}

fn small_config(seed: u64) -> DatasetConfig {
    DatasetConfig {
        body_clips: 10,
        frames: 24,
        hand_clips: 6,
        seed,
        ..DatasetConfig::default()
    }
}

#[test]
fn dataset_counts_determinism_and_replay() {
    let skel = presets::desk37();
    let config = small_config(17);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let manifest = build_dataset(&config, a.path()).unwrap();
    build_dataset(&config, b.path()).unwrap();

    assert_eq!(manifest.counts.total + manifest.dropped.len(), 20);
    assert_eq!(manifest.counts.original + manifest.counts.flipped, manifest.counts.total);
    assert_eq!(manifest.counts.hand_flipped, 12);
    let bytes = |d: &tempfile::TempDir| std::fs::read(d.path().join("manifest.json")).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    for c in &manifest.clips {
        assert_eq!(std::fs::read(a.path().join(&c.file)).unwrap(), std::fs::read(b.path().join(&c.file)).unwrap());
    }

    // replay every logged pairing through the filter independently
    let (left, right) = hand_pools(&config, &skel).unwrap();
    let mut rejections = 0;
    for p in &manifest.pairings {
        let base = synth_body_clip(super::dataset::body_seed(&config, p.body), config.frames, &skel);
        let body = if p.body % 2 == 1 { flip_clip(&skel, &base).unwrap() } else { base };
        let merged = merge_body_hand(&skel, &body, &left[p.left], &right[p.right]).unwrap();
        let outcome = penetration_filter(&skel, &merged, config.penetration_threshold).unwrap();
        assert_eq!(outcome.accepted(), p.accepted);
        if !outcome.accepted() {
            rejections += 1;
        }
    }
    assert_eq!(rejections, manifest.rejections);

    let (loaded, clips) = load_dataset(a.path()).unwrap();
    assert_eq!(loaded, manifest);
    assert_eq!(clips.len(), manifest.counts.total);
    for c in &clips {
        c.check(&skel).unwrap();
        assert_eq!(c.frames(), 24);
    }
}

#[test]
fn emitted_clips_respect_the_threshold() {
    let skel = presets::desk37();
    let config = small_config(3);
    let dir = tempfile::tempdir().unwrap();
    let (manifest, clips) = {
        build_dataset(&config, dir.path()).unwrap();
        load_dataset(dir.path()).unwrap()
    };
    let start = Vec3::new(0.0, 0.0, skel.rest_root_height());
    for (entry, f) in manifest.clips.iter().zip(&clips) {
        let (poses, _) = crate::representation::decode(&skel, f, &start, &Mat3::identity()).unwrap();
        let outcome = penetration_filter(&skel, &poses, config.penetration_threshold + 1e-4).unwrap();
        assert!(outcome.accepted(), "{} penetrates: {outcome:?}", entry.file);
    }
}

#[test]
fn bad_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = DatasetConfig {
        frames: 1,
        ..small_config(0)
    };
    assert!(matches!(build_dataset(&config, dir.path()), Err(DatafuseError::Config(_))));
    let parsed: Result<DatasetConfig, _> = serde_json::from_str(r#"{"bodies": 3}"#);
    assert!(parsed.is_err());
}
