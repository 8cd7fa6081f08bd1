//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use motionprior::datafuse::{
    build_dataset, flip_clip, flip_hand, load_dataset, merge_body_hand, penetration_filter, synth_body_clip,
    synth_hand_clip, time_reverse, DatasetConfig, FilterOutcome, HandClip, Side, PENETRATION_THRESHOLD,
};
use motionprior::denoiser::{Checkpoint, Denoiser, DenoiserConfig};
use motionprior::diffusion::{
    ddim_step, foot_skate_loss, geo_loss, ode_sample, q_sample, recon_loss, sample, NoiseSchedule, TrainConfig,
    Trainer,
};
use motionprior::dno::{
    gradient_check, loss_ch, loss_close, loss_contact, loss_decorr, loss_foot_skate, loss_lk, optimize_noise,
    ContactPlan, ContactTriple, DnoOptions, DnoTask, ObservationSet, OptStage, Prior,
};
use motionprior::evalcli::{avg_error, keyframe_errors, loc_error, skating_ratio, traj_error, THRESHOLDS_M};
use motionprior::kinematics::rotation::{axis_angle, rot_z, yaw_of, Mat3, Vec3};
use motionprior::kinematics::{presets, two_bone_ik, vertex_in_world, world_pose, Pose, SkeletonSpec, WorldPose};
use motionprior::representation::{decode, decode_world, encode, heading_decompose, FeatureLayout, MotionFeatures};
use motionprior::tasks::{llm_plan, validate_plan, FixtureTransport, TaskError, TRACKING_JOINTS};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Line {
    id: usize,
    name: &'static str,
    outcome: Outcome,
    seconds: f64,
}

fn run(id: usize, name: &'static str, f: impl FnOnce() -> Outcome) -> Line {
    eprintln!("running criterion {id}: {name}");
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    Line {
        id,
        name,
        outcome,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(f64::abs).fold(0.0, |m, v| m.max(*v))
}

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

fn features(skel: &SkeletonSpec, data: Array2<f64>) -> MotionFeatures {
    MotionFeatures {
        data,
        skeleton_hash: skel.hash(),
        frame_rate: skel.frame_rate,
    }
}

fn worlds(skel: &SkeletonSpec, poses: &[Pose]) -> Vec<WorldPose> {
    poses.iter().map(|p| world_pose(skel, p).unwrap()).collect()
}

// ---- 1 ----------------------------------------------------------------

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let r = gradient_check(&presets::desk37(), 16, 20, 1e-4, 2024).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        r.probes.len() == 20 && r.max_rel_error < 1e-3 && secs < 120.0,
        format!("max relative error {:.2e} over {} coordinates (< 1e-3), {secs:.2}s (< 120s)", r.max_rel_error, r.probes.len()),
    )
}

// ---- 2 ----------------------------------------------------------------

fn representation_round_trip() -> Outcome {
    let skel = presets::desk37();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_rmse = 0.0f64;
    let mut worst_canon = 0.0f64;
    let canon = FeatureLayout::for_skeleton(&skel).contacts();
    for seed in 0..100 {
        let poses = synth_body_clip(7_000 + seed, 60, &skel).poses;
        let f = encode(&skel, &poses, None).unwrap();
        let (p0, h0) = (poses[0].root_position, heading_decompose(&poses[0].root_orient, None).unwrap().0);
        let (decoded, _) = decode(&skel, &f, &p0, &h0).unwrap();
        let (a, b) = (worlds(&skel, &poses), worlds(&skel, &decoded));
        let (mut sq, mut count) = (0.0, 0usize);
        for (wa, wb) in a.iter().zip(&b) {
            for (x, y) in wa.positions.iter().zip(&wb.positions) {
                sq += (x - y).norm_squared();
                count += 1;
            }
        }
        worst_rmse = worst_rmse.max((sq / count as f64).sqrt());

        let yaw = rot_z(rng.gen_range(-3.1..3.1));
        let shift = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), 0.0);
        let moved: Vec<Pose> = poses
            .iter()
            .map(|p| Pose {
                root_position: yaw * p.root_position + shift,
                root_orient: yaw * p.root_orient,
                local_rots: p.local_rots.clone(),
            })
            .collect();
        let g = encode(&skel, &moved, None).unwrap();
        let d = max_abs(&f.data.slice(s![.., ..canon]).to_owned(), &g.data.slice(s![.., ..canon]).to_owned());
        worst_canon = worst_canon.max(d);
    }
    outcome(
        worst_rmse < 1e-5 && worst_canon < 1e-9,
        format!("worst clip RMSE {worst_rmse:.2e} m (< 1e-5), canonical blocks max change under yaw/translation {worst_canon:.2e}"),
    )
}

// ---- 3 ----------------------------------------------------------------

fn dimension_law() -> Outcome {
    let full = FeatureLayout::for_skeleton(&presets::full55()).dim();
    let desk = FeatureLayout::for_skeleton(&presets::desk37()).dim();
    outcome(full == 508 && desk == 346, format!("D(55) = {full} (508), D(37) = {desk} (346)"))
}

// ---- 4 ----------------------------------------------------------------

fn pose_diff(a: &[Pose], b: &[Pose]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| {
            let mut m = (p.root_position - q.root_position).abs().max();
            m = m.max((p.root_orient - q.root_orient).abs().max());
            p.local_rots.iter().zip(&q.local_rots).fold(m, |m, (r, s)| m.max((r - s).abs().max()))
        })
        .fold(0.0, f64::max)
}

fn hand_diff(a: &HandClip, b: &HandClip) -> f64 {
    a.local_rots
        .iter()
        .flatten()
        .zip(b.local_rots.iter().flatten())
        .map(|(r, s)| (r - s).abs().max())
        .fold(if a.side == b.side { 0.0 } else { f64::INFINITY }, f64::max)
}

/// Standing pose with the left arm folded so the palm sits at the torso
/// capsule's center; overlap is the sum of the two radii.
fn hand_through_torso(skel: &SkeletonSpec) -> (Pose, f64) {
    let spine = skel.joint_index("spine").unwrap();
    let shoulder = skel.joint_index("left_shoulder").unwrap();
    let elbow = skel.joint_index("left_elbow").unwrap();
    let wrist = skel.wrist_joints[0];
    let torso = skel.capsules.iter().find(|c| c.joint == spine).unwrap();
    let palm = skel.capsules.iter().find(|c| c.joint == wrist).unwrap();
    let mut pose = Pose::standing(skel);
    let rest = world_pose(skel, &pose).unwrap();
    let target = rest.positions[spine] + (torso.a + torso.b) * 0.5;
    let reach = skel.joints[wrist].rest_offset + (palm.a + palm.b) * 0.5;
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

fn augmentation_algebra() -> Outcome {
    let skel = presets::desk37();
    let mut flip = 0.0f64;
    let mut hand = 0.0f64;
    let mut reverse = 0.0f64;
    let mut wrist = 0.0f64;
    for seed in 0..10 {
        let body = synth_body_clip(seed, 40, &skel);
        flip = flip.max(pose_diff(&body.poses, &flip_clip(&skel, &flip_clip(&skel, &body).unwrap()).unwrap().poses));
        let left = synth_hand_clip(seed, 40, &skel, Side::Left);
        let right = synth_hand_clip(seed + 100, 40, &skel, Side::Right);
        hand = hand.max(hand_diff(&left, &flip_hand(&skel, &flip_hand(&skel, &left).unwrap()).unwrap()));
        reverse = reverse.max(hand_diff(&right, &time_reverse(&time_reverse(&right))));
        let merged = merge_body_hand(&skel, &body, &left, &right).unwrap();
        for (b, m) in worlds(&skel, &body.poses).iter().zip(worlds(&skel, &merged)) {
            for &w in &skel.wrist_joints {
                wrist = wrist.max((b.rotations[w] - m.rotations[w]).abs().max());
            }
        }
    }
    let standing = Pose::standing(&skel);
    let rest_hand = |side: Side| HandClip {
        local_rots: vec![vec![Mat3::identity(); side.joints(&skel).len()]; 4],
        side,
    };
    let rest_body = motionprior::datafuse::BodyClip {
        poses: vec![standing; 4],
        source_tag: "rest".into(),
    };
    let rest_merge = merge_body_hand(&skel, &rest_body, &rest_hand(Side::Left), &rest_hand(Side::Right)).unwrap();
    let accepts = matches!(
        penetration_filter(&skel, &rest_merge, PENETRATION_THRESHOLD).unwrap(),
        FilterOutcome::Accept { .. }
    );
    let (bad, expected) = hand_through_torso(&skel);
    let mut poses = rest_merge.clone();
    poses[2] = bad;
    let rejects = match penetration_filter(&skel, &poses, PENETRATION_THRESHOLD).unwrap() {
        FilterOutcome::Reject { depth, frame } => frame == 2 && (depth - expected).abs() < 1e-9,
        FilterOutcome::Accept { .. } => false,
    };
    outcome(
        flip < 1e-9 && hand < 1e-9 && reverse < 1e-9 && wrist < 1e-9 && accepts && rejects,
        format!(
            "flip {flip:.1e}, hand flip {hand:.1e}, reverse {reverse:.1e}, wrist {wrist:.1e} (< 1e-9); \
             rest merge accepted: {accepts}; hand-through-torso rejected: {rejects}"
        ),
    )
}

// ---- 7 ----------------------------------------------------------------

/// Jittered gait features with random contact values, some outside [0, 1].
fn random_features(skel: &SkeletonSpec, seed: u64, frames: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut poses = synth_body_clip(seed, frames, skel).poses;
    for p in &mut poses {
        for r in &mut p.local_rots {
            let axis = Vec3::new(rng.gen(), rng.gen(), rng.gen()) - Vec3::repeat(0.5);
            *r *= axis_angle(&axis.normalize(), rng.gen_range(-0.3..0.3));
        }
    }
    let mut x = encode(skel, &poses, None).unwrap().data;
    let c = FeatureLayout::for_skeleton(skel).contacts();
    for i in 0..frames {
        for k in 0..4 {
            x[(i, c + k)] = rng.gen_range(-0.2..1.2);
        }
    }
    x
}

fn decorr_oracle(x: &Array2<f64>) -> f64 {
    let (n, d) = x.dim();
    let mut total = 0.0;
    for s in [1usize, 2, 4] {
        let m = n / s;
        if m < 2 {
            continue;
        }
        let pooled: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..d).map(|c| (0..s).map(|r| x[(i * s + r, c)]).sum::<f64>() / (s as f64).sqrt()).collect())
            .collect();
        let mut num = 0.0;
        for i in 0..m - 1 {
            for c in 0..d {
                num += pooled[i][c] * pooled[i + 1][c];
            }
        }
        let rho = num / ((m - 1) * d) as f64;
        total += rho * rho;
    }
    let count = (n * d) as f64;
    let mean = x.iter().sum::<f64>() / count;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
    total + mean * mean + (var - 1.0) * (var - 1.0)
}

fn l1(v: Vec3) -> f64 {
    v.x.abs() + v.y.abs() + v.z.abs()
}

fn loss_oracles() -> Outcome {
    let skel = presets::desk37();
    let catalog = skel.catalog();
    let labels: Vec<&str> = catalog.labels().filter(|l| skel.joint_index(l).is_none()).collect();
    let c = FeatureLayout::for_skeleton(&skel).contacts();
    let names = ["recon", "geo", "foot", "lk", "ch", "foot_dno", "close", "contact", "decorr"];
    let mut worst = [0.0f64; 9];
    let mut negative = false;
    for case in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + case);
        let n = rng.gen_range(8..24);
        let x0 = random_features(&skel, 900 + case, n);
        let hat = &x0 + &(randn(&mut rng, n, x0.ncols()) * 0.02);
        let init = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.2));
        let yaw = rot_z(rng.gen_range(-3.0..3.0));

        // oracle positions: pose-level decode, then per-frame FK
        let fk = |x: &Array2<f64>, p0: &Vec3, h0: &Mat3| worlds(&skel, &decode(&skel, &features(&skel, x.clone()), p0, h0).unwrap().0);
        let origin = (Vec3::zeros(), Mat3::identity());
        let (wa, wb) = (fk(&x0, &origin.0, &origin.1), fk(&hat, &origin.0, &origin.1));
        let wt = fk(&hat, &init, &yaw);
        let ma = decode_world(&skel, x0.view(), &origin.0, &origin.1).unwrap();
        let mb = decode_world(&skel, hat.view(), &origin.0, &origin.1).unwrap();
        let mt = decode_world(&skel, hat.view(), &init, &yaw).unwrap();

        let mut recon = 0.0;
        for (a, b) in x0.iter().zip(hat.iter()) {
            recon += (a - b) * (a - b);
        }
        recon /= x0.len() as f64;
        let mut geo = 0.0;
        for i in 0..n {
            for j in 0..skel.joint_count() {
                geo += (wa[i].positions[j] - wb[i].positions[j]).norm_squared();
            }
        }
        geo /= n as f64;
        let (mut foot, mut ch, mut foot_dno) = (0.0, 0.0, 0.0);
        for i in 0..n - 1 {
            for (k, &j) in skel.foot_joints.iter().enumerate() {
                let f = x0[(i, c + k)];
                foot += f * f * (wb[i + 1].positions[j] - wb[i].positions[j]).norm_squared();
                let g = hat[(i, c + k)].clamp(0.0, 1.0);
                ch += wt[i].positions[j].z.abs() * g;
                foot_dno += g * g * (wt[i + 1].positions[j] - wt[i].positions[j]).norm_squared();
            }
        }
        let norm = (n - 1) as f64;
        let (foot, ch, foot_dno) = (foot / norm, ch / norm, foot_dno / norm);

        let noise = randn(&mut rng, n, x0.ncols()) * rng.gen_range(0.1..2.0);
        let lk = noise.iter().map(|v| v * v).sum::<f64>() / n as f64;

        let mut items = Vec::new();
        let mut close = 0.0;
        for _ in 0..rng.gen_range(1..8) {
            let frame = rng.gen_range(0..n);
            let target = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.8));
            let (name, p) = if rng.gen_bool(0.5) {
                let j = rng.gen_range(0..skel.joint_count());
                (skel.joints[j].name.clone(), wt[frame].positions[j])
            } else {
                let l = labels[rng.gen_range(0..labels.len())];
                (l.to_string(), vertex_in_world(&wt[frame], catalog.get(l).unwrap()))
            };
            close += l1(p - target);
            items.push((name, frame, target));
        }
        close /= items.len() as f64;
        let obs = ObservationSet::new(&skel, items, n).unwrap();

        let mut triples = Vec::new();
        let mut contact = 0.0;
        for _ in 0..rng.gen_range(1..5) {
            let a = labels[rng.gen_range(0..labels.len())];
            let b = loop {
                let b = labels[rng.gen_range(0..labels.len())];
                if b != a {
                    break b;
                }
            };
            let frame = rng.gen_range(0..n);
            let va = vertex_in_world(&wt[frame], catalog.get(a).unwrap());
            let vb = vertex_in_world(&wt[frame], catalog.get(b).unwrap());
            contact += l1(va - vb);
            triples.push(ContactTriple {
                a: a.into(),
                b: b.into(),
                frame,
            });
        }
        contact /= triples.len() as f64;
        let plan = ContactPlan { triples };

        let got = [
            recon_loss(x0.view(), hat.view()),
            geo_loss(&ma, &mb),
            foot_skate_loss(&skel, &mb, x0.slice(s![.., c..c + 4])),
            loss_lk(noise.view()),
            loss_ch(&skel, &mt),
            loss_foot_skate(&skel, &mt),
            loss_close(&mt, &obs).unwrap(),
            loss_contact(&skel, &mt, &plan).unwrap(),
            loss_decorr(noise.view()),
        ];
        let want = [recon, geo, foot, lk, ch, foot_dno, close, contact, decorr_oracle(&noise)];
        for k in 0..9 {
            worst[k] = worst[k].max((got[k] - want[k]).abs());
            negative |= got[k] < 0.0;
        }
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    let per: Vec<String> = names.iter().zip(&worst).map(|(n, w)| format!("{n} {w:.0e}")).collect();
    outcome(
        max < 1e-9 && !negative,
        format!("max deviation {max:.1e} (< 1e-9) [{}]; any negative: {negative}", per.join(", ")),
    )
}

// ---- 8 ----------------------------------------------------------------

fn sampler_identities() -> Outcome {
    let s = NoiseSchedule::default_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x0 = randn(&mut rng, 6, 9);
    let eps = randn(&mut rng, 6, 9);
    let identity = q_sample(&s, x0.view(), 0, eps.view()).unwrap() == x0;

    let tiny = |dim, len| DenoiserConfig {
        d_model: 16,
        layers: 2,
        heads: 2,
        ff_dim: 32,
        input_dim: dim,
        max_len: len,
        time_dim: 8,
    };
    let model = Denoiser::<f64>::init(tiny(9, 8), 1).unwrap();
    let single = ode_sample(&model, &s, eps.view(), &[s.steps, 0]).unwrap() == model.forward(eps.view(), s.steps).unwrap();
    let mut ddim = 0.0f64;
    for _ in 0..50 {
        let t = rng.gen_range(2..=s.steps);
        let t2 = rng.gen_range(0..t);
        let (x, p) = (randn(&mut rng, 6, 9), randn(&mut rng, 6, 9));
        let (a, b) = (s.alpha_bar[t], s.alpha_bar[t2]);
        let want = &p * b.sqrt() + (&x - &(&p * a.sqrt())) * ((1.0 - b).sqrt() / (1.0 - a).sqrt());
        ddim = ddim.max(max_abs(&ddim_step(&s, x.view(), p.view(), t, t2), &want));
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.mpck");
    Checkpoint {
        model: Denoiser::<f32>::init(tiny(12, 16), 3).unwrap(),
        meta: serde_json::Value::Null,
        train: None,
    }
    .save(&path)
    .unwrap();
    let (a, b) = (Checkpoint::load(&path).unwrap(), Checkpoint::load(&path).unwrap());
    let first = sample(&a.model, &s, 16, 42, Some(10)).unwrap();
    let second = sample(&b.model, &s, 16, 42, Some(10)).unwrap();
    let bits = first.iter().zip(second.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
    outcome(
        identity && single && ddim < 1e-9 && bits,
        format!("q_sample(t=0) identity: {identity}; one-step chain = prediction: {single}; DDIM closed form max dev {ddim:.1e}; bit-deterministic: {bits}"),
    )
}

// ---- 9 ----------------------------------------------------------------

fn metric_oracles() -> Outcome {
    let skel = presets::desk37();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0;
    let mut monotone = true;
    let grid = [0.02, 0.05, 0.1, 0.25, 0.5, 1.0];
    for _ in 0..100 {
        let errors: Vec<Vec<f64>> = (0..rng.gen_range(1..12))
            .map(|_| {
                (0..rng.gen_range(1..20))
                    .map(|_| if rng.gen_bool(0.1) { THRESHOLDS_M[rng.gen_range(0..3)] } else { rng.gen_range(0.0..0.8) })
                    .collect()
            })
            .collect();
        for &th in &THRESHOLDS_M {
            let mut bad_traj = 0;
            let (mut bad_loc, mut total) = (0, 0);
            for t in &errors {
                let mut any = false;
                for &e in t {
                    total += 1;
                    if e > th {
                        bad_loc += 1;
                        any = true;
                    }
                }
                bad_traj += any as usize;
            }
            mismatches += (traj_error(&errors, th) != 100.0 * bad_traj as f64 / errors.len() as f64) as usize;
            mismatches += (loc_error(&errors, th) != 100.0 * bad_loc as f64 / total as f64) as usize;
        }
        let sum: f64 = errors.iter().flatten().sum();
        let count = errors.iter().map(Vec::len).sum::<usize>();
        mismatches += (avg_error(&errors) != 100.0 * sum / count as f64) as usize;
        for w in grid.windows(2) {
            monotone &= traj_error(&errors, w[1]) <= traj_error(&errors, w[0]);
            monotone &= loc_error(&errors, w[1]) <= loc_error(&errors, w[0]);
        }

        let frames: Vec<Vec<Vec3>> = (0..rng.gen_range(2..30))
            .map(|_| {
                (0..skel.joint_count())
                    .map(|_| Vec3::new(rng.gen_range(-0.04..0.04), rng.gen_range(-0.04..0.04), rng.gen_range(0.0..0.1)))
                    .collect()
            })
            .collect();
        let mut skating = 0;
        for i in 0..frames.len() - 1 {
            let mut any = false;
            for &j in &skel.foot_joints {
                let (a, b) = (frames[i][j], frames[i + 1][j]);
                let dx = b.x - a.x;
                let dy = b.y - a.y;
                any |= a.z < 0.05 && (dx * dx + dy * dy).sqrt() > 0.025;
            }
            skating += any as usize;
        }
        let want = 100.0 * skating as f64 / (frames.len() - 1) as f64;
        mismatches += ((skating_ratio(&skel, &frames) - want).abs() > 1e-12) as usize;
    }
    outcome(
        mismatches == 0 && monotone,
        format!("{mismatches} mismatches against recounts over 100 tensors; threshold monotonicity: {monotone}"),
    )
}

// ---- 5 ----------------------------------------------------------------

struct Trained {
    trainer: Trainer,
}

fn toy_training(slot: &mut Option<Trained>) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = DatasetConfig {
        body_clips: 250,
        frames: 60,
        ..DatasetConfig::default()
    };
    let manifest = build_dataset(&config, dir.path()).unwrap();
    let (_, clips) = load_dataset(dir.path()).unwrap();
    let skel = config.skeleton_spec().unwrap();
    let clips: Vec<Array2<f64>> = clips.into_iter().map(|c| c.data).collect();
    let model = Denoiser::<f32>::init(DenoiserConfig::desk(clips[0].ncols(), 60), 0).unwrap();
    let train = TrainConfig::default();
    let (steps, lr, batch) = (train.steps, train.lr, train.batch_size);
    let mut trainer = Trainer::new(train, skel, NoiseSchedule::default_schedule(), &clips, model).unwrap();
    let start = Instant::now();
    let mut recon = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        let r = trainer.step().unwrap();
        if r.step % 500 == 0 {
            eprintln!("  step {} recon {:.4} ({:.0}s)", r.step, r.recon, start.elapsed().as_secs_f64());
        }
        recon.push(r.recon);
    }
    let secs = start.elapsed().as_secs_f64();
    let first = recon[..100].iter().sum::<f64>() / 100.0;
    let last = recon[recon.len() - 100..].iter().sum::<f64>() / 100.0;
    let drop = 1.0 - last / first;
    let d = trainer.model.config;
    *slot = Some(Trained { trainer });
    outcome(
        manifest.counts.total == 500 && drop >= 0.8 && secs < 1800.0,
        format!(
            "{} clips, d_model {} x {} layers, {steps} steps at lr {lr:e}, batch {batch}: L_recon {first:.3} -> {last:.3}, \
             drop {:.1}% (>= 80%), {secs:.0}s (< 1800s)",
            manifest.counts.total,
            d.d_model,
            d.layers,
            100.0 * drop
        ),
    )
}

// ---- 6 ----------------------------------------------------------------

/// Tracks `joints` of a held-out generated clip at every fourth frame.
fn tracking(prior: &Prior<f32>, joints: &[&str]) -> (f64, f64, f64) {
    let skel = prior.skel;
    let frames = 60;
    let poses = synth_body_clip(100_000, frames, skel).poses;
    let world = worlds(skel, &poses);
    let items: Vec<_> = joints
        .iter()
        .flat_map(|r| {
            let j = skel.joint_index(r).unwrap();
            let world = &world;
            (0..frames).step_by(4).map(move |k| (*r, k, world[k].positions[j]))
        })
        .collect();
    let mut task = DnoTask::new(skel, frames);
    task.observations = Some(ObservationSet::new(skel, items, frames).unwrap());
    task.init_position = poses[0].root_position;
    task.init_yaw = yaw_of(&heading_decompose(&poses[0].root_orient, None).unwrap().0);
    let r = optimize_noise(prior, &task, &OptStage::defaults(), 0, &DnoOptions::default()).unwrap();
    let errors = keyframe_errors(&r.motion, task.observations.as_ref().unwrap());
    (r.initial.close, r.last.close, avg_error(&[errors]))
}

fn dno_compliance(prior: &Prior<f32>) -> Outcome {
    let ((p0, p1, p_cm), (s0, s1, s_cm)) = std::thread::scope(|sc| {
        let single = sc.spawn(|| tracking(prior, &["pelvis"]));
        let six = tracking(prior, &TRACKING_JOINTS);
        (single.join().unwrap(), six)
    });
    let ratio = p1 / p0;
    outcome(
        ratio < 0.1 && p_cm < 5.0 && s_cm < 8.0,
        format!(
            "pelvis: loss_close {p0:.4} -> {p1:.4} ({:.1}% of initial, < 10%), avg error {p_cm:.2} cm (< 5); \
             six joints: loss_close {s0:.4} -> {s1:.4}, avg error {s_cm:.2} cm (< 8)",
            100.0 * ratio
        ),
    )
}

// ---- 10 ---------------------------------------------------------------

fn plan_pipeline(prior: &Prior<f32>) -> Outcome {
    let skel = prior.skel;
    let frames = 60;
    let fixture = FixtureTransport::named("clap").unwrap();
    let plan = llm_plan("clap your hands three times", skel.catalog(), frames, &fixture, 3).unwrap();
    let valid = validate_plan(&plan, skel.catalog(), frames).is_ok() && !plan.triples.is_empty();

    let broken = FixtureTransport::new(vec!["Sure! Here is the plan: {\"triples\": [".into()]);
    let exhausted = matches!(
        llm_plan("clap", skel.catalog(), frames, &broken, 3),
        Err(TaskError::InvalidPlanAfterRetries { attempts: 3, .. })
    ) && broken.calls() == 3;

    let mut task = DnoTask::new(skel, frames);
    task.contacts = Some(plan.clone());
    let r = optimize_noise(prior, &task, &OptStage::defaults(), 0, &DnoOptions::default()).unwrap();
    let drop = 1.0 - r.last.contact / r.initial.contact;
    outcome(
        valid && exhausted && drop >= 0.8,
        format!(
            "fixture plan valid ({} triples): {valid}; malformed replies exhaust 3 attempts: {exhausted}; \
             L_contact {:.4} -> {:.4}, drop {:.1}% (>= 80%)",
            plan.triples.len(),
            r.initial.contact,
            r.last.contact,
            100.0 * drop
        ),
    )
}

fn main() {
    let mut lines = vec![
        run(1, "gradient fidelity", gradient_fidelity),
        run(2, "representation round trip", representation_round_trip),
        run(3, "dimension law", dimension_law),
        run(4, "augmentation algebra", augmentation_algebra),
        run(7, "loss oracles", loss_oracles),
        run(8, "sampler identities", sampler_identities),
        run(9, "metric oracles", metric_oracles),
    ];
    let mut trained = None;
    lines.push(run(5, "toy training", || toy_training(&mut trained)));
    match &trained {
        Some(t) => {
            let tr = &t.trainer;
            let prior = Prior::new(&tr.model, &tr.schedule, &tr.stats, tr.skeleton());
            let (six, ten) = std::thread::scope(|sc| {
                let ten = sc.spawn(|| run(10, "plan pipeline", || plan_pipeline(&prior)));
                let six = run(6, "noise optimization compliance", || dno_compliance(&prior));
                (six, ten.join().unwrap())
            });
            lines.push(six);
            lines.push(ten);
        }
        None => {
            for (id, name) in [(6, "noise optimization compliance"), (10, "plan pipeline")] {
                lines.push(Line {
                    id,
                    name,
                    outcome: outcome(false, "no trained model".into()),
                    seconds: 0.0,
                });
            }
        }
    }
    lines.sort_by_key(|l| l.id);
    println!();
    for l in &lines {
        println!(
            "{} [{:>2}] {}: {} ({:.2}s)",
            if l.outcome.pass { "PASS" } else { "FAIL" },
            l.id,
            l.name,
            l.outcome.detail,
            l.seconds
        );
    }
    let failed = lines.iter().filter(|l| !l.outcome.pass).count();
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
