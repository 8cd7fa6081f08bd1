use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::optimize::{evaluate, initial_noise, Prior};
use super::{ContactPlan, ContactTriple, DnoError, DnoTask, ObservationSet, OptStage};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diffusion::{FeatureStats, NoiseSchedule, DEFAULT_DDIM_STEPS};
use crate::kinematics::rotation::Vec3;
use crate::kinematics::SkeletonSpec;
use crate::representation::FeatureLayout;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    /// `(frame, feature, analytic, finite difference)` per probed coordinate.
    pub probes: Vec<(usize, usize, f64, f64)>,
    pub max_rel_error: f64,
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares the analytic gradient of the weighted task loss w.r.t. `x_T`
/// with central differences on a small 64-bit model: `frames` frames,
/// width 16, two layers, a full deterministic chain, and a task mixing
/// joint and vertex targets with one contact triple.
pub fn gradient_check(
    skel: &SkeletonSpec,
    frames: usize,
    coords: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheck, DnoError> {
    let d = FeatureLayout::for_skeleton(skel).dim();
    let config = DenoiserConfig {
        d_model: 16,
        layers: 2,
        heads: 2,
        ff_dim: 32,
        input_dim: d,
        max_len: frames,
        time_dim: 8,
    };
    let model = Denoiser::<f64>::init(config, seed).map_err(|e| DnoError::InvalidStage(e.to_string()))?;
    let schedule = NoiseSchedule::default_schedule();
    let stats = FeatureStats::identity(d);
    let mut prior = Prior::new(&model, &schedule, &stats, skel);
    prior.ddim_steps = DEFAULT_DDIM_STEPS;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut task = DnoTask::new(skel, frames);
    let refs: Vec<String> = skel
        .joints
        .iter()
        .map(|j| j.name.clone())
        .chain(skel.catalog().labels().map(String::from))
        .collect();
    let items: Vec<_> = (0..6)
        .map(|_| {
            let r = refs[rng.gen_range(0..refs.len())].clone();
            let target = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.8));
            (r, rng.gen_range(0..frames), target)
        })
        .collect();
    task.observations = Some(ObservationSet::new(skel, items, frames)?);
    let labels: Vec<&str> = skel.catalog().labels().collect();
    if labels.len() >= 2 {
        task.contacts = Some(ContactPlan {
            triples: vec![ContactTriple {
                a: labels[0].to_string(),
                b: labels[labels.len() - 1].to_string(),
                frame: frames / 2,
            }],
        });
    }
    let stage = OptStage::stage_one();
    let x = initial_noise(frames, d, seed.wrapping_add(1));
    let grad = evaluate(&prior, &task, &stage, x.view(), true)?
        .grad
        .expect("gradient requested");
    let mut probes = Vec::with_capacity(coords);
    for _ in 0..coords {
        let (i, c) = (rng.gen_range(0..frames), rng.gen_range(0..d));
        let f = |delta: f64| -> Result<f64, DnoError> {
            let mut p = x.clone();
            p[(i, c)] += delta;
            Ok(evaluate(&prior, &task, &stage, p.view(), false)?.terms.total)
        };
        let fd = (f(step)? - f(-step)?) / (2.0 * step);
        probes.push((i, c, grad[(i, c)], fd));
    }
    let max_rel_error = probes.iter().map(|p| rel_error(p.2, p.3)).fold(0.0, f64::max);
    Ok(GradCheck { probes, max_rel_error })
}
