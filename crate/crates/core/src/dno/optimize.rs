use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::losses::{
    loss_ch_impl, loss_close_impl, loss_contact_impl, loss_decorr, loss_decorr_grad, loss_foot_skate_impl, loss_lk,
    loss_lk_grad, LossTerms,
};
use super::{DnoError, DnoTask, OptStage};
use crate::denoiser::{Denoiser, Real};
use crate::diffusion::{ode_backward, ode_sample_traced, uniform_steps, FeatureStats, NoiseSchedule, DEFAULT_DDIM_STEPS};
use crate::kinematics::rotation::rot_z;
use crate::kinematics::SkeletonSpec;
use crate::representation::{decode_world, DecodedGrad, DecodedMotion};

/// A trained model and everything needed to map noise to world motion.
pub struct Prior<'a, F> {
    pub model: &'a Denoiser<F>,
    pub schedule: &'a NoiseSchedule,
    pub stats: &'a FeatureStats,
    pub skel: &'a SkeletonSpec,
    pub ddim_steps: usize,
}

impl<'a, F: Real> Prior<'a, F> {
    pub fn new(
        model: &'a Denoiser<F>,
        schedule: &'a NoiseSchedule,
        stats: &'a FeatureStats,
        skel: &'a SkeletonSpec,
    ) -> Self {
        Prior {
            model,
            schedule,
            stats,
            skel,
            ddim_steps: DEFAULT_DDIM_STEPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.model.config.input_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnoOptions {
    /// Gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for DnoOptions {
    fn default() -> Self {
        DnoOptions {
            clip_norm: Some(1.0),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub const TRACE_CSV_HEADER: &str = "iteration,stage,lk,foot,ch,close,contact,decorr,total,grad_norm";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub stage: usize,
    pub terms: LossTerms,
    pub grad_norm: f64,
}

impl TraceRow {
    pub fn csv_line(&self) -> String {
        let t = &self.terms;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iteration, self.stage, t.lk, t.foot, t.ch, t.close, t.contact, t.decorr, t.total, self.grad_norm
        )
    }
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{TRACE_CSV_HEADER}")?;
    for r in rows {
        writeln!(f, "{}", r.csv_line())?;
    }
    f.flush()
}

pub struct DnoResult {
    pub x_t: Array2<f64>,
    /// Raw (denormalized) features of the optimized motion.
    pub features: Array2<f64>,
    pub motion: DecodedMotion,
    /// Loss terms of the initial noise under the first stage's weights.
    pub initial: LossTerms,
    /// Loss terms of the returned noise under the last stage's weights.
    pub last: LossTerms,
    pub trace: Vec<TraceRow>,
}

/// Output of one objective evaluation.
pub struct Evaluation {
    pub terms: LossTerms,
    pub grad: Option<Array2<f64>>,
    pub features: Array2<f64>,
    pub motion: DecodedMotion,
}

impl DnoTask {
    pub(crate) fn check(&self) -> Result<(), DnoError> {
        if self.observations.is_none() && self.contacts.is_none() {
            return Err(DnoError::NoActiveConstraint);
        }
        if self.observations.as_ref().is_some_and(|o| o.is_empty()) {
            return Err(DnoError::EmptyObservationSet);
        }
        if self.contacts.as_ref().is_some_and(|c| c.is_empty()) {
            return Err(DnoError::EmptyContactPlan);
        }
        Ok(())
    }
}

fn weighted(dg: &mut Option<DecodedGrad>, w: f64) -> Option<(&mut DecodedGrad, f64)> {
    dg.as_mut().filter(|_| w != 0.0).map(|g| (g, w))
}

/// Weighted task loss of the motion sampled from `x_t`, with its gradient
/// w.r.t. `x_t` through the whole deterministic chain when `want_grad`.
pub fn evaluate<F: Real>(
    prior: &Prior<F>,
    task: &DnoTask,
    stage: &OptStage,
    x_t: ArrayView2<f64>,
    want_grad: bool,
) -> Result<Evaluation, DnoError> {
    let skel = prior.skel;
    let steps = uniform_steps(prior.schedule, prior.ddim_steps)?;
    let (x0, trace) = ode_sample_traced(prior.model, prior.schedule, x_t.mapv(F::of).view(), &steps)?;
    let features = prior.stats.denormalize(x0.mapv(|v| v.into_f64()).view());
    let motion = decode_world(skel, features.view(), &task.init_position, &rot_z(task.init_yaw))?;

    let mut dg = want_grad.then(|| DecodedGrad::zeros(motion.frames, motion.joints));
    let mut terms = LossTerms {
        lk: loss_lk(x_t),
        decorr: loss_decorr(x_t),
        ..LossTerms::default()
    };
    terms.foot = loss_foot_skate_impl(skel, &motion, weighted(&mut dg, stage.lambda_foot));
    terms.ch = loss_ch_impl(skel, &motion, weighted(&mut dg, stage.lambda_ch));
    if let Some(obs) = &task.observations {
        terms.close = loss_close_impl(&motion, obs, weighted(&mut dg, stage.lambda_close))?;
    }
    if let Some(plan) = &task.contacts {
        terms.contact = loss_contact_impl(skel, &motion, plan, weighted(&mut dg, stage.contact_weight()))?;
    }
    terms.total = stage.lambda_lk * terms.lk
        + stage.lambda_foot * terms.foot
        + stage.lambda_ch * terms.ch
        + stage.lambda_close * terms.close
        + stage.contact_weight() * terms.contact
        + stage.lambda_decorr * terms.decorr;

    let grad = dg.map(|dg| {
        let raw = motion.backward(skel, features.view(), &dg);
        let d_out = prior.stats.raw_grad_to_model(raw.view()).mapv(F::of);
        let mut g = ode_backward(prior.model, prior.schedule, &trace, d_out.view()).mapv(|v| v.into_f64());
        if stage.lambda_lk != 0.0 {
            g += &loss_lk_grad(x_t, stage.lambda_lk);
        }
        if stage.lambda_decorr != 0.0 {
            g.scaled_add(stage.lambda_decorr, &loss_decorr_grad(x_t));
        }
        g
    });
    Ok(Evaluation {
        terms,
        grad,
        features,
        motion,
    })
}

/// Standard-normal starting noise for a task of `frames` frames.
pub fn initial_noise(frames: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((frames, dim), |_| StandardNormal.sample(&mut rng))
}

/// Optimizes the initial noise for `task` through `stages` in order, with
/// one adaptive-moment state carried across stages.
pub fn optimize_noise<F: Real>(
    prior: &Prior<F>,
    task: &DnoTask,
    stages: &[OptStage],
    seed: u64,
    options: &DnoOptions,
) -> Result<DnoResult, DnoError> {
    let x_t = initial_noise(task.frames, prior.dim(), seed);
    optimize_from(prior, task, stages, x_t, options)
}

/// [`optimize_noise`] from an explicit starting noise.
pub fn optimize_from<F: Real>(
    prior: &Prior<F>,
    task: &DnoTask,
    stages: &[OptStage],
    mut x_t: Array2<f64>,
    options: &DnoOptions,
) -> Result<DnoResult, DnoError> {
    task.check()?;
    if stages.is_empty() {
        return Err(DnoError::InvalidStage("no stages".into()));
    }
    for s in stages {
        s.validate()?;
    }
    let mut m = Array2::<f64>::zeros(x_t.raw_dim());
    let mut v = Array2::<f64>::zeros(x_t.raw_dim());
    let mut trace = Vec::new();
    let mut initial = None;
    let mut iteration = 0;

    for (stage_idx, stage) in stages.iter().enumerate() {
        for _ in 0..stage.epochs {
            let eval = evaluate(prior, task, stage, x_t.view(), true)?;
            let mut g = eval.grad.expect("gradient requested");
            let grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            trace.push(TraceRow {
                iteration,
                stage: stage_idx,
                terms: eval.terms,
                grad_norm,
            });
            initial.get_or_insert(eval.terms);
            if !grad_norm.is_finite() || !eval.terms.total.is_finite() {
                return Err(DnoError::NonFiniteGradient { iteration, trace });
            }
            if let Some(c) = options.clip_norm {
                if grad_norm > c {
                    g *= c / grad_norm;
                }
            }
            iteration += 1;
            let (b1, b2) = (options.beta1, options.beta2);
            let c1 = 1.0 - b1.powi(iteration as i32);
            let c2 = 1.0 - b2.powi(iteration as i32);
            ndarray::Zip::from(&mut x_t).and(&mut m).and(&mut v).and(&g).for_each(|x, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *x -= stage.lr * (*m / c1) / ((*v / c2).sqrt() + options.eps);
            });
        }
    }
    let last_stage = stages.last().expect("non-empty");
    let eval = evaluate(prior, task, last_stage, x_t.view(), false)?;
    Ok(DnoResult {
        x_t,
        features: eval.features,
        motion: eval.motion,
        initial: initial.expect("at least one iteration"),
        last: eval.terms,
        trace,
    })
}
