//! Noise schedule, forward noising, training objective and samplers.

mod losses;
mod sampler;
mod train;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::{DenoiserError, Real};
use crate::representation::RepresentationError;

pub use losses::{
    clip_losses, foot_skate_loss, geo_loss, recon_loss, ClipLosses, LossWeights,
};
pub use sampler::{
    ancestral_step, ddim_step, ddim_step_eta, ode_backward, ode_sample, ode_sample_traced, sample, uniform_steps,
    OdeTrace, DEFAULT_DDIM_STEPS,
};
pub use train::{train, training_losses, LossRecord, TrainConfig, Trainer, CHECKPOINT_FILE, LOSS_CSV_HEADER, LOSS_FILE};

pub const DEFAULT_STEPS: usize = 300;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("step {t} outside [0, {max}]")]
    StepOutOfRange { t: usize, max: usize },
    #[error("bad step list: {0}")]
    BadStepList(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Representation(#[from] RepresentationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// β linear in t between the given endpoints.
    Linear { beta_start: f64, beta_end: f64 },
    /// Linear β from 1e-4 to 2e-2, rescaled by 1000/T so that every step
    /// count ends at the same near-zero signal level.
    ScaledLinear,
    /// Squared-cosine ᾱ with offset `s`.
    Cosine { s: f64 },
}

impl Default for ScheduleKind {
    fn default() -> Self {
        ScheduleKind::ScaledLinear
    }
}

/// Cumulative signal coefficients `ᾱ_0 = 1 > ᾱ_1 > … > ᾱ_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub kind: ScheduleKind,
    /// `T + 1` entries.
    pub alpha_bar: Vec<f64>,
    /// Per-step `β_t = 1 − ᾱ_t / ᾱ_{t−1}`; `beta[0] = 0`.
    pub beta: Vec<f64>,
}

pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule, DiffusionError> {
    if steps == 0 {
        return Err(DiffusionError::InvalidConfig("schedule needs at least one step".into()));
    }
    let t_max = steps as f64;
    let linear = |b0: f64, b1: f64| -> Vec<f64> {
        (1..=steps)
            .map(|t| if steps == 1 { b1 } else { b0 + (b1 - b0) * (t - 1) as f64 / (t_max - 1.0) })
            .collect()
    };
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear { beta_start, beta_end } => linear(beta_start, beta_end),
        ScheduleKind::ScaledLinear => {
            let scale = 1000.0 / t_max;
            linear(1e-4 * scale, (2e-2 * scale).min(0.999))
        }
        ScheduleKind::Cosine { s } => {
            let f = |t: f64| ((t / t_max + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
            (1..=steps)
                .map(|t| (1.0 - f(t as f64) / f((t - 1) as f64)).clamp(1e-8, 0.999))
                .collect()
        }
    };
    if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
        return Err(DiffusionError::InvalidConfig(format!("β outside (0, 1) for {kind:?}")));
    }
    let mut alpha_bar = Vec::with_capacity(steps + 1);
    alpha_bar.push(1.0);
    let mut beta = Vec::with_capacity(steps + 1);
    beta.push(0.0);
    for b in betas {
        let prev = *alpha_bar.last().expect("non-empty");
        alpha_bar.push(prev * (1.0 - b));
        beta.push(b);
    }
    Ok(NoiseSchedule {
        steps,
        kind,
        alpha_bar,
        beta,
    })
}

impl NoiseSchedule {
    pub fn default_schedule() -> Self {
        make_schedule(DEFAULT_STEPS, ScheduleKind::default()).expect("valid default")
    }

    /// Per-step `α_t = 1 − β_t`.
    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta[t]
    }

    pub fn check_step(&self, t: usize) -> Result<(), DiffusionError> {
        if t > self.steps {
            Err(DiffusionError::StepOutOfRange { t, max: self.steps })
        } else {
            Ok(())
        }
    }
}

/// `X_t = √ᾱ_t · X₀ + √(1 − ᾱ_t) · ε`.
pub fn q_sample<F: Real>(
    schedule: &NoiseSchedule,
    x0: ArrayView2<F>,
    t: usize,
    eps: ArrayView2<F>,
) -> Result<Array2<F>, DiffusionError> {
    schedule.check_step(t)?;
    if x0.dim() != eps.dim() {
        return Err(DenoiserError::ShapeMismatch(format!("x0 {:?} vs noise {:?}", x0.dim(), eps.dim())).into());
    }
    let a = F::of(schedule.alpha_bar[t].sqrt());
    let s = F::of((1.0 - schedule.alpha_bar[t]).sqrt());
    Ok(x0.mapv(|v| v * a) + &eps.mapv(|v| v * s))
}

/// Per-column affine map between raw features and model space,
/// `model = (raw − mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn identity(dim: usize) -> Self {
        FeatureStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Column statistics over all frames, with `std` floored at `floor`.
    pub fn from_clips(clips: &[Array2<f64>], floor: f64) -> Self {
        let dim = clips.first().map_or(0, |c| c.ncols());
        let rows: usize = clips.iter().map(|c| c.nrows()).sum();
        let mut mean = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for c in clips {
            for row in c.rows() {
                for (k, v) in row.iter().enumerate() {
                    mean[k] += v;
                    sq[k] += v * v;
                }
            }
        }
        let n = rows.max(1) as f64;
        let std = (0..dim)
            .map(|k| {
                mean[k] /= n;
                (sq[k] / n - mean[k] * mean[k]).max(0.0).sqrt().max(floor)
            })
            .collect();
        FeatureStats { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, raw: ArrayView2<f64>) -> Array2<f64> {
        let mut out = raw.to_owned();
        for mut row in out.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
        out
    }

    pub fn denormalize(&self, model: ArrayView2<f64>) -> Array2<f64> {
        let mut out = model.to_owned();
        for mut row in out.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[k] + self.mean[k];
            }
        }
        out
    }

    /// Maps a gradient w.r.t. raw features to one w.r.t. model space.
    pub fn raw_grad_to_model(&self, grad: ArrayView2<f64>) -> Array2<f64> {
        let mut out = grad.to_owned();
        for mut row in out.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v *= self.std[k];
            }
        }
        out
    }
}

/// Everything besides the weights needed to use a trained model; stored as
/// checkpoint metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub stats: FeatureStats,
    pub skeleton_hash: String,
    pub frames: usize,
}

impl ModelMeta {
    pub fn schedule(&self) -> Result<NoiseSchedule, DiffusionError> {
        make_schedule(self.steps, self.schedule)
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, DiffusionError> {
        Ok(serde_json::from_value(value.clone())?)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("serializable")
    }
}
