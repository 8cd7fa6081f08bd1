use std::io::Write;
use std::path::Path;

use ndarray::{concatenate, s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{clip_losses, q_sample, ClipLosses, DiffusionError, FeatureStats, LossWeights, ModelMeta, NoiseSchedule};
use crate::denoiser::{Checkpoint, Denoiser, TrainState};
use crate::kinematics::SkeletonSpec;

pub const LOSS_CSV_HEADER: &str = "step,recon,geo,foot,total,grad_norm";
pub const CHECKPOINT_FILE: &str = "checkpoint.mpck";
pub const LOSS_FILE: &str = "loss.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub weights: LossWeights,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Frames per training window, cropped at random from each clip.
    pub window: usize,
    /// Steps between checkpoints written during [`train`]; 0 writes only the last.
    pub checkpoint_every: u64,
    /// Train on per-column standardized features.
    pub normalize: bool,
    pub std_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 32,
            steps: 5000,
            weights: LossWeights::default(),
            clip_norm: 1.0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            window: 60,
            checkpoint_every: 1000,
            normalize: true,
            std_floor: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub recon: f64,
    pub geo: f64,
    pub foot: f64,
    pub total: f64,
    pub grad_norm: f64,
}

impl LossRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
            self.step, self.recon, self.geo, self.foot, self.total, self.grad_norm
        )
    }
}

/// Batch-mean losses of the model on clean clips `x0` (model space) noised
/// to steps `ts` with noise `eps`, and the parameter gradient of the mean
/// weighted total when `want_grads`.
#[allow(clippy::too_many_arguments)]
pub fn training_losses(
    model: &Denoiser<f32>,
    schedule: &NoiseSchedule,
    skel: &SkeletonSpec,
    stats: &FeatureStats,
    x0: &[Array2<f64>],
    ts: &[usize],
    eps: &[Array2<f64>],
    weights: &LossWeights,
    want_grads: bool,
) -> Result<(ClipLosses, Option<Vec<f32>>), DiffusionError> {
    let b = x0.len();
    if b == 0 || ts.len() != b || eps.len() != b {
        return Err(DiffusionError::InvalidConfig(format!(
            "batch of {b} clips with {} steps and {} noise draws",
            ts.len(),
            eps.len()
        )));
    }
    let n = x0[0].nrows();
    let noised = x0
        .iter()
        .zip(ts)
        .zip(eps)
        .map(|((x, &t), e)| {
            if x.dim() != x0[0].dim() {
                return Err(DiffusionError::InvalidConfig("clips in a batch must share a shape".into()));
            }
            Ok(q_sample(schedule, x.view(), t, e.view())?.mapv(|v| v as f32))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let views: Vec<_> = noised.iter().map(|a| a.view()).collect();
    let stacked = concatenate(Axis(0), &views).expect("equal widths");
    let (pred, cache) = model.forward_batch(stacked.view(), b, ts, want_grads)?;
    let per_clip: Vec<(ClipLosses, Option<Array2<f64>>)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let hat = pred.slice(s![i * n..(i + 1) * n, ..]).mapv(f64::from);
            clip_losses(skel, stats, x0[i].view(), hat.view(), weights, want_grads)
        })
        .collect::<Result<_, _>>()?;
    let mut mean = ClipLosses::default();
    for (l, _) in &per_clip {
        mean.recon += l.recon / b as f64;
        mean.geo += l.geo / b as f64;
        mean.foot += l.foot / b as f64;
        mean.total += l.total / b as f64;
    }
    let grads = match cache {
        Some(cache) => {
            let mut dy = Array2::<f32>::zeros(pred.dim());
            for (i, (_, g)) in per_clip.iter().enumerate() {
                let g = g.as_ref().expect("requested");
                dy.slice_mut(s![i * n..(i + 1) * n, ..])
                    .assign(&g.mapv(|v| (v / b as f64) as f32));
            }
            let mut grads = vec![0f32; model.param_count()];
            model.backward(&cache, dy.view(), Some(&mut grads));
            Some(grads)
        }
        None => None,
    };
    Ok((mean, grads))
}

/// Decoupled-weight-decay Adam training state over a fixed clip set.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Denoiser<f32>,
    pub schedule: NoiseSchedule,
    pub stats: FeatureStats,
    pub step: u64,
    skel: SkeletonSpec,
    clips: Vec<Array2<f64>>,
    m: Vec<f32>,
    v: Vec<f32>,
    decay: Vec<bool>,
}

impl Trainer {
    pub fn skeleton(&self) -> &SkeletonSpec {
        &self.skel
    }

    /// `clips` are raw feature matrices with at least `config.window` frames.
    pub fn new(
        config: TrainConfig,
        skel: SkeletonSpec,
        schedule: NoiseSchedule,
        clips: &[Array2<f64>],
        model: Denoiser<f32>,
    ) -> Result<Self, DiffusionError> {
        let d = model.config.input_dim;
        let stats = if config.normalize {
            FeatureStats::from_clips(clips, config.std_floor)
        } else {
            FeatureStats::identity(d)
        };
        Self::with_state(config, skel, schedule, stats, clips, model, None)
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(
        config: TrainConfig,
        skel: SkeletonSpec,
        clips: &[Array2<f64>],
        checkpoint: Checkpoint,
    ) -> Result<Self, DiffusionError> {
        let meta = ModelMeta::from_json(&checkpoint.meta)?;
        let schedule = meta.schedule()?;
        Self::with_state(config, skel, schedule, meta.stats, clips, checkpoint.model, checkpoint.train)
    }

    fn with_state(
        config: TrainConfig,
        skel: SkeletonSpec,
        schedule: NoiseSchedule,
        stats: FeatureStats,
        clips: &[Array2<f64>],
        model: Denoiser<f32>,
        state: Option<TrainState>,
    ) -> Result<Self, DiffusionError> {
        let bad = |m: String| Err(DiffusionError::InvalidConfig(m));
        if config.batch_size == 0 || config.window < 2 {
            return bad(format!("batch {} / window {}", config.batch_size, config.window));
        }
        if config.window > model.config.max_len {
            return bad(format!("window {} exceeds model max_len {}", config.window, model.config.max_len));
        }
        if clips.is_empty() {
            return bad("no training clips".into());
        }
        let d = model.config.input_dim;
        if stats.dim() != d {
            return bad(format!("feature statistics for dim {}, model expects {d}", stats.dim()));
        }
        if let Some(c) = clips.iter().find(|c| c.ncols() != d || c.nrows() < config.window) {
            return bad(format!("clip shaped {:?} for window {} and dim {d}", c.dim(), config.window));
        }
        let clips = clips.iter().map(|c| stats.normalize(c.view())).collect();
        let n = model.param_count();
        let (step, m, v) = match state {
            Some(s) => (s.step, s.m, s.v),
            None => (0, vec![0.0; n], vec![0.0; n]),
        };
        let mut decay = vec![false; n];
        for e in model.layout.entries.iter().filter(|e| e.name.contains(".w")) {
            decay[e.offset..e.offset + e.len()].fill(true);
        }
        Ok(Trainer {
            config,
            model,
            schedule,
            stats,
            step,
            skel,
            clips,
            m,
            v,
            decay,
        })
    }

    pub fn meta(&self) -> ModelMeta {
        ModelMeta {
            steps: self.schedule.steps,
            schedule: self.schedule.kind,
            stats: self.stats.clone(),
            skeleton_hash: format!("{:016x}", self.skel.hash()),
            frames: self.config.window,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            meta: self.meta().to_json(),
            train: Some(TrainState {
                step: self.step,
                m: self.m.clone(),
                v: self.v.clone(),
            }),
        }
    }

    /// Batch for step `step`: clip windows, diffusion steps and noise, all
    /// drawn from a stream keyed by the step so resumed runs replay exactly.
    fn draw_batch(&self, step: u64) -> (Vec<Array2<f64>>, Vec<usize>, Vec<Array2<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step);
        let w = self.config.window;
        let mut x0 = Vec::with_capacity(self.config.batch_size);
        let mut ts = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let clip = &self.clips[rng.gen_range(0..self.clips.len())];
            let off = rng.gen_range(0..=clip.nrows() - w);
            x0.push(clip.slice(s![off..off + w, ..]).to_owned());
            ts.push(rng.gen_range(1..=self.schedule.steps));
        }
        let d = self.model.config.input_dim;
        let eps = (0..self.config.batch_size)
            .map(|_| Array2::from_shape_fn((w, d), |_| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        (x0, ts, eps)
    }

    /// One optimizer step.
    pub fn step(&mut self) -> Result<LossRecord, DiffusionError> {
        let step = self.step;
        let (x0, ts, eps) = self.draw_batch(step);
        let (losses, grads) = training_losses(
            &self.model,
            &self.schedule,
            &self.skel,
            &self.stats,
            &x0,
            &ts,
            &eps,
            &self.config.weights,
            true,
        )?;
        let mut grads = grads.expect("requested");
        let norm = grads.iter().map(|g| f64::from(*g).powi(2)).sum::<f64>().sqrt();
        let record = LossRecord {
            step,
            recon: losses.recon,
            geo: losses.geo,
            foot: losses.foot,
            total: losses.total,
            grad_norm: norm,
        };
        if !losses.total.is_finite() || !norm.is_finite() {
            return Err(DiffusionError::NonFiniteLoss {
                step,
                detail: format!("{record:?}, diffusion steps {ts:?}, params finite: {}", self.model.all_finite()),
            });
        }
        if self.config.clip_norm > 0.0 && norm > self.config.clip_norm {
            let k = (self.config.clip_norm / norm) as f32;
            grads.iter_mut().for_each(|g| *g *= k);
        }
        self.adamw(&grads);
        self.step += 1;
        Ok(record)
    }

    fn adamw(&mut self, grads: &[f32]) {
        let c = &self.config;
        let t = (self.step + 1) as i32;
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let lr = c.lr as f32;
        let wd = (c.lr * c.weight_decay) as f32;
        let eps = c.eps as f32;
        for i in 0..grads.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / bc1 as f32;
            let v_hat = self.v[i] / bc2 as f32;
            let p = &mut self.model.params[i];
            if self.decay[i] {
                *p -= wd * *p;
            }
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Trains until `config.steps`, writing the loss curve to `out/loss.csv`
/// and checkpoints to `out/checkpoint.mpck`. A failing step leaves a
/// diagnostic dump next to them.
pub fn train(trainer: &mut Trainer, out: &Path) -> Result<Vec<LossRecord>, DiffusionError> {
    std::fs::create_dir_all(out)?;
    let csv_path = out.join(LOSS_FILE);
    let fresh = trainer.step == 0 || !csv_path.exists();
    let mut csv = std::fs::OpenOptions::new()
        .create(true)
        .append(!fresh)
        .write(true)
        .truncate(fresh)
        .open(&csv_path)?;
    if fresh {
        writeln!(csv, "{LOSS_CSV_HEADER}")?;
    }
    let mut records = Vec::new();
    let started = std::time::Instant::now();
    while trainer.step < trainer.config.steps {
        let record = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                let dump = serde_json::json!({
                    "error": e.to_string(),
                    "step": trainer.step,
                    "recent": records.iter().rev().take(20).collect::<Vec<&LossRecord>>(),
                });
                std::fs::write(out.join("nonfinite_dump.json"), serde_json::to_string_pretty(&dump)?)?;
                return Err(e);
            }
        };
        writeln!(csv, "{}", record.csv_line())?;
        if record.step % 100 == 0 {
            log::info!(
                "step {} recon {:.5} geo {:.5} foot {:.5} ({:.1}s)",
                record.step,
                record.recon,
                record.geo,
                record.foot,
                started.elapsed().as_secs_f64()
            );
        }
        records.push(record);
        let every = trainer.config.checkpoint_every;
        if every > 0 && trainer.step % every == 0 && trainer.step < trainer.config.steps {
            trainer.checkpoint().save(&out.join(CHECKPOINT_FILE))?;
        }
    }
    csv.flush()?;
    trainer.checkpoint().save(&out.join(CHECKPOINT_FILE))?;
    Ok(records)
}
