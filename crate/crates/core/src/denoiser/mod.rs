//! Transformer denoiser predicting the clean motion from a noised one.
//!
//! The diffusion step enters as one extra token, built from a sinusoidal
//! embedding passed through a two-layer MLP and prepended to the projected
//! frames. Blocks are pre-norm self-attention + GELU feed-forward with
//! residuals; sinusoidal positions are added to every token. Gradients are
//! hand-derived; every forward can keep the activations needed for an exact
//! reverse pass.

mod checkpoint;
mod model;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, NdFloat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{Checkpoint, TrainState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::Cache;

#[derive(Debug, Error)]
pub enum DenoiserError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scalar type the model runs in: `f32` for training and optimization,
/// `f64` for gradient checks.
pub trait Real: NdFloat + Default + std::iter::Sum {
    fn of(x: f64) -> Self {
        Self::from(x).expect("representable")
    }
    fn into_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("finite")
    }
    /// `exp`, possibly through a cheaper approximation.
    fn exp_fast(self) -> Self {
        self.exp()
    }
}

impl Real for f32 {
    /// Range reduction to `2^n · e^r`, `|r| ≤ ln2/2`, with a degree-6
    /// polynomial for `e^r`; branch-free so loops over it vectorize.
    /// Relative error is a few ulp.
    fn exp_fast(self) -> f32 {
        const LOG2E: f32 = std::f32::consts::LOG2_E;
        const LN2_HI: f32 = 0.693_359_4;
        const LN2_LO: f32 = -2.121_944_4e-4;
        const ROUND: f32 = 12_582_912.0; // 1.5 · 2^23
        let x = self.max(-87.0).min(88.0);
        let z = x * LOG2E + ROUND;
        let n = z - ROUND;
        // the low mantissa bits of `z` hold `n` as an integer
        let ni = z.to_bits().wrapping_sub(ROUND.to_bits()).wrapping_add(127);
        let r = x - n * LN2_HI - n * LN2_LO;
        let p = 1.0
            + r * (1.0
                + r * (0.5 + r * (1.666_666_7e-1 + r * (4.166_666_8e-2 + r * (8.333_452e-3 + r * 1.388_889_2e-3)))));
        f32::from_bits(ni << 23) * p
    }
}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// Feature dimension D.
    pub input_dim: usize,
    /// Longest accepted sequence.
    pub max_len: usize,
    pub time_dim: usize,
}

impl DenoiserConfig {
    /// Laptop-scale configuration for a feature dimension.
    pub fn desk(input_dim: usize, max_len: usize) -> Self {
        DenoiserConfig {
            d_model: 128,
            layers: 4,
            heads: 4,
            ff_dim: 512,
            input_dim,
            max_len,
            time_dim: 128,
        }
    }

    pub fn validate(&self) -> Result<(), DenoiserError> {
        let bad = |m: String| Err(DenoiserError::InvalidConfig(m));
        if self.d_model == 0 || self.heads == 0 || self.input_dim == 0 || self.max_len == 0 || self.time_dim == 0 {
            return bad(format!("zero-sized dimension in {self:?}"));
        }
        if self.d_model % self.heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        if self.time_dim % 2 != 0 || self.d_model % 2 != 0 {
            return bad("sinusoidal embeddings need even widths".into());
        }
        if self.layers > 0 && self.ff_dim == 0 {
            return bad("ff_dim must be positive".into());
        }
        Ok(())
    }
}

/// One named tensor inside the flat parameter vector. Vectors are stored
/// as `1 × n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerIds {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub qkv_w: usize,
    pub qkv_b: usize,
    pub out_w: usize,
    pub out_b: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub ff1_w: usize,
    pub ff1_b: usize,
    pub ff2_w: usize,
    pub ff2_b: usize,
}

/// Where each tensor lives in the flat parameter vector.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub(crate) time_w1: usize,
    pub(crate) time_b1: usize,
    pub(crate) time_w2: usize,
    pub(crate) time_b2: usize,
    pub(crate) in_w: usize,
    pub(crate) in_b: usize,
    pub(crate) layers: Vec<LayerIds>,
    pub(crate) head_w: usize,
    pub(crate) head_b: usize,
    total: usize,
}

impl ParamLayout {
    pub fn new(c: &DenoiserConfig) -> Self {
        let mut entries: Vec<ParamEntry> = Vec::new();
        let mut total = 0;
        let mut add = |name: String, rows: usize, cols: usize| {
            entries.push(ParamEntry {
                name,
                rows,
                cols,
                offset: total,
            });
            total += rows * cols;
            entries.len() - 1
        };
        let d = c.d_model;
        let time_w1 = add("time.w1".into(), c.time_dim, d);
        let time_b1 = add("time.b1".into(), 1, d);
        let time_w2 = add("time.w2".into(), d, d);
        let time_b2 = add("time.b2".into(), 1, d);
        let in_w = add("input.w".into(), c.input_dim, d);
        let in_b = add("input.b".into(), 1, d);
        let layers = (0..c.layers)
            .map(|l| {
                let mut p = |n: &str, r: usize, k: usize| add(format!("layers.{l}.{n}"), r, k);
                LayerIds {
                    ln1_g: p("ln1.g", 1, d),
                    ln1_b: p("ln1.b", 1, d),
                    qkv_w: p("qkv.w", d, 3 * d),
                    qkv_b: p("qkv.b", 1, 3 * d),
                    out_w: p("attn_out.w", d, d),
                    out_b: p("attn_out.b", 1, d),
                    ln2_g: p("ln2.g", 1, d),
                    ln2_b: p("ln2.b", 1, d),
                    ff1_w: p("ff1.w", d, c.ff_dim),
                    ff1_b: p("ff1.b", 1, c.ff_dim),
                    ff2_w: p("ff2.w", c.ff_dim, d),
                    ff2_b: p("ff2.b", 1, d),
                }
            })
            .collect();
        let head_w = add("output.w".into(), d, c.input_dim);
        let head_b = add("output.b".into(), 1, c.input_dim);
        ParamLayout {
            entries,
            time_w1,
            time_b1,
            time_w2,
            time_b2,
            in_w,
            in_b,
            layers,
            head_w,
            head_b,
            total,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub(crate) fn mat<'a, F>(&self, params: &'a [F], id: usize) -> ArrayView2<'a, F> {
        let e = &self.entries[id];
        ArrayView2::from_shape((e.rows, e.cols), &params[e.offset..e.offset + e.len()]).expect("layout shape")
    }

    pub(crate) fn vec<'a, F>(&self, params: &'a [F], id: usize) -> ArrayView1<'a, F> {
        let e = &self.entries[id];
        ArrayView1::from(&params[e.offset..e.offset + e.len()])
    }

    pub(crate) fn mat_mut<'a, F>(&self, params: &'a mut [F], id: usize) -> ArrayViewMut2<'a, F> {
        let e = &self.entries[id];
        ArrayViewMut2::from_shape((e.rows, e.cols), &mut params[e.offset..e.offset + e.len()]).expect("layout shape")
    }

    pub(crate) fn vec_mut<'a, F>(&self, params: &'a mut [F], id: usize) -> ArrayViewMut1<'a, F> {
        let e = &self.entries[id];
        ArrayViewMut1::from(&mut params[e.offset..e.offset + e.len()])
    }
}

/// Closed-form trainable parameter count.
pub fn param_count_for(c: &DenoiserConfig) -> usize {
    let d = c.d_model;
    let time = c.time_dim * d + d + d * d + d;
    let input = c.input_dim * d + d;
    let layer = 2 * d + (3 * d * d + 3 * d) + (d * d + d) + 2 * d + (d * c.ff_dim + c.ff_dim) + (c.ff_dim * d + d);
    let output = d * c.input_dim + c.input_dim;
    time + input + c.layers * layer + output
}

/// Weights of a denoiser in scalar type `F`.
#[derive(Debug, Clone)]
pub struct Denoiser<F> {
    pub config: DenoiserConfig,
    pub layout: ParamLayout,
    pub params: Vec<F>,
    pub(crate) positions: ndarray::Array2<F>,
}

impl<F: Real> Denoiser<F> {
    /// Fan-in scaled uniform weights, zero biases, unit norm gains.
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self, DenoiserError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![F::zero(); layout.total()];
        for e in &layout.entries {
            let slot = &mut params[e.offset..e.offset + e.len()];
            if e.name.ends_with(".g") {
                slot.fill(F::one());
            } else if e.name.ends_with(".w") {
                let limit = (3.0 / e.rows as f64).sqrt();
                for v in slot.iter_mut() {
                    *v = F::of(rng.gen_range(-limit..limit));
                }
            }
        }
        Self::from_params(config, params)
    }

    pub fn from_params(config: DenoiserConfig, params: Vec<F>) -> Result<Self, DenoiserError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total() {
            return Err(DenoiserError::ShapeMismatch(format!(
                "{} parameters for a layout of {}",
                params.len(),
                layout.total()
            )));
        }
        let positions = model::sinusoid_table(config.max_len + 1, config.d_model);
        Ok(Denoiser {
            config,
            layout,
            params,
            positions,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Same weights in another scalar type.
    pub fn cast<G: Real>(&self) -> Denoiser<G> {
        Denoiser::from_params(self.config, self.params.iter().map(|v| G::of(v.into_f64())).collect())
            .expect("same config")
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    /// Zeroes the output projection so every prediction is zero.
    pub fn zero_output(&mut self) {
        for id in [self.layout.head_w, self.layout.head_b] {
            let e = &self.layout.entries[id];
            self.params[e.offset..e.offset + e.len()].fill(F::zero());
        }
    }
}
