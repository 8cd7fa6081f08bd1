use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis, Zip};

use super::{Denoiser, DenoiserError, LayerIds, ParamLayout, Real};

const LN_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044715;

/// `table[pos, 2i] = sin(pos / 10000^(2i/dim))`, `table[pos, 2i+1] = cos(..)`.
pub(crate) fn sinusoid_table<F: Real>(len: usize, dim: usize) -> Array2<F> {
    let mut table = Array2::zeros((len, dim));
    for pos in 0..len {
        table.row_mut(pos).assign(&sinusoid(pos as f64, dim));
    }
    table
}

fn sinusoid<F: Real>(pos: f64, dim: usize) -> Array1<F> {
    let mut out = Array1::zeros(dim);
    for i in 0..dim / 2 {
        let freq = 10000f64.powf(-((2 * i) as f64) / dim as f64);
        out[2 * i] = F::of((pos * freq).sin());
        out[2 * i + 1] = F::of((pos * freq).cos());
    }
    out
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Inner `tanh` of the GELU approximation for every element, computed as
/// `1 − 2 / (e^{2y} + 1)` on a clamped argument so the loop stays
/// branch-free (`tanh(15)` is 1 to within 2e-13).
fn gelu_tanh<F: Real>(u: &Array2<F>) -> Array2<F> {
    let (k, c, lim) = (F::of(GELU_K), F::of(GELU_C), F::of(15.0));
    let two = F::of(2.0);
    let us = u.as_slice().expect("contiguous");
    let th: Vec<F> = us
        .iter()
        .map(|&x| {
            let y = (k * (x + c * x * x * x)).max(-lim).min(lim);
            F::one() - two / ((two * y).exp_fast() + F::one())
        })
        .collect();
    Array2::from_shape_vec(u.raw_dim(), th).expect("shape")
}

fn gelu<F: Real>(u: &Array2<F>, th: &Array2<F>) -> Array2<F> {
    let half = F::of(0.5);
    Zip::from(u).and(th).map_collect(|&u, &t| half * u * (F::one() + t))
}

fn gelu_grad<F: Real>(u: &Array2<F>, th: &Array2<F>, dg: &Array2<F>) -> Array2<F> {
    let (k, c3, half) = (F::of(GELU_K), F::of(3.0 * GELU_C), F::of(0.5));
    Zip::from(dg).and(u).and(th).map_collect(|&g, &u, &t| {
        g * (half * (F::one() + t) + half * u * (F::one() - t * t) * k * (F::one() + c3 * u * u))
    })
}

/// `x · w + b`.
fn linear<F: Real>(x: &ArrayView2<F>, w: ArrayView2<F>, b: ArrayView1<F>) -> Array2<F> {
    let bias = b.as_slice().expect("contiguous bias");
    let mut data = Vec::with_capacity(x.nrows() * bias.len());
    for _ in 0..x.nrows() {
        data.extend_from_slice(bias);
    }
    let mut out = Array2::from_shape_vec((x.nrows(), bias.len()), data).expect("shape");
    general_mat_mul(F::one(), x, &w, F::one(), &mut out);
    out
}

/// Accumulates weight/bias gradients of `x · w + b` and returns `d x`.
fn linear_backward<F: Real>(
    layout: &ParamLayout,
    params: &[F],
    grads: &mut Option<&mut [F]>,
    x: &ArrayView2<F>,
    w: usize,
    b: usize,
    dout: &ArrayView2<F>,
    need_input: bool,
) -> Option<Array2<F>> {
    if let Some(g) = grads.as_deref_mut() {
        general_mat_mul(F::one(), &x.t(), dout, F::one(), &mut layout.mat_mut(g, w));
        let mut gb = layout.vec_mut(g, b);
        gb += &dout.sum_axis(Axis(0));
    }
    need_input.then(|| {
        let weight = layout.mat(params, w);
        let mut dx = Array2::zeros((dout.nrows(), weight.nrows()));
        general_mat_mul(F::one(), dout, &weight.t(), F::zero(), &mut dx);
        dx
    })
}

#[derive(Debug, Clone)]
struct Norm<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

fn layer_norm<F: Real>(x: &Array2<F>, g: ArrayView1<F>, b: ArrayView1<F>) -> (Array2<F>, Norm<F>) {
    let cols = x.ncols();
    let d = F::of(cols as f64);
    let (g, b) = (g.as_slice().expect("contiguous"), b.as_slice().expect("contiguous"));
    let mut xhat = x.clone();
    let mut y = Array2::zeros(x.raw_dim());
    let mut rstd = Array1::zeros(x.nrows());
    let rows = xhat
        .as_slice_mut()
        .expect("contiguous")
        .chunks_exact_mut(cols)
        .zip(y.as_slice_mut().expect("contiguous").chunks_exact_mut(cols));
    for ((xr, yr), r) in rows.zip(rstd.iter_mut()) {
        let mean = xr.iter().copied().sum::<F>() / d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / d;
        let rs = F::one() / (var + F::of(LN_EPS)).sqrt();
        *r = rs;
        for k in 0..cols {
            let h = (xr[k] - mean) * rs;
            xr[k] = h;
            yr[k] = h * g[k] + b[k];
        }
    }
    (y, Norm { xhat, rstd })
}

fn layer_norm_backward<F: Real>(
    layout: &ParamLayout,
    params: &[F],
    grads: &mut Option<&mut [F]>,
    norm: &Norm<F>,
    g: usize,
    b: usize,
    dy: &Array2<F>,
) -> Array2<F> {
    if let Some(gr) = grads.as_deref_mut() {
        let mut gg = layout.vec_mut(gr, g);
        gg += &(dy * &norm.xhat).sum_axis(Axis(0));
        let mut gb = layout.vec_mut(gr, b);
        gb += &dy.sum_axis(Axis(0));
    }
    let gain = layout.vec(params, g);
    let dxhat = dy * &gain;
    let d = F::of(dy.ncols() as f64);
    let mut dx = Array2::zeros(dy.raw_dim());
    for ((mut out, dh), (xh, &rs)) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(norm.xhat.rows().into_iter().zip(norm.rstd.iter()))
    {
        let mean_dh = dh.sum() / d;
        let mean_dhx = dh.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<F>() / d;
        Zip::from(&mut out)
            .and(&dh)
            .and(&xh)
            .for_each(|o, &a, &x| *o = rs * (a - mean_dh - x * mean_dhx));
    }
    dx
}

#[derive(Debug, Clone)]
struct LayerCache<F> {
    ln1: Norm<F>,
    a: Array2<F>,
    qkv: Array2<F>,
    /// Attention weights, `(batch · heads · tokens) × tokens`.
    probs: Array2<F>,
    ctx: Array2<F>,
    ln2: Norm<F>,
    bn: Array2<F>,
    u: Array2<F>,
    th: Array2<F>,
    g: Array2<F>,
}

/// Activations kept by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct Cache<F> {
    batch: usize,
    frames: usize,
    x: Array2<F>,
    temb: Array2<F>,
    z1: Array2<F>,
    a1: Array2<F>,
    layers: Vec<LayerCache<F>>,
    top: Array2<F>,
}

impl<F: Real> Denoiser<F> {
    /// Predicts the clean `N × D` motion from `x` at diffusion step `t`.
    pub fn forward(&self, x: ArrayView2<F>, t: usize) -> Result<Array2<F>, DenoiserError> {
        Ok(self.forward_batch(x, 1, &[t], false)?.0)
    }

    /// Like [`Self::forward`] but keeps activations for [`Self::backward`].
    pub fn forward_cached(&self, x: ArrayView2<F>, t: usize) -> Result<(Array2<F>, Cache<F>), DenoiserError> {
        let (y, cache) = self.forward_batch(x, 1, &[t], true)?;
        Ok((y, cache.expect("cache requested")))
    }

    /// Runs `batch` equal-length clips stacked row-wise in `x`
    /// (`(batch · N) × D`), clip `b` at step `ts[b]`.
    pub fn forward_batch(
        &self,
        x: ArrayView2<F>,
        batch: usize,
        ts: &[usize],
        keep: bool,
    ) -> Result<(Array2<F>, Option<Cache<F>>), DenoiserError> {
        let c = &self.config;
        let lay = &self.layout;
        let p = &self.params[..];
        if batch == 0 || ts.len() != batch || x.nrows() % batch != 0 {
            return Err(DenoiserError::ShapeMismatch(format!(
                "{} rows for a batch of {batch} with {} steps",
                x.nrows(),
                ts.len()
            )));
        }
        let n = x.nrows() / batch;
        if n == 0 || n > c.max_len || x.ncols() != c.input_dim {
            return Err(DenoiserError::ShapeMismatch(format!(
                "clip of {n} × {} for a model of max length {} and input dim {}",
                x.ncols(),
                c.max_len,
                c.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DenoiserError::NonFiniteInput);
        }
        let d = c.d_model;
        let tokens = n + 1;
        let heads = c.heads;
        let dh = d / heads;
        let scale = F::of(1.0 / (dh as f64).sqrt());

        // step token
        let mut temb = Array2::zeros((batch, c.time_dim));
        for (b, &t) in ts.iter().enumerate() {
            temb.row_mut(b).assign(&sinusoid::<F>(t as f64, c.time_dim));
        }
        let z1 = linear(&temb.view(), lay.mat(p, lay.time_w1), lay.vec(p, lay.time_b1));
        let a1 = z1.mapv(|z| z * sigmoid(z));
        let tok = linear(&a1.view(), lay.mat(p, lay.time_w2), lay.vec(p, lay.time_b2));

        let h0 = linear(&x, lay.mat(p, lay.in_w), lay.vec(p, lay.in_b));
        let mut s = Array2::zeros((batch * tokens, d));
        for b in 0..batch {
            let mut block = s.slice_mut(s![b * tokens..(b + 1) * tokens, ..]);
            block.row_mut(0).assign(&tok.row(b));
            block.slice_mut(s![1.., ..]).assign(&h0.slice(s![b * n..(b + 1) * n, ..]));
            block += &self.positions.slice(s![..tokens, ..]);
        }

        let mut caches = Vec::with_capacity(if keep { c.layers } else { 0 });
        for ids in &lay.layers {
            let (a, ln1) = layer_norm(&s, lay.vec(p, ids.ln1_g), lay.vec(p, ids.ln1_b));
            let qkv = linear(&a.view(), lay.mat(p, ids.qkv_w), lay.vec(p, ids.qkv_b));
            let mut probs = Array2::zeros((batch * heads * tokens, tokens));
            let mut ctx = Array2::zeros((batch * tokens, d));
            for b in 0..batch {
                let rows = b * tokens..(b + 1) * tokens;
                for h in 0..heads {
                    let q = qkv.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                    let k = qkv.slice(s![rows.clone(), d + h * dh..d + (h + 1) * dh]);
                    let v = qkv.slice(s![rows.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh]);
                    let at = (b * heads + h) * tokens;
                    let mut pr = probs.slice_mut(s![at..at + tokens, ..]);
                    general_mat_mul(scale, &q, &k.t(), F::zero(), &mut pr);
                    softmax_rows(&mut pr);
                    let mut out = ctx.slice_mut(s![rows.clone(), h * dh..(h + 1) * dh]);
                    general_mat_mul(F::one(), &pr, &v, F::zero(), &mut out);
                }
            }
            s += &linear(&ctx.view(), lay.mat(p, ids.out_w), lay.vec(p, ids.out_b));
            let (bn, ln2) = layer_norm(&s, lay.vec(p, ids.ln2_g), lay.vec(p, ids.ln2_b));
            let u = linear(&bn.view(), lay.mat(p, ids.ff1_w), lay.vec(p, ids.ff1_b));
            let th = gelu_tanh(&u);
            let g = gelu(&u, &th);
            s += &linear(&g.view(), lay.mat(p, ids.ff2_w), lay.vec(p, ids.ff2_b));
            if keep {
                caches.push(LayerCache {
                    ln1,
                    a,
                    qkv,
                    probs,
                    ctx,
                    ln2,
                    bn,
                    u,
                    th,
                    g,
                });
            }
        }

        let mut top = Array2::zeros((batch * n, d));
        for b in 0..batch {
            top.slice_mut(s![b * n..(b + 1) * n, ..])
                .assign(&s.slice(s![b * tokens + 1..(b + 1) * tokens, ..]));
        }
        let y = linear(&top.view(), lay.mat(p, lay.head_w), lay.vec(p, lay.head_b));
        let cache = keep.then(|| Cache {
            batch,
            frames: n,
            x: x.to_owned(),
            temb,
            z1,
            a1,
            layers: caches,
            top,
        });
        Ok((y, cache))
    }

    /// Reverse pass: returns `∂ℓ/∂x` for upstream `dy = ∂ℓ/∂y` and, when
    /// `grads` is given, adds `∂ℓ/∂θ` into it (same layout as the params).
    pub fn backward(&self, cache: &Cache<F>, dy: ArrayView2<F>, mut grads: Option<&mut [F]>) -> Array2<F> {
        let c = &self.config;
        let lay = &self.layout;
        let p = &self.params[..];
        let (batch, n) = (cache.batch, cache.frames);
        assert_eq!(dy.dim(), (batch * n, c.input_dim), "upstream gradient shape");
        if let Some(g) = grads.as_deref() {
            assert_eq!(g.len(), p.len(), "gradient buffer length");
        }
        let d = c.d_model;
        let tokens = n + 1;
        let heads = c.heads;
        let dh = d / heads;
        let scale = F::of(1.0 / (dh as f64).sqrt());

        let dtop = linear_backward(lay, p, &mut grads, &cache.top.view(), lay.head_w, lay.head_b, &dy, true)
            .expect("input gradient");
        let mut ds = Array2::zeros((batch * tokens, d));
        for b in 0..batch {
            ds.slice_mut(s![b * tokens + 1..(b + 1) * tokens, ..])
                .assign(&dtop.slice(s![b * n..(b + 1) * n, ..]));
        }

        for (ids, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            let ids: &LayerIds = ids;
            // feed-forward branch
            let dg = linear_backward(lay, p, &mut grads, &lc.g.view(), ids.ff2_w, ids.ff2_b, &ds.view(), true)
                .expect("input gradient");
            let du = gelu_grad(&lc.u, &lc.th, &dg);
            let dbn = linear_backward(lay, p, &mut grads, &lc.bn.view(), ids.ff1_w, ids.ff1_b, &du.view(), true)
                .expect("input gradient");
            ds += &layer_norm_backward(lay, p, &mut grads, &lc.ln2, ids.ln2_g, ids.ln2_b, &dbn);

            // attention branch
            let dctx = linear_backward(lay, p, &mut grads, &lc.ctx.view(), ids.out_w, ids.out_b, &ds.view(), true)
                .expect("input gradient");
            let mut dqkv = Array2::zeros((batch * tokens, 3 * d));
            let mut dp = Array2::zeros((tokens, tokens));
            for b in 0..batch {
                let rows = b * tokens..(b + 1) * tokens;
                for h in 0..heads {
                    let at = (b * heads + h) * tokens;
                    let pr = lc.probs.slice(s![at..at + tokens, ..]);
                    let q = lc.qkv.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                    let k = lc.qkv.slice(s![rows.clone(), d + h * dh..d + (h + 1) * dh]);
                    let v = lc.qkv.slice(s![rows.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh]);
                    let dout = dctx.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                    general_mat_mul(F::one(), &dout, &v.t(), F::zero(), &mut dp);
                    {
                        let mut dv = dqkv.slice_mut(s![rows.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh]);
                        general_mat_mul(F::one(), &pr.t(), &dout, F::zero(), &mut dv);
                    }
                    // softmax backward in place: dS = P ∘ (dP − rowsum(P ∘ dP))
                    for (mut row, prow) in dp.rows_mut().into_iter().zip(pr.rows()) {
                        let dot = row.iter().zip(prow.iter()).map(|(&a, &b)| a * b).sum::<F>();
                        Zip::from(&mut row).and(&prow).for_each(|g, &pv| *g = pv * (*g - dot));
                    }
                    {
                        let mut dq = dqkv.slice_mut(s![rows.clone(), h * dh..(h + 1) * dh]);
                        general_mat_mul(scale, &dp, &k, F::zero(), &mut dq);
                    }
                    let mut dk = dqkv.slice_mut(s![rows.clone(), d + h * dh..d + (h + 1) * dh]);
                    general_mat_mul(scale, &dp.t(), &q, F::zero(), &mut dk);
                }
            }
            let da = linear_backward(lay, p, &mut grads, &lc.a.view(), ids.qkv_w, ids.qkv_b, &dqkv.view(), true)
                .expect("input gradient");
            ds += &layer_norm_backward(lay, p, &mut grads, &lc.ln1, ids.ln1_g, ids.ln1_b, &da);
        }

        let mut dh0 = Array2::zeros((batch * n, d));
        let mut dtok = Array2::zeros((batch, d));
        for b in 0..batch {
            dh0.slice_mut(s![b * n..(b + 1) * n, ..])
                .assign(&ds.slice(s![b * tokens + 1..(b + 1) * tokens, ..]));
            dtok.row_mut(b).assign(&ds.row(b * tokens));
        }
        let dx = linear_backward(lay, p, &mut grads, &cache.x.view(), lay.in_w, lay.in_b, &dh0.view(), true)
            .expect("input gradient");
        if grads.is_some() {
            let da1 = linear_backward(lay, p, &mut grads, &cache.a1.view(), lay.time_w2, lay.time_b2, &dtok.view(), true)
                .expect("input gradient");
            let dz1 = Zip::from(&da1).and(&cache.z1).map_collect(|&g, &z| {
                let sg = sigmoid(z);
                g * sg * (F::one() + z * (F::one() - sg))
            });
            linear_backward(lay, p, &mut grads, &cache.temb.view(), lay.time_w1, lay.time_b1, &dz1.view(), false);
        }
        dx
    }
}

fn softmax_rows<F: Real>(m: &mut ArrayViewMut2<F>) {
    for mut row in m.rows_mut() {
        let max = row.fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp_fast());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}
