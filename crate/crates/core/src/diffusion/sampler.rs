use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DiffusionError, NoiseSchedule};
use crate::denoiser::{Cache, Denoiser, Real};

pub const DEFAULT_DDIM_STEPS: usize = 10;

/// `count + 1` uniformly spaced indices from `T` down to 0.
pub fn uniform_steps(schedule: &NoiseSchedule, count: usize) -> Result<Vec<usize>, DiffusionError> {
    if count == 0 || count > schedule.steps {
        return Err(DiffusionError::BadStepList(format!(
            "{count} steps requested for a {}-step schedule",
            schedule.steps
        )));
    }
    Ok((0..=count)
        .rev()
        .map(|k| ((schedule.steps * k) as f64 / count as f64).round() as usize)
        .collect())
}

fn check_steps(schedule: &NoiseSchedule, steps: &[usize]) -> Result<(), DiffusionError> {
    let bad = |m: String| Err(DiffusionError::BadStepList(m));
    if steps.len() < 2 {
        return bad(format!("need at least two indices, got {steps:?}"));
    }
    if steps[0] > schedule.steps {
        return bad(format!("first index {} exceeds T = {}", steps[0], schedule.steps));
    }
    if steps.last() != Some(&0) {
        return bad("list must end at 0".into());
    }
    if steps.windows(2).any(|w| w[1] >= w[0]) {
        return bad(format!("indices not strictly decreasing: {steps:?}"));
    }
    Ok(())
}

/// Coefficients of the deterministic update
/// `X_{t'} = (a − b·c)·X̂₀ + b·X_t` with `a = √ᾱ_{t'}`, `c = √ᾱ_t`,
/// `b = √(1−ᾱ_{t'}) / √(1−ᾱ_t)`.
fn ddim_coefs(schedule: &NoiseSchedule, t: usize, t_next: usize) -> (f64, f64) {
    let a = schedule.alpha_bar[t_next].sqrt();
    let c = schedule.alpha_bar[t].sqrt();
    let b = ((1.0 - schedule.alpha_bar[t_next]) / (1.0 - schedule.alpha_bar[t])).sqrt();
    (a - b * c, b)
}

/// One deterministic DDIM update from `t` to `t_next` given the prediction.
pub fn ddim_step<F: Real>(
    schedule: &NoiseSchedule,
    x_t: ArrayView2<F>,
    x0_hat: ArrayView2<F>,
    t: usize,
    t_next: usize,
) -> Array2<F> {
    let (p, b) = ddim_coefs(schedule, t, t_next);
    let (p, b) = (F::of(p), F::of(b));
    let mut out = x0_hat.mapv(|v| v * p);
    out.scaled_add(b, &x_t);
    out
}

/// DDIM update with stochasticity `eta` (0 = deterministic, 1 = the
/// ancestral posterior variance) and explicit noise.
pub fn ddim_step_eta(
    schedule: &NoiseSchedule,
    x_t: ArrayView2<f64>,
    x0_hat: ArrayView2<f64>,
    t: usize,
    t_next: usize,
    eta: f64,
    noise: ArrayView2<f64>,
) -> Array2<f64> {
    let ab = schedule.alpha_bar[t];
    let ab_next = schedule.alpha_bar[t_next];
    let sigma = eta * ((1.0 - ab_next) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_next).max(0.0).sqrt();
    let eps_hat = (&x_t - &x0_hat.mapv(|v| v * ab.sqrt())) / (1.0 - ab).sqrt();
    let dir = (1.0 - ab_next - sigma * sigma).max(0.0).sqrt();
    x0_hat.mapv(|v| v * ab_next.sqrt()) + eps_hat * dir + &noise.mapv(|v| v * sigma)
}

/// One ancestral step `t → t−1`: the Gaussian posterior mean given the
/// prediction plus posterior-variance noise (none at `t = 1`).
pub fn ancestral_step<F: Real>(
    model: &Denoiser<F>,
    schedule: &NoiseSchedule,
    x_t: ArrayView2<F>,
    t: usize,
    noise: ArrayView2<F>,
) -> Result<Array2<F>, DiffusionError> {
    if t == 0 || t > schedule.steps {
        return Err(DiffusionError::StepOutOfRange { t, max: schedule.steps });
    }
    let x0_hat = model.forward(x_t, t)?;
    let ab = schedule.alpha_bar[t];
    let ab_prev = schedule.alpha_bar[t - 1];
    let beta = schedule.beta[t];
    let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
    let ct = schedule.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    let var = if t == 1 { 0.0 } else { beta * (1.0 - ab_prev) / (1.0 - ab) };
    let mut out = x0_hat.mapv(|v| v * F::of(c0));
    out.scaled_add(F::of(ct), &x_t);
    if var > 0.0 {
        out.scaled_add(F::of(var.sqrt()), &noise);
    }
    Ok(out)
}

/// Activations of a deterministic sampling chain, for [`ode_backward`].
pub struct OdeTrace<F> {
    steps: Vec<usize>,
    caches: Vec<Cache<F>>,
}

/// Deterministic DDIM chain from `x_T` along `steps` (strictly decreasing,
/// ending at 0).
pub fn ode_sample<F: Real>(
    model: &Denoiser<F>,
    schedule: &NoiseSchedule,
    x_t: ArrayView2<F>,
    steps: &[usize],
) -> Result<Array2<F>, DiffusionError> {
    check_steps(schedule, steps)?;
    let mut x = x_t.to_owned();
    for w in steps.windows(2) {
        let x0_hat = model.forward(x.view(), w[0])?;
        x = ddim_step(schedule, x.view(), x0_hat.view(), w[0], w[1]);
    }
    Ok(x)
}

/// [`ode_sample`] keeping every step's activations.
pub fn ode_sample_traced<F: Real>(
    model: &Denoiser<F>,
    schedule: &NoiseSchedule,
    x_t: ArrayView2<F>,
    steps: &[usize],
) -> Result<(Array2<F>, OdeTrace<F>), DiffusionError> {
    check_steps(schedule, steps)?;
    let mut x = x_t.to_owned();
    let mut caches = Vec::with_capacity(steps.len() - 1);
    for w in steps.windows(2) {
        let (x0_hat, cache) = model.forward_cached(x.view(), w[0])?;
        caches.push(cache);
        x = ddim_step(schedule, x.view(), x0_hat.view(), w[0], w[1]);
    }
    Ok((
        x,
        OdeTrace {
            steps: steps.to_vec(),
            caches,
        },
    ))
}

/// Gradient w.r.t. `x_T` of a scalar whose gradient w.r.t. the chain's
/// output is `d_out`.
pub fn ode_backward<F: Real>(
    model: &Denoiser<F>,
    schedule: &NoiseSchedule,
    trace: &OdeTrace<F>,
    d_out: ArrayView2<F>,
) -> Array2<F> {
    let mut g = d_out.to_owned();
    for (w, cache) in trace.steps.windows(2).zip(&trace.caches).rev() {
        let (p, b) = ddim_coefs(schedule, w[0], w[1]);
        let through = model.backward(cache, g.mapv(|v| v * F::of(p)).view(), None);
        g.mapv_inplace(|v| v * F::of(b));
        g += &through;
    }
    g
}

/// Draws `x_T` from `seed` and denoises it: with `ddim_steps` along a
/// uniform deterministic chain, otherwise with the full ancestral chain.
pub fn sample<F: Real>(
    model: &Denoiser<F>,
    schedule: &NoiseSchedule,
    frames: usize,
    seed: u64,
    ddim_steps: Option<usize>,
) -> Result<Array2<F>, DiffusionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.config.input_dim;
    let draw = |rng: &mut ChaCha8Rng| {
        Array2::from_shape_fn((frames, d), |_| F::of(StandardNormal.sample(rng)))
    };
    let x_t = draw(&mut rng);
    match ddim_steps {
        Some(k) => ode_sample(model, schedule, x_t.view(), &uniform_steps(schedule, k)?),
        None => {
            let mut x = x_t;
            for t in (1..=schedule.steps).rev() {
                let noise = draw(&mut rng);
                x = ancestral_step(model, schedule, x.view(), t, noise.view())?;
            }
            Ok(x)
        }
    }
}
