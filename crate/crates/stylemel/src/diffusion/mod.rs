//! Gaussian diffusion on mel-spectrograms: the noising process, the noise
//! prediction loss, the reverse (denoising) step, and the shallow sampler
//! that starts the reverse chain from the decoder output at step S instead
//! of pure noise at step T.

pub mod denoiser;

pub use denoiser::{Denoiser, DenoiserIds};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{mse, Tensor};

/// i.i.d. standard normal draws.
pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Variance schedule β₁..β_T with the derived αₜ, ᾱₜ and posterior σₜ.
///
/// Steps are 1-based; `alpha_bar(0)` is defined as 1.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    total_steps: usize,
    shallow_steps: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear β interpolation over `total` steps. `shallow` is the reverse
    /// start step (0 disables denoising entirely).
    pub fn new(total: usize, shallow: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if total == 0 {
            return Err(Error::InvalidArgument {
                op: "make_schedule",
                msg: "need at least one diffusion step".into(),
            });
        }
        if shallow > total {
            return Err(Error::InvalidArgument {
                op: "make_schedule",
                msg: format!("shallow start {shallow} exceeds total steps {total}"),
            });
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::InvalidArgument {
                op: "make_schedule",
                msg: format!("need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"),
            });
        }
        let betas: Vec<f64> = (0..total)
            .map(|i| {
                if total == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (total - 1) as f64
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(total);
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        // posterior variance σₜ² = (1-ᾱₜ₋₁)/(1-ᾱₜ) · βₜ; σ₁ = 0
        let sigmas: Vec<f64> = (0..total)
            .map(|i| {
                let ab_prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                ((1.0 - ab_prev) / (1.0 - alpha_bars[i]) * betas[i]).sqrt()
            })
            .collect();
        Ok(DiffusionSchedule {
            total_steps: total,
            shallow_steps: shallow,
            betas,
            alphas,
            alpha_bars,
            sigmas,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn shallow_steps(&self) -> usize {
        self.shallow_steps
    }

    fn check_step(&self, t: usize, op: &'static str, hi: usize) -> Result<()> {
        if t < 1 || t > hi {
            return Err(Error::InvalidArgument {
                op,
                msg: format!("step {t} outside [1, {hi}]"),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product ᾱₜ; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }
}

/// Closed-form forward noising: `mₜ = √ᾱₜ·m₀ + √(1-ᾱₜ)·ε`.
pub fn q_sample(m0: &Tensor, t: usize, eps: &Tensor, sched: &DiffusionSchedule) -> Result<Tensor> {
    sched.check_step(t, "q_sample", sched.total_steps)?;
    let ab = sched.alpha_bar(t);
    m0.scale(ab.sqrt()).add(&eps.scale((1.0 - ab).sqrt()))
}

/// One reverse step:
/// `m̃ₜ₋₁ = (m̃ₜ - (1-αₜ)/√(1-ᾱₜ)·ε̂) / √αₜ + σₜ·z`.
///
/// Valid for `1 <= t <= shallow_steps`; σ₁ is zero so `z` never contributes
/// at the final step.
pub fn reverse_step(
    mt: &[f64],
    eps_hat: &[f64],
    t: usize,
    z: &[f64],
    sched: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    sched.check_step(t, "reverse_step", sched.shallow_steps)?;
    if mt.len() != eps_hat.len() || mt.len() != z.len() {
        return Err(Error::ShapeMismatch {
            op: "reverse_step",
            lhs: vec![mt.len()],
            rhs: vec![eps_hat.len().max(z.len())],
        });
    }
    let alpha = sched.alpha(t);
    let coeff = (1.0 - alpha) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let sigma = sched.sigma(t);
    Ok(mt
        .iter()
        .zip(eps_hat)
        .zip(z)
        .map(|((m, e), zz)| (m - coeff * e) * inv_sqrt_alpha + sigma * zz)
        .collect())
}

/// Run the reverse chain from step S down to 1, starting at the decoder
/// output (optionally re-noised to q(x_S | decoder output) when
/// `noise_start` is set). `predict` maps the current mel and step index to
/// the predicted noise. With `shallow_steps == 0` the input is returned
/// unchanged.
pub fn shallow_sample<F>(
    decoder_out: &[f64],
    sched: &DiffusionSchedule,
    rng: &mut ChaCha8Rng,
    noise_start: bool,
    mut predict: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], usize) -> Result<Vec<f64>>,
{
    let s = sched.shallow_steps;
    let mut m = decoder_out.to_vec();
    if s == 0 {
        return Ok(m);
    }
    if noise_start {
        let ab = sched.alpha_bar(s);
        let eps = gaussian_vec(rng, m.len());
        for (v, e) in m.iter_mut().zip(&eps) {
            *v = ab.sqrt() * *v + (1.0 - ab).sqrt() * e;
        }
    }
    for t in (1..=s).rev() {
        let eps_hat = predict(&m, t)?;
        let z = if t > 1 {
            gaussian_vec(rng, m.len())
        } else {
            vec![0.0; m.len()]
        };
        m = reverse_step(&m, &eps_hat, t, &z, sched)?;
    }
    Ok(m)
}

/// Noise-prediction objective for one sampled step; the per-step weight λₜ
/// is one, reducing to plain MSE between sampled and predicted noise.
pub fn noise_prediction_loss(eps: &Tensor, eps_hat: &Tensor) -> Result<Tensor> {
    mse(eps, eps_hat)
}

/// Draw `t` uniformly from `[1, T]` and ε from N(0, I), noise `m0`, and
/// return the denoiser's prediction loss together with the drawn step.
pub fn diffusion_loss(
    denoiser: &Denoiser,
    m0: &Tensor,
    style: &Tensor,
    cond: &Tensor,
    sched: &DiffusionSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, usize)> {
    let t = rng.random_range(1..=sched.total_steps());
    let eps_data = gaussian_vec(rng, m0.numel());
    let eps = m0.tape().constant(eps_data, m0.shape());
    let mt = q_sample(m0, t, &eps, sched)?;
    let eps_hat = denoiser.forward(&mt, style, cond, t)?;
    Ok((noise_prediction_loss(&eps, &eps_hat)?, t))
}

/// KL divergence between two scalar Gaussians. Degenerate (zero-variance)
/// pairs compare means: equal means give 0, otherwise infinity.
pub fn gaussian_kl(mu1: f64, var1: f64, mu2: f64, var2: f64) -> f64 {
    let d2 = (mu1 - mu2) * (mu1 - mu2);
    if var1 == 0.0 && var2 == 0.0 {
        return if d2 < 1e-18 { 0.0 } else { f64::INFINITY };
    }
    if var1 == 0.0 || var2 == 0.0 {
        return f64::INFINITY;
    }
    0.5 * (var2 / var1).ln() + (var1 + d2) / (2.0 * var2) - 0.5
}

/// Per-step KL between the true posterior `q(mₜ₋₁ | mₜ, m₀)` and the model
/// reverse Gaussian with mean derived from `predict` and matched variance
/// σₜ². Diagnostic only; index 0 of the result corresponds to t = 1.
pub fn elbo_terms<F>(
    m0: &[f64],
    sched: &DiffusionSchedule,
    rng: &mut ChaCha8Rng,
    mut predict: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], usize) -> Result<Vec<f64>>,
{
    let n = m0.len();
    let mut terms = Vec::with_capacity(sched.total_steps);
    for t in 1..=sched.total_steps {
        let ab = sched.alpha_bar(t);
        let ab_prev = sched.alpha_bar(t - 1);
        let beta = sched.beta(t);
        let alpha = sched.alpha(t);
        let eps = gaussian_vec(rng, n);
        let xt: Vec<f64> = m0
            .iter()
            .zip(&eps)
            .map(|(m, e)| ab.sqrt() * m + (1.0 - ab).sqrt() * e)
            .collect();
        let eps_hat = predict(&xt, t)?;

        let var_q = (1.0 - ab_prev) / (1.0 - ab) * beta;
        let coef0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let coeft = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let var_p = sched.sigma(t) * sched.sigma(t);

        let mut kl = 0.0;
        for i in 0..n {
            let mu_q = coef0 * m0[i] + coeft * xt[i];
            let mu_p = (xt[i] - beta / (1.0 - ab).sqrt() * eps_hat[i]) / alpha.sqrt();
            kl += gaussian_kl(mu_q, var_q, mu_p, var_p);
        }
        terms.push(kl / n as f64);
    }
    Ok(terms)
}
