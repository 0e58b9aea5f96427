//! Neural layers: Swish activation, the SwishRNN recurrent cell, multi-head
//! self-attention, layer normalization, 1-D convolution blocks, gated
//! activation, and style-adaptive instance normalization (SAIN).
//!
//! Each layer comes as a generic parameter struct `FooP<T>` instantiated with
//! [`ParamId`] (persistent registration) or [`Tensor`] (bound to the current
//! tape), so the same field layout serves storage, binding and checkpointing.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Variance floor applied before the square root, in both layer
/// normalization and SAIN. A floor (rather than an added term) keeps
/// normalized statistics exactly unit for any non-degenerate input while
/// still mapping constant channels to the bias.
pub const NORM_EPS: f64 = 1e-5;

/// `swish(x) = sigmoid(alpha*x + beta) * x`, differentiable in all three.
pub fn swish(x: &Tensor, alpha: &Tensor, beta: &Tensor) -> Result<Tensor> {
    x.mul_scalar(alpha)?.add_scalar(beta)?.sigmoid().mul(x)
}

/// Swish with fixed alpha=1, beta=0 (no learnable slope).
pub fn silu(x: &Tensor) -> Result<Tensor> {
    x.sigmoid().mul(x)
}

/// `tanh(a) ⊙ sigmoid(b)`
pub fn gated_activation(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.tanh().mul(&b.sigmoid())
}

/// Inverted dropout; identity when `rate == 0` or no rng is supplied
/// (verification paths run with dropout disabled).
pub fn dropout(x: &Tensor, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
    let Some(rng) = rng else { return Ok(x.clone()) };
    if rate <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - rate;
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    let mask = x.tape().constant(mask, x.shape());
    x.mul(&mask)
}

// ── SwishRNN ─────────────────────────────────────────────────────────

/// SwishRNN cell parameters: two input projections, the sequential pooling
/// recurrence, a sigmoid gate, and one output projection.
#[derive(Debug, Clone)]
pub struct SwishRnnP<T> {
    pub w1: T,
    pub w2: T,
    pub w3: T,
    pub b_c: T,
    pub b_sigma: T,
    pub b_out: T,
    pub alpha: T,
    pub beta: T,
}

pub type SwishRnnIds = SwishRnnP<ParamId>;
pub type SwishRnn = SwishRnnP<Tensor>;

impl<T> SwishRnnP<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> SwishRnnP<U> {
        SwishRnnP {
            w1: f(&self.w1),
            w2: f(&self.w2),
            w3: f(&self.w3),
            b_c: f(&self.b_c),
            b_sigma: f(&self.b_sigma),
            b_out: f(&self.b_out),
            alpha: f(&self.alpha),
            beta: f(&self.beta),
        }
    }
}

impl SwishRnnIds {
    pub fn register(
        ps: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let std = 1.0 / (hidden as f64).sqrt();
        SwishRnnIds {
            w1: ps.register(
                format!("{prefix}.w1"),
                &[hidden, hidden],
                Init::Normal(std),
                rng,
            ),
            w2: ps.register(
                format!("{prefix}.w2"),
                &[hidden, hidden],
                Init::Normal(std),
                rng,
            ),
            w3: ps.register(
                format!("{prefix}.w3"),
                &[hidden, hidden],
                Init::Normal(std),
                rng,
            ),
            b_c: ps.register(format!("{prefix}.b_c"), &[hidden], Init::Zeros, rng),
            b_sigma: ps.register(format!("{prefix}.b_sigma"), &[hidden], Init::Zeros, rng),
            b_out: ps.register(format!("{prefix}.b_out"), &[hidden], Init::Zeros, rng),
            // learnable Swish slope, started at the plain silu point
            alpha: ps.register(format!("{prefix}.alpha"), &[1], Init::Const(1.0), rng),
            beta: ps.register(format!("{prefix}.beta"), &[1], Init::Zeros, rng),
        }
    }

    pub fn bind(&self, b: &Bound) -> SwishRnn {
        self.map(|&id| b.get(id).clone())
    }
}

/// The sequential pooling recurrence `c[i] = swish(c[i-1] - x1[i]) + x1[i]`
/// over the rows of `x1`, returning all states stacked as rows.
///
/// `c0` defaults to the zero vector. Exposed separately from the full cell so
/// the max-pooling limit behaviour can be observed directly.
pub fn swish_recurrence(
    x1: &Tensor,
    alpha: &Tensor,
    beta: &Tensor,
    c0: Option<&Tensor>,
) -> Result<Tensor> {
    let l = x1.shape()[0];
    let hidden = x1.shape()[1];
    let mut c = match c0 {
        Some(c0) => {
            if c0.shape() != [hidden] {
                return Err(Error::ShapeMismatch {
                    op: "swish_recurrence",
                    lhs: x1.shape().to_vec(),
                    rhs: c0.shape().to_vec(),
                });
            }
            c0.clone()
        }
        None => x1.tape().zeros(&[hidden]),
    };
    let mut states = Vec::with_capacity(l);
    for i in 0..l {
        let x1i = x1.row(i)?;
        c = swish(&c.sub(&x1i)?, alpha, beta)?.add(&x1i)?;
        states.push(c.clone());
    }
    Tensor::stack_rows(&states)
}

impl SwishRnn {
    /// Full cell: exactly two matmuls feed the recurrence, then the gated
    /// output projection `W3((C + b_c) ⊙ σ(X2 + b_σ)) + b_out`.
    pub fn forward(&self, x: &Tensor, c0: Option<&Tensor>) -> Result<Tensor> {
        let hidden = self.w1.shape()[0];
        if x.shape().len() != 2 || x.shape()[1] != hidden {
            return Err(Error::ShapeMismatch {
                op: "swishrnn",
                lhs: x.shape().to_vec(),
                rhs: self.w1.shape().to_vec(),
            });
        }
        let x1 = x.matmul(&self.w1)?;
        let x2 = x.matmul(&self.w2)?;
        let c = swish_recurrence(&x1, &self.alpha, &self.beta, c0)?;
        let gate = x2.add_row(&self.b_sigma)?.sigmoid();
        let pooled = c.add_row(&self.b_c)?.mul(&gate)?;
        pooled.matmul(&self.w3)?.add_row(&self.b_out)
    }
}

// ── Multi-head self-attention ────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct MhaP<T> {
    pub wq: T,
    pub wk: T,
    pub wv: T,
    pub wo: T,
    pub bq: T,
    pub bk: T,
    pub bv: T,
    pub bo: T,
    pub heads: usize,
}

pub type MhaIds = MhaP<ParamId>;
pub type Mha = MhaP<Tensor>;

impl<T> MhaP<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> MhaP<U> {
        MhaP {
            wq: f(&self.wq),
            wk: f(&self.wk),
            wv: f(&self.wv),
            wo: f(&self.wo),
            bq: f(&self.bq),
            bk: f(&self.bk),
            bv: f(&self.bv),
            bo: f(&self.bo),
            heads: self.heads,
        }
    }
}

impl MhaIds {
    pub fn register(
        ps: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(
            heads > 0 && hidden.is_multiple_of(heads),
            "hidden {hidden} not divisible by heads {heads}"
        );
        let std = 1.0 / (hidden as f64).sqrt();
        let mut w = |n: &str| {
            ps.register(
                format!("{prefix}.{n}"),
                &[hidden, hidden],
                Init::Normal(std),
                rng,
            )
        };
        let (wq, wk, wv, wo) = (w("wq"), w("wk"), w("wv"), w("wo"));
        let mut b = |n: &str| ps.register(format!("{prefix}.{n}"), &[hidden], Init::Zeros, rng);
        MhaIds {
            wq,
            wk,
            wv,
            wo,
            bq: b("bq"),
            bk: b("bk"),
            bv: b("bv"),
            bo: b("bo"),
            heads,
        }
    }

    pub fn bind(&self, b: &Bound) -> Mha {
        self.map(|&id| b.get(id).clone())
    }
}

impl Mha {
    pub fn forward(&self, x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
        Ok(self.forward_with_weights(x, mask)?.0)
    }

    /// Attention output plus the per-head weight matrices (rows sum to one
    /// over unmasked positions).
    pub fn forward_with_weights(
        &self,
        x: &Tensor,
        mask: Option<&[bool]>,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let l = x.shape()[0];
        let hidden = self.wq.shape()[0];
        if x.shape()[1] != hidden {
            return Err(Error::ShapeMismatch {
                op: "attention",
                lhs: x.shape().to_vec(),
                rhs: self.wq.shape().to_vec(),
            });
        }
        if let Some(m) = mask {
            if m.len() != l {
                return Err(Error::InvalidArgument {
                    op: "attention",
                    msg: format!("mask length {} != sequence length {}", m.len(), l),
                });
            }
        }
        // Masked key positions get a large negative score so softmax assigns
        // them exactly zero weight.
        let mask_bias = mask.map(|m| {
            let mut row = vec![0.0; l];
            for (j, &masked) in m.iter().enumerate() {
                if masked {
                    row[j] = -1e30;
                }
            }
            let mut full = Vec::with_capacity(l * l);
            for _ in 0..l {
                full.extend_from_slice(&row);
            }
            x.tape().constant(full, &[l, l])
        });

        let q = x.matmul(&self.wq)?.add_row(&self.bq)?;
        let k = x.matmul(&self.wk)?.add_row(&self.bk)?;
        let v = x.matmul(&self.wv)?.add_row(&self.bv)?;
        let head_dim = hidden / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();

        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = h * head_dim..(h + 1) * head_dim;
            let qh = q.slice_cols(cols.clone())?;
            let kh = k.slice_cols(cols.clone())?;
            let vh = v.slice_cols(cols)?;
            let mut scores = qh.matmul(&kh.transpose()?)?.scale(scale);
            if let Some(mb) = &mask_bias {
                scores = scores.add(mb)?;
            }
            let attn = scores.softmax_rows()?;
            outs.push(attn.matmul(&vh)?);
            weights.push(attn);
        }
        let out = Tensor::concat_cols(&outs)?
            .matmul(&self.wo)?
            .add_row(&self.bo)?;
        Ok((out, weights))
    }
}

// ── Layer normalization ──────────────────────────────────────────────

/// Per-row normalization without the affine part: each row is shifted to
/// mean zero and scaled to unit (population) variance.
pub fn layer_norm_core(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mu = x.mean_axis1()?;
    let inv = x.var_axis1()?.clamp_min(eps).sqrt().recip();
    x.add_col(&mu.scale(-1.0))?.mul_col(&inv)
}

#[derive(Debug, Clone)]
pub struct LayerNormP<T> {
    pub gain: T,
    pub bias: T,
}

pub type LayerNormIds = LayerNormP<ParamId>;
pub type LayerNorm = LayerNormP<Tensor>;

impl<T> LayerNormP<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> LayerNormP<U> {
        LayerNormP {
            gain: f(&self.gain),
            bias: f(&self.bias),
        }
    }
}

impl LayerNormIds {
    pub fn register(
        ps: &mut ParamStore,
        prefix: &str,
        channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        LayerNormIds {
            gain: ps.register(format!("{prefix}.gain"), &[channels], Init::Const(1.0), rng),
            bias: ps.register(format!("{prefix}.bias"), &[channels], Init::Zeros, rng),
        }
    }

    pub fn bind(&self, b: &Bound) -> LayerNorm {
        self.map(|&id| b.get(id).clone())
    }
}

impl LayerNorm {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm_core(x, NORM_EPS)?
            .mul_row(&self.gain)?
            .add_row(&self.bias)
    }
}

// ── Convolution layer ────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Conv1dP<T> {
    pub w: T,
    pub b: T,
}

pub type Conv1dIds = Conv1dP<ParamId>;
pub type Conv1d = Conv1dP<Tensor>;

impl<T> Conv1dP<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Conv1dP<U> {
        Conv1dP {
            w: f(&self.w),
            b: f(&self.b),
        }
    }
}

impl Conv1dIds {
    pub fn register(
        ps: &mut ParamStore,
        prefix: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(
            kernel % 2 == 1,
            "conv kernel must be odd for same-length padding"
        );
        let std = 1.0 / ((cin * kernel) as f64).sqrt();
        Conv1dIds {
            w: ps.register(
                format!("{prefix}.w"),
                &[cout, cin, kernel],
                Init::Normal(std),
                rng,
            ),
            b: ps.register(format!("{prefix}.b"), &[cout], Init::Zeros, rng),
        }
    }

    pub fn bind(&self, b: &Bound) -> Conv1d {
        self.map(|&id| b.get(id).clone())
    }
}

impl Conv1d {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv1d(&self.w, &self.b)
    }
}

// ── Style-adaptive instance normalization ────────────────────────────

/// SAIN projections: affine maps from the style embedding to a per-channel
/// gain `G(s)` and bias `B(s)`. Gain starts at one and bias at zero so an
/// untrained layer behaves as plain instance normalization.
#[derive(Debug, Clone)]
pub struct SainP<T> {
    pub gain_proj: T,
    pub gain_bias: T,
    pub bias_proj: T,
    pub bias_bias: T,
}

pub type SainIds = SainP<ParamId>;
pub type Sain = SainP<Tensor>;

impl<T> SainP<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> SainP<U> {
        SainP {
            gain_proj: f(&self.gain_proj),
            gain_bias: f(&self.gain_bias),
            bias_proj: f(&self.bias_proj),
            bias_bias: f(&self.bias_bias),
        }
    }
}

impl SainIds {
    pub fn register(
        ps: &mut ParamStore,
        prefix: &str,
        style_dim: usize,
        channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let std = 0.1 / (style_dim as f64).sqrt();
        SainIds {
            gain_proj: ps.register(
                format!("{prefix}.gain_proj"),
                &[style_dim, channels],
                Init::Normal(std),
                rng,
            ),
            gain_bias: ps.register(
                format!("{prefix}.gain_bias"),
                &[channels],
                Init::Const(1.0),
                rng,
            ),
            bias_proj: ps.register(
                format!("{prefix}.bias_proj"),
                &[style_dim, channels],
                Init::Normal(std),
                rng,
            ),
            bias_bias: ps.register(format!("{prefix}.bias_bias"), &[channels], Init::Zeros, rng),
        }
    }

    pub fn bind(&self, b: &Bound) -> Sain {
        self.map(|&id| b.get(id).clone())
    }
}

/// Instance-normalize `x` per channel along the frame axis, then apply an
/// explicit per-channel gain and bias. Statistics are those of this
/// utterance only; channels are independent.
pub fn sain_normalize(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mu = x.mean_axis0()?;
    let inv = x.var_axis0()?.clamp_min(NORM_EPS).sqrt().recip();
    let normed = x.add_row(&mu.scale(-1.0))?.mul_row(&inv)?;
    normed.mul_row(gain)?.add_row(bias)
}

impl Sain {
    /// Compute `G(s)` and `B(s)` for a style embedding `s`.
    pub fn style_gain_bias(&self, s: &Tensor) -> Result<(Tensor, Tensor)> {
        let channels = self.gain_bias.numel();
        let srow = s.reshape(&[1, s.numel()])?;
        let g = srow
            .matmul(&self.gain_proj)?
            .reshape(&[channels])?
            .add(&self.gain_bias)?;
        let b = srow
            .matmul(&self.bias_proj)?
            .reshape(&[channels])?
            .add(&self.bias_bias)?;
        Ok((g, b))
    }

    pub fn forward(&self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        let (g, b) = self.style_gain_bias(s)?;
        sain_normalize(x, &g, &b)
    }
}
