//! Phoneme-to-frame alignment: skip selection of prosodic boundaries,
//! duration-based length regulation, and the variance (duration / pitch /
//! pitch-range) predictors with their embedding adders.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{silu, Conv1dIds, Conv1dP, LayerNormIds, LayerNormP};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Phonemes interleaved with prosodic-boundary symbols.
///
/// `symbols.len()` is the full sequence length; the phoneme count excludes
/// boundary positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolSequence {
    pub symbols: Vec<u32>,
    pub is_boundary: Vec<bool>,
}

impl SymbolSequence {
    pub fn new(symbols: Vec<u32>, is_boundary: Vec<bool>) -> Result<Self> {
        if symbols.len() != is_boundary.len() {
            return Err(Error::InvalidArgument {
                op: "symbol_sequence",
                msg: format!(
                    "{} symbols but {} boundary flags",
                    symbols.len(),
                    is_boundary.len()
                ),
            });
        }
        if !is_boundary.iter().any(|b| !b) {
            return Err(Error::InvalidArgument {
                op: "symbol_sequence",
                msg: "sequence needs at least one non-boundary symbol".into(),
            });
        }
        Ok(SymbolSequence {
            symbols,
            is_boundary,
        })
    }

    /// Full length including boundary symbols.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Number of phonemes (non-boundary symbols).
    pub fn phoneme_count(&self) -> usize {
        self.is_boundary.iter().filter(|b| !**b).count()
    }

    /// Indices of the non-boundary positions, in order.
    pub fn phoneme_indices(&self) -> Vec<usize> {
        self.is_boundary
            .iter()
            .enumerate()
            .filter_map(|(i, b)| (!b).then_some(i))
            .collect()
    }
}

/// Keep exactly the non-boundary rows of `h`, order preserved.
pub fn skip_select(h: &Tensor, seq: &SymbolSequence) -> Result<Tensor> {
    if h.shape()[0] != seq.len() {
        return Err(Error::ShapeMismatch {
            op: "skip_select",
            lhs: h.shape().to_vec(),
            rhs: vec![seq.len()],
        });
    }
    let keep = seq.phoneme_indices();
    if keep.is_empty() {
        return Err(Error::InvalidArgument {
            op: "skip_select",
            msg: "all symbols are boundaries".into(),
        });
    }
    h.select_rows(&keep)
}

/// Replicate row `i` of `h` `durations[i]` times; output has `Σ durations`
/// rows. Zero-duration entries contribute no frames.
pub fn length_regulate(h: &Tensor, durations: &[u32]) -> Result<Tensor> {
    if h.shape()[0] != durations.len() {
        return Err(Error::ShapeMismatch {
            op: "length_regulate",
            lhs: h.shape().to_vec(),
            rhs: vec![durations.len()],
        });
    }
    let mut indices = Vec::with_capacity(durations.iter().map(|&d| d as usize).sum());
    for (i, &d) in durations.iter().enumerate() {
        for _ in 0..d {
            indices.push(i);
        }
    }
    if indices.is_empty() {
        return Err(Error::InvalidArgument {
            op: "length_regulate",
            msg: "total duration is zero".into(),
        });
    }
    h.select_rows(&indices)
}

/// Expand per-phoneme scalars to frame level with the same durations.
pub fn expand_scalars(values: &[f64], durations: &[u32]) -> Vec<f64> {
    let mut out = Vec::with_capacity(durations.iter().map(|&d| d as usize).sum());
    for (v, &d) in values.iter().zip(durations) {
        for _ in 0..d {
            out.push(*v);
        }
    }
    out
}

/// Round half-up, clamp at zero; a fully silent prediction gets one frame on
/// the first phoneme so the output is never empty.
pub fn quantize_durations(predicted: &[f64]) -> Vec<u32> {
    let mut out: Vec<u32> = predicted
        .iter()
        .map(|&d| ((d + 0.5).floor().max(0.0)) as u32)
        .collect();
    if out.iter().all(|&d| d == 0) {
        if let Some(first) = out.first_mut() {
            *first = 1;
        }
    }
    out
}

// ── Variance predictors ──────────────────────────────────────────────

/// Per-phoneme scalar regressor: two kernel-3 convolution layers with
/// activations and layer normalization, then a linear head.
#[derive(Debug, Clone)]
pub struct VariancePredictorP<T> {
    pub conv1: Conv1dP<T>,
    pub norm1: LayerNormP<T>,
    pub conv2: Conv1dP<T>,
    pub norm2: LayerNormP<T>,
    pub head_w: T,
    pub head_b: T,
}

pub type VariancePredictorIds = VariancePredictorP<ParamId>;
pub type VariancePredictor = VariancePredictorP<Tensor>;

impl<T> VariancePredictorP<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> VariancePredictorP<U> {
        VariancePredictorP {
            conv1: self.conv1.map(&mut f),
            norm1: self.norm1.map(&mut f),
            conv2: self.conv2.map(&mut f),
            norm2: self.norm2.map(&mut f),
            head_w: f(&self.head_w),
            head_b: f(&self.head_b),
        }
    }
}

impl VariancePredictorIds {
    pub fn register(
        ps: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        VariancePredictorIds {
            conv1: Conv1dIds::register(ps, &format!("{prefix}.conv1"), hidden, hidden, 3, rng),
            norm1: LayerNormIds::register(ps, &format!("{prefix}.norm1"), hidden, rng),
            conv2: Conv1dIds::register(ps, &format!("{prefix}.conv2"), hidden, hidden, 3, rng),
            norm2: LayerNormIds::register(ps, &format!("{prefix}.norm2"), hidden, rng),
            head_w: ps.register(
                format!("{prefix}.head_w"),
                &[hidden, 1],
                Init::Normal(1.0 / (hidden as f64).sqrt()),
                rng,
            ),
            head_b: ps.register(format!("{prefix}.head_b"), &[1], Init::Zeros, rng),
        }
    }

    pub fn bind(&self, b: &Bound) -> VariancePredictor {
        self.map(|&id| b.get(id).clone())
    }
}

impl VariancePredictor {
    /// `h` is phonemes×hidden; returns one scalar per phoneme.
    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        let n = h.shape()[0];
        let x = self.norm1.forward(&silu(&self.conv1.forward(h)?)?)?;
        let x = self.norm2.forward(&silu(&self.conv2.forward(&x)?)?)?;
        x.matmul(&self.head_w)?.add_row(&self.head_b)?.reshape(&[n])
    }
}

// ── Variance embedding adders ────────────────────────────────────────

/// Learned linear maps embedding the frame-level pitch and pitch-range
/// scalars into the hidden dimension.
#[derive(Debug, Clone)]
pub struct VarianceEmbedP<T> {
    pub pitch_w: T,
    pub range_w: T,
}

pub type VarianceEmbedIds = VarianceEmbedP<ParamId>;
pub type VarianceEmbed = VarianceEmbedP<Tensor>;

impl<T> VarianceEmbedP<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> VarianceEmbedP<U> {
        VarianceEmbedP {
            pitch_w: f(&self.pitch_w),
            range_w: f(&self.range_w),
        }
    }
}

impl VarianceEmbedIds {
    pub fn register(
        ps: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let std = 1.0 / (hidden as f64).sqrt();
        VarianceEmbedIds {
            pitch_w: ps.register(
                format!("{prefix}.pitch_w"),
                &[1, hidden],
                Init::Normal(std),
                rng,
            ),
            range_w: ps.register(
                format!("{prefix}.range_w"),
                &[1, hidden],
                Init::Normal(std),
                rng,
            ),
        }
    }

    pub fn bind(&self, b: &Bound) -> VarianceEmbed {
        self.map(|&id| b.get(id).clone())
    }
}

impl VarianceEmbed {
    /// `e + pitch⊗w_pitch + range⊗w_range + style + speaker`, all
    /// broadcast-added over the frame axis. `pitch`/`range` are frame-level
    /// `[T]` tensors; `style`/`speaker` are hidden-sized embedding vectors.
    pub fn forward(
        &self,
        e: &Tensor,
        pitch: &Tensor,
        range: &Tensor,
        style: &Tensor,
        speaker: &Tensor,
    ) -> Result<Tensor> {
        let frames = e.shape()[0];
        let pitch_emb = pitch.reshape(&[frames, 1])?.matmul(&self.pitch_w)?;
        let range_emb = range.reshape(&[frames, 1])?.matmul(&self.range_w)?;
        e.add(&pitch_emb)?
            .add(&range_emb)?
            .add_row(style)?
            .add_row(speaker)
    }
}
