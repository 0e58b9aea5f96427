//! The phoneme-level linguistic encoder (attention + SwishRNN blocks) and
//! the frame-level encoder (attention + convolution blocks with SAIN).
//!
//! Both stacks are post-norm: each sublayer output is added to its input and
//! then normalized — layer normalization at phoneme level, style-adaptive
//! instance normalization at frame level. Sinusoidal positions are added to
//! the inputs of both stacks.

use rand_chacha::ChaCha8Rng;

use crate::alignment::SymbolSequence;
use crate::error::{Error, Result};
use crate::layers::{
    dropout, silu, Conv1dIds, Conv1dP, LayerNormIds, LayerNormP, MhaIds, MhaP, SainIds, SainP,
    SwishRnnIds, SwishRnnP,
};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor};

/// Standard sinusoidal position table as a non-differentiable constant.
pub fn sinusoidal_positions(tape: &Tape, len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data[pos * dim + 2 * i] = (pos as f64 * freq).sin();
            if 2 * i + 1 < dim {
                data[pos * dim + 2 * i + 1] = (pos as f64 * freq).cos();
            }
        }
    }
    tape.constant(data, &[len, dim])
}

// ── Linguistic encoder ───────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct LingBlockP<T> {
    pub attn: MhaP<T>,
    pub norm1: LayerNormP<T>,
    pub rnn: SwishRnnP<T>,
    pub norm2: LayerNormP<T>,
}

impl<T> LingBlockP<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> LingBlockP<U> {
        LingBlockP {
            attn: self.attn.map(&mut f),
            norm1: self.norm1.map(&mut f),
            rnn: self.rnn.map(&mut f),
            norm2: self.norm2.map(&mut f),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinguisticEncoderIds {
    pub embed: ParamId,
    pub blocks: Vec<LingBlockP<ParamId>>,
    pub vocab: usize,
    pub hidden: usize,
}

impl LinguisticEncoderIds {
    pub fn register(
        ps: &mut ParamStore,
        prefix: &str,
        vocab: usize,
        hidden: usize,
        heads: usize,
        blocks: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let embed = ps.register(
            format!("{prefix}.embed"),
            &[vocab, hidden],
            Init::Normal(1.0 / (hidden as f64).sqrt()),
            rng,
        );
        let blocks = (0..blocks)
            .map(|i| {
                let p = format!("{prefix}.block{i}");
                LingBlockP {
                    attn: MhaIds::register(ps, &format!("{p}.attn"), hidden, heads, rng),
                    norm1: LayerNormIds::register(ps, &format!("{p}.norm1"), hidden, rng),
                    rnn: SwishRnnIds::register(ps, &format!("{p}.rnn"), hidden, rng),
                    norm2: LayerNormIds::register(ps, &format!("{p}.norm2"), hidden, rng),
                }
            })
            .collect();
        LinguisticEncoderIds {
            embed,
            blocks,
            vocab,
            hidden,
        }
    }

    pub fn bind(&self, b: &Bound) -> LinguisticEncoder {
        LinguisticEncoder {
            embed: b.get(self.embed).clone(),
            blocks: self
                .blocks
                .iter()
                .map(|bl| bl.map(|&id| b.get(id).clone()))
                .collect(),
            vocab: self.vocab,
        }
    }
}

pub struct LinguisticEncoder {
    pub embed: Tensor,
    pub blocks: Vec<LingBlockP<Tensor>>,
    pub vocab: usize,
}

impl LinguisticEncoder {
    /// Encode the full symbol sequence (boundaries included) to `N×hidden`
    /// hidden states; skip selection happens downstream.
    pub fn forward(
        &self,
        seq: &SymbolSequence,
        dropout_rate: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        if let Some(&bad) = seq.symbols.iter().find(|&&id| id as usize >= self.vocab) {
            return Err(Error::UnknownToken {
                id: bad,
                vocab: self.vocab,
            });
        }
        let hidden = self.embed.shape()[1];
        let ids: Vec<usize> = seq.symbols.iter().map(|&id| id as usize).collect();
        let tape = self.embed.tape().clone();
        let mut x =
            self.embed
                .select_rows(&ids)?
                .add(&sinusoidal_positions(&tape, ids.len(), hidden))?;
        for block in &self.blocks {
            let a = block.attn.forward(&x, None)?;
            let a = dropout(&a, dropout_rate, rng.as_deref_mut())?;
            x = block.norm1.forward(&x.add(&a)?)?;
            let r = block.rnn.forward(&x, None)?;
            x = block.norm2.forward(&x.add(&r)?)?;
        }
        Ok(x)
    }
}

// ── Frame-level encoder ──────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct FrameBlockP<T> {
    pub attn: MhaP<T>,
    pub sain1: SainP<T>,
    pub conv1: Conv1dP<T>,
    pub conv2: Conv1dP<T>,
    pub sain2: SainP<T>,
}

impl<T> FrameBlockP<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> FrameBlockP<U> {
        FrameBlockP {
            attn: self.attn.map(&mut f),
            sain1: self.sain1.map(&mut f),
            conv1: self.conv1.map(&mut f),
            conv2: self.conv2.map(&mut f),
            sain2: self.sain2.map(&mut f),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrameEncoderIds {
    pub blocks: Vec<FrameBlockP<ParamId>>,
}

impl FrameEncoderIds {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        ps: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        heads: usize,
        blocks: usize,
        kernel: usize,
        style_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let blocks = (0..blocks)
            .map(|i| {
                let p = format!("{prefix}.block{i}");
                FrameBlockP {
                    attn: MhaIds::register(ps, &format!("{p}.attn"), hidden, heads, rng),
                    sain1: SainIds::register(ps, &format!("{p}.sain1"), style_dim, hidden, rng),
                    conv1: Conv1dIds::register(
                        ps,
                        &format!("{p}.conv1"),
                        hidden,
                        hidden,
                        kernel,
                        rng,
                    ),
                    conv2: Conv1dIds::register(
                        ps,
                        &format!("{p}.conv2"),
                        hidden,
                        hidden,
                        kernel,
                        rng,
                    ),
                    sain2: SainIds::register(ps, &format!("{p}.sain2"), style_dim, hidden, rng),
                }
            })
            .collect();
        FrameEncoderIds { blocks }
    }

    pub fn bind(&self, b: &Bound) -> FrameEncoder {
        FrameEncoder {
            blocks: self
                .blocks
                .iter()
                .map(|bl| bl.map(|&id| b.get(id).clone()))
                .collect(),
        }
    }
}

pub struct FrameEncoder {
    pub blocks: Vec<FrameBlockP<Tensor>>,
}

impl FrameEncoder {
    /// Encode the expanded (frame-level) sequence, style-conditioned through
    /// every SAIN layer. Output length equals input length.
    pub fn forward(
        &self,
        e: &Tensor,
        style: &Tensor,
        dropout_rate: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let (frames, hidden) = (e.shape()[0], e.shape()[1]);
        let tape = e.tape().clone();
        let mut x = e.add(&sinusoidal_positions(&tape, frames, hidden))?;
        for block in &self.blocks {
            let a = block.attn.forward(&x, None)?;
            let a = dropout(&a, dropout_rate, rng.as_deref_mut())?;
            x = block.sain1.forward(&x.add(&a)?, style)?;
            let c = block.conv2.forward(&silu(&block.conv1.forward(&x)?)?)?;
            let c = dropout(&c, dropout_rate, rng.as_deref_mut())?;
            x = block.sain2.forward(&x.add(&c)?, style)?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn toy_seq(symbols: &[u32]) -> SymbolSequence {
        SymbolSequence {
            symbols: symbols.to_vec(),
            is_boundary: vec![false; symbols.len()],
        }
    }

    #[test]
    fn linguistic_encoder_shapes_and_unknown_token() {
        let mut r = rng(3);
        let mut ps = ParamStore::new();
        let ids = LinguisticEncoderIds::register(&mut ps, "ling", 6, 8, 2, 2, &mut r);
        let tape = Tape::new();
        let enc = ids.bind(&ps.bind(&tape));

        let out = enc.forward(&toy_seq(&[0]), 0.0, None).unwrap();
        assert_eq!(out.shape(), &[1, 8]);
        assert!(out.data().iter().all(|v| v.is_finite()));

        let out = enc.forward(&toy_seq(&[1, 4, 2, 2, 5]), 0.0, None).unwrap();
        assert_eq!(out.shape(), &[5, 8]);

        let err = enc.forward(&toy_seq(&[1, 6]), 0.0, None).unwrap_err();
        assert!(err.to_string().contains("unknown token id 6"), "{err}");
    }

    #[test]
    fn linguistic_encoder_is_order_sensitive() {
        // the recurrence makes permuted phonemes encode differently
        let mut r = rng(17);
        let mut ps = ParamStore::new();
        let ids = LinguisticEncoderIds::register(&mut ps, "ling", 6, 8, 2, 2, &mut r);
        let tape = Tape::new();
        let enc = ids.bind(&ps.bind(&tape));
        let a = enc.forward(&toy_seq(&[1, 2, 3]), 0.0, None).unwrap().data();
        let b = enc.forward(&toy_seq(&[2, 1, 3]), 0.0, None).unwrap().data();
        let max_diff = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 1e-6, "permutation left encoding unchanged");
    }

    #[test]
    fn zero_parameters_encode_to_zero() {
        let mut r = rng(9);
        let mut ps = ParamStore::new();
        let ids = LinguisticEncoderIds::register(&mut ps, "ling", 4, 8, 2, 1, &mut r);
        for id in 0..ps.len() {
            ps.data_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        let tape = Tape::new();
        let enc = ids.bind(&ps.bind(&tape));
        let out = enc.forward(&toy_seq(&[0, 1, 2]), 0.0, None).unwrap();
        // embeddings are zero, every projection is zero, and layer norm of a
        // constant row is zero pre-affine with zero gain/bias
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_encoder_keeps_length_and_distinguishes_styles() {
        let mut r = rng(11);
        let hidden = 8;
        let mut ps = ParamStore::new();
        let ids = FrameEncoderIds::register(&mut ps, "frame", hidden, 2, 2, 9, hidden, &mut r);
        let style_a: Vec<f64> = (0..hidden).map(|i| (i as f64 * 0.31).sin()).collect();
        let style_b: Vec<f64> = (0..hidden).map(|i| (i as f64 * 0.77).cos()).collect();
        let tape = Tape::new();
        let enc = ids.bind(&ps.bind(&tape));
        let frames = 6;
        let e_data: Vec<f64> = (0..frames * hidden)
            .map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.4)
            .collect();
        let e = tape.constant(e_data, &[frames, hidden]);
        let sa = tape.constant(style_a, &[hidden]);
        let sb = tape.constant(style_b, &[hidden]);
        let out_a = enc.forward(&e, &sa, 0.0, None).unwrap();
        let out_b = enc.forward(&e, &sb, 0.0, None).unwrap();
        assert_eq!(out_a.shape(), &[frames, hidden]);
        let diff = out_a
            .data()
            .iter()
            .zip(out_b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(diff > 1e-6, "styles must change the encoding");
    }

    #[test]
    fn frame_encoder_no_nan_on_random_inputs() {
        use rand::Rng as _;
        let mut r = rng(23);
        let hidden = 8;
        let mut ps = ParamStore::new();
        let ids = FrameEncoderIds::register(&mut ps, "frame", hidden, 2, 2, 9, hidden, &mut r);
        let tape = Tape::new();
        let enc = ids.bind(&ps.bind(&tape));
        for trial in 0..20 {
            let frames = 1 + trial % 7;
            let e_data: Vec<f64> = (0..frames * hidden)
                .map(|_| r.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let s_data: Vec<f64> = (0..hidden)
                .map(|_| r.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let e = tape.constant(e_data, &[frames, hidden]);
            let s = tape.constant(s_data, &[hidden]);
            let out = enc.forward(&e, &s, 0.0, None).unwrap();
            assert!(out.data().iter().all(|v| v.is_finite()));
            assert_eq!(out.shape()[0], frames);
        }
    }

    #[test]
    fn dropout_disabled_paths_are_deterministic() {
        let mut r = rng(31);
        let mut ps = ParamStore::new();
        let ids = LinguisticEncoderIds::register(&mut ps, "ling", 5, 8, 2, 2, &mut r);
        let tape = Tape::new();
        let enc = ids.bind(&ps.bind(&tape));
        let s = toy_seq(&[1, 2, 3, 4]);
        let a = enc.forward(&s, 0.0, None).unwrap().data();
        let b = enc.forward(&s, 0.0, None).unwrap().data();
        assert_eq!(a, b);
        // dropout with an rng changes the forward pass
        let mut dr = rng(1);
        let c = enc.forward(&s, 0.5, Some(&mut dr)).unwrap().data();
        assert_ne!(a, c);
    }
}
