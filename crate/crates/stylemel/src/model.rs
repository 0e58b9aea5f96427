//! The assembled acoustic model: linguistic encoding, skip selection,
//! variance prediction, length regulation, style/speaker conditioning,
//! frame encoding, autoregressive decoding, and the diffusion refiner.
//!
//! Training teacher-forces ground-truth variances and mel history and
//! optimizes `ℓ1 + duration ℓ2 + pitch ℓ2 + range ℓ2 + diffusion MSE`.
//! Inference uses predicted variances, free-runs the decoder, and refines
//! the result with shallow reverse diffusion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::{
    expand_scalars, length_regulate, quantize_durations, skip_select, SymbolSequence,
    VarianceEmbedIds, VariancePredictorIds,
};
use crate::config::Config;
use crate::corpus::{Mel, Utterance};
use crate::decoder::DecoderIds;
use crate::diffusion::{
    gaussian_vec, noise_prediction_loss, q_sample, shallow_sample, DenoiserIds, DiffusionSchedule,
};
use crate::encoders::{FrameEncoderIds, LinguisticEncoderIds};
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{mae, mse, Tape, Tensor};

/// rng stream ids, so that one seed drives independent draw sequences
pub const INIT_STREAM: u64 = 0;
pub const TRAIN_STREAM: u64 = 1;
pub const SYNTH_STREAM: u64 = 2;

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Which source fed the variance adders during a forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineTrace {
    pub read_target_variances: bool,
    pub read_predicted_variances: bool,
}

/// An explicit diffusion-step draw: step index and the noise sample.
pub struct DiffusionDraw {
    pub t: usize,
    pub eps: Vec<f64>,
}

pub struct TrainForward {
    pub l1: Tensor,
    pub dur_l2: Tensor,
    pub pitch_l2: Tensor,
    pub range_l2: Tensor,
    pub diff_mse: Tensor,
    pub total: Tensor,
    pub diffusion_step: usize,
    pub trace: PipelineTrace,
}

pub struct InferOutput {
    pub decoder_mel: Mel,
    pub denoised_mel: Mel,
    pub durations: Vec<u32>,
    pub trace: PipelineTrace,
}

pub struct AcousticModel {
    pub config: Config,
    pub store: ParamStore,
    pub schedule: DiffusionSchedule,
    pub ling: LinguisticEncoderIds,
    pub dur_pred: VariancePredictorIds,
    pub pitch_pred: VariancePredictorIds,
    pub range_pred: VariancePredictorIds,
    pub var_embed: VarianceEmbedIds,
    pub style_table: ParamId,
    pub speaker_table: ParamId,
    pub frame: FrameEncoderIds,
    pub decoder: DecoderIds,
    pub denoiser: DenoiserIds,
}

impl AcousticModel {
    /// Build and initialize all parameters deterministically from the
    /// training seed.
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let m = &config.model;
        let schedule =
            DiffusionSchedule::new(m.diffusion_steps, m.shallow_steps, m.beta_min, m.beta_max)?;
        let mut rng = seeded_rng(config.train.seed, INIT_STREAM);
        let mut ps = ParamStore::new();
        let hidden = m.hidden;

        let ling = LinguisticEncoderIds::register(
            &mut ps,
            "ling",
            config.vocab_size(),
            hidden,
            m.heads,
            m.linguistic_blocks,
            &mut rng,
        );
        let dur_pred = VariancePredictorIds::register(&mut ps, "dur_pred", hidden, &mut rng);
        let pitch_pred = VariancePredictorIds::register(&mut ps, "pitch_pred", hidden, &mut rng);
        let range_pred = VariancePredictorIds::register(&mut ps, "range_pred", hidden, &mut rng);
        let var_embed = VarianceEmbedIds::register(&mut ps, "var_embed", hidden, &mut rng);
        let style_table = ps.register(
            "style_embed",
            &[config.corpus.styles, hidden],
            Init::Normal(0.5),
            &mut rng,
        );
        let speaker_table = ps.register(
            "speaker_embed",
            &[config.corpus.speakers, hidden],
            Init::Normal(0.5),
            &mut rng,
        );
        let frame = FrameEncoderIds::register(
            &mut ps,
            "frame",
            hidden,
            m.heads,
            m.frame_blocks,
            m.frame_conv_kernel,
            hidden,
            &mut rng,
        );
        let decoder = DecoderIds::register(
            &mut ps,
            "decoder",
            hidden,
            m.mel_channels,
            m.prenet_dim,
            m.decoder_dim,
            &mut rng,
        );
        let denoiser = DenoiserIds::register(
            &mut ps,
            "denoiser",
            m.mel_channels,
            hidden,
            m.residual_channels,
            m.residual_blocks,
            m.denoiser_kernel,
            hidden,
            m.step_embed_dim,
            &mut rng,
        );

        Ok(AcousticModel {
            config,
            store: ps,
            schedule,
            ling,
            dur_pred,
            pitch_pred,
            range_pred,
            var_embed,
            style_table,
            speaker_table,
            frame,
            decoder,
            denoiser,
        })
    }

    fn style_vec(&self, bound: &Bound, style: u32) -> Result<Tensor> {
        let count = self.config.corpus.styles;
        if style as usize >= count {
            return Err(Error::UnknownStyle { id: style, count });
        }
        bound.get(self.style_table).row(style as usize)
    }

    fn speaker_vec(&self, bound: &Bound, speaker: u32) -> Result<Tensor> {
        let count = self.config.corpus.speakers;
        if speaker as usize >= count {
            return Err(Error::UnknownSpeaker { id: speaker, count });
        }
        bound.get(self.speaker_table).row(speaker as usize)
    }

    /// Teacher-forced training pass over one utterance. The tape behind
    /// `bound` records everything; call `total.backward()` afterwards and
    /// read parameter gradients from `bound`.
    ///
    /// The diffusion step and noise are drawn from `rng` first, then any
    /// dropout masks are drawn during the encoder forwards.
    pub fn forward_train(
        &self,
        bound: &Bound,
        utt: &Utterance,
        rng: &mut ChaCha8Rng,
        with_dropout: bool,
    ) -> Result<TrainForward> {
        let draw = DiffusionDraw {
            t: rng.random_range(1..=self.schedule.total_steps()),
            eps: gaussian_vec(rng, utt.mel.data.len()),
        };
        self.forward_train_draw(bound, utt, draw, with_dropout.then_some(rng))
    }

    /// Deterministic variant of [`Self::forward_train`] with the diffusion
    /// step and noise supplied by the caller.
    pub fn forward_train_draw(
        &self,
        bound: &Bound,
        utt: &Utterance,
        draw: DiffusionDraw,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<TrainForward> {
        let tape = bound.tape();
        let m = &self.config.model;
        let drop = if dropout_rng.is_some() {
            m.dropout
        } else {
            0.0
        };
        let mut trace = PipelineTrace::default();

        let h_full = self
            .ling
            .bind(bound)
            .forward(&utt.seq, drop, dropout_rng.as_deref_mut())?;
        let h = skip_select(&h_full, &utt.seq)?;
        let n_ph = utt.seq.phoneme_count();

        let dur_hat = self.dur_pred.bind(bound).forward(&h)?;
        let pitch_hat = self.pitch_pred.bind(bound).forward(&h)?;
        let range_hat = self.range_pred.bind(bound).forward(&h)?;

        let dur_target = tape.constant(utt.durations.iter().map(|&d| d as f64).collect(), &[n_ph]);
        let pitch_target = tape.constant(utt.pitch.clone(), &[n_ph]);
        let range_target = tape.constant(utt.pitch_range.clone(), &[n_ph]);
        let dur_l2 = mse(&dur_hat, &dur_target)?;
        let pitch_l2 = mse(&pitch_hat, &pitch_target)?;
        let range_l2 = mse(&range_hat, &range_target)?;

        // ground-truth variances feed the pipeline during training
        trace.read_target_variances = true;
        let frames = utt.total_frames();
        let e = length_regulate(&h, &utt.durations)?;
        let pitch_frames = tape.constant(expand_scalars(&utt.pitch, &utt.durations), &[frames]);
        let range_frames =
            tape.constant(expand_scalars(&utt.pitch_range, &utt.durations), &[frames]);
        let style = self.style_vec(bound, utt.style)?;
        let speaker = self.speaker_vec(bound, utt.speaker)?;
        let e = self.var_embed.bind(bound).forward(
            &e,
            &pitch_frames,
            &range_frames,
            &style,
            &speaker,
        )?;

        let cond = self
            .frame
            .bind(bound)
            .forward(&e, &style, drop, dropout_rng.as_deref_mut())?;

        let mel_target = tape.constant(utt.mel.data.clone(), &[utt.mel.frames, utt.mel.channels]);
        let prenet_noise = dropout_rng.map(|rng| (m.prenet_dropout, rng));
        let mel_pred =
            self.decoder
                .bind(bound)
                .decode_sequence(&cond, Some(&mel_target), prenet_noise)?;
        let l1 = mae(&mel_pred, &mel_target)?;

        // the denoiser sees the condition through the gradient attenuator
        let cond_scaled = cond.scale_grad(m.denoiser_grad_scale);
        let diffusion_step = draw.t;
        let eps = tape.constant(draw.eps, &[utt.mel.frames, utt.mel.channels]);
        let mt = q_sample(&mel_target, draw.t, &eps, &self.schedule)?;
        let eps_hat = self
            .denoiser
            .bind(bound)
            .forward(&mt, &style, &cond_scaled, draw.t)?;
        let diff_mse = noise_prediction_loss(&eps, &eps_hat)?;

        let total = l1
            .add(&dur_l2)?
            .add(&pitch_l2)?
            .add(&range_l2)?
            .add(&diff_mse)?;

        Ok(TrainForward {
            l1,
            dur_l2,
            pitch_l2,
            range_l2,
            diff_mse,
            total,
            diffusion_step,
            trace,
        })
    }

    /// Full inference: predicted durations (quantized), predicted pitch and
    /// range, free-running decoder, then shallow reverse diffusion from the
    /// decoder output.
    pub fn infer(
        &self,
        seq: &SymbolSequence,
        style: u32,
        speaker: u32,
        rng: &mut ChaCha8Rng,
    ) -> Result<InferOutput> {
        let m = &self.config.model;
        let tape = Tape::new();
        let bound = self.store.bind(&tape);
        let mut trace = PipelineTrace::default();

        let h_full = self.ling.bind(&bound).forward(seq, 0.0, None)?;
        let h = skip_select(&h_full, seq)?;

        // predictions drive the pipeline at inference
        trace.read_predicted_variances = true;
        let durations = quantize_durations(&self.dur_pred.bind(&bound).forward(&h)?.data());
        let pitch_hat = self.pitch_pred.bind(&bound).forward(&h)?.data();
        let range_hat = self.range_pred.bind(&bound).forward(&h)?.data();

        let frames: usize = durations.iter().map(|&d| d as usize).sum();
        let e = length_regulate(&h, &durations)?;
        let pitch_frames = tape.constant(expand_scalars(&pitch_hat, &durations), &[frames]);
        let range_frames = tape.constant(expand_scalars(&range_hat, &durations), &[frames]);
        let style_vec = self.style_vec(&bound, style)?;
        let speaker_vec = self.speaker_vec(&bound, speaker)?;
        let e = self.var_embed.bind(&bound).forward(
            &e,
            &pitch_frames,
            &range_frames,
            &style_vec,
            &speaker_vec,
        )?;

        let cond = self.frame.bind(&bound).forward(&e, &style_vec, 0.0, None)?;
        // prenet dropout stays live at inference: the previous-frame path is
        // deliberately stochastic, seeded by the synthesis rng
        let decoder_out = self.decoder.bind(&bound).decode_sequence(
            &cond,
            None,
            Some((m.prenet_dropout, &mut *rng)),
        )?;

        let channels = m.mel_channels;
        let decoder_mel = Mel::new(frames, channels, decoder_out.data());

        let denoiser = self.denoiser.bind(&bound);
        let cond_scaled = cond.scale_grad(m.denoiser_grad_scale);
        let denoised = shallow_sample(
            &decoder_mel.data,
            &self.schedule,
            rng,
            m.noise_shallow_start,
            |mt_data, t| {
                let mt = tape.constant(mt_data.to_vec(), &[frames, channels]);
                Ok(denoiser.forward(&mt, &style_vec, &cond_scaled, t)?.data())
            },
        )?;
        let denoised_mel = Mel::new(frames, channels, denoised);

        Ok(InferOutput {
            decoder_mel,
            denoised_mel,
            durations,
            trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    fn tiny_config() -> Config {
        let mut c = Config::desk();
        c.model.hidden = 16;
        c.model.linguistic_blocks = 1;
        c.model.frame_blocks = 1;
        c.model.mel_channels = 4;
        c.model.prenet_dim = 8;
        c.model.decoder_dim = 16;
        c.model.residual_blocks = 2;
        c.model.residual_channels = 16;
        c.model.step_embed_dim = 16;
        c.corpus.utterances = 2;
        c.corpus.max_phonemes = 6;
        c
    }

    #[test]
    fn paper_preset_instantiates_the_stated_architecture() {
        let model = AcousticModel::new(Config::paper()).unwrap();
        assert_eq!(model.schedule.total_steps(), 70);
        assert_eq!(model.schedule.shallow_steps(), 30);
        assert_eq!(model.denoiser.blocks.len(), 20);
        // kernel sizes are encoded in the conv weight shapes
        let k = model.store.entry(model.denoiser.blocks[0].conv.w).shape[2];
        assert_eq!(k, 3);
        let fk = model.store.entry(model.frame.blocks[0].conv1.w).shape[2];
        assert_eq!(fk, 9);
        assert_eq!(model.ling.blocks.len(), 4);
        assert_eq!(model.frame.blocks.len(), 4);
        assert_eq!(model.ling.hidden, 256);
        assert_eq!(model.ling.blocks[0].attn.heads, 2);
    }

    #[test]
    fn train_forward_produces_finite_losses_and_target_trace() {
        let cfg = tiny_config();
        let corpus = corpus::generate(&cfg.corpus, cfg.model.mel_channels);
        let model = AcousticModel::new(cfg).unwrap();
        let tape = Tape::new();
        let bound = model.store.bind(&tape);
        let mut rng = seeded_rng(7, TRAIN_STREAM);
        let out = model
            .forward_train(&bound, &corpus[0], &mut rng, false)
            .unwrap();
        for (name, t) in [
            ("l1", &out.l1),
            ("dur", &out.dur_l2),
            ("pitch", &out.pitch_l2),
            ("range", &out.range_l2),
            ("diff", &out.diff_mse),
            ("total", &out.total),
        ] {
            let v = t.item();
            assert!(v.is_finite() && v >= 0.0, "{name} = {v}");
        }
        assert!(out.trace.read_target_variances);
        assert!(!out.trace.read_predicted_variances);
        out.total.backward().unwrap();
        // gradients reach the embedding table and the denoiser head (the
        // zero-initialized head gates everything upstream of it at init,
        // so out_w2 is the first denoiser weight to receive gradient)
        assert!(bound
            .grad_or_zero(model.ling.embed)
            .iter()
            .any(|&v| v != 0.0));
        assert!(bound
            .grad_or_zero(model.denoiser.out_w2)
            .iter()
            .any(|&v| v != 0.0));
    }

    #[test]
    fn total_is_the_sum_of_components() {
        let cfg = tiny_config();
        let corpus = corpus::generate(&cfg.corpus, cfg.model.mel_channels);
        let model = AcousticModel::new(cfg).unwrap();
        let tape = Tape::new();
        let bound = model.store.bind(&tape);
        let mut rng = seeded_rng(3, TRAIN_STREAM);
        let out = model
            .forward_train(&bound, &corpus[1], &mut rng, false)
            .unwrap();
        let sum = out.l1.item()
            + out.dur_l2.item()
            + out.pitch_l2.item()
            + out.range_l2.item()
            + out.diff_mse.item();
        assert!((out.total.item() - sum).abs() < 1e-12);
    }

    #[test]
    fn infer_runs_end_to_end_with_predicted_trace() {
        let cfg = tiny_config();
        let corpus = corpus::generate(&cfg.corpus, cfg.model.mel_channels);
        let model = AcousticModel::new(cfg).unwrap();
        let mut rng = seeded_rng(9, SYNTH_STREAM);
        let out = model.infer(&corpus[0].seq, 2, 1, &mut rng).unwrap();
        assert_eq!(out.decoder_mel.frames, out.denoised_mel.frames);
        let total: usize = out.durations.iter().map(|&d| d as usize).sum();
        assert_eq!(out.decoder_mel.frames, total);
        assert!(out.denoised_mel.data.iter().all(|v| v.is_finite()));
        assert!(out.trace.read_predicted_variances);
        assert!(!out.trace.read_target_variances);
    }

    #[test]
    fn infer_rejects_unknown_style_and_speaker() {
        let cfg = tiny_config();
        let corpus = corpus::generate(&cfg.corpus, cfg.model.mel_channels);
        let model = AcousticModel::new(cfg).unwrap();
        let mut rng = seeded_rng(1, SYNTH_STREAM);
        let styles = model.config.corpus.styles as u32;
        let speakers = model.config.corpus.speakers as u32;
        assert!(model.infer(&corpus[0].seq, styles, 0, &mut rng).is_err());
        assert!(model.infer(&corpus[0].seq, 0, speakers, &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_inference_bits() {
        let cfg = tiny_config();
        let corpus = corpus::generate(&cfg.corpus, cfg.model.mel_channels);
        let model = AcousticModel::new(cfg).unwrap();
        let a = model
            .infer(&corpus[0].seq, 1, 0, &mut seeded_rng(5, SYNTH_STREAM))
            .unwrap();
        let b = model
            .infer(&corpus[0].seq, 1, 0, &mut seeded_rng(5, SYNTH_STREAM))
            .unwrap();
        assert_eq!(a.denoised_mel, b.denoised_mel);
        assert_eq!(a.decoder_mel, b.decoder_mel);
    }
}
