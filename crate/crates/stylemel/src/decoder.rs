//! Autoregressive frame-by-frame mel decoder.
//!
//! Each step runs the previous mel frame through a two-layer prenet,
//! concatenates it with the current frame-level encoding, advances one gated
//! recurrent (SwishRNN-style) step, and projects to mel channels. Training
//! teacher-forces the previous frame from the target; inference feeds back
//! the decoder's own output. There is no stop token — the duration model
//! fixes the output length.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{dropout, silu, swish};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Dropout applied between the prenet layers. Unlike the encoder dropout
/// this one stays active at inference, keeping the previous-frame pathway
/// stochastic; pass `None` for a fully deterministic pass.
pub type PrenetNoise<'a> = Option<(f64, &'a mut ChaCha8Rng)>;

#[derive(Debug, Clone)]
pub struct DecoderP<T> {
    pub prenet_w1: T,
    pub prenet_b1: T,
    pub prenet_w2: T,
    pub prenet_b2: T,
    pub cell_w1: T,
    pub cell_w2: T,
    pub cell_w3: T,
    pub cell_b_c: T,
    pub cell_b_sigma: T,
    pub cell_b_out: T,
    pub alpha: T,
    pub beta: T,
    pub head_w: T,
    pub head_b: T,
}

pub type DecoderIds = DecoderP<ParamId>;
pub type Decoder = DecoderP<Tensor>;

impl<T> DecoderP<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> DecoderP<U> {
        DecoderP {
            prenet_w1: f(&self.prenet_w1),
            prenet_b1: f(&self.prenet_b1),
            prenet_w2: f(&self.prenet_w2),
            prenet_b2: f(&self.prenet_b2),
            cell_w1: f(&self.cell_w1),
            cell_w2: f(&self.cell_w2),
            cell_w3: f(&self.cell_w3),
            cell_b_c: f(&self.cell_b_c),
            cell_b_sigma: f(&self.cell_b_sigma),
            cell_b_out: f(&self.cell_b_out),
            alpha: f(&self.alpha),
            beta: f(&self.beta),
            head_w: f(&self.head_w),
            head_b: f(&self.head_b),
        }
    }
}

impl DecoderIds {
    pub fn register(
        ps: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        channels: usize,
        prenet_dim: usize,
        cell_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let p = prefix;
        let in_dim = prenet_dim + hidden;
        let std = |fan_in: usize| Init::Normal(1.0 / (fan_in as f64).sqrt());
        DecoderIds {
            prenet_w1: ps.register(
                format!("{p}.prenet_w1"),
                &[channels, prenet_dim],
                std(channels),
                rng,
            ),
            prenet_b1: ps.register(format!("{p}.prenet_b1"), &[prenet_dim], Init::Zeros, rng),
            prenet_w2: ps.register(
                format!("{p}.prenet_w2"),
                &[prenet_dim, prenet_dim],
                std(prenet_dim),
                rng,
            ),
            prenet_b2: ps.register(format!("{p}.prenet_b2"), &[prenet_dim], Init::Zeros, rng),
            cell_w1: ps.register(
                format!("{p}.cell_w1"),
                &[in_dim, cell_dim],
                std(in_dim),
                rng,
            ),
            cell_w2: ps.register(
                format!("{p}.cell_w2"),
                &[in_dim, cell_dim],
                std(in_dim),
                rng,
            ),
            cell_w3: ps.register(
                format!("{p}.cell_w3"),
                &[cell_dim, cell_dim],
                std(cell_dim),
                rng,
            ),
            cell_b_c: ps.register(format!("{p}.cell_b_c"), &[cell_dim], Init::Zeros, rng),
            cell_b_sigma: ps.register(format!("{p}.cell_b_sigma"), &[cell_dim], Init::Zeros, rng),
            cell_b_out: ps.register(format!("{p}.cell_b_out"), &[cell_dim], Init::Zeros, rng),
            alpha: ps.register(format!("{p}.alpha"), &[1], Init::Const(1.0), rng),
            beta: ps.register(format!("{p}.beta"), &[1], Init::Zeros, rng),
            head_w: ps.register(
                format!("{p}.head_w"),
                &[cell_dim, channels],
                std(cell_dim),
                rng,
            ),
            head_b: ps.register(format!("{p}.head_b"), &[channels], Init::Zeros, rng),
        }
    }

    pub fn bind(&self, b: &Bound) -> Decoder {
        self.map(|&id| b.get(id).clone())
    }
}

/// Recurrent state: the cell vector and the previous output frame
/// (all zeros at the start — the go-frame).
#[derive(Clone)]
pub struct DecoderState {
    pub cell: Tensor,
    pub prev_frame: Tensor,
}

impl Decoder {
    pub fn channels(&self) -> usize {
        self.prenet_w1.shape()[0]
    }

    fn cell_dim(&self) -> usize {
        self.cell_w3.shape()[0]
    }

    pub fn initial_state(&self) -> DecoderState {
        let tape = self.prenet_w1.tape();
        DecoderState {
            cell: tape.zeros(&[self.cell_dim()]),
            prev_frame: tape.zeros(&[self.channels()]),
        }
    }

    /// One decoding step: prenet on the previous frame, concat with the
    /// frame encoding, one gated recurrent update, linear head.
    pub fn step(
        &self,
        e_t: &Tensor,
        state: &DecoderState,
        mut noise: PrenetNoise,
    ) -> Result<(Tensor, DecoderState)> {
        let channels = self.channels();
        if e_t.shape().len() != 1 {
            return Err(Error::InvalidArgument {
                op: "decoder_step",
                msg: format!("frame encoding must be 1-d, got {:?}", e_t.shape()),
            });
        }
        let drop = |x: &Tensor, noise: &mut PrenetNoise| match noise {
            Some((rate, rng)) => dropout(x, *rate, Some(rng)),
            None => Ok(x.clone()),
        };
        let prev = state.prev_frame.reshape(&[1, channels])?;
        let p = silu(&prev.matmul(&self.prenet_w1)?.add_row(&self.prenet_b1)?)?;
        let p = drop(&p, &mut noise)?;
        let p = silu(&p.matmul(&self.prenet_w2)?.add_row(&self.prenet_b2)?)?;
        let p = drop(&p, &mut noise)?;

        let u = Tensor::concat_cols(&[p, e_t.reshape(&[1, e_t.numel()])?])?;
        let x1 = u.matmul(&self.cell_w1)?.reshape(&[self.cell_dim()])?;
        let x2 = u.matmul(&self.cell_w2)?.reshape(&[self.cell_dim()])?;
        let c = swish(&state.cell.sub(&x1)?, &self.alpha, &self.beta)?.add(&x1)?;
        let gate = x2.add(&self.cell_b_sigma)?.sigmoid();
        let pooled = c.add(&self.cell_b_c)?.mul(&gate)?;
        let h = pooled
            .reshape(&[1, self.cell_dim()])?
            .matmul(&self.cell_w3)?
            .add_row(&self.cell_b_out)?;
        let frame = h
            .matmul(&self.head_w)?
            .add_row(&self.head_b)?
            .reshape(&[channels])?;
        Ok((
            frame.clone(),
            DecoderState {
                cell: c,
                prev_frame: frame,
            },
        ))
    }

    /// Decode the full sequence. With `targets` the previous frame is the
    /// ground-truth one (teacher forcing); without, the decoder free-runs on
    /// its own outputs and always emits exactly as many frames as `e` has.
    pub fn decode_sequence(
        &self,
        e: &Tensor,
        targets: Option<&Tensor>,
        mut noise: PrenetNoise,
    ) -> Result<Tensor> {
        let frames = e.shape()[0];
        if let Some(t) = targets {
            if t.shape() != [frames, self.channels()] {
                return Err(Error::ShapeMismatch {
                    op: "decode_sequence",
                    lhs: t.shape().to_vec(),
                    rhs: vec![frames, self.channels()],
                });
            }
        }
        let mut state = self.initial_state();
        let mut rows = Vec::with_capacity(frames);
        for t in 0..frames {
            if let (Some(tg), true) = (targets, t > 0) {
                state.prev_frame = tg.row(t - 1)?;
            }
            let step_noise = noise.as_mut().map(|(rate, rng)| (*rate, &mut **rng));
            let (frame, next) = self.step(&e.row(t)?, &state, step_noise)?;
            rows.push(frame);
            state = next;
        }
        Tensor::stack_rows(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::SeedableRng;

    fn setup(seed: u64, hidden: usize, channels: usize) -> (ParamStore, DecoderIds) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let ids = DecoderIds::register(&mut ps, "dec", hidden, channels, 6, 5, &mut rng);
        (ps, ids)
    }

    #[test]
    fn zero_params_decode_zero_frames() {
        let (mut ps, ids) = setup(1, 4, 3);
        for id in 0..ps.len() {
            ps.data_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        let tape = Tape::new();
        let dec = ids.bind(&ps.bind(&tape));
        let e = tape.constant(vec![0.4; 8], &[2, 4]);
        let out = dec.decode_sequence(&e, None, None).unwrap();
        assert_eq!(out.data(), vec![0.0; 6]);
    }

    #[test]
    fn step_is_pure() {
        let (ps, ids) = setup(7, 4, 3);
        let tape = Tape::new();
        let dec = ids.bind(&ps.bind(&tape));
        let e_t = tape.constant(vec![0.2, -0.4, 0.8, 0.1], &[4]);
        let state = dec.initial_state();
        let (f1, _) = dec.step(&e_t, &state, None).unwrap();
        let (f2, _) = dec.step(&e_t, &state, None).unwrap();
        assert_eq!(f1.data(), f2.data());
    }

    #[test]
    fn teacher_forced_matches_manual_step_loop_exactly() {
        let (ps, ids) = setup(11, 4, 3);
        let tape = Tape::new();
        let dec = ids.bind(&ps.bind(&tape));
        let frames = 5;
        let e_data: Vec<f64> = (0..frames * 4)
            .map(|i| ((i * 7 % 9) as f64 - 4.0) * 0.3)
            .collect();
        let t_data: Vec<f64> = (0..frames * 3)
            .map(|i| ((i * 5 % 11) as f64 - 5.0) * 0.2)
            .collect();
        let e = tape.constant(e_data, &[frames, 4]);
        let targets = tape.constant(t_data, &[frames, 3]);

        let seq = dec
            .decode_sequence(&e, Some(&targets), None)
            .unwrap()
            .data();

        let mut state = dec.initial_state();
        let mut manual = Vec::new();
        for t in 0..frames {
            if t > 0 {
                state.prev_frame = targets.row(t - 1).unwrap();
            }
            let (frame, next) = dec.step(&e.row(t).unwrap(), &state, None).unwrap();
            manual.extend(frame.data());
            state = next;
        }
        assert_eq!(
            seq, manual,
            "teacher-forced decode must equal the step loop bit-exactly"
        );
    }

    #[test]
    fn teacher_forced_and_free_running_diverge() {
        let (ps, ids) = setup(13, 4, 3);
        let tape = Tape::new();
        let dec = ids.bind(&ps.bind(&tape));
        let frames = 4;
        let e = tape.constant(
            (0..frames * 4).map(|i| (i as f64 * 0.37).sin()).collect(),
            &[frames, 4],
        );
        let targets = tape.constant(
            (0..frames * 3).map(|i| (i as f64 * 0.91).cos()).collect(),
            &[frames, 3],
        );
        let forced = dec
            .decode_sequence(&e, Some(&targets), None)
            .unwrap()
            .data();
        let free = dec.decode_sequence(&e, None, None).unwrap().data();
        assert_eq!(
            free.len(),
            frames * 3,
            "free run always emits exactly T frames"
        );
        assert_ne!(forced, free);
    }

    #[test]
    fn single_frame_decodes_from_go_frame() {
        let (ps, ids) = setup(17, 4, 3);
        let tape = Tape::new();
        let dec = ids.bind(&ps.bind(&tape));
        let e = tape.constant(vec![0.5, -0.5, 0.25, 0.0], &[1, 4]);
        let out = dec.decode_sequence(&e, None, None).unwrap();
        assert_eq!(out.shape(), &[1, 3]);
        // same as a single manual step from the zero state
        let (frame, _) = dec
            .step(&e.row(0).unwrap(), &dec.initial_state(), None)
            .unwrap();
        assert_eq!(out.data(), frame.data());
    }

    #[test]
    fn target_length_mismatch_is_rejected() {
        let (ps, ids) = setup(19, 4, 3);
        let tape = Tape::new();
        let dec = ids.bind(&ps.bind(&tape));
        let e = tape.constant(vec![0.0; 8], &[2, 4]);
        let bad_targets = tape.constant(vec![0.0; 9], &[3, 3]);
        assert!(dec.decode_sequence(&e, Some(&bad_targets), None).is_err());
    }

    #[test]
    fn reconstruction_loss_examples() {
        use crate::tensor::mae;
        let tape = Tape::new();
        let a = tape.constant(vec![0.0; 4], &[2, 2]);
        let b = tape.constant(vec![2.0; 4], &[2, 2]);
        assert_eq!(mae(&a, &b).unwrap().item(), 2.0);
        assert_eq!(mae(&b, &b).unwrap().item(), 0.0);
        // shape mismatch propagates as an error
        let c = tape.constant(vec![0.0; 2], &[1, 2]);
        assert!(mae(&a, &c).is_err());
    }
}
