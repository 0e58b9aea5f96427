//! Self-verification suites: finite-difference gradient checks for every
//! primitive and layer, semantic invariants with independent oracles, and
//! the diffusion identities. The `verify` CLI subcommand runs these and the
//! acceptance tests assert on them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::alignment::{
    length_regulate, quantize_durations, skip_select, SymbolSequence, VariancePredictorIds,
};
use crate::config::Config;
use crate::corpus;
use crate::decoder::DecoderIds;
use crate::diffusion::{
    elbo_terms, gaussian_kl, gaussian_vec, reverse_step, shallow_sample, DenoiserIds,
    DiffusionSchedule,
};
use crate::encoders::{FrameEncoderIds, LinguisticEncoderIds};
use crate::error::{Error, Result};
use crate::layers::{
    gated_activation, layer_norm_core, sain_normalize, swish, swish_recurrence, MhaIds,
    SwishRnnIds, NORM_EPS,
};
use crate::model::{AcousticModel, DiffusionDraw};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::gradcheck::gradcheck;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradcheck,
    Invariants,
    DiffusionOracle,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradcheck" => Ok(Suite::Gradcheck),
            "invariants" => Ok(Suite::Invariants),
            "diffusion-oracle" => Ok(Suite::DiffusionOracle),
            "all" => Ok(Suite::All),
            other => Err(Error::InvalidArgument {
                op: "verify",
                msg: format!("unknown suite `{other}` (gradcheck|invariants|diffusion-oracle|all)"),
            }),
        }
    }
}

/// Result of one named check: the measured maximum error against its bound.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub max_err: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Check {
    fn measured(name: &str, max_err: f64, tol: f64) -> Self {
        Check {
            name: name.to_string(),
            max_err,
            tol,
            pass: max_err <= tol,
        }
    }

    fn failed(name: &str, tol: f64) -> Self {
        Check {
            name: name.to_string(),
            max_err: f64::INFINITY,
            tol,
            pass: false,
        }
    }

    pub fn report_line(&self) -> String {
        format!(
            "{} {:<52} max_err={:<12.3e} tol={:.1e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.max_err,
            self.tol
        )
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

pub fn run(suite: Suite) -> Vec<Check> {
    match suite {
        Suite::Gradcheck => gradcheck_suite(),
        Suite::Invariants => invariants_suite(),
        Suite::DiffusionOracle => diffusion_suite(),
        Suite::All => {
            let mut all = gradcheck_suite();
            all.extend(invariants_suite());
            all.extend(diffusion_suite());
            all
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

// ── Gradient checks ──────────────────────────────────────────────────

fn gc<F>(name: &str, f: F, inputs: &[(Vec<f64>, Vec<usize>)], tol: f64) -> Check
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    match gradcheck(f, inputs, tol) {
        Ok(report) => Check::measured(name, report.max_rel_err, tol),
        Err(_) => Check::failed(name, tol),
    }
}

/// Gradient-check a function of a [`ParamStore`]: the parameters listed in
/// `checked` become probe inputs, the remaining ones stay constant, and any
/// `extra` data inputs are appended after them.
fn gc_params<F>(
    name: &str,
    ps: &ParamStore,
    checked: &[ParamId],
    extra: &[(Vec<f64>, Vec<usize>)],
    tol: f64,
    f: F,
) -> Check
where
    F: Fn(&Tape, &Bound, &[Tensor]) -> Result<Tensor>,
{
    let mut inputs: Vec<(Vec<f64>, Vec<usize>)> = checked
        .iter()
        .map(|&id| (ps.entry(id).data.clone(), ps.entry(id).shape.clone()))
        .collect();
    inputs.extend_from_slice(extra);
    let n_checked = checked.len();
    gc(
        name,
        |tape, inp| {
            let tensors: Vec<Tensor> = ps
                .iter()
                .map(|(id, e)| match checked.iter().position(|&c| c == id) {
                    Some(pos) => inp[pos].clone(),
                    None => tape.constant(e.data.clone(), &e.shape),
                })
                .collect();
            let bound = Bound::from_tensors(tensors);
            f(tape, &bound, &inp[n_checked..])
        },
        &inputs,
        tol,
    )
}

const PRIM_TOL: f64 = 1e-5;
const LAYER_TOL: f64 = 1e-4;

fn primitive_checks(checks: &mut Vec<Check>) {
    let mut r = rng(0xAD);
    let m = |r: &mut ChaCha8Rng, n: usize| uniform(r, n, -2.0, 2.0);
    let pos = |r: &mut ChaCha8Rng, n: usize| uniform(r, n, 0.5, 2.0);

    let a23 = (m(&mut r, 6), vec![2, 3]);
    let b23 = (m(&mut r, 6), vec![2, 3]);
    let bden = (pos(&mut r, 6), vec![2, 3]);
    let b34 = (m(&mut r, 12), vec![3, 4]);
    let v3 = (m(&mut r, 3), vec![3]);
    let v2 = (m(&mut r, 2), vec![2]);
    let s1 = (m(&mut r, 1), vec![1]);

    checks.push(gc(
        "primitive add",
        |_t, i| i[0].add(&i[1]),
        &[a23.clone(), b23.clone()],
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive sub",
        |_t, i| i[0].sub(&i[1]),
        &[a23.clone(), b23.clone()],
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive mul",
        |_t, i| i[0].mul(&i[1]),
        &[a23.clone(), b23.clone()],
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive div",
        |_t, i| i[0].div(&i[1]),
        &[a23.clone(), bden.clone()],
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive matmul",
        |_t, i| i[0].matmul(&i[1]),
        &[a23.clone(), b34.clone()],
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive transpose",
        |_t, i| i[0].transpose(),
        std::slice::from_ref(&a23),
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive sigmoid",
        |_t, i| Ok(i[0].sigmoid()),
        std::slice::from_ref(&a23),
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive tanh",
        |_t, i| Ok(i[0].tanh()),
        std::slice::from_ref(&a23),
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive exp",
        |_t, i| Ok(i[0].exp()),
        std::slice::from_ref(&a23),
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive log",
        |_t, i| Ok(i[0].log()),
        std::slice::from_ref(&bden),
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive sqrt",
        |_t, i| Ok(i[0].sqrt()),
        std::slice::from_ref(&bden),
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive abs",
        |_t, i| Ok(i[0].abs()),
        std::slice::from_ref(&bden),
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive recip",
        |_t, i| Ok(i[0].recip()),
        std::slice::from_ref(&bden),
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive scale/shift",
        |_t, i| Ok(i[0].scale(-1.7).shift(0.3)),
        std::slice::from_ref(&a23),
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive clamp_min",
        |_t, i| Ok(i[0].clamp_min(0.1)),
        std::slice::from_ref(&a23),
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive mul_scalar",
        |_t, i| i[0].mul_scalar(&i[1]),
        &[a23.clone(), s1.clone()],
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive add_scalar",
        |_t, i| i[0].add_scalar(&i[1]),
        &[a23.clone(), s1.clone()],
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive mean_axis0/1",
        |_t, i| Tensor::concat_vec(&[i[0].mean_axis0()?, i[0].mean_axis1()?]),
        std::slice::from_ref(&a23),
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive var_axis0/1",
        |_t, i| Tensor::concat_vec(&[i[0].var_axis0()?, i[0].var_axis1()?]),
        std::slice::from_ref(&a23),
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive sum_all/mean_all",
        |_t, i| i[0].sum_all().add(&i[0].mean_all()),
        std::slice::from_ref(&a23),
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive add_row/mul_row",
        |_t, i| i[0].add_row(&i[1])?.mul_row(&i[1]),
        &[a23.clone(), v3.clone()],
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive add_col/mul_col",
        |_t, i| i[0].add_col(&i[1])?.mul_col(&i[1]),
        &[a23.clone(), v2.clone()],
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive select_rows",
        |_t, i| i[0].select_rows(&[1, 0, 1, 1]),
        std::slice::from_ref(&a23),
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive row",
        |_t, i| i[0].row(1),
        std::slice::from_ref(&a23),
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive slice_cols",
        |_t, i| i[0].slice_cols(1..3),
        std::slice::from_ref(&a23),
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive concat_cols",
        |_t, i| Tensor::concat_cols(&[i[0].clone(), i[1].clone()]),
        &[a23.clone(), b23.clone()],
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive stack_rows/concat_vec",
        |_t, i| {
            let stacked = Tensor::stack_rows(&[i[0].clone(), i[1].clone()])?;
            Tensor::concat_vec(&[stacked.row(0)?, stacked.row(1)?])?
                .sum_all()
                .add(&stacked.mean_all())
        },
        &[v3.clone(), (m(&mut r, 3), vec![3])],
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive softmax_rows",
        |_t, i| i[0].softmax_rows(),
        std::slice::from_ref(&a23),
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive conv1d",
        |_t, i| i[0].conv1d(&i[1], &i[2]),
        &[
            (m(&mut r, 10), vec![5, 2]),
            (m(&mut r, 18), vec![3, 2, 3]),
            (m(&mut r, 3), vec![3]),
        ],
        PRIM_TOL,
    ));
    checks.push(gc(
        "primitive reshape",
        |_t, i| i[0].reshape(&[3, 2]),
        std::slice::from_ref(&a23),
        PRIM_TOL,
    ));

    // negative control: a deliberately corrupted VJP must be caught
    let control = gradcheck(
        |_t, i| {
            let y = i[0].scale_grad(0.5);
            y.mul(&y)?.mean_all().shift(0.0).reshape(&[1])
        },
        &[(m(&mut r, 4), vec![4])],
        LAYER_TOL,
    );
    let caught = matches!(&control, Ok(rep) if !rep.pass());
    checks.push(Check {
        name: "negative control: corrupted vjp is detected".into(),
        max_err: if caught { 0.0 } else { f64::INFINITY },
        tol: 0.0,
        pass: caught,
    });
}

fn layer_checks(checks: &mut Vec<Check>) {
    let mut r = rng(0x1A);

    checks.push(gc(
        "layer swish (learnable slope)",
        |_t, i| swish(&i[0], &i[1], &i[2]),
        &[
            (uniform(&mut r, 6, -2.0, 2.0), vec![6]),
            (vec![1.1], vec![1]),
            (vec![-0.2], vec![1]),
        ],
        LAYER_TOL,
    ));

    checks.push(gc(
        "layer gated_activation",
        |_t, i| gated_activation(&i[0], &i[1]),
        &[
            (uniform(&mut r, 6, -2.0, 2.0), vec![2, 3]),
            (uniform(&mut r, 6, -2.0, 2.0), vec![2, 3]),
        ],
        LAYER_TOL,
    ));

    checks.push(gc(
        "layer layer_norm (core)",
        |_t, i| layer_norm_core(&i[0], NORM_EPS),
        &[(uniform(&mut r, 12, -2.0, 2.0), vec![3, 4])],
        LAYER_TOL,
    ));

    checks.push(gc(
        "layer sain_normalize",
        |_t, i| sain_normalize(&i[0], &i[1], &i[2]),
        &[
            (uniform(&mut r, 12, -2.0, 2.0), vec![4, 3]),
            (uniform(&mut r, 3, 0.5, 1.5), vec![3]),
            (uniform(&mut r, 3, -0.5, 0.5), vec![3]),
        ],
        LAYER_TOL,
    ));

    // SwishRNN cell, all parameters checked
    {
        let mut ps = ParamStore::new();
        let ids = SwishRnnIds::register(&mut ps, "rnn", 3, &mut r);
        let all = [
            ids.w1,
            ids.w2,
            ids.w3,
            ids.b_c,
            ids.b_sigma,
            ids.b_out,
            ids.alpha,
            ids.beta,
        ];
        checks.push(gc_params(
            "layer swishrnn",
            &ps,
            &all,
            &[(uniform(&mut r, 12, -2.0, 2.0), vec![4, 3])],
            LAYER_TOL,
            move |_t, b, extra| ids.bind(b).forward(&extra[0], None),
        ));
    }

    // multi-head attention with and without mask
    {
        let mut ps = ParamStore::new();
        let ids = MhaIds::register(&mut ps, "attn", 4, 2, &mut r);
        let all = [
            ids.wq, ids.wk, ids.wv, ids.wo, ids.bq, ids.bk, ids.bv, ids.bo,
        ];
        let x = (uniform(&mut r, 16, -2.0, 2.0), vec![4usize, 4]);
        let ids2 = ids.clone();
        checks.push(gc_params(
            "layer attention",
            &ps,
            &all,
            std::slice::from_ref(&x),
            LAYER_TOL,
            move |_t, b, extra| ids.bind(b).forward(&extra[0], None),
        ));
        checks.push(gc_params(
            "layer attention (masked)",
            &ps,
            &all,
            &[x],
            LAYER_TOL,
            move |_t, b, extra| {
                ids2.bind(b)
                    .forward(&extra[0], Some(&[false, true, false, false]))
            },
        ));
    }

    // convolution block at the frame-encoder kernel size
    checks.push(gc(
        "layer conv_block (kernel 9)",
        |_t, i| i[0].conv1d(&i[1], &i[2]),
        &[
            (uniform(&mut r, 12, -2.0, 2.0), vec![6, 2]),
            (uniform(&mut r, 36, -0.5, 0.5), vec![2, 2, 9]),
            (uniform(&mut r, 2, -0.5, 0.5), vec![2]),
        ],
        LAYER_TOL,
    ));

    // variance predictor
    {
        let mut ps = ParamStore::new();
        let ids = VariancePredictorIds::register(&mut ps, "pred", 4, &mut r);
        let all = [
            ids.conv1.w,
            ids.conv1.b,
            ids.norm1.gain,
            ids.norm1.bias,
            ids.conv2.w,
            ids.conv2.b,
            ids.norm2.gain,
            ids.norm2.bias,
            ids.head_w,
            ids.head_b,
        ];
        checks.push(gc_params(
            "layer variance_predictor",
            &ps,
            &all,
            &[(uniform(&mut r, 12, -2.0, 2.0), vec![3, 4])],
            LAYER_TOL,
            move |_t, b, extra| ids.bind(b).forward(&extra[0]),
        ));
    }

    // decoder: teacher-forced sequence on a tiny config
    {
        let mut ps = ParamStore::new();
        let ids = DecoderIds::register(&mut ps, "dec", 4, 3, 4, 4, &mut r);
        let all = [
            ids.prenet_w1,
            ids.prenet_b1,
            ids.prenet_w2,
            ids.prenet_b2,
            ids.cell_w1,
            ids.cell_w2,
            ids.cell_w3,
            ids.cell_b_c,
            ids.cell_b_sigma,
            ids.cell_b_out,
            ids.alpha,
            ids.beta,
            ids.head_w,
            ids.head_b,
        ];
        checks.push(gc_params(
            "layer decoder (teacher-forced sequence)",
            &ps,
            &all,
            &[
                (uniform(&mut r, 12, -2.0, 2.0), vec![3, 4]),
                (uniform(&mut r, 9, -1.0, 1.0), vec![3, 3]),
            ],
            LAYER_TOL,
            move |_t, b, extra| {
                ids.bind(b)
                    .decode_sequence(&extra[0], Some(&extra[1]), None)
            },
        ));
    }

    // linguistic encoder, reduced hidden size, parameter subset
    {
        let mut ps = ParamStore::new();
        let ids = LinguisticEncoderIds::register(&mut ps, "ling", 4, 8, 2, 1, &mut r);
        let subset = [
            ids.embed,
            ids.blocks[0].attn.wq,
            ids.blocks[0].rnn.w1,
            ids.blocks[0].rnn.alpha,
            ids.blocks[0].norm1.gain,
            ids.blocks[0].norm2.bias,
        ];
        let seq = SymbolSequence {
            symbols: vec![0, 2, 1],
            is_boundary: vec![false, false, false],
        };
        checks.push(gc_params(
            "encoder linguistic (hidden 8)",
            &ps,
            &subset,
            &[],
            LAYER_TOL,
            move |_t, b, _| ids.bind(b).forward(&seq, 0.0, None),
        ));
    }

    // frame encoder, reduced config, parameter subset
    {
        let mut ps = ParamStore::new();
        let ids = FrameEncoderIds::register(&mut ps, "frame", 8, 2, 1, 9, 4, &mut r);
        let subset = [
            ids.blocks[0].attn.wq,
            ids.blocks[0].conv1.w,
            ids.blocks[0].sain1.gain_proj,
            ids.blocks[0].sain2.bias_proj,
        ];
        checks.push(gc_params(
            "encoder frame (hidden 8)",
            &ps,
            &subset,
            &[
                (uniform(&mut r, 48, -2.0, 2.0), vec![6, 8]),
                (uniform(&mut r, 4, -1.0, 1.0), vec![4]),
            ],
            LAYER_TOL,
            move |_t, b, extra| ids.bind(b).forward(&extra[0], &extra[1], 0.0, None),
        ));
    }

    // denoiser miniature: 2 blocks, 8 channels
    {
        let mut ps = ParamStore::new();
        let ids = DenoiserIds::register(&mut ps, "den", 8, 8, 8, 2, 3, 4, 8, &mut r);
        // the production head starts at zero; give it values so gradients
        // reach every block during the check
        let n = ps.entry(ids.out_w2).data.len();
        *ps.data_mut(ids.out_w2) = uniform(&mut r, n, -0.4, 0.4);
        let subset = [
            ids.in_w,
            ids.step_w1,
            ids.blocks[0].cond_w,
            ids.blocks[0].conv.w,
            ids.blocks[0].sain.gain_proj,
            ids.blocks[1].skip_w,
            ids.out_w1,
            ids.out_w2,
        ];
        checks.push(gc_params(
            "denoiser (2 blocks, 8 channels)",
            &ps,
            &subset,
            &[
                (uniform(&mut r, 24, -2.0, 2.0), vec![3, 8]),
                (uniform(&mut r, 24, -2.0, 2.0), vec![3, 8]),
                (uniform(&mut r, 4, -1.0, 1.0), vec![4]),
            ],
            LAYER_TOL,
            move |_t, b, extra| ids.bind(b).forward(&extra[0], &extra[2], &extra[1], 5),
        ));
    }

    checks.push(end_to_end_check());
}

fn miniature_model() -> AcousticModel {
    let mut c = Config::desk();
    c.model.hidden = 8;
    c.model.heads = 2;
    c.model.linguistic_blocks = 1;
    c.model.frame_blocks = 1;
    c.model.mel_channels = 4;
    c.model.prenet_dim = 4;
    c.model.decoder_dim = 8;
    c.model.residual_blocks = 2;
    c.model.residual_channels = 8;
    c.model.step_embed_dim = 8;
    // the denoiser gradient attenuator is deliberately not a true gradient;
    // it gets its own dedicated check, so the end-to-end comparison against
    // finite differences runs with the factor disabled
    c.model.denoiser_grad_scale = 1.0;
    c.corpus.utterances = 1;
    c.corpus.min_phonemes = 3;
    c.corpus.max_phonemes = 4;
    c.corpus.max_duration = 3;
    AcousticModel::new(c).expect("miniature config is valid")
}

/// The full training loss on a miniature model with a fixed diffusion draw,
/// checked against finite differences over a parameter cross-section.
fn end_to_end_check() -> Check {
    let mut model = miniature_model();
    let data = corpus::generate(&model.config.corpus, model.config.model.mel_channels);
    let utt = data.into_iter().next().expect("one utterance");
    // the zero-initialized denoiser head would gate its upstream gradients
    let n = model.store.entry(model.denoiser.out_w2).data.len();
    let mut r = rng(0xE2E);
    *model.store.data_mut(model.denoiser.out_w2) = uniform(&mut r, n, -0.4, 0.4);

    let subset = [
        model.ling.embed,
        model.ling.blocks[0].rnn.w2,
        model.dur_pred.head_w,
        model.var_embed.pitch_w,
        model.style_table,
        model.frame.blocks[0].sain1.gain_proj,
        model.decoder.cell_w1,
        model.denoiser.blocks[0].conv.b,
        model.denoiser.out_w2,
    ];
    let eps = gaussian_vec(&mut r, utt.mel.data.len());
    let store = model.store.clone();
    gc_params(
        "end-to-end miniature training loss",
        &store,
        &subset,
        &[],
        LAYER_TOL,
        move |_t, b, _| {
            let draw = DiffusionDraw {
                t: 7,
                eps: eps.clone(),
            };
            Ok(model.forward_train_draw(b, &utt, draw, None)?.total)
        },
    )
}

pub fn gradcheck_suite() -> Vec<Check> {
    let mut checks = Vec::new();
    primitive_checks(&mut checks);
    layer_checks(&mut checks);
    checks
}

// ── Invariant checks ─────────────────────────────────────────────────

pub fn invariants_suite() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut r = rng(0x14);

    // SwishRNN pooling limit: |c - max(prev, x)| < 1e-3 once the gap >= 20
    {
        let tape = Tape::new();
        let one = tape.scalar(1.0);
        let zero = tape.scalar(0.0);
        let mut worst: f64 = 0.0;
        for prev in [-40.0, -20.0, 0.0, 10.0, 35.0] {
            for gap in [20.0, 25.0, 60.0] {
                for sign in [-1.0, 1.0] {
                    let x1v = prev + sign * gap;
                    let c0 = tape.constant(vec![prev], &[1]);
                    let x1 = tape.constant(vec![x1v], &[1, 1]);
                    let c = swish_recurrence(&x1, &one, &zero, Some(&c0))
                        .unwrap()
                        .data()[0];
                    worst = worst.max((c - prev.max(x1v)).abs());
                }
            }
        }
        checks.push(Check::measured(
            "swishrnn pooling limit (gap >= 20)",
            worst,
            1e-3,
        ));
    }

    // SwishRNN against an independent scalar recurrence
    {
        let tape = Tape::new();
        let one = tape.scalar(1.0);
        let zero = tape.scalar(0.0);
        let x1_data = uniform(&mut r, 10, -2.0, 2.0);
        let x1 = tape.constant(x1_data.clone(), &[5, 2]);
        let got = swish_recurrence(&x1, &one, &zero, None).unwrap().data();
        let mut c = [0.0f64; 2];
        let mut worst: f64 = 0.0;
        for i in 0..5 {
            for j in 0..2 {
                let x = x1_data[i * 2 + j];
                let pre = c[j] - x;
                c[j] = pre / (1.0 + (-pre).exp()) + x;
                worst = worst.max((got[i * 2 + j] - c[j]).abs());
            }
        }
        checks.push(Check::measured(
            "swishrnn recurrence vs scalar loop",
            worst,
            1e-12,
        ));
    }

    // SAIN semantics
    {
        let tape = Tape::new();
        let (t, c) = (12usize, 3usize);
        let x_data = uniform(&mut r, t * c, -3.0, 3.0);
        let x = tape.constant(x_data.clone(), &[t, c]);
        let ones = tape.constant(vec![1.0; c], &[c]);
        let zeros = tape.constant(vec![0.0; c], &[c]);
        let y = sain_normalize(&x, &ones, &zeros).unwrap().data();
        let mut worst_mean: f64 = 0.0;
        let mut worst_std: f64 = 0.0;
        for ch in 0..c {
            let mean: f64 = (0..t).map(|f| y[f * c + ch]).sum::<f64>() / t as f64;
            let var: f64 = (0..t).map(|f| (y[f * c + ch] - mean).powi(2)).sum::<f64>() / t as f64;
            worst_mean = worst_mean.max(mean.abs());
            worst_std = worst_std.max((var.sqrt() - 1.0).abs());
        }
        checks.push(Check::measured(
            "sain unit gain: channel mean",
            worst_mean,
            1e-9,
        ));
        checks.push(Check::measured(
            "sain unit gain: channel std-1",
            worst_std,
            1e-6,
        ));

        // constant channel maps to the bias
        let xc = tape.constant(vec![4.2; t * c], &[t, c]);
        let bias = tape.constant(vec![0.7, -0.3, 0.0], &[c]);
        let g = tape.constant(vec![1.3, 0.8, 1.0], &[c]);
        let yc = sain_normalize(&xc, &g, &bias).unwrap().data();
        let worst: f64 = (0..t * c)
            .map(|i| (yc[i] - bias.data()[i % c]).abs())
            .fold(0.0, f64::max);
        checks.push(Check::measured(
            "sain constant channel -> bias",
            worst,
            1e-12,
        ));

        // affine input invariance
        let resc: Vec<f64> = x_data.iter().map(|v| 2.6 * v - 0.9).collect();
        let x2 = tape.constant(resc, &[t, c]);
        let y1 = sain_normalize(&x, &g, &bias).unwrap().data();
        let y2 = sain_normalize(&x2, &g, &bias).unwrap().data();
        let worst: f64 = y1
            .iter()
            .zip(&y2)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        checks.push(Check::measured("sain affine-input invariance", worst, 1e-9));
    }

    // attention rows sum to one over unmasked positions
    {
        let mut ps = ParamStore::new();
        let ids = MhaIds::register(&mut ps, "attn", 4, 2, &mut r);
        let tape = Tape::new();
        let mha = ids.bind(&ps.bind(&tape));
        let x = tape.constant(uniform(&mut r, 20, -2.0, 2.0), &[5, 4]);
        let mut worst: f64 = 0.0;
        for mask in [None, Some([false, false, true, false, true].as_slice())] {
            let (_, weights) = mha.forward_with_weights(&x, mask).unwrap();
            for w in weights {
                let d = w.data();
                for row in 0..5 {
                    let sum: f64 = d[row * 5..(row + 1) * 5].iter().sum();
                    worst = worst.max((sum - 1.0).abs());
                    if let Some(m) = mask {
                        for (j, &masked) in m.iter().enumerate() {
                            if masked {
                                worst = worst.max(d[row * 5 + j].abs());
                            }
                        }
                    }
                }
            }
        }
        checks.push(Check::measured("attention rows sum to one", worst, 1e-12));
    }

    // alignment contracts over 1000 random cases
    {
        let tape = Tape::new();
        let hidden = 3;
        let mut fail = 0usize;
        for _ in 0..1000 {
            let n = r.random_range(1..12);
            let mut flags: Vec<bool> = (0..n).map(|_| r.random::<f64>() < 0.4).collect();
            if flags.iter().all(|&b| b) {
                flags[r.random_range(0..n)] = false;
            }
            let seq = SymbolSequence {
                symbols: vec![0; n],
                is_boundary: flags.clone(),
            };
            let h = tape.constant(uniform(&mut r, n * hidden, -1.0, 1.0), &[n, hidden]);
            let kept = skip_select(&h, &seq).unwrap();
            // exactness: kept rows are the non-boundary rows, filter-oracle order
            let expect: Vec<usize> = flags
                .iter()
                .enumerate()
                .filter_map(|(i, b)| (!b).then_some(i))
                .collect();
            let h_data = h.data();
            let k_data = kept.data();
            let mut ok = kept.shape()[0] == expect.len();
            if ok {
                for (pos, &src) in expect.iter().enumerate() {
                    for ch in 0..hidden {
                        if k_data[pos * hidden + ch] != h_data[src * hidden + ch] {
                            ok = false;
                        }
                    }
                }
            }
            let durations: Vec<u32> = (0..expect.len()).map(|_| r.random_range(0..5)).collect();
            let total: u32 = durations.iter().sum();
            if total == 0 {
                ok &= length_regulate(&kept, &durations).is_err();
            } else {
                let e = length_regulate(&kept, &durations).unwrap();
                ok &= e.shape()[0] == total as usize;
            }
            if !ok {
                fail += 1;
            }
        }
        checks.push(Check::measured(
            "skip-select + length-regulate (1000 cases)",
            fail as f64,
            0.0,
        ));
    }

    // quantization always yields at least one frame
    {
        let mut fail = 0usize;
        for _ in 0..500 {
            let n = r.random_range(1..8);
            let preds = uniform(&mut r, n, -2.0, 4.0);
            let q = quantize_durations(&preds);
            if q.iter().sum::<u32>() < 1 {
                fail += 1;
            }
        }
        checks.push(Check::measured(
            "quantized durations sum >= 1 (500 cases)",
            fail as f64,
            0.0,
        ));
    }

    // scale_gradient: identity forward, exact factor backward
    {
        let tape = Tape::new();
        let x_data = uniform(&mut r, 6, -2.0, 2.0);
        let x = tape.leaf(x_data.clone(), &[6]);
        let y = x.scale_grad(0.1);
        let fwd_err = y
            .data()
            .iter()
            .zip(&x_data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        checks.push(Check::measured(
            "scale_gradient forward is bit-exact",
            fwd_err,
            0.0,
        ));

        y.mul(&y).unwrap().sum_all().backward().unwrap();
        let got = x.grad().unwrap();
        let worst = got
            .iter()
            .zip(&x_data)
            .map(|(g, v)| (g - 0.1 * 2.0 * v).abs())
            .fold(0.0f64, f64::max);
        checks.push(Check::measured(
            "scale_gradient backward factor 0.1",
            worst,
            1e-10,
        ));

        // factor 1 is a no-op in both directions
        let tape = Tape::new();
        let x = tape.leaf(x_data.clone(), &[6]);
        let y = x.scale_grad(1.0);
        y.mul(&y).unwrap().sum_all().backward().unwrap();
        let worst = x
            .grad()
            .unwrap()
            .iter()
            .zip(&x_data)
            .map(|(g, v)| (g - 2.0 * v).abs())
            .fold(0.0f64, f64::max)
            .max(
                y.data()
                    .iter()
                    .zip(&x_data)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            );
        checks.push(Check::measured(
            "scale_gradient factor 1 is a no-op",
            worst,
            0.0,
        ));
    }

    // gradient accumulation additivity
    {
        let tape = Tape::new();
        let x_data = uniform(&mut r, 4, -2.0, 2.0);
        let x = tape.leaf(x_data.clone(), &[4]);
        let f = x.mul(&x).unwrap().sum_all();
        let g = x.scale(3.0).sum_all();
        f.backward().unwrap();
        g.backward().unwrap();
        let got = x.grad().unwrap();
        let worst = got
            .iter()
            .zip(&x_data)
            .map(|(gv, v)| (gv - (2.0 * v + 3.0)).abs())
            .fold(0.0f64, f64::max);
        checks.push(Check::measured(
            "backward accumulation is additive",
            worst,
            1e-12,
        ));
    }

    // bit determinism of a small forward/backward under a fixed seed
    {
        let run = || {
            let mut rr = rng(0xD5);
            let tape = Tape::new();
            let x = tape.leaf(
                (0..12)
                    .map(|_| rr.sample::<f64, _>(StandardNormal))
                    .collect(),
                &[3, 4],
            );
            let w = tape.leaf(
                (0..8)
                    .map(|_| rr.sample::<f64, _>(StandardNormal))
                    .collect(),
                &[4, 2],
            );
            let y = x
                .matmul(&w)
                .unwrap()
                .tanh()
                .softmax_rows()
                .unwrap()
                .mean_all();
            y.backward().unwrap();
            let mut bits: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
            bits.extend(x.grad().unwrap().iter().map(|v| v.to_bits()));
            bits
        };
        let equal = run() == run();
        checks.push(Check {
            name: "determinism: same seed, same bits".into(),
            max_err: if equal { 0.0 } else { f64::INFINITY },
            tol: 0.0,
            pass: equal,
        });
    }

    // encoders stay finite on 100 random N(0,1) inputs
    {
        let mut ps = ParamStore::new();
        let ids = FrameEncoderIds::register(&mut ps, "frame", 8, 2, 2, 9, 8, &mut r);
        let tape = Tape::new();
        let enc = ids.bind(&ps.bind(&tape));
        let mut bad = 0usize;
        for trial in 0..100 {
            let frames = 1 + trial % 9;
            let e = tape.constant(
                (0..frames * 8)
                    .map(|_| r.sample::<f64, _>(StandardNormal))
                    .collect(),
                &[frames, 8],
            );
            let s = tape.constant(
                (0..8).map(|_| r.sample::<f64, _>(StandardNormal)).collect(),
                &[8],
            );
            let out = enc.forward(&e, &s, 0.0, None).unwrap();
            if out.shape()[0] != frames || out.data().iter().any(|v| !v.is_finite()) {
                bad += 1;
            }
        }
        checks.push(Check::measured(
            "frame encoder finite on 100 random inputs",
            bad as f64,
            0.0,
        ));
    }

    // decoder: teacher-forced sequence equals the manual step loop bit-exactly
    {
        let mut ps = ParamStore::new();
        let ids = DecoderIds::register(&mut ps, "dec", 4, 3, 4, 4, &mut r);
        let tape = Tape::new();
        let dec = ids.bind(&ps.bind(&tape));
        let frames = 6;
        let e = tape.constant(uniform(&mut r, frames * 4, -1.5, 1.5), &[frames, 4]);
        let targets = tape.constant(uniform(&mut r, frames * 3, -1.0, 1.0), &[frames, 3]);
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
        let exact = seq == manual;
        checks.push(Check {
            name: "decoder teacher-forced == step loop (bit)".into(),
            max_err: if exact { 0.0 } else { f64::INFINITY },
            tol: 0.0,
            pass: exact,
        });
        let free = dec.decode_sequence(&e, None, None).unwrap();
        checks.push(Check::measured(
            "decoder free run emits exactly T frames",
            (free.shape()[0] as f64 - frames as f64).abs(),
            0.0,
        ));
    }

    // layer norm of a constant row vanishes pre-affine
    {
        let tape = Tape::new();
        let x = tape.constant(vec![2.75; 8], &[2, 4]);
        let worst = layer_norm_core(&x, NORM_EPS)
            .unwrap()
            .data()
            .iter()
            .map(|v| v.abs())
            .fold(0.0f64, f64::max);
        checks.push(Check::measured(
            "layer_norm constant row -> zeros",
            worst,
            1e-9,
        ));
    }

    checks
}

// ── Diffusion oracle checks ──────────────────────────────────────────

pub fn diffusion_suite() -> Vec<Check> {
    let mut checks = Vec::new();
    let sched = DiffusionSchedule::new(70, 30, 1e-4, 0.06).expect("paper schedule");

    // schedule identities, bitwise
    {
        let mut worst: f64 = 0.0;
        let mut prod = 1.0;
        let mut exact = sched.alpha_bar(0) == 1.0;
        for t in 1..=70 {
            worst = worst.max((sched.alpha(t) - (1.0 - sched.beta(t))).abs());
            prod *= sched.alpha(t);
            exact &= sched.alpha_bar(t) == prod;
            exact &= sched.alpha_bar(t) < sched.alpha_bar(t - 1);
        }
        checks.push(Check::measured("schedule: alpha = 1 - beta", worst, 0.0));
        checks.push(Check {
            name: "schedule: alpha_bar recurrence exact, strictly decreasing".into(),
            max_err: if exact { 0.0 } else { f64::INFINITY },
            tol: 0.0,
            pass: exact,
        });
        let endpoint_oracle: f64 = (0..70)
            .map(|i| 1.0 - (1e-4 + (0.06 - 1e-4) * i as f64 / 69.0))
            .product();
        checks.push(Check::measured(
            "schedule: endpoint vs cumulative-product oracle",
            (sched.alpha_bar(70) - endpoint_oracle).abs(),
            1e-15,
        ));
    }

    // q_sample marginal and composition consistency, 1e5 scalar trials
    {
        let t = 30usize;
        let m0 = 0.7;
        let trials = 100_000;
        let mut r = rng(0x3C);
        let mut comp_sum = 0.0;
        let mut comp_sq = 0.0;
        let mut closed_sum = 0.0;
        let mut closed_sq = 0.0;
        for _ in 0..trials {
            let mut x = m0;
            for step in 1..=t {
                let b = sched.beta(step);
                let z: f64 = r.sample(StandardNormal);
                x = (1.0 - b).sqrt() * x + b.sqrt() * z;
            }
            comp_sum += x;
            comp_sq += x * x;
            let e: f64 = r.sample(StandardNormal);
            let y = sched.alpha_bar(t).sqrt() * m0 + (1.0 - sched.alpha_bar(t)).sqrt() * e;
            closed_sum += y;
            closed_sq += y * y;
        }
        let n = trials as f64;
        let comp_mean = comp_sum / n;
        let comp_var = comp_sq / n - comp_mean * comp_mean;
        let closed_mean = closed_sum / n;
        let closed_var = closed_sq / n - closed_mean * closed_mean;
        let want_mean = sched.alpha_bar(t).sqrt() * m0;
        let want_var = 1.0 - sched.alpha_bar(t);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        checks.push(Check::measured(
            "q_sample marginal mean (1e5 trials)",
            rel(closed_mean, want_mean),
            0.01,
        ));
        checks.push(Check::measured(
            "q_sample marginal variance (1e5 trials)",
            rel(closed_var, want_var),
            0.01,
        ));
        checks.push(Check::measured(
            "composed single steps: mean (1e5 trials)",
            rel(comp_mean, want_mean),
            0.01,
        ));
        checks.push(Check::measured(
            "composed single steps: variance (1e5 trials)",
            rel(comp_var, want_var),
            0.01,
        ));
    }

    // reverse step with the exact noise recovers the posterior mean
    {
        let mut r = rng(0x47);
        let mut worst: f64 = 0.0;
        for t in [1usize, 2, 15, 30] {
            let m0 = gaussian_vec(&mut r, 6);
            let eps = gaussian_vec(&mut r, 6);
            let ab = sched.alpha_bar(t);
            let mt: Vec<f64> = m0
                .iter()
                .zip(&eps)
                .map(|(m, e)| ab.sqrt() * m + (1.0 - ab).sqrt() * e)
                .collect();
            let got = reverse_step(&mt, &eps, t, &[0.0; 6], &sched).unwrap();
            let ab_prev = sched.alpha_bar(t - 1);
            for i in 0..6 {
                let want = (ab_prev.sqrt() * sched.beta(t) * m0[i]
                    + sched.alpha(t).sqrt() * (1.0 - ab_prev) * mt[i])
                    / (1.0 - ab);
                worst = worst.max((got[i] - want).abs());
            }
        }
        checks.push(Check::measured(
            "reverse_step oracle-noise posterior mean",
            worst,
            1e-12,
        ));
    }

    // ELBO terms with a perfect predictor
    {
        let m0 = vec![0.8, -0.6, 0.1, 1.4];
        let (m0c, sc) = (m0.clone(), sched.clone());
        let terms = elbo_terms(&m0, &sched, &mut rng(0xE1), move |xt, t| {
            let ab = sc.alpha_bar(t);
            Ok(xt
                .iter()
                .zip(&m0c)
                .map(|(x, m)| (x - ab.sqrt() * m) / (1.0 - ab).sqrt())
                .collect())
        })
        .unwrap();
        let worst = terms.iter().cloned().fold(0.0f64, f64::max);
        checks.push(Check::measured(
            "elbo terms vanish for a perfect predictor",
            worst,
            1e-10,
        ));
    }

    // Gaussian KL identities and the quadrature oracle
    {
        let mut worst: f64 = 0.0;
        for (d, var) in [(0.4, 0.3), (1.2, 0.9)] {
            worst = worst.max((gaussian_kl(0.0, var, d, var) - d * d / (2.0 * var)).abs());
        }
        checks.push(Check::measured(
            "gaussian KL mean-mismatch identity",
            worst,
            1e-12,
        ));

        let quad = |mu1: f64, var1: f64, mu2: f64, var2: f64| {
            let sd1 = var1.sqrt();
            let (lo, hi) = (mu1 - 14.0 * sd1, mu1 + 14.0 * sd1);
            let n = 40_000;
            let h = (hi - lo) / n as f64;
            let p = |x: f64, mu: f64, var: f64| {
                (-(x - mu) * (x - mu) / (2.0 * var)).exp()
                    / (2.0 * std::f64::consts::PI * var).sqrt()
            };
            let f = |x: f64| {
                let p1 = p(x, mu1, var1);
                if p1 <= 0.0 {
                    0.0
                } else {
                    p1 * (p1.ln() - p(x, mu2, var2).ln())
                }
            };
            let mut acc = f(lo) + f(hi);
            for i in 1..n {
                acc += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0
        };
        let mut worst: f64 = 0.0;
        for (mu1, var1, mu2, var2) in [(0.0, 1.0, 0.4, 0.8), (0.3, 0.05, 0.32, 0.04)] {
            worst =
                worst.max((gaussian_kl(mu1, var1, mu2, var2) - quad(mu1, var1, mu2, var2)).abs());
        }
        checks.push(Check::measured(
            "gaussian KL vs quadrature oracle",
            worst,
            1e-4,
        ));
    }

    // noise loss oracles
    {
        let mut r = rng(0x10);
        let tape = Tape::new();
        let n = 24;
        let mut acc = 0.0;
        let trials = 300;
        for _ in 0..trials {
            let eps = tape.constant(gaussian_vec(&mut r, n), &[n]);
            let zero = tape.zeros(&[n]);
            acc += crate::diffusion::noise_prediction_loss(&eps, &zero)
                .unwrap()
                .item();
        }
        checks.push(Check::measured(
            "noise loss with zero predictor ~ E[eps^2] = 1",
            (acc / trials as f64 - 1.0).abs(),
            0.08,
        ));
        let eps = tape.constant(gaussian_vec(&mut r, n), &[n]);
        checks.push(Check::measured(
            "noise loss with perfect predictor = 0",
            crate::diffusion::noise_prediction_loss(&eps, &eps)
                .unwrap()
                .item(),
            0.0,
        ));
    }

    // a randomly initialized denoiser yields a finite, positive loss on
    // every draw
    {
        let mut r = rng(0x77);
        let mut ps = ParamStore::new();
        let ids = DenoiserIds::register(&mut ps, "den", 4, 6, 8, 2, 3, 4, 8, &mut r);
        let tape = Tape::new();
        let den = ids.bind(&ps.bind(&tape));
        let frames = 5;
        let cond = tape.constant(uniform(&mut r, frames * 6, -1.0, 1.0), &[frames, 6]);
        let style = tape.constant(uniform(&mut r, 4, -1.0, 1.0), &[4]);
        let m0 = tape.constant(uniform(&mut r, frames * 4, -1.0, 1.0), &[frames, 4]);
        let mut bad = 0usize;
        for _ in 0..100 {
            let (loss, _) =
                crate::diffusion::diffusion_loss(&den, &m0, &style, &cond, &sched, &mut r).unwrap();
            let v = loss.item();
            if !(v.is_finite() && v > 0.0) {
                bad += 1;
            }
        }
        checks.push(Check::measured(
            "diffusion loss finite and positive (100 draws)",
            bad as f64,
            0.0,
        ));
    }

    // shallow sampler contracts
    {
        let empty = DiffusionSchedule::new(70, 0, 1e-4, 0.06).unwrap();
        let dec = vec![0.4, -0.9, 0.3];
        let out = shallow_sample(&dec, &empty, &mut rng(1), false, |_, _| {
            Err(Error::InvalidArgument {
                op: "predict",
                msg: "must not be called".into(),
            })
        })
        .unwrap();
        let worst = out
            .iter()
            .zip(&dec)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        checks.push(Check::measured(
            "shallow sampling with S=0 is identity",
            worst,
            0.0,
        ));

        let predict = |m: &[f64], _t: usize| Ok(m.iter().map(|v| 0.2 * v).collect());
        let a = shallow_sample(&dec, &sched, &mut rng(9), false, predict).unwrap();
        let b = shallow_sample(&dec, &sched, &mut rng(9), false, predict).unwrap();
        let identical = a == b;
        checks.push(Check {
            name: "shallow sampling bit-identical under one seed".into(),
            max_err: if identical { 0.0 } else { f64::INFINITY },
            tol: 0.0,
            pass: identical,
        });
    }

    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants_suite_passes() {
        let checks = invariants_suite();
        for c in &checks {
            assert!(c.pass, "{}", c.report_line());
        }
    }

    #[test]
    fn diffusion_suite_passes() {
        let checks = diffusion_suite();
        for c in &checks {
            assert!(c.pass, "{}", c.report_line());
        }
    }

    #[test]
    fn gradcheck_suite_passes() {
        let checks = gradcheck_suite();
        for c in &checks {
            assert!(c.pass, "{}", c.report_line());
        }
    }

    #[test]
    fn suite_parsing() {
        assert_eq!("all".parse::<Suite>().unwrap(), Suite::All);
        assert_eq!("gradcheck".parse::<Suite>().unwrap(), Suite::Gradcheck);
        assert!("bogus".parse::<Suite>().is_err());
    }
}
