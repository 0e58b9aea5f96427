//! Inference entry points: parse a phoneme string, run the model, write mel
//! files.

use std::path::{Path, PathBuf};

use crate::alignment::SymbolSequence;
use crate::config::Config;
use crate::corpus::{write_mel, Mel, STYLE_LABELS};
use crate::error::{Error, Result};
use crate::model::{seeded_rng, AcousticModel, SYNTH_STREAM};

/// Parse a whitespace-separated phoneme string.
///
/// Tokens are phoneme ids (`0`, `7`, …), `|` for the first prosodic
/// boundary symbol and `#` for the second.
pub fn parse_phoneme_string(text: &str, config: &Config) -> Result<SymbolSequence> {
    let vocab = config.corpus.phoneme_vocab as u32;
    let boundaries = config.corpus.boundary_symbols as u32;
    let mut symbols = Vec::new();
    let mut flags = Vec::new();
    for token in text.split_whitespace() {
        let (id, boundary) = match token {
            "|" => (vocab, true),
            "#" => (vocab + 1, true),
            t => match t.parse::<u32>() {
                Ok(id) if id < vocab => (id, false),
                Ok(id) => {
                    return Err(Error::UnknownToken {
                        id,
                        vocab: vocab as usize,
                    })
                }
                Err(_) => {
                    return Err(Error::InvalidArgument {
                        op: "parse_phonemes",
                        msg: format!("unrecognized token `{t}` (phoneme id, `|`, or `#`)"),
                    })
                }
            },
        };
        if boundary && id - vocab >= boundaries {
            return Err(Error::UnknownToken {
                id,
                vocab: (vocab + boundaries) as usize,
            });
        }
        symbols.push(id);
        flags.push(boundary);
    }
    if symbols.is_empty() {
        return Err(Error::InvalidArgument {
            op: "parse_phonemes",
            msg: "empty phoneme string".into(),
        });
    }
    SymbolSequence::new(symbols, flags)
}

/// Resolve a style given either a numeric id or one of the style labels.
pub fn parse_style(text: &str, config: &Config) -> Result<u32> {
    if let Ok(id) = text.parse::<u32>() {
        if (id as usize) < config.corpus.styles {
            return Ok(id);
        }
        return Err(Error::UnknownStyle {
            id,
            count: config.corpus.styles,
        });
    }
    STYLE_LABELS
        .iter()
        .position(|&l| l == text)
        .map(|i| i as u32)
        .filter(|&i| (i as usize) < config.corpus.styles)
        .ok_or_else(|| Error::InvalidArgument {
            op: "parse_style",
            msg: format!("unknown style `{text}`"),
        })
}

pub struct SynthFiles {
    pub denoised: PathBuf,
    pub decoder_only: Option<PathBuf>,
}

pub struct SynthResult {
    pub decoder_mel: Mel,
    pub denoised_mel: Mel,
    pub durations: Vec<u32>,
    pub files: Option<SynthFiles>,
}

/// Synthesize one utterance; when `out_dir` is given, write the denoised
/// mel (and the pre-denoiser decoder mel when `emit_predenoiser` is set).
pub fn synthesize(
    model: &AcousticModel,
    seq: &SymbolSequence,
    style: u32,
    speaker: u32,
    seed: u64,
    out_dir: Option<&Path>,
    emit_predenoiser: bool,
) -> Result<SynthResult> {
    let mut rng = seeded_rng(seed, SYNTH_STREAM);
    let out = model.infer(seq, style, speaker, &mut rng)?;
    let files = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.to_path_buf(), e))?;
            let denoised = dir.join("synth.mel");
            write_mel(&denoised, &out.denoised_mel)?;
            let decoder_only = if emit_predenoiser {
                let p = dir.join("synth_predenoiser.mel");
                write_mel(&p, &out.decoder_mel)?;
                Some(p)
            } else {
                None
            };
            Some(SynthFiles {
                denoised,
                decoder_only,
            })
        }
        None => None,
    };
    Ok(SynthResult {
        decoder_mel: out.decoder_mel,
        denoised_mel: out.denoised_mel,
        durations: out.durations,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::read_mel;

    fn tiny_model() -> AcousticModel {
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
        AcousticModel::new(c).unwrap()
    }

    #[test]
    fn phoneme_string_parsing() {
        let cfg = Config::desk();
        let seq = parse_phoneme_string("3 7 | 2 # 15", &cfg).unwrap();
        assert_eq!(seq.symbols, vec![3, 7, 16, 2, 17, 15]);
        assert_eq!(
            seq.is_boundary,
            vec![false, false, true, false, true, false]
        );
        assert_eq!(seq.phoneme_count(), 4);

        assert!(parse_phoneme_string("", &cfg).is_err(), "empty string");
        assert!(
            parse_phoneme_string("3 16", &cfg).is_err(),
            "direct boundary id"
        );
        assert!(
            parse_phoneme_string("3 99", &cfg).is_err(),
            "out of vocabulary"
        );
        assert!(parse_phoneme_string("3 x", &cfg).is_err(), "garbage token");
        assert!(
            parse_phoneme_string("| |", &cfg).is_err(),
            "boundaries only"
        );
    }

    #[test]
    fn style_parsing_by_id_and_label() {
        let cfg = Config::desk();
        assert_eq!(parse_style("4", &cfg).unwrap(), 4);
        assert_eq!(parse_style("happy", &cfg).unwrap(), 1);
        assert_eq!(parse_style("taunting", &cfg).unwrap(), 11);
        assert!(parse_style("12", &cfg).is_err());
        assert!(parse_style("bogus", &cfg).is_err());
    }

    #[test]
    fn synthesize_writes_requested_files() {
        let model = tiny_model();
        let seq = parse_phoneme_string("1 2 | 3", &model.config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let res = synthesize(&model, &seq, 0, 0, 7, Some(dir.path()), true).unwrap();
        let files = res.files.unwrap();
        assert_eq!(read_mel(&files.denoised).unwrap(), res.denoised_mel);
        let pre = files.decoder_only.unwrap();
        assert_eq!(read_mel(&pre).unwrap(), res.decoder_mel);
    }

    #[test]
    fn same_seed_writes_identical_files() {
        let model = tiny_model();
        let seq = parse_phoneme_string("5 5 9", &model.config).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        synthesize(&model, &seq, 1, 2, 33, Some(d1.path()), false).unwrap();
        synthesize(&model, &seq, 1, 2, 33, Some(d2.path()), false).unwrap();
        let a = std::fs::read(d1.path().join("synth.mel")).unwrap();
        let b = std::fs::read(d2.path().join("synth.mel")).unwrap();
        assert_eq!(a, b);
    }
}
