//! Deterministic synthetic corpus and the binary `.drne` record format.
//!
//! Each utterance pairs a phoneme/boundary sequence with ground-truth
//! durations, per-phoneme pitch and pitch-range scalars, style and speaker
//! ids, and a generatively defined target mel: a seeded per-phoneme spectral
//! template, scaled by the style, with a pitch-driven sinusoidal ripple
//! across frames. The mapping is deterministic and learnable.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::SymbolSequence;
use crate::config::CorpusConfig;
use crate::error::{Error, Result};

/// The categorical style tags, addressable by name or index.
pub const STYLE_LABELS: [&str; 12] = [
    "neural",
    "happy",
    "sad",
    "angry",
    "exciting",
    "annoying",
    "amazing",
    "doubtful",
    "cunning",
    "solemn",
    "enchanting",
    "taunting",
];

/// Row-major frames×channels matrix of log-mel values.
#[derive(Debug, Clone, PartialEq)]
pub struct Mel {
    pub frames: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Mel {
    pub fn new(frames: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), frames * channels);
        Mel {
            frames,
            channels,
            data,
        }
    }

    /// Mean absolute difference, or None when shapes differ.
    pub fn l1(&self, other: &Mel) -> Option<f64> {
        if self.frames != other.frames || self.channels != other.channels {
            return None;
        }
        let n = self.data.len().max(1);
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / n as f64,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub seq: SymbolSequence,
    pub durations: Vec<u32>,
    pub pitch: Vec<f64>,
    pub pitch_range: Vec<f64>,
    pub style: u32,
    pub speaker: u32,
    pub mel: Mel,
}

impl Utterance {
    pub fn total_frames(&self) -> usize {
        self.durations.iter().map(|&d| d as usize).sum()
    }
}

/// Style index mapped to a deterministic offset in [-1, 1].
pub fn style_offset(style: u32, styles: usize) -> f64 {
    if styles <= 1 {
        0.0
    } else {
        2.0 * style as f64 / (styles - 1) as f64 - 1.0
    }
}

/// Seeded per-phoneme spectral template over the mel channels.
fn phoneme_template(seed: u64, phoneme: u32, channels: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x700 + phoneme as u64);
    (0..channels).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// The generative target mel for one utterance: per-phoneme template scaled
/// by (1 + 0.2·style_offset), plus a sinusoidal ripple across frames whose
/// frequency is driven by the phoneme's pitch scalar.
pub fn render_mel(
    cfg: &CorpusConfig,
    phonemes: &[u32],
    durations: &[u32],
    pitch: &[f64],
    style: u32,
    channels: usize,
) -> Mel {
    let frames: usize = durations.iter().map(|&d| d as usize).sum();
    let scale = 1.0 + 0.2 * style_offset(style, cfg.styles);
    let mut data = Vec::with_capacity(frames * channels);
    let mut f = 0usize;
    for ((&p, &d), &pv) in phonemes.iter().zip(durations).zip(pitch) {
        let template = phoneme_template(cfg.seed, p, channels);
        // pitch in [-1, 1] maps to a ripple frequency of 0.05..0.35
        // cycles per frame
        let freq = 0.05 + 0.15 * (pv + 1.0);
        for _ in 0..d {
            for (c, tv) in template.iter().enumerate() {
                let ripple =
                    0.35 * (2.0 * std::f64::consts::PI * freq * f as f64 + 0.9 * c as f64).sin();
                data.push(tv * scale + ripple);
            }
            f += 1;
        }
    }
    Mel::new(frames, channels, data)
}

/// Generate the full corpus; byte-identical for equal seeds.
pub fn generate(cfg: &CorpusConfig, mel_channels: usize) -> Vec<Utterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.utterances)
        .map(|_| generate_one(cfg, mel_channels, &mut rng))
        .collect()
}

fn generate_one(cfg: &CorpusConfig, mel_channels: usize, rng: &mut ChaCha8Rng) -> Utterance {
    let n_phonemes = rng.random_range(cfg.min_phonemes..=cfg.max_phonemes);
    let phonemes: Vec<u32> = (0..n_phonemes)
        .map(|_| rng.random_range(0..cfg.phoneme_vocab as u32))
        .collect();

    let mut symbols = Vec::new();
    let mut flags = Vec::new();
    for (i, &p) in phonemes.iter().enumerate() {
        symbols.push(p);
        flags.push(false);
        let last = i + 1 == phonemes.len();
        if !last && rng.random::<f64>() < cfg.boundary_prob {
            let b = cfg.phoneme_vocab as u32 + rng.random_range(0..cfg.boundary_symbols as u32);
            symbols.push(b);
            flags.push(true);
        }
    }

    let durations: Vec<u32> = (0..n_phonemes)
        .map(|_| rng.random_range(cfg.min_duration..=cfg.max_duration))
        .collect();
    let pitch: Vec<f64> = (0..n_phonemes)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let pitch_range: Vec<f64> = (0..n_phonemes)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    let style = rng.random_range(0..cfg.styles as u32);
    let speaker = rng.random_range(0..cfg.speakers as u32);

    let mel = render_mel(cfg, &phonemes, &durations, &pitch, style, mel_channels);
    Utterance {
        seq: SymbolSequence {
            symbols,
            is_boundary: flags,
        },
        durations,
        pitch,
        pitch_range,
        style,
        speaker,
        mel,
    }
}

// ── Binary record format ─────────────────────────────────────────────

pub const CORPUS_MAGIC: &[u8; 4] = b"DRNE";
pub const MEL_MAGIC: &[u8; 4] = b"DRNM";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s(w: &mut impl Write, vs: &[f64]) -> std::io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

/// Serialize one utterance record (magic, version, counts, symbols, flags,
/// durations, pitch, range, style, speaker, mel payload).
pub fn write_utterance(w: &mut impl Write, u: &Utterance) -> std::io::Result<()> {
    w.write_all(CORPUS_MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    put_u32(w, u.seq.len() as u32)?;
    put_u32(w, u.seq.phoneme_count() as u32)?;
    put_u32(w, u.mel.frames as u32)?;
    put_u32(w, u.mel.channels as u32)?;
    for &s in &u.seq.symbols {
        put_u32(w, s)?;
    }
    for &b in &u.seq.is_boundary {
        w.write_all(&[b as u8])?;
    }
    for &d in &u.durations {
        put_u32(w, d)?;
    }
    put_f64s(w, &u.pitch)?;
    put_f64s(w, &u.pitch_range)?;
    put_u32(w, u.style)?;
    put_u32(w, u.speaker)?;
    put_f64s(w, &u.mel.data)
}

pub fn read_utterance(r: &mut impl Read, path: &Path) -> Result<Utterance> {
    let bad = |msg: String| Error::format(path.to_path_buf(), msg);
    let io = |e: std::io::Error| Error::io(path.to_path_buf(), e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != CORPUS_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = get_u32(r).map_err(io)?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = get_u32(r).map_err(io)? as usize;
    let n_ph = get_u32(r).map_err(io)? as usize;
    let frames = get_u32(r).map_err(io)? as usize;
    let channels = get_u32(r).map_err(io)? as usize;

    let mut symbols = Vec::with_capacity(n);
    for _ in 0..n {
        symbols.push(get_u32(r).map_err(io)?);
    }
    let mut flags = Vec::with_capacity(n);
    let mut b = [0u8; 1];
    for _ in 0..n {
        r.read_exact(&mut b).map_err(io)?;
        flags.push(b[0] != 0);
    }
    let seq = SymbolSequence {
        symbols,
        is_boundary: flags,
    };
    if seq.phoneme_count() != n_ph {
        return Err(bad(format!(
            "phoneme count {} does not match header {n_ph}",
            seq.phoneme_count()
        )));
    }
    let mut durations = Vec::with_capacity(n_ph);
    for _ in 0..n_ph {
        durations.push(get_u32(r).map_err(io)?);
    }
    if durations.iter().map(|&d| d as usize).sum::<usize>() != frames {
        return Err(bad("duration sum does not match frame count".into()));
    }
    let pitch = get_f64s(r, n_ph).map_err(io)?;
    let pitch_range = get_f64s(r, n_ph).map_err(io)?;
    let style = get_u32(r).map_err(io)?;
    let speaker = get_u32(r).map_err(io)?;
    let mel_data = get_f64s(r, frames * channels).map_err(io)?;

    Ok(Utterance {
        seq,
        durations,
        pitch,
        pitch_range,
        style,
        speaker,
        mel: Mel::new(frames, channels, mel_data),
    })
}

/// Write one `.drne` file per utterance under `dir`.
pub fn write_corpus(dir: &Path, utterances: &[Utterance]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.to_path_buf(), e))?;
    for (i, u) in utterances.iter().enumerate() {
        let path = dir.join(format!("utt_{i:05}.drne"));
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(path.clone(), e))?;
        let mut buf = Vec::new();
        write_utterance(&mut buf, u).map_err(|e| Error::io(path.clone(), e))?;
        f.write_all(&buf).map_err(|e| Error::io(path.clone(), e))?;
    }
    Ok(())
}

/// Read every `.drne` file under `dir`, sorted by file name.
pub fn read_corpus(dir: &Path) -> Result<Vec<Utterance>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir.to_path_buf(), e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "drne"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::format(dir.to_path_buf(), "no .drne records found"));
    }
    paths
        .iter()
        .map(|p| {
            let mut f = std::fs::File::open(p).map_err(|e| Error::io(p.clone(), e))?;
            read_utterance(&mut f, p)
        })
        .collect()
}

/// Mel output file: magic, version, frame/channel counts, then the payload
/// framed exactly like the mel section of a corpus record.
pub fn write_mel(path: &Path, mel: &Mel) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + mel.data.len() * 8);
    buf.extend_from_slice(MEL_MAGIC);
    let w = |r: std::io::Result<()>| r.map_err(|e| Error::io(path.to_path_buf(), e));
    w(put_u32(&mut buf, FORMAT_VERSION))?;
    w(put_u32(&mut buf, mel.frames as u32))?;
    w(put_u32(&mut buf, mel.channels as u32))?;
    w(put_f64s(&mut buf, &mel.data))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path.to_path_buf(), e))
}

pub fn read_mel(path: &Path) -> Result<Mel> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let io = |e: std::io::Error| Error::io(path.to_path_buf(), e);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic).map_err(io)?;
    if &magic != MEL_MAGIC {
        return Err(Error::format(
            path.to_path_buf(),
            format!("bad magic {magic:?}"),
        ));
    }
    let version = get_u32(&mut f).map_err(io)?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            path.to_path_buf(),
            format!("unsupported version {version}"),
        ));
    }
    let frames = get_u32(&mut f).map_err(io)? as usize;
    let channels = get_u32(&mut f).map_err(io)? as usize;
    let data = get_f64s(&mut f, frames * channels).map_err(io)?;
    Ok(Mel::new(frames, channels, data))
}
