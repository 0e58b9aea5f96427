//! Presets and TOML configuration.
//!
//! Two named presets exist: `paper` (the full-size architecture: hidden 256,
//! 4+4 encoder blocks, 2 heads, conv kernel 9, 20 residual denoiser blocks
//! of kernel 3, T=70, S=30) and `desk` (a scaled-down variant that trains in
//! minutes on one CPU core). A config file overlays individual fields on top
//! of the chosen preset.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (paper|desk)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub heads: usize,
    pub linguistic_blocks: usize,
    pub frame_blocks: usize,
    pub frame_conv_kernel: usize,
    pub mel_channels: usize,
    pub prenet_dim: usize,
    pub decoder_dim: usize,
    pub residual_blocks: usize,
    pub residual_channels: usize,
    pub denoiser_kernel: usize,
    pub step_embed_dim: usize,
    pub diffusion_steps: usize,
    pub shallow_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub dropout: f64,
    /// Dropout inside the decoder prenet, kept active at inference as in
    /// the Tacotron family (the previous-frame pathway stays stochastic).
    pub prenet_dropout: f64,
    /// Multiplier on gradients flowing from the denoiser back into the rest
    /// of the model (0.1 = reduce by a factor of ten).
    pub denoiser_grad_scale: f64,
    /// Re-noise the decoder output to q(x_S | ·) before reverse sampling
    /// instead of using it directly.
    pub noise_shallow_start: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub phoneme_vocab: usize,
    pub boundary_symbols: usize,
    pub styles: usize,
    pub speakers: usize,
    pub utterances: usize,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
    pub min_duration: u32,
    pub max_duration: u32,
    pub boundary_prob: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Gradient descent with momentum.
    Sgd,
    /// Adam with the standard (0.9, 0.999, 1e-8) moment settings.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    /// Cosine-decay floor as a fraction of `learning_rate`; 1.0 keeps the
    /// rate constant.
    pub lr_final_fraction: f64,
    pub momentum: f64,
    pub steps: u64,
    pub seed: u64,
    /// Write a checkpoint every this many steps (and always at the end).
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub model: ModelConfig,
    pub corpus: CorpusConfig,
    pub train: TrainSettings,
}

impl Config {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Config::paper(),
            Preset::Desk => Config::desk(),
        }
    }

    pub fn paper() -> Self {
        Config {
            model: ModelConfig {
                hidden: 256,
                heads: 2,
                linguistic_blocks: 4,
                frame_blocks: 4,
                frame_conv_kernel: 9,
                mel_channels: 80,
                prenet_dim: 128,
                decoder_dim: 256,
                residual_blocks: 20,
                residual_channels: 256,
                denoiser_kernel: 3,
                step_embed_dim: 128,
                diffusion_steps: 70,
                shallow_steps: 30,
                beta_min: 1e-4,
                beta_max: 0.06,
                dropout: 0.1,
                prenet_dropout: 0.5,
                denoiser_grad_scale: 0.1,
                noise_shallow_start: false,
            },
            corpus: CorpusConfig {
                phoneme_vocab: 16,
                boundary_symbols: 2,
                styles: 12,
                speakers: 7,
                utterances: 64,
                min_phonemes: 5,
                max_phonemes: 15,
                min_duration: 1,
                max_duration: 6,
                boundary_prob: 0.3,
                seed: 1234,
            },
            train: TrainSettings {
                optimizer: Optimizer::Adam,
                learning_rate: 1e-3,
                lr_final_fraction: 0.1,
                momentum: 0.9,
                steps: 20_000,
                seed: 42,
                checkpoint_every: 2000,
            },
        }
    }

    pub fn desk() -> Self {
        let mut c = Config::paper();
        c.model.hidden = 64;
        c.model.linguistic_blocks = 2;
        c.model.frame_blocks = 2;
        c.model.mel_channels = 16;
        c.model.prenet_dim = 32;
        c.model.decoder_dim = 64;
        c.model.residual_blocks = 8;
        c.model.residual_channels = 128;
        // a single reverse step: at desk scale the overfit decoder is already
        // accurate, and deeper chains distort more than they clean up
        c.model.shallow_steps = 1;
        c.model.dropout = 0.0;
        c.corpus.utterances = 8;
        c.train.steps = 2000;
        c.train.checkpoint_every = 500;
        c
    }

    /// Token vocabulary: phonemes followed by the boundary symbols.
    pub fn vocab_size(&self) -> usize {
        self.corpus.phoneme_vocab + self.corpus.boundary_symbols
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let checks: &[(bool, &str)] = &[
            (
                m.hidden > 0 && m.heads > 0,
                "hidden and heads must be positive",
            ),
            (
                m.hidden.is_multiple_of(m.heads),
                "hidden must be divisible by heads",
            ),
            (
                m.frame_conv_kernel % 2 == 1,
                "frame conv kernel must be odd",
            ),
            (m.denoiser_kernel % 2 == 1, "denoiser kernel must be odd"),
            (m.residual_blocks > 0, "need at least one residual block"),
            (
                m.shallow_steps <= m.diffusion_steps,
                "shallow start cannot exceed total steps",
            ),
            (self.corpus.phoneme_vocab > 0, "empty phoneme vocabulary"),
            (
                self.corpus.styles > 0 && self.corpus.speakers > 0,
                "need styles and speakers",
            ),
            (
                self.corpus.min_phonemes >= 1,
                "utterances need at least one phoneme",
            ),
            (
                self.corpus.min_phonemes <= self.corpus.max_phonemes,
                "min_phonemes exceeds max_phonemes",
            ),
            (
                self.corpus.min_duration >= 1
                    && self.corpus.min_duration <= self.corpus.max_duration,
                "bad duration range",
            ),
            (
                self.train.learning_rate > 0.0,
                "learning rate must be positive",
            ),
            (
                self.train.lr_final_fraction > 0.0 && self.train.lr_final_fraction <= 1.0,
                "lr_final_fraction must be in (0, 1]",
            ),
            (self.train.steps > 0, "step count must be positive"),
            (
                self.train.checkpoint_every > 0,
                "checkpoint_every must be positive",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config((*msg).to_string()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let c: Config =
            toml::from_str(s).map_err(|e| Error::Config(format!("parse error: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    /// Overlay a (possibly partial) TOML file on top of this config: any
    /// key present in the file replaces the preset value.
    pub fn overlay_file(&self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
        let overlay: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut base: toml::Value =
            toml::Value::try_from(self).expect("config converts to toml value");
        merge(&mut base, toml::Value::Table(overlay));
        let merged: Config = base
            .try_into()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        merged.validate()?;
        Ok(merged)
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        Config::paper().validate().unwrap();
        Config::desk().validate().unwrap();
    }

    #[test]
    fn paper_preset_architecture_constants() {
        let c = Config::paper();
        assert_eq!(c.model.diffusion_steps, 70);
        assert_eq!(c.model.shallow_steps, 30);
        assert_eq!(c.model.residual_blocks, 20);
        assert_eq!(c.model.denoiser_kernel, 3);
        assert_eq!(c.model.linguistic_blocks, 4);
        assert_eq!(c.model.frame_blocks, 4);
        assert_eq!(c.model.hidden, 256);
        assert_eq!(c.model.heads, 2);
        assert_eq!(c.model.frame_conv_kernel, 9);
        assert_eq!(c.corpus.styles, 12);
        assert_eq!(c.corpus.speakers, 7);
    }

    #[test]
    fn toml_roundtrip() {
        let c = Config::desk();
        let parsed = Config::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, parsed);
    }

    #[test]
    fn overlay_replaces_only_named_keys() {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "[model]\nhidden = 32\n\n[train]\nsteps = 7\n").unwrap();
        let c = Config::desk().overlay_file(f.path()).unwrap();
        assert_eq!(c.model.hidden, 32);
        assert_eq!(c.train.steps, 7);
        // untouched fields keep the preset values
        assert_eq!(c.model.mel_channels, 16);
        assert_eq!(c.train.momentum, 0.9);
    }

    #[test]
    fn invalid_overlay_is_rejected() {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "[model]\nheads = 3\n").unwrap();
        // 64 % 3 != 0
        assert!(Config::desk().overlay_file(f.path()).is_err());
    }
}
