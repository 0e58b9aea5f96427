//! Thin command-line front end; all logic lives in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stylemel::checkpoint::Checkpoint;
use stylemel::config::{Config, Preset};
use stylemel::corpus;
use stylemel::synth::{parse_phoneme_string, parse_style, synthesize};
use stylemel::train::{model_from_checkpoint, write_metrics_log, Trainer};
use stylemel::verify::{self, Suite};

#[derive(Parser)]
#[command(
    name = "stylemel",
    version,
    about = "Duration-informed, style-adaptive mel synthesis"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Base preset to start from.
    #[arg(long, default_value = "desk")]
    preset: Preset,
    /// TOML file overlaying individual fields on the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override (corpus seed for gen-data, training seed for train).
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> stylemel::Result<Config> {
        let mut cfg = Config::preset(self.preset);
        if let Some(path) = &self.config {
            cfg = cfg.overlay_file(path)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic corpus as .drne records.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory for the records.
        #[arg(long)]
        out: PathBuf,
        /// Number of utterances (overrides the preset).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train on a generated corpus, writing checkpoints and a metrics log.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory of .drne records.
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory for checkpoints and metrics.
        #[arg(long)]
        out: PathBuf,
        /// Step count (overrides the preset).
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Synthesize a mel file from a phoneme string.
    Synth {
        /// Trained checkpoint (.drnc).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Whitespace-separated phoneme ids, `|` and `#` for boundaries.
        #[arg(long)]
        phonemes: String,
        /// Style id or label (e.g. `3` or `happy`).
        #[arg(long, default_value = "0")]
        style: String,
        /// Speaker id.
        #[arg(long, default_value_t = 0)]
        speaker: u32,
        /// Output directory for mel files.
        #[arg(long)]
        out: PathBuf,
        /// Sampling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the decoder output before denoising.
        #[arg(long)]
        emit_predenoiser: bool,
    },
    /// Run a verification suite; exits nonzero on failure.
    Verify {
        /// gradcheck | invariants | diffusion-oracle | all
        #[arg(default_value = "all")]
        suite: Suite,
    },
}

fn run() -> stylemel::Result<bool> {
    match Cli::parse().cmd {
        Cmd::GenData { cfg, out, count } => {
            let mut config = cfg.resolve()?;
            if let Some(seed) = cfg.seed {
                config.corpus.seed = seed;
            }
            if let Some(count) = count {
                config.corpus.utterances = count;
            }
            let utts = corpus::generate(&config.corpus, config.model.mel_channels);
            corpus::write_corpus(&out, &utts)?;
            println!(
                "wrote {} utterances ({} mel channels) to {}",
                utts.len(),
                config.model.mel_channels,
                out.display()
            );
            Ok(true)
        }
        Cmd::Train {
            cfg,
            corpus: corpus_dir,
            out,
            steps,
        } => {
            let mut config = cfg.resolve()?;
            if let Some(seed) = cfg.seed {
                config.train.seed = seed;
            }
            if let Some(steps) = steps {
                config.train.steps = steps;
            }
            let data = corpus::read_corpus(&corpus_dir)?;
            std::fs::create_dir_all(&out).map_err(|e| stylemel::Error::io(out.clone(), e))?;
            let mut trainer = Trainer::new(config.clone())?;
            let every = config.train.checkpoint_every;
            let mut metrics = Vec::new();
            for _ in 0..config.train.steps {
                let m = trainer.train_step(&data)?;
                if m.step % 100 == 0 {
                    println!("{}", m.log_line());
                }
                let step_done = m.step + 1;
                metrics.push(m);
                if step_done % every == 0 {
                    trainer
                        .checkpoint()
                        .save(&out.join(format!("checkpoint_{step_done:06}.drnc")))?;
                }
            }
            trainer
                .checkpoint()
                .save(&out.join("checkpoint_final.drnc"))?;
            write_metrics_log(&out.join("metrics.log"), &metrics)?;
            println!(
                "trained {} steps; artifacts in {}",
                trainer.step,
                out.display()
            );
            Ok(true)
        }
        Cmd::Synth {
            checkpoint,
            phonemes,
            style,
            speaker,
            out,
            seed,
            emit_predenoiser,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let model = model_from_checkpoint(&ck)?;
            let seq = parse_phoneme_string(&phonemes, &model.config)?;
            let style = parse_style(&style, &model.config)?;
            let res = synthesize(
                &model,
                &seq,
                style,
                speaker,
                seed,
                Some(&out),
                emit_predenoiser,
            )?;
            let files = res.files.expect("output directory was provided");
            println!(
                "synthesized {} frames x {} channels -> {}",
                res.denoised_mel.frames,
                res.denoised_mel.channels,
                files.denoised.display()
            );
            if let Some(pre) = files.decoder_only {
                println!("decoder-only mel -> {}", pre.display());
            }
            Ok(true)
        }
        Cmd::Verify { suite } => {
            let checks = verify::run(suite);
            for c in &checks {
                println!("{}", c.report_line());
            }
            let passed = checks.iter().filter(|c| c.pass).count();
            println!("{passed}/{} checks passed", checks.len());
            Ok(verify::all_pass(&checks))
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
