//! Single-threaded training loop: one utterance per step, SGD with
//! momentum, line-delimited loss metrics, and checkpointing.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, RngState};
use crate::config::{Config, Optimizer};
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::model::{seeded_rng, AcousticModel, TrainForward, TRAIN_STREAM};
use crate::params::ParamEntry;
use crate::tensor::Tape;

const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One training step's loss components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub l1: f64,
    pub dur_l2: f64,
    pub pitch_l2: f64,
    pub range_l2: f64,
    pub diff_mse: f64,
    pub total: f64,
}

impl StepMetrics {
    fn from_forward(step: u64, f: &TrainForward) -> Self {
        StepMetrics {
            step,
            l1: f.l1.item(),
            dur_l2: f.dur_l2.item(),
            pitch_l2: f.pitch_l2.item(),
            range_l2: f.range_l2.item(),
            diff_mse: f.diff_mse.item(),
            total: f.total.item(),
        }
    }

    /// `step,l1,dur_l2,pitch_l2,range_l2,diff_mse,total` as decimal text.
    pub fn log_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.l1,
            self.dur_l2,
            self.pitch_l2,
            self.range_l2,
            self.diff_mse,
            self.total
        )
    }
}

/// Write the metrics log, one record per line.
pub fn write_metrics_log(path: &Path, metrics: &[StepMetrics]) -> Result<()> {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&m.log_line());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.to_path_buf(), e))
}

/// Per-parameter optimizer buffers.
enum OptimizerState {
    Sgd {
        velocity: Vec<Vec<f64>>,
    },
    Adam {
        first: Vec<Vec<f64>>,
        second: Vec<Vec<f64>>,
    },
}

impl OptimizerState {
    fn new(optimizer: Optimizer, sizes: &[usize]) -> Self {
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        match optimizer {
            Optimizer::Sgd => OptimizerState::Sgd { velocity: zeros() },
            Optimizer::Adam => OptimizerState::Adam {
                first: zeros(),
                second: zeros(),
            },
        }
    }
}

pub struct Trainer {
    pub model: AcousticModel,
    opt: OptimizerState,
    rng: ChaCha8Rng,
    pub step: u64,
}

impl Trainer {
    pub fn new(config: Config) -> Result<Self> {
        let seed = config.train.seed;
        let optimizer = config.train.optimizer;
        let model = AcousticModel::new(config)?;
        let sizes: Vec<usize> = model.store.iter().map(|(_, e)| e.data.len()).collect();
        Ok(Trainer {
            model,
            opt: OptimizerState::new(optimizer, &sizes),
            rng: seeded_rng(seed, TRAIN_STREAM),
            step: 0,
        })
    }

    /// Run one optimization step on a randomly drawn utterance.
    pub fn train_step(&mut self, corpus: &[Utterance]) -> Result<StepMetrics> {
        assert!(!corpus.is_empty(), "empty corpus");
        let idx = self.rng.random_range(0..corpus.len());
        let tape = Tape::new();
        let bound = self.model.store.bind(&tape);
        let fwd = self
            .model
            .forward_train(&bound, &corpus[idx], &mut self.rng, true)?;
        let metrics = StepMetrics::from_forward(self.step, &fwd);
        if !metrics.total.is_finite() {
            return Err(Error::Diverged { step: self.step });
        }
        fwd.total.backward()?;

        let tr = &self.model.config.train;
        // cosine decay from learning_rate down to lr_final_fraction of it
        let progress = (self.step as f64 / tr.steps.max(1) as f64).min(1.0);
        let floor = tr.learning_rate * tr.lr_final_fraction;
        let lr = floor
            + 0.5 * (tr.learning_rate - floor) * (1.0 + (std::f64::consts::PI * progress).cos());
        let beta1 = tr.momentum;
        for id in 0..self.model.store.len() {
            let grad = bound.grad_or_zero(id);
            let data = self.model.store.data_mut(id);
            match &mut self.opt {
                OptimizerState::Sgd { velocity } => {
                    for ((d, v), g) in data.iter_mut().zip(&mut velocity[id]).zip(&grad) {
                        *v = beta1 * *v + g;
                        *d -= lr * *v;
                    }
                }
                OptimizerState::Adam { first, second } => {
                    let t = (self.step + 1) as f64;
                    let bc1 = 1.0 - beta1.powf(t);
                    let bc2 = 1.0 - ADAM_BETA2.powf(t);
                    for (((d, m), v), g) in data
                        .iter_mut()
                        .zip(&mut first[id])
                        .zip(&mut second[id])
                        .zip(&grad)
                    {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        *d -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        self.step += 1;
        Ok(metrics)
    }

    /// Forward-only recomputation of the metrics the next `train_step` call
    /// would report, without touching parameters, velocities, or the rng.
    pub fn evaluate_next_step(&self, corpus: &[Utterance]) -> Result<StepMetrics> {
        self.evaluate_with(corpus, &mut self.rng.clone())
    }

    /// Forward-only evaluation with an explicit rng (utterance pick, noise
    /// draw, dropout masks all come from it). Lets a saved rng state replay
    /// a step's exact loss against the current parameters.
    pub fn evaluate_with(&self, corpus: &[Utterance], rng: &mut ChaCha8Rng) -> Result<StepMetrics> {
        assert!(!corpus.is_empty(), "empty corpus");
        let idx = rng.random_range(0..corpus.len());
        let tape = Tape::new();
        let bound = self.model.store.bind(&tape);
        let fwd = self.model.forward_train(&bound, &corpus[idx], rng, true)?;
        Ok(StepMetrics::from_forward(self.step, &fwd))
    }

    /// Snapshot of the training rng, restorable via [`RngState::restore`].
    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    /// Train for `steps` steps, invoking `on_step` after each one.
    pub fn run(
        &mut self,
        corpus: &[Utterance],
        steps: u64,
        mut on_step: impl FnMut(&StepMetrics),
    ) -> Result<Vec<StepMetrics>> {
        let mut all = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let m = self.train_step(corpus)?;
            on_step(&m);
            all.push(m);
        }
        Ok(all)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let entry = |e: &ParamEntry, suffix: &str, data: &Vec<f64>| ParamEntry {
            name: format!("{}{suffix}", e.name),
            shape: e.shape.clone(),
            data: data.clone(),
        };
        let velocities = match &self.opt {
            OptimizerState::Sgd { velocity } => self
                .model
                .store
                .iter()
                .map(|(id, e)| entry(e, "#v", &velocity[id]))
                .collect(),
            OptimizerState::Adam { first, second } => {
                let mut blobs = Vec::with_capacity(2 * first.len());
                for (id, e) in self.model.store.iter() {
                    blobs.push(entry(e, "#m", &first[id]));
                    blobs.push(entry(e, "#v", &second[id]));
                }
                blobs
            }
        };
        Checkpoint {
            config_toml: self.model.config.to_toml(),
            step: self.step,
            rng: RngState::capture(&self.rng),
            params: self.model.store.iter().map(|(_, e)| e.clone()).collect(),
            velocities,
        }
    }

    /// Rebuild a trainer in the exact state the checkpoint was taken in.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = Config::from_toml(&ck.config_toml)?;
        let optimizer = config.train.optimizer;
        let mut model = AcousticModel::new(config)?;
        if ck.params.len() != model.store.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameter blobs, model expects {}",
                ck.params.len(),
                model.store.len()
            )));
        }
        for (id, blob) in ck.params.iter().enumerate() {
            let entry = model.store.entry(id);
            if entry.name != blob.name || entry.shape != blob.shape {
                return Err(Error::Config(format!(
                    "checkpoint blob `{}` {:?} does not match model parameter `{}` {:?}",
                    blob.name, blob.shape, entry.name, entry.shape
                )));
            }
            *model.store.data_mut(id) = blob.data.clone();
        }
        let want = match optimizer {
            Optimizer::Sgd => model.store.len(),
            Optimizer::Adam => 2 * model.store.len(),
        };
        if ck.velocities.len() != want {
            return Err(Error::Config(format!(
                "checkpoint has {} optimizer blobs, expected {want}",
                ck.velocities.len()
            )));
        }
        let opt = match optimizer {
            Optimizer::Sgd => OptimizerState::Sgd {
                velocity: ck.velocities.iter().map(|e| e.data.clone()).collect(),
            },
            Optimizer::Adam => OptimizerState::Adam {
                first: ck
                    .velocities
                    .iter()
                    .step_by(2)
                    .map(|e| e.data.clone())
                    .collect(),
                second: ck
                    .velocities
                    .iter()
                    .skip(1)
                    .step_by(2)
                    .map(|e| e.data.clone())
                    .collect(),
            },
        };
        Ok(Trainer {
            model,
            opt,
            rng: ck.rng.restore(),
            step: ck.step,
        })
    }
}

/// Build a model directly from a checkpoint for inference.
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<AcousticModel> {
    Ok(Trainer::from_checkpoint(ck)?.model)
}
