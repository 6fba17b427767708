use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{learning_rate, Adam, Batch, BatchSource, Checkpoint, Model, ModelConfig, ModelError, Result};
use crate::seed::derive_seed;

/// Optimisation settings. Defaults are the full-scale values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub segment_seconds: f64,
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_steps: u64,
    pub velocity_weight: f64,
    pub max_steps: u64,
    pub seed: u64,
    /// Steps between evaluation snapshots (0 disables them).
    pub eval_every: u64,
    /// Steps between checkpoints (0 disables them).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            segment_seconds: 12.0,
            learning_rate: 1e-4,
            decay_rate: 0.98,
            decay_steps: 10_000,
            velocity_weight: 0.5,
            max_steps: 569_400,
            seed: 0,
            eval_every: 1_000,
            checkpoint_every: 10_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.segment_seconds > 0.0
            && self.learning_rate > 0.0
            && self.decay_rate > 0.0
            && self.decay_steps > 0
            && self.velocity_weight >= 0.0;
        if !ok {
            return Err(ModelError::Shape(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    /// Frames per training segment at 10 ms per frame.
    pub fn segment_frames(&self) -> usize {
        (self.segment_seconds * 100.0).round() as usize
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub onset_bce: f64,
    pub velocity_mse: f64,
    pub eval_f: Option<f64>,
}

/// Append-only CSV metrics log.
pub struct MetricsLog {
    path: PathBuf,
}

impl MetricsLog {
    pub fn new(path: impl AsRef<Path>) -> Self {
        MetricsLog { path: path.as_ref().to_path_buf() }
    }

    pub fn append(&self, row: &MetricsRow) -> Result<()> {
        let io = |e| ModelError::Io(self.path.display().to_string(), e);
        let fresh = !self.path.exists();
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&self.path).map_err(io)?;
        if fresh {
            writeln!(f, "step,lr,loss,onset_bce,velocity_mse,eval_f").map_err(io)?;
        }
        let eval = row.eval_f.map(|v| v.to_string()).unwrap_or_default();
        writeln!(f, "{},{},{},{},{},{}", row.step, row.lr, row.loss, row.onset_bce, row.velocity_mse, eval).map_err(io)
    }

    pub fn read(&self) -> Result<Vec<MetricsRow>> {
        let text = std::fs::read_to_string(&self.path).map_err(|e| ModelError::Io(self.path.display().to_string(), e))?;
        let parse = |s: &str| s.parse::<f64>().map_err(|e| ModelError::Checkpoint(format!("metrics log: {e}")));
        text.lines()
            .skip(1)
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 6 {
                    return Err(ModelError::Checkpoint(format!("metrics log row `{line}`")));
                }
                Ok(MetricsRow {
                    step: parse(f[0])? as u64,
                    lr: parse(f[1])?,
                    loss: parse(f[2])?,
                    onset_bce: parse(f[3])?,
                    velocity_mse: parse(f[4])?,
                    eval_f: if f[5].is_empty() { None } else { Some(parse(f[5])?) },
                })
            })
            .collect()
    }
}

const DROPOUT_STREAM: u64 = 0x6472_6f70;

/// Model plus optimiser state. Every source of randomness is derived from
/// `(config.seed, step)`, so a restored checkpoint continues identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: Model<f32>,
    pub adam: Adam<f32>,
    pub config: TrainConfig,
    /// Steps completed.
    pub step: u64,
}

impl Trainer {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::init(model_config, config.seed)?;
        let adam = Adam::new(&model.params);
        Ok(Trainer { model, adam, config, step: 0 })
    }

    pub fn from_checkpoint(ck: Checkpoint<f32>) -> Self {
        Trainer { model: ck.model, adam: ck.adam, config: ck.train_config, step: ck.step }
    }

    pub fn checkpoint(&self) -> Checkpoint<f32> {
        Checkpoint { model: self.model.clone(), adam: self.adam.clone(), train_config: self.config.clone(), step: self.step }
    }

    pub fn learning_rate(&self) -> f64 {
        learning_rate(self.step, self.config.learning_rate, self.config.decay_rate, self.config.decay_steps)
    }

    /// One optimiser update. Non-finite losses abort before any state changes.
    pub fn train_step(&mut self, batch: &Batch<f32>) -> Result<MetricsRow> {
        let lr = self.learning_rate();
        let seed = derive_seed(self.config.seed ^ DROPOUT_STREAM, self.step);
        let (loss, grads, update) = self.model.loss_and_grads(batch, self.config.velocity_weight, seed)?;
        if !loss.total.is_finite() {
            return Err(ModelError::Diverged { step: self.step, bce: loss.onset_bce, mse: loss.velocity_mse });
        }
        self.adam.update(&mut self.model.params, &grads, lr);
        self.model.apply_state_update(&update);
        let row =
            MetricsRow { step: self.step, lr, loss: loss.total, onset_bce: loss.onset_bce, velocity_mse: loss.velocity_mse, eval_f: None };
        self.step += 1;
        Ok(row)
    }

    /// Train until `self.step == until` or `on_step` returns false. The
    /// callback sees the updated model and may fill in `eval_f`.
    pub fn run<F>(&mut self, source: &dyn BatchSource, until: u64, mut on_step: F) -> Result<Vec<MetricsRow>>
    where
        F: FnMut(&Trainer, &mut MetricsRow) -> bool,
    {
        let mut rows = Vec::new();
        while self.step < until {
            let batch = source.batch(self.step, self.config.batch_size)?;
            let mut row = self.train_step(&batch)?;
            let go_on = on_step(self, &mut row);
            rows.push(row);
            if !go_on {
                break;
            }
        }
        Ok(rows)
    }
}
