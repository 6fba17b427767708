//! Desk-scale training runs on the synthetic corpus: an overfitting sanity
//! check and the augmentation ablation.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{LogMel, MelConfig, Spectrogram};
use crate::augment::{build_chunk_pool, build_mixup_examples, AugmentError, MixMode, PoolConfig};
use crate::dataset::{toy_corpus, Example, GrooveConfig, Split, ToyCorpusConfig};
use crate::eval::{f_measure, EvalError, Scores, ONSET_TOLERANCE};
use crate::midi::DrumTrack;
use crate::model::{BatchSource, CropSource, LabeledExample, Model, ModelConfig, ModelError, ShuffledSource, TrainConfig, Trainer};
use crate::transcribe::{decode, DecodeConfig, TranscribeError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Decode(#[from] TranscribeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Precomputed spectrograms with their reference scores.
pub struct EvalSet {
    pub specs: Vec<Spectrogram>,
    pub tracks: Vec<DrumTrack>,
}

impl EvalSet {
    pub fn new(examples: &[&Example], mel: &LogMel) -> Result<Self> {
        let specs = examples.iter().map(|e| mel.compute(&e.audio).map_err(ModelError::from)).collect::<std::result::Result<_, _>>()?;
        Ok(EvalSet { specs, tracks: examples.iter().map(|e| e.track.clone()).collect() })
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

/// Onset F over all clips, from counts pooled across clips and classes.
pub fn pooled_onset_f(model: &Model<f32>, set: &EvalSet, decode_cfg: &DecodeConfig) -> Result<Scores> {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (spec, reference) in set.specs.iter().zip(&set.tracks) {
        let pred = model.predict(spec)?;
        let est = decode(pred.onset_probs.view(), pred.velocities.view(), decode_cfg)?;
        let res = f_measure(reference, &est, ONSET_TOLERANCE)?;
        for c in &res.per_class {
            tp += c.tp;
            fp += c.fp;
            fn_ += c.fn_;
        }
    }
    Ok(Scores::from_counts(tp, fp, fn_))
}

fn labeled(examples: &[&Example], mel: &LogMel, n_classes: usize) -> Result<Vec<LabeledExample>> {
    Ok(examples.iter().map(|e| LabeledExample::from_audio(&e.audio, &e.track, mel, n_classes)).collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverfitConfig {
    pub clips: usize,
    pub clip_seconds: f64,
    pub kit: u64,
    pub max_steps: u64,
    pub target_f: f64,
    pub eval_every: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for OverfitConfig {
    fn default() -> Self {
        OverfitConfig {
            clips: 8,
            clip_seconds: 4.0,
            kit: 1,
            max_steps: 2000,
            target_f: 0.95,
            eval_every: 50,
            model: ModelConfig::default(),
            train: TrainConfig { batch_size: 1, segment_seconds: 4.0, learning_rate: 1e-3, seed: 0, ..TrainConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitReport {
    /// Steps taken (the run stops at the first evaluation reaching the target).
    pub steps: u64,
    pub f: f64,
    pub reached: bool,
    /// `(step, F)` at every evaluation.
    pub history: Vec<(u64, f64)>,
    pub seconds: f64,
}

/// Train on a handful of synthetic clips and evaluate on the same clips.
pub fn overfit(cfg: &OverfitConfig) -> Result<OverfitReport> {
    if cfg.clips == 0 || cfg.eval_every == 0 {
        return Err(ExperimentError::Config("need at least one clip and eval_every > 0".into()));
    }
    let start = Instant::now();
    let groove = GrooveConfig { min_seconds: cfg.clip_seconds, max_seconds: cfg.clip_seconds, ..GrooveConfig::default() };
    let corpus =
        toy_corpus(&ToyCorpusConfig { sequences: cfg.clips, kits: vec![cfg.kit], seed: cfg.train.seed, groove, holdout_fraction: 0.0 });
    let mel = LogMel::new(MelConfig::default());
    let refs: Vec<&Example> = corpus.iter().collect();
    let set = EvalSet::new(&refs, &mel)?;
    let source =
        CropSource { examples: labeled(&refs, &mel, cfg.model.n_classes)?, crop_frames: cfg.train.segment_frames(), seed: cfg.train.seed };
    let mut trainer = Trainer::new(cfg.model.clone(), cfg.train.clone())?;
    let decode_cfg = DecodeConfig::default();
    let mut history = Vec::new();
    let mut failure = None;
    trainer.run(&source, cfg.max_steps, |t, row| {
        let done = t.step;
        if done % cfg.eval_every != 0 && done != cfg.max_steps {
            return true;
        }
        match pooled_onset_f(&t.model, &set, &decode_cfg) {
            Ok(s) => {
                log::info!("overfit step {done}: loss {:.4}, F {:.4}", row.loss, s.f);
                row.eval_f = Some(s.f);
                history.push((done, s.f));
                s.f < cfg.target_f
            }
            Err(e) => {
                failure = Some(e);
                false
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let f = history.last().map_or(0.0, |h| h.1);
    Ok(OverfitReport { steps: trainer.step, f, reached: f >= cfg.target_f, history, seconds: start.elapsed().as_secs_f64() })
}

/// Training data treatment compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Unmodified,
    Mixup,
    ShuffledMixup,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Unmodified, Arm::Mixup, Arm::ShuffledMixup];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Unmodified => "unmodified",
            Arm::Mixup => "mixup",
            Arm::ShuffledMixup => "shuffled-mixup",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub sequences: usize,
    pub train_kits: Vec<u64>,
    pub held_out_kit: u64,
    /// Fraction of sequences (rendered with the held-out kit) used for evaluation.
    pub test_fraction: f64,
    pub steps: u64,
    pub n_mixup: usize,
    pub chunk_seconds: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            sequences: 50,
            train_kits: vec![1, 2, 3],
            held_out_kit: 4,
            test_fraction: 0.2,
            steps: 600,
            n_mixup: 240,
            chunk_seconds: 1.0,
            model: ModelConfig::default(),
            train: TrainConfig { batch_size: 1, segment_seconds: 3.0, learning_rate: 1e-3, seed: 0, ..TrainConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: Arm,
    pub f: f64,
    pub precision: f64,
    pub recall: f64,
    pub steps: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub train_examples: usize,
    pub test_examples: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn f(&self, arm: Arm) -> Option<f64> {
        self.rows.iter().find(|r| r.arm == arm).map(|r| r.f)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<16} {:>8} {:>8} {:>8} {:>7}\n", "training data", "F", "P", "R", "steps");
        for r in &self.rows {
            s.push_str(&format!("{:<16} {:>8.4} {:>8.4} {:>8.4} {:>7}\n", r.arm.name(), r.f, r.precision, r.recall, r.steps));
        }
        s
    }
}

/// Split the corpus: training sequences rendered with the training kits,
/// test sequences rendered only with the held-out kit.
pub fn ablation_corpus(cfg: &AblationConfig) -> (Vec<Example>, Vec<Example>) {
    let mut kits = cfg.train_kits.clone();
    kits.push(cfg.held_out_kit);
    let corpus = toy_corpus(&ToyCorpusConfig {
        sequences: cfg.sequences,
        kits,
        seed: cfg.train.seed,
        groove: GrooveConfig::default(),
        holdout_fraction: cfg.test_fraction / 2.0,
    });
    let held = format!("kit{}", cfg.held_out_kit);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for e in corpus {
        match (e.split, e.kit_id == held) {
            (Split::Train, false) => train.push(e),
            (Split::Validation | Split::Test, true) => test.push(e),
            _ => {}
        }
    }
    (train, test)
}

fn arm_source(arm: Arm, train: &[Example], cfg: &AblationConfig, mel: &LogMel) -> Result<Box<dyn BatchSource>> {
    let crop_frames = cfg.train.segment_frames();
    let n_classes = cfg.model.n_classes;
    let seed = cfg.train.seed;
    let pool_cfg = PoolConfig {
        n_mixup: cfg.n_mixup,
        segment_seconds: 12.0,
        chunk_seconds: cfg.chunk_seconds,
        mode: MixMode::Average,
        seed: seed ^ 0x6d69_7875,
    };
    Ok(match arm {
        Arm::Unmodified => {
            let refs: Vec<&Example> = train.iter().collect();
            Box::new(CropSource { examples: labeled(&refs, mel, n_classes)?, crop_frames, seed })
        }
        Arm::Mixup => {
            let mixed = build_mixup_examples(train, &pool_cfg)?;
            let examples = mixed
                .iter()
                .map(|m| LabeledExample::from_audio(&m.audio, &m.track, mel, n_classes))
                .collect::<std::result::Result<_, _>>()?;
            Box::new(CropSource { examples, crop_frames, seed })
        }
        Arm::ShuffledMixup => {
            let pool = build_chunk_pool(train, &pool_cfg)?;
            // just enough chunks to cover one crop
            let slots = ((cfg.train.segment_seconds / cfg.chunk_seconds).ceil() as usize).max(1);
            Box::new(ShuffledSource::new(pool, slots, crop_frames, seed, n_classes, mel.config().clone()))
        }
    })
}

/// Train one model per arm with the same seed, initialisation and step
/// budget, then score each on the held-out kit.
pub fn ablation(cfg: &AblationConfig, arms: &[Arm]) -> Result<AblationReport> {
    if cfg.train_kits.contains(&cfg.held_out_kit) {
        return Err(ExperimentError::Config(format!("kit {} is both trained on and held out", cfg.held_out_kit)));
    }
    let (train, test) = ablation_corpus(cfg);
    if train.is_empty() || test.is_empty() {
        return Err(ExperimentError::Config(format!("{} training and {} test examples", train.len(), test.len())));
    }
    let mel = LogMel::new(MelConfig::default());
    let set = EvalSet::new(&test.iter().collect::<Vec<_>>(), &mel)?;
    let decode_cfg = DecodeConfig::default();
    let mut rows = Vec::new();
    for &arm in arms {
        let start = Instant::now();
        let source = arm_source(arm, &train, cfg, &mel)?;
        let mut trainer = Trainer::new(cfg.model.clone(), cfg.train.clone())?;
        trainer.run(source.as_ref(), cfg.steps, |t, row| {
            if t.step % 100 == 0 {
                log::info!("{} step {}: loss {:.4}", arm.name(), t.step, row.loss);
            }
            true
        })?;
        let s = pooled_onset_f(&trainer.model, &set, &decode_cfg)?;
        log::info!("{}: F {:.4}", arm.name(), s.f);
        rows.push(AblationRow {
            arm,
            f: s.f,
            precision: s.precision,
            recall: s.recall,
            steps: trainer.step,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(AblationReport { train_examples: train.len(), test_examples: test.len(), rows })
}
