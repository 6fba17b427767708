//! `train` and `ablation`.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use drumscribe::audio::{LogMel, MelConfig};
use drumscribe::augment::{load_pool, SHUFFLED_SLOTS};
use drumscribe::dataset::Split;
use drumscribe::experiment::{self, pooled_onset_f, AblationConfig, Arm, EvalSet};
use drumscribe::model::{
    load_checkpoint, save_checkpoint, BatchSource, CropSource, LabeledExample, MetricsLog, ModelConfig, ShuffledSource, TrainConfig,
    Trainer,
};
use drumscribe::transcribe::DecodeConfig;
use serde::{Deserialize, Serialize};

use crate::config::{log_resolved, required, user_error, ConfigFile, UserContext};
use crate::data::load_examples;

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Run directory for checkpoints and the metrics log.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Shuffled-mixup chunk pool from `augment`; without it training uses
    /// crops of the unmodified training examples.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Continue from this checkpoint (its training settings are kept).
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    segment_seconds: Option<f64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainSettings {
    manifest: Option<PathBuf>,
    out: Option<PathBuf>,
    pool: Option<PathBuf>,
    resume: Option<PathBuf>,
    model: ModelConfig,
    train: TrainConfig,
}

fn apply_train_flags(t: &mut TrainConfig, a: &TrainArgs) {
    if let Some(v) = a.steps {
        t.max_steps = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = a.segment_seconds {
        t.segment_seconds = v;
    }
    if let Some(v) = a.eval_every {
        t.eval_every = v;
    }
    if let Some(v) = a.checkpoint_every {
        t.checkpoint_every = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
}

pub fn train(args: TrainArgs, file: &ConfigFile) -> anyhow::Result<()> {
    let mut s: TrainSettings = file.section("train")?;
    for (dst, src) in [(&mut s.manifest, &args.manifest), (&mut s.out, &args.out), (&mut s.pool, &args.pool), (&mut s.resume, &args.resume)]
    {
        if src.is_some() {
            *dst = src.clone();
        }
    }
    apply_train_flags(&mut s.train, &args);
    let manifest = required(&s.manifest, "manifest")?;
    let out = required(&s.out, "out")?;
    let mut trainer = match &s.resume {
        Some(path) => {
            let ck = load_checkpoint::<f32>(path).user(format!("loading checkpoint {}", path.display()))?;
            let mut t = Trainer::from_checkpoint(ck);
            // the step budget may be extended on resume; everything else is the checkpoint's
            t.config.max_steps = s.train.max_steps;
            s.model = t.model.config.clone();
            s.train = t.config.clone();
            t
        }
        None => Trainer::new(s.model.clone(), s.train.clone()).user("model or training settings")?,
    };
    log_resolved("train", &s)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let mel = LogMel::new(MelConfig::default());
    let n_classes = s.model.n_classes;
    let crop_frames = s.train.segment_frames();
    let source: Box<dyn BatchSource> = match &s.pool {
        Some(dir) => {
            let pool = load_pool(dir).user(format!("loading chunk pool {}", dir.display()))?;
            let slots = ((s.train.segment_seconds / pool.chunk_seconds()).ceil() as usize).clamp(1, SHUFFLED_SLOTS);
            Box::new(ShuffledSource::new(pool, slots, crop_frames, s.train.seed, n_classes, MelConfig::default()))
        }
        None => {
            let train = load_examples(&manifest, Some(Split::Train))?;
            if train.is_empty() {
                return Err(user_error("manifest has no training examples"));
            }
            let examples =
                train.iter().map(|e| LabeledExample::from_audio(&e.audio, &e.track, &mel, n_classes)).collect::<Result<Vec<_>, _>>()?;
            Box::new(CropSource { examples, crop_frames, seed: s.train.seed })
        }
    };
    let validation = load_examples(&manifest, Some(Split::Validation))?;
    let eval_set = EvalSet::new(&validation.iter().collect::<Vec<_>>(), &mel)?;
    log::info!("{} validation examples", eval_set.len());

    let metrics = MetricsLog::new(out.join("metrics.csv"));
    let decode_cfg = DecodeConfig::default();
    let (eval_every, ckpt_every) = (s.train.eval_every, s.train.checkpoint_every);
    let mut failure: Option<anyhow::Error> = None;
    trainer.run(source.as_ref(), s.train.max_steps, |t, row| {
        let step = t.step;
        let mut result = || -> anyhow::Result<()> {
            if eval_every > 0 && step % eval_every == 0 && !eval_set.is_empty() {
                let scores = pooled_onset_f(&t.model, &eval_set, &decode_cfg)?;
                row.eval_f = Some(scores.f);
                log::info!("step {step}: loss {:.4}, validation F {:.4}", row.loss, scores.f);
            } else if step % 100 == 0 {
                log::info!("step {step}: loss {:.4}", row.loss);
            }
            metrics.append(row)?;
            if ckpt_every > 0 && step % ckpt_every == 0 {
                save_checkpoint(&t.checkpoint(), out.join(format!("step{step:07}.ckpt")))?;
            }
            Ok(())
        };
        match result() {
            Ok(()) => true,
            Err(e) => {
                failure = Some(e);
                false
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let path = out.join("model.ckpt");
    save_checkpoint(&trainer.checkpoint(), &path).with_context(|| format!("writing {}", path.display()))?;
    println!("trained to step {}; checkpoint {}", trainer.step, path.display());
    Ok(())
}

#[derive(Args)]
pub struct AblationArgs {
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    sequences: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the result rows as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn ablation(args: AblationArgs, file: &ConfigFile) -> anyhow::Result<()> {
    let mut cfg: AblationConfig = file.section("ablation")?;
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.sequences {
        cfg.sequences = v;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    log_resolved("ablation", &cfg)?;
    let report = match experiment::ablation(&cfg, &Arm::ALL) {
        Err(e @ experiment::ExperimentError::Config(_)) => return Err(user_error(e.to_string())),
        r => r?,
    };
    println!("{} training examples, {} held-out-kit test examples\n", report.train_examples, report.test_examples);
    print!("{}", report.to_table());
    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_vec_pretty(&report)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
