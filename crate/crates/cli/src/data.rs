//! `manifest`, `labels` and `augment`.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use drumscribe::audio::{LogMel, MelConfig};
use drumscribe::augment::{build_chunk_pool, save_pool, MixMode, PoolConfig};
use drumscribe::dataset::{
    egmd_manifest, hit_counts, load_manifest, make_labels, split_stats, toy_corpus, write_corpus, write_manifest, Example, ExamplePair,
    Split, ToyCorpusConfig,
};
use drumscribe::midi::{HitLevel, HitVocabulary, ParseOptions};
use serde::{Deserialize, Serialize};

use crate::config::{log_resolved, overrides, required, user_error, ConfigFile, UserContext};

#[derive(Args)]
pub struct ManifestArgs {
    /// E-GMD release directory (containing e-gmd-v1.0.0.csv).
    #[arg(long)]
    egmd: Option<PathBuf>,
    /// Existing manifest to validate.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Write a synthetic toy corpus and its manifest into this directory.
    #[arg(long)]
    toy: Option<PathBuf>,
    /// Where to write the manifest built from --egmd.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sequences: Option<usize>,
    /// Comma-separated kit seeds for --toy.
    #[arg(long, value_delimiter = ',')]
    kits: Option<Vec<u64>>,
    /// Fraction of toy sequences in each of validation and test.
    #[arg(long)]
    holdout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also count Group7 hits per split (parses every MIDI file).
    #[arg(long)]
    counts: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct ManifestSettings {
    egmd: Option<PathBuf>,
    input: Option<PathBuf>,
    toy: Option<PathBuf>,
    out: Option<PathBuf>,
    sequences: usize,
    kits: Vec<u64>,
    holdout: f64,
    seed: u64,
    counts: bool,
}

impl Default for ManifestSettings {
    fn default() -> Self {
        ManifestSettings {
            egmd: None,
            input: None,
            toy: None,
            out: None,
            sequences: 50,
            kits: vec![1, 2, 3, 4],
            holdout: 0.1,
            seed: 0,
            counts: false,
        }
    }
}

fn print_stats(pairs: &[ExamplePair]) {
    println!("split,unique_sequences,total_sequences,hours");
    for (split, s) in split_stats(pairs) {
        println!("{split},{},{},{:.2}", s.unique_sequences, s.total_sequences, s.duration_hours);
    }
}

pub fn manifest(args: ManifestArgs, file: &ConfigFile) -> anyhow::Result<()> {
    let mut s: ManifestSettings = file.section("manifest")?;
    if let Some(v) = &args.egmd {
        s.egmd = Some(v.clone());
    }
    if let Some(v) = &args.input {
        s.input = Some(v.clone());
    }
    if let Some(v) = &args.toy {
        s.toy = Some(v.clone());
    }
    if let Some(v) = &args.out {
        s.out = Some(v.clone());
    }
    overrides!(s, args; sequences, kits, holdout, seed, counts);
    log_resolved("manifest", &s)?;
    let pairs = match (&s.egmd, &s.input, &s.toy) {
        (Some(root), None, None) => {
            let pairs = egmd_manifest(root).user(format!("reading E-GMD index under {}", root.display()))?;
            if let Some(out) = &s.out {
                write_manifest(out, &pairs).with_context(|| format!("writing {}", out.display()))?;
                log::info!("wrote {} rows to {}", pairs.len(), out.display());
            }
            pairs
        }
        (None, Some(path), None) => {
            let m = load_manifest(path).user(format!("loading manifest {}", path.display()))?;
            for e in &m.row_errors {
                log::warn!("row {}: {}", e.row, e.reason);
            }
            let leaked = m.leaked_sequences();
            if !leaked.is_empty() {
                return Err(user_error(format!("{} sequences appear in more than one split, e.g. `{}`", leaked.len(), leaked[0])));
            }
            m.pairs
        }
        (None, None, Some(dir)) => {
            if !(0.0..0.5).contains(&s.holdout) {
                return Err(user_error(format!("holdout {} must lie in [0, 0.5)", s.holdout)));
            }
            let cfg = ToyCorpusConfig {
                sequences: s.sequences,
                kits: s.kits.clone(),
                seed: s.seed,
                holdout_fraction: s.holdout,
                ..Default::default()
            };
            let path = write_corpus(dir, &toy_corpus(&cfg)).with_context(|| format!("writing toy corpus to {}", dir.display()))?;
            log::info!("wrote {}", path.display());
            load_manifest(&path).context("re-reading the toy manifest")?.pairs
        }
        _ => return Err(user_error("give exactly one of --egmd, --input or --toy")),
    };
    print_stats(&pairs);
    if s.counts {
        let vocab = HitVocabulary::egmd(HitLevel::Full);
        let counts = hit_counts(&pairs, &vocab, ParseOptions::default()).context("counting hits")?;
        print!("{}", counts.to_table());
    }
    Ok(())
}

/// Load every example of `split` (all splits when `None`) from a manifest.
pub fn load_examples(manifest: &Path, split: Option<Split>) -> anyhow::Result<Vec<Example>> {
    let m = load_manifest(manifest).user(format!("loading manifest {}", manifest.display()))?;
    for e in &m.row_errors {
        log::warn!("{} row {}: {}", manifest.display(), e.row, e.reason);
    }
    let vocab = HitVocabulary::egmd(HitLevel::Full);
    m.pairs
        .iter()
        .filter(|p| split.is_none_or(|s| p.split == s))
        .map(|p| p.load(&vocab, ParseOptions::default()).user(format!("loading {}", p.audio_path.display())))
        .collect()
}

fn parse_split(s: &Option<String>) -> anyhow::Result<Option<Split>> {
    s.as_deref().map(|v| v.parse::<Split>().user("split")).transpose()
}

#[derive(Args)]
pub struct LabelsArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only this split (train, validation or test).
    #[arg(long)]
    split: Option<String>,
    /// Also write log-mel spectrograms.
    #[arg(long)]
    features: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct LabelsSettings {
    manifest: Option<PathBuf>,
    out: Option<PathBuf>,
    split: Option<String>,
    features: bool,
}

#[derive(Serialize)]
struct LabelFile<'a> {
    id: &'a str,
    frames: usize,
    classes: usize,
    clamped: usize,
    /// `[frame, class, velocity / 127]` for every onset.
    onsets: Vec<(usize, usize, f32)>,
}

pub fn labels(args: LabelsArgs, file: &ConfigFile) -> anyhow::Result<()> {
    let mut s: LabelsSettings = file.section("labels")?;
    if args.manifest.is_some() {
        s.manifest = args.manifest.clone();
    }
    if args.out.is_some() {
        s.out = args.out.clone();
    }
    if args.split.is_some() {
        s.split = args.split.clone();
    }
    overrides!(s, args; features);
    log_resolved("labels", &s)?;
    let manifest = required(&s.manifest, "manifest")?;
    let out = required(&s.out, "out")?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mel = LogMel::new(MelConfig::default());
    let examples = load_examples(&manifest, parse_split(&s.split)?)?;
    for ex in &examples {
        let frames = mel.config().frames_for(ex.audio.len());
        let labels = make_labels(&ex.track, frames, 7);
        if labels.clamped > 0 {
            log::warn!("{}: {} onsets past the last frame were moved onto it", ex.id, labels.clamped);
        }
        let roll = &labels.roll;
        let onsets = roll.onsets.indexed_iter().filter(|(_, &v)| v > 0.0).map(|((f, c), _)| (f, c, roll.velocities[[f, c]])).collect();
        let lf = LabelFile { id: &ex.id, frames, classes: 7, clamped: labels.clamped, onsets };
        let path = out.join(format!("{}.labels.json", ex.id));
        std::fs::write(&path, serde_json::to_vec(&lf)?).with_context(|| format!("writing {}", path.display()))?;
        if s.features {
            let spec = mel.compute(&ex.audio).with_context(|| format!("features of {}", ex.id))?;
            let path = out.join(format!("{}.mel", ex.id));
            let f = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            spec.write_dump(std::io::BufWriter::new(f)).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    println!("wrote labels for {} examples to {}", examples.len(), out.display());
    Ok(())
}

#[derive(Args)]
pub struct AugmentArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for the chunk pool.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_mixup: Option<usize>,
    #[arg(long)]
    segment_seconds: Option<f64>,
    #[arg(long)]
    chunk_seconds: Option<f64>,
    /// average or sum.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct AugmentSettings {
    manifest: Option<PathBuf>,
    out: Option<PathBuf>,
    n_mixup: usize,
    segment_seconds: f64,
    chunk_seconds: f64,
    mode: MixMode,
    seed: u64,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        let p = PoolConfig::default();
        AugmentSettings {
            manifest: None,
            out: None,
            n_mixup: 1000,
            segment_seconds: p.segment_seconds,
            chunk_seconds: p.chunk_seconds,
            mode: p.mode,
            seed: 0,
        }
    }
}

pub fn augment(args: AugmentArgs, file: &ConfigFile) -> anyhow::Result<()> {
    let mut s: AugmentSettings = file.section("augment")?;
    if args.manifest.is_some() {
        s.manifest = args.manifest.clone();
    }
    if args.out.is_some() {
        s.out = args.out.clone();
    }
    if let Some(m) = &args.mode {
        s.mode = serde_json::from_value(serde_json::Value::String(m.clone())).user("mode (average or sum)")?;
    }
    overrides!(s, args; n_mixup, segment_seconds, chunk_seconds, seed);
    log_resolved("augment", &s)?;
    let manifest = required(&s.manifest, "manifest")?;
    let out = required(&s.out, "out")?;
    let train = load_examples(&manifest, Some(Split::Train))?;
    let cfg =
        PoolConfig { n_mixup: s.n_mixup, segment_seconds: s.segment_seconds, chunk_seconds: s.chunk_seconds, mode: s.mode, seed: s.seed };
    let pool = build_chunk_pool(&train, &cfg).user("building chunk pool")?;
    save_pool(&pool, &out).with_context(|| format!("writing pool to {}", out.display()))?;
    println!("wrote {} chunks from {} training examples to {}", pool.len(), train.len(), out.display());
    Ok(())
}
