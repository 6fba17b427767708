//! Corpus ingestion, label rolls and a synthetic toy corpus.

mod labels;
mod manifest;
mod toy;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use labels::{frame_of, make_labels, make_labels_with, LabelRoll, Labels, FRAME_SECONDS};
pub use manifest::{
    egmd_manifest, hit_counts, load_manifest, load_manifest_with, split_stats, write_manifest, ExamplePair, HitCounts, Manifest,
    ManifestOptions, RowError, Split, SplitStats, MAX_ALIGNMENT_MS,
};
pub use toy::{random_groove, toy_synthesize, toy_synthesize_with, GrooveConfig, ToyKit, TOY_PEAK};

use crate::audio::{load_wav_file, resample, write_wav_file, AudioClip, AudioError, CANONICAL_RATE};
use crate::midi::{write_midi, DrumTrack, HitLevel, HitVocabulary, MidiError, ParseOptions, DEFAULT_TICKS_PER_QUARTER};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unknown split `{0}` (expected train, test or validation)")]
    UnknownSplit(String),
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Midi(#[from] MidiError),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// A loaded audio clip with its Group7 score.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub sequence_id: String,
    pub kit_id: String,
    pub split: Split,
    pub audio: AudioClip,
    pub track: DrumTrack,
}

impl ExamplePair {
    /// Load audio (resampled to 44.1 kHz) and the score mapped to Group7.
    pub fn load(&self, vocab: &HitVocabulary, options: ParseOptions) -> Result<Example, DatasetError> {
        let mut audio = load_wav_file(&self.audio_path)?;
        if audio.sample_rate != CANONICAL_RATE {
            audio = resample(&audio, CANONICAL_RATE)?;
        }
        let track = vocab.map_hits(&self.load_track(vocab, options)?, HitLevel::Group7)?;
        Ok(Example {
            id: self.audio_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            sequence_id: self.sequence_id.clone(),
            kit_id: self.kit_id.clone(),
            split: self.split,
            audio,
            track,
        })
    }
}

/// Specification of a synthetic corpus: `sequences` random grooves, each
/// rendered once per kit.
#[derive(Debug, Clone)]
pub struct ToyCorpusConfig {
    pub sequences: usize,
    pub kits: Vec<u64>,
    pub seed: u64,
    pub groove: GrooveConfig,
    /// Fraction of sequences assigned to the test and validation splits each.
    pub holdout_fraction: f64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        ToyCorpusConfig { sequences: 8, kits: vec![1], seed: 0, groove: GrooveConfig::default(), holdout_fraction: 0.0 }
    }
}

/// Render a toy corpus in memory. Splits are assigned per sequence, so no
/// sequence appears in two splits.
pub fn toy_corpus(cfg: &ToyCorpusConfig) -> Vec<Example> {
    let kits: Vec<ToyKit> = cfg.kits.iter().map(|&k| ToyKit::new(k)).collect();
    let n_hold = (cfg.sequences as f64 * cfg.holdout_fraction).round() as usize;
    let mut out = Vec::with_capacity(cfg.sequences * kits.len());
    for s in 0..cfg.sequences {
        let split = if s < cfg.sequences - 2 * n_hold.min(cfg.sequences / 2) {
            Split::Train
        } else if s < cfg.sequences - n_hold.min(cfg.sequences / 2) {
            Split::Validation
        } else {
            Split::Test
        };
        let seq_seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(s as u64);
        let track = random_groove(seq_seed, &cfg.groove);
        for kit in &kits {
            out.push(Example {
                id: format!("seq{s:04}_kit{}", kit.seed),
                sequence_id: format!("seq{s:04}"),
                kit_id: format!("kit{}", kit.seed),
                split,
                audio: toy_synthesize_with(&track, kit),
                track: track.clone(),
            });
        }
    }
    out
}

/// Write examples as WAV + MIDI files plus a `manifest.csv` in `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, examples: &[Example]) -> Result<PathBuf, DatasetError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| DatasetError::Io { path: dir.to_path_buf(), source: e })?;
    let vocab = HitVocabulary::egmd(HitLevel::Group7);
    let mut pairs = Vec::with_capacity(examples.len());
    for ex in examples {
        let wav = dir.join(format!("{}.wav", ex.id));
        let mid = dir.join(format!("{}.mid", ex.id));
        write_wav_file(&wav, &ex.audio, 16)?;
        let bytes = write_midi(&ex.track, &vocab, DEFAULT_TICKS_PER_QUARTER)?;
        std::fs::write(&mid, bytes).map_err(|e| DatasetError::Io { path: mid.clone(), source: e })?;
        pairs.push(ExamplePair {
            audio_path: PathBuf::from(format!("{}.wav", ex.id)),
            midi_path: PathBuf::from(format!("{}.mid", ex.id)),
            kit_id: ex.kit_id.clone(),
            split: ex.split,
            sequence_id: ex.sequence_id.clone(),
            alignment_offset_ms: 0.0,
            duration: ex.audio.duration(),
        });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &pairs)?;
    Ok(manifest)
}
