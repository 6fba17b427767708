//! Drum transcription toolkit.
//!
//! Audio is turned into 10 ms log-mel frames, an onset/velocity network
//! predicts per-class hit probabilities and loudness, and a peak picker turns
//! those into velocity-annotated drum events. Around that core sit Standard
//! MIDI File I/O, a mixup-based augmentation pipeline, onset F-measure
//! evaluation and the statistics for pairwise listening tests.

pub mod audio;
pub mod augment;
pub mod dataset;
pub mod eval;
pub mod experiment;
pub mod listen;
pub mod midi;
pub mod model;
pub mod seed;
pub mod transcribe;

pub use audio::{AudioClip, Spectrogram};
pub use midi::{DrumEvent, DrumTrack, HitId, HitLevel, HitVocabulary};
