//! Peak picking from model outputs, and the audio → MIDI pipeline.

use std::path::Path;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{load_wav_file, resample, AudioClip, AudioError, LogMel, MelConfig};
use crate::dataset::FRAME_SECONDS;
use crate::midi::{to_general_midi, DrumEvent, DrumTrack, HitId, HitLevel, MidiError, DEFAULT_TICKS_PER_QUARTER};
use crate::model::{load_checkpoint, Model, ModelError};

#[derive(Debug, Error)]
pub enum TranscribeError {
    #[error("onset threshold {0} must lie strictly between 0 and 1")]
    Threshold(f64),
    #[error("onset matrix is {onsets:?} but velocity matrix is {velocities:?}")]
    Shape { onsets: (usize, usize), velocities: (usize, usize) },
    #[error("loading audio: {0}")]
    Audio(#[source] AudioError),
    #[error("features: {0}")]
    Features(#[source] AudioError),
    #[error("model: {0}")]
    Model(#[source] ModelError),
    #[error("decoding: {0}")]
    Decode(#[source] MidiError),
    #[error("MIDI export: {0}")]
    Export(#[source] MidiError),
}

pub type Result<T> = std::result::Result<T, TranscribeError>;

/// Peak-picking settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Minimum onset probability for a peak.
    pub threshold: f64,
    /// Replace every predicted velocity by this value.
    pub fixed_velocity: Option<u8>,
    pub frame_seconds: f64,
    pub level: HitLevel,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { threshold: 0.5, fixed_velocity: None, frame_seconds: FRAME_SECONDS, level: HitLevel::Group7 }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(TranscribeError::Threshold(self.threshold));
        }
        if self.fixed_velocity.is_some_and(|v| !(1..=127).contains(&v)) {
            return Err(TranscribeError::Decode(MidiError::InvalidEvent(format!(
                "fixed velocity {} outside 1..=127",
                self.fixed_velocity.unwrap_or(0)
            ))));
        }
        Ok(())
    }
}

/// MIDI velocity for a model output: `[0, 1]` maps onto `1..=127`.
pub fn midi_velocity(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { f64::from(v).clamp(0.0, 1.0) };
    (v * 126.0).round() as u8 + 1
}

/// Frames of `column` that reach `threshold` and are strict local maxima.
/// A flat top counts once, at its first frame, when the values on both sides
/// of the plateau are lower.
pub fn pick_peaks(column: ArrayView1<f32>, threshold: f64) -> Vec<usize> {
    let n = column.len();
    let mut peaks = Vec::new();
    let mut t = 0;
    while t < n {
        let p = column[t];
        let mut end = t + 1;
        while end < n && column[end] == p {
            end += 1;
        }
        let rises = t == 0 || column[t - 1] < p;
        let falls = end == n || column[end] < p;
        if rises && falls && f64::from(p) >= threshold {
            peaks.push(t);
        }
        t = end;
    }
    peaks
}

/// Turn `[frames, classes]` onset probabilities and velocities into events at
/// `frame · frame_seconds`.
pub fn decode(onset_probs: ArrayView2<f32>, velocities: ArrayView2<f32>, config: &DecodeConfig) -> Result<DrumTrack> {
    config.validate()?;
    if onset_probs.dim() != velocities.dim() {
        return Err(TranscribeError::Shape { onsets: onset_probs.dim(), velocities: velocities.dim() });
    }
    let (frames, classes) = onset_probs.dim();
    let mut events = Vec::new();
    for c in 0..classes {
        for t in pick_peaks(onset_probs.column(c), config.threshold) {
            let velocity = config.fixed_velocity.unwrap_or_else(|| midi_velocity(velocities[[t, c]]));
            events.push(DrumEvent::new(t as f64 * config.frame_seconds, c as HitId, velocity));
        }
    }
    DrumTrack::new(config.level, events, frames as f64 * config.frame_seconds).map_err(TranscribeError::Decode)
}

/// A transcription and its General MIDI rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcription {
    pub track: DrumTrack,
    /// Standard MIDI File bytes in GM percussion pitches.
    pub smf: Vec<u8>,
}

/// A loaded model plus the front end that feeds it.
pub struct Transcriber {
    model: Model<f32>,
    mel: LogMel,
    pub config: DecodeConfig,
}

impl Transcriber {
    pub fn new(model: Model<f32>, mel: MelConfig, config: DecodeConfig) -> Result<Self> {
        config.validate()?;
        Ok(Transcriber { model, mel: LogMel::new(mel), config })
    }

    pub fn from_checkpoint(path: impl AsRef<Path>, config: DecodeConfig) -> Result<Self> {
        let ck = load_checkpoint::<f32>(path).map_err(TranscribeError::Model)?;
        Self::new(ck.model, MelConfig::default(), config)
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    /// Resample, analyse, predict and decode one clip.
    pub fn transcribe_clip(&self, clip: &AudioClip) -> Result<DrumTrack> {
        let rate = self.mel.config().sample_rate;
        let clip = if clip.sample_rate == rate { clip.clone() } else { resample(clip, rate).map_err(TranscribeError::Features)? };
        let spec = self.mel.compute(&clip).map_err(TranscribeError::Features)?;
        let pred = self.model.predict(&spec).map_err(TranscribeError::Model)?;
        let mut track = decode(pred.onset_probs.view(), pred.velocities.view(), &self.config)?;
        if track.duration() > clip.duration() {
            // the last frame is centred inside the clip, so no onset moves
            track = DrumTrack::new(track.level(), track.into_events(), clip.duration()).map_err(TranscribeError::Decode)?;
        }
        Ok(track)
    }

    pub fn transcribe_audio(&self, clip: &AudioClip) -> Result<Transcription> {
        let track = self.transcribe_clip(clip)?;
        let smf = to_general_midi(&track).and_then(|gm| gm.to_smf(DEFAULT_TICKS_PER_QUARTER)).map_err(TranscribeError::Export)?;
        Ok(Transcription { track, smf })
    }

    pub fn transcribe_file(&self, wav: impl AsRef<Path>) -> Result<Transcription> {
        let clip = load_wav_file(wav).map_err(TranscribeError::Audio)?;
        self.transcribe_audio(&clip)
    }
}

/// Load a checkpoint and transcribe one WAV file.
pub fn transcribe_file(wav: impl AsRef<Path>, checkpoint: impl AsRef<Path>, config: &DecodeConfig) -> Result<Transcription> {
    Transcriber::from_checkpoint(checkpoint, config.clone())?.transcribe_file(wav)
}
