//! Audio clips, WAV I/O, resampling and the log-mel front end.

mod mel;
mod resample;
mod wav;

use thiserror::Error;

pub use mel::{hz_to_mel, log_mel, mel_to_hz, LogMel, MelConfig, MelFilterbank, Spectrogram};
pub use resample::resample;
pub use wav::{encode_wav, load_wav, load_wav_file, read_wav_info, wav_file_info, write_wav_file, WavInfo};

/// Sample rate the model operates at.
pub const CANONICAL_RATE: u32 = 44_100;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed WAV at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("unsupported audio format: {0}")]
    Unsupported(String),
    #[error("invalid sample rate {0}")]
    InvalidRate(u32),
    #[error("audio contains non-finite samples")]
    NonFinite,
    #[error("empty audio clip")]
    Empty,
    #[error("expected {expected} Hz audio, found {found} Hz")]
    RateMismatch { expected: u32, found: u32 },
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

/// Mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidRate(0));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite);
        }
        Ok(AudioClip { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        AudioClip { samples: vec![0.0; len], sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Samples `[start, end)`, clamped to the clip.
    pub fn slice(&self, start: usize, end: usize) -> AudioClip {
        let end = end.min(self.samples.len());
        let start = start.min(end);
        AudioClip { samples: self.samples[start..end].to_vec(), sample_rate: self.sample_rate }
    }
}
