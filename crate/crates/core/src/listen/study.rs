//! Question set construction: one excerpt per clip, every pair of arms.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ListenError, Result};
use crate::seed::child_rng;

/// One source clip and its rendering by each arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSource {
    pub clip_id: String,
    pub original: PathBuf,
    /// Seconds.
    pub duration: f64,
    /// Arm id to rendered audio.
    pub outputs: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excerpt {
    pub start: f64,
    pub duration: f64,
}

impl Excerpt {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// Served file name plus the source it is cut from. Names are derived from a
/// hash so they reveal neither the clip nor the arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioFile {
    pub name: String,
    pub source: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub model: String,
    pub audio: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: u32,
    pub clip_id: String,
    pub original: String,
    pub a: Candidate,
    pub b: Candidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyClip {
    pub clip_id: String,
    pub excerpt: Excerpt,
    pub original: AudioFile,
    pub outputs: BTreeMap<String, AudioFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedClip {
    pub clip_id: String,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub excerpt_seconds: f64,
    pub raters_per_question: usize,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { excerpt_seconds: 10.0, raters_per_question: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub arms: Vec<String>,
    pub config: StudyConfig,
    pub clips: Vec<StudyClip>,
    pub questions: Vec<Question>,
    pub skipped: Vec<SkippedClip>,
}

impl Study {
    pub fn question(&self, id: u32) -> Option<&Question> {
        self.questions.get(id as usize).filter(|q| q.id == id)
    }

    /// Every served file name mapped to its excerpt and source.
    pub fn audio_files(&self) -> impl Iterator<Item = (&AudioFile, &Excerpt)> {
        self.clips.iter().flat_map(|c| std::iter::once(&c.original).chain(c.outputs.values()).map(move |f| (f, &c.excerpt)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let study: Study = serde_json::from_str(text).map_err(|e| ListenError::Study(e.to_string()))?;
        if study.questions.iter().enumerate().any(|(i, q)| q.id as usize != i) {
            return Err(ListenError::Study("question ids must be 0..n in order".into()));
        }
        Ok(study)
    }
}

fn opaque_name(seed: u64, clip_id: &str, role: &str) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(clip_id.as_bytes());
    h.update([0]);
    h.update(role.as_bytes());
    let hex: String = h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect();
    format!("{hex}.wav")
}

/// Picks one excerpt per clip (the whole clip when it is shorter than the
/// excerpt length) and emits one question per unordered pair of arms. Clips
/// missing any arm are skipped and reported.
pub fn build_study(clips: &[ClipSource], arms: &[String], config: &StudyConfig) -> Result<Study> {
    if arms.len() < 2 {
        return Err(ListenError::Study(format!("need at least 2 arms, got {}", arms.len())));
    }
    let mut sorted = arms.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != arms.len() {
        return Err(ListenError::Study("duplicate arm ids".into()));
    }
    if config.excerpt_seconds.is_nan() || config.excerpt_seconds <= 0.0 {
        return Err(ListenError::Study(format!("excerpt length {} must be positive", config.excerpt_seconds)));
    }
    if config.raters_per_question == 0 {
        return Err(ListenError::Study("raters per question must be at least 1".into()));
    }
    let mut study_clips = Vec::new();
    let mut questions = Vec::new();
    let mut skipped = Vec::new();
    for (index, clip) in clips.iter().enumerate() {
        let missing: Vec<String> = arms.iter().filter(|a| !clip.outputs.contains_key(*a)).cloned().collect();
        if !missing.is_empty() {
            skipped.push(SkippedClip { clip_id: clip.clip_id.clone(), missing });
            continue;
        }
        let excerpt = if clip.duration <= config.excerpt_seconds {
            Excerpt { start: 0.0, duration: clip.duration.max(0.0) }
        } else {
            let mut rng = child_rng(config.seed, index as u64);
            let start_ms = rng.gen_range(0..=((clip.duration - config.excerpt_seconds) * 1000.0).floor() as u64);
            Excerpt { start: start_ms as f64 / 1000.0, duration: config.excerpt_seconds }
        };
        let original = AudioFile { name: opaque_name(config.seed, &clip.clip_id, "\u{0}original"), source: clip.original.clone() };
        let outputs: BTreeMap<String, AudioFile> = arms
            .iter()
            .map(|a| (a.clone(), AudioFile { name: opaque_name(config.seed, &clip.clip_id, a), source: clip.outputs[a].clone() }))
            .collect();
        for (i, a) in arms.iter().enumerate() {
            for b in &arms[i + 1..] {
                questions.push(Question {
                    id: questions.len() as u32,
                    clip_id: clip.clip_id.clone(),
                    original: original.name.clone(),
                    a: Candidate { model: a.clone(), audio: outputs[a].name.clone() },
                    b: Candidate { model: b.clone(), audio: outputs[b].name.clone() },
                });
            }
        }
        study_clips.push(StudyClip { clip_id: clip.clip_id.clone(), excerpt, original, outputs });
    }
    Ok(Study { arms: arms.to_vec(), config: *config, clips: study_clips, questions, skipped })
}
