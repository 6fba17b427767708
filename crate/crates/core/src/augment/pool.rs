//! On-disk chunk pools: one WAV, one MIDI and one JSON sidecar per chunk,
//! plus an `index.json` holding the config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AugmentError, Chunk, ChunkPool, PoolConfig, Result};
use crate::audio::{load_wav_file, write_wav_file};
use crate::midi::{write_midi, DrumEvent, DrumTrack, HitLevel, HitVocabulary, DEFAULT_TICKS_PER_QUARTER};

#[derive(Serialize, Deserialize)]
struct Index {
    config: PoolConfig,
    sample_rate: u32,
    chunk_samples: usize,
    chunks: Vec<String>,
}

/// Exact events live in the sidecar; the MIDI file is for inspection only.
#[derive(Serialize, Deserialize)]
struct Meta {
    id: String,
    sources: Vec<String>,
    level: HitLevel,
    events: Vec<DrumEvent>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> AugmentError + '_ {
    move |e| AugmentError::Io(path.display().to_string(), e)
}

/// Write a pool to `dir`. Audio is stored as 24-bit PCM.
pub fn save_pool(pool: &ChunkPool, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let vocab = HitVocabulary::egmd(HitLevel::Group7);
    for c in &pool.chunks {
        write_wav_file(dir.join(format!("{}.wav", c.id)), &c.audio, 24)?;
        if c.track.level() == HitLevel::Group7 {
            let mid = dir.join(format!("{}.mid", c.id));
            std::fs::write(&mid, write_midi(&c.track, &vocab, DEFAULT_TICKS_PER_QUARTER)?).map_err(io(&mid))?;
        }
        let meta = Meta { id: c.id.clone(), sources: c.sources.clone(), level: c.track.level(), events: c.track.events().to_vec() };
        let path = dir.join(format!("{}.json", c.id));
        let json = serde_json::to_vec(&meta).map_err(|e| AugmentError::Json(path.display().to_string(), e))?;
        std::fs::write(&path, json).map_err(io(&path))?;
    }
    let index = Index {
        config: pool.config.clone(),
        sample_rate: pool.sample_rate,
        chunk_samples: pool.chunk_samples,
        chunks: pool.chunks.iter().map(|c| c.id.clone()).collect(),
    };
    let path = dir.join("index.json");
    let json = serde_json::to_vec_pretty(&index).map_err(|e| AugmentError::Json(path.display().to_string(), e))?;
    std::fs::write(&path, json).map_err(io(&path))
}

pub fn load_pool(dir: impl AsRef<Path>) -> Result<ChunkPool> {
    let dir = dir.as_ref();
    let path = dir.join("index.json");
    let bytes = std::fs::read(&path).map_err(io(&path))?;
    let index: Index = serde_json::from_slice(&bytes).map_err(|e| AugmentError::Json(path.display().to_string(), e))?;
    let mut chunks = Vec::with_capacity(index.chunks.len());
    for id in &index.chunks {
        let audio = load_wav_file(dir.join(format!("{id}.wav")))?;
        let path = dir.join(format!("{id}.json"));
        let bytes = std::fs::read(&path).map_err(io(&path))?;
        let meta: Meta = serde_json::from_slice(&bytes).map_err(|e| AugmentError::Json(path.display().to_string(), e))?;
        let track = DrumTrack::new(meta.level, meta.events, audio.duration())?;
        chunks.push(Chunk { id: meta.id, sources: meta.sources, audio, track });
    }
    Ok(ChunkPool { config: index.config, sample_rate: index.sample_rate, chunk_samples: index.chunk_samples, chunks })
}
