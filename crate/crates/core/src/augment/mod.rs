//! Mixup and shuffled-mixup augmentation on paired audio and scores.
//!
//! A mixup example overlays two training examples (audio averaged, events
//! unioned). A chunk pool slices many mixup examples into fixed-length
//! chunks, and a shuffled-mixup example splices randomly drawn chunks back
//! together.

mod pool;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioClip, AudioError};
use crate::dataset::Example;
use crate::midi::{DrumEvent, DrumTrack, MidiError};

pub use pool::{load_pool, save_pool};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("example `{0}` has no audio")]
    EmptyInput(String),
    #[error("sample rates differ: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("hit levels differ between `{0}` and `{1}`")]
    LevelMismatch(String, String),
    #[error("chunk pool is empty")]
    EmptyPool,
    #[error("no training examples to draw pairs from")]
    EmptyTrainingSet,
    #[error("invalid augmentation config: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{0}: {1}")]
    Json(String, #[source] serde_json::Error),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Midi(#[from] MidiError),
}

pub type Result<T> = std::result::Result<T, AugmentError>;

/// How two signals are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMode {
    /// `0.5·a + 0.5·b`
    #[default]
    Average,
    /// `a + b`
    Sum,
}

/// Where an augmented example came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Ids of the source examples or chunks.
    pub sources: Vec<String>,
    /// Times each source was repeated to fill the output (fractional when the
    /// final repetition is truncated).
    pub repeats: Vec<f64>,
    /// Pool indices drawn for each slot of a spliced example.
    pub chunk_draws: Vec<usize>,
    pub seed: Option<u64>,
}

/// An augmented example. `audio.duration() == track.duration()` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct MixupExample {
    pub id: String,
    pub audio: AudioClip,
    pub track: DrumTrack,
    pub provenance: Provenance,
}

/// Anything with audio, a score and an id can be mixed.
pub trait Source {
    fn id(&self) -> &str;
    fn audio(&self) -> &AudioClip;
    fn track(&self) -> &DrumTrack;
}

impl Source for Example {
    fn id(&self) -> &str {
        &self.id
    }
    fn audio(&self) -> &AudioClip {
        &self.audio
    }
    fn track(&self) -> &DrumTrack {
        &self.track
    }
}

impl Source for MixupExample {
    fn id(&self) -> &str {
        &self.id
    }
    fn audio(&self) -> &AudioClip {
        &self.audio
    }
    fn track(&self) -> &DrumTrack {
        &self.track
    }
}

/// Events of `track` that fall inside `[0, samples)` on the sample grid.
fn events_within(track: &DrumTrack, samples: usize, rate: u32) -> impl Iterator<Item = &DrumEvent> {
    let end = samples as f64 / f64::from(rate);
    track.events().iter().filter(move |e| e.time < end)
}

/// Loop `src` to `len` samples; events repeat with each loop and those past
/// the end are dropped.
fn tile(src: &dyn Source, len: usize) -> (Vec<f32>, Vec<DrumEvent>) {
    let audio = src.audio();
    let n = audio.len();
    let rate = audio.sample_rate;
    let samples: Vec<f32> = (0..len).map(|i| audio.samples[i % n]).collect();
    let period = n as f64 / f64::from(rate);
    let end = len as f64 / f64::from(rate);
    let mut events = Vec::new();
    let reps = len.div_ceil(n);
    for k in 0..reps {
        let offset = k as f64 * period;
        for e in events_within(src.track(), n, rate) {
            let t = e.time + offset;
            if t < end {
                events.push(DrumEvent { time: t, ..*e });
            }
        }
    }
    (samples, events)
}

/// Overlay two examples. The shorter one is looped (audio and events) to
/// the length of the longer one; audio is combined according to `mode` and
/// the event lists are unioned.
pub fn mixup_pair(a: &dyn Source, b: &dyn Source, mode: MixMode) -> Result<MixupExample> {
    for s in [a, b] {
        if s.audio().is_empty() {
            return Err(AugmentError::EmptyInput(s.id().to_string()));
        }
    }
    let (ra, rb) = (a.audio().sample_rate, b.audio().sample_rate);
    if ra != rb {
        return Err(AugmentError::RateMismatch(ra, rb));
    }
    if a.track().level() != b.track().level() {
        return Err(AugmentError::LevelMismatch(a.id().to_string(), b.id().to_string()));
    }
    let len = a.audio().len().max(b.audio().len());
    let (xa, mut ea) = tile(a, len);
    let (xb, eb) = tile(b, len);
    let w = match mode {
        MixMode::Average => 0.5f32,
        MixMode::Sum => 1.0,
    };
    let samples = xa.iter().zip(&xb).map(|(&p, &q)| w * p + w * q).collect();
    ea.extend(eb);
    let audio = AudioClip::new(samples, ra)?;
    let track = DrumTrack::new(a.track().level(), ea, audio.duration())?;
    Ok(MixupExample {
        id: format!("{}+{}", a.id(), b.id()),
        provenance: Provenance {
            sources: vec![a.id().to_string(), b.id().to_string()],
            repeats: vec![len as f64 / a.audio().len() as f64, len as f64 / b.audio().len() as f64],
            chunk_draws: Vec::new(),
            seed: None,
        },
        audio,
        track,
    })
}

/// Chunk pool settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    /// Number of mixup examples to generate.
    pub n_mixup: usize,
    /// Mixup examples longer than this are cut into segments of this length.
    pub segment_seconds: f64,
    pub chunk_seconds: f64,
    pub mode: MixMode,
    pub seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { n_mixup: 500_000, segment_seconds: 12.0, chunk_seconds: 1.0, mode: MixMode::Average, seed: 0 }
    }
}

impl PoolConfig {
    fn validate(&self) -> Result<()> {
        if !(self.chunk_seconds > 0.0 && self.segment_seconds >= self.chunk_seconds) {
            return Err(AugmentError::Config(format!(
                "need 0 < chunk_seconds ({}) <= segment_seconds ({})",
                self.chunk_seconds, self.segment_seconds
            )));
        }
        Ok(())
    }
}

/// Fixed-length chunk with its origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub id: String,
    /// Ids of the examples mixed to form the parent.
    pub sources: Vec<String>,
    pub audio: AudioClip,
    pub track: DrumTrack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPool {
    pub config: PoolConfig,
    pub sample_rate: u32,
    pub chunk_samples: usize,
    pub chunks: Vec<Chunk>,
}

impl ChunkPool {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunk_seconds(&self) -> f64 {
        self.chunk_samples as f64 / f64::from(self.sample_rate)
    }
}

/// Sample-index windows `[start, end)` of a clip of `len` samples. Clips no
/// longer than `segment` stay whole; longer ones are cut into full segments
/// and the remainder is dropped.
pub fn segment_bounds(len: usize, segment: usize) -> Vec<(usize, usize)> {
    if len <= segment {
        return vec![(0, len)];
    }
    (0..len / segment).map(|s| (s * segment, (s + 1) * segment)).collect()
}

/// Cut `[start, end)` of a source into a new example. Events are assigned
/// to half-open windows, so an onset exactly on `end` belongs to the next
/// window.
fn cut(src: &dyn Source, start: usize, end: usize) -> Result<(AudioClip, DrumTrack)> {
    let audio = src.audio().slice(start, end);
    let rate = f64::from(audio.sample_rate);
    let mut events = Vec::new();
    for e in src.track().events() {
        let pos = e.time * rate;
        if pos >= start as f64 && pos < end as f64 {
            let t = (e.time - start as f64 / rate).max(0.0);
            events.push(DrumEvent { time: t, ..*e });
        }
    }
    let track = DrumTrack::new(src.track().level(), events, audio.duration())?;
    Ok((audio, track))
}

/// Split one example into 12 s segments and then into whole chunks.
pub fn chunk_example(src: &dyn Source, segment_samples: usize, chunk_samples: usize) -> Result<Vec<(AudioClip, DrumTrack)>> {
    let mut out = Vec::new();
    for (s0, s1) in segment_bounds(src.audio().len(), segment_samples) {
        let n = (s1 - s0) / chunk_samples;
        for c in 0..n {
            let start = s0 + c * chunk_samples;
            out.push(cut(src, start, start + chunk_samples)?);
        }
    }
    Ok(out)
}

/// Pick the pair for mixup example `index`. Pairs are distinct whenever the
/// training set has two or more examples.
pub fn draw_pair(n: usize, seed: u64, index: usize) -> (usize, usize) {
    let mut rng = crate::seed::child_rng(seed, index as u64);
    let a = rng.gen_range(0..n);
    let b = if n > 1 { (a + rng.gen_range(1..n)) % n } else { a };
    (a, b)
}

/// Build the mixup examples themselves (before chunking).
pub fn build_mixup_examples<S: Source>(examples: &[S], cfg: &PoolConfig) -> Result<Vec<MixupExample>> {
    if examples.is_empty() {
        return Err(AugmentError::EmptyTrainingSet);
    }
    (0..cfg.n_mixup)
        .map(|i| {
            let (a, b) = draw_pair(examples.len(), cfg.seed, i);
            let mut m = mixup_pair(&examples[a], &examples[b], cfg.mode)?;
            m.id = format!("mix{i:06}");
            m.provenance.seed = Some(cfg.seed);
            Ok(m)
        })
        .collect()
}

/// Generate `cfg.n_mixup` mixup examples from random pairs of `examples`
/// and slice them into chunks. Chunk ids are `mix<i>_c<k>`.
pub fn build_chunk_pool<S: Source>(examples: &[S], cfg: &PoolConfig) -> Result<ChunkPool> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(AugmentError::EmptyTrainingSet);
    }
    let rate = examples[0].audio().sample_rate;
    let chunk_samples = (cfg.chunk_seconds * f64::from(rate)).round() as usize;
    let segment_samples = (cfg.segment_seconds * f64::from(rate)).round() as usize;
    let mut chunks = Vec::new();
    for i in 0..cfg.n_mixup {
        let (a, b) = draw_pair(examples.len(), cfg.seed, i);
        let m = mixup_pair(&examples[a], &examples[b], cfg.mode)?;
        for (k, (audio, track)) in chunk_example(&m, segment_samples, chunk_samples)?.into_iter().enumerate() {
            chunks.push(Chunk { id: format!("mix{i:06}_c{k:03}"), sources: m.provenance.sources.clone(), audio, track });
        }
    }
    Ok(ChunkPool { config: cfg.clone(), sample_rate: rate, chunk_samples, chunks })
}

/// Number of chunks spliced into one shuffled-mixup example.
pub const SHUFFLED_SLOTS: usize = 12;

/// Splice the given pool chunks end to end. Chunk-local onsets are offset
/// by the slot start.
pub fn splice(pool: &ChunkPool, draws: &[usize]) -> Result<MixupExample> {
    if pool.is_empty() {
        return Err(AugmentError::EmptyPool);
    }
    let level = pool.chunks[0].track.level();
    let mut samples = Vec::with_capacity(draws.len() * pool.chunk_samples);
    let mut events = Vec::new();
    let slot_seconds = pool.chunk_seconds();
    for (slot, &d) in draws.iter().enumerate() {
        let chunk = &pool.chunks[d];
        samples.extend_from_slice(&chunk.audio.samples);
        let offset = slot as f64 * slot_seconds;
        events.extend(chunk.track.events().iter().map(|e| DrumEvent { time: e.time + offset, ..*e }));
    }
    let audio = AudioClip::new(samples, pool.sample_rate)?;
    let track = DrumTrack::new(level, events, audio.duration())?;
    Ok(MixupExample {
        id: String::new(),
        audio,
        track,
        provenance: Provenance {
            sources: draws.iter().map(|&d| pool.chunks[d].id.clone()).collect(),
            repeats: Vec::new(),
            chunk_draws: draws.to_vec(),
            seed: None,
        },
    })
}

/// Draw [`SHUFFLED_SLOTS`] chunks uniformly with replacement and splice them.
pub fn shuffled_mixup_example<R: Rng + ?Sized>(pool: &ChunkPool, rng: &mut R) -> Result<MixupExample> {
    if pool.is_empty() {
        return Err(AugmentError::EmptyPool);
    }
    let draws: Vec<usize> = (0..SHUFFLED_SLOTS).map(|_| rng.gen_range(0..pool.len())).collect();
    splice(pool, &draws)
}

/// Deterministic stream of shuffled-mixup examples; example `k` depends only
/// on the pool, `seed` and `k`.
pub struct ShuffledMixupStream<'a> {
    pool: &'a ChunkPool,
    seed: u64,
    next: u64,
}

impl<'a> ShuffledMixupStream<'a> {
    pub fn new(pool: &'a ChunkPool, seed: u64) -> Self {
        ShuffledMixupStream { pool, seed, next: 0 }
    }

    pub fn example(&self, k: u64) -> Result<MixupExample> {
        let mut rng = crate::seed::child_rng(self.seed, k);
        let mut ex = shuffled_mixup_example(self.pool, &mut rng)?;
        ex.id = format!("shuf{k:08}");
        ex.provenance.seed = Some(crate::seed::derive_seed(self.seed, k));
        Ok(ex)
    }
}

impl Iterator for ShuffledMixupStream<'_> {
    type Item = Result<MixupExample>;

    fn next(&mut self) -> Option<Self::Item> {
        let k = self.next;
        self.next += 1;
        Some(self.example(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi::{HitLevel, KD, SD};

    struct Plain {
        id: String,
        audio: AudioClip,
        track: DrumTrack,
    }

    impl Source for Plain {
        fn id(&self) -> &str {
            &self.id
        }
        fn audio(&self) -> &AudioClip {
            &self.audio
        }
        fn track(&self) -> &DrumTrack {
            &self.track
        }
    }

    fn plain(id: &str, seconds: f64, rate: u32, events: Vec<DrumEvent>) -> Plain {
        let n = (seconds * f64::from(rate)).round() as usize;
        let samples = (0..n).map(|i| ((i % 97) as f32 / 97.0) - 0.5).collect();
        let audio = AudioClip::new(samples, rate).unwrap();
        Plain { id: id.into(), track: DrumTrack::new(HitLevel::Group7, events, audio.duration()).unwrap(), audio }
    }

    #[test]
    fn shorter_example_is_tiled() {
        let a = plain("a", 4.0, 100, vec![DrumEvent::new(1.0, KD, 100)]);
        let b = plain("b", 10.0, 100, vec![DrumEvent::new(9.5, SD, 50)]);
        let m = mixup_pair(&a, &b, MixMode::Average).unwrap();
        assert_eq!(m.audio.len(), 1000);
        assert_eq!(m.track.duration(), 10.0);
        assert_eq!(m.track.class_times(KD), vec![1.0, 5.0, 9.0]);
        assert_eq!(m.track.class_times(SD), vec![9.5]);
        assert_eq!(m.provenance.repeats, vec![2.5, 1.0]);
        assert_eq!(m.audio.samples[450], 0.5 * a.audio.samples[50] + 0.5 * b.audio.samples[450]);
    }

    #[test]
    fn self_mix_is_identity_on_audio() {
        let a = plain("a", 3.0, 100, vec![DrumEvent::new(0.5, KD, 100)]);
        let m = mixup_pair(&a, &a, MixMode::Average).unwrap();
        assert_eq!(m.audio, a.audio);
        assert_eq!(m.track.len(), 2);
    }

    #[test]
    fn zero_length_and_rate_mismatch_are_errors() {
        let empty = plain("e", 0.0, 100, vec![]);
        let a = plain("a", 1.0, 100, vec![]);
        let c = plain("c", 1.0, 200, vec![]);
        assert!(matches!(mixup_pair(&empty, &a, MixMode::Average), Err(AugmentError::EmptyInput(_))));
        assert!(matches!(mixup_pair(&a, &c, MixMode::Sum), Err(AugmentError::RateMismatch(100, 200))));
    }

    #[test]
    fn segmentation_rule() {
        assert_eq!(segment_bounds(10, 12), vec![(0, 10)]);
        assert_eq!(segment_bounds(25, 12), vec![(0, 12), (12, 24)]);
        let ten = plain("x", 10.0, 100, vec![]);
        assert_eq!(chunk_example(&ten, 1200, 100).unwrap().len(), 10);
        let long = plain("y", 25.0, 100, vec![]);
        assert_eq!(chunk_example(&long, 1200, 100).unwrap().len(), 24);
    }

    #[test]
    fn boundary_events_go_to_the_later_chunk() {
        let a = plain("a", 3.0, 100, vec![DrumEvent::new(1.0, KD, 100), DrumEvent::new(0.99, SD, 100)]);
        let chunks = chunk_example(&a, 1200, 100).unwrap();
        assert_eq!(chunks[0].1.class_times(SD), vec![0.99]);
        assert!(chunks[0].1.class_times(KD).is_empty());
        assert_eq!(chunks[1].1.class_times(KD), vec![0.0]);
    }

    #[test]
    fn empty_pool_is_an_error() {
        let pool = ChunkPool { config: PoolConfig::default(), sample_rate: 100, chunk_samples: 100, chunks: vec![] };
        let mut rng = crate::seed::child_rng(0, 0);
        assert!(matches!(shuffled_mixup_example(&pool, &mut rng), Err(AugmentError::EmptyPool)));
    }
}
