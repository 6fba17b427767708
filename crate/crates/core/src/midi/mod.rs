//! Drum events, hit vocabularies and Standard MIDI File I/O.

mod smf;
mod vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use smf::{parse_midi, write_midi, write_notes, MidiParse, NoteEvent, ParseOptions, DRUM_CHANNEL};
pub use vocab::{HitId, HitLevel, HitVocabulary, BE, CY, GM_NAMES, GM_PITCHES, GROUP3_NAMES, GROUP7_NAMES, HH, KD, RD, SD, TT};

/// Default resolution used when writing SMF.
pub const DEFAULT_TICKS_PER_QUARTER: u16 = 480;

#[derive(Debug, Error)]
pub enum MidiError {
    #[error("malformed MIDI data at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("unsupported SMF format {0}")]
    UnsupportedFormat(u16),
    #[error("event at {time}s does not fit in a MIDI delta time at {ticks_per_quarter} ticks/quarter")]
    TimeOverflow { time: f64, ticks_per_quarter: u16 },
    #[error("cannot map hits from {from} to the finer level {to}")]
    FinerLevel { from: HitLevel, to: HitLevel },
    #[error("hit id {hit} is not part of the {level} vocabulary")]
    UnknownHit { hit: HitId, level: HitLevel },
    #[error("vocabulary config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("invalid drum event: {0}")]
    InvalidEvent(String),
}

/// One drum hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrumEvent {
    /// Onset in seconds.
    pub time: f64,
    pub hit: HitId,
    /// MIDI velocity, 1..=127.
    pub velocity: u8,
}

impl DrumEvent {
    pub fn new(time: f64, hit: HitId, velocity: u8) -> Self {
        DrumEvent { time, hit, velocity }
    }

    fn validate(&self) -> Result<(), MidiError> {
        if !self.time.is_finite() || self.time < 0.0 {
            return Err(MidiError::InvalidEvent(format!("time {} must be finite and non-negative", self.time)));
        }
        if !(1..=127).contains(&self.velocity) {
            return Err(MidiError::InvalidEvent(format!("velocity {} outside 1..=127", self.velocity)));
        }
        Ok(())
    }
}

/// A sorted list of drum events at one vocabulary level.
///
/// Events are ordered by `(time, hit)`; `duration` is never shorter than the
/// last onset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrumTrack {
    level: HitLevel,
    events: Vec<DrumEvent>,
    duration: f64,
}

impl DrumTrack {
    /// Validates and sorts `events`. The duration is extended to cover the
    /// last onset if needed.
    pub fn new(level: HitLevel, mut events: Vec<DrumEvent>, duration: f64) -> Result<Self, MidiError> {
        for e in &events {
            e.validate()?;
            if level != HitLevel::Full && (e.hit as usize) >= group_size(level) {
                return Err(MidiError::UnknownHit { hit: e.hit, level });
            }
        }
        if !duration.is_finite() || duration < 0.0 {
            return Err(MidiError::InvalidEvent(format!("duration {duration} must be finite and non-negative")));
        }
        sort_events(&mut events);
        let last = events.last().map_or(0.0, |e| e.time);
        Ok(DrumTrack { level, events, duration: duration.max(last) })
    }

    pub fn empty(level: HitLevel, duration: f64) -> Self {
        DrumTrack { level, events: Vec::new(), duration: duration.max(0.0) }
    }

    pub fn level(&self) -> HitLevel {
        self.level
    }

    pub fn events(&self) -> &[DrumEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<DrumEvent> {
        self.events
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events of a single class, in time order.
    pub fn class_times(&self, hit: HitId) -> Vec<f64> {
        self.events.iter().filter(|e| e.hit == hit).map(|e| e.time).collect()
    }

    /// Copy with every velocity replaced by `velocity`.
    pub fn with_fixed_velocity(&self, velocity: u8) -> Result<Self, MidiError> {
        let events = self.events.iter().map(|e| DrumEvent { velocity, ..*e }).collect();
        DrumTrack::new(self.level, events, self.duration)
    }
}

fn group_size(level: HitLevel) -> usize {
    match level {
        HitLevel::Full => usize::MAX,
        HitLevel::Group7 => GROUP7_NAMES.len(),
        HitLevel::Group3 => GROUP3_NAMES.len(),
    }
}

pub(crate) fn sort_events(events: &mut [DrumEvent]) {
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.hit.cmp(&b.hit)));
}

/// A track in General MIDI percussion pitches, ready to be written as SMF.
#[derive(Debug, Clone, PartialEq)]
pub struct GmTrack {
    pub notes: Vec<NoteEvent>,
    pub duration: f64,
}

impl GmTrack {
    pub fn to_smf(&self, ticks_per_quarter: u16) -> Result<Vec<u8>, MidiError> {
        write_notes(&self.notes, self.duration, ticks_per_quarter)
    }
}

/// Map a Group7 track to General MIDI percussion.
///
/// KD→36, SD→38, HH→42, TT→47, CY→49, RD→51, BE→53, velocities preserved.
pub fn to_general_midi(track: &DrumTrack) -> Result<GmTrack, MidiError> {
    if track.level() != HitLevel::Group7 {
        let hit = track.events().first().map_or(0, |e| e.hit);
        return Err(MidiError::UnknownHit { hit, level: HitLevel::Group7 });
    }
    let notes =
        track.events().iter().map(|e| NoteEvent { time: e.time, pitch: GM_PITCHES[e.hit as usize], velocity: e.velocity }).collect();
    Ok(GmTrack { notes, duration: track.duration() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn track_sorts_by_time_then_hit() {
        let t = DrumTrack::new(
            HitLevel::Group7,
            vec![DrumEvent::new(0.5, HH, 10), DrumEvent::new(0.5, KD, 20), DrumEvent::new(0.1, SD, 30)],
            0.0,
        )
        .unwrap();
        let order: Vec<_> = t.events().iter().map(|e| (e.time, e.hit)).collect();
        assert_eq!(order, vec![(0.1, SD), (0.5, KD), (0.5, HH)]);
        assert_eq!(t.duration(), 0.5);
    }

    #[test]
    fn track_rejects_bad_events() {
        assert!(DrumTrack::new(HitLevel::Group7, vec![DrumEvent::new(-0.1, KD, 1)], 1.0).is_err());
        assert!(DrumTrack::new(HitLevel::Group7, vec![DrumEvent::new(0.1, KD, 0)], 1.0).is_err());
        assert!(DrumTrack::new(HitLevel::Group7, vec![DrumEvent::new(0.1, KD, 128)], 1.0).is_err());
        assert!(DrumTrack::new(HitLevel::Group3, vec![DrumEvent::new(0.1, 3, 64)], 1.0).is_err());
    }

    #[test]
    fn general_midi_mapping() {
        let t = DrumTrack::new(HitLevel::Group7, vec![DrumEvent::new(0.0, KD, 100), DrumEvent::new(0.5, BE, 64)], 1.0).unwrap();
        let gm = to_general_midi(&t).unwrap();
        assert_eq!(gm.notes[0], NoteEvent { time: 0.0, pitch: 36, velocity: 100 });
        assert_eq!(GM_NAMES[KD as usize], "Bass Drum 1");
        assert_eq!(gm.notes[1], NoteEvent { time: 0.5, pitch: 53, velocity: 64 });
        assert_eq!(GM_NAMES[BE as usize], "Ride Bell");

        let empty = to_general_midi(&DrumTrack::empty(HitLevel::Group7, 0.0)).unwrap();
        assert!(empty.notes.is_empty());
    }

    #[test]
    fn general_midi_is_a_bijection_on_classes() {
        let mut pitches = GM_PITCHES.to_vec();
        pitches.sort_unstable();
        pitches.dedup();
        assert_eq!(pitches, vec![36, 38, 42, 47, 49, 51, 53]);
    }

    #[test]
    fn general_midi_requires_group7() {
        let t = DrumTrack::new(HitLevel::Group3, vec![DrumEvent::new(0.0, 0, 100)], 1.0).unwrap();
        assert!(to_general_midi(&t).is_err());
    }

    #[test]
    fn map_hits_examples() {
        let full = HitVocabulary::egmd(HitLevel::Full);
        let tom2 = full.id_of("Tom 2").unwrap();
        let t = DrumTrack::new(HitLevel::Full, vec![DrumEvent::new(1.25, tom2, 77)], 2.0).unwrap();
        let g7 = full.map_hits(&t, HitLevel::Group7).unwrap();
        assert_eq!(g7.events(), &[DrumEvent::new(1.25, TT, 77)]);
        let g3 = full.map_hits(&g7, HitLevel::Group3).unwrap();
        assert_eq!(g3.events(), &[DrumEvent::new(1.25, 1, 77)]);
        assert_eq!(full.map_hits(&t, HitLevel::Full).unwrap(), t);
        assert!(full.map_hits(&g3, HitLevel::Full).is_err());
    }
}
