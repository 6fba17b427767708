//! Standard MIDI File reader (formats 0 and 1) and writer (format 0).

use std::collections::BTreeMap;

use super::{DrumEvent, DrumTrack, HitVocabulary, MidiError, DEFAULT_TICKS_PER_QUARTER};

/// MIDI channel 10, zero-based.
pub const DRUM_CHANNEL: u8 = 9;

const DEFAULT_TEMPO_US: u32 = 500_000;
const MAX_VLQ: u64 = 0x0FFF_FFFF;

/// A note-on in pitch space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoteEvent {
    pub time: f64,
    pub pitch: u8,
    pub velocity: u8,
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    /// Only note-ons on this channel are read; `None` accepts every channel.
    pub channel: Option<u8>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { channel: Some(DRUM_CHANNEL) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MidiParse {
    pub track: DrumTrack,
    /// Note-ons whose pitch is not in the vocabulary, by pitch.
    pub skipped_pitches: BTreeMap<u8, usize>,
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, reason: impl Into<String>) -> MidiError {
        MidiError::Malformed { offset: self.pos, reason: reason.into() }
    }

    fn u8(&mut self) -> Result<u8, MidiError> {
        let b = *self.data.get(self.pos).ok_or_else(|| self.err("unexpected end of data"))?;
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.data.len() - self.pos < n {
            return Err(self.err(format!("need {n} bytes, {} left", self.data.len() - self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, MidiError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, MidiError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32, MidiError> {
        let start = self.pos;
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | u32::from(b & 0x7F);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MidiError::Malformed { offset: start, reason: "variable-length quantity longer than 4 bytes".into() })
    }
}

enum Timing {
    Metrical(u16),
    /// Absolute ticks per second.
    Timecode(f64),
}

struct RawNote {
    tick: u64,
    channel: u8,
    pitch: u8,
    velocity: u8,
}

/// Parse an SMF byte stream into a drum track at the vocabulary's level.
///
/// Note-offs (and note-ons with velocity 0) are ignored.
pub fn parse_midi(bytes: &[u8], vocab: &HitVocabulary, options: ParseOptions) -> Result<MidiParse, MidiError> {
    let mut cur = Cursor { data: bytes, pos: 0 };
    if cur.take(4)? != b"MThd" {
        return Err(MidiError::Malformed { offset: 0, reason: "missing MThd header".into() });
    }
    let header_len = cur.u32()? as usize;
    if header_len < 6 {
        return Err(cur.err(format!("header length {header_len} < 6")));
    }
    let header_start = cur.pos;
    let format = cur.u16()?;
    let ntracks = cur.u16()?;
    let division = cur.u16()?;
    cur.pos = header_start;
    cur.take(header_len)?;
    if format > 1 {
        return Err(MidiError::UnsupportedFormat(format));
    }
    let timing = if division & 0x8000 != 0 {
        let fps = -((division >> 8) as u8 as i8) as f64;
        let fps = if fps == 29.0 { 29.97 } else { fps };
        let per_frame = f64::from(division & 0xFF);
        if fps <= 0.0 || per_frame <= 0.0 {
            return Err(MidiError::Malformed { offset: 12, reason: "invalid SMPTE division".into() });
        }
        Timing::Timecode(fps * per_frame)
    } else {
        if division == 0 {
            return Err(MidiError::Malformed { offset: 12, reason: "zero ticks per quarter".into() });
        }
        Timing::Metrical(division)
    };

    let mut tempos: Vec<(u64, u32)> = Vec::new();
    let mut notes: Vec<RawNote> = Vec::new();
    let mut end_tick: u64 = 0;
    let mut tracks_read = 0;
    while cur.pos < bytes.len() && tracks_read < ntracks {
        let chunk_start = cur.pos;
        let id = cur.take(4)?;
        let len = cur.u32()? as usize;
        if id != b"MTrk" {
            cur.take(len).map_err(|_| MidiError::Malformed { offset: chunk_start, reason: "truncated chunk".into() })?;
            continue;
        }
        let body_start = cur.pos;
        if bytes.len() - body_start < len {
            return Err(MidiError::Malformed {
                offset: chunk_start,
                reason: format!("track chunk declares {len} bytes, {} available", bytes.len() - body_start),
            });
        }
        let mut track = Cursor { data: &bytes[..body_start + len], pos: body_start };
        let track_end = read_track(&mut track, &mut tempos, &mut notes)?;
        end_tick = end_tick.max(track_end);
        cur.pos = body_start + len;
        tracks_read += 1;
    }
    if tracks_read < ntracks {
        return Err(cur.err(format!("header declares {ntracks} tracks, found {tracks_read}")));
    }

    let map = TempoMap::new(timing, tempos);
    let mut events = Vec::new();
    let mut skipped = BTreeMap::new();
    for n in &notes {
        if n.velocity == 0 || options.channel.is_some_and(|c| c != n.channel) {
            continue;
        }
        match vocab.hit_for_pitch(n.pitch) {
            Some(hit) => events.push(DrumEvent { time: map.seconds(n.tick), hit, velocity: n.velocity }),
            None => *skipped.entry(n.pitch).or_insert(0) += 1,
        }
    }
    let duration = map.seconds(end_tick);
    let track = DrumTrack::new(vocab.level(), events, duration)?;
    Ok(MidiParse { track, skipped_pitches: skipped })
}

/// Returns the absolute tick of the last event in the track.
fn read_track(cur: &mut Cursor<'_>, tempos: &mut Vec<(u64, u32)>, notes: &mut Vec<RawNote>) -> Result<u64, MidiError> {
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    while cur.pos < cur.data.len() {
        tick += u64::from(cur.vlq()?);
        let status_pos = cur.pos;
        let mut status = cur.u8()?;
        let mut first_data = None;
        if status < 0x80 {
            let rs = running.ok_or(MidiError::Malformed { offset: status_pos, reason: "data byte without running status".into() })?;
            first_data = Some(status);
            status = rs;
        }
        match status {
            0xFF => {
                let kind = cur.u8()?;
                let len = cur.vlq()? as usize;
                let data = cur.take(len)?;
                match kind {
                    0x51 => {
                        if len != 3 {
                            return Err(MidiError::Malformed { offset: status_pos, reason: format!("tempo event with length {len}") });
                        }
                        let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        if us == 0 {
                            return Err(MidiError::Malformed { offset: status_pos, reason: "zero tempo".into() });
                        }
                        tempos.push((tick, us));
                    }
                    0x2F => return Ok(tick),
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                let len = cur.vlq()? as usize;
                cur.take(len)?;
                running = None;
            }
            0x80..=0xEF => {
                running = Some(status);
                let d1 = match first_data {
                    Some(d) => d,
                    None => cur.u8()?,
                };
                let kind = status & 0xF0;
                let d2 = if matches!(kind, 0xC0 | 0xD0) { 0 } else { cur.u8()? };
                if d1 > 0x7F || d2 > 0x7F {
                    return Err(MidiError::Malformed { offset: status_pos, reason: "data byte above 0x7F".into() });
                }
                if kind == 0x90 {
                    notes.push(RawNote { tick, channel: status & 0x0F, pitch: d1, velocity: d2 });
                }
            }
            other => return Err(MidiError::Malformed { offset: status_pos, reason: format!("unexpected status byte {other:#04x}") }),
        }
    }
    Ok(tick)
}

/// Piecewise-linear tick → seconds conversion.
struct TempoMap {
    timing: Timing,
    /// `(tick, seconds at tick, microseconds per quarter)` segments.
    segments: Vec<(u64, f64, u32)>,
}

impl TempoMap {
    fn new(timing: Timing, mut tempos: Vec<(u64, u32)>) -> Self {
        tempos.sort_by_key(|&(t, _)| t);
        let mut segments = vec![(0u64, 0.0f64, DEFAULT_TEMPO_US)];
        if let Timing::Metrical(tpq) = timing {
            for (tick, us) in tempos {
                let &(t0, s0, us0) = segments.last().unwrap();
                let s = s0 + (tick - t0) as f64 * f64::from(us0) / 1e6 / f64::from(tpq);
                if tick == t0 {
                    // a later tempo at the same tick replaces the earlier one
                    *segments.last_mut().unwrap() = (tick, s0, us);
                } else {
                    segments.push((tick, s, us));
                }
            }
        }
        TempoMap { timing, segments }
    }

    fn seconds(&self, tick: u64) -> f64 {
        match self.timing {
            Timing::Timecode(per_sec) => tick as f64 / per_sec,
            Timing::Metrical(tpq) => {
                let idx = self.segments.partition_point(|&(t, _, _)| t <= tick) - 1;
                let (t0, s0, us) = self.segments[idx];
                s0 + (tick - t0) as f64 * f64::from(us) / 1e6 / f64::from(tpq)
            }
        }
    }
}

fn push_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (value & 0x7F) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(if i > 0 { buf[i] | 0x80 } else { buf[i] });
    }
}

/// Write a drum track as a type-0 SMF at 120 BPM.
///
/// Pitches come from [`HitVocabulary::pitch_for`].
pub fn write_midi(track: &DrumTrack, vocab: &HitVocabulary, ticks_per_quarter: u16) -> Result<Vec<u8>, MidiError> {
    let vocab = vocab.at_level(track.level());
    let notes = track
        .events()
        .iter()
        .map(|e| {
            let pitch = vocab.pitch_for(e.hit).ok_or(MidiError::UnknownHit { hit: e.hit, level: track.level() })?;
            Ok(NoteEvent { time: e.time, pitch, velocity: e.velocity })
        })
        .collect::<Result<Vec<_>, MidiError>>()?;
    write_notes(&notes, track.duration(), ticks_per_quarter)
}

/// Write note-ons as a type-0 SMF on the drum channel, 120 BPM.
///
/// Each note gets a short note-off; the end-of-track marker sits at
/// `duration` so the clip length survives a round trip.
pub fn write_notes(notes: &[NoteEvent], duration: f64, ticks_per_quarter: u16) -> Result<Vec<u8>, MidiError> {
    let tpq = if ticks_per_quarter == 0 { DEFAULT_TICKS_PER_QUARTER } else { ticks_per_quarter };
    let ticks_per_sec = f64::from(tpq) * 1e6 / f64::from(DEFAULT_TEMPO_US);
    let to_tick = |time: f64| -> Result<u64, MidiError> {
        let t = (time * ticks_per_sec).round();
        if !t.is_finite() || t < 0.0 || t > MAX_VLQ as f64 {
            return Err(MidiError::TimeOverflow { time, ticks_per_quarter: tpq });
        }
        Ok(t as u64)
    };
    let note_len = u64::from(tpq / 16).max(1);

    // (tick, order, status, pitch, velocity); note-offs sort before note-ons
    let mut msgs: Vec<(u64, u8, u8, u8, u8)> = Vec::with_capacity(notes.len() * 2);
    for n in notes {
        if n.pitch > 127 || n.velocity == 0 || n.velocity > 127 {
            return Err(MidiError::InvalidEvent(format!("note pitch {} velocity {}", n.pitch, n.velocity)));
        }
        let on = to_tick(n.time)?;
        msgs.push((on, 1, 0x90 | DRUM_CHANNEL, n.pitch, n.velocity));
        msgs.push((on + note_len, 0, 0x80 | DRUM_CHANNEL, n.pitch, 0x40));
    }
    msgs.sort_by_key(|m| (m.0, m.1, m.3));
    let end = msgs.last().map_or(0, |m| m.0).max(to_tick(duration.max(0.0))?);
    if end > MAX_VLQ {
        return Err(MidiError::TimeOverflow { time: duration, ticks_per_quarter: tpq });
    }

    let mut body = Vec::with_capacity(msgs.len() * 4 + 16);
    body.extend_from_slice(&[0x00, 0xFF, 0x51, 0x03]);
    body.extend_from_slice(&DEFAULT_TEMPO_US.to_be_bytes()[1..]);
    let mut last = 0u64;
    for (tick, _, status, pitch, vel) in msgs {
        push_vlq(&mut body, (tick - last) as u32);
        body.extend_from_slice(&[status, pitch, vel]);
        last = tick;
    }
    push_vlq(&mut body, (end - last) as u32);
    body.extend_from_slice(&[0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(body.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&tpq.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi::{HitLevel, HH, KD, SD};

    fn g7() -> HitVocabulary {
        HitVocabulary::egmd(HitLevel::Group7)
    }

    /// Hand-assembled SMF: header + tracks given as raw event bytes (without EOT).
    fn smf(format: u16, tpq: u16, tracks: &[&[u8]]) -> Vec<u8> {
        let mut out = b"MThd".to_vec();
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&format.to_be_bytes());
        out.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
        out.extend_from_slice(&tpq.to_be_bytes());
        for t in tracks {
            let mut body = t.to_vec();
            body.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);
            out.extend_from_slice(b"MTrk");
            out.extend_from_slice(&(body.len() as u32).to_be_bytes());
            out.extend_from_slice(&body);
        }
        out
    }

    #[test]
    fn single_note_on() {
        let bytes = smf(0, 480, &[&[0x00, 0x99, 36, 100]]);
        let parsed = parse_midi(&bytes, &g7(), ParseOptions::default()).unwrap();
        assert_eq!(parsed.track.events(), &[DrumEvent::new(0.0, KD, 100)]);
    }

    #[test]
    fn empty_track() {
        let bytes = smf(0, 480, &[&[]]);
        let parsed = parse_midi(&bytes, &g7(), ParseOptions::default()).unwrap();
        assert!(parsed.track.is_empty());
        assert_eq!(parsed.track.duration(), 0.0);
    }

    #[test]
    fn tempo_change_integration() {
        // 120 BPM until beat 4 (4 × 0.5 s), then 60 BPM; note at beat 6 → 2.0 + 2 × 1.0 = 4.0 s
        let tpq = 96u16;
        let conductor: Vec<u8> = vec![
            0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20, // 500000 us
            0x83, 0x00, 0xFF, 0x51, 0x03, 0x0F, 0x42, 0x40, // +384 ticks: 1000000 us
        ];
        let notes: Vec<u8> = vec![0x84, 0x40, 0x99, 38, 90]; // tick 576 = beat 6
        let bytes = smf(1, tpq, &[&conductor, &notes]);
        let parsed = parse_midi(&bytes, &g7(), ParseOptions::default()).unwrap();
        assert_eq!(parsed.track.events().len(), 1);
        assert!((parsed.track.events()[0].time - 4.0).abs() < 1e-12);
    }

    #[test]
    fn running_status_and_zero_velocity() {
        // note-on 36, running status note-on 36 vel 0 (off), note-on 42
        let bytes = smf(0, 480, &[&[0x00, 0x99, 36, 80, 0x60, 36, 0, 0x00, 42, 70]]);
        let parsed = parse_midi(&bytes, &g7(), ParseOptions::default()).unwrap();
        let ev = parsed.track.events();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[1].hit, HH);
        assert!((ev[1].time - 0.1).abs() < 1e-12);
    }

    #[test]
    fn unknown_pitches_are_reported() {
        let bytes = smf(0, 480, &[&[0x00, 0x99, 99, 80, 0x00, 0x99, 99, 81, 0x00, 0x99, 38, 82]]);
        let parsed = parse_midi(&bytes, &g7(), ParseOptions::default()).unwrap();
        assert_eq!(parsed.track.len(), 1);
        assert_eq!(parsed.skipped_pitches.get(&99), Some(&2));
    }

    #[test]
    fn channel_filter() {
        let bytes = smf(0, 480, &[&[0x00, 0x90, 36, 80]]);
        assert!(parse_midi(&bytes, &g7(), ParseOptions::default()).unwrap().track.is_empty());
        let any = parse_midi(&bytes, &g7(), ParseOptions { channel: None }).unwrap();
        assert_eq!(any.track.len(), 1);
    }

    #[test]
    fn malformed_reports_offset() {
        let mut bytes = smf(0, 480, &[&[0x00, 0x99, 36, 100]]);
        bytes.truncate(bytes.len() - 3);
        match parse_midi(&bytes, &g7(), ParseOptions::default()) {
            Err(MidiError::Malformed { offset, .. }) => assert_eq!(offset, 14),
            other => panic!("expected malformed error, got {other:?}"),
        }
        match parse_midi(b"RIFF\0\0\0\0", &g7(), ParseOptions::default()) {
            Err(MidiError::Malformed { offset: 0, .. }) => {}
            other => panic!("expected malformed error, got {other:?}"),
        }
        let bytes = smf(0, 480, &[&[0x00, 0xF4]]);
        assert!(matches!(parse_midi(&bytes, &g7(), ParseOptions::default()), Err(MidiError::Malformed { offset: 23, .. })));
    }

    #[test]
    fn format_two_is_unsupported() {
        let bytes = smf(2, 480, &[&[]]);
        assert!(matches!(parse_midi(&bytes, &g7(), ParseOptions::default()), Err(MidiError::UnsupportedFormat(2))));
    }

    #[test]
    fn smpte_division() {
        // 25 fps, 40 ticks per frame = 1000 ticks/s
        let division: u16 = ((-25i8 as u8 as u16) << 8) | 40;
        let bytes = smf(0, division, &[&[0x87, 0x68, 0x99, 36, 100]]);
        let parsed = parse_midi(&bytes, &g7(), ParseOptions::default()).unwrap();
        assert!((parsed.track.events()[0].time - 1.0).abs() < 1e-12);
    }

    #[test]
    fn write_then_parse_round_trip() {
        let track = DrumTrack::new(
            HitLevel::Group7,
            vec![DrumEvent::new(0.0, KD, 100), DrumEvent::new(0.25, SD, 60), DrumEvent::new(1.5, HH, 30)],
            2.0,
        )
        .unwrap();
        let bytes = write_midi(&track, &g7(), 480).unwrap();
        let back = parse_midi(&bytes, &g7(), ParseOptions::default()).unwrap().track;
        assert_eq!(back, track);
    }

    #[test]
    fn simultaneous_hits_share_a_tick() {
        let track = DrumTrack::new(HitLevel::Group7, vec![DrumEvent::new(0.5, KD, 100), DrumEvent::new(0.5, HH, 90)], 1.0).unwrap();
        let bytes = write_midi(&track, &g7(), 480).unwrap();
        let back = parse_midi(&bytes, &g7(), ParseOptions::default()).unwrap().track;
        assert_eq!(back.events()[0].time, back.events()[1].time);
        assert_eq!(back.len(), 2);
    }

    #[test]
    fn unrepresentable_time_is_an_error() {
        let track = DrumTrack::new(HitLevel::Group7, vec![DrumEvent::new(1e9, KD, 100)], 1e9).unwrap();
        assert!(matches!(write_midi(&track, &g7(), 480), Err(MidiError::TimeOverflow { .. })));
    }

    #[test]
    fn vlq_encoding() {
        for (v, enc) in [(0u32, vec![0x00]), (0x7F, vec![0x7F]), (0x80, vec![0x81, 0x00]), (0x0FFF_FFFF, vec![0xFF, 0xFF, 0xFF, 0x7F])] {
            let mut out = Vec::new();
            push_vlq(&mut out, v);
            assert_eq!(out, enc);
            let mut c = Cursor { data: &out, pos: 0 };
            assert_eq!(c.vlq().unwrap(), v);
        }
    }
}
