//! Drum hit vocabularies and the 25 → 7 → 3 class hierarchy.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::MidiError;

/// Index of a hit class within a vocabulary level.
pub type HitId = u16;

/// Granularity of a hit vocabulary.
///
/// `Full` is the dataset's native label set (25 hits for E-GMD). The two
/// grouped levels are fixed and shared by every dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HitLevel {
    Full,
    Group7,
    Group3,
}

impl HitLevel {
    fn rank(self) -> u8 {
        match self {
            HitLevel::Full => 0,
            HitLevel::Group7 => 1,
            HitLevel::Group3 => 2,
        }
    }

    /// True when `self` is the same as or coarser than `other`.
    pub fn is_coarser_or_equal(self, other: HitLevel) -> bool {
        self.rank() >= other.rank()
    }
}

impl fmt::Display for HitLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HitLevel::Full => "full",
            HitLevel::Group7 => "group7",
            HitLevel::Group3 => "group3",
        })
    }
}

impl FromStr for HitLevel {
    type Err = MidiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "full25" | "25" => Ok(HitLevel::Full),
            "group7" | "7" => Ok(HitLevel::Group7),
            "group3" | "3" => Ok(HitLevel::Group3),
            other => Err(MidiError::Config { line: 0, reason: format!("unknown hit level `{other}`") }),
        }
    }
}

/// The seven evaluation classes, in class-id order.
pub const GROUP7_NAMES: [&str; 7] = ["KD", "SD", "TT", "HH", "CY", "RD", "BE"];
/// The three standard classes, in class-id order.
pub const GROUP3_NAMES: [&str; 3] = ["KD", "SD", "HH"];

/// Group7 class → Group3 class.
const GROUP7_TO_GROUP3: [HitId; 7] = [0, 1, 1, 2, 2, 2, 2];

/// General MIDI percussion pitches for the seven classes, in class-id order.
pub const GM_PITCHES: [u8; 7] = [36, 38, 47, 42, 49, 51, 53];
/// General MIDI instrument names matching [`GM_PITCHES`].
pub const GM_NAMES: [&str; 7] =
    ["Bass Drum 1", "Acoustic Snare", "Low-Mid Tom", "Closed Hi Hat", "Crash Cymbal 1", "Ride Cymbal 1", "Ride Bell"];

pub const KD: HitId = 0;
pub const SD: HitId = 1;
pub const TT: HitId = 2;
pub const HH: HitId = 3;
pub const CY: HitId = 4;
pub const RD: HitId = 5;
pub const BE: HitId = 6;

const DEFAULT_CONFIG: &str = include_str!("../../data/egmd_vocab.csv");
const CONFIG_MAGIC: &str = "# drumscribe-vocab v1";

#[derive(Debug, Clone, PartialEq, Eq)]
struct FullHit {
    name: String,
    pitches: Vec<u8>,
    group7: HitId,
}

/// The dataset-specific part of a vocabulary: named hits, their pitches and
/// their Group7 assignment. Group3 follows from Group7.
#[derive(Debug, Clone, PartialEq, Eq)]
struct KitTable {
    hits: Vec<FullHit>,
    pitch_to_full: BTreeMap<u8, HitId>,
}

impl KitTable {
    fn parse(text: &str) -> Result<Self, MidiError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, first)) if first.trim() == CONFIG_MAGIC => {}
            _ => return Err(MidiError::Config { line: 1, reason: format!("missing `{CONFIG_MAGIC}` header") }),
        }

        let mut hits: Vec<FullHit> = Vec::new();
        let mut pitch_to_full = BTreeMap::new();
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| MidiError::Config { line: line_no, reason };
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(err(format!("expected 4 columns, found {}", cols.len())));
            }
            let pitch: u8 = cols[0].parse().ok().filter(|p| *p < 128).ok_or_else(|| err(format!("bad pitch `{}`", cols[0])))?;
            let name = cols[1].to_string();
            let group7 =
                GROUP7_NAMES.iter().position(|n| *n == cols[2]).ok_or_else(|| err(format!("unknown 7-hit class `{}`", cols[2])))? as HitId;
            let group3 =
                GROUP3_NAMES.iter().position(|n| *n == cols[3]).ok_or_else(|| err(format!("unknown 3-hit class `{}`", cols[3])))? as HitId;
            if GROUP7_TO_GROUP3[group7 as usize] != group3 {
                return Err(err(format!(
                    "{} is grouped under {} but {} belongs to {}",
                    name, cols[3], cols[2], GROUP3_NAMES[GROUP7_TO_GROUP3[group7 as usize] as usize]
                )));
            }
            if pitch_to_full.contains_key(&pitch) {
                return Err(err(format!("pitch {pitch} listed twice")));
            }

            let id = match hits.iter().position(|h| h.name == name) {
                Some(id) => {
                    if hits[id].group7 != group7 {
                        return Err(err(format!("hit `{name}` assigned to two groups")));
                    }
                    hits[id].pitches.push(pitch);
                    id
                }
                None => {
                    hits.push(FullHit { name, pitches: vec![pitch], group7 });
                    hits.len() - 1
                }
            };
            pitch_to_full.insert(pitch, id as HitId);
        }
        if hits.is_empty() {
            return Err(MidiError::Config { line: 0, reason: "no hits defined".into() });
        }
        Ok(KitTable { hits, pitch_to_full })
    }
}

/// A hit vocabulary at one level of the hierarchy.
///
/// All levels built from the same config share one underlying kit table, so
/// tracks can be remapped between them with [`HitVocabulary::map_hits`].
#[derive(Debug, Clone)]
pub struct HitVocabulary {
    level: HitLevel,
    kit: Arc<KitTable>,
}

impl PartialEq for HitVocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.level == other.level && (Arc::ptr_eq(&self.kit, &other.kit) || self.kit == other.kit)
    }
}

impl HitVocabulary {
    /// The built-in E-GMD vocabulary.
    pub fn egmd(level: HitLevel) -> Self {
        Self::from_config(DEFAULT_CONFIG, level).expect("built-in vocabulary is valid")
    }

    /// Parse a `pitch,name,group7,group3` config.
    pub fn from_config(text: &str, level: HitLevel) -> Result<Self, MidiError> {
        Ok(HitVocabulary { level, kit: Arc::new(KitTable::parse(text)?) })
    }

    /// The text of the built-in config.
    pub fn default_config() -> &'static str {
        DEFAULT_CONFIG
    }

    /// The same kit table viewed at another level.
    pub fn at_level(&self, level: HitLevel) -> Self {
        HitVocabulary { level, kit: Arc::clone(&self.kit) }
    }

    pub fn level(&self) -> HitLevel {
        self.level
    }

    pub fn len(&self) -> usize {
        match self.level {
            HitLevel::Full => self.kit.hits.len(),
            HitLevel::Group7 => GROUP7_NAMES.len(),
            HitLevel::Group3 => GROUP3_NAMES.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, hit: HitId) -> bool {
        (hit as usize) < self.len()
    }

    pub fn name(&self, hit: HitId) -> Option<&str> {
        match self.level {
            HitLevel::Full => self.kit.hits.get(hit as usize).map(|h| h.name.as_str()),
            HitLevel::Group7 => GROUP7_NAMES.get(hit as usize).copied(),
            HitLevel::Group3 => GROUP3_NAMES.get(hit as usize).copied(),
        }
    }

    /// `(id, name)` pairs in id order.
    pub fn entries(&self) -> Vec<(HitId, String)> {
        (0..self.len() as HitId).map(|id| (id, self.name(id).unwrap_or_default().to_string())).collect()
    }

    pub fn id_of(&self, name: &str) -> Option<HitId> {
        (0..self.len() as HitId).find(|&id| self.name(id) == Some(name))
    }

    /// Hit for an incoming MIDI pitch, if the pitch is part of the kit.
    pub fn hit_for_pitch(&self, pitch: u8) -> Option<HitId> {
        let full = *self.kit.pitch_to_full.get(&pitch)?;
        Some(self.group_of(full, self.level))
    }

    /// Full pitch → hit map at this level.
    pub fn pitch_map(&self) -> BTreeMap<u8, HitId> {
        self.kit.pitch_to_full.keys().filter_map(|&p| Some((p, self.hit_for_pitch(p)?))).collect()
    }

    /// Pitch written out for a hit: the first listed pitch at the full level,
    /// General MIDI at the grouped levels.
    pub fn pitch_for(&self, hit: HitId) -> Option<u8> {
        match self.level {
            HitLevel::Full => self.kit.hits.get(hit as usize).map(|h| h.pitches[0]),
            HitLevel::Group7 => GM_PITCHES.get(hit as usize).copied(),
            HitLevel::Group3 => {
                let g7 = [KD, SD, HH];
                g7.get(hit as usize).map(|&g| GM_PITCHES[g as usize])
            }
        }
    }

    fn group_of(&self, full: HitId, to: HitLevel) -> HitId {
        let g7 = self.kit.hits[full as usize].group7;
        match to {
            HitLevel::Full => full,
            HitLevel::Group7 => g7,
            HitLevel::Group3 => GROUP7_TO_GROUP3[g7 as usize],
        }
    }

    /// Map one hit id from `from` to the coarser-or-equal level `to`.
    pub fn map_hit(&self, hit: HitId, from: HitLevel, to: HitLevel) -> Result<HitId, MidiError> {
        if !to.is_coarser_or_equal(from) {
            return Err(MidiError::FinerLevel { from, to });
        }
        let size = self.at_level(from).len();
        if hit as usize >= size {
            return Err(MidiError::UnknownHit { hit, level: from });
        }
        Ok(match (from, to) {
            (a, b) if a == b => hit,
            (HitLevel::Full, _) => self.group_of(hit, to),
            (HitLevel::Group7, HitLevel::Group3) => GROUP7_TO_GROUP3[hit as usize],
            _ => unreachable!("finer levels rejected above"),
        })
    }

    /// Remap every event of `track` to the level `to`.
    ///
    /// Times and velocities are untouched and the event count is preserved.
    pub fn map_hits(&self, track: &super::DrumTrack, to: HitLevel) -> Result<super::DrumTrack, MidiError> {
        let from = track.level();
        let events = track
            .events()
            .iter()
            .map(|e| Ok(super::DrumEvent { hit: self.map_hit(e.hit, from, to)?, ..*e }))
            .collect::<Result<Vec<_>, MidiError>>()?;
        super::DrumTrack::new(to, events, track.duration())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_has_25_hits() {
        let v = HitVocabulary::egmd(HitLevel::Full);
        assert_eq!(v.len(), 25);
        assert_eq!(v.pitch_map().len(), 25);
        assert_eq!(v.name(0), Some("Kick drum"));
    }

    #[test]
    fn group_maps_are_surjective() {
        let full = HitVocabulary::egmd(HitLevel::Full);
        let mut seen7 = [false; 7];
        let mut seen3 = [false; 3];
        for id in 0..full.len() as HitId {
            seen7[full.map_hit(id, HitLevel::Full, HitLevel::Group7).unwrap() as usize] = true;
            seen3[full.map_hit(id, HitLevel::Full, HitLevel::Group3).unwrap() as usize] = true;
        }
        assert!(seen7.iter().all(|&s| s));
        assert!(seen3.iter().all(|&s| s));
    }

    #[test]
    fn three_level_composition() {
        let full = HitVocabulary::egmd(HitLevel::Full);
        for id in 0..full.len() as HitId {
            let g7 = full.map_hit(id, HitLevel::Full, HitLevel::Group7).unwrap();
            let via = full.map_hit(g7, HitLevel::Group7, HitLevel::Group3).unwrap();
            assert_eq!(via, full.map_hit(id, HitLevel::Full, HitLevel::Group3).unwrap());
        }
    }

    #[test]
    fn finer_mapping_is_rejected() {
        let v = HitVocabulary::egmd(HitLevel::Group3);
        assert!(matches!(v.map_hit(0, HitLevel::Group3, HitLevel::Group7), Err(MidiError::FinerLevel { .. })));
    }

    #[test]
    fn gm_pitches_parse_back_to_their_class() {
        let v = HitVocabulary::egmd(HitLevel::Group7);
        for (id, &p) in GM_PITCHES.iter().enumerate() {
            assert_eq!(v.hit_for_pitch(p), Some(id as HitId));
        }
    }

    #[test]
    fn config_rejects_inconsistent_groups() {
        let text = "# drumscribe-vocab v1\n36,Kick,KD,SD\n";
        assert!(HitVocabulary::from_config(text, HitLevel::Full).is_err());
        let text = "36,Kick,KD,KD\n";
        assert!(HitVocabulary::from_config(text, HitLevel::Full).is_err());
    }

    #[test]
    fn config_aliases_share_an_id() {
        let text = "# drumscribe-vocab v1\n36,Kick,KD,KD\n35,Kick,KD,KD\n38,Snare,SD,SD\n";
        let v = HitVocabulary::from_config(text, HitLevel::Full).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.hit_for_pitch(35), Some(0));
        assert_eq!(v.pitch_for(0), Some(36));
    }
}
