//! Manifest-driven corpus bookkeeping.
//!
//! A manifest is a CSV with the columns `audio_path, midi_path, kit_id,
//! split`, optionally followed by `sequence_id`, `alignment_offset_ms` and
//! `duration`. Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::audio::wav_file_info;
use crate::midi::{parse_midi, DrumTrack, HitLevel, HitVocabulary, ParseOptions, GROUP7_NAMES};

/// Largest audio/MIDI misalignment accepted by default, in milliseconds.
pub const MAX_ALIGNMENT_MS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validation,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::Validation];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Validation => "validation",
        })
    }
}

impl FromStr for Split {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "validation" => Ok(Split::Validation),
            other => Err(DatasetError::UnknownSplit(other.to_string())),
        }
    }
}

/// One audio/MIDI pair listed in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub audio_path: PathBuf,
    pub midi_path: PathBuf,
    pub kit_id: String,
    pub split: Split,
    /// Identifies the underlying performance; shared by renderings on different kits.
    pub sequence_id: String,
    /// Audio-to-MIDI offset in milliseconds.
    pub alignment_offset_ms: f64,
    /// Audio length in seconds.
    pub duration: f64,
}

impl ExamplePair {
    pub fn load_track(&self, vocab: &HitVocabulary, options: ParseOptions) -> Result<DrumTrack, DatasetError> {
        let bytes = std::fs::read(&self.midi_path).map_err(|e| DatasetError::Io { path: self.midi_path.clone(), source: e })?;
        Ok(parse_midi(&bytes, vocab, options)?.track)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub unique_sequences: usize,
    pub total_sequences: usize,
    pub duration_hours: f64,
}

/// Per-row problem that excluded the row from the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowError {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub pairs: Vec<ExamplePair>,
    pub row_errors: Vec<RowError>,
}

impl Manifest {
    pub fn stats(&self) -> BTreeMap<Split, SplitStats> {
        split_stats(&self.pairs)
    }

    /// Sequence ids that appear in more than one split.
    pub fn leaked_sequences(&self) -> Vec<String> {
        let mut splits: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        for p in &self.pairs {
            splits.entry(&p.sequence_id).or_default().insert(p.split);
        }
        splits.into_iter().filter(|(_, s)| s.len() > 1).map(|(id, _)| id.to_string()).collect()
    }
}

pub fn split_stats(pairs: &[ExamplePair]) -> BTreeMap<Split, SplitStats> {
    let mut out: BTreeMap<Split, SplitStats> = Split::ALL.iter().map(|&s| (s, SplitStats::default())).collect();
    let mut unique: BTreeMap<Split, BTreeSet<&str>> = BTreeMap::new();
    for p in pairs {
        let s = out.get_mut(&p.split).expect("all splits present");
        s.total_sequences += 1;
        s.duration_hours += p.duration / 3600.0;
        unique.entry(p.split).or_default().insert(&p.sequence_id);
    }
    for (split, ids) in unique {
        out.get_mut(&split).expect("all splits present").unique_sequences = ids.len();
    }
    out
}

#[derive(Debug, Deserialize)]
struct Row {
    audio_path: String,
    midi_path: String,
    kit_id: String,
    split: String,
    #[serde(default)]
    sequence_id: Option<String>,
    #[serde(default)]
    alignment_offset_ms: Option<f64>,
    #[serde(default)]
    duration: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ManifestOptions {
    pub max_alignment_ms: f64,
    /// Check that files exist and read WAV headers when no duration is given.
    pub check_files: bool,
}

impl Default for ManifestOptions {
    fn default() -> Self {
        ManifestOptions { max_alignment_ms: MAX_ALIGNMENT_MS, check_files: true }
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, DatasetError> {
    load_manifest_with(path, &ManifestOptions::default())
}

/// Read and validate a manifest.
///
/// Missing files and out-of-tolerance alignment become [`RowError`]s; an
/// unknown split token aborts the whole load.
pub fn load_manifest_with(path: impl AsRef<Path>, opts: &ManifestOptions) -> Result<Manifest, DatasetError> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .map_err(|e| DatasetError::Csv { path: path.to_path_buf(), source: e })?;
    let mut manifest = Manifest::default();
    for (idx, row) in reader.deserialize::<Row>().enumerate() {
        let row_no = idx + 1;
        let row = row.map_err(|e| DatasetError::Csv { path: path.to_path_buf(), source: e })?;
        let split: Split = row.split.parse()?;
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let audio_path = resolve(&row.audio_path);
        let midi_path = resolve(&row.midi_path);
        let offset = row.alignment_offset_ms.unwrap_or(0.0);
        let mut fail = |reason: String| manifest.row_errors.push(RowError { row: row_no, reason });

        if offset.abs() > opts.max_alignment_ms {
            fail(format!("alignment offset {offset} ms exceeds {} ms", opts.max_alignment_ms));
            continue;
        }
        let mut duration = row.duration;
        if opts.check_files {
            if !midi_path.is_file() {
                fail(format!("missing MIDI file {}", midi_path.display()));
                continue;
            }
            if !audio_path.is_file() {
                fail(format!("missing audio file {}", audio_path.display()));
                continue;
            }
            if duration.is_none() {
                match wav_file_info(&audio_path) {
                    Ok(info) => duration = Some(info.duration()),
                    Err(e) => {
                        fail(format!("unreadable audio {}: {e}", audio_path.display()));
                        continue;
                    }
                }
            }
        }
        let sequence_id = row
            .sequence_id
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| Path::new(&row.midi_path).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        manifest.pairs.push(ExamplePair {
            audio_path,
            midi_path,
            kit_id: row.kit_id,
            split,
            sequence_id,
            alignment_offset_ms: offset,
            duration: duration.unwrap_or(0.0),
        });
    }
    Ok(manifest)
}

/// Write a manifest CSV (all columns).
pub fn write_manifest(path: impl AsRef<Path>, pairs: &[ExamplePair]) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let csv_err = |e| DatasetError::Csv { path: path.to_path_buf(), source: e };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["audio_path", "midi_path", "kit_id", "split", "sequence_id", "alignment_offset_ms", "duration"]).map_err(csv_err)?;
    for p in pairs {
        w.write_record([
            p.audio_path.to_string_lossy().as_ref(),
            p.midi_path.to_string_lossy().as_ref(),
            &p.kit_id,
            &p.split.to_string(),
            &p.sequence_id,
            &p.alignment_offset_ms.to_string(),
            &p.duration.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| DatasetError::Io { path: path.to_path_buf(), source: e })
}

#[derive(Debug, Deserialize)]
struct EgmdRow {
    id: String,
    duration: f64,
    split: String,
    midi_filename: String,
    audio_filename: String,
    kit_name: String,
}

/// Build manifest rows from an E-GMD v1.0.0 directory (the release's
/// `e-gmd-v1.0.0.csv` index). Paths are made relative to `root`.
pub fn egmd_manifest(root: impl AsRef<Path>) -> Result<Vec<ExamplePair>, DatasetError> {
    let root = root.as_ref();
    let index = std::fs::read_dir(root)
        .map_err(|e| DatasetError::Io { path: root.to_path_buf(), source: e })?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .find(|p| p.extension().is_some_and(|x| x == "csv") && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("e-gmd")))
        .ok_or_else(|| DatasetError::Io { path: root.join("e-gmd-v1.0.0.csv"), source: std::io::ErrorKind::NotFound.into() })?;
    let mut reader = csv::Reader::from_path(&index).map_err(|e| DatasetError::Csv { path: index.clone(), source: e })?;
    let mut out = Vec::new();
    for row in reader.deserialize::<EgmdRow>() {
        let row = row.map_err(|e| DatasetError::Csv { path: index.clone(), source: e })?;
        out.push(ExamplePair {
            audio_path: root.join(&row.audio_filename),
            midi_path: root.join(&row.midi_filename),
            kit_id: row.kit_name,
            split: row.split.parse()?,
            sequence_id: row.id,
            alignment_offset_ms: 0.0,
            duration: row.duration,
        });
    }
    Ok(out)
}

/// Group7 hit counts per split.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct HitCounts {
    pub counts: BTreeMap<Split, [u64; 7]>,
}

impl HitCounts {
    pub fn get(&self, split: Split, hit: u16) -> u64 {
        self.counts.get(&split).map_or(0, |c| c[hit as usize])
    }

    pub fn add_track(&mut self, split: Split, track: &DrumTrack) {
        let row = self.counts.entry(split).or_insert([0; 7]);
        for e in track.events() {
            row[e.hit as usize] += 1;
        }
    }

    /// Table with one row per hit and one column per split.
    pub fn to_table(&self) -> String {
        let mut s = String::from("hit,train,test,validation\n");
        for (id, name) in GROUP7_NAMES.iter().enumerate() {
            s.push_str(name);
            for split in Split::ALL {
                s.push_str(&format!(",{}", self.get(split, id as u16)));
            }
            s.push('\n');
        }
        s
    }
}

/// Parse every pair's MIDI, map to Group7 and count hits by split.
pub fn hit_counts(pairs: &[ExamplePair], vocab: &HitVocabulary, options: ParseOptions) -> Result<HitCounts, DatasetError> {
    let mut out = HitCounts::default();
    for p in pairs {
        let track = p.load_track(vocab, options)?;
        let g7 = vocab.map_hits(&track, HitLevel::Group7)?;
        out.add_track(p.split, &g7);
    }
    Ok(out)
}
