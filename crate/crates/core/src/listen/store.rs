//! Append-only JSON-lines rating log.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{ListenError, Rating, Result};

/// What was recovered when a store was opened.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Replay {
    pub ratings: Vec<Rating>,
    /// Lines repeating an earlier (rater, question) key; the first one wins.
    pub duplicates: usize,
    /// A partial final line was discarded.
    pub truncated_tail: bool,
}

/// Replay a log without opening it for writing.
pub fn read_ratings(path: impl AsRef<Path>) -> Result<Replay> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| ListenError::Store(path.display().to_string(), e))?;
    parse_log(&bytes)
}

fn parse_log(bytes: &[u8]) -> Result<Replay> {
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut replay = Replay { truncated_tail: complete < bytes.len(), ..Replay::default() };
    let mut seen = HashSet::new();
    for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let rating: Rating = serde_json::from_slice(line).map_err(|e| ListenError::Corrupt { line: i + 1, reason: e.to_string() })?;
        if seen.insert((rating.rater.clone(), rating.question_id)) {
            replay.ratings.push(rating);
        } else {
            replay.duplicates += 1;
        }
    }
    Ok(replay)
}

pub struct RatingStore {
    file: File,
    path: PathBuf,
}

impl RatingStore {
    /// Opens (creating if needed) and replays the log. A final line without a
    /// newline is an interrupted write that was never acknowledged; it is cut
    /// off so later appends start on a clean line.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Replay)> {
        let path = path.as_ref().to_path_buf();
        let io = |e| ListenError::Store(path.display().to_string(), e);
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path).map_err(io)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io)?;
        let replay = parse_log(&bytes)?;
        if replay.truncated_tail {
            let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            log::warn!("{}: discarding {} bytes of an unfinished record", path.display(), bytes.len() - complete);
            file.set_len(complete as u64).map_err(io)?;
            file.sync_all().map_err(io)?;
            file.seek(SeekFrom::End(0)).map_err(io)?;
        }
        Ok((Self { file, path }, replay))
    }

    /// Writes one record and forces it to disk before returning.
    pub fn append(&mut self, rating: &Rating) -> Result<()> {
        let mut line = serde_json::to_vec(rating).expect("rating serialises");
        line.push(b'\n');
        let io = |e| ListenError::Store(self.path.display().to_string(), e);
        self.file.write_all(&line).map_err(io)?;
        self.file.sync_data().map_err(io)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
