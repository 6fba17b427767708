//! Listening-test session state: question assignment, rating intake and
//! results. Transport-agnostic; the HTTP layer wraps it in a mutex so all
//! writes go through one appender.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{analyze, Analysis, ListenError, Rating, RatingStore, Result, Side, Study};
use crate::seed::child_rng;

/// How the canonical pair was laid out for the rater.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    /// Canonical A presented as "A".
    Ab,
    /// Canonical B presented as "A".
    Ba,
}

/// A question as the rater sees it: labels only, no model ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServedQuestion {
    pub question_id: u32,
    pub order: Order,
    pub original: String,
    pub a: String,
    pub b: String,
    /// Questions this rater has not answered yet, including this one.
    pub remaining: usize,
}

/// A rater's answer in presented terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub rater: String,
    pub question_id: u32,
    pub order: Order,
    /// The presented label that was preferred.
    pub winner: Side,
    pub likert: u8,
}

pub struct ListenService {
    study: Study,
    store: RatingStore,
    ratings: Vec<Rating>,
    answered: HashSet<(String, u32)>,
    counts: Vec<usize>,
    rng: ChaCha8Rng,
    audio_prefix: String,
}

impl ListenService {
    /// Opens the rating log and replays it. Ratings for questions the study
    /// does not contain are rejected as corruption.
    pub fn open(study: Study, store_path: impl AsRef<Path>, seed: u64) -> Result<Self> {
        let (store, replay) = RatingStore::open(store_path)?;
        if replay.duplicates > 0 {
            log::warn!("ignored {} duplicate ratings during replay", replay.duplicates);
        }
        let mut counts = vec![0; study.questions.len()];
        let mut answered = HashSet::new();
        for (i, r) in replay.ratings.iter().enumerate() {
            let q = study
                .question(r.question_id)
                .ok_or_else(|| ListenError::Corrupt { line: i + 1, reason: format!("question {} is not in the study", r.question_id) })?;
            if q.a.model != r.model_a || q.b.model != r.model_b {
                return Err(ListenError::Corrupt { line: i + 1, reason: format!("models differ from question {}", q.id) });
            }
            counts[r.question_id as usize] += 1;
            answered.insert((r.rater.clone(), r.question_id));
        }
        log::info!("rating store {}: {} ratings replayed", store.path().display(), replay.ratings.len());
        Ok(Self { study, store, ratings: replay.ratings, answered, counts, rng: child_rng(seed, 0x5e7e), audio_prefix: "/audio/".into() })
    }

    pub fn study(&self) -> &Study {
        &self.study
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    /// The least-answered question this rater has not answered (lowest id on
    /// ties), with a fresh random A/B order. `None` once every question the
    /// rater could take has reached its rater quota.
    pub fn next_question(&mut self, rater: &str) -> Option<ServedQuestion> {
        let open = self.study.questions.iter().filter(|q| !self.answered.contains(&(rater.to_string(), q.id)));
        let remaining = open.clone().count();
        let q = open.min_by_key(|q| (self.counts[q.id as usize], q.id))?;
        if self.counts[q.id as usize] >= self.study.config.raters_per_question {
            return None;
        }
        let order = if self.rng.gen_bool(0.5) { Order::Ab } else { Order::Ba };
        let (a, b) = match order {
            Order::Ab => (&q.a.audio, &q.b.audio),
            Order::Ba => (&q.b.audio, &q.a.audio),
        };
        let url = |name: &str| format!("{}{name}", self.audio_prefix);
        Some(ServedQuestion { question_id: q.id, order, original: url(&q.original), a: url(a), b: url(b), remaining })
    }

    /// Validates, maps the presented winner back to the canonical pair and
    /// appends durably. The rating is acknowledged only after the write.
    pub fn submit(&mut self, sub: &Submission, timestamp_ms: u64) -> Result<Rating> {
        let q = self.study.question(sub.question_id).ok_or(ListenError::UnknownQuestion(sub.question_id))?;
        let key = (sub.rater.clone(), sub.question_id);
        if self.answered.contains(&key) {
            return Err(ListenError::Duplicate { rater: sub.rater.clone(), question: sub.question_id });
        }
        let winner = match (sub.order, sub.winner) {
            (Order::Ab, w) => w,
            (Order::Ba, Side::A) => Side::B,
            (Order::Ba, Side::B) => Side::A,
        };
        let rating = Rating {
            question_id: q.id,
            clip_id: q.clip_id.clone(),
            model_a: q.a.model.clone(),
            model_b: q.b.model.clone(),
            winner,
            likert: sub.likert,
            rater: sub.rater.clone(),
            timestamp_ms,
        };
        rating.validate()?;
        self.store.append(&rating)?;
        self.counts[q.id as usize] += 1;
        self.answered.insert(key);
        self.ratings.push(rating.clone());
        Ok(rating)
    }

    pub fn results(&self, alpha: f64) -> Analysis {
        analyze(&self.ratings, alpha)
    }

    /// Whether `name` is one of the study's served files.
    pub fn serves_audio(&self, name: &str) -> bool {
        self.study.audio_files().any(|(f, _)| f.name == name)
    }
}
