//! Pairwise listening tests: study construction, the rating store, serving
//! logic and the rank statistics used to analyse the ratings.

mod service;
pub mod stats;
mod store;
mod study;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use service::{ListenService, Order, ServedQuestion, Submission};
pub use stats::{
    average_ranks, bonferroni, chi2_sf, kruskal_wallis, signed_rank, wilcoxon_signed_rank, Alternative, Bonferroni, KruskalWallis, Wilcoxon,
};
pub use store::{read_ratings, RatingStore, Replay};
pub use study::{build_study, AudioFile, Candidate, ClipSource, Excerpt, Question, SkippedClip, Study, StudyClip, StudyConfig};

#[derive(Debug, Error)]
pub enum ListenError {
    #[error("statistics: {0}")]
    Stats(String),
    #[error("invalid rating: {0}")]
    Invalid(String),
    #[error("unknown question {0}")]
    UnknownQuestion(u32),
    #[error("rater `{rater}` already answered question {question}")]
    Duplicate { rater: String, question: u32 },
    #[error("rating store {0}: {1}")]
    Store(String, #[source] std::io::Error),
    #[error("rating store line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("study: {0}")]
    Study(String),
}

pub type Result<T> = std::result::Result<T, ListenError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

/// One answered question, with `model_a`/`model_b` in the study's canonical
/// order regardless of how the pair was presented.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub question_id: u32,
    pub clip_id: String,
    pub model_a: String,
    pub model_b: String,
    pub winner: Side,
    /// Strength of preference, 1..=5.
    pub likert: u8,
    pub rater: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
}

impl Rating {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.likert) {
            return Err(ListenError::Invalid(format!("likert {} outside 1..=5", self.likert)));
        }
        if self.model_a == self.model_b {
            return Err(ListenError::Invalid(format!("both candidates are `{}`", self.model_a)));
        }
        if self.rater.trim().is_empty() {
            return Err(ListenError::Invalid("empty rater id".into()));
        }
        Ok(())
    }

    pub fn winner_model(&self) -> &str {
        match self.winner {
            Side::A => &self.model_a,
            Side::B => &self.model_b,
        }
    }

    pub fn loser_model(&self) -> &str {
        match self.winner {
            Side::A => &self.model_b,
            Side::B => &self.model_a,
        }
    }
}

/// Head-to-head tally for one pair of models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairWins {
    pub a: String,
    pub b: String,
    pub a_wins: usize,
    pub b_wins: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WinCounts {
    pub per_model: BTreeMap<String, usize>,
    /// Keyed by the pair in sorted order.
    pub per_pair: Vec<PairWins>,
}

impl WinCounts {
    pub fn wins(&self, model: &str) -> usize {
        self.per_model.get(model).copied().unwrap_or(0)
    }

    pub fn pair(&self, a: &str, b: &str) -> Option<(usize, usize)> {
        self.per_pair.iter().find_map(|p| match (p.a == a && p.b == b, p.a == b && p.b == a) {
            (true, _) => Some((p.a_wins, p.b_wins)),
            (_, true) => Some((p.b_wins, p.a_wins)),
            _ => None,
        })
    }
}

/// Wins per model and per pair. Every model that took part is listed, even
/// with zero wins.
pub fn count_wins(ratings: &[Rating]) -> WinCounts {
    let mut per_model: BTreeMap<String, usize> = BTreeMap::new();
    let mut pairs: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for r in ratings {
        per_model.entry(r.model_a.clone()).or_default();
        per_model.entry(r.model_b.clone()).or_default();
        *per_model.get_mut(r.winner_model()).expect("inserted above") += 1;
        let (a, b) = if r.model_a <= r.model_b { (&r.model_a, &r.model_b) } else { (&r.model_b, &r.model_a) };
        let entry = pairs.entry((a.clone(), b.clone())).or_default();
        if r.winner_model() == a {
            entry.0 += 1;
        } else {
            entry.1 += 1;
        }
    }
    let per_pair = pairs.into_iter().map(|((a, b), (a_wins, b_wins))| PairWins { a, b, a_wins, b_wins }).collect();
    WinCounts { per_model, per_pair }
}

/// Signed preference strength of `model` in one rating: `+likert` for a win,
/// `-likert` for a loss, `None` when it was not compared.
pub fn preference(r: &Rating, model: &str) -> Option<f64> {
    let l = f64::from(r.likert);
    if r.winner_model() == model {
        Some(l)
    } else if r.loser_model() == model {
        Some(-l)
    } else {
        None
    }
}

/// Post-hoc comparison of one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: String,
    pub b: String,
    pub n: usize,
    pub w_plus: f64,
    pub p: f64,
    pub adjusted_p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub ratings: usize,
    pub wins: WinCounts,
    /// Over the per-model signed preference strengths.
    pub kruskal_wallis: Option<KruskalWallis>,
    pub pairwise: Vec<PairTest>,
    pub alpha: f64,
    pub diagnostics: Vec<String>,
}

/// Win counts, a Kruskal–Wallis test over each model's signed preference
/// strengths, and for every pair a two-sided signed-rank test of the
/// head-to-head preferences with Bonferroni correction over all pairs.
pub fn analyze(ratings: &[Rating], alpha: f64) -> Analysis {
    let wins = count_wins(ratings);
    let models: Vec<&String> = wins.per_model.keys().collect();
    let mut diagnostics = Vec::new();
    let groups: Vec<Vec<f64>> =
        models.iter().map(|m| ratings.iter().filter_map(|r| preference(r, m)).collect::<Vec<f64>>()).filter(|g| !g.is_empty()).collect();
    let kruskal_wallis = match kruskal_wallis(&groups) {
        Ok(kw) => Some(kw),
        Err(e) => {
            diagnostics.push(format!("Kruskal–Wallis skipped: {e}"));
            None
        }
    };
    let mut tests = Vec::new();
    for (i, a) in models.iter().enumerate() {
        for b in &models[i + 1..] {
            let d: Vec<f64> = ratings
                .iter()
                .filter(|r| (&r.model_a == *a && &r.model_b == *b) || (&r.model_a == *b && &r.model_b == *a))
                .filter_map(|r| preference(r, a))
                .collect();
            match signed_rank(&d, Alternative::TwoSided) {
                Ok(w) => tests.push(((*a).clone(), (*b).clone(), w)),
                Err(e) => diagnostics.push(format!("{a} vs {b}: {e}")),
            }
        }
    }
    let m = models.len() * models.len().saturating_sub(1) / 2;
    let p: Vec<f64> = tests.iter().map(|t| t.2.p).collect();
    let pairwise = tests
        .into_iter()
        .zip(bonferroni(&p, alpha, m))
        .map(|((a, b, w), bf)| PairTest { a, b, n: w.n, w_plus: w.w_plus, p: w.p, adjusted_p: bf.adjusted, significant: bf.significant })
        .collect();
    Analysis { ratings: ratings.len(), wins, kruskal_wallis, pairwise, alpha, diagnostics }
}

impl Analysis {
    pub fn to_text(&self) -> String {
        let mut s = format!("ratings: {}\n\nwins\n", self.ratings);
        let mut models: Vec<(&String, &usize)> = self.wins.per_model.iter().collect();
        models.sort_by(|x, y| y.1.cmp(x.1).then(x.0.cmp(y.0)));
        for (m, w) in models {
            let _ = writeln!(s, "  {m:<32} {w:>6}");
        }
        s.push_str("\nhead to head\n");
        for p in &self.wins.per_pair {
            let _ = writeln!(s, "  {} {} - {} {}", p.a, p.a_wins, p.b_wins, p.b);
        }
        if let Some(kw) = &self.kruskal_wallis {
            let _ = writeln!(s, "\nKruskal–Wallis: H = {:.4}, df = {}, p = {:.4e}", kw.h, kw.df, kw.p);
        }
        let m = self.pairwise.len();
        let _ = writeln!(s, "\nWilcoxon signed-rank (two-sided), Bonferroni over {m} pairs at alpha {}", self.alpha);
        for t in &self.pairwise {
            let mark = if t.significant { "significant" } else { "n.s." };
            let _ = writeln!(
                s,
                "  {} vs {}: n = {}, W+ = {}, p = {:.4e}, adjusted {:.4e} ({mark})",
                t.a, t.b, t.n, t.w_plus, t.p, t.adjusted_p
            );
        }
        for d in &self.diagnostics {
            let _ = writeln!(s, "note: {d}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rating(q: u32, a: &str, b: &str, winner: Side, likert: u8) -> Rating {
        Rating {
            question_id: q,
            clip_id: format!("c{q}"),
            model_a: a.into(),
            model_b: b.into(),
            winner,
            likert,
            rater: "r".into(),
            timestamp_ms: 0,
        }
    }

    #[test]
    fn empty_ratings_count_nothing() {
        let w = count_wins(&[]);
        assert!(w.per_model.is_empty());
        assert_eq!(w.wins("x"), 0);
    }

    #[test]
    fn wins_per_model_and_pair() {
        let r = vec![rating(0, "x", "y", Side::A, 3), rating(1, "y", "x", Side::A, 2), rating(2, "x", "z", Side::B, 5)];
        let w = count_wins(&r);
        assert_eq!((w.wins("x"), w.wins("y"), w.wins("z")), (1, 1, 1));
        assert_eq!(w.pair("x", "y"), Some((1, 1)));
        assert_eq!(w.pair("z", "x"), Some((1, 0)));
        assert_eq!(w.pair("y", "z"), None);
    }

    #[test]
    fn rating_validation() {
        assert!(rating(0, "x", "y", Side::A, 0).validate().is_err());
        assert!(rating(0, "x", "y", Side::A, 6).validate().is_err());
        assert!(rating(0, "x", "x", Side::A, 3).validate().is_err());
        assert!(rating(0, "x", "y", Side::B, 1).validate().is_ok());
    }

    #[test]
    fn analysis_of_a_clear_winner() {
        let mut r = Vec::new();
        for q in 0..30 {
            r.push(rating(q, "good", "bad", Side::A, 4));
            r.push(rating(100 + q, "good", "mid", Side::A, 3));
            r.push(rating(200 + q, "mid", "bad", if q % 3 == 0 { Side::B } else { Side::A }, 2));
        }
        let a = analyze(&r, 0.001);
        assert_eq!(a.wins.wins("good"), 60);
        assert_eq!(a.kruskal_wallis.unwrap().df, 2);
        assert_eq!(a.pairwise.len(), 3);
        let gb = a.pairwise.iter().find(|t| t.a == "bad" && t.b == "good").unwrap();
        assert!(gb.significant);
        assert!(a.to_text().contains("good"));
    }
}
