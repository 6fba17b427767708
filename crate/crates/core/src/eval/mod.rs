//! Onset F-measure with a tolerance window, per hit and pooled, and the
//! velocity-aware variant.

mod matching;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::midi::{DrumTrack, HitId, HitLevel, HitVocabulary, GROUP3_NAMES, GROUP7_NAMES};

pub use matching::{hopcroft_karp, match_times};

/// Onset tolerance used throughout, in seconds.
pub const ONSET_TOLERANCE: f64 = 0.050;
/// Velocity tolerance on the `[0, 1]` scale.
pub const VELOCITY_TOLERANCE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reference is at the {reference} level but the estimate is at {estimate}")]
    LevelMismatch { reference: HitLevel, estimate: HitLevel },
    #[error("tolerance {0} must be finite and non-negative")]
    Tolerance(f64),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub onset_tolerance: f64,
    pub velocity_tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { onset_tolerance: ONSET_TOLERANCE, velocity_tolerance: VELOCITY_TOLERANCE }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        for t in [self.onset_tolerance, self.velocity_tolerance] {
            if !t.is_finite() || t < 0.0 {
                return Err(EvalError::Tolerance(t));
            }
        }
        Ok(())
    }
}

/// An onset with a real-valued velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Onset {
    pub time: f64,
    pub hit: HitId,
    pub velocity: f64,
}

impl Onset {
    pub fn new(time: f64, hit: HitId, velocity: f64) -> Self {
        Onset { time, hit, velocity }
    }
}

pub fn onsets_of(track: &DrumTrack) -> Vec<Onset> {
    track.events().iter().map(|e| Onset::new(e.time, e.hit, f64::from(e.velocity))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl Scores {
    /// Scores from counts. An empty side gives 0 for the ratio it divides.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Scores { precision, recall, f }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub hit: HitId,
    pub name: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub scores: Scores,
}

/// One matched reference/estimate pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub hit: HitId,
    pub ref_index: usize,
    pub est_index: usize,
    pub ref_time: f64,
    pub est_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_class: Vec<ClassResult>,
    /// Scores from counts pooled over classes.
    pub micro: Scores,
    /// Unweighted mean of per-class scores over classes with any events.
    pub macro_avg: Scores,
    /// Indices refer to the input event lists.
    pub matches: Vec<MatchedPair>,
    /// Global velocity scale fitted for the velocity-aware score.
    pub velocity_scale: Option<f64>,
    pub diagnostics: Vec<String>,
}

impl EvalResult {
    pub fn tp(&self) -> usize {
        self.per_class.iter().map(|c| c.tp).sum()
    }

    pub fn class(&self, hit: HitId) -> Option<&ClassResult> {
        self.per_class.iter().find(|c| c.hit == hit)
    }

    /// Machine-readable rows `class,tp,fp,fn,p,r,f`, ending with the pooled row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,tp,fp,fn,precision,recall,f\n");
        for c in &self.per_class {
            let _ = writeln!(s, "{},{},{},{},{},{},{}", c.name, c.tp, c.fp, c.fn_, c.scores.precision, c.scores.recall, c.scores.f);
        }
        let (fp, fn_) = self.per_class.iter().fold((0, 0), |(a, b), c| (a + c.fp, b + c.fn_));
        let _ = writeln!(s, "micro,{},{},{},{},{},{}", self.tp(), fp, fn_, self.micro.precision, self.micro.recall, self.micro.f);
        let _ = writeln!(s, "macro,,,,{},{},{}", self.macro_avg.precision, self.macro_avg.recall, self.macro_avg.f);
        s
    }

    /// Per-hit table followed by the pooled and averaged rows.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<28} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8}\n", "hit", "TP", "FP", "FN", "P", "R", "F");
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<28} {:>6} {:>6} {:>6} {:>8.4} {:>8.4} {:>8.4}",
                c.name, c.tp, c.fp, c.fn_, c.scores.precision, c.scores.recall, c.scores.f
            );
        }
        let (fp, fn_) = self.per_class.iter().fold((0, 0), |(a, b), c| (a + c.fp, b + c.fn_));
        let m = &self.micro;
        let _ = writeln!(
            s,
            "{:<28} {:>6} {:>6} {:>6} {:>8.4} {:>8.4} {:>8.4}",
            "overall (micro)",
            self.tp(),
            fp,
            fn_,
            m.precision,
            m.recall,
            m.f
        );
        let a = &self.macro_avg;
        let _ = writeln!(s, "{:<28} {:>6} {:>6} {:>6} {:>8.4} {:>8.4} {:>8.4}", "overall (macro)", "", "", "", a.precision, a.recall, a.f);
        s
    }
}

/// Display names for the classes of a level.
pub fn class_names(level: HitLevel) -> Vec<(HitId, String)> {
    let names: &[&str] = match level {
        HitLevel::Group7 => &GROUP7_NAMES,
        HitLevel::Group3 => &GROUP3_NAMES,
        HitLevel::Full => return HitVocabulary::egmd(HitLevel::Full).entries(),
    };
    names.iter().enumerate().map(|(i, n)| (i as HitId, n.to_string())).collect()
}

fn class_list(level: HitLevel, reference: &[Onset], estimate: &[Onset]) -> Vec<(HitId, String)> {
    let mut classes = class_names(level);
    for o in reference.iter().chain(estimate) {
        if !classes.iter().any(|(h, _)| *h == o.hit) {
            classes.push((o.hit, format!("hit {}", o.hit)));
        }
    }
    classes.sort_by_key(|(h, _)| *h);
    classes
}

fn indices_of(events: &[Onset], hit: HitId) -> Vec<usize> {
    (0..events.len()).filter(|&i| events[i].hit == hit).collect()
}

/// Per class, a maximum one-to-one matching of reference and estimated
/// onsets no more than `tol` apart.
pub fn match_onsets(reference: &DrumTrack, estimate: &DrumTrack, tol: f64) -> Result<Vec<MatchedPair>> {
    check_levels(reference, estimate)?;
    EvalConfig { onset_tolerance: tol, ..Default::default() }.validate()?;
    let (r, e) = (onsets_of(reference), onsets_of(estimate));
    let classes = class_list(reference.level(), &r, &e);
    Ok(classes.iter().flat_map(|(hit, _)| match_class(&r, &e, *hit, tol, None)).collect())
}

fn check_levels(reference: &DrumTrack, estimate: &DrumTrack) -> Result<()> {
    if reference.level() != estimate.level() {
        return Err(EvalError::LevelMismatch { reference: reference.level(), estimate: estimate.level() });
    }
    Ok(())
}

/// `velocity`: `(normalised reference velocities, scaled estimate
/// velocities, tolerance)`; pairs must then also agree in velocity.
fn match_class(reference: &[Onset], estimate: &[Onset], hit: HitId, tol: f64, velocity: Option<(&[f64], &[f64], f64)>) -> Vec<MatchedPair> {
    let ri = indices_of(reference, hit);
    let ei = indices_of(estimate, hit);
    let adj: Vec<Vec<usize>> = ri
        .iter()
        .map(|&i| {
            (0..ei.len())
                .filter(|&k| {
                    let j = ei[k];
                    (reference[i].time - estimate[j].time).abs() <= tol && velocity.is_none_or(|(rv, ev, vt)| (rv[i] - ev[j]).abs() <= vt)
                })
                .collect()
        })
        .collect();
    hopcroft_karp(&adj, ei.len())
        .into_iter()
        .map(|(a, b)| MatchedPair {
            hit,
            ref_index: ri[a],
            est_index: ei[b],
            ref_time: reference[ri[a]].time,
            est_time: estimate[ei[b]].time,
        })
        .collect()
}

fn summarise(classes: &[(HitId, String)], reference: &[Onset], estimate: &[Onset], matches: Vec<MatchedPair>) -> EvalResult {
    let mut per_class = Vec::with_capacity(classes.len());
    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    let mut active = Vec::new();
    for (hit, name) in classes {
        let n_ref = reference.iter().filter(|o| o.hit == *hit).count();
        let n_est = estimate.iter().filter(|o| o.hit == *hit).count();
        let tp = matches.iter().filter(|m| m.hit == *hit).count();
        let (fp, fn_) = (n_est - tp, n_ref - tp);
        let scores = Scores::from_counts(tp, fp, fn_);
        if n_ref + n_est > 0 {
            active.push(scores);
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        per_class.push(ClassResult { hit: *hit, name: name.clone(), tp, fp, fn_, scores });
    }
    let mean = |f: fn(&Scores) -> f64| if active.is_empty() { 0.0 } else { active.iter().map(f).sum::<f64>() / active.len() as f64 };
    let macro_avg = Scores { precision: mean(|s| s.precision), recall: mean(|s| s.recall), f: mean(|s| s.f) };
    EvalResult {
        per_class,
        micro: Scores::from_counts(tp_all, fp_all, fn_all),
        macro_avg,
        matches,
        velocity_scale: None,
        diagnostics: Vec::new(),
    }
}

/// Onset precision, recall and F per class and pooled.
pub fn f_measure(reference: &DrumTrack, estimate: &DrumTrack, tol: f64) -> Result<EvalResult> {
    check_levels(reference, estimate)?;
    let (r, e) = (onsets_of(reference), onsets_of(estimate));
    f_measure_onsets(reference.level(), &r, &e, tol)
}

pub fn f_measure_onsets(level: HitLevel, reference: &[Onset], estimate: &[Onset], tol: f64) -> Result<EvalResult> {
    EvalConfig { onset_tolerance: tol, ..Default::default() }.validate()?;
    let classes = class_list(level, reference, estimate);
    let matches = classes.iter().flat_map(|(hit, _)| match_class(reference, estimate, *hit, tol, None)).collect();
    Ok(summarise(&classes, reference, estimate, matches))
}

/// Onset F where a match must also agree in velocity.
///
/// Reference velocities are divided by their maximum. Estimated velocities
/// are multiplied by the single scale that best fits, in least squares, the
/// pairs of a plain onset matching. A pair then qualifies when its onsets
/// are within `onset_tolerance` and its velocities within
/// `velocity_tolerance`, and the qualifying pairs are matched one-to-one.
pub fn velocity_f_measure(reference: &DrumTrack, estimate: &DrumTrack, config: &EvalConfig) -> Result<EvalResult> {
    check_levels(reference, estimate)?;
    let (r, e) = (onsets_of(reference), onsets_of(estimate));
    velocity_f_measure_onsets(reference.level(), &r, &e, config)
}

pub fn velocity_f_measure_onsets(level: HitLevel, reference: &[Onset], estimate: &[Onset], config: &EvalConfig) -> Result<EvalResult> {
    config.validate()?;
    let tol = config.onset_tolerance;
    let classes = class_list(level, reference, estimate);
    let timing: Vec<MatchedPair> = classes.iter().flat_map(|(hit, _)| match_class(reference, estimate, *hit, tol, None)).collect();
    let max_ref = reference.iter().map(|o| o.velocity).fold(0.0, f64::max);
    let ref_v: Vec<f64> = reference.iter().map(|o| if max_ref > 0.0 { o.velocity / max_ref } else { 0.0 }).collect();
    let (num, den) = timing.iter().fold((0.0, 0.0), |(n, d), m| {
        let ev = estimate[m.est_index].velocity;
        (n + ref_v[m.ref_index] * ev, d + ev * ev)
    });
    if timing.is_empty() || den == 0.0 {
        let mut out = summarise(&classes, reference, estimate, Vec::new());
        let why = if timing.is_empty() { "no onsets matched in time" } else { "all matched estimate velocities are zero" };
        out.diagnostics.push(format!("{why}; velocity F is 0"));
        log::warn!("velocity F-measure: {why}");
        return Ok(out);
    }
    let scale = num / den;
    let est_v: Vec<f64> = estimate.iter().map(|o| scale * o.velocity).collect();
    let matches = classes
        .iter()
        .flat_map(|(hit, _)| match_class(reference, estimate, *hit, tol, Some((&ref_v, &est_v, config.velocity_tolerance))))
        .collect();
    let mut out = summarise(&classes, reference, estimate, matches);
    out.velocity_scale = Some(scale);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi::{DrumEvent, HH, KD, SD};

    fn track(events: &[(f64, HitId, u8)]) -> DrumTrack {
        DrumTrack::new(HitLevel::Group7, events.iter().map(|&(t, h, v)| DrumEvent::new(t, h, v)).collect(), 1.0).unwrap()
    }

    #[test]
    fn hand_example_counts() {
        let r = track(&[(0.0, KD, 80), (0.2, KD, 80), (0.4, KD, 80)]);
        let e = track(&[(0.0, KD, 80), (0.26, KD, 80)]);
        let res = f_measure(&r, &e, ONSET_TOLERANCE).unwrap();
        let kd = res.class(KD).unwrap();
        assert_eq!((kd.tp, kd.fp, kd.fn_), (1, 1, 2));
        assert!((kd.scores.precision - 0.5).abs() < 1e-12);
        assert!((kd.scores.recall - 1.0 / 3.0).abs() < 1e-12);
        assert!((kd.scores.f - 0.4).abs() < 1e-12);
    }

    #[test]
    fn identical_and_shifted_tracks() {
        let r = track(&[(0.1, KD, 80), (0.3, SD, 90), (0.35, HH, 40)]);
        assert_eq!(f_measure(&r, &r, ONSET_TOLERANCE).unwrap().micro.f, 1.0);
        let shifted = track(&[(0.149, KD, 80), (0.349, SD, 90), (0.399, HH, 40)]);
        assert_eq!(f_measure(&r, &shifted, ONSET_TOLERANCE).unwrap().micro.f, 1.0);
        let wrong_class = track(&[(0.1, SD, 80)]);
        assert_eq!(f_measure(&r, &wrong_class, ONSET_TOLERANCE).unwrap().tp(), 0);
    }

    #[test]
    fn empty_estimate_scores_zero() {
        let r = track(&[(0.1, KD, 80)]);
        let res = f_measure(&r, &DrumTrack::empty(HitLevel::Group7, 1.0), ONSET_TOLERANCE).unwrap();
        assert_eq!(res.micro, Scores { precision: 0.0, recall: 0.0, f: 0.0 });
        assert_eq!(res.per_class.len(), 7);
        assert_eq!(res.macro_avg.f, 0.0);
    }

    #[test]
    fn mismatched_levels_are_rejected() {
        let a = DrumTrack::empty(HitLevel::Group7, 1.0);
        let b = DrumTrack::empty(HitLevel::Group3, 1.0);
        assert!(matches!(f_measure(&a, &b, 0.05), Err(EvalError::LevelMismatch { .. })));
        assert!(matches!(f_measure(&a, &a, -1.0), Err(EvalError::Tolerance(_))));
    }

    #[test]
    fn velocity_scale_is_fitted() {
        let r = track(&[(0.1, KD, 100), (0.3, SD, 50), (0.5, HH, 25)]);
        let e = track(&[(0.1, KD, 50), (0.3, SD, 25), (0.5, HH, 13)]);
        let res = velocity_f_measure(&r, &e, &EvalConfig::default()).unwrap();
        assert_eq!(res.tp(), 3);
        assert!((res.velocity_scale.unwrap() - 0.02).abs() < 1e-3);
        assert_eq!(velocity_f_measure(&r, &r, &EvalConfig::default()).unwrap().micro.f, 1.0);
    }

    #[test]
    fn velocity_without_timing_matches_reports_why() {
        let r = track(&[(0.1, KD, 100)]);
        let e = track(&[(0.8, KD, 100)]);
        let res = velocity_f_measure(&r, &e, &EvalConfig::default()).unwrap();
        assert_eq!(res.micro.f, 0.0);
        assert_eq!(res.diagnostics.len(), 1);
    }

    #[test]
    fn csv_has_one_row_per_class_plus_totals() {
        let r = track(&[(0.1, KD, 80)]);
        let csv = f_measure(&r, &r, ONSET_TOLERANCE).unwrap().to_csv();
        assert_eq!(csv.lines().count(), 1 + 7 + 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("KD,1,0,0,1,1,1"));
    }
}
