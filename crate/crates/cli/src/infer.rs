//! `transcribe` and `eval`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use drumscribe::eval::{class_names, f_measure, velocity_f_measure, EvalConfig, EvalResult, Scores};
use drumscribe::midi::{parse_midi, HitLevel, HitVocabulary, ParseOptions};
use drumscribe::transcribe::{DecodeConfig, Transcriber};
use drumscribe::DrumTrack;
use serde::{Deserialize, Serialize};

use crate::config::{log_resolved, required, user_error, ConfigFile, UserContext};

#[derive(Args)]
pub struct TranscribeArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Onset probability threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Emit every note with this velocity instead of the predicted one.
    #[arg(long)]
    fixed_velocity: Option<u8>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct TranscribeSettings {
    input: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    out: Option<PathBuf>,
    decode: DecodeConfig,
}

pub fn transcribe(args: TranscribeArgs, file: &ConfigFile) -> anyhow::Result<()> {
    let mut s: TranscribeSettings = file.section("transcribe")?;
    for (dst, src) in [(&mut s.input, &args.input), (&mut s.checkpoint, &args.checkpoint), (&mut s.out, &args.out)] {
        if src.is_some() {
            *dst = src.clone();
        }
    }
    if let Some(t) = args.threshold {
        s.decode.threshold = t;
    }
    if args.fixed_velocity.is_some() {
        s.decode.fixed_velocity = args.fixed_velocity;
    }
    log_resolved("transcribe", &s)?;
    let input = required(&s.input, "input")?;
    let checkpoint = required(&s.checkpoint, "checkpoint")?;
    let out = required(&s.out, "out")?;
    s.decode.validate().user("decode settings")?;
    let transcriber = Transcriber::from_checkpoint(&checkpoint, s.decode.clone()).user(format!("loading {}", checkpoint.display()))?;
    let audio = drumscribe::audio::load_wav_file(&input).user(format!("reading {}", input.display()))?;
    let t = transcriber.transcribe_audio(&audio)?;
    std::fs::write(&out, &t.smf).with_context(|| format!("writing {}", out.display()))?;
    println!("{} events over {:.2} s written to {}", t.track.len(), t.track.duration(), out.display());
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    /// Reference MIDI file or directory of .mid files.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Estimated MIDI file or directory with the same file names.
    #[arg(long)]
    estimate: Option<PathBuf>,
    /// Score with the velocity-aware F-measure instead of onsets only.
    #[arg(long)]
    velocity: Option<bool>,
    /// group7 or group3.
    #[arg(long)]
    level: Option<String>,
    /// Write per-hit results as CSV (chart data).
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    onset_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct EvalSettings {
    reference: Option<PathBuf>,
    estimate: Option<PathBuf>,
    velocity: bool,
    level: HitLevel,
    csv: Option<PathBuf>,
    tolerances: EvalConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            reference: None,
            estimate: None,
            velocity: false,
            level: HitLevel::Group7,
            csv: None,
            tolerances: EvalConfig::default(),
        }
    }
}

fn pairs(reference: &Path, estimate: &Path) -> anyhow::Result<Vec<(PathBuf, PathBuf)>> {
    if reference.is_file() {
        return Ok(vec![(reference.to_path_buf(), estimate.to_path_buf())]);
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(reference).user(format!("listing {}", reference.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi")) {
            let est = estimate.join(path.file_name().expect("listed file"));
            if !est.is_file() {
                return Err(user_error(format!("no estimate {} for reference {}", est.display(), path.display())));
            }
            out.push((path, est));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(user_error(format!("no .mid files in {}", reference.display())));
    }
    Ok(out)
}

fn read_track(path: &Path, level: HitLevel) -> anyhow::Result<DrumTrack> {
    let vocab = HitVocabulary::egmd(HitLevel::Full);
    let bytes = std::fs::read(path).user(format!("reading {}", path.display()))?;
    let parsed = parse_midi(&bytes, &vocab, ParseOptions::default()).user(format!("parsing {}", path.display()))?;
    for (pitch, n) in &parsed.skipped_pitches {
        log::warn!("{}: {n} notes with unmapped pitch {pitch}", path.display());
    }
    vocab.map_hits(&parsed.track, level).user(format!("mapping {} to {level}", path.display()))
}

/// Per-class counts summed over files.
#[derive(Default)]
struct Totals {
    counts: BTreeMap<u16, (usize, usize, usize)>,
}

impl Totals {
    fn add(&mut self, r: &EvalResult) {
        for c in &r.per_class {
            let e = self.counts.entry(c.hit).or_default();
            e.0 += c.tp;
            e.1 += c.fp;
            e.2 += c.fn_;
        }
    }

    fn report(&self, level: HitLevel) -> (String, Scores, Scores) {
        let mut csv = String::from("hit,name,tp,fp,fn,precision,recall,f\n");
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        let mut active = Vec::new();
        for (hit, name) in class_names(level) {
            let (a, b, c) = self.counts.get(&hit).copied().unwrap_or_default();
            let s = Scores::from_counts(a, b, c);
            let _ = writeln!(csv, "{hit},{name},{a},{b},{c},{:.6},{:.6},{:.6}", s.precision, s.recall, s.f);
            (tp, fp, fn_) = (tp + a, fp + b, fn_ + c);
            if a + b + c > 0 {
                active.push(s);
            }
        }
        let mean = |f: fn(&Scores) -> f64| if active.is_empty() { 0.0 } else { active.iter().map(f).sum::<f64>() / active.len() as f64 };
        let macro_avg = Scores { precision: mean(|s| s.precision), recall: mean(|s| s.recall), f: mean(|s| s.f) };
        (csv, Scores::from_counts(tp, fp, fn_), macro_avg)
    }
}

pub fn eval(args: EvalArgs, file: &ConfigFile) -> anyhow::Result<()> {
    let mut s: EvalSettings = file.section("eval")?;
    for (dst, src) in [(&mut s.reference, &args.reference), (&mut s.estimate, &args.estimate), (&mut s.csv, &args.csv)] {
        if src.is_some() {
            *dst = src.clone();
        }
    }
    if let Some(v) = args.velocity {
        s.velocity = v;
    }
    if let Some(l) = &args.level {
        s.level = serde_json::from_value(serde_json::Value::String(l.clone())).user("level")?;
    }
    if let Some(t) = args.onset_tolerance {
        s.tolerances.onset_tolerance = t;
    }
    log_resolved("eval", &s)?;
    let reference = required(&s.reference, "reference")?;
    let estimate = required(&s.estimate, "estimate")?;
    if s.level == HitLevel::Full {
        return Err(user_error("evaluate at group7 or group3"));
    }
    let mut totals = Totals::default();
    let files = pairs(&reference, &estimate)?;
    for (r, e) in &files {
        let rt = read_track(r, s.level)?;
        let et = read_track(e, s.level)?;
        let res = if s.velocity { velocity_f_measure(&rt, &et, &s.tolerances) } else { f_measure(&rt, &et, s.tolerances.onset_tolerance) }
            .user("tolerances")?;
        totals.add(&res);
    }
    let (csv, micro, macro_avg) = totals.report(s.level);
    print!("{csv}");
    println!("\nfiles: {}", files.len());
    println!("overall (micro)  P {:.4}  R {:.4}  F {:.4}", micro.precision, micro.recall, micro.f);
    println!("overall (macro)  P {:.4}  R {:.4}  F {:.4}", macro_avg.precision, macro_avg.recall, macro_avg.f);
    if let Some(path) = &s.csv {
        std::fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
