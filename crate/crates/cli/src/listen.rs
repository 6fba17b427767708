//! `study-build` and `stats`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use drumscribe::audio::{load_wav_file, wav_file_info, write_wav_file};
use drumscribe::listen::{analyze, build_study, read_ratings, ClipSource, StudyConfig};
use serde::{Deserialize, Serialize};

use crate::config::{log_resolved, overrides, required, user_error, ConfigFile, UserContext};

#[derive(Args)]
pub struct StudyBuildArgs {
    /// Directory of original recordings; each `<clip>.wav` is one clip.
    #[arg(long)]
    originals: Option<PathBuf>,
    /// `arm=DIR`, repeatable. Each DIR holds `<clip>.wav` renderings.
    #[arg(long = "arm", value_parser = parse_arm)]
    arms: Vec<(String, PathBuf)>,
    /// Output directory for study.json and the served excerpts.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    excerpt_seconds: Option<f64>,
    #[arg(long)]
    raters_per_question: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_arm(s: &str) -> Result<(String, PathBuf), String> {
    let (name, dir) = s.split_once('=').ok_or_else(|| format!("expected NAME=DIR, got `{s}`"))?;
    if name.is_empty() {
        return Err("arm name is empty".into());
    }
    Ok((name.to_string(), PathBuf::from(dir)))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct StudyBuildSettings {
    originals: Option<PathBuf>,
    out: Option<PathBuf>,
    /// Arm order fixes the A/B roles of every question.
    arms: Vec<String>,
    outputs: BTreeMap<String, PathBuf>,
    study: StudyConfig,
}

fn wav_stems(dir: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).user(format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn study_build(args: StudyBuildArgs, file: &ConfigFile) -> anyhow::Result<()> {
    let mut s: StudyBuildSettings = file.section("study-build")?;
    if args.originals.is_some() {
        s.originals = args.originals.clone();
    }
    if args.out.is_some() {
        s.out = args.out.clone();
    }
    if !args.arms.is_empty() {
        s.arms = args.arms.iter().map(|(n, _)| n.clone()).collect();
        s.outputs = args.arms.iter().cloned().collect();
    }
    overrides!(s.study, args; excerpt_seconds, raters_per_question, seed);
    log_resolved("study-build", &s)?;
    let originals = required(&s.originals, "originals")?;
    let out = required(&s.out, "out")?;
    if let Some(arm) = s.arms.iter().find(|a| !s.outputs.contains_key(*a)) {
        return Err(user_error(format!("arm `{arm}` has no output directory")));
    }

    let mut clips = Vec::new();
    for (clip_id, original) in wav_stems(&originals)? {
        let info = wav_file_info(&original).user(format!("reading {}", original.display()))?;
        let outputs =
            s.arms.iter().map(|arm| (arm.clone(), s.outputs[arm].join(format!("{clip_id}.wav")))).filter(|(_, p)| p.is_file()).collect();
        clips.push(ClipSource { clip_id, original, duration: info.duration(), outputs });
    }
    if clips.is_empty() {
        return Err(user_error(format!("no .wav files in {}", originals.display())));
    }
    let study = build_study(&clips, &s.arms, &s.study).user("building study")?;
    for sk in &study.skipped {
        log::warn!("skipped clip {}: no output from {}", sk.clip_id, sk.missing.join(", "));
    }

    let audio_dir = out.join("audio");
    std::fs::create_dir_all(&audio_dir).with_context(|| format!("creating {}", audio_dir.display()))?;
    for (f, ex) in study.audio_files() {
        let clip = load_wav_file(&f.source).user(format!("reading {}", f.source.display()))?;
        let rate = f64::from(clip.sample_rate);
        let start = ((ex.start * rate).round() as usize).min(clip.len());
        let end = ((ex.end() * rate).round() as usize).clamp(start, clip.len());
        let path = audio_dir.join(&f.name);
        write_wav_file(&path, &clip.slice(start, end), 16).with_context(|| format!("writing {}", path.display()))?;
    }
    let path = out.join("study.json");
    std::fs::write(&path, study.to_json()).with_context(|| format!("writing {}", path.display()))?;
    println!("{} clips, {} questions, {} skipped; wrote {}", study.clips.len(), study.questions.len(), study.skipped.len(), path.display());
    Ok(())
}

#[derive(Args)]
pub struct StatsArgs {
    /// Rating log written by `serve`.
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// Family-wise significance level.
    #[arg(long)]
    alpha: Option<f64>,
    /// Print JSON instead of text.
    #[arg(long)]
    json: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct StatsSettings {
    ratings: Option<PathBuf>,
    alpha: f64,
    json: bool,
}

impl Default for StatsSettings {
    fn default() -> Self {
        StatsSettings { ratings: None, alpha: 0.001, json: false }
    }
}

pub fn stats(args: StatsArgs, file: &ConfigFile) -> anyhow::Result<()> {
    let mut s: StatsSettings = file.section("stats")?;
    if args.ratings.is_some() {
        s.ratings = args.ratings.clone();
    }
    overrides!(s, args; alpha, json);
    log_resolved("stats", &s)?;
    let path = required(&s.ratings, "ratings")?;
    if !(s.alpha > 0.0 && s.alpha < 1.0) {
        return Err(user_error(format!("alpha {} must lie in (0, 1)", s.alpha)));
    }
    let replay = read_ratings(&path).user(format!("reading {}", path.display()))?;
    if replay.truncated_tail {
        log::warn!("{} ends in a partial line; it was ignored", path.display());
    }
    if replay.duplicates > 0 {
        log::warn!("ignored {} duplicate ratings", replay.duplicates);
    }
    let analysis = analyze(&replay.ratings, s.alpha);
    if s.json {
        println!("{}", serde_json::to_string_pretty(&analysis)?);
    } else {
        print!("{}", analysis.to_text());
    }
    Ok(())
}
