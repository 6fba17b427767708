//! Deterministic synthetic drum kit and groove generator.
//!
//! Each Group7 class gets its own spectral placement so the classes are easy
//! to tell apart in mel space; the kit seed jitters pitches, bands and decays
//! so different kits sound different while keeping classes separable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{AudioClip, CANONICAL_RATE};
use crate::midi::{DrumEvent, DrumTrack, HitLevel, BE, CY, GROUP7_NAMES, HH, KD, RD, SD, TT};

/// Peak level of a full-velocity hit, and the ceiling of a mixture.
pub const TOY_PEAK: f32 = 0.9;

/// RBJ band-pass biquad (0 dB peak gain).
struct BandPass {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl BandPass {
    fn new(center: f64, q: f64, rate: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * center / rate;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        BandPass { b0: alpha / a0, b2: -alpha / a0, a1: -2.0 * w0.cos() / a0, a2: (1.0 - alpha) / a0, x1: 0.0, x2: 0.0, y1: 0.0, y2: 0.0 }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// One sample template per Group7 class, each peaking at [`TOY_PEAK`].
#[derive(Debug, Clone)]
pub struct ToyKit {
    pub seed: u64,
    templates: Vec<Vec<f32>>,
}

impl ToyKit {
    pub fn new(seed: u64) -> Self {
        let rate = f64::from(CANONICAL_RATE);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0074_6f79_5f6b_6974);
        let mut jitter = |spread: f64| 1.0 + rng.gen_range(-spread..spread);
        let pitch = [jitter(0.15), jitter(0.15), jitter(0.15), jitter(0.1), jitter(0.1), jitter(0.1), jitter(0.08)];
        let decay = [jitter(0.25), jitter(0.25), jitter(0.25), jitter(0.25), jitter(0.25), jitter(0.25), jitter(0.25)];

        let templates = (0..GROUP7_NAMES.len())
            .map(|class| {
                let mut noise = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(class as u64));
                let p = pitch[class];
                let d = decay[class];
                let t = render_class(class as u16, p, d, rate, &mut noise);
                normalise(t)
            })
            .collect();
        ToyKit { seed, templates }
    }

    pub fn template(&self, class: u16) -> &[f32] {
        &self.templates[class as usize]
    }
}

fn env(t: f64, tau: f64) -> f64 {
    let attack = (t / 0.002).min(1.0);
    attack * (-t / tau).exp()
}

fn render_class(class: u16, pitch: f64, decay: f64, rate: f64, noise: &mut ChaCha8Rng) -> Vec<f64> {
    use std::f64::consts::TAU;
    let secs = match class {
        KD => 0.45,
        SD => 0.3,
        TT => 0.6,
        HH => 0.2,
        CY => 1.5,
        RD => 1.0,
        _ => 0.8,
    };
    let n = (secs * rate) as usize;
    let mut out = vec![0.0; n];
    let mut white = || noise.gen_range(-1.0..1.0);
    match class {
        KD => {
            // 60 Hz body with a short downward sweep
            let mut phase = 0.0;
            for (i, o) in out.iter_mut().enumerate() {
                let t = i as f64 / rate;
                let f = 60.0 * pitch * (1.0 + 0.8 * (-t / 0.025).exp());
                phase += TAU * f / rate;
                *o = phase.sin() * env(t, 0.12 * decay);
            }
        }
        SD => {
            let mut bp = BandPass::new(2500.0 * pitch, 0.8, rate);
            for (i, o) in out.iter_mut().enumerate() {
                let t = i as f64 / rate;
                let body = 0.4 * (TAU * 190.0 * pitch * t).sin() * env(t, 0.04 * decay);
                *o = body + 1.6 * bp.process(white()) * env(t, 0.07 * decay);
            }
        }
        TT => {
            let mut bp = BandPass::new(600.0 * pitch, 2.0, rate);
            let mut phase = 0.0;
            for (i, o) in out.iter_mut().enumerate() {
                let t = i as f64 / rate;
                let f = 140.0 * pitch * (1.0 + 0.15 * (-t / 0.05).exp());
                phase += TAU * f / rate;
                *o = phase.sin() * env(t, 0.22 * decay) + 0.5 * bp.process(white()) * env(t, 0.05 * decay);
            }
        }
        HH => {
            let mut bp = BandPass::new(10_000.0 * pitch, 1.2, rate);
            for (i, o) in out.iter_mut().enumerate() {
                let t = i as f64 / rate;
                *o = bp.process(white()) * env(t, 0.035 * decay);
            }
        }
        CY => {
            let mut bp = BandPass::new(5500.0 * pitch, 0.6, rate);
            for (i, o) in out.iter_mut().enumerate() {
                let t = i as f64 / rate;
                *o = bp.process(white()) * env(t, 0.5 * decay);
            }
        }
        RD => {
            let partials = [3150.0, 4420.0, 5710.0];
            let mut bp = BandPass::new(8000.0 * pitch, 2.0, rate);
            for (i, o) in out.iter_mut().enumerate() {
                let t = i as f64 / rate;
                let tone: f64 = partials.iter().map(|f| (TAU * f * pitch * t).sin()).sum::<f64>() / 3.0;
                *o = (tone + 0.6 * bp.process(white())) * env(t, 0.35 * decay);
            }
        }
        _ => {
            // bell: two inharmonic partials around 1.2 / 1.85 kHz
            for (i, o) in out.iter_mut().enumerate() {
                let t = i as f64 / rate;
                let tone = (TAU * 1200.0 * pitch * t).sin() + 0.7 * (TAU * 1850.0 * pitch * t).sin();
                *o = tone * env(t, 0.25 * decay);
            }
        }
    }
    out
}

fn normalise(x: Vec<f64>) -> Vec<f32> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let g = if peak > 0.0 { f64::from(TOY_PEAK) / peak } else { 0.0 };
    x.into_iter().map(|v| (v * g) as f32).collect()
}

/// Render a Group7 track with a toy kit at 44.1 kHz.
///
/// Hit amplitude is `velocity / 127` times a template peaking at 0.9; the
/// mixture is scaled down only if its peak would exceed 0.9. The clip length
/// is `ceil(duration · 44100)` samples.
pub fn toy_synthesize(track: &DrumTrack, kit_seed: u64) -> AudioClip {
    toy_synthesize_with(track, &ToyKit::new(kit_seed))
}

pub fn toy_synthesize_with(track: &DrumTrack, kit: &ToyKit) -> AudioClip {
    let rate = f64::from(CANONICAL_RATE);
    let len = (track.duration() * rate).ceil() as usize;
    let mut mix = vec![0.0f64; len];
    for e in track.events() {
        let start = (e.time * rate).round() as usize;
        let gain = f64::from(e.velocity) / 127.0;
        let tpl = kit.template(e.hit.min(BE));
        for (o, &s) in mix.iter_mut().skip(start).zip(tpl) {
            *o += gain * f64::from(s);
        }
    }
    let peak = mix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let g = if peak > f64::from(TOY_PEAK) { f64::from(TOY_PEAK) / peak } else { 1.0 };
    AudioClip { samples: mix.into_iter().map(|v| (v * g) as f32).collect(), sample_rate: CANONICAL_RATE }
}

/// Random groove generator settings.
#[derive(Debug, Clone)]
pub struct GrooveConfig {
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub min_bpm: f64,
    pub max_bpm: f64,
}

impl Default for GrooveConfig {
    fn default() -> Self {
        GrooveConfig { min_seconds: 4.0, max_seconds: 8.0, min_bpm: 80.0, max_bpm: 140.0 }
    }
}

/// A random but musically plausible Group7 groove on a 16th-note grid.
///
/// Every class gets its own density; velocities vary around per-voice
/// accents.
pub fn random_groove(seed: u64, cfg: &GrooveConfig) -> DrumTrack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration = rng.gen_range(cfg.min_seconds..=cfg.max_seconds);
    let bpm = rng.gen_range(cfg.min_bpm..=cfg.max_bpm);
    let step = 60.0 / bpm / 4.0;
    let top = [RD, HH][rng.gen_range(0..2)];
    let top_every = [1usize, 2, 2][rng.gen_range(0..3)];
    let kick_pattern: u16 = rng.gen();
    let fill_bar = rng.gen_range(0..4);
    let mut events = Vec::new();
    let mut i = 0usize;
    loop {
        let t = i as f64 * step;
        if t >= duration - 0.05 {
            break;
        }
        let pos = i % 16;
        let bar = i / 16;
        let humanise = |r: &mut ChaCha8Rng| (r.gen_range(-0.006f64..0.006)).max(-t);
        let hit = |class: u16, base: i32, r: &mut ChaCha8Rng, evs: &mut Vec<DrumEvent>| {
            let v = (base + r.gen_range(-18..=18)).clamp(1, 127) as u8;
            let dt = humanise(r);
            evs.push(DrumEvent::new(t + dt, class, v));
        };
        if bar % 4 == fill_bar && pos >= 12 {
            hit(TT, 95, &mut rng, &mut events);
        } else {
            if pos.is_multiple_of(top_every) {
                let accent = if pos.is_multiple_of(4) { 100 } else { 60 };
                hit(top, accent, &mut rng, &mut events);
            }
            if pos == 4 || pos == 12 {
                hit(SD, 105, &mut rng, &mut events);
            } else if pos % 2 == 1 && rng.gen_bool(0.08) {
                hit(SD, 40, &mut rng, &mut events);
            }
        }
        if pos == 0 || (kick_pattern >> pos) & 1 == 1 && pos.is_multiple_of(2) && pos != 4 && pos != 12 {
            hit(KD, 100, &mut rng, &mut events);
        }
        if pos == 0 && bar.is_multiple_of(2) && rng.gen_bool(0.5) {
            hit(CY, 110, &mut rng, &mut events);
        }
        if pos % 8 == 6 && rng.gen_bool(0.25) {
            hit(BE, 80, &mut rng, &mut events);
        }
        i += 1;
    }
    DrumTrack::new(HitLevel::Group7, events, duration).expect("generated events are valid")
}
