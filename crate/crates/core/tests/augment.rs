use drumscribe::audio::{log_mel, AudioClip};
use drumscribe::augment::{
    build_chunk_pool, load_pool, mixup_pair, save_pool, splice, Chunk, ChunkPool, MixMode, PoolConfig, ShuffledMixupStream, Source,
    SHUFFLED_SLOTS,
};
use drumscribe::dataset::{toy_corpus, Example, ToyCorpusConfig};
use drumscribe::midi::{DrumEvent, DrumTrack, HitLevel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Clip {
    id: String,
    audio: AudioClip,
    track: DrumTrack,
}

impl Source for Clip {
    fn id(&self) -> &str {
        &self.id
    }
    fn audio(&self) -> &AudioClip {
        &self.audio
    }
    fn track(&self) -> &DrumTrack {
        &self.track
    }
}

fn random_clip(rng: &mut ChaCha8Rng, id: usize, rate: u32) -> Clip {
    let n = rng.gen_range(1..600usize);
    let samples = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let audio = AudioClip::new(samples, rate).unwrap();
    let dur = audio.duration();
    let events =
        (0..rng.gen_range(0..12)).map(|_| DrumEvent::new(rng.gen_range(0.0..dur), rng.gen_range(0..7), rng.gen_range(1..=127))).collect();
    Clip { id: format!("c{id}"), track: DrumTrack::new(HitLevel::Group7, events, dur).unwrap(), audio }
}

#[test]
fn mixup_event_count_matches_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..200 {
        let a = random_clip(&mut rng, 2 * i, 100);
        let b = random_clip(&mut rng, 2 * i + 1, 100);
        let m = mixup_pair(&a, &b, MixMode::Average).unwrap();
        let len = a.audio.len().max(b.audio.len());
        let expected: usize = [&a, &b]
            .iter()
            .map(|c| {
                let n = c.audio.len();
                c.track
                    .events()
                    .iter()
                    .map(|e| {
                        // repetitions k with the onset's sample index t*rate + k*n still inside the output
                        let mut count = 0;
                        let mut k = 0;
                        while (e.time + (k * n) as f64 / 100.0) < len as f64 / 100.0 {
                            count += 1;
                            k += 1;
                        }
                        count
                    })
                    .sum::<usize>()
            })
            .sum();
        assert_eq!(m.track.len(), expected, "pair {i}");
        assert_eq!(m.audio.len(), len);
        assert_eq!(m.audio.duration(), m.track.duration());
        for (j, &s) in m.audio.samples.iter().enumerate() {
            let want = 0.5 * a.audio.samples[j % a.audio.len()] + 0.5 * b.audio.samples[j % b.audio.len()];
            assert_eq!(s, want);
        }
    }
}

#[test]
fn sum_mode_adds_signals() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_clip(&mut rng, 0, 100);
    let b = random_clip(&mut rng, 1, 100);
    let avg = mixup_pair(&a, &b, MixMode::Average).unwrap();
    let sum = mixup_pair(&a, &b, MixMode::Sum).unwrap();
    for (x, y) in avg.audio.samples.iter().zip(&sum.audio.samples) {
        assert!((2.0 * x - y).abs() < 1e-6);
    }
}

fn three_chunk_pool() -> ChunkPool {
    let chunk = |id: &str, events: Vec<DrumEvent>, level: f32| Chunk {
        id: id.into(),
        sources: vec![],
        audio: AudioClip::new(vec![level; 100], 100).unwrap(),
        track: DrumTrack::new(HitLevel::Group7, events, 1.0).unwrap(),
    };
    ChunkPool {
        config: PoolConfig { chunk_seconds: 1.0, ..Default::default() },
        sample_rate: 100,
        chunk_samples: 100,
        chunks: vec![
            chunk("a", vec![DrumEvent::new(0.0, 0, 100), DrumEvent::new(0.995, 3, 40)], 0.1),
            chunk("b", vec![], 0.2),
            chunk("c", vec![DrumEvent::new(0.5, 1, 77), DrumEvent::new(0.5, 2, 60), DrumEvent::new(0.009, 6, 1)], 0.3),
        ],
    }
}

#[test]
fn splice_matches_concatenation_oracle() {
    let pool = three_chunk_pool();
    // 1,000 draws spread over the 3^12 space
    let total = 3u64.pow(12);
    for i in 0..1000u64 {
        let mut code = i * total / 1000 + (i * 7919) % (total / 1000);
        let draws: Vec<usize> = (0..SHUFFLED_SLOTS)
            .map(|_| {
                let d = (code % 3) as usize;
                code /= 3;
                d
            })
            .collect();
        let ex = splice(&pool, &draws).unwrap();
        let mut expected: Vec<(u64, u16, u8)> = Vec::new();
        for (slot, &d) in draws.iter().enumerate() {
            for e in pool.chunks[d].track.events() {
                expected.push((((slot as f64 + e.time) * 1e6).round() as u64, e.hit, e.velocity));
            }
        }
        expected.sort();
        let got: Vec<(u64, u16, u8)> = ex.track.events().iter().map(|e| ((e.time * 1e6).round() as u64, e.hit, e.velocity)).collect();
        assert_eq!(got, expected);
        assert_eq!(ex.audio.len(), 1200);
        assert_eq!(ex.track.duration(), 12.0);
        for (slot, &d) in draws.iter().enumerate() {
            assert_eq!(ex.audio.samples[slot * 100 + 50], pool.chunks[d].audio.samples[50]);
        }
        assert_eq!(ex.provenance.chunk_draws, draws);
    }
}

#[test]
fn silent_pool_gives_silent_example() {
    let pool = ChunkPool {
        config: PoolConfig::default(),
        sample_rate: 44100,
        chunk_samples: 44100,
        chunks: vec![Chunk {
            id: "s".into(),
            sources: vec![],
            audio: AudioClip::silence(44100, 44100),
            track: DrumTrack::empty(HitLevel::Group7, 1.0),
        }],
    };
    let ex = ShuffledMixupStream::new(&pool, 5).next().unwrap().unwrap();
    assert!(ex.track.is_empty());
    assert!(ex.audio.samples.iter().all(|&s| s == 0.0));
    let spec = log_mel(&ex.audio).unwrap();
    assert_eq!((spec.frames(), spec.bins()), (1200, 250));
}

fn toy_pool(seed: u64) -> (Vec<Example>, ChunkPool) {
    let corpus = toy_corpus(&ToyCorpusConfig { sequences: 3, kits: vec![1, 2], ..Default::default() });
    let cfg = PoolConfig { n_mixup: 4, seed, ..Default::default() };
    let pool = build_chunk_pool(&corpus, &cfg).unwrap();
    (corpus, pool)
}

#[test]
fn pool_is_deterministic_and_well_formed() {
    let (corpus, a) = toy_pool(9);
    let (_, b) = toy_pool(9);
    assert_eq!(a, b);
    let (_, c) = toy_pool(10);
    assert_ne!(a.chunks.iter().map(|c| &c.sources).collect::<Vec<_>>(), c.chunks.iter().map(|c| &c.sources).collect::<Vec<_>>());
    assert!(!a.is_empty());
    for chunk in &a.chunks {
        assert_eq!(chunk.audio.len(), 44100);
        assert!(chunk.track.events().iter().all(|e| e.time >= 0.0 && e.time < 1.0));
    }
    // every chunk equals the matching slice of its regenerated parent
    let ids: Vec<&str> = corpus.iter().map(|e| e.id.as_str()).collect();
    let first = &a.chunks[0];
    let pa = corpus.iter().position(|e| e.id == first.sources[0]).unwrap();
    let pb = corpus.iter().position(|e| e.id == first.sources[1]).unwrap();
    let parent = mixup_pair(&corpus[pa], &corpus[pb], MixMode::Average).unwrap();
    assert_eq!(first.audio.samples[..], parent.audio.samples[..44100]);
    assert!(ids.len() == 6);

    let s1: Vec<_> = ShuffledMixupStream::new(&a, 3).take(3).map(Result::unwrap).collect();
    let s2: Vec<_> = ShuffledMixupStream::new(&a, 3).take(3).map(Result::unwrap).collect();
    assert_eq!(s1, s2);
    for ex in &s1 {
        let chunk_events: usize = ex.provenance.chunk_draws.iter().map(|&d| a.chunks[d].track.len()).sum();
        assert_eq!(ex.track.len(), chunk_events);
        assert_eq!(ex.audio.len(), 12 * 44100);
        assert_eq!(splice(&a, &ex.provenance.chunk_draws).unwrap().audio, ex.audio);
    }
}

#[test]
fn pool_survives_disk_round_trip() {
    let (_, pool) = toy_pool(1);
    let dir = tempfile::tempdir().unwrap();
    save_pool(&pool, dir.path()).unwrap();
    let back = load_pool(dir.path()).unwrap();
    assert_eq!(back.chunks.len(), pool.chunks.len());
    assert_eq!(back.config, pool.config);
    for (x, y) in back.chunks.iter().zip(&pool.chunks) {
        assert_eq!(x.id, y.id);
        assert_eq!(x.track, y.track);
        let err = x.audio.samples.iter().zip(&y.audio.samples).map(|(p, q)| (p - q).abs()).fold(0.0, f32::max);
        assert!(err <= 1.0 / 8_388_608.0, "{err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn spliced_events_stay_in_their_slots(seed in any::<u64>()) {
        let pool = three_chunk_pool();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ex = drumscribe::augment::shuffled_mixup_example(&pool, &mut rng).unwrap();
        let mut per_slot = [0usize; SHUFFLED_SLOTS];
        for e in ex.track.events() {
            prop_assert!(e.time >= 0.0 && e.time < 12.0);
            per_slot[e.time.floor() as usize] += 1;
        }
        for (slot, &d) in ex.provenance.chunk_draws.iter().enumerate() {
            prop_assert_eq!(per_slot[slot], pool.chunks[d].track.len());
        }
    }
}
