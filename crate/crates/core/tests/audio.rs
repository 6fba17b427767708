use drumscribe::audio::{load_wav, log_mel, resample, AudioClip, MelConfig, MelFilterbank};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

fn sine(freq: f64, rate: u32, len: usize, amp: f64) -> AudioClip {
    let samples = (0..len).map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / f64::from(rate)).sin()) as f32).collect();
    AudioClip::new(samples, rate).unwrap()
}

#[test]
fn twenty_four_bit_matches_reference_decoder() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixture.wav");
    let spec = hound::WavSpec { channels: 2, sample_rate: 44100, bits_per_sample: 24, sample_format: hound::SampleFormat::Int };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut writer = hound::WavWriter::create(&path, spec).unwrap();
    for _ in 0..2 * 4000 {
        writer.write_sample(rng.gen_range(-8_388_608i32..8_388_608)).unwrap();
    }
    writer.write_sample(-8_388_608i32).unwrap();
    writer.write_sample(8_388_607i32).unwrap();
    writer.finalize().unwrap();

    let ours = load_wav(&std::fs::read(&path).unwrap()).unwrap();
    let mut reader = hound::WavReader::open(&path).unwrap();
    let raw: Vec<i32> = reader.samples::<i32>().map(Result::unwrap).collect();
    let reference: Vec<f32> =
        raw.chunks_exact(2).map(|f| ((f64::from(f[0]) / 8_388_608.0 + f64::from(f[1]) / 8_388_608.0) / 2.0) as f32).collect();
    assert_eq!(ours.sample_rate, 44100);
    assert_eq!(ours.samples.len(), reference.len());
    let max_diff = ours.samples.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert_eq!(max_diff, 0.0);
}

#[test]
fn sixteen_bit_matches_reference_decoder() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixture16.wav");
    let spec = hound::WavSpec { channels: 1, sample_rate: 16000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut writer = hound::WavWriter::create(&path, spec).unwrap();
    for i in 0..1000i32 {
        writer.write_sample(((i * 7919) % 65536 - 32768) as i16).unwrap();
    }
    writer.finalize().unwrap();
    let ours = load_wav(&std::fs::read(&path).unwrap()).unwrap();
    let mut reader = hound::WavReader::open(&path).unwrap();
    let reference: Vec<f32> = reader.samples::<i16>().map(|s| f32::from(s.unwrap()) / 32768.0).collect();
    assert_eq!(ours.samples, reference);
}

/// Magnitude spectrum in dB (Blackman–Harris window), peak-normalised.
fn spectrum_db(x: &[f32]) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let w = 0.35875 - 0.48829 * t.cos() + 0.14128 * (2.0 * t).cos() - 0.01168 * (3.0 * t).cos();
            Complex::new(f64::from(s) * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mags: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm()).collect();
    let peak = mags.iter().cloned().fold(0.0, f64::max);
    mags.iter().map(|m| 20.0 * (m / peak).max(1e-300).log10()).collect()
}

#[test]
fn resampled_sine_keeps_its_frequency_and_has_low_spurs() {
    let clip = sine(1000.0, 44100, 44100 * 2, 0.8);
    let out = resample(&clip, 22050).unwrap();
    assert_eq!(out.samples.len(), 44100);
    // analyse one second from the middle to stay clear of edge transients
    let seg = &out.samples[11025..11025 + 22050];
    let db = spectrum_db(seg);
    let hz_per_bin = 22050.0 / seg.len() as f64;
    let peak = db.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert!((peak as f64 * hz_per_bin - 1000.0).abs() <= hz_per_bin);
    // everything beyond the window main lobe (±4 bins) is a spur
    let worst =
        db.iter().enumerate().filter(|(k, _)| (*k as i64 - peak as i64).abs() > 4).map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max);
    assert!(worst < -60.0, "worst spur {worst:.1} dB");
}

#[test]
fn upsampling_preserves_a_tone() {
    let clip = sine(440.0, 16000, 16000, 0.5);
    let out = resample(&clip, 44100).unwrap();
    let seg = &out.samples[4410..4410 + 22050];
    let db = spectrum_db(seg);
    let hz_per_bin = 44100.0 / seg.len() as f64;
    let peak = db.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert!((peak as f64 * hz_per_bin - 440.0).abs() <= hz_per_bin);
}

#[test]
fn pure_tone_peaks_in_the_nearest_band() {
    let cfg = MelConfig::default();
    let fb = MelFilterbank::new(&cfg);
    // oracle: band whose centre is closest to 440 Hz
    let expected = fb.centers.iter().enumerate().min_by(|a, b| (a.1 - 440.0).abs().total_cmp(&(b.1 - 440.0).abs())).unwrap().0;
    let spec = log_mel(&sine(440.0, 44100, 44100, 0.5)).unwrap();
    let row = spec.data.row(50);
    let argmax = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(argmax, expected, "centres {:?}", &fb.centers[expected - 1..=expected + 1]);
}

#[test]
fn delay_by_whole_frames_shifts_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base: Vec<f32> = (0..441 * 40).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let k = 3;
    let mut delayed = vec![0.0f32; 441 * k];
    delayed.extend_from_slice(&base);
    let a = log_mel(&AudioClip::new(base, 44100).unwrap()).unwrap();
    let b = log_mel(&AudioClip::new(delayed, 44100).unwrap()).unwrap();
    assert_eq!(b.frames(), a.frames() + k);
    // interior rows: windows that touch neither the padding nor the zeros
    for j in 3..a.frames() - 3 {
        for m in 0..250 {
            assert!((a.data[[j, m]] - b.data[[j + k, m]]).abs() <= 1e-5);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn frame_count_is_ceil_of_hop(len in 1usize..20_000) {
        let clip = AudioClip::new(vec![0.01; len], 44100).unwrap();
        let spec = log_mel(&clip).unwrap();
        prop_assert_eq!(spec.frames(), len.div_ceil(441));
        prop_assert_eq!(spec.bins(), 250);
    }

    #[test]
    fn louder_audio_never_lowers_a_cell(seed in 0u64..1000, gain in 1.01f32..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let quiet: Vec<f32> = (0..4000).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let loud: Vec<f32> = quiet.iter().map(|s| s * gain).collect();
        let a = log_mel(&AudioClip::new(quiet, 44100).unwrap()).unwrap();
        let b = log_mel(&AudioClip::new(loud, 44100).unwrap()).unwrap();
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            prop_assert!(y >= x);
        }
    }
}
