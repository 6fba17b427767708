//! Polyphase windowed-sinc sample-rate conversion.

use super::{AudioClip, AudioError};

/// Zero crossings of the sinc on each side of the kernel centre, measured at
/// the (possibly lowered) cutoff.
const ZERO_CROSSINGS: usize = 32;
/// Passband edge as a fraction of the output Nyquist.
const ROLLOFF: f64 = 0.94;
/// Kaiser window shape; ≈ 90 dB stopband.
const KAISER_BETA: f64 = 9.0;
/// Above this many phases the kernel is evaluated per output sample.
const MAX_TABLE_PHASES: u64 = 4096;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

struct Kernel {
    /// Normalised cutoff in cycles per input sample.
    cutoff: f64,
    /// Half-width in input samples.
    half_width: f64,
    norm_i0: f64,
}

impl Kernel {
    fn new(up: u64, down: u64) -> Self {
        let cutoff = 0.5 * ROLLOFF * (up as f64 / down as f64).min(1.0);
        let half_width = ZERO_CROSSINGS as f64 / (2.0 * cutoff);
        Kernel { cutoff, half_width, norm_i0: bessel_i0(KAISER_BETA) }
    }

    fn weight(&self, offset: f64) -> f64 {
        if offset.abs() >= self.half_width {
            return 0.0;
        }
        let x = 2.0 * self.cutoff * offset;
        let sinc = if x == 0.0 { 1.0 } else { (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x) };
        let r = offset / self.half_width;
        let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.norm_i0;
        2.0 * self.cutoff * sinc * window
    }
}

/// Convert `clip` to `target_rate`. Output length is
/// `round(len · target / source)`; same-rate input is returned unchanged.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::InvalidRate(target_rate));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let g = gcd(u64::from(target_rate), u64::from(clip.sample_rate));
    let up = u64::from(target_rate) / g;
    let down = u64::from(clip.sample_rate) / g;
    let n_in = clip.samples.len();
    let n_out = ((n_in as u128 * u128::from(target_rate) + u128::from(clip.sample_rate) / 2) / u128::from(clip.sample_rate)) as usize;

    let kernel = Kernel::new(up, down);
    let reach = kernel.half_width.ceil() as i64;
    let taps = (2 * reach + 1) as usize;

    // table[phase][j] = weight for input index base - reach + j
    let table: Option<Vec<f64>> = (up <= MAX_TABLE_PHASES).then(|| {
        let mut t = vec![0.0; up as usize * taps];
        for phase in 0..up {
            let frac = phase as f64 / up as f64;
            for j in 0..taps {
                let offset = (j as i64 - reach) as f64 - frac;
                t[phase as usize * taps + j] = kernel.weight(offset);
            }
        }
        t
    });

    let input: Vec<f64> = clip.samples.iter().map(|&s| f64::from(s)).collect();
    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out as u64 {
        let pos = n * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let mut acc = 0.0;
        for j in 0..taps {
            let idx = base - reach + j as i64;
            if idx < 0 || idx >= n_in as i64 {
                continue;
            }
            let w = match &table {
                Some(t) => t[phase as usize * taps + j],
                None => kernel.weight((j as i64 - reach) as f64 - phase as f64 / up as f64),
            };
            acc += w * input[idx as usize];
        }
        out.push(acc as f32);
    }
    AudioClip::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_rate_is_identity() {
        let clip = AudioClip::new(vec![0.1, -0.2, 0.3], 44100).unwrap();
        assert_eq!(resample(&clip, 44100).unwrap(), clip);
    }

    #[test]
    fn output_length_formula() {
        let clip = AudioClip::new(vec![0.0; 44100], 44100).unwrap();
        assert_eq!(resample(&clip, 22050).unwrap().samples.len(), 22050);
        let clip = AudioClip::new(vec![0.0; 1000], 16000).unwrap();
        assert_eq!(resample(&clip, 44100).unwrap().samples.len(), 2756); // 2756.25
    }

    #[test]
    fn zero_rate_rejected() {
        let clip = AudioClip::new(vec![0.0; 4], 44100).unwrap();
        assert!(resample(&clip, 0).is_err());
    }

    #[test]
    fn dc_gain_is_unity() {
        let clip = AudioClip::new(vec![0.5; 4000], 16000).unwrap();
        let out = resample(&clip, 44100).unwrap();
        let mid = &out.samples[1000..9000];
        assert!(mid.iter().all(|&s| (s - 0.5).abs() < 1e-3), "{:?}", &mid[..4]);
    }

    #[test]
    fn coprime_rates_use_direct_evaluation() {
        let clip = AudioClip::new((0..500).map(|i| (i as f32 * 0.01).sin()).collect(), 44101).unwrap();
        let out = resample(&clip, 44100).unwrap();
        assert_eq!(out.samples.len(), 500);
        assert!((out.samples[250] - clip.samples[250]).abs() < 1e-2);
    }
}
