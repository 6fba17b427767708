//! Log-mel spectrogram at 10 ms resolution.

use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioClip, AudioError, CANONICAL_RATE};

/// Front-end parameters. The defaults give 250 bands every 441 samples
/// (10 ms at 44.1 kHz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_offset: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig { sample_rate: CANONICAL_RATE, n_fft: 2048, hop: 441, n_mels: 250, fmin: 20.0, fmax: 22050.0, log_offset: 1e-6 }
    }
}

impl MelConfig {
    /// Seconds per spectrogram frame.
    pub fn frame_duration(&self) -> f64 {
        self.hop as f64 / f64::from(self.sample_rate)
    }

    /// Frame count for a clip of `samples` samples: `ceil(samples / hop)`.
    pub fn frames_for(&self, samples: usize) -> usize {
        samples.div_ceil(self.hop)
    }
}

/// Frames × mel bands of log energies.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Array2<f32>,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn bins(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f32> {
        self.data.view()
    }

    /// Flat dump: `frames: u32 LE`, `bins: u32 LE`, then row-major `f32 LE`.
    pub fn write_dump(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&(self.frames() as u32).to_le_bytes())?;
        w.write_all(&(self.bins() as u32).to_le_bytes())?;
        for v in self.data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump(mut r: impl Read) -> std::io::Result<Self> {
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let frames = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let bins = u32::from_le_bytes(word) as usize;
        let mut values = Vec::with_capacity(frames * bins);
        for _ in 0..frames * bins {
            r.read_exact(&mut word)?;
            values.push(f32::from_le_bytes(word));
        }
        let data = Array2::from_shape_vec((frames, bins), values).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Spectrogram { data })
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters on the HTK scale.
///
/// Each weight is the mean of the triangle over the frequency span of its
/// FFT bin rather than its value at the bin centre, so narrow low-frequency
/// filters never come out empty.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels × (n_fft/2 + 1)`
    pub weights: Array2<f64>,
    /// Centre frequency of each band in Hz.
    pub centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig) -> Self {
        let n_bins = cfg.n_fft / 2 + 1;
        let bin_hz = f64::from(cfg.sample_rate) / cfg.n_fft as f64;
        let lo = hz_to_mel(cfg.fmin);
        let hi = hz_to_mel(cfg.fmax);
        let edges: Vec<f64> = (0..cfg.n_mels + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64)).collect();
        let mut weights = Array2::zeros((cfg.n_mels, n_bins));
        for m in 0..cfg.n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let tri = |f: f64| -> f64 {
                if f <= left || f >= right {
                    0.0
                } else if f <= center {
                    (f - left) / (center - left)
                } else {
                    (right - f) / (right - center)
                }
            };
            for k in 0..n_bins {
                let a = (k as f64 - 0.5) * bin_hz;
                let b = (k as f64 + 0.5) * bin_hz;
                if b <= left || a >= right {
                    continue;
                }
                // exact integral of a piecewise-linear function: trapezoids between breakpoints
                let mut pts = vec![a, b];
                pts.extend([left, center, right].into_iter().filter(|&p| p > a && p < b));
                pts.sort_by(f64::total_cmp);
                let area: f64 = pts.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (tri(w[0]) + tri(w[1]))).sum();
                weights[[m, k]] = area / bin_hz;
            }
        }
        let centers = edges[1..=cfg.n_mels].to_vec();
        MelFilterbank { weights, centers }
    }
}

/// Reusable STFT + filterbank state for one configuration.
pub struct LogMel {
    cfg: MelConfig,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMel {
    pub fn new(cfg: MelConfig) -> Self {
        let n = cfg.n_fft;
        // periodic Hann
        let window = (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect();
        let filterbank = MelFilterbank::new(&cfg);
        let fft = FftPlanner::new().plan_fft_forward(n);
        LogMel { cfg, window, filterbank, fft }
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Centred STFT with reflection padding; frame `k` is centred on sample
    /// `k · hop`. Power spectrum → mel → `ln(x + offset)`.
    pub fn compute(&self, clip: &AudioClip) -> Result<Spectrogram, AudioError> {
        if clip.samples.is_empty() {
            return Err(AudioError::Empty);
        }
        if clip.sample_rate != self.cfg.sample_rate {
            return Err(AudioError::RateMismatch { expected: self.cfg.sample_rate, found: clip.sample_rate });
        }
        let n = clip.samples.len();
        let n_fft = self.cfg.n_fft;
        let half = (n_fft / 2) as i64;
        let frames = self.cfg.frames_for(n);
        let n_bins = n_fft / 2 + 1;
        let fb = &self.filterbank.weights;

        let mut data = Array2::<f32>::zeros((frames, self.cfg.n_mels));
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0f64; n_bins];
        for k in 0..frames {
            let start = (k * self.cfg.hop) as i64 - half;
            for (i, slot) in buf.iter_mut().enumerate() {
                let s = clip.samples[reflect(start + i as i64, n)];
                *slot = Complex::new(f64::from(s) * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf[..n_bins]) {
                *p = c.norm_sqr();
            }
            for (m, row) in fb.outer_iter().enumerate() {
                let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                data[[k, m]] = (e + self.cfg.log_offset).ln() as f32;
            }
        }
        Ok(Spectrogram { data })
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

/// Log-mel spectrogram with the default configuration.
pub fn log_mel(clip: &AudioClip) -> Result<Spectrogram, AudioError> {
    LogMel::new(MelConfig::default()).compute(clip)
}
