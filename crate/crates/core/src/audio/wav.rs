//! RIFF/WAVE PCM decoding and encoding.

use std::io::Write;
use std::path::Path;

use super::{AudioClip, AudioError};

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Format fields from the `fmt ` chunk plus the location of the sample data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavInfo {
    pub channels: u16,
    pub sample_rate: u32,
    pub bits_per_sample: u16,
    /// Number of sample frames (one sample per channel).
    pub frames: usize,
    data_offset: usize,
}

impl WavInfo {
    pub fn duration(&self) -> f64 {
        self.frames as f64 / f64::from(self.sample_rate)
    }
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parse the header chunks of a WAV file without decoding samples.
pub fn read_wav_info(bytes: &[u8]) -> Result<WavInfo, AudioError> {
    parse_header(bytes, true)
}

/// With `strict` unset, `bytes` may be a prefix of the file and the data
/// chunk's declared length is trusted.
fn parse_header(bytes: &[u8], strict: bool) -> Result<WavInfo, AudioError> {
    let malformed = |offset: usize, reason: &str| AudioError::Malformed { offset, reason: reason.to_string() };
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed(0, "not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = le_u32(bytes, pos + 4) as usize;
        let body = pos + 8;
        if id == b"fmt " {
            if len < 16 || body + len > bytes.len() {
                return Err(malformed(pos, "truncated fmt chunk"));
            }
            let mut tag = le_u16(bytes, body);
            let channels = le_u16(bytes, body + 2);
            let rate = le_u32(bytes, body + 4);
            let bits = le_u16(bytes, body + 14);
            if tag == FORMAT_EXTENSIBLE {
                if len < 40 {
                    return Err(malformed(pos, "truncated extensible fmt chunk"));
                }
                // first two bytes of the sub-format GUID carry the format tag
                tag = le_u16(bytes, body + 24);
            }
            fmt = Some((tag, channels, rate, bits));
        } else if id == b"data" {
            let (tag, channels, sample_rate, bits) = fmt.ok_or_else(|| malformed(pos, "data chunk before fmt chunk"))?;
            match tag {
                FORMAT_PCM => {}
                FORMAT_IEEE_FLOAT => return Err(AudioError::Unsupported("floating-point WAV".into())),
                other => return Err(AudioError::Unsupported(format!("WAV format tag {other:#06x}"))),
            }
            if bits != 16 && bits != 24 {
                return Err(AudioError::Unsupported(format!("{bits}-bit PCM")));
            }
            if !(1..=2).contains(&channels) {
                return Err(AudioError::Unsupported(format!("{channels} channels")));
            }
            if sample_rate == 0 {
                return Err(malformed(pos, "zero sample rate"));
            }
            if strict && body + len > bytes.len() {
                return Err(malformed(pos, "truncated data chunk"));
            }
            let frame_bytes = usize::from(channels) * usize::from(bits / 8);
            return Ok(WavInfo { channels, sample_rate, bits_per_sample: bits, frames: len / frame_bytes, data_offset: body });
        }
        pos = body + len + (len & 1);
    }
    Err(malformed(pos.min(bytes.len()), "no data chunk"))
}

/// Decode a 16- or 24-bit PCM WAV. Stereo is averaged to mono and integer
/// samples are scaled by `1 / 2^(bits-1)`.
pub fn load_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    let info = read_wav_info(bytes)?;
    let channels = usize::from(info.channels);
    let width = usize::from(info.bits_per_sample / 8);
    let scale = 1.0 / f64::from(1u32 << (info.bits_per_sample - 1));
    let data = &bytes[info.data_offset..info.data_offset + info.frames * channels * width];
    let decode = |chunk: &[u8]| -> f64 {
        let v = match width {
            2 => i32::from(i16::from_le_bytes([chunk[0], chunk[1]])),
            _ => i32::from_le_bytes([0, chunk[0], chunk[1], chunk[2]]) >> 8,
        };
        f64::from(v) * scale
    };
    let samples = data
        .chunks_exact(channels * width)
        .map(|frame| {
            let sum: f64 = frame.chunks_exact(width).map(decode).sum();
            (sum / channels as f64) as f32
        })
        .collect();
    AudioClip::new(samples, info.sample_rate)
}

pub fn load_wav_file(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| AudioError::Io(path.display().to_string(), e))?;
    load_wav(&bytes)
}

/// Header-only read of a WAV file on disk; only the first 64 KiB are read.
pub fn wav_file_info(path: impl AsRef<Path>) -> Result<WavInfo, AudioError> {
    use std::io::Read;
    let path = path.as_ref();
    let io_err = |e| AudioError::Io(path.display().to_string(), e);
    let mut head = Vec::with_capacity(1 << 16);
    std::fs::File::open(path).map_err(io_err)?.take(1 << 16).read_to_end(&mut head).map_err(io_err)?;
    parse_header(&head, false)
}

/// Encode a mono clip as PCM WAV with the given bit depth (16 or 24).
/// Samples are clamped to the representable range.
pub fn encode_wav(clip: &AudioClip, bits: u16) -> Result<Vec<u8>, AudioError> {
    if bits != 16 && bits != 24 {
        return Err(AudioError::Unsupported(format!("{bits}-bit PCM output")));
    }
    let width = usize::from(bits / 8);
    let data_len = clip.samples.len() * width;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * width as u32).to_le_bytes());
    out.extend_from_slice(&(width as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    let full = f64::from(1u32 << (bits - 1));
    for &s in &clip.samples {
        let v = (f64::from(s) * full).round().clamp(-full, full - 1.0) as i32;
        out.extend_from_slice(&v.to_le_bytes()[..width]);
    }
    Ok(out)
}

pub fn write_wav_file(path: impl AsRef<Path>, clip: &AudioClip, bits: u16) -> Result<(), AudioError> {
    let path = path.as_ref();
    let bytes = encode_wav(clip, bits)?;
    let mut f = std::fs::File::create(path).map_err(|e| AudioError::Io(path.display().to_string(), e))?;
    f.write_all(&bytes).map_err(|e| AudioError::Io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(tag: u16, channels: u16, bits: u16, data: &[u8]) -> Vec<u8> {
        let mut out = b"RIFF".to_vec();
        out.extend_from_slice(&((36 + data.len()) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&44100u32.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn sixteen_bit_scaling() {
        let bytes = header(1, 1, 16, &32767i16.to_le_bytes());
        let clip = load_wav(&bytes).unwrap();
        assert_eq!(clip.samples[0], (32767.0f64 / 32768.0) as f32);
    }

    #[test]
    fn stereo_is_averaged() {
        let mut data = Vec::new();
        data.extend_from_slice(&16384i16.to_le_bytes());
        data.extend_from_slice(&(-16384i16).to_le_bytes());
        let clip = load_wav(&header(1, 2, 16, &data)).unwrap();
        assert_eq!(clip.samples, vec![0.0]);
    }

    #[test]
    fn twenty_four_bit_sign_extension() {
        let data = [0x00, 0x00, 0x80, 0xFF, 0xFF, 0x7F];
        let clip = load_wav(&header(1, 1, 24, &data)).unwrap();
        assert_eq!(clip.samples, vec![-1.0, (8_388_607.0f64 / 8_388_608.0) as f32]);
    }

    #[test]
    fn float_and_compressed_are_unsupported() {
        assert!(matches!(load_wav(&header(3, 1, 32, &[0; 4])), Err(AudioError::Unsupported(_))));
        assert!(matches!(load_wav(&header(2, 1, 16, &[0; 4])), Err(AudioError::Unsupported(_))));
    }

    #[test]
    fn truncated_data_is_a_parse_error() {
        let mut bytes = header(1, 1, 16, &[0; 8]);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(load_wav(&bytes), Err(AudioError::Malformed { .. })));
        assert!(matches!(load_wav(b"RIFX"), Err(AudioError::Malformed { offset: 0, .. })));
    }

    #[test]
    fn encode_decode_round_trip() {
        let clip = AudioClip::new(vec![0.0, 0.5, -0.25, -1.0], 22050).unwrap();
        for bits in [16, 24] {
            let back = load_wav(&encode_wav(&clip, bits).unwrap()).unwrap();
            assert_eq!(back, clip);
        }
    }
}
