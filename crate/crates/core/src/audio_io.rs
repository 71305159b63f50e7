//! WAV loading and sample-level energy measures.

use std::io::Write;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

const PCM: u16 = 1;
const IEEE_FLOAT: u16 = 3;
const EXTENSIBLE: u16 = 0xFFFE;

/// Mono audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(s) = samples.iter().find(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::invalid(format!("sample {s} outside [-1, 1]")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Convert a duration in milliseconds to a whole number of samples.
    pub fn ms_to_samples(&self, ms: f64) -> usize {
        (ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }
}

/// Read a RIFF/WAVE file from disk.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_wav(&bytes)
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    block_align: u16,
    bits: u16,
}

fn chunk_id(raw: &[u8]) -> String {
    String::from_utf8_lossy(raw).into_owned()
}

fn malformed(chunk: &str, detail: impl Into<String>) -> Error {
    Error::MalformedHeader {
        chunk: chunk.to_string(),
        detail: detail.into(),
    }
}

fn unsupported(chunk: &str, detail: impl Into<String>) -> Error {
    Error::UnsupportedFormat {
        chunk: chunk.to_string(),
        detail: detail.into(),
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<Format> {
    if body.len() < 16 {
        return Err(malformed("fmt ", format!("chunk is {} bytes, need 16", body.len())));
    }
    let mut tag = u16_at(body, 0);
    if tag == EXTENSIBLE {
        if body.len() < 40 {
            return Err(malformed("fmt ", "extensible format chunk shorter than 40 bytes"));
        }
        // The sub-format GUID starts with the plain format tag.
        tag = u16_at(body, 24);
    }
    let fmt = Format {
        tag,
        channels: u16_at(body, 2),
        sample_rate: u32_at(body, 4),
        block_align: u16_at(body, 12),
        bits: u16_at(body, 14),
    };
    match (fmt.tag, fmt.bits) {
        (PCM, 16) | (IEEE_FLOAT, 32) => {}
        (PCM, b) => return Err(unsupported("fmt ", format!("{b}-bit PCM"))),
        (IEEE_FLOAT, b) => return Err(unsupported("fmt ", format!("{b}-bit float"))),
        (t, _) => return Err(unsupported("fmt ", format!("compression code {t}"))),
    }
    if fmt.channels != 1 && fmt.channels != 2 {
        return Err(unsupported("fmt ", format!("{} channels", fmt.channels)));
    }
    if fmt.sample_rate == 0 {
        return Err(malformed("fmt ", "sample rate is zero"));
    }
    let expected_align = fmt.channels * fmt.bits / 8;
    if fmt.block_align != expected_align {
        return Err(malformed(
            "fmt ",
            format!("block align {} != {}", fmt.block_align, expected_align),
        ));
    }
    Ok(fmt)
}

/// Decode an in-memory RIFF/WAVE image. Unknown chunks are skipped.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.len() < 12 {
        return Err(malformed("RIFF", "file shorter than RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(malformed(&chunk_id(&bytes[0..4]), "expected RIFF"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(malformed(&chunk_id(&bytes[8..12]), "expected WAVE form type"));
    }

    let mut fmt: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let available = bytes.len() - body_start;
        match id {
            b"fmt " => {
                if size > available {
                    return Err(malformed("fmt ", "chunk runs past end of file"));
                }
                fmt = Some(parse_fmt(&bytes[body_start..body_start + size])?);
            }
            b"data" => {
                if fmt.is_none() {
                    return Err(malformed("data", "data chunk before fmt chunk"));
                }
                let len = if size > available {
                    warn!("data chunk declares {size} bytes but only {available} remain");
                    available
                } else {
                    size
                };
                data = Some(&bytes[body_start..body_start + len]);
                break;
            }
            _ => {}
        }
        pos = body_start + size + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| malformed("fmt ", "missing fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("data", "missing data chunk"))?;
    let block = fmt.block_align as usize;
    let n_frames = data.len() / block;
    let channels = fmt.channels as usize;

    let mut samples = Vec::with_capacity(n_frames);
    for frame in data.chunks_exact(block) {
        let mut acc = 0.0;
        for ch in 0..channels {
            acc += match fmt.tag {
                PCM => i16::from_le_bytes([frame[2 * ch], frame[2 * ch + 1]]) as f64 / 32768.0,
                _ => {
                    let at = 4 * ch;
                    f32::from_le_bytes([frame[at], frame[at + 1], frame[at + 2], frame[at + 3]])
                        as f64
                }
            };
        }
        samples.push(if channels == 1 { acc } else { acc / channels as f64 });
    }

    if samples.iter().any(|s| !s.is_finite()) {
        return Err(malformed("data", "non-finite float sample"));
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 1.0 {
        warn!("float samples peak at {peak}; rescaling to unit peak");
        samples.iter_mut().for_each(|s| *s /= peak);
    }
    AudioBuffer::new(samples, fmt.sample_rate)
}

/// Sample encodings accepted by [`encode_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

/// Encode a mono buffer as a canonical 44-byte-header WAV image.
pub fn encode_wav(buffer: &AudioBuffer, format: SampleFormat) -> Vec<u8> {
    let (tag, bits) = match format {
        SampleFormat::Pcm16 => (PCM, 16u16),
        SampleFormat::Float32 => (IEEE_FLOAT, 32u16),
    };
    let block_align = bits / 8;
    let data_len = buffer.len() * block_align as usize;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&buffer.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(buffer.sample_rate_hz * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &buffer.samples {
        match format {
            SampleFormat::Pcm16 => {
                let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            SampleFormat::Float32 => out.extend_from_slice(&(s as f32).to_le_bytes()),
        }
    }
    out
}

pub fn write_wav(buffer: &AudioBuffer, format: SampleFormat, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_wav(buffer, format))?;
    Ok(())
}

/// Root mean square of a non-empty sample slice.
pub fn rms(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("rms of empty sequence"));
    }
    let ms = samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64;
    Ok(ms.sqrt())
}

/// Number of full frames of `frame_len` samples at stride `hop`.
pub fn frame_count(signal_len: usize, frame_len: usize, hop: usize) -> usize {
    if frame_len == 0 || hop == 0 || frame_len > signal_len {
        0
    } else {
        (signal_len - frame_len) / hop + 1
    }
}

/// RMS of each full frame; a trailing partial frame is dropped.
pub fn frame_rms(buffer: &AudioBuffer, frame_len: usize, hop: usize) -> Result<Vec<f64>> {
    if buffer.is_empty() {
        return Err(Error::EmptyInput("frame_rms of empty buffer"));
    }
    if hop == 0 || frame_len == 0 {
        return Err(Error::invalid("frame length and hop must be at least 1"));
    }
    if frame_len > buffer.len() {
        return Err(Error::invalid(format!(
            "frame length {frame_len} exceeds signal length {}",
            buffer.len()
        )));
    }
    let n = frame_count(buffer.len(), frame_len, hop);
    (0..n)
        .map(|t| rms(&buffer.samples[t * hop..t * hop + frame_len]))
        .collect()
}
