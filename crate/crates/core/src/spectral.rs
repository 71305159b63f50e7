//! Framing, Hamming windowing and short-time Fourier analysis.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio_io::{frame_count, AudioBuffer};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Raw or windowed frames cut from a signal, one frame per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    pub frames: Matrix,
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate_hz: u32,
}

impl FrameMatrix {
    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    /// Center of frame `t` in seconds.
    pub fn frame_center_s(&self, t: usize) -> f64 {
        (t * self.hop) as f64 / self.sample_rate_hz as f64
            + self.frame_len as f64 / (2.0 * self.sample_rate_hz as f64)
    }
}

/// One-sided power spectrogram. Phases are kept for inspection only.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub power: Matrix,
    pub magnitude: Matrix,
    pub phase: Matrix,
    pub n_fft: usize,
    pub bin_hz: f64,
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate_hz: u32,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.power.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.power.cols()
    }

    pub fn frame_center_s(&self, t: usize) -> f64 {
        (t * self.hop) as f64 / self.sample_rate_hz as f64
            + self.frame_len as f64 / (2.0 * self.sample_rate_hz as f64)
    }

    /// CSV dump: `frame_index,time_s,bin_hz_<f>...` with power values.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "frame_index,time_s")?;
        for k in 0..self.n_bins() {
            write!(out, ",bin_hz_{}", k as f64 * self.bin_hz)?;
        }
        writeln!(out)?;
        for (t, row) in self.power.iter_rows().enumerate() {
            write!(out, "{t},{:.6}", self.frame_center_s(t))?;
            for p in row {
                write!(out, ",{p:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Framing and transform settings, with durations in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// `None` picks the smallest power of two covering the frame.
    pub n_fft: Option<usize>,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            n_fft: None,
        }
    }
}

impl StftConfig {
    pub fn frame_len(&self, sample_rate_hz: u32) -> usize {
        (self.frame_ms * sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn hop(&self, sample_rate_hz: u32) -> usize {
        (self.hop_ms * sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn resolved_n_fft(&self, sample_rate_hz: u32) -> usize {
        self.n_fft
            .unwrap_or_else(|| self.frame_len(sample_rate_hz).max(1).next_power_of_two())
    }
}

/// Cut a buffer into overlapping unwindowed frames.
pub fn frame_signal(buffer: &AudioBuffer, frame_ms: f64, hop_ms: f64) -> Result<FrameMatrix> {
    if !(frame_ms > 0.0) || !(hop_ms > 0.0) {
        return Err(Error::invalid(format!(
            "frame and hop durations must be positive (got {frame_ms} ms / {hop_ms} ms)"
        )));
    }
    if hop_ms > frame_ms {
        return Err(Error::invalid(format!(
            "hop {hop_ms} ms exceeds frame {frame_ms} ms; frames must overlap or abut"
        )));
    }
    if !(10.0..=100.0).contains(&frame_ms) {
        warn!("frame duration {frame_ms} ms is outside the usual 10-100 ms range");
    }
    let frame_len = buffer.ms_to_samples(frame_ms);
    let hop = buffer.ms_to_samples(hop_ms);
    if frame_len == 0 || hop == 0 {
        return Err(Error::invalid("frame or hop rounds to zero samples"));
    }
    if frame_len > buffer.len() {
        return Err(Error::invalid(format!(
            "frame of {frame_len} samples is longer than the {}-sample signal",
            buffer.len()
        )));
    }
    let n = frame_count(buffer.len(), frame_len, hop);
    let samples = buffer.samples();
    let mut data = Vec::with_capacity(n * frame_len);
    for t in 0..n {
        data.extend_from_slice(&samples[t * hop..t * hop + frame_len]);
    }
    Ok(FrameMatrix {
        frames: Matrix::from_vec(n, frame_len, data)?,
        frame_len,
        hop,
        sample_rate_hz: buffer.sample_rate_hz(),
    })
}

/// Symmetric Hamming window `0.54 - 0.46 cos(2 pi i / (n - 1))`.
pub fn hamming_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::invalid(format!("Hamming window needs n >= 2, got {n}")));
    }
    let denom = (n - 1) as f64;
    // Written as 0.08 + 0.46 (1 - cos) so the endpoints are exactly 0.08 and
    // the midpoint of an odd window exactly 1.
    Ok((0..n)
        .map(|i| 0.08 + 0.46 * (1.0 - (PI * ((2 * i) as f64 / denom)).cos()))
        .collect())
}

pub fn apply_window(frames: &FrameMatrix, window: &[f64]) -> Result<FrameMatrix> {
    if window.len() != frames.frame_len {
        return Err(Error::DimMismatch {
            expected: frames.frame_len,
            actual: window.len(),
        });
    }
    let mut out = frames.clone();
    for t in 0..out.n_frames() {
        for (x, w) in out.frames.row_mut(t).iter_mut().zip(window) {
            *x *= w;
        }
    }
    Ok(out)
}

/// A planned real-input DFT of fixed power-of-two length.
#[derive(Clone)]
pub struct RealDft {
    n_fft: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RealDft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealDft").field("n_fft", &self.n_fft).finish()
    }
}

impl RealDft {
    pub fn new(n_fft: usize) -> Result<Self> {
        if n_fft == 0 || !n_fft.is_power_of_two() {
            return Err(Error::invalid(format!("n_fft {n_fft} is not a power of two")));
        }
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Self { n_fft, fft })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Complex spectrum for bins `0..=n_fft/2` of the zero-padded frame.
    pub fn spectrum(&self, frame: &[f64]) -> Result<Vec<Complex<f64>>> {
        if frame.len() > self.n_fft {
            return Err(Error::invalid(format!(
                "frame of {} samples exceeds n_fft {}",
                frame.len(),
                self.n_fft
            )));
        }
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        for (b, &x) in buf.iter_mut().zip(frame) {
            b.re = x;
        }
        self.fft.process(&mut buf);
        buf.truncate(self.n_bins());
        Ok(buf)
    }
}

/// Magnitudes and phases of the one-sided DFT of `frame` zero-padded to `n_fft`.
pub fn real_dft(frame: &[f64], n_fft: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let spec = RealDft::new(n_fft)?.spectrum(frame)?;
    Ok(spec.iter().map(|c| (c.norm(), c.arg())).unzip())
}

/// Frame, Hamming-window and transform a buffer.
pub fn stft(buffer: &AudioBuffer, cfg: &StftConfig) -> Result<Spectrogram> {
    let frames = frame_signal(buffer, cfg.frame_ms, cfg.hop_ms)?;
    let n_fft = cfg.resolved_n_fft(buffer.sample_rate_hz());
    if n_fft < frames.frame_len {
        return Err(Error::invalid(format!(
            "n_fft {n_fft} is shorter than the {}-sample frame",
            frames.frame_len
        )));
    }
    let window = hamming_window(frames.frame_len)?;
    let windowed = apply_window(&frames, &window)?;
    let dft = RealDft::new(n_fft)?;
    let n_bins = dft.n_bins();

    let spectra: Vec<Vec<Complex<f64>>> = (0..windowed.n_frames())
        .into_par_iter()
        .map(|t| dft.spectrum(windowed.frames.row(t)))
        .collect::<Result<_>>()?;

    let n = spectra.len();
    let mut magnitude = Matrix::zeros(n, n_bins);
    let mut phase = Matrix::zeros(n, n_bins);
    let mut power = Matrix::zeros(n, n_bins);
    for (t, spec) in spectra.iter().enumerate() {
        for (k, c) in spec.iter().enumerate() {
            let m = c.norm();
            magnitude.set(t, k, m);
            phase.set(t, k, c.arg());
            power.set(t, k, m * m);
        }
    }
    Ok(Spectrogram {
        power,
        magnitude,
        phase,
        n_fft,
        bin_hz: buffer.sample_rate_hz() as f64 / n_fft as f64,
        frame_len: frames.frame_len,
        hop: frames.hop,
        sample_rate_hz: buffer.sample_rate_hz(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[f64], n_fft: usize) -> Vec<(f64, f64)> {
        (0..=n_fft / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &v) in x.iter().enumerate() {
                    let ang = -2.0 * PI * (k * n) as f64 / n_fft as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                (re, im)
            })
            .collect()
    }

    #[test]
    fn frame_unit_conversion() {
        let buf = AudioBuffer::new(vec![0.0; 16000], 16000).unwrap();
        let f = frame_signal(&buf, 25.0, 10.0).unwrap();
        assert_eq!((f.frame_len, f.hop), (400, 160));
        let enumerated = (0..).take_while(|t| t * 160 + 400 <= 16000).count();
        assert_eq!(f.n_frames(), enumerated);
        assert_eq!(f.n_frames(), 98);
    }

    #[test]
    fn frames_start_at_multiples_of_hop() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let buf = AudioBuffer::new(xs.clone(), 1000).unwrap();
        let f = frame_signal(&buf, 20.0, 10.0).unwrap();
        for t in 0..f.n_frames() {
            assert_eq!(f.frames.row(t), &xs[t * 10..t * 10 + 20]);
        }
    }

    #[test]
    fn long_frames_still_produce_output() {
        let buf = AudioBuffer::new(vec![0.0; 8000], 8000).unwrap();
        let f = frame_signal(&buf, 120.0, 10.0).unwrap();
        assert_eq!(f.frame_len, 960);
    }

    #[test]
    fn framing_errors() {
        let buf = AudioBuffer::new(vec![0.0; 100], 1000).unwrap();
        assert!(frame_signal(&buf, 0.0, 10.0).is_err());
        assert!(frame_signal(&buf, 25.0, -1.0).is_err());
        assert!(frame_signal(&buf, 20.0, 30.0).is_err());
        assert!(frame_signal(&buf, 200.0, 10.0).is_err());
    }

    #[test]
    fn hamming_values() {
        let w = hamming_window(9).unwrap();
        assert_eq!(w[0], 0.08);
        assert_eq!(w[8], 0.08);
        assert_eq!(w[4], 1.0);
        for i in 0..9 {
            assert!((w[i] - w[8 - i]).abs() < 1e-15);
        }
        assert!(hamming_window(1).is_err());
    }

    #[test]
    fn window_application() {
        let buf = AudioBuffer::new(vec![1.0; 4], 1000).unwrap();
        let frames = FrameMatrix {
            frames: Matrix::from_vec(1, 4, buf.samples().to_vec()).unwrap(),
            frame_len: 4,
            hop: 1,
            sample_rate_hz: 1000,
        };
        let ones = apply_window(&frames, &[1.0; 4]).unwrap();
        assert_eq!(ones, frames);
        let w = apply_window(&frames, &hamming_window(4).unwrap()).unwrap();
        let expected = [0.08, 0.77, 0.77, 0.08];
        for (a, b) in w.frames.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(apply_window(&frames, &[1.0; 3]).is_err());

        let zero = FrameMatrix {
            frames: Matrix::zeros(1, 4),
            ..frames
        };
        let wz = apply_window(&zero, &hamming_window(4).unwrap()).unwrap();
        assert!(wz.frames.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dft_of_impulse_and_cosine() {
        let mut x = vec![0.0; 8];
        x[0] = 1.0;
        let (mag, _) = real_dft(&x, 8).unwrap();
        assert_eq!(mag.len(), 5);
        assert!(mag.iter().all(|m| (m - 1.0).abs() < 1e-12));

        let cosine: Vec<f64> = (0..8).map(|n| (2.0 * PI * 2.0 * n as f64 / 8.0).cos()).collect();
        let oracle = naive_dft(&cosine, 8);
        let (mag, _) = real_dft(&cosine, 8).unwrap();
        for (k, m) in mag.iter().enumerate() {
            let o = oracle[k].0.hypot(oracle[k].1);
            assert!((m - o).abs() < 1e-9);
            if k == 2 {
                assert!((m - 4.0).abs() < 1e-12);
            } else {
                assert!(m.abs() < 1e-12);
            }
        }

        let (zeros, _) = real_dft(&[0.0; 6], 8).unwrap();
        assert!(zeros.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn dft_argument_checks() {
        assert!(real_dft(&[0.0; 4], 6).is_err());
        assert!(real_dft(&[0.0; 9], 8).is_err());
    }

    #[test]
    fn stft_tone_peak_bin() {
        let sr = 16000;
        let xs: Vec<f64> = (0..sr)
            .map(|i| 0.5 * (2.0 * PI * 1000.0 * i as f64 / sr as f64).sin())
            .collect();
        let buf = AudioBuffer::new(xs, sr as u32).unwrap();
        let cfg = StftConfig {
            n_fft: Some(512),
            ..Default::default()
        };
        let spec = stft(&buf, &cfg).unwrap();
        assert_eq!(spec.bin_hz, 31.25);
        assert_eq!(spec.n_bins(), 257);
        for t in 0..spec.n_frames() {
            let row = spec.power.row(t);
            let argmax = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            assert_eq!(argmax, 32);
        }
    }

    #[test]
    fn stft_default_nfft_and_silence() {
        let buf = AudioBuffer::new(vec![0.0; 4000], 16000).unwrap();
        let spec = stft(&buf, &StftConfig::default()).unwrap();
        assert_eq!(spec.n_fft, 512);
        assert!(spec.power.as_slice().iter().all(|&p| p == 0.0));
        let too_short = StftConfig {
            n_fft: Some(256),
            ..Default::default()
        };
        assert!(stft(&buf, &too_short).is_err());
    }

    #[test]
    fn csv_header() {
        let buf = AudioBuffer::new(vec![0.0; 64], 1000).unwrap();
        let cfg = StftConfig {
            frame_ms: 16.0,
            hop_ms: 16.0,
            n_fft: Some(16),
        };
        let spec = stft(&buf, &cfg).unwrap();
        let mut out = Vec::new();
        spec.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("frame_index,time_s,bin_hz_0,bin_hz_62.5"));
        assert_eq!(text.lines().count(), 1 + spec.n_frames());
    }
}
