//! MFCC extraction and temporal derivative features.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use crate::audio_io::AudioBuffer;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::spectral::{stft, Spectrogram, StftConfig};

/// Floor applied to filterbank energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(f: f64) -> Result<f64> {
    if !(f >= 0.0) {
        return Err(Error::invalid(format!("negative frequency {f} Hz")));
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters spaced uniformly on the mel scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `n_filters x n_bins`, each row a peak-1.0 triangle.
    pub weights: Matrix,
    /// The `n_filters + 2` edge frequencies in Hz.
    pub edge_freqs_hz: Vec<f64>,
    /// Edge frequencies snapped to FFT bins.
    pub edge_bins: Vec<usize>,
    pub n_filters: usize,
}

impl MelFilterbank {
    pub fn n_bins(&self) -> usize {
        self.weights.cols()
    }

    /// Center frequencies of each filter (edge points 1..=n_filters).
    pub fn center_freqs_hz(&self) -> &[f64] {
        &self.edge_freqs_hz[1..=self.n_filters]
    }
}

pub fn build_filterbank(
    n_filters: usize,
    n_fft: usize,
    sample_rate_hz: u32,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    let nyquist = sample_rate_hz as f64 / 2.0;
    if n_filters < 2 {
        return Err(Error::invalid("need at least two mel filters"));
    }
    if !(f_min >= 0.0 && f_min < f_max) {
        return Err(Error::invalid(format!("invalid band [{f_min}, {f_max}] Hz")));
    }
    if f_max > nyquist {
        return Err(Error::invalid(format!(
            "f_max {f_max} Hz exceeds Nyquist {nyquist} Hz"
        )));
    }
    let n_bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel(f_min)?;
    let mel_hi = hz_to_mel(f_max)?;
    let step = (mel_hi - mel_lo) / (n_filters + 1) as f64;
    let edge_freqs_hz: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(mel_lo + step * i as f64))
        .collect();
    let edge_bins: Vec<usize> = edge_freqs_hz
        .iter()
        .map(|f| (((n_fft + 1) as f64 * f / sample_rate_hz as f64).floor() as usize).min(n_bins - 1))
        .collect();
    if let Some(i) = edge_bins.windows(2).position(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!(
            "{n_filters} filters are too many for n_fft {n_fft}: edges {i} and {} share bin {}",
            i + 1,
            edge_bins[i]
        )));
    }

    let mut weights = Matrix::zeros(n_filters, n_bins);
    for j in 0..n_filters {
        let (lo, mid, hi) = (edge_bins[j], edge_bins[j + 1], edge_bins[j + 2]);
        for k in lo..=mid {
            weights.set(j, k, (k - lo) as f64 / (mid - lo) as f64);
        }
        for k in mid..=hi {
            weights.set(j, k, (hi - k) as f64 / (hi - mid) as f64);
        }
    }
    Ok(MelFilterbank {
        weights,
        edge_freqs_hz,
        edge_bins,
        n_filters,
    })
}

/// `ln(max(sum_k w[j][k] * power[t][k], LOG_FLOOR))` for every frame and filter.
pub fn log_mel_energies(spec: &Spectrogram, fb: &MelFilterbank) -> Result<Matrix> {
    if spec.n_bins() != fb.n_bins() {
        return Err(Error::DimMismatch {
            expected: fb.n_bins(),
            actual: spec.n_bins(),
        });
    }
    let mut out = Matrix::zeros(spec.n_frames(), fb.n_filters);
    for t in 0..spec.n_frames() {
        let p = spec.power.row(t);
        for j in 0..fb.n_filters {
            let e: f64 = fb.weights.row(j).iter().zip(p).map(|(w, x)| w * x).sum();
            out.set(t, j, e.max(LOG_FLOOR).ln());
        }
    }
    Ok(out)
}

/// Orthonormal DCT-II, keeping the first `n_out` coefficients.
pub fn dct_ii(values: &[f64], n_out: usize) -> Result<Vec<f64>> {
    let n = values.len();
    if n_out > n {
        return Err(Error::invalid(format!("n_out {n_out} exceeds input length {n}")));
    }
    Ok(DctBasis::new(n, n_out).apply(values))
}

/// Precomputed DCT-II rows for repeated use on equal-length inputs.
#[derive(Debug, Clone)]
struct DctBasis {
    basis: Matrix,
}

impl DctBasis {
    fn new(n: usize, n_out: usize) -> Self {
        let mut basis = Matrix::zeros(n_out, n);
        for k in 0..n_out {
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            for i in 0..n {
                let arg = PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64;
                basis.set(k, i, scale * arg.cos());
            }
        }
        Self { basis }
    }

    fn apply(&self, values: &[f64]) -> Vec<f64> {
        self.basis
            .iter_rows()
            .map(|b| b.iter().zip(values).map(|(c, v)| c * v).sum())
            .collect()
    }
}

/// Per-frame feature vectors with timing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub vectors: Matrix,
    /// Frame center times in seconds.
    pub frame_times_s: Vec<f64>,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate_hz: u32,
    pub source_id: String,
}

impl FeatureMatrix {
    pub fn n_frames(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn hop_s(&self) -> f64 {
        self.hop as f64 / self.sample_rate_hz as f64
    }

    /// Time in seconds of the boundary before frame `t`: midway between
    /// the centers of frames `t - 1` and `t`.
    pub fn boundary_time_s(&self, t: usize) -> f64 {
        let sr = self.sample_rate_hz as f64;
        (t * self.hop) as f64 / sr + (self.frame_len as f64 - self.hop as f64) / (2.0 * sr)
    }

    /// Same timing metadata with different vectors.
    pub fn with_vectors(&self, vectors: Matrix) -> Result<Self> {
        if vectors.rows() != self.n_frames() {
            return Err(Error::DimMismatch {
                expected: self.n_frames(),
                actual: vectors.rows(),
            });
        }
        Ok(Self {
            vectors,
            ..self.clone()
        })
    }

    pub fn leading_dims(&self, n: usize) -> Self {
        Self {
            vectors: self.vectors.leading_cols(n),
            ..self.clone()
        }
    }

    /// Keep the chosen blocks of a stacked `[x, dx, ddx]` matrix.
    pub fn select_blocks(&self, base_dim: usize, blocks: &[usize]) -> Result<Self> {
        let n_blocks = self.dim() / base_dim.max(1);
        if base_dim == 0 || self.dim() % base_dim != 0 {
            return Err(Error::invalid(format!(
                "dimension {} is not a multiple of base {base_dim}",
                self.dim()
            )));
        }
        if let Some(b) = blocks.iter().find(|&&b| b >= n_blocks) {
            return Err(Error::invalid(format!("block {b} out of range (have {n_blocks})")));
        }
        let cols: Vec<usize> = blocks
            .iter()
            .flat_map(|b| b * base_dim..(b + 1) * base_dim)
            .collect();
        let mut data = Vec::with_capacity(self.n_frames() * cols.len());
        for r in self.vectors.iter_rows() {
            data.extend(cols.iter().map(|&c| r[c]));
        }
        self.with_vectors(Matrix::from_vec(self.n_frames(), cols.len(), data)?)
    }

    /// CSV dump: `frame_index,time_s,c0,...`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "frame_index,time_s")?;
        for c in 0..self.dim() {
            write!(out, ",c{c}")?;
        }
        writeln!(out)?;
        for (t, row) in self.vectors.iter_rows().enumerate() {
            write!(out, "{t},{:.6}", self.frame_times_s[t])?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfccConfig {
    pub stft: StftConfig,
    pub n_filters: usize,
    pub n_coeffs: usize,
    pub f_min: f64,
    /// `None` means the Nyquist frequency.
    pub f_max: Option<f64>,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            n_filters: 26,
            n_coeffs: 13,
            f_min: 0.0,
            f_max: None,
        }
    }
}

/// Base MFCCs: STFT, log mel energies, then a truncated DCT per frame.
pub fn mfcc(buffer: &AudioBuffer, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    mfcc_with_id(buffer, cfg, "")
}

pub fn mfcc_with_id(buffer: &AudioBuffer, cfg: &MfccConfig, source_id: &str) -> Result<FeatureMatrix> {
    if cfg.n_coeffs == 0 || cfg.n_coeffs > cfg.n_filters {
        return Err(Error::invalid(format!(
            "n_coeffs {} must be in 1..={}",
            cfg.n_coeffs, cfg.n_filters
        )));
    }
    let spec = stft(buffer, &cfg.stft)?;
    let sr = buffer.sample_rate_hz();
    let f_max = cfg.f_max.unwrap_or(sr as f64 / 2.0);
    let fb = build_filterbank(cfg.n_filters, spec.n_fft, sr, cfg.f_min, f_max)?;
    let energies = log_mel_energies(&spec, &fb)?;
    let dct = DctBasis::new(cfg.n_filters, cfg.n_coeffs);

    let rows: Vec<Vec<f64>> = (0..energies.rows())
        .into_par_iter()
        .map(|t| dct.apply(energies.row(t)))
        .collect();
    let vectors = if rows.is_empty() {
        Matrix::zeros(0, cfg.n_coeffs)
    } else {
        Matrix::from_rows(&rows)?
    };
    Ok(FeatureMatrix {
        vectors,
        frame_times_s: (0..spec.n_frames()).map(|t| spec.frame_center_s(t)).collect(),
        frame_ms: cfg.stft.frame_ms,
        hop_ms: cfg.stft.hop_ms,
        frame_len: spec.frame_len,
        hop: spec.hop,
        sample_rate_hz: sr,
        source_id: source_id.to_string(),
    })
}

/// Regression deltas over `+-width` frames with edge replication.
pub fn delta(features: &FeatureMatrix, width: usize) -> Result<FeatureMatrix> {
    Ok(features.with_vectors(delta_matrix(&features.vectors, width)?)?)
}

pub(crate) fn delta_matrix(x: &Matrix, width: usize) -> Result<Matrix> {
    if width == 0 {
        return Err(Error::invalid("delta width must be at least 1"));
    }
    let t_len = x.rows();
    if t_len == 0 {
        return Err(Error::EmptyInput("delta of empty feature matrix"));
    }
    let norm = 2.0 * (1..=width).map(|m| (m * m) as f64).sum::<f64>();
    let clamp = |t: isize| t.clamp(0, t_len as isize - 1) as usize;
    let mut out = Matrix::zeros(t_len, x.cols());
    for t in 0..t_len {
        for m in 1..=width {
            let ahead = x.row(clamp(t as isize + m as isize));
            let behind = x.row(clamp(t as isize - m as isize));
            let row = out.row_mut(t);
            for ((o, a), b) in row.iter_mut().zip(ahead).zip(behind) {
                *o += m as f64 * (a - b);
            }
        }
        out.row_mut(t).iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

/// `[x, delta(x), delta(delta(x))]` per frame.
pub fn stack_deltas(features: &FeatureMatrix, width: usize) -> Result<FeatureMatrix> {
    let d1 = delta_matrix(&features.vectors, width)?;
    let d2 = delta_matrix(&d1, width)?;
    let base = features.dim();
    let mut out = Matrix::zeros(features.n_frames(), 3 * base);
    for t in 0..features.n_frames() {
        let row = out.row_mut(t);
        row[..base].copy_from_slice(features.vectors.row(t));
        row[base..2 * base].copy_from_slice(d1.row(t));
        row[2 * base..].copy_from_slice(d2.row(t));
    }
    features.with_vectors(out)
}
