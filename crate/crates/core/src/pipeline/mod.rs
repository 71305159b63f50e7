//! End-to-end diarization: audio to RTTM.

mod config;
mod rttm;
mod synth;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub use config::{PipelineConfig, Threshold};
pub use rttm::{parse_rttm, rttm_string, rttm_timeline, write_rttm, Diarization, Turn};
pub use synth::{alternating_plan, synth_fixture, PlannedTurn, SynthSpec, Voice};

use crate::audio_io::{frame_rms, load_wav, AudioBuffer};
use crate::clustering::{agglomerate, auto_threshold, Dendrogram};
use crate::error::{Error, Result};
use crate::features::{mfcc_with_id, stack_deltas, FeatureMatrix};
use crate::segmentation::{boundary_scores, detect_change_points, refine_boundaries, Segment};
use crate::vad::{detect_speech, VadDecision};

/// Everything the pipeline computed, for dumps and inspection.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub diarization: Diarization,
    pub energies: Vec<f64>,
    pub vad: VadDecision,
    /// Base MFCCs with deltas and delta-deltas.
    pub features: FeatureMatrix,
    pub segments: Vec<Segment>,
    pub boundary_scores: Vec<(usize, f64)>,
    pub dendrogram: Dendrogram,
    /// Speaker index per segment.
    pub labels: Vec<usize>,
    /// Distance threshold that stopped clustering.
    pub threshold_used: f64,
}

/// Diarize a WAV file. The file stem becomes the RTTM file id.
pub fn run_pipeline(wav_path: impl AsRef<Path>, config: &PipelineConfig) -> Result<Diarization> {
    run_pipeline_detailed(wav_path, config).map(|o| o.diarization)
}

pub fn run_pipeline_detailed(wav_path: impl AsRef<Path>, config: &PipelineConfig) -> Result<PipelineOutput> {
    let path = wav_path.as_ref();
    let buffer = load_wav(path).map_err(|e| e.in_stage("audio"))?;
    let file_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "audio".into());
    diarize_buffer(&buffer, &file_id, config)
}

/// Diarize samples already in memory.
pub fn diarize_buffer(buffer: &AudioBuffer, file_id: &str, config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let sr = buffer.sample_rate_hz();
    let stft = config.stft();

    let energies = frame_rms(buffer, stft.frame_len(sr), stft.hop(sr)).map_err(|e| e.in_stage("framing"))?;
    let vad = detect_speech(&energies, &config.vad()).map_err(|e| e.in_stage("vad"))?;

    let base = mfcc_with_id(buffer, &config.mfcc(), file_id).map_err(|e| e.in_stage("features"))?;
    let features = stack_deltas(&base, config.delta_width).map_err(|e| e.in_stage("features"))?;
    if features.n_frames() != energies.len() {
        return Err(Error::Numerical(format!(
            "feature frames {} != energy frames {}",
            features.n_frames(),
            energies.len()
        ))
        .in_stage("features"));
    }

    let empty = |vad: VadDecision, features: FeatureMatrix| PipelineOutput {
        diarization: Diarization {
            file_id: file_id.to_string(),
            turns: Vec::new(),
        },
        energies: energies.clone(),
        vad,
        features,
        segments: Vec::new(),
        boundary_scores: Vec::new(),
        dendrogram: Dendrogram::default(),
        labels: Vec::new(),
        threshold_used: f64::NAN,
    };
    if vad.speech_regions.is_empty() {
        log::warn!("no speech detected in '{file_id}'");
        return Ok(empty(vad, features));
    }

    let seg_cfg = config.segmentation();
    let bic_features = features.leading_dims(config.bic_feature_dims);
    let segments = detect_change_points(&bic_features, &vad.speech_regions, &seg_cfg)
        .and_then(|s| refine_boundaries(&s, &bic_features, &seg_cfg))
        .map_err(|e| e.in_stage("segmentation"))?;
    let scores = boundary_scores(&segments, &bic_features, config.lambda).map_err(|e| e.in_stage("segmentation"))?;
    log::info!("{} segments in {} speech regions", segments.len(), vad.speech_regions.len());

    let cluster_cfg = config.clustering();
    let (labels, dendrogram, threshold_used) = match config.cluster_threshold {
        Threshold::Fixed(t) => {
            let (labels, dend) =
                agglomerate(&segments, &features, t, &cluster_cfg).map_err(|e| e.in_stage("clustering"))?;
            (labels, dend, t)
        }
        Threshold::Auto => {
            let (_, dend) = agglomerate(&segments, &features, f64::INFINITY, &cluster_cfg)
                .map_err(|e| e.in_stage("clustering"))?;
            let t = auto_threshold(&dend);
            (dend.labels_at_threshold(t), dend, t)
        }
    };
    log::info!(
        "{} speakers at threshold {threshold_used}",
        labels.iter().max().map_or(0, |m| m + 1)
    );

    let diarization = turns_from_segments(file_id, &segments, &labels)?;
    Ok(PipelineOutput {
        diarization,
        segments,
        boundary_scores: scores,
        dendrogram,
        labels,
        threshold_used,
        ..empty(vad, features)
    })
}

/// One turn per run of contiguous same-label segments. Labels become `S<n>`.
pub fn turns_from_segments(file_id: &str, segments: &[Segment], labels: &[usize]) -> Result<Diarization> {
    if segments.len() != labels.len() {
        return Err(Error::DimMismatch {
            expected: segments.len(),
            actual: labels.len(),
        });
    }
    let mut runs: Vec<(Segment, usize)> = Vec::new();
    for (seg, &label) in segments.iter().zip(labels) {
        match runs.last_mut() {
            Some((prev, l)) if *l == label && prev.end_frame == seg.start_frame => {
                prev.end_frame = seg.end_frame;
                prev.end_s = seg.end_s;
            }
            _ => runs.push((*seg, label)),
        }
    }
    Diarization::new(
        file_id,
        runs.into_iter()
            .map(|(s, l)| Turn {
                onset_s: s.start_s,
                duration_s: s.end_s - s.start_s,
                speaker: format!("S{l}"),
            })
            .collect(),
    )
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Write every intermediate artifact as CSV into `dir` (created if needed).
pub fn write_dumps(out: &PipelineOutput, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    out.vad.write_csv(&out.energies, create(dir, "vad.csv")?)?;
    out.features.write_csv(create(dir, "features.csv")?)?;
    crate::segmentation::write_boundaries_csv(&out.boundary_scores, create(dir, "boundaries.csv")?)?;
    out.dendrogram.write_csv(create(dir, "dendrogram.csv")?)?;
    let mut segs = create(dir, "segments.csv")?;
    writeln!(segs, "start_frame,end_frame,start_s,end_s,short,label")?;
    for (s, l) in out.segments.iter().zip(&out.labels) {
        writeln!(
            segs,
            "{},{},{:.3},{:.3},{},S{l}",
            s.start_frame, s.end_frame, s.start_s, s.end_s, s.short
        )?;
    }
    segs.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(a: usize, b: usize) -> Segment {
        Segment {
            start_frame: a,
            end_frame: b,
            start_s: a as f64 * 0.01,
            end_s: b as f64 * 0.01,
            short: false,
        }
    }

    #[test]
    fn contiguous_same_label_segments_merge() {
        let segs = [seg(0, 100), seg(100, 200), seg(200, 300), seg(350, 400)];
        let d = turns_from_segments("f", &segs, &[0, 0, 1, 1]).unwrap();
        assert_eq!(d.turns.len(), 3);
        assert_eq!(d.turns[0].speaker, "S0");
        assert!((d.turns[0].duration_s - 2.0).abs() < 1e-12);
        assert!(turns_from_segments("f", &segs, &[0]).is_err());
    }

    #[test]
    fn silence_yields_no_turns() {
        let buf = AudioBuffer::new(vec![0.0; 16_000], 16_000).unwrap();
        let out = diarize_buffer(&buf, "quiet", &PipelineConfig::default()).unwrap();
        assert!(out.diarization.turns.is_empty());
    }
}
