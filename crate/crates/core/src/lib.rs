//! Speaker diarization built from classical parts: MFCC features, an
//! energy-based voice activity detector, delta-BIC change-point segmentation,
//! per-segment Gaussian mixture models and agglomerative clustering driven by
//! a distance between mixture parameters. Evaluation metrics (DER, WER) are
//! included so the pipeline can be scored against reference labels.

pub mod audio_io;
pub mod clustering;
pub mod error;
pub mod features;
pub mod gmm;
mod linalg;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod segmentation;
pub mod spectral;
pub mod vad;

pub use audio_io::AudioBuffer;
pub use clustering::{Cluster, Dendrogram, Merge};
pub use error::{Error, Result};
pub use features::{FeatureMatrix, MelFilterbank};
pub use gmm::{FitConfig, FitReport, GaussianMixture};
pub use matrix::Matrix;
pub use metrics::{LabeledTimeline, WordSequence};
pub use pipeline::{Diarization, PipelineConfig};
pub use segmentation::{Segment, SegmentationConfig};
pub use spectral::{FrameMatrix, Spectrogram};
pub use vad::VadDecision;
