use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::clustering::{ClusterConfig, ClusterDistance};
use crate::error::{Error, Result};
use crate::features::MfccConfig;
use crate::gmm::FitConfig;
use crate::segmentation::SegmentationConfig;
use crate::spectral::StftConfig;
use crate::vad::VadConfig;

/// Stopping rule for agglomerative clustering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Widest gap in the merge distances of a full run.
    Auto,
    Fixed(f64),
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Auto => write!(f, "auto"),
            Threshold::Fixed(v) => write!(f, "{v}"),
        }
    }
}

/// Every tunable of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub n_fft: Option<usize>,
    pub n_filters: usize,
    pub n_coeffs: usize,
    pub f_min: f64,
    pub f_max: Option<f64>,
    pub delta_width: usize,
    pub vad_alpha: f64,
    pub vad_percentile: f64,
    pub vad_hangover_frames: usize,
    pub vad_min_speech_frames: usize,
    pub lambda: f64,
    pub min_seg_frames: usize,
    pub window_grow_frames: usize,
    pub refine_radius_frames: usize,
    pub split_stride: usize,
    pub bic_feature_dims: usize,
    pub cluster_threshold: Threshold,
    pub cluster_distance: ClusterDistance,
    pub max_components: usize,
    pub frames_per_component: usize,
    pub em_max_iters: usize,
    pub em_tol: f64,
    pub em_n_init: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            n_fft: None,
            n_filters: 26,
            n_coeffs: 13,
            f_min: 0.0,
            f_max: None,
            delta_width: 2,
            vad_alpha: 0.15,
            vad_percentile: 10.0,
            vad_hangover_frames: 5,
            vad_min_speech_frames: 10,
            lambda: 1.0,
            min_seg_frames: 100,
            window_grow_frames: 50,
            refine_radius_frames: 25,
            split_stride: 10,
            bic_feature_dims: 13,
            cluster_threshold: Threshold::Auto,
            cluster_distance: ClusterDistance::MomentMatched,
            max_components: 4,
            frames_per_component: 50,
            em_max_iters: 200,
            em_tol: 1e-4,
            em_n_init: 1,
            seed: 42,
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Config {
        line,
        detail: format!("invalid value '{raw}' for '{key}'"),
    })
}

fn parse_auto<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<Option<T>> {
    if raw.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        parse_value(line, key, raw).map(Some)
    }
}

impl PipelineConfig {
    pub fn stft(&self) -> StftConfig {
        StftConfig {
            frame_ms: self.frame_ms,
            hop_ms: self.hop_ms,
            n_fft: self.n_fft,
        }
    }

    pub fn mfcc(&self) -> MfccConfig {
        MfccConfig {
            stft: self.stft(),
            n_filters: self.n_filters,
            n_coeffs: self.n_coeffs,
            f_min: self.f_min,
            f_max: self.f_max,
        }
    }

    pub fn vad(&self) -> VadConfig {
        VadConfig {
            alpha: self.vad_alpha,
            percentile: self.vad_percentile,
            hangover_frames: self.vad_hangover_frames,
            min_speech_frames: self.vad_min_speech_frames,
        }
    }

    pub fn segmentation(&self) -> SegmentationConfig {
        SegmentationConfig {
            lambda: self.lambda,
            min_seg_frames: self.min_seg_frames,
            window_grow_frames: self.window_grow_frames,
            refine_radius_frames: self.refine_radius_frames,
            split_stride: self.split_stride,
        }
    }

    pub fn fit(&self) -> FitConfig {
        FitConfig {
            max_iters: self.em_max_iters,
            tol: self.em_tol,
            seed: self.seed,
            n_init: self.em_n_init,
        }
    }

    pub fn clustering(&self) -> ClusterConfig {
        ClusterConfig {
            max_components: self.max_components,
            frames_per_component: self.frames_per_component,
            distance: self.cluster_distance,
            fit: self.fit(),
        }
    }

    /// Parse `key = value` lines; `#` starts a comment. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                detail: format!("expected 'key = value', found '{content}'"),
            })?;
            cfg.set(line, key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            line: 0,
            detail: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    /// Set one key from its textual value.
    pub fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        match key {
            "frame_ms" => self.frame_ms = parse_value(line, key, v)?,
            "hop_ms" => self.hop_ms = parse_value(line, key, v)?,
            "n_fft" => self.n_fft = parse_auto(line, key, v)?,
            "n_filters" => self.n_filters = parse_value(line, key, v)?,
            "n_coeffs" => self.n_coeffs = parse_value(line, key, v)?,
            "f_min" => self.f_min = parse_value(line, key, v)?,
            "f_max" => self.f_max = parse_auto(line, key, v)?,
            "delta_width" => self.delta_width = parse_value(line, key, v)?,
            "vad_alpha" => self.vad_alpha = parse_value(line, key, v)?,
            "vad_percentile" => self.vad_percentile = parse_value(line, key, v)?,
            "vad_hangover_frames" => self.vad_hangover_frames = parse_value(line, key, v)?,
            "vad_min_speech_frames" => self.vad_min_speech_frames = parse_value(line, key, v)?,
            "lambda" => self.lambda = parse_value(line, key, v)?,
            "min_seg_frames" => self.min_seg_frames = parse_value(line, key, v)?,
            "window_grow_frames" => self.window_grow_frames = parse_value(line, key, v)?,
            "refine_radius_frames" => self.refine_radius_frames = parse_value(line, key, v)?,
            "split_stride" => self.split_stride = parse_value(line, key, v)?,
            "bic_feature_dims" => self.bic_feature_dims = parse_value(line, key, v)?,
            "cluster_threshold" => {
                self.cluster_threshold = match parse_auto(line, key, v)? {
                    None => Threshold::Auto,
                    Some(t) => Threshold::Fixed(t),
                }
            }
            "cluster_distance" => {
                self.cluster_distance = v.parse().map_err(|e: Error| Error::Config {
                    line,
                    detail: e.to_string(),
                })?
            }
            "max_components" => self.max_components = parse_value(line, key, v)?,
            "frames_per_component" => self.frames_per_component = parse_value(line, key, v)?,
            "em_max_iters" => self.em_max_iters = parse_value(line, key, v)?,
            "em_tol" => self.em_tol = parse_value(line, key, v)?,
            "em_n_init" => self.em_n_init = parse_value(line, key, v)?,
            "seed" => self.seed = parse_value(line, key, v)?,
            other => {
                return Err(Error::Config {
                    line,
                    detail: format!("unknown key '{other}'"),
                })
            }
        }
        Ok(())
    }

    /// Check every stage precondition that does not depend on the audio.
    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(Error::Config { line: 0, detail });
        if !(self.frame_ms > 0.0 && self.hop_ms > 0.0 && self.hop_ms <= self.frame_ms) {
            return fail(format!(
                "need 0 < hop_ms <= frame_ms (got {} / {})",
                self.hop_ms, self.frame_ms
            ));
        }
        if let Some(n) = self.n_fft {
            if !n.is_power_of_two() {
                return fail(format!("n_fft {n} is not a power of two"));
            }
        }
        if self.n_filters < 2 || self.n_coeffs == 0 || self.n_coeffs > self.n_filters {
            return fail(format!(
                "need n_filters >= 2 and 1 <= n_coeffs <= n_filters (got {} / {})",
                self.n_filters, self.n_coeffs
            ));
        }
        if !(self.f_min >= 0.0) || self.f_max.is_some_and(|f| !(f > self.f_min)) {
            return fail("need 0 <= f_min < f_max".into());
        }
        if self.delta_width == 0 {
            return fail("delta_width must be at least 1".into());
        }
        if !(self.vad_alpha > 0.0 && self.vad_alpha < 1.0) {
            return fail(format!("vad_alpha {} must lie in (0, 1)", self.vad_alpha));
        }
        if !(0.0..=100.0).contains(&self.vad_percentile) {
            return fail(format!("vad_percentile {} outside [0, 100]", self.vad_percentile));
        }
        if self.bic_feature_dims == 0 || self.bic_feature_dims > 3 * self.n_coeffs {
            return fail(format!(
                "bic_feature_dims {} must be in 1..={}",
                self.bic_feature_dims,
                3 * self.n_coeffs
            ));
        }
        if let Err(e) = self.segmentation().validate(self.bic_feature_dims) {
            return fail(e.to_string());
        }
        if let Threshold::Fixed(t) = self.cluster_threshold {
            if !(t >= 0.0) {
                return fail(format!("cluster_threshold {t} must be nonnegative"));
            }
        }
        if self.max_components == 0 || self.frames_per_component == 0 {
            return fail("max_components and frames_per_component must be at least 1".into());
        }
        if self.em_max_iters == 0 || !(self.em_tol > 0.0) || self.em_n_init == 0 {
            return fail("EM needs em_max_iters >= 1, em_tol > 0, em_n_init >= 1".into());
        }
        Ok(())
    }

    /// Render as a config file that parses back to `self`.
    pub fn to_text(&self) -> String {
        let auto = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        let lines = [
            ("frame_ms", self.frame_ms.to_string()),
            ("hop_ms", self.hop_ms.to_string()),
            ("n_fft", auto(self.n_fft.map(|v| v.to_string()))),
            ("n_filters", self.n_filters.to_string()),
            ("n_coeffs", self.n_coeffs.to_string()),
            ("f_min", self.f_min.to_string()),
            ("f_max", auto(self.f_max.map(|v| v.to_string()))),
            ("delta_width", self.delta_width.to_string()),
            ("vad_alpha", self.vad_alpha.to_string()),
            ("vad_percentile", self.vad_percentile.to_string()),
            ("vad_hangover_frames", self.vad_hangover_frames.to_string()),
            ("vad_min_speech_frames", self.vad_min_speech_frames.to_string()),
            ("lambda", self.lambda.to_string()),
            ("min_seg_frames", self.min_seg_frames.to_string()),
            ("window_grow_frames", self.window_grow_frames.to_string()),
            ("refine_radius_frames", self.refine_radius_frames.to_string()),
            ("split_stride", self.split_stride.to_string()),
            ("bic_feature_dims", self.bic_feature_dims.to_string()),
            ("cluster_threshold", self.cluster_threshold.to_string()),
            ("cluster_distance", self.cluster_distance.to_string()),
            ("max_components", self.max_components.to_string()),
            ("frames_per_component", self.frames_per_component.to_string()),
            ("em_max_iters", self.em_max_iters.to_string()),
            ("em_tol", self.em_tol.to_string()),
            ("em_n_init", self.em_n_init.to_string()),
            ("seed", self.seed.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_overrides() {
        let cfg = PipelineConfig::parse(
            "# tuned\nlambda = 1.5  # penalty\n\ncluster_threshold = 12.5\nn_fft = 1024\n",
        )
        .unwrap();
        assert_eq!(cfg.lambda, 1.5);
        assert_eq!(cfg.cluster_threshold, Threshold::Fixed(12.5));
        assert_eq!(cfg.n_fft, Some(1024));
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        match PipelineConfig::parse("lambda = 1\nlamda = 2\n") {
            Err(Error::Config { line, detail }) => {
                assert_eq!(line, 2);
                assert!(detail.contains("lamda"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(PipelineConfig::parse("vad_alpha = 1.5").is_err());
        assert!(PipelineConfig::parse("n_fft = 500").is_err());
        assert!(PipelineConfig::parse("min_seg_frames = 10").is_err());
        assert!(PipelineConfig::parse("hop_ms = 30").is_err());
        assert!(PipelineConfig::parse("seed = -1").is_err());
        assert!(PipelineConfig::parse("just words").is_err());
    }
}
