//! Speaker change detection with the delta-BIC criterion.
//!
//! Each candidate split compares one full-covariance Gaussian for a window
//! against two Gaussians for its halves. A growing window is scanned on a
//! coarse stride inside every speech region; committed boundaries are then
//! refined frame by frame.

use std::io::Write;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::log_det_spd;
use crate::matrix::Matrix;

/// Added to covariance diagonals before taking determinants.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationConfig {
    /// Weight on the BIC complexity penalty.
    pub lambda: f64,
    pub min_seg_frames: usize,
    pub window_grow_frames: usize,
    pub refine_radius_frames: usize,
    /// Spacing of candidate splits in the coarse scan.
    pub split_stride: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            min_seg_frames: 100,
            window_grow_frames: 50,
            refine_radius_frames: 25,
            split_stride: 10,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::invalid(format!("lambda {} must be positive", self.lambda)));
        }
        if self.min_seg_frames < 2 * (dim + 1) {
            return Err(Error::invalid(format!(
                "min_seg_frames {} is below 2 * (d + 1) = {} for {dim}-dim features",
                self.min_seg_frames,
                2 * (dim + 1)
            )));
        }
        if self.window_grow_frames == 0 || self.split_stride == 0 {
            return Err(Error::invalid("window growth and split stride must be at least 1"));
        }
        Ok(())
    }
}

/// Frames kept on each side of a scanned split so both covariances are
/// estimated from a reasonable number of rows.
pub fn edge_margin(dim: usize) -> usize {
    2 * (dim + 1)
}

/// A half-open run of frames `[start_frame, end_frame)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start_frame: usize,
    pub end_frame: usize,
    pub start_s: f64,
    pub end_s: f64,
    /// Set when the whole speech region was shorter than `min_seg_frames`.
    pub short: bool,
}

impl Segment {
    pub fn new(start_frame: usize, end_frame: usize, features: &FeatureMatrix) -> Self {
        Self {
            start_frame,
            end_frame,
            start_s: features.boundary_time_s(start_frame),
            end_s: features.boundary_time_s(end_frame),
            short: false,
        }
    }

    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.end_frame == self.start_frame
    }

    pub fn frames(&self) -> Range<usize> {
        self.start_frame..self.end_frame
    }

    /// Copy of this segment's rows of `features`.
    pub fn rows(&self, features: &FeatureMatrix) -> Matrix {
        features.vectors.slice_rows(self.start_frame, self.end_frame)
    }
}

/// Prefix sums of rows and row outer products for O(d^2) window covariances.
struct PrefixStats {
    d: usize,
    sums: Vec<f64>,
    outer: Vec<f64>,
}

impl PrefixStats {
    fn new(x: &Matrix) -> Self {
        let n = x.rows();
        let d = x.cols();
        let tri = d * (d + 1) / 2;
        // Centering keeps the prefix sums small.
        let mut center = vec![0.0; d];
        for r in x.iter_rows() {
            center.iter_mut().zip(r).for_each(|(c, v)| *c += v);
        }
        center.iter_mut().for_each(|c| *c /= n.max(1) as f64);

        let mut sums = vec![0.0; (n + 1) * d];
        let mut outer = vec![0.0; (n + 1) * tri];
        let mut row = vec![0.0; d];
        for t in 0..n {
            for (i, r) in row.iter_mut().enumerate() {
                *r = x.get(t, i) - center[i];
            }
            for i in 0..d {
                sums[(t + 1) * d + i] = sums[t * d + i] + row[i];
            }
            let mut k = 0;
            for i in 0..d {
                for j in 0..=i {
                    outer[(t + 1) * tri + k] = outer[t * tri + k] + row[i] * row[j];
                    k += 1;
                }
            }
        }
        Self { d, sums, outer }
    }

    /// `ln det` of the ridge-regularized ML covariance of rows `a..b`.
    fn log_det(&self, a: usize, b: usize) -> Result<f64> {
        let d = self.d;
        let tri = d * (d + 1) / 2;
        let n = (b - a) as f64;
        let mean: Vec<f64> = (0..d)
            .map(|i| (self.sums[b * d + i] - self.sums[a * d + i]) / n)
            .collect();
        let mut cov = vec![0.0; d * d];
        let mut k = 0;
        for i in 0..d {
            for j in 0..=i {
                let c = (self.outer[b * tri + k] - self.outer[a * tri + k]) / n - mean[i] * mean[j];
                cov[i * d + j] = c;
                cov[j * d + i] = c;
                k += 1;
            }
        }
        for i in 0..d {
            cov[i * d + i] += COVARIANCE_RIDGE;
        }
        log_det_spd(&cov, d).ok_or_else(|| {
            Error::Numerical(format!("covariance of rows {a}..{b} is not positive definite"))
        })
    }

    /// Delta-BIC for the window `a..b` split at `s`.
    fn delta_bic(&self, a: usize, s: usize, b: usize, whole: f64, lambda: f64) -> Result<f64> {
        let d = self.d as f64;
        let n = (b - a) as f64;
        let n1 = (s - a) as f64;
        let n2 = (b - s) as f64;
        let penalty = 0.5 * lambda * (d + d * (d + 1.0) / 2.0) * n.ln();
        Ok(0.5 * n * whole - 0.5 * n1 * self.log_det(a, s)? - 0.5 * n2 * self.log_det(s, b)? - penalty)
    }
}

/// Delta-BIC of splitting `x` at row `split`: positive favours two models.
pub fn delta_bic(x: &Matrix, split: usize, lambda: f64) -> Result<f64> {
    let n = x.rows();
    let d = x.cols();
    if d == 0 {
        return Err(Error::invalid("features must have at least one dimension"));
    }
    if split < d + 1 || split + d + 1 > n {
        return Err(Error::invalid(format!(
            "split {split} leaves a half with fewer than {} rows (n = {n})",
            d + 1
        )));
    }
    let stats = PrefixStats::new(x);
    let whole = stats.log_det(0, n)?;
    stats.delta_bic(0, split, n, whole, lambda)
}

/// Best split of window `a..b` among `candidates`; `None` if none is positive.
fn best_positive_split(
    stats: &PrefixStats,
    a: usize,
    b: usize,
    candidates: impl Iterator<Item = usize>,
    lambda: f64,
) -> Result<Option<(usize, f64)>> {
    let whole = stats.log_det(a, b)?;
    let mut best: Option<(usize, f64)> = None;
    for s in candidates {
        let v = stats.delta_bic(a, s, b, whole, lambda)?;
        if v > 0.0 && best.map_or(true, |(_, bv)| v > bv) {
            best = Some((s, v));
        }
    }
    Ok(best)
}

fn check_regions(features: &FeatureMatrix, regions: &[Range<usize>]) -> Result<()> {
    let mut prev_end = 0;
    for r in regions {
        if r.start >= r.end || r.end > features.n_frames() || r.start < prev_end {
            return Err(Error::invalid(format!(
                "speech region {r:?} is empty, unsorted or outside {} frames",
                features.n_frames()
            )));
        }
        prev_end = r.end;
    }
    Ok(())
}

/// Growing-window change-point scan inside every speech region.
pub fn detect_change_points(
    features: &FeatureMatrix,
    speech_regions: &[Range<usize>],
    cfg: &SegmentationConfig,
) -> Result<Vec<Segment>> {
    let d = features.dim();
    cfg.validate(d)?;
    check_regions(features, speech_regions)?;
    let margin = edge_margin(d);
    let mut segments = Vec::new();

    for region in speech_regions {
        if region.len() < cfg.min_seg_frames {
            let mut seg = Segment::new(region.start, region.end, features);
            seg.short = true;
            segments.push(seg);
            continue;
        }
        let x = features.vectors.slice_rows(region.start, region.end);
        let stats = PrefixStats::new(&x);
        let len = x.rows();
        let mut start = 0;
        let mut end = (start + 2 * cfg.min_seg_frames).min(len);
        loop {
            let split = if end - start >= 2 * margin {
                let candidates = (start + margin..=end - margin).step_by(cfg.split_stride);
                best_positive_split(&stats, start, end, candidates, cfg.lambda)?
            } else {
                None
            };
            match split {
                Some((s, _)) => {
                    segments.push(Segment::new(region.start + start, region.start + s, features));
                    start = s;
                    end = (start + 2 * cfg.min_seg_frames).min(len);
                }
                None if end == len => {
                    segments.push(Segment::new(region.start + start, region.start + len, features));
                    break;
                }
                None => end = (end + cfg.window_grow_frames).min(len),
            }
        }
    }
    Ok(segments)
}

const MAX_REFINE_PASSES: usize = 4;

/// Move each interior boundary to the delta-BIC maximum within
/// `refine_radius_frames`, measured over the two adjacent segments. A
/// boundary whose best delta-BIC is not positive is removed.
pub fn refine_boundaries(
    segments: &[Segment],
    features: &FeatureMatrix,
    cfg: &SegmentationConfig,
) -> Result<Vec<Segment>> {
    let mut segs = segments.to_vec();
    if cfg.refine_radius_frames == 0 || segs.len() < 2 {
        return Ok(segs);
    }
    let d = features.dim();
    cfg.validate(d)?;
    if segs.windows(2).any(|w| w[0].end_frame > w[1].start_frame) {
        return Err(Error::invalid("segments must be sorted and disjoint"));
    }
    let margin = edge_margin(d).max(d + 1);
    let radius = cfg.refine_radius_frames;

    for _ in 0..MAX_REFINE_PASSES {
        let mut changed = false;
        let mut i = 0;
        while i + 1 < segs.len() {
            let (a, b) = (segs[i], segs[i + 1]);
            if a.end_frame != b.start_frame {
                i += 1;
                continue;
            }
            let x = features.vectors.slice_rows(a.start_frame, b.end_frame);
            let stats = PrefixStats::new(&x);
            let n = x.rows();
            let current = b.start_frame - a.start_frame;
            let whole = stats.log_det(0, n)?;
            let lo = current.saturating_sub(radius).max(margin.min(current));
            let hi = (current + radius).min(n - margin.min(n - current));
            let mut best = (current, stats.delta_bic(0, current, n, whole, cfg.lambda)?);
            for s in lo..=hi {
                if s == current {
                    continue;
                }
                let v = stats.delta_bic(0, s, n, whole, cfg.lambda)?;
                if v > best.1 {
                    best = (s, v);
                }
            }
            if best.1 > 0.0 {
                if best.0 != current {
                    let moved = a.start_frame + best.0;
                    segs[i] = Segment {
                        short: a.short,
                        ..Segment::new(a.start_frame, moved, features)
                    };
                    segs[i + 1] = Segment {
                        short: b.short,
                        ..Segment::new(moved, b.end_frame, features)
                    };
                    changed = true;
                }
                i += 1;
            } else {
                segs[i] = Segment::new(a.start_frame, b.end_frame, features);
                segs.remove(i + 1);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(segs)
}

/// Delta-BIC at every interior boundary, measured over the two segments
/// that meet there.
pub fn boundary_scores(
    segments: &[Segment],
    features: &FeatureMatrix,
    lambda: f64,
) -> Result<Vec<(usize, f64)>> {
    segments
        .windows(2)
        .filter(|w| w[0].end_frame == w[1].start_frame)
        .map(|w| {
            let x = features.vectors.slice_rows(w[0].start_frame, w[1].end_frame);
            Ok((w[1].start_frame, delta_bic(&x, w[0].len(), lambda)?))
        })
        .collect()
}

/// CSV dump: `boundary_frame,delta_bic`.
pub fn write_boundaries_csv<W: Write>(scores: &[(usize, f64)], mut out: W) -> Result<()> {
    writeln!(out, "boundary_frame,delta_bic")?;
    for (frame, v) in scores {
        writeln!(out, "{frame},{v}")?;
    }
    Ok(())
}
