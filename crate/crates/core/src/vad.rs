//! Energy-based voice activity detection with an adaptive threshold.
//!
//! The threshold sits a fixed fraction `alpha` of the way from an estimated
//! noise floor (a low percentile of frame energies) up to the loudest frame.
//! The raw mask is then smoothed: short non-speech gaps inside speech are
//! filled and speech runs that are too short are dropped.

use std::io::Write;
use std::ops::Range;

use log::warn;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VadConfig {
    /// Fraction of the floor-to-peak range added to the floor.
    pub alpha: f64,
    /// Noise floor percentile in `[0, 100]`.
    pub percentile: f64,
    pub hangover_frames: usize,
    pub min_speech_frames: usize,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            alpha: 0.15,
            percentile: 10.0,
            hangover_frames: 5,
            min_speech_frames: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VadDecision {
    /// Smoothed per-frame speech flags.
    pub mask: Vec<bool>,
    /// Half-open frame ranges of speech, sorted and disjoint.
    pub speech_regions: Vec<Range<usize>>,
    pub threshold_used: f64,
    pub noise_floor: f64,
}

impl VadDecision {
    pub fn speech_frames(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// CSV dump: `frame_index,energy,is_speech`.
    pub fn write_csv<W: Write>(&self, energies: &[f64], mut out: W) -> Result<()> {
        writeln!(out, "frame_index,energy,is_speech")?;
        for (t, (e, s)) in energies.iter().zip(&self.mask).enumerate() {
            writeln!(out, "{t},{e},{}", u8::from(*s))?;
        }
        Ok(())
    }
}

/// Linear-interpolation percentile of frame energies.
pub fn estimate_noise_floor(energies: &[f64], percentile: f64) -> Result<f64> {
    if energies.is_empty() {
        return Err(Error::EmptyInput("noise floor of empty energy sequence"));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::invalid(format!("percentile {percentile} outside [0, 100]")));
    }
    let mut sorted = energies.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = percentile / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Unsmoothed `energy > threshold` mask.
pub fn raw_speech_mask(energies: &[f64], threshold: f64) -> Vec<bool> {
    energies.iter().map(|&e| e > threshold).collect()
}

pub fn detect_speech(energies: &[f64], cfg: &VadConfig) -> Result<VadDecision> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {} must lie in (0, 1)", cfg.alpha)));
    }
    let noise_floor = estimate_noise_floor(energies, cfg.percentile)?;
    let peak = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if peak <= noise_floor {
        warn!("frame energies are flat; classifying everything as non-speech");
        return Ok(VadDecision {
            mask: vec![false; energies.len()],
            speech_regions: Vec::new(),
            threshold_used: peak,
            noise_floor,
        });
    }
    let threshold = noise_floor + cfg.alpha * (peak - noise_floor);
    let mut mask = raw_speech_mask(energies, threshold);
    fill_short_gaps(&mut mask, cfg.hangover_frames);
    drop_short_runs(&mut mask, cfg.min_speech_frames);
    let speech_regions = mask_to_regions(&mask);
    Ok(VadDecision {
        mask,
        speech_regions,
        threshold_used: threshold,
        noise_floor,
    })
}

pub fn mask_to_regions(mask: &[bool]) -> Vec<Range<usize>> {
    let mut regions = Vec::new();
    let mut start = None;
    for (t, &m) in mask.iter().enumerate() {
        match (m, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                regions.push(s..t);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        regions.push(s..mask.len());
    }
    regions
}

/// Fill non-speech gaps of at most `max_gap` frames bounded by speech on both sides.
fn fill_short_gaps(mask: &mut [bool], max_gap: usize) {
    let regions = mask_to_regions(mask);
    for pair in regions.windows(2) {
        let gap = pair[0].end..pair[1].start;
        if gap.len() <= max_gap {
            mask[gap].iter_mut().for_each(|m| *m = true);
        }
    }
}

fn drop_short_runs(mask: &mut [bool], min_len: usize) {
    for r in mask_to_regions(mask) {
        if r.len() < min_len {
            mask[r].iter_mut().for_each(|m| *m = false);
        }
    }
}
