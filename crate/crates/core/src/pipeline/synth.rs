use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio_io::AudioBuffer;
use crate::error::{Error, Result};
use crate::metrics::LabeledTimeline;

/// A harmonic source: fundamental plus integer multiples.
#[derive(Debug, Clone, PartialEq)]
pub struct Voice {
    pub f0_hz: f64,
    /// Gain of harmonic `k+1` (index 0 is the fundamental).
    pub harmonic_gains: Vec<f64>,
}

impl Voice {
    pub fn new(f0_hz: f64) -> Self {
        Self {
            f0_hz,
            harmonic_gains: vec![1.0, 0.6, 0.3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedTurn {
    pub speaker: usize,
    pub start_s: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub sample_rate_hz: u32,
    pub voices: Vec<Voice>,
    pub turns: Vec<PlannedTurn>,
    /// Silence appended after the last turn.
    pub trailing_silence_s: f64,
    /// RMS of the carrier before modulation.
    pub amplitude: f64,
    /// Envelope is `1 + depth * u` with `u` uniform in [-1, 1].
    pub modulation_depth: f64,
    pub seed: u64,
}

/// Speakers alternate; each turn is `turn_s` long followed by `gap_s` of silence.
pub fn alternating_plan(n_speakers: usize, n_turns: usize, turn_s: f64, gap_s: f64) -> Vec<PlannedTurn> {
    (0..n_turns)
        .map(|i| PlannedTurn {
            speaker: i % n_speakers.max(1),
            start_s: i as f64 * (turn_s + gap_s),
            duration_s: turn_s,
        })
        .collect()
}

impl SynthSpec {
    /// Two voices (120 Hz and 280 Hz), four 4.7 s turns with 0.3 s gaps: 20 s.
    pub fn two_speaker(seed: u64) -> Self {
        Self {
            sample_rate_hz: 16_000,
            voices: vec![Voice::new(120.0), Voice::new(280.0)],
            turns: alternating_plan(2, 4, 4.7, 0.3),
            trailing_silence_s: 0.3,
            amplitude: 0.25,
            modulation_depth: 0.5,
            seed,
        }
    }

    /// Same voices, alternating turns until `total_s` is covered.
    pub fn two_speaker_long(seed: u64, total_s: f64) -> Self {
        let n_turns = (total_s / 5.0).floor().max(1.0) as usize;
        Self {
            turns: alternating_plan(2, n_turns, 4.7, 0.3),
            ..Self::two_speaker(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 || self.voices.is_empty() {
            return Err(Error::invalid("synth needs a sample rate and at least one voice"));
        }
        if let Some(v) = self
            .voices
            .iter()
            .find(|v| !(v.f0_hz > 0.0) || v.harmonic_gains.is_empty())
        {
            return Err(Error::invalid(format!("voice at {} Hz is degenerate", v.f0_hz)));
        }
        if !(self.amplitude > 0.0) || !(0.0..1.0).contains(&self.modulation_depth) {
            return Err(Error::invalid("need amplitude > 0 and modulation depth in [0, 1)"));
        }
        let mut sorted = self.turns.clone();
        sorted.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        for t in &sorted {
            if t.speaker >= self.voices.len() || !(t.duration_s > 0.0) || !(t.start_s >= 0.0) {
                return Err(Error::invalid(format!(
                    "turn at {} s is invalid (speaker {}, duration {})",
                    t.start_s, t.speaker, t.duration_s
                )));
            }
        }
        if let Some(w) = sorted
            .windows(2)
            .find(|w| w[0].start_s + w[0].duration_s > w[1].start_s)
        {
            return Err(Error::invalid(format!(
                "turns at {} s and {} s overlap",
                w[0].start_s, w[1].start_s
            )));
        }
        Ok(())
    }
}

/// Render the fixture and its ground-truth timeline (labels `S<speaker>`).
pub fn synth_fixture(spec: &SynthSpec) -> Result<(AudioBuffer, LabeledTimeline)> {
    spec.validate()?;
    let sr = spec.sample_rate_hz as f64;
    let end_s = spec
        .turns
        .iter()
        .map(|t| t.start_s + t.duration_s)
        .fold(0.0, f64::max)
        + spec.trailing_silence_s.max(0.0);
    let mut samples = vec![0.0; (end_s * sr).round() as usize];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut truth = Vec::with_capacity(spec.turns.len());

    for t in &spec.turns {
        let voice = &spec.voices[t.speaker];
        let carrier_rms = (voice.harmonic_gains.iter().map(|g| g * g).sum::<f64>() / 2.0).sqrt();
        let phases: Vec<f64> = voice
            .harmonic_gains
            .iter()
            .map(|_| rng.random_range(0.0..2.0 * PI))
            .collect();
        let first = (t.start_s * sr).round() as usize;
        let last = (((t.start_s + t.duration_s) * sr).round() as usize).min(samples.len());
        for (n, s) in samples[first..last].iter_mut().enumerate() {
            let time = n as f64 / sr;
            let carrier: f64 = voice
                .harmonic_gains
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(k, (g, ph))| g * (2.0 * PI * (k + 1) as f64 * voice.f0_hz * time + ph).sin())
                .sum();
            let envelope = 1.0 + spec.modulation_depth * rng.random_range(-1.0..=1.0);
            *s = (spec.amplitude * envelope * carrier / carrier_rms).clamp(-1.0, 1.0);
        }
        truth.push((t.start_s, t.start_s + t.duration_s, format!("S{}", t.speaker)));
    }
    Ok((AudioBuffer::new(samples, spec.sample_rate_hz)?, LabeledTimeline::new(truth)?))
}
