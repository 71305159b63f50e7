use std::io::Write;

use crate::error::{Error, Result};
use crate::metrics::LabeledTimeline;

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub onset_s: f64,
    pub duration_s: f64,
    pub speaker: String,
}

/// Speaker turns for one recording, sorted by onset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diarization {
    pub file_id: String,
    pub turns: Vec<Turn>,
}

impl Diarization {
    pub fn new(file_id: impl Into<String>, mut turns: Vec<Turn>) -> Result<Self> {
        if let Some(t) = turns.iter().find(|t| !(t.duration_s > 0.0) || !(t.onset_s >= 0.0)) {
            return Err(Error::invalid(format!(
                "turn at {} s has non-positive duration {}",
                t.onset_s, t.duration_s
            )));
        }
        turns.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
        if let Some(w) = turns.windows(2).find(|w| w[0].onset_s + w[0].duration_s > w[1].onset_s + 1e-9) {
            return Err(Error::invalid(format!(
                "turns starting at {} s and {} s overlap",
                w[0].onset_s, w[1].onset_s
            )));
        }
        Ok(Self {
            file_id: file_id.into(),
            turns,
        })
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.turns.iter().map(|t| t.speaker.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn to_timeline(&self) -> Result<LabeledTimeline> {
        LabeledTimeline::new(
            self.turns
                .iter()
                .map(|t| (t.onset_s, t.onset_s + t.duration_s, t.speaker.clone()))
                .collect(),
        )
    }
}

/// One `SPEAKER` line per turn, times with millisecond precision.
pub fn write_rttm<W: Write>(d: &Diarization, mut sink: W) -> Result<()> {
    for t in &d.turns {
        writeln!(
            sink,
            "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
            d.file_id, t.onset_s, t.duration_s, t.speaker
        )?;
    }
    Ok(())
}

pub fn rttm_string(d: &Diarization) -> String {
    let mut out = Vec::new();
    write_rttm(d, &mut out).expect("writing to a Vec cannot fail");
    String::from_utf8(out).expect("RTTM output is UTF-8")
}

/// Parse RTTM text into one diarization per file id, in order of first
/// appearance. Non-`SPEAKER` records and blank lines are skipped.
pub fn parse_rttm(text: &str) -> Result<Vec<Diarization>> {
    let mut files: Vec<(String, Vec<Turn>)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() || fields[0].starts_with(';') || fields[0] != "SPEAKER" {
            continue;
        }
        let perr = |detail: String| Error::Parse {
            line: idx + 1,
            detail,
        };
        if fields.len() < 8 {
            return Err(perr(format!("expected at least 8 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| perr(format!("bad number '{s}'")));
        let turn = Turn {
            onset_s: num(fields[3])?,
            duration_s: num(fields[4])?,
            speaker: fields[7].to_string(),
        };
        match files.iter_mut().find(|(id, _)| id == fields[1]) {
            Some((_, turns)) => turns.push(turn),
            None => files.push((fields[1].to_string(), vec![turn])),
        }
    }
    files
        .into_iter()
        .map(|(id, turns)| Diarization::new(id, turns))
        .collect()
}

/// All turns of an RTTM text (optionally one file id) as a timeline.
pub fn rttm_timeline(text: &str, file_id: Option<&str>) -> Result<LabeledTimeline> {
    let mut entries = Vec::new();
    for d in parse_rttm(text)? {
        if file_id.map_or(true, |f| f == d.file_id) {
            entries.extend(
                d.turns
                    .into_iter()
                    .map(|t| (t.onset_s, t.onset_s + t.duration_s, t.speaker)),
            );
        }
    }
    LabeledTimeline::new(entries)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn line_format() {
        let d = Diarization::new(
            "a",
            vec![Turn {
                onset_s: 0.0,
                duration_s: 2.5,
                speaker: "S0".into(),
            }],
        )
        .unwrap();
        assert_eq!(rttm_string(&d), "SPEAKER a 1 0.000 2.500 <NA> <NA> S0 <NA> <NA>\n");
        assert_eq!(rttm_string(&Diarization::default()), "");
    }

    #[test]
    fn overlapping_turns_rejected() {
        let t = |o: f64, d: f64| Turn {
            onset_s: o,
            duration_s: d,
            speaker: "S0".into(),
        };
        assert!(Diarization::new("f", vec![t(0.0, 2.0), t(1.5, 1.0)]).is_err());
        assert!(Diarization::new("f", vec![t(0.0, 0.0)]).is_err());
    }

    #[test]
    fn parse_skips_other_records() {
        let text = "SPKR-INFO x 1 <NA> <NA> <NA> unknown S0 <NA> <NA>\n\
                    SPEAKER x 1 1.000 2.000 <NA> <NA> S0 <NA> <NA>\n\
                    SPEAKER y 1 0.500 1.000 <NA> <NA> B <NA> <NA>\n";
        let files = parse_rttm(text).unwrap();
        assert_eq!(files.len(), 2);
        assert_eq!(files[0].file_id, "x");
        let tl = rttm_timeline(text, Some("y")).unwrap();
        assert_eq!(tl.entries(), &[(0.5, 1.5, "B".to_string())]);
        assert!(parse_rttm("SPEAKER x 1 abc 1 <NA> <NA> S0").is_err());
    }

    fn arb_diarization() -> impl Strategy<Value = Diarization> {
        prop::collection::vec((0u32..5000, 1u32..5000, 0usize..4), 0..12).prop_map(|raw| {
            let mut onset_ms = 0u32;
            let turns = raw
                .into_iter()
                .map(|(gap, dur, spk)| {
                    onset_ms += gap;
                    let t = Turn {
                        onset_s: onset_ms as f64 / 1000.0,
                        duration_s: dur as f64 / 1000.0,
                        speaker: format!("S{spk}"),
                    };
                    onset_ms += dur;
                    t
                })
                .collect();
            Diarization::new("rec", turns).unwrap()
        })
    }

    proptest! {
        #[test]
        fn write_then_parse_round_trips(d in arb_diarization()) {
            let parsed = parse_rttm(&rttm_string(&d)).unwrap();
            if d.turns.is_empty() {
                prop_assert!(parsed.is_empty());
            } else {
                prop_assert_eq!(parsed, vec![d]);
            }
        }
    }
}
