//! Word error rate and diarization error rate.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Case-folded, whitespace-tokenized transcript.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WordSequence {
    tokens: Vec<String>,
}

impl WordSequence {
    pub fn parse(text: &str) -> Self {
        Self {
            tokens: text.split_whitespace().map(|t| t.to_lowercase()).collect(),
        }
    }

    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let tokens: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
        if tokens.iter().any(|t| t.is_empty() || t.chars().any(char::is_whitespace)) {
            return Err(Error::invalid("tokens must be non-empty and contain no whitespace"));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WerReport {
    pub rate: f64,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_len: usize,
}

impl WerReport {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Unit-cost Levenshtein alignment. On ties the backtrace prefers a
/// substitution, then an insertion, then a deletion.
pub fn wer(reference: &WordSequence, hypothesis: &WordSequence) -> Result<WerReport> {
    let r = reference.tokens();
    let h = hypothesis.tokens();
    if r.is_empty() {
        return Err(Error::EmptyInput("WER is undefined for an empty reference"));
    }
    let (n, m) = (r.len(), h.len());
    let w = m + 1;
    let mut cost = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        cost[i * w] = i;
    }
    for j in 0..=m {
        cost[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = cost[(i - 1) * w + j - 1] + usize::from(r[i - 1] != h[j - 1]);
            let ins = cost[i * w + j - 1] + 1;
            let del = cost[(i - 1) * w + j] + 1;
            cost[i * w + j] = diag.min(ins).min(del);
        }
    }

    let (mut i, mut j) = (n, m);
    let (mut sub, mut ins, mut del) = (0, 0, 0);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let mismatch = usize::from(r[i - 1] != h[j - 1]);
            if cost[(i - 1) * w + j - 1] + mismatch == here {
                sub += mismatch;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && cost[i * w + j - 1] + 1 == here {
            ins += 1;
            j -= 1;
        } else {
            del += 1;
            i -= 1;
        }
    }
    Ok(WerReport {
        rate: (sub + ins + del) as f64 / n as f64,
        substitutions: sub,
        insertions: ins,
        deletions: del,
        reference_len: n,
    })
}

/// Speaker-labeled time intervals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledTimeline {
    entries: Vec<(f64, f64, String)>,
}

impl LabeledTimeline {
    /// Entries are sorted by start time; each must have `end > start`.
    pub fn new(mut entries: Vec<(f64, f64, String)>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| !(e.1 > e.0) || !e.0.is_finite() || !e.1.is_finite()) {
            return Err(Error::invalid(format!(
                "timeline entry [{}, {}) for '{}' is empty or non-finite",
                e.0, e.1, e.2
            )));
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(f64, f64, String)] {
        &self.entries
    }

    pub fn speakers(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.2.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn total_speech_s(&self) -> f64 {
        self.entries.iter().map(|e| e.1 - e.0).sum()
    }
}

/// Scoring grid step in seconds.
pub const DER_STEP_S: f64 = 0.01;
pub const MAX_DER_SPEAKERS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerReport {
    pub rate: f64,
    pub missed_s: f64,
    pub false_alarm_s: f64,
    pub confusion_s: f64,
    pub reference_speech_s: f64,
}

fn to_grid(t: f64) -> usize {
    (t / DER_STEP_S).round().max(0.0) as usize
}

/// Per-frame speaker activity on the scoring grid, one bit per speaker.
fn activity(tl: &LabeledTimeline, speakers: &[String], n_frames: usize) -> Vec<u64> {
    let mut frames = vec![0u64; n_frames];
    for (s, e, label) in tl.entries() {
        let k = speakers.iter().position(|sp| sp == label).expect("known speaker");
        for f in &mut frames[to_grid(*s).min(n_frames)..to_grid(*e).min(n_frames)] {
            *f |= 1 << k;
        }
    }
    frames
}

/// Diarization error rate on a 10 ms grid with a no-score collar around every
/// reference boundary, under the speaker mapping that maximizes overlap.
pub fn der(reference: &LabeledTimeline, hypothesis: &LabeledTimeline, collar_s: f64) -> Result<DerReport> {
    if !(collar_s >= 0.0) {
        return Err(Error::invalid(format!("collar {collar_s} must be nonnegative")));
    }
    let ref_spk = reference.speakers();
    let hyp_spk = hypothesis.speakers();
    if ref_spk.len() > MAX_DER_SPEAKERS {
        return Err(Error::invalid(format!(
            "{} reference speakers exceed the exhaustive-mapping limit of {MAX_DER_SPEAKERS}",
            ref_spk.len()
        )));
    }
    if hyp_spk.len() > 64 {
        return Err(Error::invalid("more than 64 hypothesis speakers"));
    }
    let last = |tl: &LabeledTimeline| tl.entries().iter().map(|e| to_grid(e.1)).max().unwrap_or(0);
    let n_frames = last(reference).max(last(hypothesis));
    let ref_act = activity(reference, &ref_spk, n_frames);
    let hyp_act = activity(hypothesis, &hyp_spk, n_frames);

    let collar = to_grid(collar_s);
    let mut scored = vec![true; n_frames];
    if collar > 0 {
        for (s, e, _) in reference.entries() {
            for b in [to_grid(*s), to_grid(*e)] {
                let lo = b.saturating_sub(collar);
                let hi = (b + collar).min(n_frames);
                scored[lo.min(hi)..hi].iter_mut().for_each(|f| *f = false);
            }
        }
    }

    // overlap[r][h]: scored frames where both are active.
    let mut overlap = vec![vec![0usize; hyp_spk.len()]; ref_spk.len()];
    let (mut ref_frames, mut missed, mut false_alarm, mut paired) = (0usize, 0usize, 0usize, 0usize);
    for t in (0..n_frames).filter(|&t| scored[t]) {
        let (r, h) = (ref_act[t], hyp_act[t]);
        let (nr, nh) = (r.count_ones() as usize, h.count_ones() as usize);
        ref_frames += nr;
        missed += nr.saturating_sub(nh);
        false_alarm += nh.saturating_sub(nr);
        paired += nr.min(nh);
        for (_, row) in overlap.iter_mut().enumerate().filter(|(i, _)| r & (1 << i) != 0) {
            for (j, o) in row.iter_mut().enumerate() {
                if h & (1 << j) != 0 {
                    *o += 1;
                }
            }
        }
    }
    if ref_frames == 0 {
        return Err(Error::invalid("reference has no scored speech"));
    }
    let matched = best_mapping(&overlap, hyp_spk.len());
    let confusion = paired - matched;
    let errors = missed + false_alarm + confusion;
    Ok(DerReport {
        rate: errors as f64 / ref_frames as f64,
        missed_s: missed as f64 * DER_STEP_S,
        false_alarm_s: false_alarm as f64 * DER_STEP_S,
        confusion_s: confusion as f64 * DER_STEP_S,
        reference_speech_s: ref_frames as f64 * DER_STEP_S,
    })
}

/// Maximum total overlap over injective maps from reference speakers to
/// hypothesis speakers (or to nobody), by exhaustive search.
fn best_mapping(overlap: &[Vec<usize>], n_hyp: usize) -> usize {
    fn search(r: usize, overlap: &[Vec<usize>], used: &mut Vec<bool>, acc: usize, best: &mut usize) {
        if r == overlap.len() {
            *best = (*best).max(acc);
            return;
        }
        // Leave this reference speaker unmapped.
        search(r + 1, overlap, used, acc, best);
        for h in 0..used.len() {
            if !used[h] && overlap[r][h] > 0 {
                used[h] = true;
                search(r + 1, overlap, used, acc + overlap[r][h], best);
                used[h] = false;
            }
        }
    }
    let mut best = 0;
    search(0, overlap, &mut vec![false; n_hyp], 0, &mut best);
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tl(entries: &[(f64, f64, &str)]) -> LabeledTimeline {
        LabeledTimeline::new(entries.iter().map(|&(s, e, l)| (s, e, l.to_string())).collect()).unwrap()
    }

    #[test]
    fn wer_examples() {
        let r = WordSequence::parse("a b c");
        let ok = wer(&r, &r).unwrap();
        assert_eq!((ok.rate, ok.errors()), (0.0, 0));

        let all_del = wer(&r, &WordSequence::parse("")).unwrap();
        assert_eq!(all_del.rate, 1.0);
        assert_eq!((all_del.substitutions, all_del.insertions, all_del.deletions), (0, 0, 3));

        let mixed = wer(&r, &WordSequence::parse("a x c d")).unwrap();
        assert_eq!((mixed.substitutions, mixed.insertions, mixed.deletions), (1, 1, 0));
        assert!((mixed.rate - 2.0 / 3.0).abs() < 1e-12);

        let many = wer(&WordSequence::parse("a"), &WordSequence::parse("b c d")).unwrap();
        assert_eq!(many.rate, 3.0);
    }

    #[test]
    fn wer_case_folds_and_rejects_empty_reference() {
        let a = wer(&WordSequence::parse("Hello World"), &WordSequence::parse("hello world")).unwrap();
        assert_eq!(a.rate, 0.0);
        assert!(wer(&WordSequence::parse(""), &WordSequence::parse("x")).is_err());
        assert!(WordSequence::from_tokens(&["a", ""]).is_err());
    }

    #[test]
    fn der_identity_and_renaming() {
        let r = tl(&[(0.0, 4.0, "A"), (4.0, 9.5, "B"), (10.0, 12.0, "A")]);
        assert_eq!(der(&r, &r, 0.25).unwrap().rate, 0.0);
        let renamed = tl(&[(0.0, 4.0, "x"), (4.0, 9.5, "y"), (10.0, 12.0, "x")]);
        assert_eq!(der(&r, &renamed, 0.0).unwrap().rate, 0.0);
    }

    #[test]
    fn der_single_speaker_hypothesis() {
        let r = tl(&[(0.0, 10.0, "S0"), (10.0, 20.0, "S1")]);
        let h = tl(&[(0.0, 20.0, "X")]);
        let rep = der(&r, &h, 0.0).unwrap();
        assert_eq!(rep.rate, 0.5);
        assert!((rep.confusion_s - 10.0).abs() < 1e-9);
        assert_eq!((rep.missed_s, rep.false_alarm_s), (0.0, 0.0));
    }

    #[test]
    fn der_miss_and_false_alarm() {
        let r = tl(&[(0.0, 10.0, "A")]);
        let h = tl(&[(5.0, 15.0, "A")]);
        let rep = der(&r, &h, 0.0).unwrap();
        assert!((rep.missed_s - 5.0).abs() < 1e-9);
        assert!((rep.false_alarm_s - 5.0).abs() < 1e-9);
        assert_eq!(rep.rate, 1.0);
    }

    #[test]
    fn der_collar_excludes_boundaries() {
        let r = tl(&[(0.0, 10.0, "A"), (10.0, 20.0, "B")]);
        // Hypothesis boundary is 0.2 s late: inside a 0.25 s collar.
        let h = tl(&[(0.0, 10.2, "a"), (10.2, 20.0, "b")]);
        assert_eq!(der(&r, &h, 0.25).unwrap().rate, 0.0);
        assert!(der(&r, &h, 0.0).unwrap().rate > 0.0);
    }

    #[test]
    fn der_rejects_too_many_speakers() {
        let entries: Vec<(f64, f64, String)> =
            (0..9).map(|i| (i as f64, i as f64 + 1.0, format!("s{i}"))).collect();
        let r = LabeledTimeline::new(entries).unwrap();
        assert!(der(&r, &r, 0.0).is_err());
    }

    #[test]
    fn timeline_validation() {
        assert!(LabeledTimeline::new(vec![(1.0, 1.0, "a".into())]).is_err());
        let t = tl(&[(3.0, 4.0, "b"), (0.0, 1.0, "a")]);
        assert_eq!(t.entries()[0].2, "a");
        assert_eq!(t.speakers(), vec!["a".to_string(), "b".to_string()]);
    }
}
