//! Core domain types: utterances, utterance groups, and their validation.
//!
//! Times are stored as `f64` seconds. Exact comparisons that feed the label
//! codec happen on quantized frame indices (see [`crate::vocab`]), not on raw
//! floats.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A closed time span in seconds. `end_s >= start_s`, both finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeInterval {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self, ValidationError> {
        if !start_s.is_finite() || !end_s.is_finite() {
            return Err(ValidationError::new("interval", "non-finite time"));
        }
        if start_s < 0.0 {
            return Err(ValidationError::new("interval", "negative start time"));
        }
        if end_s < start_s {
            return Err(ValidationError::new(
                "interval",
                format!("end {end_s} < start {start_s}"),
            ));
        }
        Ok(Self { start_s, end_s })
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Length of the overlap with `other`, zero when disjoint.
    pub fn overlap_s(&self, other: &TimeInterval) -> f64 {
        (self.end_s.min(other.end_s) - self.start_s.max(other.start_s)).max(0.0)
    }

    pub fn contains(&self, other: &TimeInterval) -> bool {
        self.start_s <= other.start_s && other.end_s <= self.end_s
    }

    pub fn shifted(&self, by_s: f64) -> TimeInterval {
        TimeInterval {
            start_s: self.start_s + by_s,
            end_s: self.end_s + by_s,
        }
    }
}

/// A single transcribed word. The interval is optional: manifests without
/// word-level timings carry text only, and downstream code falls back to the
/// utterance interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    pub interval: Option<TimeInterval>,
}

impl Word {
    pub fn plain(text: impl Into<String>) -> Self {
        Word {
            text: text.into(),
            interval: None,
        }
    }

    pub fn timed(text: impl Into<String>, start_s: f64, end_s: f64) -> Result<Self, ValidationError> {
        Ok(Word {
            text: text.into(),
            interval: Some(TimeInterval::new(start_s, end_s)?),
        })
    }
}

/// One speaker's contiguous speech span with its word sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub session_id: String,
    pub speaker_id: String,
    pub interval: TimeInterval,
    pub words: Vec<Word>,
}

impl Utterance {
    /// Checks the per-utterance invariants: non-empty words, word text shape,
    /// word intervals inside the utterance and non-decreasing in start.
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.words.is_empty() {
            return Err(ValidationError::new("words", "utterance has no words"));
        }
        let mut prev_start: Option<f64> = None;
        for w in &self.words {
            if w.text.is_empty() || w.text.chars().any(char::is_whitespace) {
                return Err(ValidationError::new(
                    "word",
                    format!("word text {:?} empty or contains whitespace", w.text),
                ));
            }
            if let Some(iv) = &w.interval {
                if !self.interval.contains(iv) {
                    return Err(ValidationError::new(
                        "word",
                        format!(
                            "word [{:.3},{:.3}] outside utterance [{:.3},{:.3}]",
                            iv.start_s, iv.end_s, self.interval.start_s, self.interval.end_s
                        ),
                    ));
                }
                if let Some(p) = prev_start {
                    if iv.start_s < p {
                        return Err(ValidationError::new("word", "word starts out of order"));
                    }
                }
                prev_start = Some(iv.start_s);
            }
        }
        Ok(())
    }

    /// Shift the utterance (and any word timings) by `by_s` seconds.
    pub fn shifted(&self, by_s: f64) -> Utterance {
        Utterance {
            session_id: self.session_id.clone(),
            speaker_id: self.speaker_id.clone(),
            interval: self.interval.shifted(by_s),
            words: self
                .words
                .iter()
                .map(|w| Word {
                    text: w.text.clone(),
                    interval: w.interval.map(|iv| iv.shifted(by_s)),
                })
                .collect(),
        }
    }
}

/// How an utterance group came to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupOrigin {
    Segmented,
    Simulated,
}

/// A bounded window of utterances from one session: the unit of training,
/// decoding, and scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceGroup {
    pub group_id: String,
    pub utterances: Vec<Utterance>,
    pub origin: GroupOrigin,
}

impl UtteranceGroup {
    pub fn span(&self) -> TimeInterval {
        let start = self
            .utterances
            .iter()
            .map(|u| u.interval.start_s)
            .fold(f64::INFINITY, f64::min);
        let end = self
            .utterances
            .iter()
            .map(|u| u.interval.end_s)
            .fold(f64::NEG_INFINITY, f64::max);
        TimeInterval {
            start_s: start,
            end_s: end,
        }
    }

    pub fn span_s(&self) -> f64 {
        if self.utterances.is_empty() {
            return 0.0;
        }
        self.span().duration_s()
    }

    /// Distinct speaker ids, in FIFO order of first appearance by start time
    /// (ties broken lexicographically).
    pub fn speaker_ids(&self) -> Vec<&str> {
        let mut firsts: Vec<(&str, f64)> = Vec::new();
        for u in &self.utterances {
            match firsts.iter_mut().find(|(s, _)| *s == u.speaker_id) {
                Some((_, t)) => *t = t.min(u.interval.start_s),
                None => firsts.push((&u.speaker_id, u.interval.start_s)),
            }
        }
        firsts.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        firsts.into_iter().map(|(s, _)| s).collect()
    }

    pub fn speaker_count(&self) -> usize {
        self.speaker_ids().len()
    }

    /// All utterances of one speaker, sorted by start time.
    pub fn utterances_of(&self, speaker_id: &str) -> Vec<&Utterance> {
        let mut utts: Vec<&Utterance> = self
            .utterances
            .iter()
            .filter(|u| u.speaker_id == speaker_id)
            .collect();
        utts.sort_by(|a, b| a.interval.start_s.total_cmp(&b.interval.start_s));
        utts
    }
}

/// Limits applied by [`validate_group`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GroupLimits {
    pub max_span_s: f64,
    pub max_speakers: usize,
}

impl Default for GroupLimits {
    fn default() -> Self {
        GroupLimits {
            max_span_s: 30.0,
            max_speakers: 4,
        }
    }
}

/// Checks every group invariant under `limits` and reports the first
/// violation.
pub fn validate_group(g: &UtteranceGroup, limits: &GroupLimits) -> Result<(), ValidationError> {
    if g.utterances.is_empty() {
        return Err(ValidationError::new("group", "group has no utterances"));
    }
    let session = &g.utterances[0].session_id;
    for u in &g.utterances {
        u.validate()?;
        if &u.session_id != session {
            return Err(ValidationError::new(
                "session",
                format!("mixed sessions {:?} and {:?}", session, u.session_id),
            ));
        }
    }
    check_same_speaker_disjoint(&g.utterances)?;
    let span = g.span_s();
    if span > limits.max_span_s {
        return Err(ValidationError::new(
            "span",
            format!("group spans {span:.3} s > {:.3} s", limits.max_span_s),
        ));
    }
    let speakers = g.speaker_count();
    if speakers > limits.max_speakers {
        return Err(ValidationError::new(
            "speakers",
            format!("{speakers} speakers > cap {}", limits.max_speakers),
        ));
    }
    Ok(())
}

/// Same-speaker utterances must never overlap each other.
pub fn check_same_speaker_disjoint(utts: &[Utterance]) -> Result<(), ValidationError> {
    let mut by_speaker: Vec<(&str, Vec<&Utterance>)> = Vec::new();
    for u in utts {
        match by_speaker.iter_mut().find(|(s, _)| *s == u.speaker_id) {
            Some((_, v)) => v.push(u),
            None => by_speaker.push((&u.speaker_id, vec![u])),
        }
    }
    for (speaker, mut v) in by_speaker {
        v.sort_by(|a, b| a.interval.start_s.total_cmp(&b.interval.start_s));
        for pair in v.windows(2) {
            if pair[1].interval.start_s < pair[0].interval.end_s {
                return Err(ValidationError::new(
                    "overlap",
                    format!(
                        "speaker {speaker:?} overlaps itself at {:.3} s",
                        pair[1].interval.start_s
                    ),
                ));
            }
        }
    }
    Ok(())
}

/// A violated invariant, naming which one.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("invalid {what}: {why}")]
pub struct ValidationError {
    pub what: String,
    pub why: String,
}

impl ValidationError {
    pub fn new(what: impl Into<String>, why: impl Into<String>) -> Self {
        ValidationError {
            what: what.into(),
            why: why.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(speaker: &str, start: f64, end: f64, words: &[&str]) -> Utterance {
        Utterance {
            session_id: "S".into(),
            speaker_id: speaker.into(),
            interval: TimeInterval::new(start, end).unwrap(),
            words: words.iter().map(|w| Word::plain(*w)).collect(),
        }
    }

    #[test]
    fn interval_rejects_reversed() {
        assert!(TimeInterval::new(1.0, 0.5).is_err());
        assert!(TimeInterval::new(0.0, 0.0).is_ok());
    }

    #[test]
    fn group_within_limits_ok() {
        let g = UtteranceGroup {
            group_id: "g0".into(),
            utterances: vec![utt("A", 0.0, 5.0, &["hi"])],
            origin: GroupOrigin::Segmented,
        };
        validate_group(&g, &GroupLimits::default()).unwrap();
    }

    #[test]
    fn group_span_violation_named() {
        let g = UtteranceGroup {
            group_id: "g0".into(),
            utterances: vec![utt("A", 0.0, 31.0, &["hi"])],
            origin: GroupOrigin::Segmented,
        };
        let err = validate_group(&g, &GroupLimits::default()).unwrap_err();
        assert_eq!(err.what, "span");
    }

    #[test]
    fn group_speaker_cap_violation_named() {
        let utterances = (0..5)
            .map(|i| utt(&format!("spk{i}"), i as f64, i as f64 + 0.5, &["x"]))
            .collect();
        let g = UtteranceGroup {
            group_id: "g0".into(),
            utterances,
            origin: GroupOrigin::Segmented,
        };
        let err = validate_group(&g, &GroupLimits::default()).unwrap_err();
        assert_eq!(err.what, "speakers");
    }

    #[test]
    fn same_speaker_overlap_rejected() {
        let g = UtteranceGroup {
            group_id: "g0".into(),
            utterances: vec![utt("A", 0.0, 2.0, &["a"]), utt("A", 1.0, 3.0, &["b"])],
            origin: GroupOrigin::Segmented,
        };
        let err = validate_group(&g, &GroupLimits::default()).unwrap_err();
        assert_eq!(err.what, "overlap");
    }

    #[test]
    fn fifo_speaker_ids_tie_break_lexicographic() {
        let g = UtteranceGroup {
            group_id: "g0".into(),
            utterances: vec![
                utt("B", 1.0, 2.0, &["x"]),
                utt("A", 1.0, 2.5, &["y"]),
                utt("C", 0.5, 0.9, &["z"]),
            ],
            origin: GroupOrigin::Segmented,
        };
        assert_eq!(g.speaker_ids(), vec!["C", "A", "B"]);
    }

    #[test]
    fn word_outside_utterance_rejected() {
        let mut u = utt("A", 1.0, 2.0, &["w"]);
        u.words[0].interval = Some(TimeInterval::new(0.5, 1.5).unwrap());
        assert!(u.validate().is_err());
    }
}
