//! Session segmentation into utterance groups, and overlap measurement.
//!
//! A cut is legal only where no utterance would be split: either at silence
//! or at an utterance boundary that no other active utterance crosses. With
//! utterances sorted by start time this reduces to one predicate: a cut
//! before utterance `j` is legal iff every earlier utterance has ended by
//! `start_j`. Segmentation is greedy: it cuts at every legal boundary, which
//! yields the finest legal grouping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{GroupOrigin, Utterance, UtteranceGroup};

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("no utterances to segment")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub max_group_s: f64,
    /// Drop groups longer than `max_group_s` (otherwise they are emitted and
    /// flagged in [`Segmentation::overlong`]).
    pub drop_overlong: bool,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            max_group_s: 30.0,
            drop_overlong: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub groups: Vec<UtteranceGroup>,
    /// Group ids of emitted groups exceeding the span limit (empty when
    /// `drop_overlong` is set).
    pub overlong: Vec<String>,
    /// Number of groups dropped for exceeding the span limit.
    pub dropped: usize,
}

/// True iff a cut is legal between sorted utterances `..j` and `j..`: no
/// earlier utterance is still active when utterance `j` starts.
pub fn boundary_is_legal(utts: &[Utterance], j: usize) -> bool {
    if j == 0 || j >= utts.len() {
        return false;
    }
    let cut = utts[j].interval.start_s;
    utts[..j].iter().all(|u| u.interval.end_s <= cut)
}

/// Split one session's utterances into utterance groups.
///
/// `utts` must belong to a single session and be sorted by start time.
pub fn segment_session(
    utts: &[Utterance],
    cfg: &SegmentationConfig,
) -> Result<Segmentation, SegmentError> {
    if utts.is_empty() {
        return Err(SegmentError::EmptyInput);
    }
    let session = &utts[0].session_id;

    let mut cuts = vec![0];
    for j in 1..utts.len() {
        if boundary_is_legal(utts, j) {
            cuts.push(j);
        }
    }
    cuts.push(utts.len());

    let mut groups = Vec::new();
    let mut overlong = Vec::new();
    let mut dropped = 0;
    for (idx, w) in cuts.windows(2).enumerate() {
        let members = utts[w[0]..w[1]].to_vec();
        let group = UtteranceGroup {
            group_id: format!("{session}-{idx:04}"),
            utterances: members,
            origin: GroupOrigin::Segmented,
        };
        if group.span_s() > cfg.max_group_s {
            if cfg.drop_overlong {
                dropped += 1;
                continue;
            }
            overlong.push(group.group_id.clone());
        }
        groups.push(group);
    }
    Ok(Segmentation {
        groups,
        overlong,
        dropped,
    })
}

/// Fraction of speech time with two or more simultaneously active speakers:
/// (time with >= 2 active) / (time with >= 1 active). Computed by an event
/// sweep over interval endpoints.
pub fn overlap_ratio(g: &UtteranceGroup) -> f64 {
    overlap_ratio_of(&g.utterances)
}

pub fn overlap_ratio_of(utts: &[Utterance]) -> f64 {
    // same-speaker utterances never overlap, so active utterances == active speakers
    let mut events: Vec<(f64, i32)> = Vec::with_capacity(utts.len() * 2);
    for u in utts {
        events.push((u.interval.start_s, 1));
        events.push((u.interval.end_s, -1));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

    let mut active = 0i32;
    let mut any_speech = 0.0;
    let mut overlapped = 0.0;
    let mut prev = events.first().map(|e| e.0).unwrap_or(0.0);
    for (t, delta) in events {
        let dt = t - prev;
        if dt > 0.0 {
            if active >= 1 {
                any_speech += dt;
            }
            if active >= 2 {
                overlapped += dt;
            }
        }
        active += delta;
        prev = t;
    }
    if any_speech <= 0.0 {
        0.0
    } else {
        overlapped / any_speech
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{TimeInterval, Word};

    fn utt(speaker: &str, start: f64, end: f64) -> Utterance {
        Utterance {
            session_id: "S".into(),
            speaker_id: speaker.into(),
            interval: TimeInterval::new(start, end).unwrap(),
            words: vec![Word::plain("w")],
        }
    }

    #[test]
    fn silence_gap_splits() {
        let utts = vec![utt("A", 0.0, 1.0), utt("B", 2.0, 3.0)];
        let seg = segment_session(&utts, &SegmentationConfig::default()).unwrap();
        assert_eq!(seg.groups.len(), 2);
    }

    #[test]
    fn touching_boundary_splits() {
        // end == next start is a non-overlapping utterance boundary
        let utts = vec![utt("A", 0.0, 1.0), utt("B", 1.0, 2.0)];
        let seg = segment_session(&utts, &SegmentationConfig::default()).unwrap();
        assert_eq!(seg.groups.len(), 2);
    }

    #[test]
    fn full_overlap_forces_one_group() {
        let utts = vec![utt("A", 0.0, 2.0), utt("B", 0.0, 2.0)];
        let seg = segment_session(&utts, &SegmentationConfig::default()).unwrap();
        assert_eq!(seg.groups.len(), 1);
        assert_eq!(seg.groups[0].utterances.len(), 2);
    }

    #[test]
    fn chained_overlap_has_no_internal_boundary() {
        // A-B overlap and B-C overlap, so no legal cut exists inside
        let utts = vec![utt("A", 0.0, 10.0), utt("B", 5.0, 15.0), utt("C", 12.0, 20.0)];
        for j in 1..utts.len() {
            assert!(!boundary_is_legal(&utts, j), "cut before {j} should be illegal");
        }
        let cfg = SegmentationConfig {
            max_group_s: 30.0,
            drop_overlong: true,
        };
        let seg = segment_session(&utts, &cfg).unwrap();
        assert_eq!(seg.groups.len(), 1);
    }

    #[test]
    fn boundary_after_chain_end_is_legal() {
        // C starts exactly when B ends: legal cut before C
        let utts = vec![utt("A", 0.0, 10.0), utt("B", 5.0, 15.0), utt("C", 15.0, 20.0)];
        assert!(!boundary_is_legal(&utts, 1));
        assert!(boundary_is_legal(&utts, 2));
        let seg = segment_session(&utts, &SegmentationConfig::default()).unwrap();
        assert_eq!(seg.groups.len(), 2);
        assert_eq!(seg.groups[1].utterances[0].speaker_id, "C");
    }

    #[test]
    fn overlong_groups_dropped_or_flagged() {
        let utts = vec![utt("A", 0.0, 31.0), utt("B", 10.0, 20.0)];
        let seg = segment_session(&utts, &SegmentationConfig::default()).unwrap();
        assert_eq!(seg.groups.len(), 0);
        assert_eq!(seg.dropped, 1);

        let keep = SegmentationConfig {
            max_group_s: 30.0,
            drop_overlong: false,
        };
        let seg = segment_session(&utts, &keep).unwrap();
        assert_eq!(seg.groups.len(), 1);
        assert_eq!(seg.overlong, vec![seg.groups[0].group_id.clone()]);
    }

    #[test]
    fn overlap_ratio_single_is_zero() {
        let g = UtteranceGroup {
            group_id: "g".into(),
            utterances: vec![utt("A", 0.0, 5.0)],
            origin: GroupOrigin::Segmented,
        };
        assert_eq!(overlap_ratio(&g), 0.0);
    }

    #[test]
    fn overlap_ratio_identical_is_one() {
        let g = UtteranceGroup {
            group_id: "g".into(),
            utterances: vec![utt("A", 0.0, 2.0), utt("B", 0.0, 2.0)],
            origin: GroupOrigin::Segmented,
        };
        assert!((overlap_ratio(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_ratio_partial() {
        // A[0,2], B[1,3]: 1 s overlapped of 3 s speech
        let g = UtteranceGroup {
            group_id: "g".into(),
            utterances: vec![utt("A", 0.0, 2.0), utt("B", 1.0, 3.0)],
            origin: GroupOrigin::Segmented,
        };
        assert!((overlap_ratio(&g) - 1.0 / 3.0).abs() < 1e-12);
    }
}
