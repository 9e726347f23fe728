//! Local diarization error rate: miss, false alarm, and speaker confusion
//! measured within one utterance group from predicted segment times.
//!
//! The group span is discretized into frames (20 ms by default, matching the
//! timestamp grid). The reference/hypothesis speaker bijection minimizing the
//! total error is chosen per group by exhaustive search over padded
//! assignments. Scoring uses no collar and scores overlap regions fully; the
//! denominator is reference speaker time, so overlapped frames count once per
//! active speaker. Corpus aggregation pools numerators and denominators.

use serde::{Deserialize, Serialize};

use super::ScoreError;
use crate::types::{TimeInterval, UtteranceGroup};

/// LDER numerators and denominator for one group, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LderParts {
    pub miss_s: f64,
    pub false_alarm_s: f64,
    pub confusion_s: f64,
    pub ref_speech_s: f64,
}

impl LderParts {
    pub fn error_s(&self) -> f64 {
        self.miss_s + self.false_alarm_s + self.confusion_s
    }

    pub fn rate(&self) -> f64 {
        if self.ref_speech_s <= 0.0 {
            0.0
        } else {
            self.error_s() / self.ref_speech_s
        }
    }

    pub fn pool(&mut self, other: &LderParts) {
        self.miss_s += other.miss_s;
        self.false_alarm_s += other.false_alarm_s;
        self.confusion_s += other.confusion_s;
        self.ref_speech_s += other.ref_speech_s;
    }
}

/// Per-speaker activity as frame bitmaps over a shared grid.
struct Activity {
    frames: Vec<Vec<bool>>, // speaker -> frame -> active
    n_frames: usize,
}

fn activity(intervals_per_speaker: &[Vec<TimeInterval>], frame_s: f64, n_frames: usize) -> Activity {
    let eps = frame_s * 1e-9;
    let frames = intervals_per_speaker
        .iter()
        .map(|intervals| {
            let mut row = vec![false; n_frames];
            for iv in intervals {
                let first = (iv.start_s / frame_s).floor().max(0.0) as usize;
                for (k, slot) in row.iter_mut().enumerate().skip(first) {
                    let frame = TimeInterval {
                        start_s: k as f64 * frame_s,
                        end_s: (k + 1) as f64 * frame_s,
                    };
                    if frame.start_s >= iv.end_s {
                        break;
                    }
                    if iv.overlap_s(&frame) > eps {
                        *slot = true;
                    }
                }
            }
            row
        })
        .collect();
    Activity { frames, n_frames }
}

/// Compute LDER parts for one group against per-speaker hypothesis
/// intervals in group-local time.
pub fn lder(
    ref_group: &UtteranceGroup,
    hyp_intervals: &[Vec<TimeInterval>],
    frame_s: f64,
) -> Result<LderParts, ScoreError> {
    // re-base references to group-local time
    let t0 = ref_group.span().start_s;
    let ref_speakers = ref_group.speaker_ids();
    let ref_intervals: Vec<Vec<TimeInterval>> = ref_speakers
        .iter()
        .map(|s| {
            ref_group
                .utterances_of(s)
                .iter()
                .map(|u| u.interval.shifted(-t0))
                .collect()
        })
        .collect();
    lder_from_intervals(&ref_intervals, hyp_intervals, frame_s)
}

pub fn lder_from_intervals(
    ref_intervals: &[Vec<TimeInterval>],
    hyp_intervals: &[Vec<TimeInterval>],
    frame_s: f64,
) -> Result<LderParts, ScoreError> {
    let t_max = ref_intervals
        .iter()
        .chain(hyp_intervals.iter())
        .flatten()
        .map(|iv| iv.end_s)
        .fold(0.0_f64, f64::max);
    let n_frames = (t_max / frame_s).ceil() as usize;

    let refs = activity(ref_intervals, frame_s, n_frames);
    let hyps = activity(hyp_intervals, frame_s, n_frames);

    let ref_frames: usize = refs.frames.iter().flatten().filter(|b| **b).count();
    if ref_frames == 0 {
        return Err(ScoreError::NoReferenceSpeech);
    }

    // overlap counts feed the mapping choice: minimizing total error is
    // equivalent to maximizing matched frames
    let nr = refs.frames.len();
    let nh = hyps.frames.len();
    let n = nr.max(nh);
    let mut matched_frames = vec![vec![0usize; n]; n];
    for (r, rrow) in refs.frames.iter().enumerate() {
        for (h, hrow) in hyps.frames.iter().enumerate() {
            matched_frames[r][h] = rrow
                .iter()
                .zip(hrow.iter())
                .filter(|(a, b)| **a && **b)
                .count();
        }
    }
    let mapping = best_mapping(&matched_frames, n);

    // hyp speaker -> mapped ref speaker
    let mut hyp_to_ref = vec![usize::MAX; nh.max(1)];
    for (r, &h) in mapping.iter().enumerate() {
        if r < nr && h < nh {
            hyp_to_ref[h] = r;
        }
    }

    let mut miss = 0usize;
    let mut fa = 0usize;
    let mut conf = 0usize;
    for k in 0..refs.n_frames {
        let mut unmatched_ref = 0usize;
        for (r, rrow) in refs.frames.iter().enumerate() {
            if rrow[k] {
                let h = mapping[r];
                let hyp_active = h < nh && hyps.frames[h][k];
                if !hyp_active {
                    unmatched_ref += 1;
                }
            }
        }
        let mut unmatched_hyp = 0usize;
        for (h, hrow) in hyps.frames.iter().enumerate() {
            if hrow[k] {
                let r = hyp_to_ref[h];
                let ref_active = r != usize::MAX && refs.frames[r][k];
                if !ref_active {
                    unmatched_hyp += 1;
                }
            }
        }
        // leftovers pair up as confusion; the excess is miss or false alarm
        let c = unmatched_ref.min(unmatched_hyp);
        conf += c;
        miss += unmatched_ref - c;
        fa += unmatched_hyp - c;
    }

    Ok(LderParts {
        miss_s: miss as f64 * frame_s,
        false_alarm_s: fa as f64 * frame_s,
        confusion_s: conf as f64 * frame_s,
        ref_speech_s: ref_frames as f64 * frame_s,
    })
}

/// Exhaustive max-overlap bijection on the padded square; first permutation
/// found wins ties.
fn best_mapping(matched: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut best: Option<(usize, Vec<usize>)> = None;
    let mut current = Vec::with_capacity(n);
    let mut used = vec![false; n];
    fn go(
        matched: &[Vec<usize>],
        n: usize,
        row: usize,
        acc: usize,
        current: &mut Vec<usize>,
        used: &mut [bool],
        best: &mut Option<(usize, Vec<usize>)>,
    ) {
        if row == n {
            if best.as_ref().map_or(true, |(b, _)| acc > *b) {
                *best = Some((acc, current.clone()));
            }
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                current.push(j);
                go(matched, n, row + 1, acc + matched[row][j], current, used, best);
                current.pop();
                used[j] = false;
            }
        }
    }
    go(matched, n, 0, 0, &mut current, &mut used, &mut best);
    best.map(|(_, p)| p).unwrap_or_default()
}
