//! Property tests for the label codec: exact round-trips over randomized
//! valid groups, plain/timestamped payload equivalence, speaker counting,
//! FIFO ordering against a brute-force oracle, and lenient-decode totality.

use proptest::prelude::*;

use sotkit::codec::{
    count_speakers, decode_sot, encode_sot, fifo_order, homogeneous_segments, CodecMode,
};
use sotkit::types::{GroupOrigin, TimeInterval, Utterance, UtteranceGroup, Word};
use sotkit::vocab::{PromptSpec, Special, TokenClass, TokenSequence, Vocabulary, WordTokenizer};

const WORDS: [&str; 12] = [
    "alpha", "bravo", "carol", "delta", "echo", "fox", "golf", "hotel", "india", "jazz", "kilo",
    "lima",
];

const RES: f64 = 0.02;

fn vocab() -> Vocabulary {
    Vocabulary::with_default_timestamps(WORDS.iter().map(|w| w.to_string()).collect(), &["en"])
        .unwrap()
}

#[derive(Debug, Clone)]
struct UttSpec {
    gap_frames: u32,
    dur_frames: u32,
    words: Vec<usize>,
}

fn arb_utt() -> impl Strategy<Value = UttSpec> {
    (0u32..140, 5u32..60, prop::collection::vec(0usize..WORDS.len(), 1..5)).prop_map(
        |(gap_frames, dur_frames, words)| UttSpec {
            gap_frames,
            dur_frames,
            words,
        },
    )
}

fn arb_group() -> impl Strategy<Value = UtteranceGroup> {
    let speaker = (0u32..80, prop::collection::vec(arb_utt(), 1..7));
    prop::collection::vec(speaker, 1..5).prop_map(|specs| {
        let mut utterances = Vec::new();
        for (si, (first_start, utts)) in specs.into_iter().enumerate() {
            let speaker_id = format!("spk{si}");
            let mut cursor = first_start;
            for spec in utts {
                let start = cursor;
                let end = start + spec.dur_frames;
                utterances.push(Utterance {
                    session_id: "S".into(),
                    speaker_id: speaker_id.clone(),
                    interval: TimeInterval {
                        start_s: start as f64 * RES,
                        end_s: end as f64 * RES,
                    },
                    words: spec.words.iter().map(|w| Word::plain(WORDS[*w])).collect(),
                });
                cursor = end + spec.gap_frames;
            }
        }
        UtteranceGroup {
            group_id: "g".into(),
            utterances,
            origin: GroupOrigin::Segmented,
        }
    })
}

/// Independent reimplementation of per-speaker segment construction: merge
/// sorted utterances while the silence gap is at most 2 s, then quantize the
/// boundaries to the frame grid.
fn oracle_segments(g: &UtteranceGroup, speaker: &str, t0: f64) -> Vec<(f64, f64, Vec<String>)> {
    let mut utts: Vec<&Utterance> = g
        .utterances
        .iter()
        .filter(|u| u.speaker_id == speaker)
        .collect();
    utts.sort_by(|a, b| a.interval.start_s.total_cmp(&b.interval.start_s));
    let mut out: Vec<(f64, f64, Vec<String>)> = Vec::new();
    for u in utts {
        let s = u.interval.start_s - t0;
        let e = u.interval.end_s - t0;
        let words: Vec<String> = u.words.iter().map(|w| w.text.clone()).collect();
        match out.last_mut() {
            Some(seg) if s - seg.1 <= 2.0 => {
                seg.1 = seg.1.max(e);
                seg.2.extend(words);
            }
            _ => out.push((s, e, words)),
        }
    }
    out.iter()
        .map(|(s, e, w)| {
            (
                (s / RES).round() * RES,
                (e / RES).round() * RES,
                w.clone(),
            )
        })
        .collect()
}

/// Brute-force FIFO oracle: insertion sort on (first start, speaker id).
fn oracle_fifo(g: &UtteranceGroup) -> Vec<String> {
    let mut firsts: Vec<(String, f64)> = Vec::new();
    for u in &g.utterances {
        match firsts.iter_mut().find(|(s, _)| *s == u.speaker_id) {
            Some(pair) => pair.1 = pair.1.min(u.interval.start_s),
            None => firsts.push((u.speaker_id.clone(), u.interval.start_s)),
        }
    }
    let mut sorted: Vec<(String, f64)> = Vec::new();
    for item in firsts {
        let pos = sorted
            .iter()
            .position(|other| {
                item.1 < other.1 || (item.1 == other.1 && item.0 < other.0)
            })
            .unwrap_or(sorted.len());
        sorted.insert(pos, item);
    }
    sorted.into_iter().map(|(s, _)| s).collect()
}

proptest! {
    #[test]
    fn timestamped_round_trip_is_exact(g in arb_group()) {
        let v = vocab();
        let prompt = PromptSpec::new("en", true);
        let seq = encode_sot(&g, CodecMode::Timestamped, &prompt, &v, &WordTokenizer).unwrap();
        let decoded = decode_sot(&seq, CodecMode::Timestamped, &v, true).unwrap();

        let fifo = fifo_order(&g);
        prop_assert_eq!(decoded.speakers.len(), fifo.len());
        prop_assert!(decoded.repairs.is_empty());

        let t0 = g.span().start_s;
        for (i, speaker) in fifo.iter().enumerate() {
            let expect = oracle_segments(&g, speaker, t0);
            let got = &decoded.speakers[i];
            prop_assert_eq!(got.speaker_index, i);
            prop_assert_eq!(got.segments.len(), expect.len());
            for (seg, (es, ee, ew)) in got.segments.iter().zip(expect.iter()) {
                let iv = seg.interval.unwrap();
                prop_assert!((iv.start_s - es).abs() < 1e-9, "start {} vs {}", iv.start_s, es);
                prop_assert!((iv.end_s - ee).abs() < 1e-9, "end {} vs {}", iv.end_s, ee);
                prop_assert_eq!(&seg.text, &ew.join(" "));
            }
        }
    }

    #[test]
    fn plain_round_trip_keeps_word_streams(g in arb_group()) {
        let v = vocab();
        let prompt = PromptSpec::new("en", false);
        let seq = encode_sot(&g, CodecMode::Plain, &prompt, &v, &WordTokenizer).unwrap();
        let decoded = decode_sot(&seq, CodecMode::Plain, &v, true).unwrap();
        let fifo = fifo_order(&g);
        prop_assert_eq!(decoded.speakers.len(), fifo.len());
        for (i, speaker) in fifo.iter().enumerate() {
            let mut expect: Vec<String> = Vec::new();
            let mut utts: Vec<&Utterance> =
                g.utterances.iter().filter(|u| &u.speaker_id == speaker).collect();
            utts.sort_by(|a, b| a.interval.start_s.total_cmp(&b.interval.start_s));
            for u in utts {
                expect.extend(u.words.iter().map(|w| w.text.clone()));
            }
            prop_assert_eq!(decoded.speakers[i].text(), expect.join(" "));
        }
    }

    #[test]
    fn stripping_timestamps_yields_plain_payload(g in arb_group()) {
        let v = vocab();
        let ts = encode_sot(&g, CodecMode::Timestamped, &PromptSpec::new("en", true), &v, &WordTokenizer).unwrap();
        let plain = encode_sot(&g, CodecMode::Plain, &PromptSpec::new("en", false), &v, &WordTokenizer).unwrap();
        let stripped: Vec<u32> = ts.ids[4..]
            .iter()
            .copied()
            .filter(|id| !matches!(v.class_of(*id), Ok(TokenClass::Timestamp)))
            .collect();
        prop_assert_eq!(&stripped[..], &plain.ids[4..]);
    }

    #[test]
    fn speaker_count_matches_distinct_speakers(g in arb_group()) {
        let v = vocab();
        let seq = encode_sot(&g, CodecMode::Timestamped, &PromptSpec::new("en", true), &v, &WordTokenizer).unwrap();
        prop_assert_eq!(count_speakers(&seq, &v), g.speaker_count());
        let plain = encode_sot(&g, CodecMode::Plain, &PromptSpec::new("en", false), &v, &WordTokenizer).unwrap();
        prop_assert_eq!(count_speakers(&plain, &v), g.speaker_count());
    }

    #[test]
    fn fifo_matches_bruteforce_oracle(g in arb_group()) {
        prop_assert_eq!(fifo_order(&g), oracle_fifo(&g));
    }

    #[test]
    fn first_segment_times_non_decreasing_in_fifo_order(g in arb_group()) {
        let v = vocab();
        let seq = encode_sot(&g, CodecMode::Timestamped, &PromptSpec::new("en", true), &v, &WordTokenizer).unwrap();
        let decoded = decode_sot(&seq, CodecMode::Timestamped, &v, true).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for spk in &decoded.speakers {
            let first = spk.segments[0].interval.unwrap().start_s;
            prop_assert!(first >= prev, "first-segment start went backwards");
            prev = first;
        }
    }

    /// Lenient decode accepts any token sequence over (and beyond) the
    /// vocabulary without failing.
    #[test]
    fn lenient_decode_is_total(ids in prop::collection::vec(0u32..1600, 0..80)) {
        let v = vocab();
        let seq = TokenSequence::new(ids);
        for mode in [CodecMode::Plain, CodecMode::Timestamped] {
            let decoded = decode_sot(&seq, mode, &v, false).unwrap();
            for spk in &decoded.speakers {
                prop_assert!(!spk.segments.is_empty());
            }
        }
        let _ = count_speakers(&seq, &v);
    }
}

/// The 2-second boundary rule: a gap of exactly 2.0 s merges, strictly more
/// splits. The oracle enumerates both candidate rules and pins the
/// documented one.
#[test]
fn segment_gap_rule_pinned_against_rule_enumeration() {
    let mk = |s: f64, e: f64| Utterance {
        session_id: "S".into(),
        speaker_id: "A".into(),
        interval: TimeInterval { start_s: s, end_s: e },
        words: vec![Word::plain("w")],
    };
    let cases = [
        (1.5_f64, 1usize), // gap below threshold: one segment under both rules
        (2.0, 1),          // exactly at threshold: rules disagree; ours merges
        (2.5, 2),          // above threshold: two segments under both rules
    ];
    for (gap, want) in cases {
        let a = mk(0.0, 1.0);
        let b = mk(1.0 + gap, 1.5 + gap);
        let strictly_greater_splits = if gap > 2.0 { 2 } else { 1 };
        let greater_or_equal_splits = if gap >= 2.0 { 2 } else { 1 };
        let got = homogeneous_segments(&[&a, &b], 2.0).unwrap().len();
        assert_eq!(got, want);
        assert_eq!(got, strictly_greater_splits, "documented rule");
        if gap == 2.0 {
            assert_ne!(got, greater_or_equal_splits, "rules must be distinguishable here");
        }
    }
}
