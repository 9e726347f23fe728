//! Segmenter checks against brute-force oracles: boundary legality by
//! enumeration, utterance conservation, and overlap ratio against a
//! millisecond sweep.

use proptest::prelude::*;

use sotkit::segment::{overlap_ratio_of, segment_session, SegmentationConfig};
use sotkit::types::{TimeInterval, Utterance, Word};

fn utt(speaker: &str, start: f64, end: f64) -> Utterance {
    Utterance {
        session_id: "S".into(),
        speaker_id: speaker.into(),
        interval: TimeInterval { start_s: start, end_s: end },
        words: vec![Word::plain("w")],
    }
}

/// All legal cut indices by direct enumeration of the predicate: a cut
/// before utterance j is legal iff no earlier utterance is active past the
/// cut time.
fn oracle_cuts(utts: &[Utterance]) -> Vec<usize> {
    (1..utts.len())
        .filter(|&j| {
            let cut = utts[j].interval.start_s;
            utts[..j].iter().all(|u| u.interval.end_s <= cut)
        })
        .collect()
}

/// Overlap ratio by 1 ms discretized sweep.
fn oracle_overlap(utts: &[Utterance]) -> f64 {
    let t_max = utts.iter().map(|u| u.interval.end_s).fold(0.0_f64, f64::max);
    let step = 0.001;
    let n = (t_max / step).ceil() as usize;
    let mut any = 0usize;
    let mut multi = 0usize;
    for k in 0..n {
        let mid = (k as f64 + 0.5) * step;
        let active = utts
            .iter()
            .filter(|u| u.interval.start_s < mid && mid < u.interval.end_s)
            .count();
        if active >= 1 {
            any += 1;
        }
        if active >= 2 {
            multi += 1;
        }
    }
    if any == 0 {
        0.0
    } else {
        multi as f64 / any as f64
    }
}

fn arb_session() -> impl Strategy<Value = Vec<Utterance>> {
    // per speaker: start offset and (gap, duration) runs on a 10 ms grid
    let speaker = (
        0u32..300,
        prop::collection::vec((0u32..400, 20u32..250), 1..5),
    );
    prop::collection::vec(speaker, 1..5).prop_map(|specs| {
        let mut utts = Vec::new();
        for (si, (first, runs)) in specs.into_iter().enumerate() {
            let mut cursor = first;
            for (gap, dur) in runs {
                utts.push(utt(
                    &format!("spk{si}"),
                    cursor as f64 * 0.01,
                    (cursor + dur) as f64 * 0.01,
                ));
                cursor += dur + gap;
            }
        }
        utts.sort_by(|a, b| {
            a.interval
                .start_s
                .total_cmp(&b.interval.start_s)
                .then_with(|| a.speaker_id.cmp(&b.speaker_id))
        });
        utts
    })
}

proptest! {
    #[test]
    fn cuts_match_enumeration_and_cover_everything(utts in arb_session()) {
        let cfg = SegmentationConfig { max_group_s: 1e9, drop_overlong: false };
        let seg = segment_session(&utts, &cfg).unwrap();

        // group boundaries sit exactly at the oracle's legal cuts
        let mut sizes: Vec<usize> = seg.groups.iter().map(|g| g.utterances.len()).collect();
        let mut cut_positions = Vec::new();
        let mut acc = 0;
        sizes.pop();
        for s in sizes {
            acc += s;
            cut_positions.push(acc);
        }
        prop_assert_eq!(cut_positions, oracle_cuts(&utts));

        // no utterance lost or duplicated
        let total: usize = seg.groups.iter().map(|g| g.utterances.len()).sum();
        prop_assert_eq!(total, utts.len());
        let mut flat = Vec::new();
        for g in &seg.groups {
            flat.extend(g.utterances.iter().cloned());
        }
        prop_assert_eq!(flat, utts);
    }

    #[test]
    fn overlap_ratio_matches_millisecond_sweep(utts in arb_session()) {
        let fast = overlap_ratio_of(&utts);
        let slow = oracle_overlap(&utts);
        // agreement within one sweep frame's worth of ratio
        let active: f64 = {
            let t_max = utts.iter().map(|u| u.interval.end_s).fold(0.0_f64, f64::max);
            t_max.max(0.001)
        };
        let tol = 0.002 / active + 1e-9;
        prop_assert!((fast - slow).abs() <= tol.max(0.002), "{fast} vs {slow}");
    }
}

#[test]
fn overlapping_chain_has_no_internal_cut() {
    // A overlaps B, B overlaps C: only the session end bounds a group
    let utts = vec![utt("A", 0.0, 10.0), utt("B", 5.0, 15.0), utt("C", 12.0, 20.0)];
    assert_eq!(oracle_cuts(&utts), Vec::<usize>::new());
    let seg = segment_session(&utts, &SegmentationConfig { max_group_s: 30.0, drop_overlong: true }).unwrap();
    assert_eq!(seg.groups.len(), 1);
}

#[test]
fn touching_boundary_after_chain_is_legal() {
    // with C starting exactly at B's end the cut before C becomes legal
    let utts = vec![utt("A", 0.0, 10.0), utt("B", 5.0, 15.0), utt("C", 15.0, 20.0)];
    assert_eq!(oracle_cuts(&utts), vec![2]);
    let seg = segment_session(&utts, &SegmentationConfig::default()).unwrap();
    assert_eq!(seg.groups.len(), 2);
    assert_eq!(seg.groups[0].utterances.len(), 2);
    assert_eq!(seg.groups[1].utterances[0].speaker_id, "C");
}
