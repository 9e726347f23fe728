//! Scoring checks against independent oracles: recursive edit distance,
//! explicit permutation enumeration for the assignment search, Hungarian vs
//! exhaustive equality, and a millisecond frame sweep for LDER.

use itertools::Itertools;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use sotkit::score::{
    best_assignment, best_assignment_with, corpus_error_rate, edit_distance, lder_from_intervals,
    Assignment, AssignmentMode, EditCounts, GroupScore,
};
use sotkit::types::TimeInterval;

/// Plain recursive Levenshtein for small inputs.
fn oracle_edit(r: &[&str], h: &[&str]) -> usize {
    if r.is_empty() {
        return h.len();
    }
    if h.is_empty() {
        return r.len();
    }
    let sub = oracle_edit(&r[1..], &h[1..]) + usize::from(r[0] != h[0]);
    let del = oracle_edit(&r[1..], h) + 1;
    let ins = oracle_edit(r, &h[1..]) + 1;
    sub.min(del).min(ins)
}

proptest! {
    #[test]
    fn edit_distance_matches_recursion(
        r in prop::collection::vec(0u8..4, 0..7),
        h in prop::collection::vec(0u8..4, 0..7),
    ) {
        let names = ["a", "b", "c", "d"];
        let r: Vec<&str> = r.iter().map(|i| names[*i as usize]).collect();
        let h: Vec<&str> = h.iter().map(|i| names[*i as usize]).collect();
        let got = edit_distance(&r, &h);
        prop_assert_eq!(got.errors(), oracle_edit(&r, &h));
        prop_assert_eq!(got.ref_len, r.len());
        // decomposition consistency: insertions - deletions == len difference
        prop_assert_eq!(
            got.insertions as isize - got.deletions as isize,
            h.len() as isize - r.len() as isize
        );
    }
}

fn random_streams(rng: &mut impl rand::Rng, max_speakers: usize) -> Vec<Vec<String>> {
    let n = rng.gen_range(0..=max_speakers);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(0..=5);
            (0..len).map(|_| format!("w{}", rng.gen_range(0..6))).collect()
        })
        .collect()
}

/// Minimum total error over explicitly enumerated padded permutations.
fn oracle_min_error(refs: &[Vec<String>], hyps: &[Vec<String>]) -> usize {
    let n = refs.len().max(hyps.len());
    let empty: Vec<String> = Vec::new();
    (0..n)
        .permutations(n)
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| {
                    let r = refs.get(i).unwrap_or(&empty);
                    let h = hyps.get(j).unwrap_or(&empty);
                    edit_distance(r, h).errors()
                })
                .sum::<usize>()
        })
        .min()
        .unwrap_or(0)
}

#[test]
fn assignment_matches_permutation_enumeration_and_hungarian() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut nontrivial = 0;
    for _ in 0..300 {
        let refs = random_streams(&mut rng, 4);
        let hyps = random_streams(&mut rng, 4);
        if refs.is_empty() && hyps.is_empty() {
            continue;
        }
        nontrivial += 1;
        let (_, exhaustive) = best_assignment(&refs, &hyps).unwrap();
        assert_eq!(exhaustive.errors(), oracle_min_error(&refs, &hyps));
        let (_, hungarian) =
            best_assignment_with(&refs, &hyps, AssignmentMode::Hungarian).unwrap();
        assert_eq!(hungarian.errors(), exhaustive.errors());
        assert_eq!(hungarian.ref_len, exhaustive.ref_len);

        // scoring a reference against itself is always zero
        let (_, self_score) = best_assignment(&refs, &refs).unwrap();
        assert_eq!(self_score.errors(), 0);
    }
    assert!(nontrivial > 250);
}

proptest! {
    /// Relabeling hypothesis speakers never changes the best error count.
    #[test]
    fn assignment_is_permutation_invariant(seed in 0u64..500) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let refs = random_streams(&mut rng, 4);
        let mut hyps = random_streams(&mut rng, 4);
        if refs.is_empty() && hyps.is_empty() {
            return Ok(());
        }
        let (_, base) = best_assignment(&refs, &hyps).unwrap();
        hyps.reverse();
        let (_, relabeled) = best_assignment(&refs, &hyps).unwrap();
        prop_assert_eq!(base.errors(), relabeled.errors());
    }
}

/// Millisecond-sweep LDER oracle with the mapping chosen by explicit
/// permutation enumeration (first maximizer wins, like the implementation).
fn oracle_lder(
    refs: &[Vec<TimeInterval>],
    hyps: &[Vec<TimeInterval>],
) -> (f64, f64, f64, f64) {
    let step = 0.001;
    let t_max = refs
        .iter()
        .chain(hyps.iter())
        .flatten()
        .map(|iv| iv.end_s)
        .fold(0.0_f64, f64::max);
    let frames = (t_max / step).ceil() as usize;
    let active = |ivs: &[TimeInterval], k: usize| {
        let mid = (k as f64 + 0.5) * step;
        ivs.iter().any(|iv| iv.start_s < mid && mid < iv.end_s)
    };
    let n = refs.len().max(hyps.len());
    let overlap_count = |perm: &[usize]| -> usize {
        (0..frames)
            .map(|k| {
                (0..n)
                    .filter(|&r| {
                        let h = perm[r];
                        r < refs.len()
                            && h < hyps.len()
                            && active(&refs[r], k)
                            && active(&hyps[h], k)
                    })
                    .count()
            })
            .sum()
    };
    let mut best: Option<(usize, Vec<usize>)> = None;
    for perm in (0..n).permutations(n) {
        let score = overlap_count(&perm);
        if best.as_ref().map_or(true, |(b, _)| score > *b) {
            best = Some((score, perm));
        }
    }
    let mapping = best.map(|(_, p)| p).unwrap_or_default();

    let mut miss = 0usize;
    let mut fa = 0usize;
    let mut conf = 0usize;
    let mut ref_frames = 0usize;
    for k in 0..frames {
        let mut unmatched_ref = 0;
        for (r, ivs) in refs.iter().enumerate() {
            if active(ivs, k) {
                ref_frames += 1;
                let h = mapping[r];
                if !(h < hyps.len() && active(&hyps[h], k)) {
                    unmatched_ref += 1;
                }
            }
        }
        let mut unmatched_hyp = 0;
        for (h, ivs) in hyps.iter().enumerate() {
            if active(ivs, k) {
                let mapped = mapping.iter().position(|&m| m == h);
                let matched = mapped
                    .map(|r| r < refs.len() && active(&refs[r], k))
                    .unwrap_or(false);
                if !matched {
                    unmatched_hyp += 1;
                }
            }
        }
        let c = unmatched_ref.min(unmatched_hyp);
        conf += c;
        miss += unmatched_ref - c;
        fa += unmatched_hyp - c;
    }
    (
        miss as f64 * step,
        fa as f64 * step,
        conf as f64 * step,
        ref_frames as f64 * step,
    )
}

#[test]
fn lder_matches_millisecond_sweep_on_random_groups() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4096);
    let grid = |rng: &mut rand_chacha::ChaCha8Rng, lo: u32, hi: u32| {
        rng.gen_range(lo..hi) as f64 * 0.02
    };
    for case in 0..200 {
        let n_ref = rng.gen_range(1..=3);
        let n_hyp = rng.gen_range(1..=3);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<Vec<TimeInterval>> {
            (0..n)
                .map(|_| {
                    let count = rng.gen_range(1..=2);
                    (0..count)
                        .map(|_| {
                            let s = grid(rng, 0, 300);
                            let d = grid(rng, 10, 150);
                            TimeInterval { start_s: s, end_s: s + d }
                        })
                        .collect()
                })
                .collect()
        };
        let refs = mk(&mut rng, n_ref);
        let hyps = mk(&mut rng, n_hyp);
        let got = lder_from_intervals(&refs, &hyps, 0.02).unwrap();
        let (miss, fa, conf, ref_s) = oracle_lder(&refs, &hyps);
        let tol = 0.02 + 1e-9;
        assert!((got.miss_s - miss).abs() <= tol, "case {case}: miss {} vs {miss}", got.miss_s);
        assert!((got.false_alarm_s - fa).abs() <= tol, "case {case}: fa {} vs {fa}", got.false_alarm_s);
        assert!((got.confusion_s - conf).abs() <= tol, "case {case}: conf {} vs {conf}", got.confusion_s);
        assert!((got.ref_speech_s - ref_s).abs() <= tol, "case {case}: ref {} vs {ref_s}", got.ref_speech_s);
        // components are non-negative and bounded by total activity
        assert!(got.error_s() <= got.ref_speech_s + hyps.iter().flatten().map(|iv| iv.duration_s()).sum::<f64>() + tol);
    }
}

/// Pooling group scores equals recomputing from concatenated counts.
#[test]
fn corpus_rate_aggregation_is_associative() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
    let scores: Vec<GroupScore> = (0..40)
        .map(|i| {
            let ref_len = rng.gen_range(1..40);
            GroupScore {
                group_id: format!("g{i}"),
                edit: EditCounts {
                    substitutions: rng.gen_range(0..5),
                    insertions: rng.gen_range(0..5),
                    deletions: rng.gen_range(0..5),
                    ref_len,
                },
                assignment: Assignment::default(),
                lder: None,
                ref_speakers: rng.gen_range(1..5),
                hyp_speakers: rng.gen_range(1..5),
            }
        })
        .collect();
    let (overall, by_count) = corpus_error_rate(&scores).unwrap();
    let total_err: usize = scores.iter().map(|s| s.edit.errors()).sum();
    let total_ref: usize = scores.iter().map(|s| s.edit.ref_len).sum();
    assert_eq!(overall.errors, total_err);
    assert_eq!(overall.ref_len, total_ref);
    assert!((overall.rate - total_err as f64 / total_ref as f64).abs() < 1e-12);

    // splitting the list and pooling the halves gives the same totals
    let (left, _) = corpus_error_rate(&scores[..20]).unwrap();
    let (right, _) = corpus_error_rate(&scores[20..]).unwrap();
    assert_eq!(left.errors + right.errors, overall.errors);
    assert_eq!(left.ref_len + right.ref_len, overall.ref_len);

    // per-count buckets recompute from scratch
    for (k, bucket) in by_count {
        let err: usize = scores.iter().filter(|s| s.ref_speakers == k).map(|s| s.edit.errors()).sum();
        assert_eq!(bucket.errors, err);
    }
}
