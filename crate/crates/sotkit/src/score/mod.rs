//! Multi-talker evaluation: permutation-invariant word/character error
//! rates, local DER, and speaker-counting accuracy.
//!
//! WER assignment happens at speaker level over concatenated per-speaker
//! token streams; the LDER speaker mapping is optimized independently, so
//! text errors and timing errors never couple. Corpus rates pool error
//! counts over groups and divide by the total reference token count.

pub mod assign;
pub mod edit;
pub mod lder;
pub mod normalize;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assign::{best_assignment, best_assignment_with, Assignment, AssignmentMode, EXHAUSTIVE_CAP};
pub use edit::{edit_distance, EditCounts};
pub use lder::{lder, lder_from_intervals, LderParts};
pub use normalize::Normalizer;

use crate::manifest::{HypSpeaker, HypothesisRecord};
use crate::types::{TimeInterval, UtteranceGroup};

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("{n} speakers exceed the exhaustive cap of {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("total reference length is zero")]
    EmptyReference,
    #[error("group has no reference speech")]
    NoReferenceSpeech,
    #[error("hypothesis group {0:?} has no matching reference")]
    UnknownGroup(String),
}

/// Recognition unit for error counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreUnit {
    #[default]
    Word,
    Char,
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreOptions {
    pub unit: ScoreUnit,
    pub normalizer: Normalizer,
    pub assignment: AssignmentMode,
    /// LDER frame, matching the timestamp grid by default.
    pub frame_s: f64,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            unit: ScoreUnit::Word,
            normalizer: Normalizer::Basic,
            assignment: AssignmentMode::Exhaustive,
            frame_s: 0.02,
        }
    }
}

/// Everything measured on one group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupScore {
    pub group_id: String,
    pub edit: EditCounts,
    pub assignment: Assignment,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lder: Option<LderParts>,
    pub ref_speakers: usize,
    pub hyp_speakers: usize,
}

fn ref_streams(g: &UtteranceGroup, opts: &ScoreOptions) -> Vec<Vec<String>> {
    g.speaker_ids()
        .iter()
        .map(|speaker| {
            let text = g
                .utterances_of(speaker)
                .iter()
                .flat_map(|u| u.words.iter().map(|w| w.text.clone()))
                .collect::<Vec<_>>()
                .join(" ");
            tokens_of(&text, opts)
        })
        .collect()
}

fn tokens_of(text: &str, opts: &ScoreOptions) -> Vec<String> {
    match opts.unit {
        ScoreUnit::Word => opts.normalizer.words(text),
        ScoreUnit::Char => opts.normalizer.chars(text),
    }
}

fn hyp_stream(speaker: &HypSpeaker, opts: &ScoreOptions) -> Vec<String> {
    let text = speaker
        .segments
        .iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    tokens_of(&text, opts)
}

/// Score one group: PI error counts, LDER when every hypothesis segment is
/// timed, and the speaker counts for the confusion matrix.
pub fn score_group(
    ref_group: &UtteranceGroup,
    hyp_speakers: &[HypSpeaker],
    opts: &ScoreOptions,
) -> Result<GroupScore, ScoreError> {
    let refs = ref_streams(ref_group, opts);
    let hyps: Vec<Vec<String>> = hyp_speakers.iter().map(|h| hyp_stream(h, opts)).collect();
    let (assignment, edit) = best_assignment_with(&refs, &hyps, opts.assignment)?;

    let timed = !hyp_speakers.is_empty()
        && hyp_speakers
            .iter()
            .all(|h| h.segments.iter().all(|s| s.start_s.is_some() && s.end_s.is_some()));
    let lder_parts = if timed {
        let hyp_intervals: Vec<Vec<TimeInterval>> = hyp_speakers
            .iter()
            .map(|h| {
                h.segments
                    .iter()
                    .map(|s| TimeInterval {
                        start_s: s.start_s.unwrap(),
                        end_s: s.end_s.unwrap(),
                    })
                    .collect()
            })
            .collect();
        Some(lder(ref_group, &hyp_intervals, opts.frame_s)?)
    } else {
        None
    };

    Ok(GroupScore {
        group_id: ref_group.group_id.clone(),
        edit,
        assignment,
        lder: lder_parts,
        ref_speakers: ref_group.speaker_count(),
        hyp_speakers: hyp_speakers.len(),
    })
}

/// Pooled error rate with a per-actual-talker-count breakdown.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ErrorRateReport {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub errors: usize,
    pub ref_len: usize,
    pub rate: f64,
}

impl From<EditCounts> for ErrorRateReport {
    fn from(e: EditCounts) -> Self {
        ErrorRateReport {
            substitutions: e.substitutions,
            insertions: e.insertions,
            deletions: e.deletions,
            errors: e.errors(),
            ref_len: e.ref_len,
            rate: e.rate(),
        }
    }
}

/// Corpus error rate: total errors over total reference tokens, plus the
/// breakdown keyed by each group's actual speaker count.
pub fn corpus_error_rate(
    scores: &[GroupScore],
) -> Result<(ErrorRateReport, BTreeMap<usize, ErrorRateReport>), ScoreError> {
    let mut total = EditCounts::default();
    let mut by_count: BTreeMap<usize, EditCounts> = BTreeMap::new();
    for s in scores {
        total += s.edit;
        *by_count.entry(s.ref_speakers).or_default() += s.edit;
    }
    if total.ref_len == 0 {
        return Err(ScoreError::EmptyReference);
    }
    Ok((
        total.into(),
        by_count.into_iter().map(|(k, v)| (k, v.into())).collect(),
    ))
}

/// Row-normalized speaker-count confusion. Rows are actual counts 1..=4,
/// columns estimated 1, 2, 3, 4, >=5.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerCountMatrix {
    pub counts: [[usize; 5]; 4],
}

impl SpeakerCountMatrix {
    pub fn add(&mut self, actual: usize, estimated: usize) {
        if (1..=4).contains(&actual) {
            // estimates of 0 land in the first column so rows keep summing to 100%
            let col = estimated.clamp(1, 5) - 1;
            self.counts[actual - 1][col] += 1;
        }
    }

    /// Percentages for one actual-count row; zeros when the row is empty.
    pub fn row_percent(&self, actual: usize) -> [f64; 5] {
        let row = self.counts[actual - 1];
        let total: usize = row.iter().sum();
        let mut out = [0.0; 5];
        if total > 0 {
            for (i, c) in row.iter().enumerate() {
                out[i] = 100.0 * *c as f64 / total as f64;
            }
        }
        out
    }

    /// Diagonal accuracy for one actual-count row, as a percentage.
    pub fn row_accuracy(&self, actual: usize) -> f64 {
        self.row_percent(actual)[actual - 1]
    }
}

/// Build the confusion matrix from (actual, estimated) speaker counts.
pub fn speaker_count_confusion(pairs: &[(usize, usize)]) -> SpeakerCountMatrix {
    let mut m = SpeakerCountMatrix::default();
    for &(actual, estimated) in pairs {
        m.add(actual, estimated);
    }
    m
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LderReport {
    pub miss_s: f64,
    pub false_alarm_s: f64,
    pub confusion_s: f64,
    pub ref_speech_s: f64,
    pub rate: f64,
}

impl From<LderParts> for LderReport {
    fn from(p: LderParts) -> Self {
        LderReport {
            miss_s: p.miss_s,
            false_alarm_s: p.false_alarm_s,
            confusion_s: p.confusion_s,
            ref_speech_s: p.ref_speech_s,
            rate: p.rate(),
        }
    }
}

/// Full corpus scoring report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusReport {
    pub unit: ScoreUnit,
    pub normalizer: String,
    pub groups_scored: usize,
    pub overall: ErrorRateReport,
    pub by_talker_count: BTreeMap<usize, ErrorRateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lder: Option<LderReport>,
    pub lder_by_talker_count: BTreeMap<usize, LderReport>,
    /// Fraction of groups whose estimated speaker count matches the actual.
    pub speaker_count_accuracy: f64,
    pub speaker_count_matrix: SpeakerCountMatrix,
    pub groups: Vec<GroupScore>,
}

/// Pair each reference group with its hypothesis speakers. References
/// without a hypothesis pair with an empty slice; hypotheses without a
/// reference are an error.
pub fn pair_hypotheses<'a>(
    ref_groups: &'a [UtteranceGroup],
    hyps: &'a [HypothesisRecord],
) -> Result<Vec<(&'a UtteranceGroup, &'a [HypSpeaker])>, ScoreError> {
    let mut by_id: BTreeMap<&str, &HypothesisRecord> = BTreeMap::new();
    for h in hyps {
        by_id.insert(h.group_id.as_str(), h);
    }
    let known: std::collections::BTreeSet<&str> =
        ref_groups.iter().map(|g| g.group_id.as_str()).collect();
    if let Some(unknown) = by_id.keys().find(|id| !known.contains(**id)) {
        return Err(ScoreError::UnknownGroup(unknown.to_string()));
    }
    Ok(ref_groups
        .iter()
        .map(|g| {
            let speakers = by_id
                .get(g.group_id.as_str())
                .map_or(&[] as &[HypSpeaker], |h| h.speakers.as_slice());
            (g, speakers)
        })
        .collect())
}

/// Deterministic fold of per-group scores into the corpus report.
pub fn aggregate_report(
    scores: Vec<GroupScore>,
    opts: &ScoreOptions,
) -> Result<CorpusReport, ScoreError> {
    let (overall, by_talker_count) = corpus_error_rate(&scores)?;

    let mut lder_total = LderParts::default();
    let mut lder_by_count: BTreeMap<usize, LderParts> = BTreeMap::new();
    let mut any_lder = false;
    for s in &scores {
        if let Some(p) = &s.lder {
            any_lder = true;
            lder_total.pool(p);
            lder_by_count.entry(s.ref_speakers).or_default().pool(p);
        }
    }

    let count_pairs: Vec<(usize, usize)> =
        scores.iter().map(|s| (s.ref_speakers, s.hyp_speakers)).collect();
    let matrix = speaker_count_confusion(&count_pairs);
    let correct = count_pairs.iter().filter(|(a, e)| a == e).count();
    let accuracy = if scores.is_empty() {
        0.0
    } else {
        correct as f64 / scores.len() as f64
    };

    Ok(CorpusReport {
        unit: opts.unit,
        normalizer: opts.normalizer.name().to_string(),
        groups_scored: scores.len(),
        overall,
        by_talker_count,
        lder: any_lder.then(|| lder_total.into()),
        lder_by_talker_count: lder_by_count.into_iter().map(|(k, v)| (k, v.into())).collect(),
        speaker_count_accuracy: accuracy,
        speaker_count_matrix: matrix,
        groups: scores,
    })
}

/// Score every reference group against its hypothesis record and aggregate.
pub fn score_corpus(
    ref_groups: &[UtteranceGroup],
    hyps: &[HypothesisRecord],
    opts: &ScoreOptions,
) -> Result<CorpusReport, ScoreError> {
    let pairs = pair_hypotheses(ref_groups, hyps)?;
    let mut scores = Vec::with_capacity(pairs.len());
    for (g, speakers) in pairs {
        scores.push(score_group(g, speakers, opts)?);
    }
    aggregate_report(scores, opts)
}

fn rate_cell(rate: Option<f64>) -> String {
    match rate {
        Some(r) => format!("{:6.1}", r * 100.0),
        None => format!("{:>6}", "-"),
    }
}

/// Render the report as fixed-layout text tables: error rate and LDER with
/// an `avg. 1 2 3 4` talker-count breakdown, then the estimated-talker
/// confusion matrix with one-decimal percentages.
pub fn render_tables(report: &CorpusReport) -> String {
    let mut out = String::new();
    let label = match report.unit {
        ScoreUnit::Word => "WER",
        ScoreUnit::Char => "CER",
    };

    writeln!(out, "{label} (%) by actual # of talkers").unwrap();
    writeln!(out, "  {:>6} {:>6} {:>6} {:>6} {:>6}", "avg.", "1", "2", "3", "4").unwrap();
    let mut cells = vec![rate_cell(Some(report.overall.rate))];
    for k in 1..=4 {
        cells.push(rate_cell(report.by_talker_count.get(&k).map(|e| e.rate)));
    }
    writeln!(out, "  {}", cells.join(" ")).unwrap();
    writeln!(out).unwrap();

    if report.lder.is_some() {
        writeln!(out, "LDER (%) by actual # of talkers").unwrap();
        writeln!(out, "  {:>6} {:>6} {:>6} {:>6} {:>6}", "avg.", "1", "2", "3", "4").unwrap();
        let mut cells = vec![rate_cell(report.lder.as_ref().map(|l| l.rate))];
        for k in 1..=4 {
            cells.push(rate_cell(report.lder_by_talker_count.get(&k).map(|l| l.rate)));
        }
        writeln!(out, "  {}", cells.join(" ")).unwrap();
        writeln!(out).unwrap();
    }

    writeln!(out, "Speaker counting: estimated # of talkers (%)").unwrap();
    writeln!(
        out,
        "{:>7} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "actual", "1", "2", "3", "4", ">=5"
    )
    .unwrap();
    for actual in 1..=4 {
        let row = report.speaker_count_matrix.row_percent(actual);
        writeln!(
            out,
            "{:>7} {:6.1} {:6.1} {:6.1} {:6.1} {:6.1}",
            actual, row[0], row[1], row[2], row[3], row[4]
        )
        .unwrap();
    }
    out
}
