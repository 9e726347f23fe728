//! JSON-lines manifest formats.
//!
//! Reference manifest: one utterance per line,
//! `{"session": str, "speaker": str, "start_s": num, "end_s": num,
//!   "words": [{"w": str, "start_s"?: num, "end_s"?: num}, ...]}`.
//!
//! A grouped manifest is the same record with a `"group_id"` field (and an
//! optional `"origin"`); it is what the segmenter and simulator emit and what
//! the encoder and scorer consume. Group summaries go to a separate group
//! manifest: `{"group_id", "session", "start_s", "end_s"}`.
//!
//! Hypothesis manifest: one group per line,
//! `{"group_id": str, "speakers": [{"segments": [{"start_s"?, "end_s"?, "text"}]}]}`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    check_same_speaker_disjoint, GroupOrigin, TimeInterval, Utterance, UtteranceGroup,
    ValidationError, Word,
};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}:{line}: malformed record: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: {source}")]
    Validation {
        path: String,
        line: usize,
        source: ValidationError,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: io::Error,
    },
}

impl ManifestError {
    fn io(path: &Path, source: io::Error) -> Self {
        ManifestError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WordRecord {
    w: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    start_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    end_s: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    group_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    origin: Option<GroupOrigin>,
    session: String,
    speaker: String,
    start_s: f64,
    end_s: f64,
    words: Vec<WordRecord>,
}

/// Group summary record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupRecord {
    pub group_id: String,
    pub session: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Decoded per-speaker hypothesis segments for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub group_id: String,
    pub speakers: Vec<HypSpeaker>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypSpeaker {
    pub segments: Vec<HypSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypSegment {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub end_s: Option<f64>,
    pub text: String,
}

fn utterance_from_record(
    rec: UtteranceRecord,
    path: &Path,
    line: usize,
) -> Result<(Option<String>, Option<GroupOrigin>, Utterance), ManifestError> {
    let validation = |source: ValidationError| ManifestError::Validation {
        path: path.display().to_string(),
        line,
        source,
    };
    let interval = TimeInterval::new(rec.start_s, rec.end_s).map_err(validation)?;
    let mut words = Vec::with_capacity(rec.words.len());
    for w in rec.words {
        let interval = match (w.start_s, w.end_s) {
            (Some(s), Some(e)) => Some(TimeInterval::new(s, e).map_err(validation)?),
            (None, None) => None,
            _ => {
                return Err(ManifestError::Format {
                    path: path.display().to_string(),
                    line,
                    msg: format!("word {:?} has only one of start_s/end_s", w.w),
                })
            }
        };
        words.push(Word {
            text: w.w,
            interval,
        });
    }
    let utt = Utterance {
        session_id: rec.session,
        speaker_id: rec.speaker,
        interval,
        words,
    };
    utt.validate().map_err(validation)?;
    Ok((rec.group_id, rec.origin, utt))
}

fn read_records(path: &Path) -> Result<Vec<(usize, UtteranceRecord)>, ManifestError> {
    let file = fs::File::open(path).map_err(|e| ManifestError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ManifestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UtteranceRecord =
            serde_json::from_str(&line).map_err(|e| ManifestError::Format {
                path: path.display().to_string(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        out.push((idx + 1, rec));
    }
    Ok(out)
}

/// Load a reference manifest. Input order is preserved; per-session
/// same-speaker overlap is rejected.
pub fn load_reference_manifest(path: impl AsRef<Path>) -> Result<Vec<Utterance>, ManifestError> {
    let path = path.as_ref();
    let mut utts = Vec::new();
    for (line, rec) in read_records(path)? {
        let (_, _, utt) = utterance_from_record(rec, path, line)?;
        utts.push(utt);
    }
    // same-speaker overlap is checked per session
    let mut by_session: BTreeMap<&str, Vec<Utterance>> = BTreeMap::new();
    for u in &utts {
        by_session
            .entry(u.session_id.as_str())
            .or_default()
            .push(u.clone());
    }
    for (_, sess) in by_session {
        check_same_speaker_disjoint(&sess).map_err(|source| ManifestError::Validation {
            path: path.display().to_string(),
            line: 0,
            source,
        })?;
    }
    Ok(utts)
}

/// Load a grouped manifest: every record must carry `group_id`; records are
/// grouped in first-seen order. Records without `group_id` are grouped by
/// session instead, so a plain reference manifest works as one group per
/// session.
pub fn load_grouped_manifest(path: impl AsRef<Path>) -> Result<Vec<UtteranceGroup>, ManifestError> {
    let path = path.as_ref();
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, (Option<GroupOrigin>, Vec<Utterance>)> = BTreeMap::new();
    for (line, rec) in read_records(path)? {
        let (group_id, origin, utt) = utterance_from_record(rec, path, line)?;
        let key = group_id.unwrap_or_else(|| utt.session_id.clone());
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            (origin, Vec::new())
        });
        entry.1.push(utt);
    }
    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let (origin, utterances) = groups.remove(&key).unwrap();
        check_same_speaker_disjoint(&utterances).map_err(|source| ManifestError::Validation {
            path: path.display().to_string(),
            line: 0,
            source,
        })?;
        out.push(UtteranceGroup {
            group_id: key,
            utterances,
            origin: origin.unwrap_or(GroupOrigin::Segmented),
        });
    }
    Ok(out)
}

fn record_for(utt: &Utterance, group: Option<(&str, GroupOrigin)>) -> UtteranceRecord {
    UtteranceRecord {
        group_id: group.map(|(id, _)| id.to_string()),
        origin: group.map(|(_, o)| o),
        session: utt.session_id.clone(),
        speaker: utt.speaker_id.clone(),
        start_s: utt.interval.start_s,
        end_s: utt.interval.end_s,
        words: utt
            .words
            .iter()
            .map(|w| WordRecord {
                w: w.text.clone(),
                start_s: w.interval.map(|iv| iv.start_s),
                end_s: w.interval.map(|iv| iv.end_s),
            })
            .collect(),
    }
}

/// Render a reference manifest to a canonical string (one compact JSON record
/// per line, struct field order).
pub fn reference_manifest_to_string(utts: &[Utterance]) -> String {
    let mut out = String::new();
    for u in utts {
        let rec = record_for(u, None);
        writeln!(out, "{}", serde_json::to_string(&rec).expect("serialize")).unwrap();
    }
    out
}

pub fn write_reference_manifest(
    path: impl AsRef<Path>,
    utts: &[Utterance],
) -> Result<(), ManifestError> {
    let path = path.as_ref();
    fs::write(path, reference_manifest_to_string(utts)).map_err(|e| ManifestError::io(path, e))
}

pub fn grouped_manifest_to_string(groups: &[UtteranceGroup]) -> String {
    let mut out = String::new();
    for g in groups {
        for u in &g.utterances {
            let rec = record_for(u, Some((&g.group_id, g.origin)));
            writeln!(out, "{}", serde_json::to_string(&rec).expect("serialize")).unwrap();
        }
    }
    out
}

pub fn write_grouped_manifest(
    path: impl AsRef<Path>,
    groups: &[UtteranceGroup],
) -> Result<(), ManifestError> {
    let path = path.as_ref();
    fs::write(path, grouped_manifest_to_string(groups)).map_err(|e| ManifestError::io(path, e))
}

pub fn group_records(groups: &[UtteranceGroup]) -> Vec<GroupRecord> {
    groups
        .iter()
        .map(|g| {
            let span = g.span();
            GroupRecord {
                group_id: g.group_id.clone(),
                session: g
                    .utterances
                    .first()
                    .map(|u| u.session_id.clone())
                    .unwrap_or_default(),
                start_s: span.start_s,
                end_s: span.end_s,
            }
        })
        .collect()
}

pub fn write_group_manifest(
    path: impl AsRef<Path>,
    groups: &[UtteranceGroup],
) -> Result<(), ManifestError> {
    let path = path.as_ref();
    let mut out = String::new();
    for rec in group_records(groups) {
        writeln!(out, "{}", serde_json::to_string(&rec).expect("serialize")).unwrap();
    }
    fs::write(path, out).map_err(|e| ManifestError::io(path, e))
}

pub fn load_hypothesis_manifest(
    path: impl AsRef<Path>,
) -> Result<Vec<HypothesisRecord>, ManifestError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| ManifestError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ManifestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: HypothesisRecord =
            serde_json::from_str(&line).map_err(|e| ManifestError::Format {
                path: path.display().to_string(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_hypothesis_manifest(
    path: impl AsRef<Path>,
    hyps: &[HypothesisRecord],
) -> Result<(), ManifestError> {
    let path = path.as_ref();
    let mut out = String::new();
    for rec in hyps {
        writeln!(out, "{}", serde_json::to_string(rec).expect("serialize")).unwrap();
    }
    fs::write(path, out).map_err(|e| ManifestError::io(path, e))
}

/// RTTM export (`SPEAKER <file> 1 <tbeg> <tdur> <NA> <NA> <name> <NA> <NA>`),
/// for cross-checking against external diarization scorers. Times are
/// group-local (re-based to each group's start), matching decoded
/// hypothesis segments.
pub fn rttm_for_references(groups: &[UtteranceGroup]) -> String {
    let mut out = String::new();
    for g in groups {
        let t0 = g.span().start_s;
        for u in &g.utterances {
            writeln!(
                out,
                "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
                g.group_id,
                u.interval.start_s - t0,
                u.interval.duration_s(),
                u.speaker_id
            )
            .unwrap();
        }
    }
    out
}

pub fn rttm_for_hypotheses(hyps: &[HypothesisRecord]) -> String {
    let mut out = String::new();
    for h in hyps {
        for (idx, spk) in h.speakers.iter().enumerate() {
            for seg in &spk.segments {
                if let (Some(s), Some(e)) = (seg.start_s, seg.end_s) {
                    writeln!(
                        out,
                        "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> spk{} <NA> <NA>",
                        h.group_id,
                        s,
                        e - s,
                        idx
                    )
                    .unwrap();
                }
            }
        }
    }
    out
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<(), ManifestError> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| ManifestError::io(path, e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| ManifestError::io(path, e))
}
