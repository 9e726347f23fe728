//! Serialized-output label codec.
//!
//! Encodes an utterance group into a single token sequence and back. Speakers
//! are serialized first-in-first-out by the start time of their first
//! utterance. In plain mode the payload is `words.. <|sc|> words.. <|eos|>`;
//! in timestamped mode every speaker-homogeneous segment is wrapped in a
//! begin/end timestamp token pair, so timestamps do not increase monotonically
//! across speakers and may overlap.
//!
//! A speaker-homogeneous segment is a maximal run of one speaker's material
//! whose internal silences do not exceed the configured gap (2 s by default);
//! a strictly larger gap starts a new segment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{TimeInterval, Utterance, UtteranceGroup, Word};
use crate::vocab::{
    PromptSpec, Special, TextTokenizer, TokenClass, TokenId, TokenSequence, VocabError, Vocabulary,
};

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("prompt timestamp mode does not match codec mode")]
    PromptModeMismatch,
    #[error("no utterances to encode")]
    EmptyInput,
    #[error("word-level timestamps requested but word {0:?} has no timing")]
    MissingWordTiming(String),
    #[error("malformed sequence at token {position}: {what}")]
    Malformed { position: usize, what: String },
}

/// Plain (A) or timestamped (B) label layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodecMode {
    Plain,
    Timestamped,
}

/// Where segment timestamps come from in timestamped mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimestampSource {
    /// Segment boundaries from utterance intervals (default).
    #[default]
    UtteranceLevel,
    /// Segment boundaries from word intervals; every word must be timed.
    WordLevel,
}

/// Codec behaviour knobs. The defaults match the documented label layout;
/// `sc_between_speakers_timestamped` exists so the speaker-change token can
/// be dropped from timestamped labels without touching call sites.
#[derive(Debug, Clone, Copy)]
pub struct CodecConfig {
    pub segment_gap_s: f64,
    pub sc_between_speakers_timestamped: bool,
    pub timestamp_source: TimestampSource,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            segment_gap_s: 2.0,
            sc_between_speakers_timestamped: true,
            timestamp_source: TimestampSource::UtteranceLevel,
        }
    }
}

/// One speaker's homogeneous segment: interval plus the words inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerSegment {
    pub speaker_id: String,
    pub interval: TimeInterval,
    pub words: Vec<Word>,
}

/// Decoded per-speaker output. `speaker_index` is the FIFO position.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerHypothesis {
    pub speaker_index: usize,
    pub segments: Vec<HypothesisSegment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSegment {
    /// Absent in plain mode.
    pub interval: Option<TimeInterval>,
    pub text: String,
}

impl SpeakerHypothesis {
    /// All segment texts joined in order.
    pub fn text(&self) -> String {
        self.segments
            .iter()
            .map(|s| s.text.as_str())
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Speakers in serialization order: ascending (first utterance start,
/// speaker id).
pub fn fifo_order(g: &UtteranceGroup) -> Vec<String> {
    g.speaker_ids().into_iter().map(str::to_string).collect()
}

#[derive(Debug, Clone)]
struct Piece {
    interval: TimeInterval,
    words: Vec<Word>,
}

fn merge_pieces(
    speaker_id: &str,
    pieces: Vec<Piece>,
    gap_s: f64,
) -> Result<Vec<SpeakerSegment>, CodecError> {
    if pieces.is_empty() {
        return Err(CodecError::EmptyInput);
    }
    let mut segments: Vec<SpeakerSegment> = Vec::new();
    for piece in pieces {
        match segments.last_mut() {
            // strictly greater than the gap splits; exactly the gap merges
            Some(seg) if piece.interval.start_s - seg.interval.end_s <= gap_s => {
                seg.interval.end_s = seg.interval.end_s.max(piece.interval.end_s);
                seg.words.extend(piece.words);
            }
            _ => segments.push(SpeakerSegment {
                speaker_id: speaker_id.to_string(),
                interval: piece.interval,
                words: piece.words,
            }),
        }
    }
    Ok(segments)
}

/// Merge one speaker's utterances into homogeneous segments. `utts` must all
/// share a speaker and be sorted by start time.
pub fn homogeneous_segments(
    utts: &[&Utterance],
    gap_s: f64,
) -> Result<Vec<SpeakerSegment>, CodecError> {
    if utts.is_empty() {
        return Err(CodecError::EmptyInput);
    }
    let speaker = utts[0].speaker_id.clone();
    let pieces = utts
        .iter()
        .map(|u| Piece {
            interval: u.interval,
            words: u.words.clone(),
        })
        .collect();
    merge_pieces(&speaker, pieces, gap_s)
}

/// Word-timing variant: each word is its own piece, so segment boundaries
/// land on word times. Fails if any word is untimed.
pub fn homogeneous_segments_word_level(
    utts: &[&Utterance],
    gap_s: f64,
) -> Result<Vec<SpeakerSegment>, CodecError> {
    if utts.is_empty() {
        return Err(CodecError::EmptyInput);
    }
    let speaker = utts[0].speaker_id.clone();
    let mut pieces = Vec::new();
    for u in utts {
        for w in &u.words {
            let interval = w
                .interval
                .ok_or_else(|| CodecError::MissingWordTiming(w.text.clone()))?;
            pieces.push(Piece {
                interval,
                words: vec![w.clone()],
            });
        }
    }
    merge_pieces(&speaker, pieces, gap_s)
}

/// Encode a group with the default codec configuration.
pub fn encode_sot(
    g: &UtteranceGroup,
    mode: CodecMode,
    prompt: &PromptSpec,
    vocab: &Vocabulary,
    tokenizer: &dyn TextTokenizer,
) -> Result<TokenSequence, CodecError> {
    encode_sot_with(g, mode, prompt, vocab, tokenizer, &CodecConfig::default())
}

pub fn encode_sot_with(
    g: &UtteranceGroup,
    mode: CodecMode,
    prompt: &PromptSpec,
    vocab: &Vocabulary,
    tokenizer: &dyn TextTokenizer,
    cfg: &CodecConfig,
) -> Result<TokenSequence, CodecError> {
    if prompt.timestamps != (mode == CodecMode::Timestamped) {
        return Err(CodecError::PromptModeMismatch);
    }
    if g.utterances.is_empty() {
        return Err(CodecError::EmptyInput);
    }

    let mut ids = prompt.tokens(vocab)?;
    // re-base so the earliest utterance starts at time zero
    let t0 = g.span().start_s;

    let speakers = fifo_order(g);
    let sc = vocab.special(Special::SpeakerChange);
    let with_sc = match mode {
        CodecMode::Plain => true,
        CodecMode::Timestamped => cfg.sc_between_speakers_timestamped,
    };

    for (si, speaker) in speakers.iter().enumerate() {
        if si > 0 && with_sc {
            ids.push(sc);
        }
        let utts: Vec<Utterance> = g
            .utterances_of(speaker)
            .into_iter()
            .map(|u| u.shifted(-t0))
            .collect();
        let utt_refs: Vec<&Utterance> = utts.iter().collect();
        match mode {
            CodecMode::Plain => {
                for u in &utt_refs {
                    for w in &u.words {
                        ids.extend(tokenizer.encode_word(vocab, &w.text)?);
                    }
                }
            }
            CodecMode::Timestamped => {
                let segments = match cfg.timestamp_source {
                    TimestampSource::UtteranceLevel => {
                        homogeneous_segments(&utt_refs, cfg.segment_gap_s)?
                    }
                    TimestampSource::WordLevel => {
                        homogeneous_segments_word_level(&utt_refs, cfg.segment_gap_s)?
                    }
                };
                for seg in segments {
                    ids.push(vocab.quantize_time(seg.interval.start_s)?);
                    for w in &seg.words {
                        ids.extend(tokenizer.encode_word(vocab, &w.text)?);
                    }
                    ids.push(vocab.quantize_time(seg.interval.end_s)?);
                }
            }
        }
    }
    ids.push(vocab.special(Special::EndOfSequence));
    Ok(TokenSequence::new(ids))
}

/// A lenient-decode repair, reported per occurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Repair {
    /// Begin timestamp never closed; end set to the fallback time.
    OrphanBeginTimestamp { position: usize, end_s: f64 },
    /// Text before any timestamp; segment start set to 0.
    ImplicitSegmentStart { position: usize },
    /// Timestamp pair with no words dropped.
    EmptySegmentDropped { position: usize },
    /// Speaker block with no content dropped.
    EmptyBlockDropped { block: usize },
    /// Timestamp token in plain mode dropped.
    TimestampInPlainMode { position: usize },
    /// Token id outside the vocabulary dropped.
    UnknownTokenDropped { position: usize, id: TokenId },
    /// No end-of-sequence token found.
    MissingEos,
    /// Tokens after end-of-sequence ignored.
    TrailingAfterEos { position: usize },
    /// Prompt tokens were malformed; leading specials skipped.
    MalformedPrompt,
}

#[derive(Debug, Clone, Default)]
pub struct DecodeOptions {
    pub strict: bool,
    /// Fallback segment end for orphan begin timestamps; when unset, the
    /// largest timestamp in the sequence is used.
    pub group_span_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedGroup {
    pub speakers: Vec<SpeakerHypothesis>,
    pub repairs: Vec<Repair>,
}

impl DecodedGroup {
    pub fn speaker_count(&self) -> usize {
        self.speakers.len()
    }
}

/// Decode a token sequence back into per-speaker hypotheses.
///
/// In strict mode any deviation from the encoder's output grammar is an
/// error. In lenient mode decoding is total: every deviation is repaired and
/// recorded in [`DecodedGroup::repairs`].
pub fn decode_sot(
    seq: &TokenSequence,
    mode: CodecMode,
    vocab: &Vocabulary,
    strict: bool,
) -> Result<DecodedGroup, CodecError> {
    decode_sot_with(
        seq,
        mode,
        vocab,
        &DecodeOptions {
            strict,
            ..DecodeOptions::default()
        },
    )
}

struct Payload {
    /// (position in original sequence, token id)
    tokens: Vec<(usize, TokenId)>,
    repairs: Vec<Repair>,
}

/// Strip the prompt (when present) and everything from `<|eos|>` on.
fn extract_payload(
    seq: &TokenSequence,
    mode: CodecMode,
    vocab: &Vocabulary,
    strict: bool,
) -> Result<Payload, CodecError> {
    let mut repairs = Vec::new();
    let start_id = vocab.special(Special::Start);
    let eos = vocab.special(Special::EndOfSequence);
    let mut idx = 0;

    if seq.ids.first() == Some(&start_id) {
        let expected_mode = vocab.special(if mode == CodecMode::Timestamped {
            Special::Timestamps
        } else {
            Special::NoTimestamps
        });
        let valid = seq.ids.len() >= 4
            && matches!(vocab.class_of(seq.ids[1]), Ok(TokenClass::Special))
            && vocab.render_token(seq.ids[1]).starts_with("<|")
            && seq.ids[2] == vocab.special(Special::Transcribe)
            && seq.ids[3] == expected_mode;
        if valid {
            idx = 4;
        } else if strict {
            return Err(CodecError::Malformed {
                position: 0,
                what: "invalid prompt".into(),
            });
        } else {
            // skip any run of prompt-class specials
            repairs.push(Repair::MalformedPrompt);
            let prompt_like = |id: TokenId| {
                id == start_id
                    || id == vocab.special(Special::Transcribe)
                    || id == vocab.special(Special::Timestamps)
                    || id == vocab.special(Special::NoTimestamps)
                    || (matches!(vocab.class_of(id), Ok(TokenClass::Special))
                        && id != vocab.special(Special::SpeakerChange)
                        && id != eos)
            };
            while idx < seq.ids.len() && prompt_like(seq.ids[idx]) {
                idx += 1;
            }
        }
    }

    let mut tokens = Vec::new();
    let mut saw_eos = false;
    while idx < seq.ids.len() {
        let id = seq.ids[idx];
        if id == eos {
            saw_eos = true;
            if idx + 1 < seq.ids.len() {
                if strict {
                    return Err(CodecError::Malformed {
                        position: idx + 1,
                        what: "tokens after <|eos|>".into(),
                    });
                }
                repairs.push(Repair::TrailingAfterEos { position: idx + 1 });
            }
            break;
        }
        tokens.push((idx, id));
        idx += 1;
    }
    if !saw_eos {
        if strict {
            return Err(CodecError::Malformed {
                position: seq.ids.len(),
                what: "missing <|eos|>".into(),
            });
        }
        repairs.push(Repair::MissingEos);
    }
    Ok(Payload { tokens, repairs })
}

pub fn decode_sot_with(
    seq: &TokenSequence,
    mode: CodecMode,
    vocab: &Vocabulary,
    opts: &DecodeOptions,
) -> Result<DecodedGroup, CodecError> {
    let strict = opts.strict;
    let payload = extract_payload(seq, mode, vocab, strict)?;
    let mut repairs = payload.repairs;

    // fallback end for orphan begin timestamps
    let max_ts = payload
        .tokens
        .iter()
        .filter_map(|(_, id)| vocab.dequantize(*id).ok())
        .fold(0.0_f64, f64::max);
    let fallback_end = opts.group_span_s.unwrap_or(max_ts);

    let sc = vocab.special(Special::SpeakerChange);
    let mut blocks: Vec<Vec<(usize, TokenId)>> = vec![Vec::new()];
    for (pos, id) in payload.tokens {
        if id == sc {
            blocks.push(Vec::new());
        } else {
            blocks.last_mut().unwrap().push((pos, id));
        }
    }

    let mut speakers = Vec::new();
    for (block_idx, block) in blocks.iter().enumerate() {
        let mut segments: Vec<HypothesisSegment> = Vec::new();
        let mut open_start: Option<(usize, Option<f64>)> = None; // (pos, start time)
        let mut words: Vec<String> = Vec::new();

        let close = |start: Option<f64>,
                         end: Option<f64>,
                         words: &mut Vec<String>,
                         segments: &mut Vec<HypothesisSegment>| {
            let interval = match (start, end) {
                (Some(s), Some(e)) => Some(TimeInterval {
                    start_s: s.min(e),
                    end_s: e.max(s),
                }),
                _ => None,
            };
            segments.push(HypothesisSegment {
                interval,
                text: words.join(" "),
            });
            words.clear();
        };

        for &(pos, id) in block {
            match vocab.class_of(id) {
                Ok(TokenClass::Text) => {
                    if mode == CodecMode::Timestamped && open_start.is_none() {
                        if strict {
                            return Err(CodecError::Malformed {
                                position: pos,
                                what: "text before segment timestamp".into(),
                            });
                        }
                        repairs.push(Repair::ImplicitSegmentStart { position: pos });
                        open_start = Some((pos, Some(0.0)));
                    }
                    words.push(vocab.text_of(id).unwrap_or("?").to_string());
                }
                Ok(TokenClass::Timestamp) => {
                    let t = vocab.dequantize(id).unwrap();
                    if mode == CodecMode::Plain {
                        if strict {
                            return Err(CodecError::Malformed {
                                position: pos,
                                what: "timestamp token in plain mode".into(),
                            });
                        }
                        repairs.push(Repair::TimestampInPlainMode { position: pos });
                        continue;
                    }
                    match open_start.take() {
                        None => open_start = Some((pos, Some(t))),
                        Some((open_pos, start)) => {
                            if words.is_empty() {
                                if strict {
                                    return Err(CodecError::Malformed {
                                        position: pos,
                                        what: "empty segment".into(),
                                    });
                                }
                                repairs.push(Repair::EmptySegmentDropped { position: open_pos });
                            } else {
                                close(start, Some(t), &mut words, &mut segments);
                            }
                        }
                    }
                }
                Ok(TokenClass::Special) => {
                    // start/transcribe/mode/lang token in the payload
                    if strict {
                        return Err(CodecError::Malformed {
                            position: pos,
                            what: "special token inside payload".into(),
                        });
                    }
                    repairs.push(Repair::UnknownTokenDropped { position: pos, id });
                }
                Err(_) => {
                    if strict {
                        return Err(CodecError::Malformed {
                            position: pos,
                            what: format!("token id {id} out of vocabulary"),
                        });
                    }
                    repairs.push(Repair::UnknownTokenDropped { position: pos, id });
                }
            }
        }

        if let Some((open_pos, start)) = open_start.take() {
            // open segment at end of block
            if words.is_empty() {
                if strict {
                    return Err(CodecError::Malformed {
                        position: open_pos,
                        what: "empty segment".into(),
                    });
                }
                repairs.push(Repair::EmptySegmentDropped { position: open_pos });
            } else if mode == CodecMode::Timestamped {
                if strict {
                    return Err(CodecError::Malformed {
                        position: open_pos,
                        what: "missing end timestamp".into(),
                    });
                }
                let end = fallback_end.max(start.unwrap_or(0.0));
                repairs.push(Repair::OrphanBeginTimestamp {
                    position: open_pos,
                    end_s: end,
                });
                close(start, Some(end), &mut words, &mut segments);
            }
        }
        if mode == CodecMode::Plain && !words.is_empty() {
            close(None, None, &mut words, &mut segments);
        }

        if segments.is_empty() {
            if strict {
                return Err(CodecError::Malformed {
                    position: 0,
                    what: format!("empty speaker block {block_idx}"),
                });
            }
            if blocks.len() > 1 {
                repairs.push(Repair::EmptyBlockDropped { block: block_idx });
            }
            continue;
        }
        speakers.push(SpeakerHypothesis {
            speaker_index: speakers.len(),
            segments,
        });
    }

    Ok(DecodedGroup { speakers, repairs })
}

/// Manifest form of a decoded group, for hypothesis files and scoring.
pub fn to_hyp_speakers(decoded: &DecodedGroup) -> Vec<crate::manifest::HypSpeaker> {
    decoded
        .speakers
        .iter()
        .map(|spk| crate::manifest::HypSpeaker {
            segments: spk
                .segments
                .iter()
                .map(|seg| crate::manifest::HypSegment {
                    start_s: seg.interval.map(|iv| iv.start_s),
                    end_s: seg.interval.map(|iv| iv.end_s),
                    text: seg.text.clone(),
                })
                .collect(),
        })
        .collect()
}

/// Number of non-empty speaker blocks in a sequence. Lenient by definition:
/// never fails, prompt and malformed material are ignored.
pub fn count_speakers(seq: &TokenSequence, vocab: &Vocabulary) -> usize {
    let payload = match extract_payload(seq, CodecMode::Plain, vocab, false) {
        Ok(p) => p,
        Err(_) => return 0,
    };
    let sc = vocab.special(Special::SpeakerChange);
    let mut count = 0;
    let mut block_has_content = false;
    for (_, id) in &payload.tokens {
        if *id == sc {
            if block_has_content {
                count += 1;
            }
            block_has_content = false;
        } else {
            block_has_content |= matches!(
                vocab.class_of(*id),
                Ok(TokenClass::Text) | Ok(TokenClass::Timestamp)
            );
        }
    }
    if block_has_content {
        count += 1;
    }
    count
}
