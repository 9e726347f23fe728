//! Token vocabulary: text tokens, special tokens, and discretized timestamp
//! tokens, with quantization helpers.
//!
//! Id layout is contiguous per class: `[0, text_len)` text tokens, then the
//! specials, then `timestamp_count` timestamp tokens. The maximum
//! representable time is `(timestamp_count - 1) * resolution_s`, which is
//! 30.00 s for the default 1501 tokens at 20 ms.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum VocabError {
    #[error("word {0:?} is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("time {t:.3} s outside [0, {max:.2}] s")]
    OutOfRange { t: f64, max: f64 },
    #[error("unknown language {0:?}")]
    UnknownLanguage(String),
    #[error("invalid vocabulary: {0}")]
    Invalid(String),
    #[error("token id {0} out of range")]
    BadToken(TokenId),
}

/// Names for the fixed special tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Special {
    Start,
    Transcribe,
    Timestamps,
    NoTimestamps,
    SpeakerChange,
    EndOfSequence,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct SpecialIds {
    start: TokenId,
    transcribe: TokenId,
    timestamps: TokenId,
    notimestamps: TokenId,
    sc: TokenId,
    eos: TokenId,
    languages: BTreeMap<String, TokenId>,
}

/// The token alphabet shared by the codec and the model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Vocabulary {
    text_tokens: Vec<String>,
    specials: SpecialIds,
    timestamp_base: TokenId,
    timestamp_count: u32,
    resolution_s: f64,
}

/// Which class a token id belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenClass {
    Text,
    Special,
    Timestamp,
}

impl Vocabulary {
    /// Build a vocabulary with the standard layout. `languages` must be
    /// non-empty; `timestamp_count` of 1501 at `resolution_s` 0.02 covers
    /// 0..=30.00 s.
    pub fn build(
        text_tokens: Vec<String>,
        languages: &[&str],
        timestamp_count: u32,
        resolution_s: f64,
    ) -> Result<Self, VocabError> {
        if languages.is_empty() {
            return Err(VocabError::Invalid("no language tokens".into()));
        }
        if timestamp_count == 0 || resolution_s <= 0.0 {
            return Err(VocabError::Invalid("bad timestamp grid".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &text_tokens {
            if !seen.insert(t) {
                return Err(VocabError::Invalid(format!("duplicate text token {t:?}")));
            }
        }
        let mut next = text_tokens.len() as TokenId;
        let mut take = || {
            let id = next;
            next += 1;
            id
        };
        let specials = SpecialIds {
            start: take(),
            transcribe: take(),
            timestamps: take(),
            notimestamps: take(),
            sc: take(),
            eos: take(),
            languages: languages
                .iter()
                .map(|l| (l.to_string(), take()))
                .collect(),
        };
        let vocab = Vocabulary {
            text_tokens,
            specials,
            timestamp_base: next,
            timestamp_count,
            resolution_s,
        };
        vocab.check()?;
        Ok(vocab)
    }

    /// Default 20-ms grid covering 0..=30.00 s (1501 timestamp tokens).
    pub fn with_default_timestamps(
        text_tokens: Vec<String>,
        languages: &[&str],
    ) -> Result<Self, VocabError> {
        Self::build(text_tokens, languages, 1501, 0.02)
    }

    /// Verify the id classes partition `[0, |V|)`.
    pub fn check(&self) -> Result<(), VocabError> {
        let text_len = self.text_tokens.len() as TokenId;
        let mut special_ids: Vec<TokenId> = vec![
            self.specials.start,
            self.specials.transcribe,
            self.specials.timestamps,
            self.specials.notimestamps,
            self.specials.sc,
            self.specials.eos,
        ];
        special_ids.extend(self.specials.languages.values().copied());
        special_ids.sort_unstable();
        let mut expected = text_len;
        for id in &special_ids {
            if *id != expected {
                return Err(VocabError::Invalid(format!(
                    "special ids not contiguous: expected {expected}, found {id}"
                )));
            }
            expected += 1;
        }
        if self.timestamp_base != expected {
            return Err(VocabError::Invalid(format!(
                "timestamp_base {} != {}",
                self.timestamp_base, expected
            )));
        }
        if self.timestamp_count == 0 || self.resolution_s <= 0.0 {
            return Err(VocabError::Invalid("bad timestamp grid".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        (self.timestamp_base + self.timestamp_count) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn resolution_s(&self) -> f64 {
        self.resolution_s
    }

    /// Largest representable time: `(timestamp_count - 1) * resolution_s`.
    pub fn max_time_s(&self) -> f64 {
        (self.timestamp_count - 1) as f64 * self.resolution_s
    }

    pub fn special(&self, which: Special) -> TokenId {
        match which {
            Special::Start => self.specials.start,
            Special::Transcribe => self.specials.transcribe,
            Special::Timestamps => self.specials.timestamps,
            Special::NoTimestamps => self.specials.notimestamps,
            Special::SpeakerChange => self.specials.sc,
            Special::EndOfSequence => self.specials.eos,
        }
    }

    pub fn language(&self, name: &str) -> Result<TokenId, VocabError> {
        self.specials
            .languages
            .get(name)
            .copied()
            .ok_or_else(|| VocabError::UnknownLanguage(name.to_string()))
    }

    pub fn class_of(&self, id: TokenId) -> Result<TokenClass, VocabError> {
        if (id as usize) < self.text_tokens.len() {
            Ok(TokenClass::Text)
        } else if id < self.timestamp_base {
            Ok(TokenClass::Special)
        } else if id < self.timestamp_base + self.timestamp_count {
            Ok(TokenClass::Timestamp)
        } else {
            Err(VocabError::BadToken(id))
        }
    }

    pub fn text_id(&self, word: &str) -> Result<TokenId, VocabError> {
        self.text_tokens
            .iter()
            .position(|t| t == word)
            .map(|i| i as TokenId)
            .ok_or_else(|| VocabError::OutOfVocabulary(word.to_string()))
    }

    pub fn text_of(&self, id: TokenId) -> Option<&str> {
        self.text_tokens.get(id as usize).map(String::as_str)
    }

    /// Quantize a time to its timestamp token. Rounds to the nearest frame,
    /// ties away from zero.
    pub fn quantize_time(&self, t: f64) -> Result<TokenId, VocabError> {
        let max = self.max_time_s();
        if !t.is_finite() || t < 0.0 || t > max {
            return Err(VocabError::OutOfRange { t, max });
        }
        let frame = (t / self.resolution_s).round() as u32;
        Ok(self.timestamp_base + frame.min(self.timestamp_count - 1))
    }

    /// The frame index (not token id) a time quantizes to.
    pub fn frame_of(&self, t: f64) -> Result<u32, VocabError> {
        Ok(self.quantize_time(t)? - self.timestamp_base)
    }

    /// Inverse of [`Vocabulary::quantize_time`].
    pub fn dequantize(&self, id: TokenId) -> Result<f64, VocabError> {
        match self.class_of(id)? {
            TokenClass::Timestamp => {
                Ok((id - self.timestamp_base) as f64 * self.resolution_s)
            }
            _ => Err(VocabError::BadToken(id)),
        }
    }

    /// Human-readable rendering of a single token, timestamps as `<|1.24|>`.
    pub fn render_token(&self, id: TokenId) -> String {
        match self.class_of(id) {
            Ok(TokenClass::Text) => self.text_tokens[id as usize].clone(),
            Ok(TokenClass::Timestamp) => {
                format!("<|{:.2}|>", self.dequantize(id).unwrap())
            }
            Ok(TokenClass::Special) => {
                if id == self.specials.start {
                    "<|start|>".into()
                } else if id == self.specials.transcribe {
                    "<|transcribe|>".into()
                } else if id == self.specials.timestamps {
                    "<|timestamps|>".into()
                } else if id == self.specials.notimestamps {
                    "<|notimestamps|>".into()
                } else if id == self.specials.sc {
                    "<|sc|>".into()
                } else if id == self.specials.eos {
                    "<|eos|>".into()
                } else {
                    let lang = self
                        .specials
                        .languages
                        .iter()
                        .find(|(_, v)| **v == id)
                        .map(|(k, _)| k.as_str())
                        .unwrap_or("?");
                    format!("<|{lang}|>")
                }
            }
            Err(_) => format!("<?{id}?>"),
        }
    }

    pub fn render(&self, seq: &TokenSequence) -> String {
        seq.ids
            .iter()
            .map(|id| self.render_token(*id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), std::io::Error> {
        fs::write(path, serde_json::to_string_pretty(self).expect("serialize"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let data = fs::read_to_string(path)
            .map_err(|e| VocabError::Invalid(format!("read: {e}")))?;
        let vocab: Vocabulary =
            serde_json::from_str(&data).map_err(|e| VocabError::Invalid(e.to_string()))?;
        vocab.check()?;
        Ok(vocab)
    }
}

/// The fixed task-prefix tokens: `[<|start|>, <|lang|>, <|transcribe|>,
/// <|timestamps|> or <|notimestamps|>]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub language: String,
    pub timestamps: bool,
}

impl PromptSpec {
    pub fn new(language: impl Into<String>, timestamps: bool) -> Self {
        PromptSpec {
            language: language.into(),
            timestamps,
        }
    }

    pub fn tokens(&self, vocab: &Vocabulary) -> Result<Vec<TokenId>, VocabError> {
        Ok(vec![
            vocab.special(Special::Start),
            vocab.language(&self.language)?,
            vocab.special(Special::Transcribe),
            if self.timestamps {
                vocab.special(Special::Timestamps)
            } else {
                vocab.special(Special::NoTimestamps)
            },
        ])
    }

    pub fn len(&self) -> usize {
        4
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// An ordered sequence of token ids over a bound vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        TokenSequence { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), VocabError> {
        for id in &self.ids {
            vocab.class_of(*id)?;
        }
        Ok(())
    }
}

/// Pluggable word-to-token mapping. The default implementation maps each
/// word to exactly one text token and fails on out-of-vocabulary words.
pub trait TextTokenizer {
    fn encode_word(&self, vocab: &Vocabulary, word: &str) -> Result<Vec<TokenId>, VocabError>;
    fn decode_token(&self, vocab: &Vocabulary, id: TokenId) -> Option<String>;
}

/// Word-level tokenizer: one vocabulary entry per word.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordTokenizer;

impl TextTokenizer for WordTokenizer {
    fn encode_word(&self, vocab: &Vocabulary, word: &str) -> Result<Vec<TokenId>, VocabError> {
        Ok(vec![vocab.text_id(word)?])
    }

    fn decode_token(&self, vocab: &Vocabulary, id: TokenId) -> Option<String> {
        vocab.text_of(id).map(str::to_string)
    }
}
