//! Pluggable text normalization. The exact normalizers used by external
//! toolkits are out of scope; this interface lets one be swapped in.

use serde::{Deserialize, Serialize};

/// A named, idempotent text transform applied before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalizer {
    /// Lowercase, strip punctuation, collapse whitespace.
    #[default]
    Basic,
    /// Pass text through unchanged.
    None,
}

impl Normalizer {
    pub fn from_name(name: &str) -> Option<Normalizer> {
        match name {
            "basic" => Some(Normalizer::Basic),
            "none" => Some(Normalizer::None),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Normalizer::Basic => "basic",
            Normalizer::None => "none",
        }
    }

    pub fn apply(&self, text: &str) -> String {
        match self {
            Normalizer::None => text.to_string(),
            Normalizer::Basic => {
                let mut out = String::with_capacity(text.len());
                let mut pending_space = false;
                for c in text.chars() {
                    if c.is_alphanumeric() || c == '\'' {
                        if pending_space && !out.is_empty() {
                            out.push(' ');
                        }
                        pending_space = false;
                        out.extend(c.to_lowercase());
                    } else {
                        pending_space = true;
                    }
                }
                out
            }
        }
    }

    /// Normalized word tokens.
    pub fn words(&self, text: &str) -> Vec<String> {
        self.apply(text)
            .split_whitespace()
            .map(str::to_string)
            .collect()
    }

    /// Normalized character tokens: Unicode scalar values excluding spaces.
    pub fn chars(&self, text: &str) -> Vec<String> {
        self.apply(text)
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_lowercases_and_strips() {
        let n = Normalizer::Basic;
        assert_eq!(n.apply("Hello, World!"), "hello world");
        assert_eq!(n.apply("it's  OK."), "it's ok");
    }

    #[test]
    fn idempotent() {
        let n = Normalizer::Basic;
        for s in ["Hello, World!", "a  b\tc", "", "DON'T stop", "abc123"] {
            assert_eq!(n.apply(&n.apply(s)), n.apply(s), "input {s:?}");
        }
    }

    #[test]
    fn char_unit_excludes_spaces() {
        let n = Normalizer::Basic;
        assert_eq!(n.chars("ab c"), vec!["a", "b", "c"]);
    }
}
