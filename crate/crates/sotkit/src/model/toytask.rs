//! Synthetic overlapped-symbol task. "Audio" is a frame sequence where each
//! frame is the sum of one-hot vectors of the currently active speakers'
//! symbols, so overlap is literal in the features and the task is learnable
//! at desk scale.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::FeatureMatrix;
use super::store::Scalar;
use super::train::Example;
use crate::codec::{encode_sot, CodecMode};
use crate::simulate::group_rng;
use crate::types::{GroupOrigin, TimeInterval, Utterance, UtteranceGroup, Word};
use crate::vocab::{PromptSpec, Vocabulary, WordTokenizer};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyTaskConfig {
    pub n_groups: usize,
    pub seed: u64,
    /// Number of distinct symbols (also the feature dimension).
    pub alphabet: usize,
    pub words_min: usize,
    pub words_max: usize,
    /// Duration of each spoken symbol.
    pub word_s: f64,
    /// Feature frame length.
    pub feat_frame_s: f64,
    /// Timestamp grid of the toy vocabulary.
    pub resolution_s: f64,
    pub timestamp_count: u32,
}

impl Default for ToyTaskConfig {
    fn default() -> Self {
        // vocabulary size: 16 text + 7 specials + 41 timestamps = 64
        ToyTaskConfig {
            n_groups: 32,
            seed: 0,
            alphabet: 16,
            words_min: 3,
            words_max: 5,
            word_s: 0.4,
            feat_frame_s: 0.1,
            resolution_s: 0.2,
            timestamp_count: 41,
        }
    }
}

impl ToyTaskConfig {
    pub fn vocabulary(&self) -> Vocabulary {
        let text: Vec<String> = (0..self.alphabet).map(|i| format!("s{i:02}")).collect();
        Vocabulary::build(text, &["en"], self.timestamp_count, self.resolution_s)
            .expect("toy vocabulary is well-formed")
    }
}

/// One toy group with its training example.
#[derive(Debug, Clone)]
pub struct ToyExample<F> {
    pub group: UtteranceGroup,
    pub example: Example<F>,
}

#[derive(Debug, Clone)]
pub struct ToyDataset<F> {
    pub vocab: Vocabulary,
    pub prompt: PromptSpec,
    pub items: Vec<ToyExample<F>>,
}

fn snap(t: f64, grid: f64) -> f64 {
    (t / grid).round() * grid
}

/// Generate a deterministic two-speaker overlapped dataset.
pub fn toy_dataset<F: Scalar>(cfg: &ToyTaskConfig) -> ToyDataset<F> {
    let vocab = cfg.vocabulary();
    let prompt = PromptSpec::new("en", true);
    let prompt_len = prompt.len();

    let mut items = Vec::with_capacity(cfg.n_groups);
    for gi in 0..cfg.n_groups {
        let mut rng = group_rng(cfg.seed ^ 0x70_79, gi);
        let group_id = format!("toy-{gi:04}");

        let mut utterances = Vec::new();
        let n_a = rng.gen_range(cfg.words_min..=cfg.words_max);
        let n_b = rng.gen_range(cfg.words_min..=cfg.words_max);
        let end_a = n_a as f64 * cfg.word_s;
        // second speaker starts on the timestamp grid, inside the first
        // speaker's utterance, so every group overlaps
        let max_offset_steps = ((end_a - cfg.word_s) / cfg.resolution_s).floor().max(1.0) as u64;
        let offset = snap(
            rng.gen_range(1..=max_offset_steps) as f64 * cfg.resolution_s,
            cfg.resolution_s,
        );
        for (speaker, n_words, start) in [("spk0", n_a, 0.0), ("spk1", n_b, offset)] {
            let words: Vec<Word> = (0..n_words)
                .map(|w| {
                    let sym = rng.gen_range(0..cfg.alphabet);
                    let s = start + w as f64 * cfg.word_s;
                    Word {
                        text: format!("s{sym:02}"),
                        interval: Some(TimeInterval {
                            start_s: snap(s, cfg.resolution_s),
                            end_s: snap(s + cfg.word_s, cfg.resolution_s),
                        }),
                    }
                })
                .collect();
            utterances.push(Utterance {
                session_id: group_id.clone(),
                speaker_id: speaker.into(),
                interval: TimeInterval {
                    start_s: snap(start, cfg.resolution_s),
                    end_s: snap(start + n_words as f64 * cfg.word_s, cfg.resolution_s),
                },
                words,
            });
        }
        let group = UtteranceGroup {
            group_id,
            utterances,
            origin: GroupOrigin::Simulated,
        };

        let seq = encode_sot(&group, CodecMode::Timestamped, &prompt, &vocab, &WordTokenizer)
            .expect("toy groups always encode");
        let prompt_ids = seq.ids[..prompt_len].to_vec();
        let payload_ids = seq.ids[prompt_len..].to_vec();
        let features = featurize(&group, cfg);

        items.push(ToyExample {
            group,
            example: Example {
                features,
                prompt_ids,
                payload_ids,
            },
        });
    }
    ToyDataset {
        vocab,
        prompt,
        items,
    }
}

/// Multi-hot symbol frames: `alphabet x frames`.
pub fn featurize<F: Scalar>(group: &UtteranceGroup, cfg: &ToyTaskConfig) -> FeatureMatrix<F> {
    let span = group.span();
    let frames = (span.end_s / cfg.feat_frame_s).ceil().max(1.0) as usize;
    let mut values = Array2::zeros((cfg.alphabet, frames));
    let eps = cfg.feat_frame_s * 1e-9;
    for u in &group.utterances {
        for w in &u.words {
            let iv = w.interval.expect("toy words are timed");
            let sym: usize = w.text[1..].parse().expect("toy symbol name");
            let first = (iv.start_s / cfg.feat_frame_s).floor().max(0.0) as usize;
            for k in first..frames {
                let frame = TimeInterval {
                    start_s: k as f64 * cfg.feat_frame_s,
                    end_s: (k + 1) as f64 * cfg.feat_frame_s,
                };
                if frame.start_s >= iv.end_s {
                    break;
                }
                if iv.overlap_s(&frame) > eps {
                    values[[sym, k]] += F::one();
                }
            }
        }
    }
    FeatureMatrix::new(values).expect("toy features are finite")
}

/// Mean teacher-forced accuracy over a whole dataset.
pub fn dataset_accuracy<F: Scalar>(
    model: &super::net::ToyModel<F>,
    items: &[ToyExample<F>],
) -> f64 {
    let total: f64 = items
        .iter()
        .map(|it| {
            super::net::teacher_forced_accuracy(
                model,
                &it.example.features,
                &it.example.prompt_ids,
                &it.example.payload_ids,
            )
            .expect("toy examples evaluate")
        })
        .sum();
    total / items.len().max(1) as f64
}
