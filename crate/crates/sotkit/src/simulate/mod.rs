//! Meeting-style mixture simulation from a single-talker utterance pool.
//!
//! Placement is rejection sampling: pick speakers and utterances, draw start
//! offsets uniformly over the feasible range, and accept only placements
//! whose overlap ratio falls inside the configured window and whose span
//! stays within the group limit. Every group draws from its own RNG
//! substream derived from `(seed, group_index)`, so generation is
//! reproducible group by group and safe to parallelize.

pub mod wav;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segment::overlap_ratio_of;
use crate::types::{GroupOrigin, Utterance, UtteranceGroup};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("pool has {found} eligible speakers, need {need}")]
    PoolTooSmall { need: usize, found: usize },
    #[error("no accepted placement for group {group_index} after {retries} retries")]
    PlacementFailure { group_index: usize, retries: usize },
    #[error("sample rate mismatch: {a} vs {b} Hz")]
    SampleRateMismatch { a: u32, b: u32 },
    #[error("missing audio for utterance {0:?}")]
    MissingAudio(String),
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_groups: usize,
    pub max_speakers: usize,
    pub max_group_s: f64,
    /// Accepted overlap-ratio window `[low, high]`.
    pub overlap_range: (f64, f64),
    pub seed: u64,
    pub max_retries: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_groups: 0,
            max_speakers: 4,
            max_group_s: 30.0,
            overlap_range: (0.60, 0.80),
            seed: 0,
            max_retries: 100,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let (lo, hi) = self.overlap_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(SimError::Config(format!(
                "overlap range [{lo}, {hi}] not within 0 <= low <= high <= 1"
            )));
        }
        if self.max_speakers < 1 {
            return Err(SimError::Config("max_speakers must be >= 1".into()));
        }
        if self.max_group_s <= 0.0 {
            return Err(SimError::Config("max_group_s must be positive".into()));
        }
        Ok(())
    }
}

/// Utterance pool indexed by source speaker.
#[derive(Debug, Clone, Default)]
pub struct Pool {
    by_speaker: BTreeMap<String, Vec<Utterance>>,
}

impl Pool {
    pub fn from_utterances(utts: &[Utterance]) -> Self {
        let mut by_speaker: BTreeMap<String, Vec<Utterance>> = BTreeMap::new();
        for u in utts {
            by_speaker.entry(u.speaker_id.clone()).or_default().push(u.clone());
        }
        Pool { by_speaker }
    }

    pub fn speakers(&self) -> Vec<&str> {
        self.by_speaker.keys().map(String::as_str).collect()
    }

    fn eligible(&self, max_len_s: f64) -> Vec<(&str, Vec<&Utterance>)> {
        self.by_speaker
            .iter()
            .filter_map(|(s, utts)| {
                let fitting: Vec<&Utterance> = utts
                    .iter()
                    .filter(|u| u.interval.duration_s() <= max_len_s)
                    .collect();
                if fitting.is_empty() {
                    None
                } else {
                    Some((s.as_str(), fitting))
                }
            })
            .collect()
    }
}

/// Stable per-group substream: splitmix64 over (seed, index) seeds a ChaCha8
/// generator.
pub fn group_rng(seed: u64, group_index: usize) -> ChaCha8Rng {
    let mut z = seed ^ (group_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

/// Round an offset to the 10-ms grid so emitted manifests carry short,
/// exactly-representable times.
fn quantize_offset(t: f64) -> f64 {
    (t * 100.0).round() / 100.0
}

/// Sample one utterance group. Deterministic given `(cfg.seed, group_index)`.
pub fn sample_group(
    pool: &Pool,
    cfg: &SimConfig,
    group_index: usize,
) -> Result<UtteranceGroup, SimError> {
    cfg.validate()?;
    let eligible = pool.eligible(cfg.max_group_s);
    if eligible.len() < cfg.max_speakers {
        return Err(SimError::PoolTooSmall {
            need: cfg.max_speakers,
            found: eligible.len(),
        });
    }
    // single-speaker groups can never overlap, so they are only drawn when
    // the accepted window includes zero
    let k_min = if cfg.overlap_range.0 == 0.0 { 1 } else { 2.min(cfg.max_speakers) };
    let mut rng = group_rng(cfg.seed, group_index);
    let group_id = format!("sim-{group_index:05}");

    for _ in 0..cfg.max_retries.max(1) {
        let k_max = cfg.max_speakers.min(eligible.len());
        let k = rng.gen_range(k_min..=k_max);
        let mut speaker_idx: Vec<usize> = (0..eligible.len()).collect();
        speaker_idx.shuffle(&mut rng);
        speaker_idx.truncate(k);

        let mut placed: Vec<Utterance> = Vec::with_capacity(k);
        let mut span_end = 0.0_f64;
        let mut feasible = true;
        for (slot, &si) in speaker_idx.iter().enumerate() {
            let (speaker, utts) = &eligible[si];
            let utt = utts[rng.gen_range(0..utts.len())];
            let len = utt.interval.duration_s();
            let offset = if slot == 0 {
                0.0
            } else {
                let max_offset = span_end.min(cfg.max_group_s - len);
                if max_offset < 0.0 {
                    feasible = false;
                    break;
                }
                quantize_offset(rng.gen_range(0.0..=max_offset))
            };
            // re-base to zero first so the placed start is exactly `offset`
            let mut u = utt.shifted(-utt.interval.start_s).shifted(offset);
            u.session_id = group_id.clone();
            u.speaker_id = (*speaker).to_string();
            span_end = span_end.max(u.interval.end_s);
            placed.push(u);
        }
        if !feasible {
            continue;
        }

        let ratio = overlap_ratio_of(&placed);
        let (lo, hi) = cfg.overlap_range;
        let span = span_end
            - placed
                .iter()
                .map(|u| u.interval.start_s)
                .fold(f64::INFINITY, f64::min);
        if ratio >= lo && ratio <= hi && span <= cfg.max_group_s {
            placed.sort_by(|a, b| {
                a.interval
                    .start_s
                    .total_cmp(&b.interval.start_s)
                    .then_with(|| a.speaker_id.cmp(&b.speaker_id))
            });
            return Ok(UtteranceGroup {
                group_id,
                utterances: placed,
                origin: GroupOrigin::Simulated,
            });
        }
    }
    Err(SimError::PlacementFailure {
        group_index,
        retries: cfg.max_retries,
    })
}

/// Outcome of a full simulation run: accepted groups plus skipped indices.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub groups: Vec<UtteranceGroup>,
    pub skipped: Vec<usize>,
}

/// Generate `cfg.n_groups` groups; placement failures are skipped and
/// reported rather than aborting the run.
pub fn simulate(pool: &Pool, cfg: &SimConfig) -> Result<Simulation, SimError> {
    cfg.validate()?;
    let mut groups = Vec::with_capacity(cfg.n_groups);
    let mut skipped = Vec::new();
    for i in 0..cfg.n_groups {
        match sample_group(pool, cfg, i) {
            Ok(g) => groups.push(g),
            Err(SimError::PlacementFailure { .. }) => skipped.push(i),
            Err(e) => return Err(e),
        }
    }
    Ok(Simulation { groups, skipped })
}

/// Mono audio buffer with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

/// Source clips for mixing, keyed by speaker id. Simulated groups use at
/// most one utterance stream per speaker, so the key is unambiguous.
pub type AudioMap<'a> = BTreeMap<String, &'a AudioBuffer>;

/// Sum gain-scaled sources at their group offsets. Output length covers the
/// group span.
pub fn mix_waveforms(
    g: &UtteranceGroup,
    audio: &AudioMap,
    gains: &BTreeMap<String, f32>,
) -> Result<AudioBuffer, SimError> {
    let mut rate: Option<u32> = None;
    let mut sources = Vec::new();
    for u in &g.utterances {
        let key = u.speaker_id.clone();
        let buf = *audio
            .get(&key)
            .ok_or_else(|| SimError::MissingAudio(key.clone()))?;
        match rate {
            None => rate = Some(buf.sample_rate),
            Some(r) if r != buf.sample_rate => {
                return Err(SimError::SampleRateMismatch {
                    a: r,
                    b: buf.sample_rate,
                })
            }
            _ => {}
        }
        let gain = gains.get(&key).copied().unwrap_or(1.0);
        sources.push((u.interval.start_s, buf, gain));
    }
    let rate = rate.ok_or_else(|| SimError::MissingAudio("empty group".into()))?;
    let span_end = g.span().end_s;
    let len = (span_end * rate as f64).ceil() as usize;
    let mut out = vec![0.0f32; len];
    for (start_s, buf, gain) in sources {
        let offset = (start_s * rate as f64).round() as usize;
        for (i, s) in buf.samples.iter().enumerate() {
            if offset + i < out.len() {
                out[offset + i] += gain * s;
            }
        }
    }
    Ok(AudioBuffer {
        samples: out,
        sample_rate: rate,
    })
}
