//! Named parameter tensors with gradients, trainable masks, and digests.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Float type the model math is generic over. Training uses `f32`; the
/// 64-bit instantiation exists for finite-difference gradient checking.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + ndarray::ScalarOperand
    + ndarray::LinalgScalar
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Parameter grouping used by freeze masks and gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamClass {
    InputProj,
    PosEmbedding,
    TokenEmbedding,
    Attention,
    FeedForward,
    LayerNorm,
    Adapter,
}

pub type ParamId = usize;

/// Bottleneck adapter dimensions. The projection input/output width always
/// equals the model width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub bottleneck: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        // paper-scale models use 256; the desk-scale default is 16
        AdapterConfig { bottleneck: 16 }
    }
}

/// Flat registry of named parameter tensors and their gradients. Biases and
/// vectors are stored as `1 x n` matrices so every entry is an `Array2`.
#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    names: Vec<String>,
    classes: Vec<ParamClass>,
    values: Vec<Array2<F>>,
    grads: Vec<Array2<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            classes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, class: ParamClass, value: Array2<F>) -> ParamId {
        let id = self.values.len();
        self.names.push(name.into());
        self.classes.push(class);
        self.grads.push(Array2::zeros(value.raw_dim()));
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn class(&self, id: ParamId) -> ParamClass {
        self.classes[id]
    }

    pub fn value(&self, id: ParamId) -> &Array2<F> {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<F> {
        &mut self.values[id]
    }

    pub fn grad(&self, id: ParamId) -> &Array2<F> {
        &self.grads[id]
    }

    pub fn accumulate_grad(&mut self, id: ParamId, delta: &Array2<F>) {
        self.grads[id] += delta;
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(F::zero());
        }
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Ids ordered by tensor name, the canonical order for digests and
    /// checkpoints.
    pub fn ids_by_name(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = (0..self.len()).collect();
        ids.sort_by(|a, b| self.names[*a].cmp(&self.names[*b]));
        ids
    }

    /// Mutable access to both value and gradient of one tensor.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Array2<F>, &mut Array2<F>) {
        (&mut self.values[id], &mut self.grads[id])
    }
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-tensor trainability; `Rows` marks individual embedding rows (used for
/// the speaker-change token embedding).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskEntry {
    All(bool),
    Rows(Vec<usize>),
}

/// Per-parameter trainable flags aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainableMask {
    pub entries: Vec<MaskEntry>,
}

impl TrainableMask {
    pub fn all<F: Scalar>(store: &ParamStore<F>, flag: bool) -> Self {
        TrainableMask {
            entries: vec![MaskEntry::All(flag); store.len()],
        }
    }

    /// Adapter fine-tuning mask: adapters, every layer-normalization tensor,
    /// and the given token-embedding row are trainable; everything else is
    /// frozen.
    pub fn adapter_mode<F: Scalar>(store: &ParamStore<F>, sc_token: u32) -> Self {
        let entries = (0..store.len())
            .map(|id| match store.class(id) {
                ParamClass::Adapter | ParamClass::LayerNorm => MaskEntry::All(true),
                ParamClass::TokenEmbedding => MaskEntry::Rows(vec![sc_token as usize]),
                _ => MaskEntry::All(false),
            })
            .collect();
        TrainableMask { entries }
    }

    pub fn is_trainable(&self, id: ParamId, row: usize) -> bool {
        match &self.entries[id] {
            MaskEntry::All(flag) => *flag,
            MaskEntry::Rows(rows) => rows.contains(&row),
        }
    }

    /// Zero out gradients of frozen entries.
    pub fn filter_grads<F: Scalar>(&self, store: &mut ParamStore<F>) {
        for id in 0..store.len() {
            match &self.entries[id] {
                MaskEntry::All(true) => {}
                MaskEntry::All(false) => store.grads[id].fill(F::zero()),
                MaskEntry::Rows(rows) => {
                    for (r, mut row) in store.grads[id].outer_iter_mut().enumerate() {
                        if !rows.contains(&r) {
                            row.fill(F::zero());
                        }
                    }
                }
            }
        }
    }
}

/// SHA-256 over the frozen parameters, in name order, as little-endian f64
/// bytes. Identical before and after training iff no frozen entry moved.
pub fn frozen_digest<F: Scalar>(store: &ParamStore<F>, mask: &TrainableMask) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for id in store.ids_by_name() {
        match &mask.entries[id] {
            MaskEntry::All(true) => continue,
            MaskEntry::All(false) => {
                hasher.update(store.name(id).as_bytes());
                for x in store.value(id).iter() {
                    hasher.update(x.as_f64().to_le_bytes());
                }
            }
            MaskEntry::Rows(rows) => {
                hasher.update(store.name(id).as_bytes());
                for (r, row) in store.value(id).outer_iter().enumerate() {
                    if !rows.contains(&r) {
                        for x in row.iter() {
                            hasher.update(x.as_f64().to_le_bytes());
                        }
                    }
                }
            }
        }
    }
    hasher.finalize().into()
}

/// SHA-256 over every parameter in name order.
pub fn full_digest<F: Scalar>(store: &ParamStore<F>) -> [u8; 32] {
    let all_frozen = TrainableMask {
        entries: vec![MaskEntry::All(false); store.len()],
    };
    frozen_digest(store, &all_frozen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("b.w", ParamClass::Attention, arr2(&[[1.0, 2.0], [3.0, 4.0]]));
        s.add("a.emb", ParamClass::TokenEmbedding, arr2(&[[0.5, 0.5], [0.25, 0.25]]));
        s
    }

    #[test]
    fn digest_ignores_trainable_entries() {
        let mut s = store();
        let mask = TrainableMask {
            entries: vec![MaskEntry::All(true), MaskEntry::All(false)],
        };
        let before = frozen_digest(&s, &mask);
        s.value_mut(0)[[0, 0]] = 99.0;
        assert_eq!(before, frozen_digest(&s, &mask));
        s.value_mut(1)[[0, 0]] = 99.0;
        assert_ne!(before, frozen_digest(&s, &mask));
    }

    #[test]
    fn row_mask_freezes_other_rows() {
        let mut s = store();
        let mask = TrainableMask {
            entries: vec![MaskEntry::All(false), MaskEntry::Rows(vec![1])],
        };
        let before = frozen_digest(&s, &mask);
        s.value_mut(1)[[1, 0]] = 7.0; // trainable row
        assert_eq!(before, frozen_digest(&s, &mask));
        s.value_mut(1)[[0, 1]] = 7.0; // frozen row
        assert_ne!(before, frozen_digest(&s, &mask));
    }

    #[test]
    fn filter_grads_zeroes_frozen() {
        let mut s = store();
        s.accumulate_grad(0, &arr2(&[[1.0, 1.0], [1.0, 1.0]]));
        s.accumulate_grad(1, &arr2(&[[1.0, 1.0], [1.0, 1.0]]));
        let mask = TrainableMask {
            entries: vec![MaskEntry::All(false), MaskEntry::Rows(vec![0])],
        };
        mask.filter_grads(&mut s);
        assert!(s.grad(0).iter().all(|g| *g == 0.0));
        assert_eq!(s.grad(1)[[0, 0]], 1.0);
        assert_eq!(s.grad(1)[[1, 0]], 0.0);
    }
}
