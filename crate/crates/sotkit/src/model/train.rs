//! AdamW with decoupled weight decay, a linear-decay LR schedule, and the
//! masked training step. Parameters whose mask entry is frozen are never
//! touched: no gradient step and no weight decay, so their bytes stay
//! bit-identical across any number of steps.

use ndarray::Array2;
use thiserror::Error;

use super::net::{loss_and_grads, FeatureMatrix, ToyModel};
use super::store::{MaskEntry, ParamStore, Scalar, TrainableMask};
use super::ModelError;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss at step {step}; step aborted")]
    NonFiniteLoss { step: usize },
}

/// One training sequence: features plus its teacher-forcing token split.
#[derive(Debug, Clone)]
pub struct Example<F> {
    pub features: FeatureMatrix<F>,
    pub prompt_ids: Vec<u32>,
    pub payload_ids: Vec<u32>,
}

/// `lr(s) = lr0 * (1 - s / total)`, clamped at zero.
#[derive(Debug, Clone, Copy)]
pub struct LinearDecaySchedule {
    pub lr0: f64,
    pub total_steps: usize,
}

impl LinearDecaySchedule {
    pub fn lr(&self, step: usize) -> f64 {
        let frac = step as f64 / self.total_steps.max(1) as f64;
        (self.lr0 * (1.0 - frac)).max(0.0)
    }
}

pub struct AdamW<F> {
    m: Vec<Array2<F>>,
    v: Vec<Array2<F>>,
    t: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl<F: Scalar> AdamW<F> {
    /// Create optimizer state matching the store. Build it after adapter
    /// insertion so every tensor has a slot.
    pub fn new(store: &ParamStore<F>) -> Self {
        let m = (0..store.len())
            .map(|id| Array2::zeros(store.value(id).raw_dim()))
            .collect();
        let v = (0..store.len())
            .map(|id| Array2::zeros(store.value(id).raw_dim()))
            .collect();
        AdamW {
            m,
            v,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }

    /// Apply one update from the store's gradients. Only mask-trainable
    /// entries move.
    pub fn step(&mut self, store: &mut ParamStore<F>, mask: &TrainableMask, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one = F::one();
        let eps = F::from_f64(self.eps);
        let step_size = F::from_f64(lr / bc1);
        let vhat_scale = F::from_f64(1.0 / bc2);
        let decay = F::from_f64(lr * self.weight_decay);

        for id in 0..store.len() {
            let rows_filter: Option<&[usize]> = match &mask.entries[id] {
                MaskEntry::All(false) => continue,
                MaskEntry::All(true) => None,
                MaskEntry::Rows(rows) => Some(rows),
            };
            let grad = store.grad(id).clone();
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            let (value, _) = store.value_and_grad_mut(id);
            let mut update_row = |r: usize| {
                for c in 0..grad.ncols() {
                    let g = grad[[r, c]];
                    m[[r, c]] = b1 * m[[r, c]] + (one - b1) * g;
                    v[[r, c]] = b2 * v[[r, c]] + (one - b2) * g * g;
                    let vhat = v[[r, c]] * vhat_scale;
                    value[[r, c]] =
                        value[[r, c]] - step_size * m[[r, c]] / (vhat.sqrt() + eps)
                            - decay * value[[r, c]];
                }
            };
            match rows_filter {
                None => {
                    for r in 0..grad.nrows() {
                        update_row(r);
                    }
                }
                Some(rows) => {
                    for &r in rows {
                        if r < grad.nrows() {
                            update_row(r);
                        }
                    }
                }
            }
        }
    }
}

/// One optimization step over a batch: averaged gradients, mask filtering,
/// AdamW update. A non-finite loss aborts the step before any update.
pub fn train_step<F: Scalar>(
    model: &mut ToyModel<F>,
    batch: &[&Example<F>],
    mask: &TrainableMask,
    opt: &mut AdamW<F>,
    lr: f64,
    step: usize,
) -> Result<f64, TrainError> {
    model.store.zero_grads();
    let scale = F::from_f64(1.0 / batch.len().max(1) as f64);
    let mut total = 0.0;
    for ex in batch {
        let loss = loss_and_grads(model, &ex.features, &ex.prompt_ids, &ex.payload_ids, scale)?;
        total += loss.as_f64();
    }
    let mean = total / batch.len().max(1) as f64;
    if !mean.is_finite() {
        return Err(TrainError::NonFiniteLoss { step });
    }
    mask.filter_grads(&mut model.store);
    opt.step(&mut model.store, mask, lr);
    Ok(mean)
}
