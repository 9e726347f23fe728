//! Finite-difference verification of the analytic gradients, per parameter
//! class, in 64-bit precision.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::net::{forward_loss, loss_and_grads, ToyModel};
use super::store::{ParamClass, Scalar};
use super::train::Example;
use super::ModelError;

#[derive(Debug, Clone, Copy, Default)]
pub struct ClassCheck {
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub per_class: BTreeMap<ParamClass, ClassCheck>,
    pub worst_rel_err: f64,
    pub elements_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst_rel_err <= tol
    }
}

/// Give every tensor of `class` random values; used to make near-identity
/// adapters exercise non-trivial gradients before checking.
pub fn randomize_class<F: Scalar>(model: &mut ToyModel<F>, class: ParamClass, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, std).expect("std > 0");
    for id in 0..model.store.len() {
        if model.store.class(id) == class {
            for v in model.store.value_mut(id).iter_mut() {
                *v = F::from_f64(dist.sample(&mut rng));
            }
        }
    }
}

/// Compare analytic gradients against central finite differences with the
/// given step, sampling up to `per_tensor` elements of every tensor.
pub fn gradient_check(
    model: &mut ToyModel<f64>,
    example: &Example<f64>,
    step: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    model.store.zero_grads();
    loss_and_grads(
        model,
        &example.features,
        &example.prompt_ids,
        &example.payload_ids,
        1.0,
    )?;
    let analytic: Vec<ndarray::Array2<f64>> =
        (0..model.store.len()).map(|id| model.store.grad(id).clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    for id in 0..model.store.len() {
        let class = model.store.class(id);
        let len = model.store.value(id).len();
        let indices: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|_| rng.gen_range(0..len)).collect()
        };
        let ncols = model.store.value(id).ncols();
        for flat in indices {
            let pos = (flat / ncols, flat % ncols);
            let orig = model.store.value(id)[pos];
            model.store.value_mut(id)[pos] = orig + step;
            let up = forward_loss(model, &example.features, &example.prompt_ids, &example.payload_ids)?;
            model.store.value_mut(id)[pos] = orig - step;
            let down = forward_loss(model, &example.features, &example.prompt_ids, &example.payload_ids)?;
            model.store.value_mut(id)[pos] = orig;

            let numeric = (up - down) / (2.0 * step);
            let a = analytic[id][pos];
            let denom = a.abs().max(numeric.abs());
            let rel = if denom < 1e-10 {
                0.0
            } else {
                (a - numeric).abs() / denom
            };
            let entry = report.per_class.entry(class).or_default();
            entry.checked += 1;
            entry.max_rel_err = entry.max_rel_err.max(rel);
            report.worst_rel_err = report.worst_rel_err.max(rel);
            report.elements_checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::net::{FeatureMatrix, ModelConfig};
    use crate::model::store::AdapterConfig;
    use ndarray::Array2;

    /// Every parameter class passes the 64-bit finite-difference check on a
    /// width-8 single-layer model with randomized adapters.
    #[test]
    fn all_classes_pass() {
        let cfg = ModelConfig {
            feat_dim: 5,
            width: 8,
            heads: 2,
            ff_dim: 12,
            enc_layers: 1,
            dec_layers: 1,
            vocab_size: 11,
            max_src_len: 16,
            max_tgt_len: 16,
            downsample: 2,
        };
        let mut model = ToyModel::<f64>::build(cfg, 21).unwrap();
        model.insert_adapters(AdapterConfig { bottleneck: 3 }, 22).unwrap();
        randomize_class(&mut model, ParamClass::Adapter, 0.3, 23);

        let mut state = 77u64;
        let features = FeatureMatrix::new(Array2::from_shape_fn((5, 7), |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        }))
        .unwrap();
        let example = Example {
            features,
            prompt_ids: vec![0, 1],
            payload_ids: vec![3, 7, 2, 10],
        };

        let report = gradient_check(&mut model, &example, 1e-5, 3, 99).unwrap();
        assert!(
            report.passes(1e-4),
            "worst relative error {}",
            report.worst_rel_err
        );
        // all seven classes must appear
        assert_eq!(report.per_class.len(), 7, "{:?}", report.per_class.keys());
    }
}
