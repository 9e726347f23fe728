//! The toy encoder-decoder: construction, forward passes, teacher-forced
//! loss with full backward, greedy decoding, and checkpoints.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    adapter_backward, adapter_forward, attention_backward, attention_forward, ff_backward,
    ff_forward, layer_norm_backward, layer_norm_forward, linear_backward, linear_forward,
    softmax_rows, AdapterCache, AdapterParams, AttnCache, AttnParams, FfCache, FfParams,
    LinearParams, LnCache, LnParams,
};
use super::store::{AdapterConfig, ParamClass, ParamId, ParamStore, Scalar, TrainableMask};
use super::ModelError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input feature dimension (rows of the feature matrix).
    pub feat_dim: usize,
    pub width: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub vocab_size: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    /// Encoder frame pooling factor; hidden length is `ceil(frames / downsample)`.
    pub downsample: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        if self.feat_dim == 0
            || self.ff_dim == 0
            || self.enc_layers == 0
            || self.dec_layers == 0
            || self.vocab_size < 2
            || self.max_src_len == 0
            || self.max_tgt_len == 0
            || self.downsample == 0
        {
            return Err(ModelError::Config("all dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Desk-scale defaults: width 64, 2+2 layers, 4 heads.
    pub fn toy(feat_dim: usize, vocab_size: usize) -> Self {
        ModelConfig {
            feat_dim,
            width: 64,
            heads: 4,
            ff_dim: 128,
            enc_layers: 2,
            dec_layers: 2,
            vocab_size,
            max_src_len: 256,
            max_tgt_len: 64,
            downsample: 1,
        }
    }
}

/// Input features: `feat_dim x frames`, finite, at least one frame.
#[derive(Debug, Clone)]
pub struct FeatureMatrix<F>(Array2<F>);

impl<F: Scalar> FeatureMatrix<F> {
    pub fn new(values: Array2<F>) -> Result<Self, ModelError> {
        if values.ncols() == 0 {
            return Err(ModelError::Shape("feature matrix has zero frames".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Shape("non-finite feature value".into()));
        }
        Ok(FeatureMatrix(values))
    }

    /// Build from a row-major flat buffer of `feat_dim * frames` values.
    pub fn from_flat(feat_dim: usize, frames: usize, data: Vec<F>) -> Result<Self, ModelError> {
        let values = Array2::from_shape_vec((feat_dim, frames), data)
            .map_err(|e| ModelError::Shape(e.to_string()))?;
        Self::new(values)
    }

    pub fn feat_dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn frames(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &Array2<F> {
        &self.0
    }
}

/// Encoder output: `width x hidden_frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenMatrix<F>(pub Array2<F>);

impl<F: Scalar> HiddenMatrix<F> {
    pub fn hidden_dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn frames(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Debug, Clone, Copy)]
struct EncBlockParams {
    ln1: LnParams,
    attn: AttnParams,
    ad1: Option<AdapterParams>,
    ln2: LnParams,
    ff: FfParams,
    ad2: Option<AdapterParams>,
}

#[derive(Debug, Clone, Copy)]
struct DecBlockParams {
    ln1: LnParams,
    self_attn: AttnParams,
    ad1: Option<AdapterParams>,
    ln_cross: LnParams,
    cross_attn: AttnParams,
    ln2: LnParams,
    ff: FfParams,
    ad2: Option<AdapterParams>,
}

pub struct ToyModel<F> {
    pub cfg: ModelConfig,
    pub adapter_cfg: Option<AdapterConfig>,
    pub store: ParamStore<F>,
    input_proj: LinearParams,
    enc_pos: ParamId,
    enc_blocks: Vec<EncBlockParams>,
    enc_ln_final: LnParams,
    tok_emb: ParamId,
    dec_pos: ParamId,
    dec_blocks: Vec<DecBlockParams>,
    dec_ln_final: LnParams,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal<F: Scalar>(&mut self, rows: usize, cols: usize, std: f64) -> Array2<F> {
        let dist = Normal::new(0.0, std).expect("std > 0");
        Array2::from_shape_fn((rows, cols), |_| F::from_f64(dist.sample(&mut self.rng)))
    }
}

impl<F: Scalar> ToyModel<F> {
    /// Build a model with randomly initialized weights (no adapters yet).
    pub fn build(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let d = cfg.width;
        let inv_sqrt = |n: usize| 1.0 / (n as f64).sqrt();

        let linear = |store: &mut ParamStore<F>,
                          init: &mut Init,
                          name: &str,
                          class: ParamClass,
                          out_dim: usize,
                          in_dim: usize| {
            LinearParams {
                w: store.add(format!("{name}.w"), class, init.normal(out_dim, in_dim, inv_sqrt(in_dim))),
                b: store.add(format!("{name}.b"), class, Array2::zeros((1, out_dim))),
            }
        };
        let ln = |store: &mut ParamStore<F>, name: &str| LnParams {
            gamma: store.add(format!("{name}.g"), ParamClass::LayerNorm, Array2::ones((1, d))),
            beta: store.add(format!("{name}.b"), ParamClass::LayerNorm, Array2::zeros((1, d))),
        };
        let attn = |store: &mut ParamStore<F>, init: &mut Init, name: &str| AttnParams {
            query: linear(store, init, &format!("{name}.q"), ParamClass::Attention, d, d),
            key: linear(store, init, &format!("{name}.k"), ParamClass::Attention, d, d),
            value: linear(store, init, &format!("{name}.v"), ParamClass::Attention, d, d),
            output: linear(store, init, &format!("{name}.o"), ParamClass::Attention, d, d),
        };
        let ff = |store: &mut ParamStore<F>, init: &mut Init, name: &str| FfParams {
            expand: linear(store, init, &format!("{name}.up"), ParamClass::FeedForward, cfg.ff_dim, d),
            contract: linear(store, init, &format!("{name}.down"), ParamClass::FeedForward, d, cfg.ff_dim),
        };

        let input_proj = linear(&mut store, &mut init, "enc.in", ParamClass::InputProj, d, cfg.feat_dim);
        let enc_pos = store.add(
            "enc.pos",
            ParamClass::PosEmbedding,
            init.normal(cfg.max_src_len, d, 0.1),
        );
        let enc_blocks = (0..cfg.enc_layers)
            .map(|i| EncBlockParams {
                ln1: ln(&mut store, &format!("enc.{i}.ln1")),
                attn: attn(&mut store, &mut init, &format!("enc.{i}.attn")),
                ad1: None,
                ln2: ln(&mut store, &format!("enc.{i}.ln2")),
                ff: ff(&mut store, &mut init, &format!("enc.{i}.ff")),
                ad2: None,
            })
            .collect();
        let enc_ln_final = ln(&mut store, "enc.lnf");

        let tok_emb = store.add(
            "dec.emb",
            ParamClass::TokenEmbedding,
            init.normal(cfg.vocab_size, d, 0.1),
        );
        let dec_pos = store.add(
            "dec.pos",
            ParamClass::PosEmbedding,
            init.normal(cfg.max_tgt_len, d, 0.1),
        );
        let dec_blocks = (0..cfg.dec_layers)
            .map(|i| DecBlockParams {
                ln1: ln(&mut store, &format!("dec.{i}.ln1")),
                self_attn: attn(&mut store, &mut init, &format!("dec.{i}.attn")),
                ad1: None,
                ln_cross: ln(&mut store, &format!("dec.{i}.lnx")),
                cross_attn: attn(&mut store, &mut init, &format!("dec.{i}.xattn")),
                ln2: ln(&mut store, &format!("dec.{i}.ln2")),
                ff: ff(&mut store, &mut init, &format!("dec.{i}.ff")),
                ad2: None,
            })
            .collect();
        let dec_ln_final = ln(&mut store, "dec.lnf");

        Ok(ToyModel {
            cfg,
            adapter_cfg: None,
            store,
            input_proj,
            enc_pos,
            enc_blocks,
            enc_ln_final,
            tok_emb,
            dec_pos,
            dec_blocks,
            dec_ln_final,
        })
    }

    /// Insert two adapters per transformer block: one after self-attention,
    /// one after the feed-forward sublayer. Near-identity initialization
    /// (zero up-projection, random down-projection) leaves every forward
    /// output unchanged at insertion time.
    pub fn insert_adapters(&mut self, acfg: AdapterConfig, seed: u64) -> Result<(), ModelError> {
        if self.adapter_cfg.is_some() {
            return Err(ModelError::Config("adapters already inserted".into()));
        }
        if acfg.bottleneck == 0 {
            return Err(ModelError::Config("bottleneck must be >= 1".into()));
        }
        let d = self.cfg.width;
        let b = acfg.bottleneck;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let std = 1.0 / (d as f64).sqrt();
        let make = |store: &mut ParamStore<F>, init: &mut Init, name: &str| AdapterParams {
            down: LinearParams {
                w: store.add(format!("{name}.down.w"), ParamClass::Adapter, init.normal(b, d, std)),
                b: store.add(format!("{name}.down.b"), ParamClass::Adapter, Array2::zeros((1, b))),
            },
            up: LinearParams {
                w: store.add(format!("{name}.up.w"), ParamClass::Adapter, Array2::zeros((d, b))),
                b: store.add(format!("{name}.up.b"), ParamClass::Adapter, Array2::zeros((1, d))),
            },
        };
        for i in 0..self.enc_blocks.len() {
            self.enc_blocks[i].ad1 = Some(make(&mut self.store, &mut init, &format!("enc.{i}.ad1")));
            self.enc_blocks[i].ad2 = Some(make(&mut self.store, &mut init, &format!("enc.{i}.ad2")));
        }
        for i in 0..self.dec_blocks.len() {
            self.dec_blocks[i].ad1 = Some(make(&mut self.store, &mut init, &format!("dec.{i}.ad1")));
            self.dec_blocks[i].ad2 = Some(make(&mut self.store, &mut init, &format!("dec.{i}.ad2")));
        }
        self.adapter_cfg = Some(acfg);
        Ok(())
    }

    /// Trainable mask for adapter fine-tuning: adapters, layer norms, and
    /// the given token-embedding row.
    pub fn adapter_mask(&self, sc_token: u32) -> TrainableMask {
        TrainableMask::adapter_mode(&self.store, sc_token)
    }

    fn check_features(&self, x: &FeatureMatrix<F>) -> Result<(), ModelError> {
        if x.feat_dim() != self.cfg.feat_dim {
            return Err(ModelError::Shape(format!(
                "feature dim {} != configured {}",
                x.feat_dim(),
                self.cfg.feat_dim
            )));
        }
        Ok(())
    }
}

struct EncBlockCache<F> {
    ln1: LnCache<F>,
    attn: AttnCache<F>,
    ad1: Option<AdapterCache<F>>,
    ln2: LnCache<F>,
    ff: FfCache<F>,
    ad2: Option<AdapterCache<F>>,
}

struct EncCache<F> {
    hidden_len: usize,
    blocks: Vec<EncBlockCache<F>>,
    ln_final: LnCache<F>,
    pooled: Array2<F>,
}

struct DecBlockCache<F> {
    ln1: LnCache<F>,
    self_attn: AttnCache<F>,
    ad1: Option<AdapterCache<F>>,
    ln_cross: LnCache<F>,
    cross_attn: AttnCache<F>,
    ln2: LnCache<F>,
    ff: FfCache<F>,
    ad2: Option<AdapterCache<F>>,
}

struct DecCache<F> {
    ids: Vec<u32>,
    blocks: Vec<DecBlockCache<F>>,
    ln_final: LnCache<F>,
    h_final: Array2<F>,
}

impl<F: Scalar> ToyModel<F> {
    /// Mean-pool frames by the configured downsampling factor. Input and
    /// output are `(frames, feat)`.
    fn pool(&self, x: &Array2<F>) -> Array2<F> {
        let ds = self.cfg.downsample;
        if ds == 1 {
            return x.clone();
        }
        let l = x.nrows();
        let lh = l.div_ceil(ds);
        let mut out = Array2::zeros((lh, x.ncols()));
        for i in 0..lh {
            let lo = i * ds;
            let hi = ((i + 1) * ds).min(l);
            let count = F::from_f64((hi - lo) as f64);
            let mean = x.slice(ndarray::s![lo..hi, ..]).sum_axis(Axis(0)) / count;
            out.row_mut(i).assign(&mean);
        }
        out
    }

    fn encode_inner(&self, feats: &FeatureMatrix<F>) -> Result<(Array2<F>, EncCache<F>), ModelError> {
        self.check_features(feats)?;
        let frames_first = feats.values().t().to_owned();
        let pooled = self.pool(&frames_first);
        let lh = pooled.nrows();
        if lh > self.cfg.max_src_len {
            return Err(ModelError::Shape(format!(
                "{lh} hidden frames exceed max_src_len {}",
                self.cfg.max_src_len
            )));
        }
        let pos = self.store.value(self.enc_pos);
        let mut x = linear_forward(&self.store, self.input_proj, &pooled)
            + pos.slice(ndarray::s![0..lh, ..]);

        let mut blocks = Vec::with_capacity(self.enc_blocks.len());
        for bp in &self.enc_blocks {
            let (a_norm, ln1) = layer_norm_forward(&self.store, bp.ln1, &x);
            let (attn_out, attn) =
                attention_forward(&self.store, &bp.attn, &a_norm, &a_norm, self.cfg.heads, false);
            let mut h = &x + &attn_out;
            let ad1 = bp.ad1.as_ref().map(|p| {
                let (y, c) = adapter_forward(&self.store, p, &h);
                h = y;
                c
            });
            let (f_norm, ln2) = layer_norm_forward(&self.store, bp.ln2, &h);
            let (ff_out, ffc) = ff_forward(&self.store, &bp.ff, &f_norm);
            let mut y = &h + &ff_out;
            let ad2 = bp.ad2.as_ref().map(|p| {
                let (out, c) = adapter_forward(&self.store, p, &y);
                y = out;
                c
            });
            blocks.push(EncBlockCache {
                ln1,
                attn,
                ad1,
                ln2,
                ff: ffc,
                ad2,
            });
            x = y;
        }
        let (h, ln_final) = layer_norm_forward(&self.store, self.enc_ln_final, &x);
        Ok((
            h,
            EncCache {
                hidden_len: lh,
                blocks,
                ln_final,
                pooled,
            },
        ))
    }

    fn backward_encoder(&mut self, cache: &EncCache<F>, dh: &Array2<F>) {
        let blocks: Vec<EncBlockParams> = self.enc_blocks.clone();
        let mut dx = layer_norm_backward(&mut self.store, self.enc_ln_final, &cache.ln_final, dh);
        for (bp, bc) in blocks.iter().zip(cache.blocks.iter()).rev() {
            let dy = match (&bp.ad2, &bc.ad2) {
                (Some(p), Some(c)) => adapter_backward(&mut self.store, p, c, &dx),
                _ => dx,
            };
            // y = x_mid + ff(ln2(x_mid))
            let dff = ff_backward(&mut self.store, &bp.ff, &bc.ff, &dy);
            let mut dmid = dy;
            dmid += &layer_norm_backward(&mut self.store, bp.ln2, &bc.ln2, &dff);
            let dh1 = match (&bp.ad1, &bc.ad1) {
                (Some(p), Some(c)) => adapter_backward(&mut self.store, p, c, &dmid),
                _ => dmid,
            };
            // h = x_in + attn(ln1(x_in))
            let (dxq, dxkv) = attention_backward(&mut self.store, &bp.attn, &bc.attn, &dh1);
            let danorm = &dxq + &dxkv;
            let mut dxin = dh1;
            dxin += &layer_norm_backward(&mut self.store, bp.ln1, &bc.ln1, &danorm);
            dx = dxin;
        }
        // x = input_proj(pooled) + pos[..lh]
        let dpos_used = dx.clone();
        let _ = linear_backward(&mut self.store, self.input_proj, &cache.pooled, &dx);
        let mut dpos = Array2::zeros(self.store.value(self.enc_pos).raw_dim());
        dpos.slice_mut(ndarray::s![0..cache.hidden_len, ..])
            .assign(&dpos_used);
        self.store.accumulate_grad(self.enc_pos, &dpos);
    }

    fn embed_tokens(&self, ids: &[u32]) -> Result<Array2<F>, ModelError> {
        if ids.len() > self.cfg.max_tgt_len {
            return Err(ModelError::Shape(format!(
                "sequence length {} exceeds max_tgt_len {}",
                ids.len(),
                self.cfg.max_tgt_len
            )));
        }
        let emb = self.store.value(self.tok_emb);
        let pos = self.store.value(self.dec_pos);
        let mut x = Array2::zeros((ids.len(), self.cfg.width));
        for (t, &id) in ids.iter().enumerate() {
            if id as usize >= self.cfg.vocab_size {
                return Err(ModelError::InvalidToken(id));
            }
            let row = &emb.row(id as usize) + &pos.row(t);
            x.row_mut(t).assign(&row);
        }
        Ok(x)
    }

    fn decode_inner(
        &self,
        ids: &[u32],
        h_enc: &Array2<F>,
    ) -> Result<(Array2<F>, DecCache<F>), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::Shape("empty decoder input".into()));
        }
        let mut x = self.embed_tokens(ids)?;
        let mut blocks = Vec::with_capacity(self.dec_blocks.len());
        for bp in &self.dec_blocks {
            let (a_norm, ln1) = layer_norm_forward(&self.store, bp.ln1, &x);
            let (sa_out, self_attn) =
                attention_forward(&self.store, &bp.self_attn, &a_norm, &a_norm, self.cfg.heads, true);
            let mut h = &x + &sa_out;
            let ad1 = bp.ad1.as_ref().map(|p| {
                let (y, c) = adapter_forward(&self.store, p, &h);
                h = y;
                c
            });
            let (c_norm, ln_cross) = layer_norm_forward(&self.store, bp.ln_cross, &h);
            let (ca_out, cross_attn) =
                attention_forward(&self.store, &bp.cross_attn, &c_norm, h_enc, self.cfg.heads, false);
            let x_mid = &h + &ca_out;
            let (f_norm, ln2) = layer_norm_forward(&self.store, bp.ln2, &x_mid);
            let (ff_out, ffc) = ff_forward(&self.store, &bp.ff, &f_norm);
            let mut y = &x_mid + &ff_out;
            let ad2 = bp.ad2.as_ref().map(|p| {
                let (out, c) = adapter_forward(&self.store, p, &y);
                y = out;
                c
            });
            blocks.push(DecBlockCache {
                ln1,
                self_attn,
                ad1,
                ln_cross,
                cross_attn,
                ln2,
                ff: ffc,
                ad2,
            });
            x = y;
        }
        let (h_final, ln_final) = layer_norm_forward(&self.store, self.dec_ln_final, &x);
        // tied output projection onto the token embedding
        let logits = h_final.dot(&self.store.value(self.tok_emb).t());
        Ok((
            logits,
            DecCache {
                ids: ids.to_vec(),
                blocks,
                ln_final,
                h_final,
            },
        ))
    }

    /// Returns the gradient w.r.t. the encoder output.
    fn backward_decoder(&mut self, cache: &DecCache<F>, dlogits: &Array2<F>) -> Array2<F> {
        // logits = h E^T: dE += dlogits^T h, dh = dlogits E
        let demb = dlogits.t().dot(&cache.h_final);
        self.store.accumulate_grad(self.tok_emb, &demb);
        let dh_final = dlogits.dot(self.store.value(self.tok_emb));

        let blocks: Vec<DecBlockParams> = self.dec_blocks.clone();
        let mut dx =
            layer_norm_backward(&mut self.store, self.dec_ln_final, &cache.ln_final, &dh_final);
        let mut dh_enc: Option<Array2<F>> = None;
        for (bp, bc) in blocks.iter().zip(cache.blocks.iter()).rev() {
            let dy = match (&bp.ad2, &bc.ad2) {
                (Some(p), Some(c)) => adapter_backward(&mut self.store, p, c, &dx),
                _ => dx,
            };
            let dff = ff_backward(&mut self.store, &bp.ff, &bc.ff, &dy);
            let mut dmid = dy;
            dmid += &layer_norm_backward(&mut self.store, bp.ln2, &bc.ln2, &dff);
            // x_mid = x_after_self + cross(ln_cross(x_after_self), h_enc)
            let (dcq, dckv) =
                attention_backward(&mut self.store, &bp.cross_attn, &bc.cross_attn, &dmid);
            match &mut dh_enc {
                Some(acc) => *acc += &dckv,
                None => dh_enc = Some(dckv),
            }
            let mut dself = dmid;
            dself += &layer_norm_backward(&mut self.store, bp.ln_cross, &bc.ln_cross, &dcq);
            let dh1 = match (&bp.ad1, &bc.ad1) {
                (Some(p), Some(c)) => adapter_backward(&mut self.store, p, c, &dself),
                _ => dself,
            };
            let (dxq, dxkv) =
                attention_backward(&mut self.store, &bp.self_attn, &bc.self_attn, &dh1);
            let danorm = &dxq + &dxkv;
            let mut dxin = dh1;
            dxin += &layer_norm_backward(&mut self.store, bp.ln1, &bc.ln1, &danorm);
            dx = dxin;
        }

        // embedding + position gradients
        let mut demb = Array2::zeros(self.store.value(self.tok_emb).raw_dim());
        let mut dpos = Array2::zeros(self.store.value(self.dec_pos).raw_dim());
        for (t, &id) in cache.ids.iter().enumerate() {
            let g = dx.row(t);
            let mut emb_row = demb.row_mut(id as usize);
            emb_row += &g;
            let mut pos_row = dpos.row_mut(t);
            pos_row += &g;
        }
        self.store.accumulate_grad(self.tok_emb, &demb);
        self.store.accumulate_grad(self.dec_pos, &dpos);

        dh_enc.expect("decoder has at least one block")
    }
}

/// Deterministic encoder application (Eq-style `H = Encoder(X)`), returning
/// the hidden matrix in `width x frames` orientation.
pub fn encode<F: Scalar>(
    model: &ToyModel<F>,
    x: &FeatureMatrix<F>,
) -> Result<HiddenMatrix<F>, ModelError> {
    let (h, _) = model.encode_inner(x)?;
    Ok(HiddenMatrix(h.t().to_owned()))
}

/// Next-token distribution given the prompt, a decoded prefix, and the
/// encoder output. Softmax output: non-negative, sums to one.
pub fn decode_step<F: Scalar>(
    model: &ToyModel<F>,
    prompt_ids: &[u32],
    prefix_ids: &[u32],
    hidden: &HiddenMatrix<F>,
) -> Result<Array1<F>, ModelError> {
    let mut ids = prompt_ids.to_vec();
    ids.extend_from_slice(prefix_ids);
    let h_enc = hidden.0.t().to_owned();
    let (logits, _) = model.decode_inner(&ids, &h_enc)?;
    let probs = softmax_rows(&logits);
    Ok(probs.row(probs.nrows() - 1).to_owned())
}

/// Row-wise log-softmax cross entropy; targets index the vocabulary.
fn cross_entropy<F: Scalar>(logits: &Array2<F>, rows: &[(usize, u32)]) -> (F, Array2<F>) {
    let n = F::from_f64(rows.len() as f64);
    let probs = softmax_rows(logits);
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut loss = F::zero();
    for &(row, target) in rows {
        let p = probs[[row, target as usize]];
        // clamp to avoid -inf on exact zeros in low precision
        let p_safe = p.max(F::from_f64(1e-30));
        loss -= p_safe.ln();
        let mut drow = dlogits.row_mut(row);
        drow.assign(&probs.row(row));
        drow[target as usize] -= F::one();
    }
    loss /= n;
    dlogits /= n;
    (loss, dlogits)
}

pub(crate) fn loss_and_grads<F: Scalar>(
    model: &mut ToyModel<F>,
    x: &FeatureMatrix<F>,
    prompt_ids: &[u32],
    payload_ids: &[u32],
    grad_scale: F,
) -> Result<F, ModelError> {
    let (loss, enc_cache, dec_cache, dlogits) = forward_ce(model, x, prompt_ids, payload_ids)?;
    let scaled = dlogits * grad_scale;
    let dh_enc = model.backward_decoder(&dec_cache, &scaled);
    model.backward_encoder(&enc_cache, &dh_enc);
    Ok(loss)
}

#[allow(clippy::type_complexity)]
fn forward_ce<F: Scalar>(
    model: &ToyModel<F>,
    x: &FeatureMatrix<F>,
    prompt_ids: &[u32],
    payload_ids: &[u32],
) -> Result<(F, EncCache<F>, DecCache<F>, Array2<F>), ModelError> {
    if payload_ids.is_empty() {
        return Err(ModelError::Shape("empty payload".into()));
    }
    for &id in payload_ids {
        if id as usize >= model.cfg.vocab_size {
            return Err(ModelError::LabelOutOfVocab(id));
        }
    }
    let (h_enc, enc_cache) = model.encode_inner(x)?;
    let mut input = prompt_ids.to_vec();
    input.extend_from_slice(&payload_ids[..payload_ids.len() - 1]);
    let (logits, dec_cache) = model.decode_inner(&input, &h_enc)?;
    // position prompt_len-1+k predicts payload[k]
    let rows: Vec<(usize, u32)> = payload_ids
        .iter()
        .enumerate()
        .map(|(k, &t)| (prompt_ids.len() - 1 + k, t))
        .collect();
    let (loss, dlogits) = cross_entropy(&logits, &rows);
    Ok((loss, enc_cache, dec_cache, dlogits))
}

/// Mean cross-entropy over payload positions (prompt excluded), with
/// gradients accumulated into the parameter store.
pub fn teacher_forced_loss<F: Scalar>(
    model: &mut ToyModel<F>,
    x: &FeatureMatrix<F>,
    prompt_ids: &[u32],
    payload_ids: &[u32],
) -> Result<F, ModelError> {
    loss_and_grads(model, x, prompt_ids, payload_ids, F::one())
}

/// Loss only, no gradients. Used by finite-difference checking.
pub fn forward_loss<F: Scalar>(
    model: &ToyModel<F>,
    x: &FeatureMatrix<F>,
    prompt_ids: &[u32],
    payload_ids: &[u32],
) -> Result<F, ModelError> {
    forward_ce(model, x, prompt_ids, payload_ids).map(|(loss, ..)| loss)
}

/// Teacher-forced token accuracy: the fraction of payload positions where
/// the argmax of the teacher-forced logits equals the label.
pub fn teacher_forced_accuracy<F: Scalar>(
    model: &ToyModel<F>,
    x: &FeatureMatrix<F>,
    prompt_ids: &[u32],
    payload_ids: &[u32],
) -> Result<f64, ModelError> {
    if payload_ids.is_empty() {
        return Err(ModelError::Shape("empty payload".into()));
    }
    let (h_enc, _) = model.encode_inner(x)?;
    let mut input = prompt_ids.to_vec();
    input.extend_from_slice(&payload_ids[..payload_ids.len() - 1]);
    let (logits, _) = model.decode_inner(&input, &h_enc)?;
    let mut correct = 0usize;
    for (k, &target) in payload_ids.iter().enumerate() {
        let row = logits.row(prompt_ids.len() - 1 + k);
        let mut best = 0usize;
        let mut best_val = row[0];
        for (i, v) in row.iter().enumerate().skip(1) {
            if *v > best_val {
                best_val = *v;
                best = i;
            }
        }
        if best as u32 == target {
            correct += 1;
        }
    }
    Ok(correct as f64 / payload_ids.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreedyOutcome {
    /// Prompt plus generated payload (including the stop token when found).
    pub ids: Vec<u32>,
    /// True when the length limit cut generation before the stop token.
    pub truncated: bool,
}

/// Argmax decoding; ties break toward the lowest token id.
pub fn greedy_decode<F: Scalar>(
    model: &ToyModel<F>,
    x: &FeatureMatrix<F>,
    prompt_ids: &[u32],
    eos_id: u32,
    max_len: usize,
) -> Result<GreedyOutcome, ModelError> {
    let (h_enc, _) = model.encode_inner(x)?;
    let mut ids = prompt_ids.to_vec();
    for _ in 0..max_len {
        let (logits, _) = model.decode_inner(&ids, &h_enc)?;
        let last = logits.row(logits.nrows() - 1);
        let mut best = 0usize;
        let mut best_val = last[0];
        for (i, v) in last.iter().enumerate().skip(1) {
            if *v > best_val {
                best_val = *v;
                best = i;
            }
        }
        ids.push(best as u32);
        if best as u32 == eos_id {
            return Ok(GreedyOutcome { ids, truncated: false });
        }
    }
    Ok(GreedyOutcome { ids, truncated: true })
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    class: ParamClass,
    shape: [usize; 2],
    data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: ModelConfig,
    adapter: Option<AdapterConfig>,
    params: Vec<TensorRecord>,
    mask: Option<TrainableMask>,
}

const CHECKPOINT_VERSION: u32 = 1;

impl<F: Scalar> ToyModel<F> {
    /// Versioned JSON checkpoint: named tensors, shapes, row-major 32-bit
    /// floats, plus the optional trainable mask.
    pub fn save_checkpoint(
        &self,
        path: impl AsRef<Path>,
        mask: Option<&TrainableMask>,
    ) -> Result<(), ModelError> {
        let params = self
            .store
            .ids_by_name()
            .into_iter()
            .map(|id| {
                let v = self.store.value(id);
                TensorRecord {
                    name: self.store.name(id).to_string(),
                    class: self.store.class(id),
                    shape: [v.nrows(), v.ncols()],
                    data: v.iter().map(|x| x.as_f64() as f32).collect(),
                }
            })
            .collect();
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            adapter: self.adapter_cfg,
            params,
            mask: mask.cloned(),
        };
        let json = serde_json::to_string(&file).expect("serialize checkpoint");
        fs::write(path, json).map_err(|e| ModelError::Config(format!("write checkpoint: {e}")))
    }

    pub fn load_checkpoint(
        path: impl AsRef<Path>,
    ) -> Result<(Self, Option<TrainableMask>), ModelError> {
        let data = fs::read_to_string(path)
            .map_err(|e| ModelError::Config(format!("read checkpoint: {e}")))?;
        let file: CheckpointFile = serde_json::from_str(&data)
            .map_err(|e| ModelError::Config(format!("parse checkpoint: {e}")))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(ModelError::Config(format!(
                "unsupported checkpoint version {}",
                file.version
            )));
        }
        let mut model = ToyModel::build(file.config, 0)?;
        if let Some(acfg) = file.adapter {
            model.insert_adapters(acfg, 0)?;
        }
        let mut by_name: std::collections::BTreeMap<&str, &TensorRecord> =
            std::collections::BTreeMap::new();
        for rec in &file.params {
            by_name.insert(rec.name.as_str(), rec);
        }
        for id in 0..model.store.len() {
            let name = model.store.name(id).to_string();
            let rec = by_name
                .remove(name.as_str())
                .ok_or_else(|| ModelError::Config(format!("checkpoint missing tensor {name}")))?;
            let value = model.store.value_mut(id);
            if [value.nrows(), value.ncols()] != rec.shape {
                return Err(ModelError::Config(format!("shape mismatch for {name}")));
            }
            for (slot, x) in value.iter_mut().zip(rec.data.iter()) {
                *slot = F::from_f64(*x as f64);
            }
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(ModelError::Config(format!("unknown tensor {extra} in checkpoint")));
        }
        Ok((model, file.mask))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(frames: usize, dim: usize, seed: u64) -> FeatureMatrix<f64> {
        let mut state = seed;
        let values = Array2::from_shape_fn((dim, frames), |_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        });
        FeatureMatrix::new(values).unwrap()
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            feat_dim: 5,
            width: 8,
            heads: 2,
            ff_dim: 16,
            enc_layers: 1,
            dec_layers: 1,
            vocab_size: 12,
            max_src_len: 32,
            max_tgt_len: 16,
            downsample: 1,
        }
    }

    #[test]
    fn zero_frames_rejected() {
        assert!(FeatureMatrix::<f64>::new(Array2::zeros((4, 0))).is_err());
    }

    #[test]
    fn encode_is_deterministic() {
        let model = ToyModel::<f64>::build(small_cfg(), 11).unwrap();
        let x = feats(6, 5, 3);
        let h1 = encode(&model, &x).unwrap();
        let h2 = encode(&model, &x).unwrap();
        assert_eq!(h1.0, h2.0);
        assert_eq!(h1.hidden_dim(), 8);
        assert_eq!(h1.frames(), 6);
    }

    #[test]
    fn downsampling_halves_frames() {
        let mut cfg = small_cfg();
        cfg.downsample = 2;
        let model = ToyModel::<f64>::build(cfg, 11).unwrap();
        let h = encode(&model, &feats(7, 5, 3)).unwrap();
        assert_eq!(h.frames(), 4);
    }

    #[test]
    fn decode_step_is_a_distribution() {
        let model = ToyModel::<f64>::build(small_cfg(), 11).unwrap();
        let x = feats(6, 5, 3);
        let h = encode(&model, &x).unwrap();
        let probs = decode_step(&model, &[0, 1], &[2, 3], &h).unwrap();
        let sum: f64 = probs.sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(probs.iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn decode_step_is_causal() {
        // the distribution at position n-1 is unchanged by later tokens
        let model = ToyModel::<f64>::build(small_cfg(), 11).unwrap();
        let x = feats(6, 5, 3);
        let h = encode(&model, &x).unwrap();
        let short = decode_step(&model, &[0, 1], &[2], &h).unwrap();
        let h_enc = h.0.t().to_owned();
        let (logits, _) = model.decode_inner(&[0, 1, 2, 4, 5], &h_enc).unwrap();
        let probs = softmax_rows(&logits);
        let at_pos = probs.row(2).to_owned();
        for (a, b) in short.iter().zip(at_pos.iter()) {
            assert!((a - b).abs() < 1e-12, "causality violated: {a} vs {b}");
        }
    }

    #[test]
    fn cross_attention_is_live() {
        let model = ToyModel::<f64>::build(small_cfg(), 11).unwrap();
        let xa = feats(6, 5, 3);
        let xb = feats(6, 5, 77);
        let ha = encode(&model, &xa).unwrap();
        let hb = encode(&model, &xb).unwrap();
        let pa = decode_step(&model, &[0, 1], &[2], &ha).unwrap();
        let pb = decode_step(&model, &[0, 1], &[2], &hb).unwrap();
        let diff: f64 = pa
            .iter()
            .zip(pb.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-9, "changing H must change the distribution");
    }

    #[test]
    fn uniform_model_loss_is_log_vocab() {
        let mut model = ToyModel::<f64>::build(small_cfg(), 11).unwrap();
        for id in 0..model.store.len() {
            model.store.value_mut(id).fill(0.0);
        }
        let x = feats(4, 5, 3);
        let loss = forward_loss(&model, &x, &[0, 1], &[2, 3, 4]).unwrap();
        assert!((loss - (12.0f64).ln()).abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn invalid_token_rejected() {
        let model = ToyModel::<f64>::build(small_cfg(), 11).unwrap();
        let x = feats(4, 5, 3);
        let h = encode(&model, &x).unwrap();
        assert_eq!(
            decode_step(&model, &[0], &[99], &h).unwrap_err(),
            ModelError::InvalidToken(99)
        );
        assert_eq!(
            forward_loss(&model, &x, &[0], &[99]).unwrap_err(),
            ModelError::LabelOutOfVocab(99)
        );
    }

    #[test]
    fn adapter_insertion_is_near_identity_and_counts_match() {
        let mut model = ToyModel::<f64>::build(small_cfg(), 11).unwrap();
        let x = feats(6, 5, 3);
        let before = encode(&model, &x).unwrap();
        let probs_before = decode_step(&model, &[0, 1], &[2], &before).unwrap();
        let n_before = model.store.param_count();

        let acfg = AdapterConfig { bottleneck: 4 };
        model.insert_adapters(acfg, 5).unwrap();
        let after = encode(&model, &x).unwrap();
        let probs_after = decode_step(&model, &[0, 1], &[2], &after).unwrap();

        let max_h_diff = before
            .0
            .iter()
            .zip(after.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_h_diff <= 1e-6, "hidden diff {max_h_diff}");
        let max_p_diff = probs_before
            .iter()
            .zip(probs_after.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_p_diff <= 1e-6);

        // 2 adapters per block, each 2db + d + b parameters
        let d = 8;
        let b = 4;
        let l_total = 1 + 1;
        let expect = 2 * l_total * (2 * d * b + d + b);
        assert_eq!(model.store.param_count() - n_before, expect);

        // double insertion is a config error
        assert!(model.insert_adapters(acfg, 5).is_err());
    }

    #[test]
    fn greedy_decode_stops_at_eos_or_truncates() {
        let mut model = ToyModel::<f64>::build(small_cfg(), 11).unwrap();
        let x = feats(4, 5, 3);
        // bias the tied embedding so token 7 always wins; eos = 7 stops at once
        for id in 0..model.store.len() {
            if model.store.name(id) == "dec.emb" {
                model.store.value_mut(id).fill(0.0);
                model.store.value_mut(id).row_mut(7).fill(5.0);
            }
        }
        let out = greedy_decode(&model, &x, &[0, 1], 7, 10).unwrap();
        assert_eq!(out.ids, vec![0, 1, 7]);
        assert!(!out.truncated);
        let out = greedy_decode(&model, &x, &[0, 1], 3, 5).unwrap();
        assert!(out.truncated);
        assert_eq!(out.ids.len(), 2 + 5);
    }

    #[test]
    fn checkpoint_round_trips() {
        let mut model = ToyModel::<f32>::build(small_cfg(), 11).unwrap();
        model
            .insert_adapters(AdapterConfig { bottleneck: 4 }, 5)
            .unwrap();
        let mask = model.adapter_mask(6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        model.save_checkpoint(&path, Some(&mask)).unwrap();
        let (loaded, loaded_mask) = ToyModel::<f32>::load_checkpoint(&path).unwrap();
        assert_eq!(loaded_mask.as_ref(), Some(&mask));
        for id in 0..model.store.len() {
            assert_eq!(model.store.value(id), loaded.store.value(id), "{}", model.store.name(id));
        }
    }
}
