//! Forward/backward primitives. Activations are `(positions, features)`
//! matrices; weights are `(out, in)` so a linear layer computes
//! `y = x W^T + b`.

use ndarray::{s, Array2, Axis};

use super::store::{ParamId, ParamStore, Scalar};

#[derive(Debug, Clone, Copy)]
pub struct LinearParams {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct AttnParams {
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub output: LinearParams,
}

#[derive(Debug, Clone, Copy)]
pub struct FfParams {
    pub expand: LinearParams,
    pub contract: LinearParams,
}

#[derive(Debug, Clone, Copy)]
pub struct AdapterParams {
    pub down: LinearParams,
    pub up: LinearParams,
}

pub fn linear_forward<F: Scalar>(
    store: &ParamStore<F>,
    p: LinearParams,
    x: &Array2<F>,
) -> Array2<F> {
    x.dot(&store.value(p.w).t()) + store.value(p.b)
}

/// Returns d(input); accumulates weight/bias gradients into the store.
pub fn linear_backward<F: Scalar>(
    store: &mut ParamStore<F>,
    p: LinearParams,
    x: &Array2<F>,
    dy: &Array2<F>,
) -> Array2<F> {
    let dw = dy.t().dot(x);
    let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    store.accumulate_grad(p.w, &dw);
    store.accumulate_grad(p.b, &db);
    dy.dot(store.value(p.w))
}

const LN_EPS: f64 = 1e-5;

pub struct LnCache<F> {
    xhat: Array2<F>,
    inv_std: Vec<F>,
}

pub fn layer_norm_forward<F: Scalar>(
    store: &ParamStore<F>,
    p: LnParams,
    x: &Array2<F>,
) -> (Array2<F>, LnCache<F>) {
    let d = x.ncols();
    let d_f = F::from_f64(d as f64);
    let eps = F::from_f64(LN_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in xhat.outer_iter_mut() {
        let mean = row.sum() / d_f;
        let var = row.iter().map(|v| (*v - mean) * (*v - mean)).fold(F::zero(), |a, b| a + b) / d_f;
        let istd = F::one() / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * istd;
        }
        inv_std.push(istd);
    }
    let y = &xhat * store.value(p.gamma) + store.value(p.beta);
    (y, LnCache { xhat, inv_std })
}

pub fn layer_norm_backward<F: Scalar>(
    store: &mut ParamStore<F>,
    p: LnParams,
    cache: &LnCache<F>,
    dy: &Array2<F>,
) -> Array2<F> {
    let d = dy.ncols();
    let d_f = F::from_f64(d as f64);
    let dgamma = (dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * store.value(p.gamma);
    store.accumulate_grad(p.gamma, &dgamma);
    store.accumulate_grad(p.beta, &dbeta);

    let mut dx = Array2::zeros(dy.raw_dim());
    for (i, istd) in cache.inv_std.iter().enumerate() {
        let dxh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let sum_dxh = dxh.sum();
        let sum_dxh_xh = dxh
            .iter()
            .zip(xh.iter())
            .map(|(a, b)| *a * *b)
            .fold(F::zero(), |a, b| a + b);
        let mut out = dx.row_mut(i);
        for j in 0..d {
            out[j] = *istd / d_f * (d_f * dxh[j] - sum_dxh - xh[j] * sum_dxh_xh);
        }
    }
    dx
}

pub fn relu<F: Scalar>(x: &Array2<F>) -> Array2<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

pub fn relu_backward<F: Scalar>(pre: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |g, p| {
        if *p <= F::zero() {
            *g = F::zero();
        }
    });
    dx
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<F: Scalar>(x: &Array2<F>) -> Array2<F> {
    let mut out = x.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Given softmax output `a` and upstream `da`, the input gradient is
/// `a * (da - rowsum(da * a))`.
pub fn softmax_backward<F: Scalar>(a: &Array2<F>, da: &Array2<F>) -> Array2<F> {
    let mut ds = da.clone();
    for (i, mut row) in ds.outer_iter_mut().enumerate() {
        let arow = a.row(i);
        let dot = row
            .iter()
            .zip(arow.iter())
            .map(|(x, y)| *x * *y)
            .fold(F::zero(), |acc, v| acc + v);
        for (g, av) in row.iter_mut().zip(arow.iter()) {
            *g = *av * (*g - dot);
        }
    }
    ds
}

pub struct AttnCache<F> {
    xq: Array2<F>,
    xkv: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    /// Per-head attention weights, each `(n_q, n_kv)`.
    weights: Vec<Array2<F>>,
    ctx: Array2<F>,
    heads: usize,
    causal: bool,
}

/// Multi-head attention. `xq` provides the queries, `xkv` keys and values;
/// with `causal` set, position `i` attends only to `j <= i` (requires
/// `n_q == n_kv`).
pub fn attention_forward<F: Scalar>(
    store: &ParamStore<F>,
    p: &AttnParams,
    xq: &Array2<F>,
    xkv: &Array2<F>,
    heads: usize,
    causal: bool,
) -> (Array2<F>, AttnCache<F>) {
    let d = xq.ncols();
    let hd = d / heads;
    let scale = F::from_f64(1.0 / (hd as f64).sqrt());

    let q = linear_forward(store, p.query, xq);
    let k = linear_forward(store, p.key, xkv);
    let v = linear_forward(store, p.value, xkv);

    let n_q = q.nrows();
    let mut ctx = Array2::zeros((n_q, d));
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut scores = qh.dot(&kh.t()) * scale;
        if causal {
            for ((i, j), val) in scores.indexed_iter_mut() {
                if j > i {
                    *val = F::neg_infinity();
                }
            }
        }
        let a = softmax_rows(&scores);
        let ctx_h = a.dot(&vh);
        ctx.slice_mut(cols).assign(&ctx_h);
        weights.push(a);
    }
    let out = linear_forward(store, p.output, &ctx);
    let cache = AttnCache {
        xq: xq.clone(),
        xkv: xkv.clone(),
        q,
        k,
        v,
        weights,
        ctx,
        heads,
        causal,
    };
    (out, cache)
}

/// Returns `(d_xq, d_xkv)`.
pub fn attention_backward<F: Scalar>(
    store: &mut ParamStore<F>,
    p: &AttnParams,
    cache: &AttnCache<F>,
    dout: &Array2<F>,
) -> (Array2<F>, Array2<F>) {
    let d = cache.q.ncols();
    let heads = cache.heads;
    let hd = d / heads;
    let scale = F::from_f64(1.0 / (hd as f64).sqrt());

    let dctx = linear_backward(store, p.output, &cache.ctx, dout);

    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for h in 0..heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        let qh = cache.q.slice(cols);
        let kh = cache.k.slice(cols);
        let vh = cache.v.slice(cols);
        let a = &cache.weights[h];
        let dctx_h = dctx.slice(cols);

        let da = dctx_h.dot(&vh.t());
        let dvh = a.t().dot(&dctx_h);
        let mut dscores = softmax_backward(a, &da);
        if cache.causal {
            for ((i, j), val) in dscores.indexed_iter_mut() {
                if j > i {
                    *val = F::zero();
                }
            }
        }
        let dqh = dscores.dot(&kh) * scale;
        let dkh = dscores.t().dot(&qh) * scale;

        dq.slice_mut(cols).assign(&dqh);
        dk.slice_mut(cols).assign(&dkh);
        dv.slice_mut(cols).assign(&dvh);
    }

    let dxq = linear_backward(store, p.query, &cache.xq, &dq);
    let mut dxkv = linear_backward(store, p.key, &cache.xkv, &dk);
    dxkv += &linear_backward(store, p.value, &cache.xkv, &dv);
    (dxq, dxkv)
}

pub struct FfCache<F> {
    x: Array2<F>,
    pre: Array2<F>,
    act: Array2<F>,
}

pub fn ff_forward<F: Scalar>(
    store: &ParamStore<F>,
    p: &FfParams,
    x: &Array2<F>,
) -> (Array2<F>, FfCache<F>) {
    let pre = linear_forward(store, p.expand, x);
    let act = relu(&pre);
    let y = linear_forward(store, p.contract, &act);
    (
        y,
        FfCache {
            x: x.clone(),
            pre,
            act,
        },
    )
}

pub fn ff_backward<F: Scalar>(
    store: &mut ParamStore<F>,
    p: &FfParams,
    cache: &FfCache<F>,
    dy: &Array2<F>,
) -> Array2<F> {
    let dact = linear_backward(store, p.contract, &cache.act, dy);
    let dpre = relu_backward(&cache.pre, &dact);
    linear_backward(store, p.expand, &cache.x, &dpre)
}

pub struct AdapterCache<F> {
    x: Array2<F>,
    pre: Array2<F>,
    act: Array2<F>,
}

/// Residual bottleneck adapter: `y = x + U relu(D x + b_D) + b_U`.
pub fn adapter_forward<F: Scalar>(
    store: &ParamStore<F>,
    p: &AdapterParams,
    x: &Array2<F>,
) -> (Array2<F>, AdapterCache<F>) {
    let pre = linear_forward(store, p.down, x);
    let act = relu(&pre);
    let y = x + &linear_forward(store, p.up, &act);
    (
        y,
        AdapterCache {
            x: x.clone(),
            pre,
            act,
        },
    )
}

pub fn adapter_backward<F: Scalar>(
    store: &mut ParamStore<F>,
    p: &AdapterParams,
    cache: &AdapterCache<F>,
    dy: &Array2<F>,
) -> Array2<F> {
    let dact = linear_backward(store, p.up, &cache.act, dy);
    let dpre = relu_backward(&cache.pre, &dact);
    let dx_branch = linear_backward(store, p.down, &cache.x, &dpre);
    dy + &dx_branch
}

/// Standalone adapter application on raw matrices (no parameter store), for
/// checking the module against an independent path. `x` is `(n, d)`,
/// `down_w` is `(bottleneck, d)`, `up_w` is `(d, bottleneck)`.
pub fn adapter_apply<F: Scalar>(
    x: &Array2<F>,
    down_w: &Array2<F>,
    down_b: &Array2<F>,
    up_w: &Array2<F>,
    up_b: &Array2<F>,
) -> Array2<F> {
    let pre = x.dot(&down_w.t()) + down_b;
    x + &(relu(&pre).dot(&up_w.t()) + up_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::store::ParamClass;
    use ndarray::arr2;

    fn store_with(values: Vec<Array2<f64>>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (i, v) in values.into_iter().enumerate() {
            s.add(format!("p{i}"), ParamClass::Attention, v);
        }
        s
    }

    #[test]
    fn linear_matches_by_hand() {
        let store = store_with(vec![arr2(&[[1.0, 2.0], [3.0, 4.0]]), arr2(&[[0.5, -0.5]])]);
        let p = LinearParams { w: 0, b: 1 };
        let x = arr2(&[[1.0, 1.0]]);
        let y = linear_forward(&store, p, &x);
        assert_eq!(y, arr2(&[[3.5, 6.5]]));
    }

    #[test]
    fn adapter_zero_up_projection_is_identity() {
        let d = 3;
        let b = 2;
        let down_w = arr2(&[[0.3, -0.2, 0.1], [0.5, 0.4, -0.6]]);
        let down_b = Array2::zeros((1, b));
        let up_w = Array2::zeros((d, b));
        let up_b = Array2::zeros((1, d));
        let x = arr2(&[[1.0, -2.0, 3.0], [0.5, 0.0, -1.0]]);
        let y = adapter_apply(&x, &down_w, &down_b, &up_w, &up_b);
        assert_eq!(y, x);
    }

    #[test]
    fn adapter_scalar_example() {
        // d = 1, bottleneck = 1: y = 3 + 2 * relu(1 * 3) = 9
        let x = arr2(&[[3.0]]);
        let y = adapter_apply(
            &x,
            &arr2(&[[1.0]]),
            &Array2::zeros((1, 1)),
            &arr2(&[[2.0]]),
            &Array2::zeros((1, 1)),
        );
        assert_eq!(y[[0, 0]], 9.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = arr2(&[[1.0, 2.0, 3.0], [-1.0, 0.0, 1.0]]);
        let a = softmax_rows(&x);
        for row in a.outer_iter() {
            assert!((row.sum() - 1.0f64).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let store = store_with(vec![
            Array2::ones((1, 4)),
            Array2::zeros((1, 4)),
        ]);
        let p = LnParams { gamma: 0, beta: 1 };
        let x = arr2(&[[1.0, 2.0, 3.0, 4.0]]);
        let (y, _) = layer_norm_forward(&store, p, &x);
        assert!(y.row(0).sum().abs() < 1e-9);
        let var: f64 = y.row(0).iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((var - 1.0).abs() < 1e-4);
    }

    /// Finite-difference check of a full attention block (all inputs and
    /// parameters) on a tiny instance.
    #[test]
    fn attention_backward_matches_finite_difference() {
        let d = 4;
        let heads = 2;
        let n = 3;
        let mk = |seed: u64, rows: usize, cols: usize| {
            let mut v = Vec::with_capacity(rows * cols);
            let mut state = seed;
            for _ in 0..rows * cols {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                v.push(((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0);
            }
            Array2::from_shape_vec((rows, cols), v).unwrap()
        };
        let mut store = store_with(vec![
            mk(1, d, d),
            mk(2, 1, d),
            mk(3, d, d),
            mk(4, 1, d),
            mk(5, d, d),
            mk(6, 1, d),
            mk(7, d, d),
            mk(8, 1, d),
        ]);
        let p = AttnParams {
            query: LinearParams { w: 0, b: 1 },
            key: LinearParams { w: 2, b: 3 },
            value: LinearParams { w: 4, b: 5 },
            output: LinearParams { w: 6, b: 7 },
        };
        let x = mk(9, n, d);

        // loss = sum(attention(x, x))
        let loss = |store: &ParamStore<f64>, x: &Array2<f64>| -> f64 {
            let (y, _) = attention_forward(store, &p, x, x, heads, true);
            y.sum()
        };

        let (y, cache) = attention_forward(&store, &p, &x, &x, heads, true);
        let dout = Array2::ones(y.raw_dim());
        let (dxq, dxkv) = attention_backward(&mut store, &p, &cache, &dout);
        let dx = &dxq + &dxkv;

        let h = 1e-6;
        // input gradient
        for idx in [(0, 0), (1, 2), (2, 3)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let num = (loss(&store, &xp) - loss(&store, &xm)) / (2.0 * h);
            assert!(
                (num - dx[idx]).abs() / num.abs().max(dx[idx].abs()).max(1e-8) < 1e-5,
                "dx{idx:?}: analytic {} vs numeric {num}",
                dx[idx]
            );
        }
        // one weight per projection
        for pid in [0usize, 2, 4, 6] {
            let idx = (1, 2);
            let analytic = store.grad(pid)[idx];
            let orig = store.value(pid)[idx];
            store.value_mut(pid)[idx] = orig + h;
            let lp = loss(&store, &x);
            store.value_mut(pid)[idx] = orig - h;
            let lm = loss(&store, &x);
            store.value_mut(pid)[idx] = orig;
            let num = (lp - lm) / (2.0 * h);
            assert!(
                (num - analytic).abs() / num.abs().max(analytic.abs()).max(1e-8) < 1e-5,
                "param {pid}: analytic {analytic} vs numeric {num}"
            );
        }
    }
}
