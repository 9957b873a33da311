//! Minimal dense building blocks with hand-written backward passes:
//! linear maps, layer norm, masked multi-head self-attention, post-norm
//! encoder layers and the Adam optimizer.
//!
//! All activations are row-major `(rows, features)` matrices. A batch of
//! `B` sequences of length `L` is stacked into `B * L` rows; attention is
//! the only block that looks across rows.

use ndarray::{s, Array2, Axis};
use rand::Rng;

/// Uniform visitation of every trainable tensor, in a fixed order.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, a| n += a.len());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, a| a.fill(0.0));
    }

    fn named_tensors(&self) -> Vec<(String, Array2<f64>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, a| out.push((name.to_string(), a.clone())));
        out
    }

    fn squared_norm(&self) -> f64 {
        let mut n = 0.0;
        self.visit("", &mut |_, a| n += a.iter().map(|v| v * v).sum::<f64>());
        n
    }

    fn scale(&mut self, factor: f64) {
        self.visit_mut("", &mut |_, a| *a *= factor);
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Glorot-uniform initialization.
pub fn xavier<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound))
}

/// Entries drawn from `N(0, std^2)`.
pub fn normal_init<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || std * rng.sample::<f64, _>(rand_distr::StandardNormal))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `(in, out)`.
    pub w: Array2<f64>,
    /// `(1, out)`.
    pub b: Array2<f64>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self {
            w: xavier(fan_in, fan_out, rng),
            b: Array2::zeros((1, fan_out)),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array2::zeros((1, fan_out)),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

impl Parameters for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        f(&join(prefix, "w"), &self.w);
        f(&join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array2<f64>,
    pub beta: Array2<f64>,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array2::ones((1, dim)),
            beta: Array2::zeros((1, dim)),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            gamma: Array2::zeros((1, dim)),
            beta: Array2::zeros((1, dim)),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row *= inv;
            inv_std.push(inv);
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, dy: &Array2<f64>, cache: &LayerNormCache, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let d = dy.ncols() as f64;
        let mut dx = Array2::zeros(dy.dim());
        for (i, (mut out, g)) in dx.rows_mut().into_iter().zip(dxhat.rows()).enumerate() {
            let xh = cache.xhat.row(i);
            let sum_g = g.sum();
            let sum_gx = g.dot(&xh);
            let inv = cache.inv_std[i];
            for j in 0..out.len() {
                out[j] = inv / d * (d * g[j] - sum_g - xh[j] * sum_gx);
            }
        }
        dx
    }
}

impl Parameters for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Shape of a stacked batch: `batch` sequences of `seq` tokens each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqShape {
    pub batch: usize,
    pub seq: usize,
}

impl SeqShape {
    pub fn rows(&self) -> usize {
        self.batch * self.seq
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// One `(seq, seq)` probability matrix per (sequence, head).
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            heads,
            q: Linear::new(dim, dim, rng),
            k: Linear::new(dim, dim, rng),
            v: Linear::new(dim, dim, rng),
            o: Linear::new(dim, dim, rng),
        }
    }

    pub fn zeros(dim: usize, heads: usize) -> Self {
        Self {
            heads,
            q: Linear::zeros(dim, dim),
            k: Linear::zeros(dim, dim),
            v: Linear::zeros(dim, dim),
            o: Linear::zeros(dim, dim),
        }
    }

    /// `key_pad[r]` excludes row `r` as a key for every query of its sequence.
    /// Each sequence must keep at least one key.
    pub fn forward(&self, x: &Array2<f64>, shape: SeqShape, key_pad: &[bool]) -> (Array2<f64>, AttentionCache) {
        let dim = x.ncols();
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.q.forward(x);
        let k = self.k.forward(x);
        let v = self.v.forward(x);
        let mut ctx = Array2::zeros(x.dim());
        let mut probs = Vec::with_capacity(shape.batch * self.heads);
        for b in 0..shape.batch {
            let rows = b * shape.seq..(b + 1) * shape.seq;
            let pad = &key_pad[rows.clone()];
            for h in 0..self.heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = q.slice(s![rows.clone(), cols.clone()]);
                let kh = k.slice(s![rows.clone(), cols.clone()]);
                let vh = v.slice(s![rows.clone(), cols.clone()]);
                let mut scores = qh.dot(&kh.t()) * scale;
                for mut row in scores.rows_mut() {
                    for (j, p) in pad.iter().enumerate() {
                        if *p {
                            row[j] = f64::NEG_INFINITY;
                        }
                    }
                    let max = row.fold(f64::NEG_INFINITY, |a, &c| a.max(c));
                    row.mapv_inplace(|c| (c - max).exp());
                    let total = row.sum();
                    row /= total;
                }
                ctx.slice_mut(s![rows.clone(), cols]).assign(&scores.dot(&vh));
                probs.push(scores);
            }
        }
        let out = self.o.forward(&ctx);
        (
            out,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                probs,
                ctx,
            },
        )
    }

    pub fn backward(
        &self,
        dout: &Array2<f64>,
        cache: &AttentionCache,
        shape: SeqShape,
        grad: &mut MultiHeadAttention,
    ) -> Array2<f64> {
        let dim = dout.ncols();
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dctx = self.o.backward(&cache.ctx, dout, &mut grad.o);
        let mut dq = Array2::zeros(dout.dim());
        let mut dk = Array2::zeros(dout.dim());
        let mut dv = Array2::zeros(dout.dim());
        for b in 0..shape.batch {
            let rows = b * shape.seq..(b + 1) * shape.seq;
            for h in 0..self.heads {
                let cols = h * dh..(h + 1) * dh;
                let p = &cache.probs[b * self.heads + h];
                let dc = dctx.slice(s![rows.clone(), cols.clone()]);
                let qh = cache.q.slice(s![rows.clone(), cols.clone()]);
                let kh = cache.k.slice(s![rows.clone(), cols.clone()]);
                let vh = cache.v.slice(s![rows.clone(), cols.clone()]);
                dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&p.t().dot(&dc));
                let dp = dc.dot(&vh.t());
                let mut ds = p * &dp;
                for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                    let dot = row.sum();
                    for (r, &pv) in row.iter_mut().zip(prow.iter()) {
                        *r -= pv * dot;
                    }
                }
                ds *= scale;
                dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&kh));
                dk.slice_mut(s![rows.clone(), cols]).assign(&ds.t().dot(&qh));
            }
        }
        let mut dx = self.q.backward(&cache.x, &dq, &mut grad.q);
        dx += &self.k.backward(&cache.x, &dk, &mut grad.k);
        dx += &self.v.backward(&cache.x, &dv, &mut grad.v);
        dx
    }
}

impl Parameters for MultiHeadAttention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        self.q.visit(&join(prefix, "q"), f);
        self.k.visit(&join(prefix, "k"), f);
        self.v.visit(&join(prefix, "v"), f);
        self.o.visit(&join(prefix, "o"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.q.visit_mut(&join(prefix, "q"), f);
        self.k.visit_mut(&join(prefix, "k"), f);
        self.v.visit_mut(&join(prefix, "v"), f);
        self.o.visit_mut(&join(prefix, "o"), f);
    }
}

/// Inverted-dropout mask: entries are `0` or `1 / (1 - p)`.
fn dropout_mask<R: Rng + ?Sized>(dim: (usize, usize), p: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(dim, || if rng.random::<f64>() < p { 0.0 } else { keep })
}

/// Post-norm encoder layer with a ReLU feed-forward block.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
}

pub struct EncoderLayerCache {
    attn: AttentionCache,
    drop_attn: Option<Array2<f64>>,
    ln1: LayerNormCache,
    h: Array2<f64>,
    f1: Array2<f64>,
    r: Array2<f64>,
    drop_ff: Option<Array2<f64>>,
    ln2: LayerNormCache,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, ff_dim: usize, rng: &mut R) -> Self {
        Self {
            attn: MultiHeadAttention::new(dim, heads, rng),
            ln1: LayerNorm::new(dim),
            ff1: Linear::new(dim, ff_dim, rng),
            ff2: Linear::new(ff_dim, dim, rng),
            ln2: LayerNorm::new(dim),
        }
    }

    pub fn zeros(dim: usize, heads: usize, ff_dim: usize) -> Self {
        Self {
            attn: MultiHeadAttention::zeros(dim, heads),
            ln1: LayerNorm::zeros(dim),
            ff1: Linear::zeros(dim, ff_dim),
            ff2: Linear::zeros(ff_dim, dim),
            ln2: LayerNorm::zeros(dim),
        }
    }

    /// Dropout is applied only when `dropout` carries a rate and an rng.
    pub fn forward(
        &self,
        x: &Array2<f64>,
        shape: SeqShape,
        key_pad: &[bool],
        dropout: Option<(f64, &mut dyn rand::RngCore)>,
    ) -> (Array2<f64>, EncoderLayerCache) {
        let (a, attn) = self.attn.forward(x, shape, key_pad);
        let (drop_attn, drop_ff) = match dropout {
            Some((p, rng)) if p > 0.0 => (
                Some(dropout_mask(a.dim(), p, rng)),
                Some(dropout_mask((x.nrows(), self.ff2.w.ncols()), p, rng)),
            ),
            _ => (None, None),
        };
        let a = match &drop_attn {
            Some(m) => a * m,
            None => a,
        };
        let (h, ln1) = self.ln1.forward(&(x + &a));
        let f1 = self.ff1.forward(&h);
        let r = f1.mapv(|v| v.max(0.0));
        let f2 = self.ff2.forward(&r);
        let f2 = match &drop_ff {
            Some(m) => f2 * m,
            None => f2,
        };
        let (out, ln2) = self.ln2.forward(&(&h + &f2));
        (
            out,
            EncoderLayerCache {
                attn,
                drop_attn,
                ln1,
                h,
                f1,
                r,
                drop_ff,
                ln2,
            },
        )
    }

    pub fn backward(
        &self,
        dout: &Array2<f64>,
        cache: &EncoderLayerCache,
        shape: SeqShape,
        grad: &mut EncoderLayer,
    ) -> Array2<f64> {
        let dsum2 = self.ln2.backward(dout, &cache.ln2, &mut grad.ln2);
        let mut dh = dsum2.clone();
        let df2 = match &cache.drop_ff {
            Some(m) => dsum2 * m,
            None => dsum2,
        };
        let mut dr = self.ff2.backward(&cache.r, &df2, &mut grad.ff2);
        ndarray::Zip::from(&mut dr).and(&cache.f1).for_each(|d, &f| {
            if f <= 0.0 {
                *d = 0.0;
            }
        });
        dh += &self.ff1.backward(&cache.h, &dr, &mut grad.ff1);
        let dsum1 = self.ln1.backward(&dh, &cache.ln1, &mut grad.ln1);
        let da = match &cache.drop_attn {
            Some(m) => &dsum1 * m,
            None => dsum1.clone(),
        };
        dsum1 + self.attn.backward(&da, &cache.attn, shape, &mut grad.attn)
    }
}

impl Parameters for EncoderLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        self.attn.visit(&join(prefix, "attn"), f);
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.ff1.visit(&join(prefix, "ff1"), f);
        self.ff2.visit(&join(prefix, "ff2"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.ff1.visit_mut(&join(prefix, "ff1"), f);
        self.ff2.visit_mut(&join(prefix, "ff2"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
    }
}

/// A stack of encoder layers sharing one batch shape and key mask.
pub struct EncoderStackCache {
    layers: Vec<EncoderLayerCache>,
}

pub fn encoder_forward(
    layers: &[EncoderLayer],
    x: Array2<f64>,
    shape: SeqShape,
    key_pad: &[bool],
    mut dropout: Option<(f64, &mut dyn rand::RngCore)>,
) -> (Array2<f64>, EncoderStackCache) {
    let mut h = x;
    let mut caches = Vec::with_capacity(layers.len());
    for layer in layers {
        let d = dropout.as_mut().map(|(p, rng)| (*p, &mut **rng as &mut dyn rand::RngCore));
        let (out, cache) = layer.forward(&h, shape, key_pad, d);
        caches.push(cache);
        h = out;
    }
    (h, EncoderStackCache { layers: caches })
}

pub fn encoder_backward(
    layers: &[EncoderLayer],
    dout: Array2<f64>,
    cache: &EncoderStackCache,
    shape: SeqShape,
    grads: &mut [EncoderLayer],
) -> Array2<f64> {
    let mut d = dout;
    for ((layer, c), g) in layers.iter().zip(&cache.layers).zip(grads.iter_mut()).rev() {
        d = layer.backward(&d, c, shape, g);
    }
    d
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Adam with bias correction; state tensors follow the visitation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new<P: Parameters + ?Sized>(params: &P) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, a| m.push(Array2::zeros(a.dim())));
        let v = m.clone();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    pub fn update<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &P, lr: f64) {
        let mut g = Vec::with_capacity(self.m.len());
        grads.visit("", &mut |_, a| g.push(a.clone()));
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let mut i = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut("", &mut |_, p| {
            let (m, v, g) = (&mut ms[i], &mut vs[i], &g[i]);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
            i += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn numeric_check<F: FnMut(&Array2<f64>) -> f64>(x: &Array2<f64>, analytic: &Array2<f64>, mut f: F) {
        let h = 1e-5;
        for idx in 0..x.len() {
            let mut p = x.clone();
            p.as_slice_mut().unwrap()[idx] += h;
            let mut m = x.clone();
            m.as_slice_mut().unwrap()[idx] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[idx];
            assert!((fd - a).abs() <= 1e-6 * (1.0 + fd.abs()), "idx {idx}: fd {fd} vs {a}");
        }
    }

    #[test]
    fn layer_norm_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ln = LayerNorm {
            gamma: normal_init(1, 6, 1.0, &mut rng),
            beta: normal_init(1, 6, 1.0, &mut rng),
        };
        let x = normal_init(3, 6, 1.0, &mut rng);
        let w = normal_init(3, 6, 1.0, &mut rng);
        let (_, cache) = ln.forward(&x);
        let mut g = LayerNorm::zeros(6);
        let dx = ln.backward(&w, &cache, &mut g);
        numeric_check(&x, &dx, |x| (ln.forward(x).0 * &w).sum());
    }

    #[test]
    fn attention_input_gradient_with_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let attn = MultiHeadAttention::new(8, 2, &mut rng);
        let shape = SeqShape { batch: 2, seq: 3 };
        let pad = [false, false, true, false, true, true];
        let x = normal_init(6, 8, 1.0, &mut rng);
        let w = normal_init(6, 8, 1.0, &mut rng);
        let (_, cache) = attn.forward(&x, shape, &pad);
        let mut g = MultiHeadAttention::zeros(8, 2);
        let dx = attn.backward(&w, &cache, shape, &mut g);
        numeric_check(&x, &dx, |x| (attn.forward(x, shape, &pad).0 * &w).sum());
    }

    #[test]
    fn padded_keys_do_not_influence_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let attn = MultiHeadAttention::new(4, 2, &mut rng);
        let shape = SeqShape { batch: 1, seq: 3 };
        let pad = [false, false, true];
        let x = normal_init(3, 4, 1.0, &mut rng);
        let mut y = x.clone();
        y.row_mut(2).fill(7.0);
        let a = attn.forward(&x, shape, &pad).0;
        let b = attn.forward(&y, shape, &pad).0;
        for r in 0..2 {
            for c in 0..4 {
                assert!((a[[r, c]] - b[[r, c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut layer = Linear::new(3, 2, &mut rng);
        let before = layer.clone();
        let mut grad = Linear::zeros(3, 2);
        grad.w.fill(0.3);
        let mut adam = Adam::new(&layer);
        adam.update(&mut layer, &grad, 0.0);
        assert_eq!(layer, before);
        adam.update(&mut layer, &grad, 0.1);
        assert_ne!(layer, before);
    }

    #[test]
    fn silu_derivative() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let fd = (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6;
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
