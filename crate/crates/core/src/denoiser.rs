//! Transformer-encoder denoiser.
//!
//! Each component slot becomes one token built from three concatenated
//! sub-embeddings (position, size, class). Every sub-embedding receives one
//! of two trainable condition vectors depending on whether that attribute
//! is pinned. A time token produced by an MLP over sinusoidal features is
//! prepended to the sequence. No sequence-order encoding is used, so the
//! network is equivariant to permutations of the component slots.

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::AttrFlags;
use crate::nn::{encoder_backward, encoder_forward, silu, silu_grad, EncoderLayer, EncoderStackCache, Linear, Parameters, SeqShape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_pos: usize,
    pub d_size: usize,
    pub d_cls: usize,
    pub ff_dim: usize,
    /// Width of the sinusoidal featurization of `t` fed to the time MLP.
    pub time_features: usize,
    /// Number of real classes `K`.
    pub num_classes: usize,
    pub n_max: usize,
    pub steps: usize,
    pub dropout: f64,
}

impl DenoiserConfig {
    /// Full-size model: 4 layers, 8 heads, width 512.
    pub fn full_size(num_classes: usize, n_max: usize, steps: usize) -> Self {
        Self::scaled(512, 4, 8, num_classes, n_max, steps)
    }

    /// Reduced model used for tests and desk-scale runs.
    pub fn desk(num_classes: usize, n_max: usize, steps: usize) -> Self {
        Self::scaled(64, 2, 4, num_classes, n_max, steps)
    }

    /// Splits `d_model` 1/4 position, 1/4 size, 1/2 class.
    pub fn scaled(d_model: usize, n_layers: usize, n_heads: usize, num_classes: usize, n_max: usize, steps: usize) -> Self {
        let quarter = d_model / 4;
        Self {
            d_model,
            n_layers,
            n_heads,
            d_pos: quarter,
            d_size: quarter,
            d_cls: d_model - 2 * quarter,
            ff_dim: 4 * d_model,
            time_features: 128,
            num_classes,
            n_max,
            steps,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_pos + self.d_size + self.d_cls != self.d_model {
            return Err(Error::Config(format!(
                "sub-embedding widths {}+{}+{} do not add up to {}",
                self.d_pos, self.d_size, self.d_cls, self.d_model
            )));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!("d_model {} not divisible by {} heads", self.d_model, self.n_heads)));
        }
        if self.num_classes == 0 || self.n_max == 0 || self.n_layers == 0 {
            return Err(Error::Config("classes, slots and layers must be positive".into()));
        }
        if self.time_features == 0 || self.time_features % 2 != 0 {
            return Err(Error::Config("time feature width must be even and positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Every trainable tensor of the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    /// `(K + 1, d_cls)`; the last row embeds MASK.
    pub class_table: Array2<f64>,
    pub pos: Linear,
    pub size: Linear,
    /// `(2, width)`: row 0 = attribute diffused, row 1 = attribute pinned.
    pub cond_pos: Array2<f64>,
    pub cond_size: Array2<f64>,
    pub cond_cls: Array2<f64>,
    pub time1: Linear,
    pub time2: Linear,
    pub layers: Vec<EncoderLayer>,
    pub box_head: Linear,
    pub class_head: Linear,
}

impl DenoiserParams {
    pub fn init<R: Rng + ?Sized>(cfg: &DenoiserConfig, rng: &mut R) -> Self {
        let normal = |r: usize, c: usize, rng: &mut R| crate::nn::normal_init(r, c, 0.02, rng);
        Self {
            class_table: normal(cfg.num_classes + 1, cfg.d_cls, rng),
            pos: Linear::new(2, cfg.d_pos, rng),
            size: Linear::new(2, cfg.d_size, rng),
            cond_pos: normal(2, cfg.d_pos, rng),
            cond_size: normal(2, cfg.d_size, rng),
            cond_cls: normal(2, cfg.d_cls, rng),
            time1: Linear::new(cfg.time_features, cfg.d_model, rng),
            time2: Linear::new(cfg.d_model, cfg.d_model, rng),
            layers: (0..cfg.n_layers)
                .map(|_| EncoderLayer::new(cfg.d_model, cfg.n_heads, cfg.ff_dim, rng))
                .collect(),
            box_head: Linear::new(cfg.d_model, 4, rng),
            class_head: Linear::new(cfg.d_model, cfg.num_classes, rng),
        }
    }

    pub fn zeros(cfg: &DenoiserConfig) -> Self {
        Self {
            class_table: Array2::zeros((cfg.num_classes + 1, cfg.d_cls)),
            pos: Linear::zeros(2, cfg.d_pos),
            size: Linear::zeros(2, cfg.d_size),
            cond_pos: Array2::zeros((2, cfg.d_pos)),
            cond_size: Array2::zeros((2, cfg.d_size)),
            cond_cls: Array2::zeros((2, cfg.d_cls)),
            time1: Linear::zeros(cfg.time_features, cfg.d_model),
            time2: Linear::zeros(cfg.d_model, cfg.d_model),
            layers: (0..cfg.n_layers)
                .map(|_| EncoderLayer::zeros(cfg.d_model, cfg.n_heads, cfg.ff_dim))
                .collect(),
            box_head: Linear::zeros(cfg.d_model, 4),
            class_head: Linear::zeros(cfg.d_model, cfg.num_classes),
        }
    }
}

impl Parameters for DenoiserParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        let p = |n: &str| if prefix.is_empty() { n.to_string() } else { format!("{prefix}.{n}") };
        f(&p("class_table"), &self.class_table);
        self.pos.visit(&p("pos"), f);
        self.size.visit(&p("size"), f);
        f(&p("cond_pos"), &self.cond_pos);
        f(&p("cond_size"), &self.cond_size);
        f(&p("cond_cls"), &self.cond_cls);
        self.time1.visit(&p("time1"), f);
        self.time2.visit(&p("time2"), f);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&p(&format!("layers.{i}")), f);
        }
        self.box_head.visit(&p("box_head"), f);
        self.class_head.visit(&p("class_head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        let p = |n: &str| if prefix.is_empty() { n.to_string() } else { format!("{prefix}.{n}") };
        f(&p("class_table"), &mut self.class_table);
        self.pos.visit_mut(&p("pos"), f);
        self.size.visit_mut(&p("size"), f);
        f(&p("cond_pos"), &mut self.cond_pos);
        f(&p("cond_size"), &mut self.cond_size);
        f(&p("cond_cls"), &mut self.cond_cls);
        self.time1.visit_mut(&p("time1"), f);
        self.time2.visit_mut(&p("time2"), f);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&p(&format!("layers.{i}")), f);
        }
        self.box_head.visit_mut(&p("box_head"), f);
        self.class_head.visit_mut(&p("class_head"), f);
    }
}

/// One denoiser query. Pinned attributes already carry their clean values
/// in `x_t` / `y_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserInput {
    /// `(N, 4)` boxes in signal space.
    pub x_t: Array2<f64>,
    /// Class indices; `K` is MASK.
    pub y_t: Vec<usize>,
    pub flags: Vec<AttrFlags>,
    pub t: usize,
    /// Padding slots are hidden from attention and ignored by the losses.
    pub pad: Vec<bool>,
}

impl DenoiserInput {
    pub fn slots(&self) -> usize {
        self.y_t.len()
    }
}

/// Predictions for a batch, stacked item-major: rows `b * N .. (b + 1) * N`
/// belong to item `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub boxes: Array2<f64>,
    pub logits: Array2<f64>,
    pub slots: usize,
}

impl DenoiserOutput {
    pub fn item_boxes(&self, b: usize) -> Array2<f64> {
        self.boxes.slice(s![b * self.slots..(b + 1) * self.slots, ..]).to_owned()
    }

    pub fn item_logits(&self, b: usize) -> Array2<f64> {
        self.logits.slice(s![b * self.slots..(b + 1) * self.slots, ..]).to_owned()
    }
}

struct EmbedCache {
    time_feats: Array2<f64>,
    time_pre: Array2<f64>,
    time_act: Array2<f64>,
    pos_in: Array2<f64>,
    size_in: Array2<f64>,
    classes: Vec<usize>,
    flags: Vec<AttrFlags>,
}

pub struct ForwardCache {
    shape: SeqShape,
    slots: usize,
    embed: EmbedCache,
    encoder: EncoderStackCache,
    comp_out: Array2<f64>,
}

/// Sinusoidal features of an integer step.
pub fn time_features(t: usize, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = vec![0.0; width];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: DenoiserParams,
}

impl Denoiser {
    pub fn new<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = DenoiserParams::init(&config, rng);
        Ok(Self { config, params })
    }

    pub fn from_params(config: DenoiserConfig, params: DenoiserParams) -> Result<Self> {
        config.validate()?;
        let expected = DenoiserParams::zeros(&config);
        let mut shapes = Vec::new();
        expected.visit("", &mut |n, a| shapes.push((n.to_string(), a.dim())));
        let mut i = 0;
        let mut bad = None;
        params.visit("", &mut |n, a| {
            if bad.is_none() && (i >= shapes.len() || shapes[i].1 != a.dim()) {
                bad = Some(n.to_string());
            }
            i += 1;
        });
        if let Some(name) = bad.or_else(|| (i != shapes.len()).then(|| "tensor count".to_string())) {
            return Err(Error::Shape(format!("parameter {name} does not match the config")));
        }
        Ok(Self { config, params })
    }

    fn check_batch(&self, batch: &[DenoiserInput]) -> Result<usize> {
        let first = batch.first().ok_or_else(|| Error::Empty("denoiser batch".into()))?;
        let n = first.slots();
        let k = self.config.num_classes;
        for (b, item) in batch.iter().enumerate() {
            if item.x_t.dim() != (n, 4) || item.y_t.len() != n || item.flags.len() != n || item.pad.len() != n {
                return Err(Error::Shape(format!("batch item {b} does not have {n} slots")));
            }
            if let Some(&c) = item.y_t.iter().find(|&&c| c > k) {
                return Err(Error::Shape(format!("batch item {b}: class index {c} exceeds MASK {k}")));
            }
        }
        Ok(n)
    }

    /// Component tokens `(N, d_model)` and the time token `(1, d_model)` of
    /// a single input.
    pub fn embed(&self, input: &DenoiserInput) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_batch(std::slice::from_ref(input))?;
        let (tokens, _) = self.embed_batch(std::slice::from_ref(input));
        let seq = input.slots() + 1;
        Ok((tokens.slice(s![1..seq, ..]).to_owned(), tokens.slice(s![0..1, ..]).to_owned()))
    }

    fn embed_batch(&self, batch: &[DenoiserInput]) -> (Array2<f64>, EmbedCache) {
        let cfg = &self.config;
        let p = &self.params;
        let n = batch[0].slots();
        let seq = n + 1;
        let rows = batch.len() * n;

        let mut time_feats = Array2::zeros((batch.len(), cfg.time_features));
        for (b, item) in batch.iter().enumerate() {
            for (j, v) in time_features(item.t, cfg.time_features).into_iter().enumerate() {
                time_feats[[b, j]] = v;
            }
        }
        let time_pre = p.time1.forward(&time_feats);
        let time_act = time_pre.mapv(silu);
        let time_tok = p.time2.forward(&time_act);

        let mut pos_in = Array2::zeros((rows, 2));
        let mut size_in = Array2::zeros((rows, 2));
        let mut classes = Vec::with_capacity(rows);
        let mut flags = Vec::with_capacity(rows);
        for (b, item) in batch.iter().enumerate() {
            for i in 0..n {
                let r = b * n + i;
                pos_in[[r, 0]] = item.x_t[[i, 0]];
                pos_in[[r, 1]] = item.x_t[[i, 1]];
                size_in[[r, 0]] = item.x_t[[i, 2]];
                size_in[[r, 1]] = item.x_t[[i, 3]];
                classes.push(item.y_t[i]);
                flags.push(item.flags[i]);
            }
        }
        let pos_emb = p.pos.forward(&pos_in);
        let size_emb = p.size.forward(&size_in);

        let (dp, ds) = (cfg.d_pos, cfg.d_size);
        let mut tokens = Array2::zeros((batch.len() * seq, cfg.d_model));
        for b in 0..batch.len() {
            tokens.row_mut(b * seq).assign(&time_tok.row(b));
            for i in 0..n {
                let r = b * n + i;
                let f = flags[r];
                let mut row = tokens.row_mut(b * seq + 1 + i);
                let mut pos_slice = row.slice_mut(s![..dp]);
                pos_slice.assign(&pos_emb.row(r));
                pos_slice += &p.cond_pos.row(f.pos as usize);
                let mut size_slice = row.slice_mut(s![dp..dp + ds]);
                size_slice.assign(&size_emb.row(r));
                size_slice += &p.cond_size.row(f.size as usize);
                let mut cls_slice = row.slice_mut(s![dp + ds..]);
                cls_slice.assign(&p.class_table.row(classes[r]));
                cls_slice += &p.cond_cls.row(f.cls as usize);
            }
        }
        (
            tokens,
            EmbedCache {
                time_feats,
                time_pre,
                time_act,
                pos_in,
                size_in,
                classes,
                flags,
            },
        )
    }

    fn key_pad(batch: &[DenoiserInput]) -> Vec<bool> {
        let mut pad = Vec::with_capacity(batch.len() * (batch[0].slots() + 1));
        for item in batch {
            pad.push(false);
            pad.extend_from_slice(&item.pad);
        }
        pad
    }

    /// Inference forward pass (no dropout).
    pub fn forward(&self, batch: &[DenoiserInput]) -> Result<DenoiserOutput> {
        self.forward_train(batch, None).map(|(o, _)| o)
    }

    /// Forward pass keeping everything needed by [`Denoiser::backward`].
    pub fn forward_train(
        &self,
        batch: &[DenoiserInput],
        dropout_rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<(DenoiserOutput, ForwardCache)> {
        let n = self.check_batch(batch)?;
        let seq = n + 1;
        let shape = SeqShape {
            batch: batch.len(),
            seq,
        };
        let (tokens, embed) = self.embed_batch(batch);
        let key_pad = Self::key_pad(batch);
        let dropout = dropout_rng.map(|rng| (self.config.dropout, rng));
        let (enc, encoder) = encoder_forward(&self.params.layers, tokens, shape, &key_pad, dropout);

        let mut comp_out = Array2::zeros((batch.len() * n, self.config.d_model));
        for b in 0..batch.len() {
            comp_out
                .slice_mut(s![b * n..(b + 1) * n, ..])
                .assign(&enc.slice(s![b * seq + 1..(b + 1) * seq, ..]));
        }
        let boxes = self.params.box_head.forward(&comp_out);
        let logits = self.params.class_head.forward(&comp_out);
        Ok((
            DenoiserOutput { boxes, logits, slots: n },
            ForwardCache {
                shape,
                slots: n,
                embed,
                encoder,
                comp_out,
            },
        ))
    }

    /// Parameter gradients given upstream gradients on both heads.
    pub fn backward(&self, cache: &ForwardCache, d_boxes: &Array2<f64>, d_logits: &Array2<f64>) -> DenoiserParams {
        let cfg = &self.config;
        let p = &self.params;
        let e = &cache.embed;
        let mut g = DenoiserParams::zeros(cfg);
        let n = cache.slots;
        let seq = cache.shape.seq;
        let batch = cache.shape.batch;

        let mut d_comp = p.box_head.backward(&cache.comp_out, d_boxes, &mut g.box_head);
        d_comp += &p.class_head.backward(&cache.comp_out, d_logits, &mut g.class_head);
        let mut d_enc = Array2::zeros((batch * seq, cfg.d_model));
        for b in 0..batch {
            d_enc
                .slice_mut(s![b * seq + 1..(b + 1) * seq, ..])
                .assign(&d_comp.slice(s![b * n..(b + 1) * n, ..]));
        }
        let d_tokens = encoder_backward(&p.layers, d_enc, &cache.encoder, cache.shape, &mut g.layers);

        let (dp, ds) = (cfg.d_pos, cfg.d_size);
        let mut d_time = Array2::zeros((batch, cfg.d_model));
        let mut d_pos = Array2::zeros((batch * n, dp));
        let mut d_size = Array2::zeros((batch * n, ds));
        for b in 0..batch {
            d_time.row_mut(b).assign(&d_tokens.row(b * seq));
            for i in 0..n {
                let r = b * n + i;
                let row = d_tokens.row(b * seq + 1 + i);
                let f = e.flags[r];
                let gp = row.slice(s![..dp]);
                let gs = row.slice(s![dp..dp + ds]);
                let gc = row.slice(s![dp + ds..]);
                d_pos.row_mut(r).assign(&gp);
                d_size.row_mut(r).assign(&gs);
                let mut cp = g.cond_pos.row_mut(f.pos as usize);
                cp += &gp;
                let mut cs = g.cond_size.row_mut(f.size as usize);
                cs += &gs;
                let mut cc = g.cond_cls.row_mut(f.cls as usize);
                cc += &gc;
                let mut table = g.class_table.row_mut(e.classes[r]);
                table += &gc;
            }
        }
        p.pos.backward(&e.pos_in, &d_pos, &mut g.pos);
        p.size.backward(&e.size_in, &d_size, &mut g.size);
        let mut d_act = p.time2.backward(&e.time_act, &d_time, &mut g.time2);
        ndarray::Zip::from(&mut d_act)
            .and(&e.time_pre)
            .for_each(|d, &x| *d *= silu_grad(x));
        p.time1.backward(&e.time_feats, &d_act, &mut g.time1);
        g
    }
}
