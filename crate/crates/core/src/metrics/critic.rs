//! Real-vs-noised layout classifier whose pooled features feed FID.

use std::path::Path;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{push_params, Container};
use crate::error::{Error, Result};
use crate::layout::{BBox, Component, DatasetSchema, Layout};
use crate::nn::{encoder_backward, encoder_forward, normal_init, Adam, EncoderLayer, Linear, Parameters, SeqShape};

/// Below this many layouts critic training refuses to run.
pub const MIN_CRITIC_LAYOUTS: usize = 64;
pub const RECOMMENDED_CRITIC_LAYOUTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub noise_sigma: f64,
    pub class_resample: f64,
    /// Fraction of layouts held out to measure accuracy.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            steps: 1500,
            batch_size: 64,
            lr: 1e-3,
            noise_sigma: 0.05,
            class_resample: 0.1,
            holdout: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams {
    pub summary: Array2<f64>,
    pub box_embed: Linear,
    pub class_table: Array2<f64>,
    pub layers: Vec<EncoderLayer>,
    pub head: Linear,
}

impl CriticParams {
    fn init<R: Rng + ?Sized>(cfg: &CriticConfig, k: usize, rng: &mut R) -> Self {
        let d = cfg.d_model;
        Self {
            summary: normal_init(1, d, 0.02, rng),
            box_embed: Linear::new(4, d, rng),
            class_table: normal_init(k, d, 0.02, rng),
            layers: (0..cfg.n_layers).map(|_| EncoderLayer::new(d, cfg.n_heads, 4 * d, rng)).collect(),
            head: Linear::new(d, 1, rng),
        }
    }

    fn zeros(cfg: &CriticConfig, k: usize) -> Self {
        let d = cfg.d_model;
        Self {
            summary: Array2::zeros((1, d)),
            box_embed: Linear::zeros(4, d),
            class_table: Array2::zeros((k, d)),
            layers: (0..cfg.n_layers).map(|_| EncoderLayer::zeros(d, cfg.n_heads, 4 * d)).collect(),
            head: Linear::zeros(d, 1),
        }
    }
}

impl Parameters for CriticParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        let p = |n: &str| if prefix.is_empty() { n.to_string() } else { format!("{prefix}.{n}") };
        f(&p("summary"), &self.summary);
        self.box_embed.visit(&p("box_embed"), f);
        f(&p("class_table"), &self.class_table);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&p(&format!("layers.{i}")), f);
        }
        self.head.visit(&p("head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        let p = |n: &str| if prefix.is_empty() { n.to_string() } else { format!("{prefix}.{n}") };
        f(&p("summary"), &mut self.summary);
        self.box_embed.visit_mut(&p("box_embed"), f);
        f(&p("class_table"), &mut self.class_table);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&p(&format!("layers.{i}")), f);
        }
        self.head.visit_mut(&p("head"), f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticStats {
    pub final_loss: f64,
    pub heldout_accuracy: f64,
    pub heldout_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub config: CriticConfig,
    pub schema: DatasetSchema,
    pub params: CriticParams,
}

struct Batch {
    shape: SeqShape,
    box_in: Array2<f64>,
    classes: Vec<usize>,
    key_pad: Vec<bool>,
    counts: Vec<usize>,
}

impl Critic {
    pub fn feature_dim(&self) -> usize {
        self.config.d_model
    }

    fn batch(&self, layouts: &[&Layout]) -> Result<Batch> {
        let n_max = self.schema.n_max;
        let seq = n_max + 1;
        let rows = layouts.len() * seq;
        let mut box_in = Array2::zeros((rows, 4));
        let mut classes = vec![0; rows];
        let mut key_pad = vec![true; rows];
        let mut counts = Vec::with_capacity(layouts.len());
        for (b, l) in layouts.iter().enumerate() {
            if l.len() > n_max {
                return Err(Error::InvalidLayout(format!("{} components exceed {n_max}", l.len())));
            }
            key_pad[b * seq] = false;
            for (i, c) in l.components.iter().enumerate() {
                if c.class >= self.schema.k() {
                    return Err(Error::UnknownClass(c.class.to_string()));
                }
                let r = b * seq + 1 + i;
                let sig = c.bbox.to_signal_scaled(1.0);
                for j in 0..4 {
                    box_in[[r, j]] = sig[j];
                }
                classes[r] = c.class;
                key_pad[r] = false;
            }
            counts.push(l.len() + 1);
        }
        Ok(Batch {
            shape: SeqShape { batch: layouts.len(), seq },
            box_in,
            classes,
            key_pad,
            counts,
        })
    }

    fn tokens(&self, batch: &Batch) -> Array2<f64> {
        let p = &self.params;
        let mut tokens = p.box_embed.forward(&batch.box_in);
        for (r, mut row) in tokens.rows_mut().into_iter().enumerate() {
            if batch.key_pad[r] {
                row.fill(0.0);
            } else if r % batch.shape.seq == 0 {
                row.assign(&p.summary.row(0));
            } else {
                row += &p.class_table.row(batch.classes[r]);
            }
        }
        tokens
    }

    fn pool(h: &Array2<f64>, batch: &Batch) -> Array2<f64> {
        let seq = batch.shape.seq;
        let mut out = Array2::zeros((batch.shape.batch, h.ncols()));
        for b in 0..batch.shape.batch {
            let view = h.slice(s![b * seq..b * seq + batch.counts[b], ..]);
            out.row_mut(b).assign(&view.mean_axis(ndarray::Axis(0)).expect("non-empty"));
        }
        out
    }

    /// Pooled encoder features, one row of length `d_model` per layout.
    pub fn features(&self, layouts: &[Layout]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(layouts.len());
        for chunk in layouts.chunks(256) {
            let refs: Vec<&Layout> = chunk.iter().collect();
            let batch = self.batch(&refs)?;
            let (h, _) = encoder_forward(&self.params.layers, self.tokens(&batch), batch.shape, &batch.key_pad, None);
            for row in Self::pool(&h, &batch).rows() {
                out.push(row.to_vec());
            }
        }
        Ok(out)
    }

    /// Probability that each layout is real.
    pub fn predict(&self, layouts: &[Layout]) -> Result<Vec<f64>> {
        let feats = self.features(layouts)?;
        let p = &self.params.head;
        Ok(feats
            .iter()
            .map(|f| {
                let z = p.b[[0, 0]] + f.iter().zip(p.w.column(0)).map(|(a, b)| a * b).sum::<f64>();
                sigmoid(z)
            })
            .collect())
    }

    fn step(&mut self, adam: &mut Adam, layouts: &[&Layout], labels: &[f64]) -> Result<f64> {
        let batch = self.batch(layouts)?;
        let tokens = self.tokens(&batch);
        let p = &self.params;
        let (h, cache) = encoder_forward(&p.layers, tokens, batch.shape, &batch.key_pad, None);
        let pooled = Self::pool(&h, &batch);
        let z = p.head.forward(&pooled);
        let bsz = labels.len() as f64;
        let mut loss = 0.0;
        let mut dz = Array2::zeros(z.dim());
        for (i, &y) in labels.iter().enumerate() {
            let zi = z[[i, 0]];
            loss += softplus(zi) - y * zi;
            dz[[i, 0]] = (sigmoid(zi) - y) / bsz;
        }
        let mut g = CriticParams::zeros(&self.config, self.schema.k());
        let d_pooled = p.head.backward(&pooled, &dz, &mut g.head);
        let seq = batch.shape.seq;
        let mut dh = Array2::zeros(h.dim());
        for b in 0..batch.shape.batch {
            let c = batch.counts[b];
            for r in b * seq..b * seq + c {
                dh.row_mut(r).assign(&(&d_pooled.row(b) / c as f64));
            }
        }
        let d_tok = encoder_backward(&p.layers, dh, &cache, batch.shape, &mut g.layers);
        let mut d_box = Array2::zeros((d_tok.nrows(), self.config.d_model));
        for (r, row) in d_tok.rows().into_iter().enumerate() {
            if batch.key_pad[r] {
                continue;
            }
            if r % seq == 0 {
                let mut sg = g.summary.row_mut(0);
                sg += &row;
            } else {
                d_box.row_mut(r).assign(&row);
                let mut cg = g.class_table.row_mut(batch.classes[r]);
                cg += &row;
            }
        }
        p.box_embed.backward(&batch.box_in, &d_box, &mut g.box_embed);
        let lr = self.config.lr;
        adam.update(&mut self.params, &g, lr);
        Ok(loss / bsz)
    }

    /// Train on `real` layouts against noised copies of them.
    pub fn train(real: &[Layout], schema: &DatasetSchema, config: CriticConfig) -> Result<(Self, CriticStats)> {
        if real.len() < MIN_CRITIC_LAYOUTS {
            return Err(Error::InsufficientData(format!(
                "critic training needs at least {MIN_CRITIC_LAYOUTS} layouts, got {}",
                real.len()
            )));
        }
        if real.len() < RECOMMENDED_CRITIC_LAYOUTS {
            log::warn!("training the critic on only {} layouts", real.len());
        }
        if config.d_model % config.n_heads != 0 || config.batch_size < 2 {
            return Err(Error::Config("critic width must divide by heads and batch must hold 2 items".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut critic = Self {
            params: CriticParams::init(&config, schema.k(), &mut rng),
            schema: schema.clone(),
            config,
        };
        let held = ((real.len() as f64 * critic.config.holdout) as usize).clamp(1, real.len() / 2);
        let (test, train) = real.split_at(held);
        let mut adam = Adam::new(&critic.params);
        let half = critic.config.batch_size / 2;
        let mut last = f64::NAN;
        for _ in 0..critic.config.steps {
            let mut noised = Vec::with_capacity(half);
            let mut refs: Vec<&Layout> = Vec::with_capacity(2 * half);
            for _ in 0..half {
                refs.push(&train[rng.random_range(0..train.len())]);
            }
            for _ in 0..half {
                let src = &train[rng.random_range(0..train.len())];
                noised.push(corrupt(src, &critic.config, schema.k(), &mut rng));
            }
            refs.extend(noised.iter());
            let labels: Vec<f64> = (0..2 * half).map(|i| if i < half { 1.0 } else { 0.0 }).collect();
            last = critic.step(&mut adam, &refs, &labels)?;
        }
        let negatives: Vec<Layout> = test.iter().map(|l| corrupt(l, &critic.config, schema.k(), &mut rng)).collect();
        let pos = critic.predict(test)?;
        let neg = critic.predict(&negatives)?;
        let correct = pos.iter().filter(|&&p| p >= 0.5).count() + neg.iter().filter(|&&p| p < 0.5).count();
        let stats = CriticStats {
            final_loss: last,
            heldout_accuracy: correct as f64 / (2 * test.len()) as f64,
            heldout_size: test.len(),
        };
        Ok((critic, stats))
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut tensors = Vec::new();
        push_params(&mut tensors, "", &self.params);
        Ok(Container {
            kind: "critic".into(),
            config: serde_json::to_value(&self.config)?,
            schema: self.schema.clone(),
            extra: serde_json::Value::Null,
            tensors,
        })
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != "critic" {
            return Err(Error::Checkpoint(format!("expected a critic checkpoint, found {:?}", c.kind)));
        }
        let config: CriticConfig = serde_json::from_value(c.config.clone())?;
        let mut params = CriticParams::zeros(&config, c.schema.k());
        c.load_into("", &mut params)?;
        Ok(Self {
            config,
            schema: c.schema.clone(),
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Gaussian coordinate noise plus random class replacement.
pub fn corrupt<R: Rng + ?Sized>(layout: &Layout, cfg: &CriticConfig, k: usize, rng: &mut R) -> Layout {
    let normal = Normal::new(0.0, cfg.noise_sigma).expect("valid sigma");
    let components = layout
        .components
        .iter()
        .map(|c| {
            let mut v = c.bbox.to_array();
            for x in v.iter_mut() {
                *x += normal.sample(rng);
            }
            let bbox = BBox::new(
                v[0].clamp(0.0, 1.0),
                v[1].clamp(0.0, 1.0),
                v[2].clamp(crate::layout::MIN_SIZE, 1.0),
                v[3].clamp(crate::layout::MIN_SIZE, 1.0),
            );
            let class = if rng.random::<f64>() < cfg.class_resample {
                rng.random_range(0..k)
            } else {
                c.class
            };
            Component::new(class, bbox)
        })
        .collect();
    Layout::new(layout.canvas, components)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}
