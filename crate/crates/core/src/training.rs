//! Scenario-conditioned training: draw a conditioning scenario per layout,
//! corrupt the free attributes, and minimize the masked combined loss.

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{ModelCheckpoint, TrainingState};
use crate::continuous::{box_loss_coords, q_sample};
use crate::denoiser::{Denoiser, DenoiserConfig, DenoiserInput};
use crate::discrete::{class_loss, q_sample_discrete};
use crate::error::{Error, Result};
use crate::layout::{AttrFlags, ConditionSpec, DatasetSchema, Layout, SlotCondition};
use crate::nn::{Adam, Parameters};
use crate::schedule::{discrete_step_of, DiffusionSchedule, ScheduleConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Full conditioning mechanism.
    #[default]
    None,
    /// Train on the unconditioned setting only; pins are applied at inference.
    EditOnlyInference,
    /// Pins are injected but the condition flags are always off.
    NoConditionEmbedding,
    /// Unconditioned setting replaced by classes-only diffusion with all boxes pinned at zero.
    ClassBeforeBoxes,
    /// Unconditioned setting replaced by boxes-only diffusion (classes pinned to MASK)
    /// or classes-only diffusion (boxes pinned clean).
    BoxesBeforeClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_box: f64,
    pub lambda_cls: f64,
    pub batch_size: usize,
    pub lr: f64,
    /// Final learning rate of the cosine decay.
    pub lr_min: f64,
    pub total_steps: u64,
    /// Relative weights of Category, CategorySize and Unconditioned.
    pub scenario_weights: [f64; 3],
    pub p_half: f64,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub val_every: u64,
    /// Validation items evaluated per check (taken from the front of the split).
    pub val_size: usize,
    pub checkpoint_every: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_box: 5.0,
            lambda_cls: 1.0,
            batch_size: 64,
            lr: 1e-4,
            lr_min: 1e-5,
            total_steps: 10_000,
            scenario_weights: [1.0, 1.0, 1.0],
            p_half: 0.5,
            seed: 0,
            grad_clip: Some(1.0),
            val_every: 500,
            val_size: 256,
            checkpoint_every: 0,
            ablation: Ablation::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_box > 0.0 && self.lambda_cls > 0.0) {
            return Err(Error::Config("loss weights must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr_min >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.p_half) {
            return Err(Error::Config(format!("p_half {} outside [0, 1]", self.p_half)));
        }
        if self.scenario_weights.iter().any(|w| !(*w >= 0.0)) || self.scenario_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("scenario weights must be non-negative with a positive sum".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }

    /// Cosine decay from `lr` to `lr_min` over `total_steps`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.lr;
        }
        let frac = (step as f64 / self.total_steps as f64).min(1.0);
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// Architecture knobs of a training run; class count and slot count come
/// from the dataset schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub dropout: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            dropout: 0.0,
        }
    }
}

impl ModelSpec {
    pub fn build(&self, schema: &DatasetSchema, steps: usize) -> Result<DenoiserConfig> {
        let mut cfg = DenoiserConfig::scaled(self.d_model, self.n_layers, self.n_heads, schema.k(), schema.n_max, steps);
        cfg.dropout = self.dropout;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Contents of a training config file (TOML with `[model]`, `[schedule]`
/// and `[train]` tables; every key is optional).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingFile {
    pub model: ModelSpec,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
}

impl TrainingFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.train.validate()?;
        file.schedule.build()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    Category,
    CategorySize,
    Unconditioned,
    /// Classes diffused, every box pinned at zero in signal space.
    ZeroBoxes,
    /// Boxes diffused, every class pinned to MASK.
    MaskedClasses,
    /// Classes diffused, boxes pinned to their clean values.
    BoxesGiven,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioSample {
    pub scenario: Scenario,
    /// Components with every attribute pinned, in increasing order.
    pub extra_full_components: Vec<usize>,
}

impl ScenarioSample {
    /// Clean pins implied by the sample. The special settings of the
    /// sequential ablations pin non-layout values that a `ConditionSpec`
    /// cannot express; only their clean part is returned.
    pub fn condition(&self, layout: &Layout) -> ConditionSpec {
        let mut spec = match self.scenario {
            Scenario::Category => ConditionSpec::category(layout),
            Scenario::CategorySize => ConditionSpec::category_size(layout),
            Scenario::BoxesGiven => ConditionSpec {
                n_components: layout.len(),
                slots: layout
                    .components
                    .iter()
                    .map(|c| SlotCondition {
                        class: None,
                        position: Some([c.bbox.cx, c.bbox.cy]),
                        size: Some([c.bbox.w, c.bbox.h]),
                    })
                    .collect(),
            },
            _ => ConditionSpec::unconditioned(layout.len()),
        };
        for &i in &self.extra_full_components {
            spec.slots[i] = SlotCondition::full(&layout.components[i]);
        }
        spec
    }
}

/// Draw the scenario and the optional fully pinned half for an
/// `n`-component layout.
pub fn draw_scenario<R: Rng + ?Sized>(n: usize, cfg: &TrainConfig, rng: &mut R) -> ScenarioSample {
    if cfg.ablation == Ablation::EditOnlyInference {
        return ScenarioSample {
            scenario: Scenario::Unconditioned,
            extra_full_components: Vec::new(),
        };
    }
    let w = cfg.scenario_weights;
    let u = rng.random::<f64>() * (w[0] + w[1] + w[2]);
    let mut scenario = if u < w[0] {
        Scenario::Category
    } else if u < w[0] + w[1] {
        Scenario::CategorySize
    } else {
        Scenario::Unconditioned
    };
    if scenario == Scenario::Unconditioned {
        scenario = match cfg.ablation {
            Ablation::ClassBeforeBoxes => Scenario::ZeroBoxes,
            Ablation::BoxesBeforeClass if rng.random::<bool>() => Scenario::MaskedClasses,
            Ablation::BoxesBeforeClass => Scenario::BoxesGiven,
            _ => Scenario::Unconditioned,
        };
    }
    let mut extra = Vec::new();
    if rng.random::<f64>() < cfg.p_half && n >= 2 {
        extra = sample_indices(rng, n, n / 2).into_vec();
        extra.sort_unstable();
    }
    ScenarioSample {
        scenario,
        extra_full_components: extra,
    }
}

pub fn sample_scenario<R: Rng + ?Sized>(layout: &Layout, rng: &mut R, cfg: &TrainConfig) -> ConditionSpec {
    draw_scenario(layout.len(), cfg, rng).condition(layout)
}

/// One corrupted training example at the fixed slot count `N_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub input: DenoiserInput,
    /// Clean boxes in signal space (zero rows on padding).
    pub x0: Array2<f64>,
    pub y0: Vec<usize>,
    /// `true` where a coordinate carries no box loss (pinned or padding).
    pub box_excluded: Vec<[bool; 4]>,
    /// `true` where a slot carries no class loss (pinned or padding).
    pub cls_excluded: Vec<bool>,
}

/// Per-slot pins in signal space; `None` means the attribute diffuses.
#[derive(Debug, Clone, Copy, Default)]
struct SlotPlan {
    coords: [Option<f64>; 4],
    class: Option<usize>,
}

fn plan_slots(layout: &Layout, sample: &ScenarioSample, mask: usize, scale: f64) -> Vec<SlotPlan> {
    let mut plans = vec![SlotPlan::default(); layout.len()];
    match sample.scenario {
        Scenario::ZeroBoxes => plans.iter_mut().for_each(|p| p.coords = [Some(0.0); 4]),
        Scenario::MaskedClasses => plans.iter_mut().for_each(|p| p.class = Some(mask)),
        _ => {}
    }
    let spec = sample.condition(layout);
    for ((plan, slot), comp) in plans.iter_mut().zip(&spec.slots).zip(&layout.components) {
        let sig = comp.bbox.to_signal_scaled(scale);
        if slot.position.is_some() {
            plan.coords[0] = Some(sig[0]);
            plan.coords[1] = Some(sig[1]);
        }
        if slot.size.is_some() {
            plan.coords[2] = Some(sig[2]);
            plan.coords[3] = Some(sig[3]);
        }
        if let Some(c) = slot.class {
            plan.class = Some(c);
        }
    }
    plans
}

/// Corrupt one layout at step `t` under a drawn scenario.
pub fn build_item<R: Rng + ?Sized>(
    layout: &Layout,
    sample: &ScenarioSample,
    t: usize,
    schedule: &DiffusionSchedule,
    schema: &DatasetSchema,
    ablation: Ablation,
    rng: &mut R,
) -> Result<TrainItem> {
    let n_max = schema.n_max;
    let n = layout.len();
    if n > n_max {
        return Err(Error::InvalidLayout(format!("{n} components exceed the limit of {n_max}")));
    }
    let mask = schema.mask();
    let scale = schedule.signal_scale;
    let plans = plan_slots(layout, sample, mask, scale);

    let mut x0 = Array2::zeros((n_max, 4));
    let mut y0 = vec![0; n_max];
    for (i, c) in layout.components.iter().enumerate() {
        let sig = c.bbox.to_signal_scaled(scale);
        for j in 0..4 {
            x0[[i, j]] = sig[j];
        }
        y0[i] = c.class;
    }
    let noised = q_sample(schedule, &x0, t, rng)?;
    let s = discrete_step_of(t);
    let classes = q_sample_discrete(&y0[..n], s, schedule.stay(s), mask, rng);

    let mut x_t = noised.x_t;
    let mut y_t = vec![mask; n_max];
    let mut flags = vec![AttrFlags::NONE; n_max];
    let mut pad = vec![true; n_max];
    let mut box_excluded = vec![[true; 4]; n_max];
    let mut cls_excluded = vec![true; n_max];
    for (i, plan) in plans.iter().enumerate() {
        pad[i] = false;
        for j in 0..4 {
            match plan.coords[j] {
                Some(v) => x_t[[i, j]] = v,
                None => box_excluded[i][j] = false,
            }
        }
        match plan.class {
            Some(c) => y_t[i] = c,
            None => {
                y_t[i] = classes.y[i];
                cls_excluded[i] = false;
            }
        }
        if ablation != Ablation::NoConditionEmbedding {
            flags[i] = AttrFlags {
                pos: plan.coords[0].is_some(),
                size: plan.coords[2].is_some(),
                cls: plan.class.is_some(),
            };
        }
    }
    x_t.slice_mut(s![n.., ..]).fill(0.0);
    Ok(TrainItem {
        input: DenoiserInput { x_t, y_t, flags, t, pad },
        x0,
        y0,
        box_excluded,
        cls_excluded,
    })
}

/// Draw scenario, `t` and noise for every layout of a batch.
pub fn prepare_batch<R: Rng + ?Sized>(
    layouts: &[&Layout],
    schedule: &DiffusionSchedule,
    schema: &DatasetSchema,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<TrainItem>> {
    layouts
        .iter()
        .map(|layout| {
            let sample = draw_scenario(layout.len(), cfg, rng);
            let t = rng.random_range(1..=schedule.steps);
            build_item(layout, &sample, t, schedule, schema, cfg.ablation, rng)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StepLosses {
    pub l_box: f64,
    pub l_cls: f64,
    pub l_total: f64,
}

/// Batch losses (item means) and the parameter gradient of `l_total`.
pub fn compute_loss(
    denoiser: &Denoiser,
    items: &[TrainItem],
    cfg: &TrainConfig,
    dropout_rng: Option<&mut dyn RngCore>,
) -> Result<(StepLosses, crate::denoiser::DenoiserParams)> {
    if items.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let inputs: Vec<DenoiserInput> = items.iter().map(|it| it.input.clone()).collect();
    let (out, cache) = denoiser.forward_train(&inputs, dropout_rng)?;
    let n = out.slots;
    let b = items.len() as f64;
    let mut d_boxes = Array2::zeros(out.boxes.dim());
    let mut d_logits = Array2::zeros(out.logits.dim());
    let mut losses = StepLosses::default();
    for (i, item) in items.iter().enumerate() {
        let rows = s![i * n..(i + 1) * n, ..];
        let (lb, gb) = box_loss_coords(&out.boxes.slice(rows).to_owned(), &item.x0, &item.box_excluded)?;
        let (lc, gc) = class_loss(&out.logits.slice(rows).to_owned(), &item.y0, &item.cls_excluded)?;
        losses.l_box += lb / b;
        losses.l_cls += lc / b;
        d_boxes.slice_mut(rows).assign(&(gb * (cfg.lambda_box / b)));
        d_logits.slice_mut(rows).assign(&(gc * (cfg.lambda_cls / b)));
    }
    losses.l_total = cfg.lambda_box * losses.l_box + cfg.lambda_cls * losses.l_cls;
    let grads = denoiser.backward(&cache, &d_boxes, &d_logits);
    Ok((losses, grads))
}

/// One optimizer update on a prepared batch.
pub fn train_step(
    denoiser: &mut Denoiser,
    adam: &mut Adam,
    items: &[TrainItem],
    cfg: &TrainConfig,
    lr: f64,
    dropout_rng: Option<&mut dyn RngCore>,
) -> Result<StepLosses> {
    let (losses, mut grads) = compute_loss(denoiser, items, cfg, dropout_rng)?;
    if !losses.l_total.is_finite() {
        return Err(Error::Config(format!("non-finite training loss {}", losses.l_total)));
    }
    if let Some(clip) = cfg.grad_clip {
        let norm = grads.squared_norm().sqrt();
        if norm > clip {
            grads.scale(clip / norm);
        }
    }
    adam.update(&mut denoiser.params, &grads, lr);
    Ok(losses)
}

/// Histogram of component counts, indexed `0..=n_max`.
pub fn count_histogram(layouts: &[Layout], n_max: usize) -> Vec<u64> {
    let mut hist = vec![0; n_max + 1];
    for l in layouts {
        hist[l.len().min(n_max)] += 1;
    }
    hist
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// One CSV log row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRow {
    pub step: u64,
    pub l_box: f64,
    pub l_cls: f64,
    pub l_total: f64,
    pub val_total: Option<f64>,
}

/// Stateful training loop. Every step draws from a generator keyed by
/// `(seed, step)`, so a resumed run replays the uninterrupted one.
pub struct Trainer {
    pub denoiser: Denoiser,
    pub adam: Adam,
    pub schedule: DiffusionSchedule,
    pub schema: DatasetSchema,
    pub cfg: TrainConfig,
    pub step: u64,
    pub count_histogram: Vec<u64>,
}

impl Trainer {
    pub fn new(
        schema: DatasetSchema,
        model: &ModelSpec,
        schedule: ScheduleConfig,
        cfg: TrainConfig,
        train_set: &[Layout],
    ) -> Result<Self> {
        cfg.validate()?;
        schema.validate()?;
        let schedule = schedule.build()?;
        let model_cfg = model.build(&schema, schedule.steps)?;
        let mut init_rng = step_rng(cfg.seed, u64::MAX);
        let denoiser = Denoiser::new(model_cfg, &mut init_rng)?;
        let adam = Adam::new(&denoiser.params);
        Ok(Self {
            count_histogram: count_histogram(train_set, schema.n_max),
            denoiser,
            adam,
            schedule,
            schema,
            cfg,
            step: 0,
        })
    }

    /// Continue from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ckpt: ModelCheckpoint, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let state = ckpt
            .training
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no optimizer state".into()))?;
        Ok(Self {
            schedule: ckpt.schedule.build()?,
            denoiser: ckpt.denoiser,
            adam: state.adam,
            schema: ckpt.schema,
            cfg,
            step: state.step,
            count_histogram: ckpt.count_histogram,
        })
    }

    pub fn checkpoint(&self) -> Result<ModelCheckpoint> {
        Ok(ModelCheckpoint {
            denoiser: self.denoiser.clone(),
            schedule: self.schedule.config(),
            schema: self.schema.clone(),
            count_histogram: self.count_histogram.clone(),
            training: Some(TrainingState {
                step: self.step,
                adam: self.adam.clone(),
                train_config: serde_json::to_value(&self.cfg)?,
            }),
        })
    }

    fn check_data(&self, data: &[Layout]) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Empty("training set".into()));
        }
        for l in data {
            l.validate(&self.schema)?;
        }
        Ok(())
    }

    /// Run the next optimizer step on a batch drawn with replacement.
    pub fn step_once(&mut self, data: &[Layout]) -> Result<StepLosses> {
        let mut rng = step_rng(self.cfg.seed, self.step);
        let batch: Vec<&Layout> = (0..self.cfg.batch_size).map(|_| &data[rng.random_range(0..data.len())]).collect();
        let items = prepare_batch(&batch, &self.schedule, &self.schema, &self.cfg, &mut rng)?;
        let lr = self.cfg.lr_at(self.step);
        let dropout: Option<&mut dyn RngCore> = if self.denoiser.config.dropout > 0.0 {
            Some(&mut rng)
        } else {
            None
        };
        let losses = train_step(&mut self.denoiser, &mut self.adam, &items, &self.cfg, lr, dropout)?;
        self.step += 1;
        Ok(losses)
    }

    /// Deterministic validation loss over the first `val_size` layouts.
    pub fn validation_loss(&self, val: &[Layout]) -> Result<f64> {
        let take = &val[..val.len().min(self.cfg.val_size.max(1))];
        if take.is_empty() {
            return Err(Error::Empty("validation set".into()));
        }
        let mut rng = step_rng(self.cfg.seed ^ 0x5eed_0f_7a1, 0);
        let mut total = 0.0;
        for chunk in take.chunks(self.cfg.batch_size) {
            let refs: Vec<&Layout> = chunk.iter().collect();
            let items = prepare_batch(&refs, &self.schedule, &self.schema, &self.cfg, &mut rng)?;
            let (losses, _) = compute_loss(&self.denoiser, &items, &self.cfg, None)?;
            total += losses.l_total * chunk.len() as f64;
        }
        Ok(total / take.len() as f64)
    }

    /// Train until `cfg.total_steps`, logging each step as CSV and calling
    /// `on_checkpoint` every `checkpoint_every` steps and at the end.
    pub fn run<W: Write>(
        &mut self,
        train: &[Layout],
        val: &[Layout],
        mut log: Option<&mut csv::Writer<W>>,
        mut on_checkpoint: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<Vec<LogRow>> {
        self.check_data(train)?;
        if !val.is_empty() {
            self.check_data(val)?;
        }
        let mut rows = Vec::new();
        while self.step < self.cfg.total_steps {
            let losses = self.step_once(train)?;
            let val_total = if !val.is_empty()
                && self.cfg.val_every > 0
                && (self.step % self.cfg.val_every == 0 || self.step == self.cfg.total_steps)
            {
                Some(self.validation_loss(val)?)
            } else {
                None
            };
            let row = LogRow {
                step: self.step,
                l_box: losses.l_box,
                l_cls: losses.l_cls,
                l_total: losses.l_total,
                val_total,
            };
            if let Some(w) = log.as_deref_mut() {
                w.serialize(row).map_err(|e| Error::Config(e.to_string()))?;
                w.flush()?;
            }
            if let Some(v) = val_total {
                log::info!("step {} loss {:.5} val {:.5}", self.step, losses.l_total, v);
            }
            rows.push(row);
            if self.cfg.checkpoint_every > 0 && self.step % self.cfg.checkpoint_every == 0 {
                on_checkpoint(self)?;
            }
        }
        on_checkpoint(self)?;
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{BBox, Component};

    fn schema() -> DatasetSchema {
        DatasetSchema::new("t", vec!["a".into(), "b".into(), "c".into()], 10, [100, 100]).unwrap()
    }

    fn layout(n: usize) -> Layout {
        let comps = (0..n)
            .map(|i| Component::new(i % 3, BBox::new(0.1 + 0.08 * i as f64, 0.5, 0.05, 0.2)))
            .collect();
        Layout::new([100, 100], comps)
    }

    fn cfg(p_half: f64) -> TrainConfig {
        TrainConfig {
            p_half,
            ..Default::default()
        }
    }

    #[test]
    fn unconditioned_without_half_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = TrainConfig {
            scenario_weights: [0.0, 0.0, 1.0],
            ..cfg(0.0)
        };
        let spec = sample_scenario(&layout(4), &mut rng, &c);
        assert!(spec.is_empty());
        assert_eq!(spec.n_components, 4);
    }

    #[test]
    fn category_pins_only_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = TrainConfig {
            scenario_weights: [1.0, 0.0, 0.0],
            ..cfg(0.0)
        };
        let spec = sample_scenario(&layout(4), &mut rng, &c);
        for i in 0..4 {
            assert_eq!(
                spec.flags(i),
                AttrFlags {
                    pos: false,
                    size: false,
                    cls: true
                }
            );
        }
    }

    #[test]
    fn half_subset_is_fully_pinned() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = layout(7);
        for _ in 0..50 {
            let s = draw_scenario(7, &cfg(1.0), &mut rng);
            assert_eq!(s.extra_full_components.len(), 3);
            let spec = s.condition(&l);
            for &i in &s.extra_full_components {
                assert_eq!(spec.slots[i], SlotCondition::full(&l.components[i]));
            }
        }
    }

    #[test]
    fn edit_only_never_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = TrainConfig {
            ablation: Ablation::EditOnlyInference,
            ..cfg(1.0)
        };
        for _ in 0..100 {
            assert!(sample_scenario(&layout(5), &mut rng, &c).is_empty());
        }
    }

    #[test]
    fn pins_are_clean_and_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sched = ScheduleConfig::default().build().unwrap();
        let l = layout(4);
        let sample = ScenarioSample {
            scenario: Scenario::CategorySize,
            extra_full_components: vec![1],
        };
        let item = build_item(&l, &sample, 100, &sched, &schema(), Ablation::None, &mut rng).unwrap();
        for i in 0..4 {
            assert_eq!(item.input.y_t[i], l.components[i].class);
            assert_eq!(item.input.x_t[[i, 2]], item.x0[[i, 2]]);
            assert!(item.cls_excluded[i]);
        }
        assert_eq!(item.input.flags[1], AttrFlags::ALL);
        assert_eq!(item.box_excluded[1], [true; 4]);
        assert_eq!(item.box_excluded[0], [false, false, true, true]);
        assert!(item.input.pad[4..].iter().all(|&p| p));
        assert!(item.input.y_t[4..].iter().all(|&y| y == 3));
    }

    #[test]
    fn no_condition_embedding_keeps_pins_but_clears_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sched = ScheduleConfig::default().build().unwrap();
        let l = layout(3);
        let sample = ScenarioSample {
            scenario: Scenario::Category,
            extra_full_components: vec![],
        };
        let item = build_item(&l, &sample, 100, &sched, &schema(), Ablation::NoConditionEmbedding, &mut rng).unwrap();
        assert!(item.input.flags.iter().all(|f| *f == AttrFlags::NONE));
        assert_eq!(&item.input.y_t[..3], &l.classes()[..]);
        assert!(item.cls_excluded[..3].iter().all(|&e| e));
    }

    #[test]
    fn sequential_settings() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sched = ScheduleConfig::default().build().unwrap();
        let l = layout(3);
        let zero = ScenarioSample {
            scenario: Scenario::ZeroBoxes,
            extra_full_components: vec![],
        };
        let item = build_item(&l, &zero, 50, &sched, &schema(), Ablation::ClassBeforeBoxes, &mut rng).unwrap();
        assert!(item.input.x_t.iter().all(|&v| v == 0.0));
        assert!(item.box_excluded.iter().all(|r| *r == [true; 4]));
        assert!(item.input.flags[..3].iter().all(|f| f.pos && f.size && !f.cls));

        let masked = ScenarioSample {
            scenario: Scenario::MaskedClasses,
            extra_full_components: vec![],
        };
        let item = build_item(&l, &masked, 50, &sched, &schema(), Ablation::BoxesBeforeClass, &mut rng).unwrap();
        assert!(item.input.y_t.iter().all(|&y| y == 3));
        assert!(item.cls_excluded.iter().all(|&e| e));
        assert!(item.input.flags[..3].iter().all(|f| !f.pos && f.cls));
    }

    #[test]
    fn cosine_lr_endpoints() {
        let c = TrainConfig {
            total_steps: 100,
            ..Default::default()
        };
        assert_eq!(c.lr_at(0), 1e-4);
        assert!((c.lr_at(100) - 1e-5).abs() < 1e-18);
        assert!((c.lr_at(50) - 5.5e-5).abs() < 1e-15);
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let file = TrainingFile::from_toml("[train]\nbatch_size = 8\nablation = \"edit-only-inference\"\n").unwrap();
        assert_eq!(file.train.batch_size, 8);
        assert_eq!(file.train.ablation, Ablation::EditOnlyInference);
        assert_eq!(file.train.lambda_box, 5.0);
        let back = TrainingFile::from_toml(&file.to_toml().unwrap()).unwrap();
        assert_eq!(back, file);
        assert!(TrainingFile::from_toml("[train]\nlambda_box = 0.0\n").is_err());
        assert!(TrainingFile::from_toml("[train]\nbogus = 1\n").is_err());
    }
}
