//! Reverse diffusion under a `ConditionSpec`, running both chains jointly
//! (or sequentially for the ablation modes).

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::ModelCheckpoint;
use crate::continuous::{posterior_sample, standard_normal};
use crate::denoiser::{Denoiser, DenoiserInput, DenoiserOutput};
use crate::discrete::{reverse_posterior, sample_categorical, softmax_rows, with_mask_column};
use crate::error::{Error, Result};
use crate::layout::{AttrFlags, BBox, Component, ConditionSpec, DatasetSchema, Layout};
use crate::schedule::{discrete_step_of, DiffusionSchedule, SYNC_STRIDE};

/// Anything that maps a batch of noised inputs to clean predictions.
pub trait DenoiseModel {
    fn predict(&self, batch: &[DenoiserInput]) -> Result<DenoiserOutput>;
}

impl DenoiseModel for Denoiser {
    fn predict(&self, batch: &[DenoiserInput]) -> Result<DenoiserOutput> {
        self.forward(batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Both chains run together, pins flagged.
    #[default]
    Joint,
    /// Flags off; pins overwrite the state at every step.
    EditOnlyInference,
    /// Discrete chain first with boxes held at zero, then the continuous chain.
    ClassBeforeBoxes,
    /// Continuous chain first with classes held at MASK, then the discrete chain.
    BoxesBeforeClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Joint,
    BoxesOnly,
    ClassesOnly,
}

struct ItemState {
    n: usize,
    x: Array2<f64>,
    y: Vec<usize>,
    /// Per-coordinate pinned value in signal space.
    coord_pins: Vec<[Option<f64>; 4]>,
    class_pins: Vec<Option<usize>>,
    last_p0: Option<Array2<f64>>,
    rng: ChaCha8Rng,
}

/// Sampling context: model, schedule and schema must agree.
pub struct Sampler<'a, M: DenoiseModel + ?Sized> {
    pub model: &'a M,
    pub schedule: &'a DiffusionSchedule,
    pub schema: &'a DatasetSchema,
    pub mode: SamplingMode,
}

impl<'a> Sampler<'a, Denoiser> {
    pub fn from_checkpoint(ckpt: &'a ModelCheckpoint, schedule: &'a DiffusionSchedule) -> Result<Self> {
        ckpt.validate()?;
        if schedule.config() != ckpt.schedule {
            return Err(Error::SchemaMismatch("schedule differs from the checkpoint's".into()));
        }
        Ok(Self {
            model: &ckpt.denoiser,
            schedule,
            schema: &ckpt.schema,
            mode: SamplingMode::Joint,
        })
    }
}

impl<'a, M: DenoiseModel + ?Sized> Sampler<'a, M> {
    pub fn new(model: &'a M, schedule: &'a DiffusionSchedule, schema: &'a DatasetSchema) -> Self {
        Self {
            model,
            schedule,
            schema,
            mode: SamplingMode::Joint,
        }
    }

    pub fn with_mode(mut self, mode: SamplingMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn generate(&self, cond: &ConditionSpec, seed: u64) -> Result<Layout> {
        Ok(self.generate_batch(std::slice::from_ref(cond), &[seed])?.remove(0))
    }

    /// Generate one layout per spec; item `i` draws only from a generator
    /// seeded with `seeds[i]`.
    pub fn generate_batch(&self, conds: &[ConditionSpec], seeds: &[u64]) -> Result<Vec<Layout>> {
        if conds.len() != seeds.len() {
            return Err(Error::Shape(format!("{} conditions but {} seeds", conds.len(), seeds.len())));
        }
        if conds.is_empty() {
            return Ok(Vec::new());
        }
        for c in conds {
            c.validate(self.schema)?;
        }
        let scale = self.schedule.signal_scale;
        let mut items: Vec<ItemState> = conds.iter().zip(seeds).map(|(c, &seed)| self.init_item(c, seed)).collect();
        match self.mode {
            SamplingMode::Joint | SamplingMode::EditOnlyInference => self.run_chain(&mut items, Phase::Joint)?,
            SamplingMode::ClassBeforeBoxes => {
                self.run_chain(&mut items, Phase::ClassesOnly)?;
                for it in &mut items {
                    Self::freeze_classes(it);
                    Self::restart_boxes(it, self.schema.n_max);
                }
                self.run_chain(&mut items, Phase::BoxesOnly)?;
            }
            SamplingMode::BoxesBeforeClass => {
                self.run_chain(&mut items, Phase::BoxesOnly)?;
                for it in &mut items {
                    Self::freeze_boxes(it);
                }
                self.run_chain(&mut items, Phase::ClassesOnly)?;
            }
        }
        Ok(items.iter().zip(conds).map(|(it, c)| self.finish(it, c, scale)).collect())
    }

    fn init_item(&self, cond: &ConditionSpec, seed: u64) -> ItemState {
        let n_max = self.schema.n_max;
        let scale = self.schedule.signal_scale;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = standard_normal(n_max, 4, &mut rng);
        let mut y = vec![self.schema.mask(); n_max];
        let mut coord_pins = vec![[None; 4]; n_max];
        let mut class_pins = vec![None; n_max];
        for (i, slot) in cond.slots.iter().enumerate() {
            let to_sig = |v: f64| (2.0 * v - 1.0) * scale;
            if let Some([cx, cy]) = slot.position {
                coord_pins[i][0] = Some(to_sig(cx));
                coord_pins[i][1] = Some(to_sig(cy));
            }
            if let Some([w, h]) = slot.size {
                coord_pins[i][2] = Some(to_sig(w));
                coord_pins[i][3] = Some(to_sig(h));
            }
            class_pins[i] = slot.class;
        }
        for i in cond.n_components..n_max {
            x.row_mut(i).fill(0.0);
        }
        for i in 0..cond.n_components {
            for j in 0..4 {
                if let Some(v) = coord_pins[i][j] {
                    x[[i, j]] = v;
                }
            }
            if let Some(c) = class_pins[i] {
                y[i] = c;
            }
        }
        ItemState {
            n: cond.n_components,
            x,
            y,
            coord_pins,
            class_pins,
            last_p0: None,
            rng,
        }
    }

    /// Treat sampled classes as pins for a following boxes phase.
    fn freeze_classes(it: &mut ItemState) {
        for i in 0..it.n {
            it.class_pins[i] = Some(it.y[i]);
        }
    }

    fn restart_boxes(it: &mut ItemState, n_max: usize) {
        let fresh = standard_normal(n_max, 4, &mut it.rng);
        for i in 0..it.n {
            for j in 0..4 {
                it.x[[i, j]] = it.coord_pins[i][j].unwrap_or(fresh[[i, j]]);
            }
        }
    }

    fn freeze_boxes(it: &mut ItemState) {
        for i in 0..it.n {
            for j in 0..4 {
                it.coord_pins[i][j] = Some(it.x[[i, j]]);
            }
        }
    }

    fn inputs(&self, items: &[ItemState], t: usize, phase: Phase) -> Vec<DenoiserInput> {
        let n_max = self.schema.n_max;
        let mask = self.schema.mask();
        items
            .iter()
            .map(|it| {
                let mut x_t = it.x.clone();
                let mut y_t = it.y.clone();
                let mut flags = vec![AttrFlags::NONE; n_max];
                for i in 0..it.n {
                    let pins = it.coord_pins[i];
                    let mut f = AttrFlags {
                        pos: pins[0].is_some(),
                        size: pins[2].is_some(),
                        cls: it.class_pins[i].is_some(),
                    };
                    match phase {
                        Phase::ClassesOnly if self.mode == SamplingMode::ClassBeforeBoxes => {
                            for j in 0..4 {
                                x_t[[i, j]] = pins[j].unwrap_or(0.0);
                            }
                            f.pos = true;
                            f.size = true;
                        }
                        Phase::BoxesOnly if self.mode == SamplingMode::BoxesBeforeClass => {
                            if it.class_pins[i].is_none() {
                                y_t[i] = mask;
                            }
                            f.cls = true;
                        }
                        _ => {}
                    }
                    if self.mode != SamplingMode::EditOnlyInference {
                        flags[i] = f;
                    }
                }
                let pad = (0..n_max).map(|i| i >= it.n).collect();
                DenoiserInput { x_t, y_t, flags, t, pad }
            })
            .collect()
    }

    fn run_chain(&self, items: &mut [ItemState], phase: Phase) -> Result<()> {
        let mask = self.schema.mask();
        let beta = self.schedule.beta_disc;
        for t in (1..=self.schedule.steps).rev() {
            let out = self.model.predict(&self.inputs(items, t, phase))?;
            if out.logits.ncols() != self.schema.k() || out.slots != self.schema.n_max {
                return Err(Error::SchemaMismatch(format!(
                    "model returned {} slots x {} classes, schema expects {} x {}",
                    out.slots,
                    out.logits.ncols(),
                    self.schema.n_max,
                    self.schema.k()
                )));
            }
            for (b, it) in items.iter_mut().enumerate() {
                if phase != Phase::ClassesOnly {
                    let x0_hat = out.item_boxes(b);
                    let next = posterior_sample(self.schedule, &it.x, &x0_hat, t, &mut it.rng)?;
                    for i in 0..it.n {
                        for j in 0..4 {
                            it.x[[i, j]] = it.coord_pins[i][j].unwrap_or(next[[i, j]]);
                        }
                    }
                }
                if phase != Phase::BoxesOnly {
                    let p0 = with_mask_column(&softmax_rows(&out.item_logits(b)));
                    if t % SYNC_STRIDE == 0 {
                        let s = discrete_step_of(t);
                        let post = reverse_posterior(&it.y, &p0, s, beta)?;
                        for i in 0..it.n {
                            if it.class_pins[i].is_none() && it.y[i] == mask {
                                it.y[i] = sample_categorical(post.row(i), &mut it.rng);
                            }
                        }
                    }
                    it.last_p0 = Some(p0);
                }
            }
        }
        Ok(())
    }

    fn finish(&self, it: &ItemState, cond: &ConditionSpec, scale: f64) -> Layout {
        let mask = self.schema.mask();
        let components = (0..it.n)
            .map(|i| {
                let slot = &cond.slots[i];
                let row = [it.x[[i, 0]], it.x[[i, 1]], it.x[[i, 2]], it.x[[i, 3]]];
                let mut bbox = BBox::from_signal_scaled(row, scale);
                if let Some([cx, cy]) = slot.position {
                    bbox.cx = cx;
                    bbox.cy = cy;
                }
                if let Some([w, h]) = slot.size {
                    bbox.w = w;
                    bbox.h = h;
                }
                let class = match slot.class {
                    Some(c) => c,
                    None if it.y[i] != mask => it.y[i],
                    None => it.last_p0.as_ref().map(|p| argmax(p.row(i).iter().take(mask))).unwrap_or(0),
                };
                Component::new(class, bbox)
            })
            .collect();
        Layout::new(self.schema.canvas, components)
    }
}

fn argmax<'a>(it: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Draw a component count from a training histogram (index = count).
pub fn sample_component_count<R: Rng + ?Sized>(histogram: &[u64], rng: &mut R) -> Result<usize> {
    let total: u64 = histogram.iter().skip(1).sum();
    if total == 0 {
        return Err(Error::Empty("component-count histogram".into()));
    }
    let mut target = rng.random_range(0..total);
    for (n, &c) in histogram.iter().enumerate().skip(1) {
        if target < c {
            return Ok(n);
        }
        target -= c;
    }
    unreachable!("target below histogram total")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::SlotCondition;
    use crate::schedule::ScheduleConfig;

    struct Fixed {
        x0: Array2<f64>,
        y0: Vec<usize>,
        k: usize,
    }

    impl DenoiseModel for Fixed {
        fn predict(&self, batch: &[DenoiserInput]) -> Result<DenoiserOutput> {
            let n = self.y0.len();
            let mut boxes = Array2::zeros((batch.len() * n, 4));
            let mut logits = Array2::from_elem((batch.len() * n, self.k), -1e9);
            for b in 0..batch.len() {
                for i in 0..n {
                    boxes.row_mut(b * n + i).assign(&self.x0.row(i));
                    logits[[b * n + i, self.y0[i]]] = 0.0;
                }
            }
            Ok(DenoiserOutput { boxes, logits, slots: n })
        }
    }

    fn setup() -> (DatasetSchema, DiffusionSchedule, Fixed) {
        let schema = DatasetSchema::new("t", vec!["a".into(), "b".into(), "c".into()], 4, [10, 10]).unwrap();
        let sched = ScheduleConfig::default().build().unwrap();
        let x0 = Array2::from_shape_fn((4, 4), |(i, j)| 0.3 * i as f64 - 0.2 * j as f64);
        (schema, sched, Fixed { x0, y0: vec![2, 0, 1, 2], k: 3 })
    }

    #[test]
    fn oracle_denoiser_is_recovered() {
        let (schema, sched, model) = setup();
        let sampler = Sampler::new(&model, &sched, &schema);
        for seed in 0..5 {
            let out = sampler.generate(&ConditionSpec::unconditioned(3), seed).unwrap();
            for (i, c) in out.components.iter().enumerate() {
                assert_eq!(c.class, model.y0[i]);
                let row = [model.x0[[i, 0]], model.x0[[i, 1]], model.x0[[i, 2]], model.x0[[i, 3]]];
                let want = BBox::from_signal(row);
                assert!((c.bbox.cx - want.cx).abs() < 1e-9 && (c.bbox.w - want.w).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pins_are_exact() {
        let (schema, sched, model) = setup();
        let sampler = Sampler::new(&model, &sched, &schema);
        let cond = ConditionSpec {
            n_components: 2,
            slots: vec![
                SlotCondition {
                    class: Some(1),
                    position: Some([0.123456, 0.654321]),
                    size: Some([0.1, 0.3]),
                },
                SlotCondition {
                    class: None,
                    position: None,
                    size: Some([0.2, 0.7]),
                },
            ],
        };
        for mode in [
            SamplingMode::Joint,
            SamplingMode::EditOnlyInference,
            SamplingMode::ClassBeforeBoxes,
            SamplingMode::BoxesBeforeClass,
        ] {
            let s = Sampler::new(&model, &sched, &schema).with_mode(mode);
            let out = s.generate(&cond, 7).unwrap();
            assert_eq!(out.components[0].class, 1);
            assert_eq!(out.components[0].bbox, BBox::new(0.123456, 0.654321, 0.1, 0.3));
            assert_eq!((out.components[1].bbox.w, out.components[1].bbox.h), (0.2, 0.7));
        }
        assert_eq!(sampler.generate(&cond, 3).unwrap(), sampler.generate(&cond, 3).unwrap());
    }

    #[test]
    fn rejects_oversized_condition() {
        let (schema, sched, model) = setup();
        let sampler = Sampler::new(&model, &sched, &schema);
        assert!(sampler.generate(&ConditionSpec::unconditioned(5), 0).is_err());
    }

    #[test]
    fn count_histogram_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hist = [0, 0, 5, 0, 5];
        for _ in 0..100 {
            let n = sample_component_count(&hist, &mut rng).unwrap();
            assert!(n == 2 || n == 4);
        }
        assert!(sample_component_count(&[3, 0], &mut rng).is_err());
    }
}
