use laydiff_core::checkpoint::{Container, ModelCheckpoint};
use laydiff_core::denoiser::{Denoiser, DenoiserConfig};
use laydiff_core::ingest::{synth, Profile};
use laydiff_core::sampler::{sample_component_count, Sampler, SamplingMode};
use laydiff_core::schedule::ScheduleConfig;
use laydiff_core::training::count_histogram;
use laydiff_core::{ConditionSpec, Layout, SlotCondition};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn checkpoint() -> (ModelCheckpoint, Vec<Layout>) {
    let (schema, layouts) = synth(Profile::Grid, 30, 1).unwrap();
    let cfg = DenoiserConfig::scaled(32, 2, 4, schema.k(), schema.n_max, 100);
    let denoiser = Denoiser::new(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let ckpt = ModelCheckpoint {
        denoiser,
        schedule: ScheduleConfig::default(),
        count_histogram: count_histogram(&layouts, schema.n_max),
        schema,
        training: None,
    };
    (ckpt, layouts)
}

fn close(a: &Layout, b: &Layout) -> bool {
    a.len() == b.len()
        && a.components.iter().zip(&b.components).all(|(x, y)| {
            x.class == y.class && x.bbox.to_array().iter().zip(y.bbox.to_array()).all(|(p, q)| (p - q).abs() < 1e-9)
        })
}

#[test]
fn batch_items_do_not_influence_each_other() {
    let (ckpt, layouts) = checkpoint();
    let schedule = ckpt.schedule.build().unwrap();
    let sampler = Sampler::from_checkpoint(&ckpt, &schedule).unwrap();
    let conds: Vec<ConditionSpec> = layouts[..4].iter().map(ConditionSpec::category).collect();
    let seeds = [5, 6, 7, 8];
    let together = sampler.generate_batch(&conds, &seeds).unwrap();
    for i in 0..4 {
        let alone = sampler.generate(&conds[i], seeds[i]).unwrap();
        assert!(close(&alone, &together[i]), "item {i}");
    }
    let again = sampler.generate_batch(&conds, &seeds).unwrap();
    assert_eq!(again, together);
}

#[test]
fn pins_survive_every_sampling_mode() {
    let (ckpt, layouts) = checkpoint();
    let schedule = ckpt.schedule.build().unwrap();
    let reference = &layouts[0];
    let mut cond = ConditionSpec::category_size(reference);
    cond.slots[0] = SlotCondition::full(&reference.components[0]);
    for mode in [
        SamplingMode::Joint,
        SamplingMode::EditOnlyInference,
        SamplingMode::ClassBeforeBoxes,
        SamplingMode::BoxesBeforeClass,
    ] {
        let sampler = Sampler::from_checkpoint(&ckpt, &schedule).unwrap().with_mode(mode);
        let out = sampler.generate(&cond, 11).unwrap();
        assert_eq!(out.len(), reference.len());
        assert_eq!(out.components[0], reference.components[0], "{mode:?}");
        for (g, r) in out.components.iter().zip(&reference.components) {
            assert_eq!(g.class, r.class);
            assert_eq!((g.bbox.w, g.bbox.h), (r.bbox.w, r.bbox.h));
        }
    }
}

#[test]
fn checkpoint_round_trip_reproduces_samples() {
    let (ckpt, layouts) = checkpoint();
    let bytes = ckpt.to_container().unwrap().to_bytes().unwrap();
    let back = ModelCheckpoint::from_container(&Container::read_from(&bytes[..]).unwrap()).unwrap();
    let (s1, s2) = (ckpt.schedule.build().unwrap(), back.schedule.build().unwrap());
    let cond = ConditionSpec::category(&layouts[2]);
    let a = Sampler::from_checkpoint(&ckpt, &s1).unwrap().generate(&cond, 99).unwrap();
    let b = Sampler::from_checkpoint(&back, &s2).unwrap().generate(&cond, 99).unwrap();
    assert_eq!(a, b);
}

#[test]
fn component_counts_follow_histogram() {
    let hist = [0, 10, 0, 30, 60];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 20_000;
    let mut counts = [0usize; 5];
    for _ in 0..n {
        counts[sample_component_count(&hist, &mut rng).unwrap()] += 1;
    }
    assert_eq!(counts[0] + counts[2], 0);
    for (k, p) in [(1, 0.1), (3, 0.3), (4, 0.6)] {
        let f = counts[k] as f64 / n as f64;
        assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt());
    }
}
