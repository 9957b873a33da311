use laydiff_core::checkpoint::ModelCheckpoint;
use laydiff_core::denoiser::{Denoiser, DenoiserConfig};
use laydiff_core::ingest::{synth, Profile};
use laydiff_core::nn::Adam;
use laydiff_core::schedule::{build_cosine_schedule, ScheduleConfig};
use laydiff_core::training::{
    compute_loss, draw_scenario, prepare_batch, train_step, Ablation, ModelSpec, Scenario, TrainConfig, Trainer,
};
use laydiff_core::Layout;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_spec() -> ModelSpec {
    ModelSpec {
        d_model: 32,
        n_layers: 2,
        n_heads: 4,
        dropout: 0.0,
    }
}

#[test]
fn fixed_batch_is_memorized() {
    let (schema, layouts) = synth(Profile::TwoColumnDoc, 4, 1).unwrap();
    let sched = build_cosine_schedule(100).unwrap();
    let cfg = TrainConfig {
        lr: 1e-3,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let refs: Vec<&Layout> = layouts.iter().collect();
    let items = prepare_batch(&refs, &sched, &schema, &cfg, &mut rng).unwrap();
    let mut model_cfg = DenoiserConfig::scaled(32, 2, 4, schema.k(), schema.n_max, 100);
    model_cfg.dropout = 0.0;
    let mut model = Denoiser::new(model_cfg, &mut rng).unwrap();
    let mut adam = Adam::new(&model.params);
    let first = compute_loss(&model, &items, &cfg, None).unwrap().0.l_total;
    for _ in 0..500 {
        train_step(&mut model, &mut adam, &items, &cfg, cfg.lr, None).unwrap();
    }
    let last = compute_loss(&model, &items, &cfg, None).unwrap().0.l_total;
    assert!(last * 10.0 <= first, "loss {first} -> {last}");
}

#[test]
fn resumed_run_replays_uninterrupted_run() {
    let (schema, layouts) = synth(Profile::Grid, 40, 3).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        total_steps: 12,
        lr: 1e-3,
        seed: 17,
        val_every: 0,
        ..Default::default()
    };
    let sched = ScheduleConfig::default();
    let mut straight = Trainer::new(schema.clone(), &tiny_spec(), sched, cfg.clone(), &layouts).unwrap();
    straight.run::<Vec<u8>>(&layouts, &[], None, |_| Ok(())).unwrap();

    let mut first = Trainer::new(schema, &tiny_spec(), sched, cfg.clone(), &layouts).unwrap();
    for _ in 0..5 {
        first.step_once(&layouts).unwrap();
    }
    let bytes = first.checkpoint().unwrap().to_container().unwrap().to_bytes().unwrap();
    let restored = ModelCheckpoint::from_container(&laydiff_core::checkpoint::Container::read_from(&bytes[..]).unwrap()).unwrap();
    let mut resumed = Trainer::resume(restored, cfg).unwrap();
    resumed.run::<Vec<u8>>(&layouts, &[], None, |_| Ok(())).unwrap();

    assert_eq!(resumed.step, 12);
    assert_eq!(resumed.denoiser.params, straight.denoiser.params);
    assert_eq!(resumed.adam, straight.adam);
}

#[test]
fn scenario_frequencies_follow_weights() {
    let cfg = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws = 30_000;
    let mut counts = [0usize; 3];
    let mut halves = 0;
    for _ in 0..draws {
        let s = draw_scenario(6, &cfg, &mut rng);
        match s.scenario {
            Scenario::Category => counts[0] += 1,
            Scenario::CategorySize => counts[1] += 1,
            Scenario::Unconditioned => counts[2] += 1,
            other => panic!("unexpected {other:?}"),
        }
        if !s.extra_full_components.is_empty() {
            assert_eq!(s.extra_full_components.len(), 3);
            halves += 1;
        }
    }
    let n = draws as f64;
    for c in counts {
        let p = 1.0 / 3.0;
        assert!((c as f64 / n - p).abs() < 4.0 * (p * (1.0 - p) / n).sqrt(), "{counts:?}");
    }
    assert!((halves as f64 / n - 0.5).abs() < 4.0 * (0.25 / n).sqrt());
}

#[test]
fn sequential_ablations_replace_only_the_unconditioned_draw() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (ablation, allowed) in [
        (Ablation::ClassBeforeBoxes, vec![Scenario::ZeroBoxes]),
        (Ablation::BoxesBeforeClass, vec![Scenario::MaskedClasses, Scenario::BoxesGiven]),
        (Ablation::EditOnlyInference, vec![Scenario::Unconditioned]),
    ] {
        let cfg = TrainConfig {
            ablation,
            ..Default::default()
        };
        let mut seen = std::collections::HashSet::new();
        for _ in 0..600 {
            let s = draw_scenario(4, &cfg, &mut rng);
            seen.insert(s.scenario);
            if ablation == Ablation::EditOnlyInference {
                assert!(s.extra_full_components.is_empty());
            }
        }
        for a in &allowed {
            assert!(seen.contains(a), "{ablation:?} never drew {a:?}");
        }
        assert!(!seen.contains(&Scenario::Unconditioned) || ablation == Ablation::EditOnlyInference);
    }
}
