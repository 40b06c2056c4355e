use itgpt::config::TrainConfig;
use itgpt::data::{split_kfold, synth_generate, Dataset, SynthModality, SynthSpec};
use itgpt::model::ItgptParams;
use itgpt::params::ParamStore;
use itgpt::objectives::Scheme;
use itgpt::train::{observation_loss, train, train_with, Objective, TrainOptions};

fn data(n: usize, seed: u64) -> Dataset {
    let spec = SynthSpec {
        observations: n,
        modalities: vec![
            SynthModality { name: "a".into(), dim: 2, rate: 2.0, missing: 0.0 },
            SynthModality { name: "b".into(), dim: 1, rate: 1.0, missing: 0.1 },
        ],
        ..SynthSpec::default()
    };
    synth_generate(&spec, seed).unwrap()
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        d_k: 8,
        d_a: 16,
        batch_size: 16,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    }
}

fn label_head(store: &ParamStore) -> Vec<(String, Vec<u64>)> {
    store
        .iter()
        .filter(|(n, _)| ItgptParams::is_label_head(n))
        .map(|(n, t)| (n.to_string(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn ce_training_loss_falls_for_every_seed() {
    let d = data(60, 1);
    let idx: Vec<usize> = (0..d.len()).collect();
    for seed in 0..5 {
        let cfg = TrainConfig { seed, ..small_cfg() };
        let out = train(&d, &idx, None, &cfg).unwrap();
        let first = out.trace.first().unwrap().loss;
        let last = out.trace.last().unwrap().loss;
        assert_eq!(out.trace.len(), 20);
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn gpt_then_ce_freezes_the_label_head_while_pretraining() {
    let d = data(30, 2);
    let idx: Vec<usize> = (0..d.len()).collect();
    let cfg = TrainConfig {
        scheme: Scheme::GptThenCe,
        ..small_cfg()
    };
    let out = train_with(&d, &idx, None, &cfg, &TrainOptions { keep_snapshots: true }).unwrap();
    assert_eq!(out.snapshots.len(), 7);
    let objectives: Vec<&str> = out.trace.iter().map(|r| r.objective.as_str()).collect();
    assert_eq!(objectives, ["mse", "mse", "ce", "ce", "ce", "ce", "ce"]);

    let init = ItgptParams::init(&out.params.spec, cfg.seed).unwrap();
    assert_eq!(label_head(&out.snapshots[0]), label_head(&init.store));
    assert_eq!(label_head(&out.snapshots[1]), label_head(&init.store));
    assert_ne!(label_head(&out.snapshots[2]), label_head(&init.store));
    // the encoder did move during pretraining
    assert_ne!(out.snapshots[1], init.store);
}

#[test]
fn without_labels_the_label_head_gets_exactly_zero_gradient() {
    let mut d = data(20, 3);
    for obs in &mut d.observations {
        obs.target = None;
    }
    let cfg = TrainConfig {
        scheme: Scheme::CeSsl,
        epochs: 3,
        ..small_cfg()
    };
    let idx: Vec<usize> = (0..d.len()).collect();
    let out = train(&d, &idx, None, &cfg).unwrap();
    assert!(out.labeled.is_empty());
    let init = ItgptParams::init(&out.params.spec, cfg.seed).unwrap();
    assert_eq!(label_head(&out.params.store), label_head(&init.store));

    let loss = observation_loss(&out.params, &d.observations[0], Objective::Mse, cfg.anchor_len, None, None, true).unwrap();
    let grads = loss.grads.unwrap();
    for ((name, _), g) in out.params.store.iter().zip(&grads) {
        if ItgptParams::is_label_head(name) {
            assert!(g.data().iter().all(|&v| v.to_bits() == 0), "{name}");
        }
    }
}

#[test]
fn ce_without_labels_changes_nothing() {
    let mut d = data(12, 4);
    for obs in &mut d.observations {
        obs.target = None;
    }
    let cfg = TrainConfig { epochs: 2, ..small_cfg() };
    let idx: Vec<usize> = (0..d.len()).collect();
    let out = train(&d, &idx, None, &cfg).unwrap();
    assert!(out.steps > 0);
    assert_eq!(out.params, ItgptParams::init(&out.params.spec, cfg.seed).unwrap());
}

#[test]
fn same_seed_same_parameters() {
    let d = data(24, 5);
    let folds = split_kfold(d.len(), 3, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        dropout: 0.2,
        depth: 2,
        ..small_cfg()
    };
    let a = train(&d, &folds[0].train, None, &cfg).unwrap();
    let b = train(&d, &folds[0].train, None, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.trace, b.trace);
    let c = train(&d, &folds[0].train, None, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn few_labels_select_the_requested_count() {
    let d = data(50, 6);
    let idx: Vec<usize> = (0..40).collect();
    let cfg = TrainConfig {
        label_fraction: 5.0 / 40.0,
        epochs: 1,
        ..small_cfg()
    };
    let out = train(&d, &idx, None, &cfg).unwrap();
    assert_eq!(out.labeled.len(), 5);
    assert!(out.labeled.iter().all(|i| idx.contains(i)));
}
