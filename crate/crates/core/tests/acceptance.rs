//! Acceptance criteria, one PASS/FAIL line each (written straight to stderr so
//! the lines survive output capture). `ITGPT_ACCEPTANCE=1,4,7` runs a subset.

use std::io::Write;
use std::time::Instant;

use itgpt::checkpoint::Checkpoint;
use itgpt::checks::{self, GradSuite};
use itgpt::config::TrainConfig;
use itgpt::data::{load_dataset, split_kfold, synth_generate, write_dataset, Dataset, SynthSpec};
use itgpt::model::ItgptParams;
use itgpt::objectives::Scheme;
use itgpt::params::ParamStore;
use itgpt::report::quantile;
use itgpt::train::{evaluate, observation_loss, run_fold, train, train_with, Objective, TrainOptions};

const DATA_SEED: u64 = 7;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn dataset() -> Dataset {
    synth_generate(&SynthSpec::default(), DATA_SEED).unwrap()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5).unwrap_or(f64::NAN)
}

fn suite(report: checks::CheckReport, started: Instant, budget_s: Option<f64>) -> Verdict {
    let secs = started.elapsed().as_secs_f64();
    let budget = budget_s.map_or(String::new(), |b| format!(" (budget {b}s)"));
    verdict(report.passed() && budget_s.is_none_or(|b| secs < b), format!("{report}; {secs:.1}s{budget}"))
}

fn c1_gradients() -> Verdict {
    let t = Instant::now();
    let report = checks::grad_suite(&GradSuite::default(), 0).unwrap();
    let enough = report.instances >= 200;
    let v = suite(report, t, Some(60.0));
    verdict(v.passed && enough, v.detail)
}

fn c2_oracles() -> Verdict {
    let t = Instant::now();
    suite(checks::oracle_suite(1000, 0).unwrap(), t, Some(120.0))
}

fn c3_causality() -> Verdict {
    let t = Instant::now();
    suite(checks::causality_suite(100, 20, 0).unwrap(), t, Some(60.0))
}

fn c4_time_encoding() -> Verdict {
    let t = Instant::now();
    suite(checks::pe_suite(10_000, &[8, 32, 64], 0).unwrap(), t, None)
}

fn c5_metrics() -> Verdict {
    let t = Instant::now();
    suite(checks::metrics_suite(500, 300, 0).unwrap(), t, None)
}

fn label_head(store: &ParamStore) -> Vec<(String, Vec<u64>)> {
    store
        .iter()
        .filter(|(n, _)| ItgptParams::is_label_head(n))
        .map(|(n, t)| (n.to_string(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

fn c6_scheme_semantics() -> Verdict {
    let data = synth_generate(
        &SynthSpec {
            observations: 60,
            ..SynthSpec::default()
        },
        DATA_SEED,
    )
    .unwrap();
    let idx: Vec<usize> = (0..data.len()).collect();
    let small = TrainConfig {
        d_k: 8,
        d_a: 16,
        batch_size: 16,
        anchor_len: 16,
        ..TrainConfig::default()
    };

    let gpt = TrainConfig {
        scheme: Scheme::GptThenCe,
        ..small.clone()
    };
    let out = train_with(&data, &idx, None, &gpt, &TrainOptions { keep_snapshots: true }).unwrap();
    let init = ItgptParams::init(&out.params.spec, gpt.seed).unwrap();
    let frozen = (0..gpt.pretrain_epochs).all(|e| label_head(&out.snapshots[e]) == label_head(&init.store));
    let moved_later = label_head(&out.snapshots[gpt.pretrain_epochs]) != label_head(&init.store);

    let mut unlabeled = data.clone();
    for obs in &mut unlabeled.observations {
        obs.target = None;
    }
    let ssl = TrainConfig {
        scheme: Scheme::CeSsl,
        epochs: 3,
        ..small
    };
    let out = train(&unlabeled, &idx, None, &ssl).unwrap();
    let init = ItgptParams::init(&out.params.spec, ssl.seed).unwrap();
    let mut zero = out.labeled.is_empty() && label_head(&out.params.store) == label_head(&init.store);
    let mut checked = 0;
    for obs in &unlabeled.observations {
        let grads = observation_loss(&out.params, obs, Objective::Mse, ssl.anchor_len, None, None, true)
            .unwrap()
            .grads
            .unwrap();
        for ((name, _), g) in out.params.store.iter().zip(&grads) {
            if ItgptParams::is_label_head(name) {
                zero &= g.data().iter().all(|v| v.to_bits() == 0);
                checked += 1;
            }
        }
    }
    verdict(
        frozen && moved_later && zero,
        format!(
            "GPT->CE label head bit-unchanged through epoch {}: {frozen}, moves in fine-tuning: {moved_later}; \
             CE+SSL with no labels: {checked} label-head gradients all exactly zero: {zero}",
            gpt.pretrain_epochs
        ),
    )
}

fn c7_learnability() -> Verdict {
    let t = Instant::now();
    let data = dataset();
    let cfg = TrainConfig {
        depth: 2,
        ..TrainConfig::default()
    };
    let folds = split_kfold(data.len(), 5, cfg.split_seed).unwrap();
    let aurocs: Vec<f64> = folds
        .iter()
        .map(|f| run_fold(&data, f, &cfg).unwrap().evaluation.summary.auroc.unwrap_or(f64::NAN))
        .collect();
    let good = aurocs.iter().filter(|&&a| a >= 0.85).count();
    let secs = t.elapsed().as_secs_f64();
    let shown: Vec<String> = aurocs.iter().map(|a| format!("{a:.4}")).collect();
    verdict(
        good >= 4 && secs < 600.0,
        format!("validation AUROC per fold [{}]; {good}/5 >= 0.85; {secs:.0}s (budget 600s)", shown.join(", ")),
    )
}

fn c8_few_labels() -> Verdict {
    let t = Instant::now();
    let data = dataset();
    let fold = &split_kfold(data.len(), 5, 0).unwrap()[0];
    let schemes = [Scheme::Ce, Scheme::CeSsl, Scheme::GptThenCe];
    let mut lines = Vec::new();
    let mut medians: Vec<[f64; 3]> = Vec::new();
    for n in [5usize, 10, 20] {
        let mut row = [0.0; 3];
        for (s, &scheme) in schemes.iter().enumerate() {
            let aurocs: Vec<f64> = (0..5)
                .map(|seed| {
                    let cfg = TrainConfig {
                        depth: 2,
                        scheme,
                        seed,
                        label_fraction: n as f64 / fold.train.len() as f64,
                        ..TrainConfig::default()
                    };
                    let out = train(&data, &fold.train, None, &cfg).unwrap();
                    assert_eq!(out.labeled.len(), n);
                    evaluate(&out.params, &data, &fold.valid, &cfg).unwrap().summary.auroc.unwrap_or(f64::NAN)
                })
                .collect();
            row[s] = median(&aurocs);
        }
        lines.push(format!("|L|={n}: CE {:.4} CE+SSL {:.4} GPT->CE {:.4}", row[0], row[1], row[2]));
        medians.push(row);
    }
    let [ce, ssl, gpt] = medians[0];
    let effect = ssl >= ce && gpt >= ce && ssl - ce >= 0.02;
    let never_worse = medians.iter().all(|r| r[1] >= r[0] - 0.02 && r[2] >= r[0] - 0.02);
    let secs = t.elapsed().as_secs_f64();
    let outcome = if effect {
        "effect shown".to_string()
    } else {
        format!("effect absent at |L|=5; fallback (no scheme below CE by > 0.02 at any size): {never_worse}")
    };
    verdict(
        (effect || never_worse) && secs < 1800.0,
        format!("median AUROC over 5 seeds: {}; {outcome}; {secs:.0}s (budget 1800s)", lines.join("; ")),
    )
}

fn c9_dropout_at_depth() -> Verdict {
    let data = dataset();
    let fold = &split_kfold(data.len(), 5, 0).unwrap()[0];
    let small_train = &fold.train[..40];
    // (train AUROC, validation AUROC) per seed
    let run = |dropout: f64| -> (Vec<f64>, Vec<f64>) {
        (0..5)
            .map(|seed| {
                let cfg = TrainConfig {
                    depth: 6,
                    dropout,
                    seed,
                    ..TrainConfig::default()
                };
                let out = train(&data, small_train, None, &cfg).unwrap();
                let auroc = |idx: &[usize]| {
                    evaluate(&out.params, &data, idx, &cfg).unwrap().summary.auroc.unwrap_or(f64::NAN)
                };
                (auroc(small_train), auroc(&fold.valid))
            })
            .unzip()
    };
    let (fit_dropout, valid_dropout) = run(0.1);
    let (fit_plain, valid_plain) = run(0.0);
    let (with, without) = (median(&valid_dropout), median(&valid_plain));
    verdict(
        with >= without,
        format!(
            "depth 6, 40 training observations: median validation AUROC dropout 0.1 {with:.4} vs 0.0 {without:.4} \
             (train AUROC {:.4} vs {:.4})",
            median(&fit_dropout),
            median(&fit_plain)
        ),
    )
}

fn c10_determinism() -> Verdict {
    let data = synth_generate(
        &SynthSpec {
            observations: 80,
            ..SynthSpec::default()
        },
        DATA_SEED,
    )
    .unwrap();
    let fold = &split_kfold(data.len(), 5, 0).unwrap()[0];
    let cfg = TrainConfig {
        d_k: 8,
        d_a: 16,
        depth: 2,
        dropout: 0.1,
        epochs: 4,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let ck = |c: &TrainConfig| {
        Checkpoint {
            config: c.clone(),
            params: train(&data, &fold.train, None, c).unwrap().params,
        }
    };
    let a = ck(&cfg);
    let b = ck(&cfg);
    let same_bytes = a.to_bytes() == b.to_bytes();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    a.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let before = evaluate(&a.params, &data, &fold.valid, &cfg).unwrap();
    let after = evaluate(&loaded.params, &data, &fold.valid, &loaded.config).unwrap();
    let same_metrics = before.summary == after.summary && before.ce.map(f64::to_bits) == after.ce.map(f64::to_bits);

    let full = dataset();
    let root = dir.path().join("data");
    write_dataset(&full, &root).unwrap();
    let (back, _) = load_dataset(&root).unwrap();
    let same_data = back == full;
    verdict(
        same_bytes && same_metrics && same_data,
        format!(
            "same seed gives identical checkpoint bytes: {same_bytes}; reloaded checkpoint gives identical \
             validation metrics: {same_metrics}; {}-observation dataset reads back value-identical: {same_data}",
            full.len()
        ),
    )
}

type Criterion = (usize, &'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 10] = [
    (1, "gradient correctness", c1_gradients),
    (2, "oracle equivalence", c2_oracles),
    (3, "strict causality", c3_causality),
    (4, "time-encoding translation identity", c4_time_encoding),
    (5, "metric oracles", c5_metrics),
    (6, "loss-scheme semantics", c6_scheme_semantics),
    (7, "learnability", c7_learnability),
    (8, "few-label benefit", c8_few_labels),
    (9, "dropout at depth", c9_dropout_at_depth),
    (10, "determinism and round-trips", c10_determinism),
];

#[test]
fn acceptance() {
    let only: Option<Vec<usize>> = std::env::var("ITGPT_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    let _ = writeln!(std::io::stderr());
    for (id, name, check) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let v = check();
        let tag = if v.passed { "PASS" } else { "FAIL" };
        let mut err = std::io::stderr();
        let _ = writeln!(err, "{tag} [{id}] {name}: {}", v.detail);
        if !v.passed {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
