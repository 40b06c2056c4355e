use std::fs;

use itgpt::autodiff::Tensor;
use itgpt::data::{
    load_dataset, log_normalize, split_kfold, split_timeseries, synth_generate, synth_observation, write_dataset,
    SynthSpec, TimeDeltas,
};
use proptest::prelude::*;

fn small_spec(n: usize) -> SynthSpec {
    SynthSpec {
        observations: n,
        ..SynthSpec::default()
    }
}

#[test]
fn written_dataset_reads_back_value_identical() {
    let data = synth_generate(&small_spec(25), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&data, dir.path()).unwrap();
    let (back, report) = load_dataset(dir.path()).unwrap();
    assert_eq!(back, data);
    assert_eq!(report.observations, 25);
    assert_eq!(report.resorted, 0);
}

#[test]
fn same_seed_writes_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_dataset(&synth_generate(&small_spec(10), 4).unwrap(), a.path()).unwrap();
    write_dataset(&synth_generate(&small_spec(10), 4).unwrap(), b.path()).unwrap();
    for entry in walk(a.path()) {
        let rel = entry.strip_prefix(a.path()).unwrap();
        assert_eq!(fs::read(&entry).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{}", rel.display());
    }
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn labels_follow_the_latent_rule_only() {
    let spec = small_spec(20);
    for i in 0..20 {
        let (obs, latent) = synth_observation(&spec, 3, i).unwrap();
        let target = obs.target.unwrap();
        for (&t, &y) in target.times.iter().zip(&target.labels) {
            assert_eq!(y, spec.label_rule.classify(latent.value(spec.label_rule.channel, t)));
        }
    }
}

#[test]
fn truncating_modalities_leaves_labels_alone() {
    let spec = small_spec(5);
    let full = synth_generate(&spec, 8).unwrap();
    let (obs, _) = synth_observation(&spec, 8, 2).unwrap();
    assert_eq!(obs, full.observations[2]);
    let cut = 5.0;
    let mut truncated = obs.clone();
    for m in &mut truncated.modalities {
        *m = m.slice_time(f64::NEG_INFINITY, cut);
    }
    // labels are a function of the latent path, which the samples do not feed back into
    let (again, latent) = synth_observation(&spec, 8, 2).unwrap();
    let target = again.target.unwrap();
    for (&t, &y) in target.times.iter().zip(&target.labels) {
        if t <= cut {
            assert_eq!(y, spec.label_rule.classify(latent.value(0, t)));
        }
    }
    assert!(truncated.modalities.iter().all(|m| m.times.iter().all(|&t| t < cut)));
}

#[test]
fn kfold_partitions_every_index_once() {
    let folds = split_kfold(53, 5, 11).unwrap();
    let mut seen = vec![0; 53];
    for f in &folds {
        for &i in &f.valid {
            seen[i] += 1;
        }
        assert_eq!(f.train.len() + f.valid.len(), 53);
    }
    assert!(seen.iter().all(|&c| c == 1));
    assert_eq!(split_kfold(53, 5, 11).unwrap(), folds);
}

#[test]
fn time_split_views_are_disjoint_and_complete() {
    let data = synth_generate(&small_spec(8), 1).unwrap();
    let split = split_timeseries(&data, 0.5).unwrap();
    for obs in &data.observations {
        let tr = split.train.observations.iter().find(|o| o.id == obs.id);
        let va = split.valid.observations.iter().find(|o| o.id == obs.id);
        for (m, series) in obs.modalities.iter().enumerate() {
            let a = tr.map_or(0, |o| o.modalities[m].len());
            let b = va.map_or(0, |o| o.modalities[m].len());
            assert_eq!(a + b, series.len());
            if let (Some(tr), Some(va)) = (tr, va) {
                let last = tr.modalities[m].times.last().copied().unwrap_or(f64::NEG_INFINITY);
                let first = va.modalities[m].times.first().copied().unwrap_or(f64::INFINITY);
                assert!(last < first);
            }
        }
    }
}

#[test]
fn missing_schema_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

proptest! {
    // Dyadic grid points: every difference and partial sum is exactly representable.
    #[test]
    fn time_deltas_rebuild_dyadic_times_exactly(steps in proptest::collection::vec(0u32..5000, 1..60), start in -1000i32..1000) {
        let mut t = start as f64 / 64.0;
        let mut times = vec![t];
        for s in steps {
            t += s as f64 / 64.0;
            times.push(t);
        }
        let d = TimeDeltas::from_times(&times);
        prop_assert_eq!(d.cumulative(times[0]), times);
    }

    #[test]
    fn log_normalize_roundtrips(values in proptest::collection::vec(0.0f64..1e9, 1..40)) {
        let x = Tensor::vector(values.clone());
        let y = log_normalize(&x).unwrap();
        for (orig, z) in values.iter().zip(y.data()) {
            let back = z.exp_m1();
            prop_assert!((back - orig).abs() <= 1e-9 * orig.abs().max(1e-300) || (back - orig).abs() < 1e-300);
        }
    }
}
