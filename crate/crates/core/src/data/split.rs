use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Observation, Target};
use crate::error::{Error, Result};

/// Observation indices of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

/// Seeded k-fold partition of `0..n`. Validation sets are disjoint, cover
/// every index once and differ in size by at most one.
pub fn split_kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::Config(format!("cannot split {n} observations into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = (0..k)
        .map(|f| {
            let mut valid: Vec<usize> = order.iter().copied().skip(f).step_by(k).collect();
            valid.sort_unstable();
            let mut train: Vec<usize> = order
                .iter()
                .enumerate()
                .filter(|(pos, _)| pos % k != f)
                .map(|(_, &i)| i)
                .collect();
            train.sort_unstable();
            Fold { train, valid }
        })
        .collect();
    Ok(folds)
}

/// Per-observation split of each timeline at a cut time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSplit {
    pub train: Dataset,
    pub valid: Dataset,
    /// One entry per observation dropped from a side because it had no samples there.
    pub warnings: Vec<String>,
}

fn has_samples(obs: &Observation) -> bool {
    obs.modalities.iter().any(|m| !m.is_empty()) || obs.target.as_ref().is_some_and(|t| !t.is_empty())
}

fn slice_target(target: &Target, lo: f64, hi: f64) -> Target {
    let keep: Vec<usize> = (0..target.len())
        .filter(|&i| target.times[i] >= lo && target.times[i] < hi)
        .collect();
    Target {
        times: keep.iter().map(|&i| target.times[i]).collect(),
        labels: keep.iter().map(|&i| target.labels[i]).collect(),
    }
}

fn slice_observation(obs: &Observation, lo: f64, hi: f64) -> Observation {
    Observation {
        id: obs.id.clone(),
        modalities: obs.modalities.iter().map(|m| m.slice_time(lo, hi)).collect(),
        target: obs.target.as_ref().map(|t| slice_target(t, lo, hi)),
    }
}

/// Trains on the beginning of every timeline and validates on the end:
/// samples with `t < cut` go to training, `t >= cut` to validation, where
/// `cut = t_min + train_frac · (t_max − t_min)` per observation.
pub fn split_timeseries(dataset: &Dataset, train_frac: f64) -> Result<TimeSplit> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {train_frac}")));
    }
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut warnings = Vec::new();
    for obs in &dataset.observations {
        let Some((lo, hi)) = obs.span() else {
            warnings.push(format!("observation `{}` has no samples; dropped from both sides", obs.id));
            continue;
        };
        let cut = lo + train_frac * (hi - lo);
        for (side, view, name) in [
            (&mut train, slice_observation(obs, f64::NEG_INFINITY, cut), "training"),
            (&mut valid, slice_observation(obs, cut, f64::INFINITY), "validation"),
        ] {
            if has_samples(&view) {
                side.push(view);
            } else {
                warnings.push(format!("observation `{}` has no {name} samples; dropped from that side", obs.id));
            }
        }
    }
    Ok(TimeSplit {
        train: Dataset::new(dataset.schema.clone(), train)?,
        valid: Dataset::new(dataset.schema.clone(), valid)?,
        warnings,
    })
}
