//! A small experiment grid over schemes and seeds on two folds, aggregated
//! into per-scheme median and quartiles.

use itgpt::config::TrainConfig;
use itgpt::data::{synth_generate, SynthSpec};
use itgpt::objectives::Scheme;
use itgpt::report::{aggregate, RawResult};
use itgpt::train::{run_experiment_grid_with, GridSpec};

fn main() -> itgpt::Result<()> {
    let data = synth_generate(&SynthSpec { observations: 80, ..SynthSpec::default() }, 4)?;
    let mut grid = GridSpec::single(TrainConfig {
        d_k: 8,
        d_a: 16,
        epochs: 4,
        ..TrainConfig::default()
    });
    grid.schemes = vec![Scheme::Ce, Scheme::CeSsl];
    grid.seeds = vec![0, 1];
    grid.only_folds = vec![0, 1];

    let outcome = run_experiment_grid_with(&data, &grid, |fold, cfg, r| {
        let auroc = r.as_ref().ok().and_then(|r| r.evaluation.summary.auroc);
        println!("fold {fold} {:<7} seed {}  AUROC {auroc:?}", cfg.scheme.to_string(), cfg.seed);
    })?;
    let raw: Vec<RawResult> = outcome
        .rows
        .iter()
        .map(|r| RawResult {
            keys: [
                r.fold.to_string(),
                r.scheme.to_string(),
                r.depth.to_string(),
                r.mixing.to_string(),
                r.dropout.to_string(),
                r.label_fraction.to_string(),
                r.seed.to_string(),
            ],
            metric: r.metric.clone(),
            value: r.value,
        })
        .collect();
    let report = aggregate(&raw, &["scheme".into()], &["auroc".into(), "auprc".into()])?;
    print!("{}", report.render_table());
    Ok(())
}
