//! Supervised training on a synthetic dataset: one cross-validation fold,
//! cross-entropy only, reference hyperparameters.
//!
//! ```text
//! cargo run --release --example train_ce -- [depth] [epochs] [synth-spec-file]
//! ```

use std::time::Instant;

use itgpt::config::TrainConfig;
use itgpt::data::{split_kfold, synth_generate, SynthSpec};
use itgpt::train::{evaluate, train};

fn main() -> itgpt::Result<()> {
    let mut args = std::env::args().skip(1);
    let depth: usize = args.next().map_or(Ok(2), |s| s.parse()).expect("depth");
    let epochs: usize = args.next().map_or(Ok(20), |s| s.parse()).expect("epochs");

    let spec = match args.next() {
        Some(path) => SynthSpec::parse(&std::fs::read_to_string(&path).expect("spec file"), path.as_ref())?,
        None => SynthSpec::default(),
    };
    let data = synth_generate(&spec, 7)?;
    let folds = split_kfold(data.len(), 5, 0)?;
    let cfg = TrainConfig {
        depth,
        epochs,
        trace_valid: true,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let outcome = train(&data, &folds[0].train, Some(&folds[0].valid), &cfg)?;
    for row in &outcome.trace {
        println!("epoch {:>2} {:<5} {:<6} loss {:.4}", row.epoch, row.split, row.objective, row.loss);
    }
    let eval = evaluate(&outcome.params, &data, &folds[0].valid, &cfg)?;
    println!(
        "validation AUROC {:?}  AUPRC {:?}  ({} rows, {:.1}s)",
        eval.summary.auroc,
        eval.summary.auprc.macro_average,
        eval.summary.rows,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
