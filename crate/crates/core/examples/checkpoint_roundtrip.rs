//! Train briefly, save a checkpoint, load it back and confirm the
//! validation metrics are bit-identical.

use itgpt::checkpoint::Checkpoint;
use itgpt::config::TrainConfig;
use itgpt::data::{split_kfold, synth_generate, SynthSpec};
use itgpt::train::{evaluate, train};

fn main() -> itgpt::Result<()> {
    let data = synth_generate(&SynthSpec { observations: 60, ..SynthSpec::default() }, 2)?;
    let fold = &split_kfold(data.len(), 5, 0)?[0];
    let cfg = TrainConfig {
        d_k: 8,
        d_a: 16,
        epochs: 3,
        ..TrainConfig::default()
    };
    let outcome = train(&data, &fold.train, None, &cfg)?;
    let before = evaluate(&outcome.params, &data, &fold.valid, &cfg)?;

    let path = std::env::temp_dir().join(format!("itgpt-example-{}.ckpt", std::process::id()));
    let ck = Checkpoint { config: cfg, params: outcome.params };
    ck.save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    let after = evaluate(&loaded.params, &data, &fold.valid, &loaded.config)?;
    println!("{} bytes at {}", std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0), path.display());
    println!("AUROC before {:?} after {:?}", before.summary.auroc, after.summary.auroc);
    assert_eq!(before, after);
    println!("metrics identical after reload");
    std::fs::remove_file(&path).ok();
    Ok(())
}
