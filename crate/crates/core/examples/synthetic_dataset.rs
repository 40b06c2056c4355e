//! Generate a synthetic multimodal dataset, write it in the on-disk
//! directory format, read it back and summarize it.

use itgpt::data::{load_dataset, split_timeseries, synth_generate, write_dataset, SynthSpec};

fn main() -> itgpt::Result<()> {
    let spec = SynthSpec {
        observations: 40,
        ..SynthSpec::default()
    };
    print!("spec:\n{}", spec.render());
    let data = synth_generate(&spec, 5)?;

    let dir = std::env::temp_dir().join(format!("itgpt-synth-example-{}", std::process::id()));
    write_dataset(&data, &dir)?;
    let (back, report) = load_dataset(&dir)?;
    assert_eq!(back, data);
    println!("wrote and reloaded {} observations under {}", report.observations, dir.display());
    for ((name, dim), n) in back.schema.modalities.iter().zip(&report.samples) {
        println!("  {name:<6} dim {dim}  {n} samples");
    }
    let positives: usize = back
        .observations
        .iter()
        .flat_map(|o| o.target.iter().flat_map(|t| t.labels.iter()))
        .filter(|&&y| y == 1)
        .count();
    println!("  {} targets, {positives} positive", report.target_samples);

    let split = split_timeseries(&back, 0.5)?;
    println!(
        "time split at the half-span: {} train / {} valid observations, {} warnings",
        split.train.len(),
        split.valid.len(),
        split.warnings.len()
    );
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
