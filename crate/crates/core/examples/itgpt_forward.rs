//! Full encoder/decoder chain on one synthetic observation: anchor state,
//! per-modality reconstructions, next-sample predictions and class logits.

use itgpt::data::{synth_observation, SynthSpec};
use itgpt::itnet::MixingKind;
use itgpt::model::{AnchorSpec, ItgptParams, ModelSpec};

fn main() -> itgpt::Result<()> {
    let synth = SynthSpec::default();
    let (obs, _latent) = synth_observation(&synth, 11, 0)?;
    let spec = ModelSpec {
        modality_dims: obs.modalities.iter().map(|m| m.dim()).collect(),
        num_classes: 2,
        d_k: 16,
        d_o: 16,
        d_a: 32,
        depth: 3,
        mixing: MixingKind::Mlp1,
        dropout: 0.0,
        query_map: false,
        lambda: 100.0,
    };
    let params = ItgptParams::init(&spec, 1)?;
    println!("depth {} model with {} parameters", spec.depth, params.param_count());

    let anchor = AnchorSpec::for_observation(&obs, 32)?;
    let pred = params.predict(&obs, &anchor)?;
    println!(
        "anchor timeline {:.2}..{:.2} ({} points), state {:?}",
        anchor.times[0],
        anchor.times[anchor.len() - 1],
        anchor.len(),
        pred.anchor.shape()
    );
    for (m, series) in obs.modalities.iter().enumerate() {
        let covered = pred.embedding_coverage[m].iter().filter(|&&c| c).count();
        println!(
            "{:<6} {} samples, reconstruction {:?}, next-sample head {:?}, {covered} rows covered",
            series.name,
            series.len(),
            pred.embeddings[m].shape(),
            pred.next_inputs[m].shape()
        );
    }
    if let (Some(logits), Some(target)) = (&pred.logits, &obs.target) {
        for (r, &t) in target.times.iter().enumerate() {
            println!(
                "target t={t:.2} label {} logits {:?} covered {}",
                target.labels[r],
                logits.row(r),
                pred.label_coverage[r]
            );
        }
    }
    Ok(())
}
