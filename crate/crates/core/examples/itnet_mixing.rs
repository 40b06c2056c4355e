//! One encoder block: a causal attention per modality onto a shared output
//! timeline, concatenated and passed through each mixing layer variant.

use itgpt::attention::AttentionEncoding;
use itgpt::autodiff::{Tape, Tensor};
use itgpt::itnet::{itnet_forward, ItnetParams, MixingKind, TimedInput};
use itgpt::params::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> itgpt::Result<()> {
    let enc = AttentionEncoding::new(8, 8, 40.0)?;
    let heart = (vec![0.0, 0.7, 1.9, 2.2, 3.5], Tensor::matrix(5, 1, vec![61.0, 64.0, 70.0, 68.0, 66.0])?);
    let motion = (vec![0.3, 2.8], Tensor::matrix(2, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0])?);
    let out_times = [0.0, 1.0, 2.0, 3.0, 4.0];

    for kind in [MixingKind::Linear, MixingKind::Mlp1, MixingKind::Mlp2] {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = ItnetParams::init(&mut store, "enc", &[1, 3], &enc, false, kind, 16, 6, 0.0, &mut rng)?;

        let mut tape = Tape::new();
        let vars = store.register_frozen(&mut tape);
        let inputs = [
            TimedInput { times: &heart.0, data: tape.constant(heart.1.clone()) },
            TimedInput { times: &motion.0, data: tape.constant(motion.1.clone()) },
        ];
        let out = itnet_forward(&mut tape, &vars, &params, &inputs, &out_times, &enc, None)?;
        let value = tape.value(out.output);
        println!(
            "{kind:<6} {} parameters, output {:?}, coverage heart {:?} motion {:?}",
            store.size(),
            value.shape(),
            out.coverage[0],
            out.coverage[1]
        );
        let last: Vec<String> = value.row(4).iter().map(|v| format!("{v:+.3}")).collect();
        println!("       row at t=4: [{}]", last.join(" "));
    }
    Ok(())
}
