//! Few-label comparison of the three training schemes on one fold of the
//! synthetic dataset. For each labeled-set size, every scheme is trained
//! with several seeds and the median validation AUROC is printed.
//!
//! ```text
//! cargo run --release --example few_labels -- [sizes=5,10,20] [seeds=5] [depth=2]
//! ```

use itgpt::config::TrainConfig;
use itgpt::data::{split_kfold, synth_generate, SynthSpec};
use itgpt::objectives::Scheme;
use itgpt::report::quantile;
use itgpt::train::{evaluate, train};

fn main() -> itgpt::Result<()> {
    let mut args = std::env::args().skip(1);
    let sizes: Vec<usize> = args
        .next()
        .unwrap_or_else(|| "5,10,20".into())
        .split(',')
        .map(|s| s.trim().parse().expect("label count"))
        .collect();
    let seeds: u64 = args.next().map_or(5, |s| s.parse().expect("seed count"));
    let depth: usize = args.next().map_or(2, |s| s.parse().expect("depth"));

    let data = synth_generate(&SynthSpec::default(), 7)?;
    let fold = &split_kfold(data.len(), 5, 0)?[0];
    println!("{} training observations, {} validation", fold.train.len(), fold.valid.len());

    for &n in &sizes {
        let fraction = n as f64 / fold.train.len() as f64;
        for scheme in [Scheme::Ce, Scheme::CeSsl, Scheme::GptThenCe] {
            let mut aurocs = Vec::new();
            for seed in 0..seeds {
                let cfg = TrainConfig {
                    depth,
                    scheme,
                    seed,
                    label_fraction: fraction,
                    ..TrainConfig::default()
                };
                let outcome = train(&data, &fold.train, None, &cfg)?;
                assert_eq!(outcome.labeled.len(), n);
                let eval = evaluate(&outcome.params, &data, &fold.valid, &cfg)?;
                aurocs.push(eval.summary.auroc.unwrap_or(f64::NAN));
            }
            let mut sorted = aurocs.clone();
            sorted.sort_by(f64::total_cmp);
            let median = quantile(&sorted, 0.5).unwrap_or(f64::NAN);
            let shown: Vec<String> = aurocs.iter().map(|a| format!("{a:.3}")).collect();
            println!("|L|={n:<3} {:<7} median AUROC {median:.4}  [{}]", scheme.to_string(), shown.join(" "));
        }
    }
    Ok(())
}
