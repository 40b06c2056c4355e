//! Classification metrics on a small scored set, compared with the
//! brute-force reference implementations.

use itgpt::autodiff::Tensor;
use itgpt::metrics::{summarize, ScoredPredictions};
use itgpt::oracle::{auprc_sweep, auroc_pairwise};

fn main() -> itgpt::Result<()> {
    let p1 = [0.9, 0.8, 0.8, 0.6, 0.55, 0.4, 0.3, 0.3, 0.2, 0.1];
    let truths = vec![1, 1, 0, 1, 0, 1, 0, 0, 1, 0];
    let scores = Tensor::matrix(p1.len(), 2, p1.iter().flat_map(|&p| [1.0 - p, p]).collect())?;
    let preds = ScoredPredictions::new(scores, truths.clone())?;
    let summary = summarize(&preds);

    for (name, value) in summary.named() {
        println!("{name:<14} {}", value.map_or("undefined".into(), |v| format!("{v:.4}")));
    }
    println!("confusion (rows = truth): {:?}", summary.confusion.counts);

    let positive: Vec<bool> = truths.iter().map(|&y| y == 1).collect();
    println!("pairwise AUROC  {:?}", auroc_pairwise(&p1, &positive));
    println!("sweep AP (class 1) {:?}", auprc_sweep(&p1, &positive));
    Ok(())
}
