//! Strictly causal cross-attention between two irregular timelines. A query
//! only sees keys with earlier timestamps; a query with no such key is
//! uncovered and returns a zero row.

use itgpt::attention::{causal_cross_attention, AttentionEncoding, AttentionWeights};
use itgpt::autodiff::Tensor;

fn main() -> itgpt::Result<()> {
    let key_times = [0.5, 1.0, 1.0, 4.0];
    let data = Tensor::matrix(4, 2, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5, -1.0, 2.0])?;
    let query_times = [0.0, 1.0, 2.0, 5.0];

    let weights = AttentionWeights {
        w_key: Tensor::matrix(2, 4, vec![0.3, -0.2, 0.1, 0.4, -0.1, 0.2, 0.5, -0.3])?,
        w_value: Tensor::matrix(2, 4, vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0])?,
        w_query: None,
    };
    let enc = AttentionEncoding::new(4, 4, 50.0)?;
    let out = causal_cross_attention(&query_times, &key_times, &data, &weights, &enc)?;

    println!("keys at {key_times:?}");
    for (q, &t) in query_times.iter().enumerate() {
        let w: Vec<String> = out.weights.row(q).iter().map(|v| format!("{v:.3}")).collect();
        let v: Vec<String> = out.values.row(q).iter().map(|v| format!("{v:+.3}")).collect();
        println!(
            "query t={t:<4} covered={:<5} weights [{}]  output [{}]",
            out.coverage[q],
            w.join(" "),
            v.join(" ")
        );
    }
    Ok(())
}
