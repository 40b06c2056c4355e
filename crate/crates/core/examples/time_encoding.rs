//! Sinusoidal encoding of real-valued timestamps, and the identity that
//! makes it useful for attention: the dot product of two encodings depends
//! only on the time difference.

use itgpt::time_encoding::{encode_time, encode_timeline, PeConfig};

fn main() -> itgpt::Result<()> {
    let cfg = PeConfig::new(8, 100.0)?;
    println!("frequencies: {:?}", cfg.frequencies());

    let timeline = encode_timeline(&[0.0, 0.5, 3.25, 10.0], &cfg)?;
    for r in 0..timeline.rows() {
        let row: Vec<String> = timeline.row(r).iter().map(|v| format!("{v:+.3}")).collect();
        println!("p({:>5}) = [{}]", [0.0, 0.5, 3.25, 10.0][r], row.join(" "));
    }

    // p(t)·p(t') = Σ cos(ω_i (t − t')), so shifting both times leaves it unchanged.
    for (t, u) in [(1.0, 4.0), (101.0, 104.0), (-7.5, -4.5)] {
        let p = encode_time(t, &cfg)?;
        let q = encode_time(u, &cfg)?;
        let dot: f64 = p.data().iter().zip(q.data()).map(|(a, b)| a * b).sum();
        let closed: f64 = cfg.frequencies().iter().map(|w| (w * (t - u)).cos()).sum();
        println!("t={t:>6} t'={u:>6}  dot {dot:.12}  closed form {closed:.12}");
    }
    Ok(())
}
