//! Reference implementations written as plain scalar loops.
//!
//! Nothing here touches the tape. Parameters are looked up by path in a
//! [`ParamStore`], so the layout structs in `model`/`itnet` are not trusted
//! either. Used by the test suites and `itgpt check oracle`.

use crate::params::ParamStore;

pub type Matrix = Vec<Vec<f64>>;

/// Sinusoidal time encoding of one timestamp.
pub fn pe(t: f64, dim: usize, lambda: f64) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for i in 1..=dim / 2 {
        let w = lambda.powf(-2.0 * i as f64 / dim as f64);
        out[2 * (i - 1)] = (w * t).sin();
        out[2 * (i - 1) + 1] = (w * t).cos();
    }
    out
}

fn to_matrix(store: &ParamStore, name: &str) -> Option<Matrix> {
    let t = store.by_name(name)?;
    Some(match t.rank() {
        1 => vec![t.data().to_vec()],
        _ => (0..t.rows()).map(|r| t.row(r).to_vec()).collect(),
    })
}

fn param(store: &ParamStore, name: &str) -> Matrix {
    to_matrix(store, name).unwrap_or_else(|| panic!("oracle: missing parameter `{name}`"))
}

fn matmul(a: &Matrix, b: &Matrix, inner: usize, cols: usize) -> Matrix {
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|c| {
                    let mut s = 0.0;
                    for k in 0..inner {
                        s += row[k] * b[k][c];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let d_in = w.len();
    let d_out = b.len();
    let mut out = matmul(x, w, d_in, d_out);
    for row in &mut out {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
    out
}

fn relu(x: &Matrix) -> Matrix {
    x.iter()
        .map(|r| r.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleAttention {
    pub values: Matrix,
    pub weights: Matrix,
    pub coverage: Vec<bool>,
}

/// Causal cross-attention: query `i` mixes value rows `j` with `key_times[j] < query_times[i]`.
#[allow(clippy::too_many_arguments)]
pub fn attention(
    query_times: &[f64],
    key_times: &[f64],
    data: &Matrix,
    w_key: &Matrix,
    w_value: &Matrix,
    w_query: Option<&Matrix>,
    d_k: usize,
    d_o: usize,
    lambda: f64,
) -> OracleAttention {
    let d_in = w_key.len();
    let keys: Matrix = key_times
        .iter()
        .zip(data)
        .map(|(&t, x)| {
            let p = pe(t, d_k, lambda);
            (0..d_k)
                .map(|c| p[c] + (0..d_in).map(|i| x[i] * w_key[i][c]).sum::<f64>())
                .collect()
        })
        .collect();
    let values: Matrix = key_times
        .iter()
        .zip(data)
        .map(|(&t, x)| {
            let p = pe(t, d_o, lambda);
            (0..d_o)
                .map(|c| p[c] + (0..d_in).map(|i| x[i] * w_value[i][c]).sum::<f64>())
                .collect()
        })
        .collect();
    let mut out = OracleAttention {
        values: Vec::new(),
        weights: Vec::new(),
        coverage: Vec::new(),
    };
    for &tq in query_times {
        let mut q = pe(tq, d_k, lambda);
        if let Some(wq) = w_query {
            q = (0..d_k).map(|c| (0..d_k).map(|i| q[i] * wq[i][c]).sum()).collect();
        }
        let scores: Vec<Option<f64>> = key_times
            .iter()
            .zip(&keys)
            .map(|(&tk, k)| {
                (tk < tq).then(|| (0..d_k).map(|c| q[c] * k[c]).sum::<f64>() / (d_k as f64).sqrt())
            })
            .collect();
        let max = scores.iter().flatten().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut w = vec![0.0; key_times.len()];
        let covered = max > f64::NEG_INFINITY;
        if covered {
            let mut z = 0.0;
            for (j, s) in scores.iter().enumerate() {
                if let Some(s) = s {
                    w[j] = (s - max).exp();
                    z += w[j];
                }
            }
            for v in &mut w {
                *v /= z;
            }
        }
        let row = (0..d_o)
            .map(|c| (0..key_times.len()).map(|j| w[j] * values[j][c]).sum())
            .collect();
        out.values.push(row);
        out.weights.push(w);
        out.coverage.push(covered);
    }
    out
}

/// Hyperparameters the oracle cannot read off parameter shapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub d_k: usize,
    pub d_o: usize,
    pub lambda: f64,
}

fn attention_block(store: &ParamStore, prefix: &str, q: &[f64], k: &[f64], data: &Matrix, cfg: OracleConfig) -> OracleAttention {
    let wq = to_matrix(store, &format!("{prefix}.w_query"));
    attention(
        q,
        k,
        data,
        &param(store, &format!("{prefix}.w_key")),
        &param(store, &format!("{prefix}.w_value")),
        wq.as_ref(),
        cfg.d_k,
        cfg.d_o,
        cfg.lambda,
    )
}

/// Encoder block at `prefix`: per-modality attention onto `out_times`, concatenated, then the mixing layers.
pub fn itnet(store: &ParamStore, prefix: &str, modalities: &[(Vec<f64>, Matrix)], out_times: &[f64], cfg: OracleConfig) -> Matrix {
    let mut concat: Matrix = vec![Vec::new(); out_times.len()];
    for (m, (times, data)) in modalities.iter().enumerate() {
        let att = attention_block(store, &format!("{prefix}.m{m}"), out_times, times, data, cfg);
        for (row, part) in concat.iter_mut().zip(att.values) {
            row.extend(part);
        }
    }
    let mut h = concat;
    let mut j = 0;
    while let Some(w) = to_matrix(store, &format!("{prefix}.mix{j}.weight")) {
        if j > 0 {
            h = relu(&h);
        }
        let b = param(store, &format!("{prefix}.mix{j}.bias"));
        h = affine(&h, &w, &b[0]);
        j += 1;
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleChain {
    pub anchor: Matrix,
    pub embeddings: Vec<Matrix>,
    pub next_inputs: Vec<Matrix>,
    pub logits: Matrix,
}

/// Full chain in inference mode; the depth is the number of `layer{l}` prefixes present.
pub fn itgpt(
    store: &ParamStore,
    modalities: &[(Vec<f64>, Matrix)],
    anchor_times: &[f64],
    target_times: &[f64],
    cfg: OracleConfig,
) -> OracleChain {
    let d_a = param(store, "label_head.w_key").len();
    let mut embeddings: Vec<Matrix> = modalities.iter().map(|(_, x)| x.clone()).collect();
    let mut z: Matrix = vec![vec![0.0; d_a]; anchor_times.len()];
    let mut l = 0;
    while store.by_name(&format!("layer{l}.encoder.mix0.weight")).is_some() {
        let inputs: Vec<(Vec<f64>, Matrix)> = modalities
            .iter()
            .zip(&embeddings)
            .map(|((t, _), e)| (t.clone(), e.clone()))
            .collect();
        let a = relu(&itnet(store, &format!("layer{l}.encoder"), &inputs, anchor_times, cfg));
        for (zr, ar) in z.iter_mut().zip(&a) {
            for (zv, av) in zr.iter_mut().zip(ar) {
                *zv += av;
            }
        }
        for (m, (times, _)) in modalities.iter().enumerate() {
            let prefix = format!("layer{l}.decoder.m{m}");
            let att = attention_block(store, &prefix, times, anchor_times, &z, cfg);
            let w = param(store, &format!("{prefix}.out.weight"));
            let b = param(store, &format!("{prefix}.out.bias"));
            embeddings[m] = affine(&att.values, &w, &b[0]);
        }
        l += 1;
    }
    let head = attention_block(store, "label_head", target_times, anchor_times, &z, cfg);
    let mut logits = affine(
        &head.values,
        &param(store, "label_head.out.weight"),
        &param(store, "label_head.out.bias")[0],
    );
    for (row, &covered) in logits.iter_mut().zip(&head.coverage) {
        if !covered {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let next_inputs = embeddings
        .iter()
        .enumerate()
        .map(|(m, e)| {
            affine(
                e,
                &param(store, &format!("ssl_head.m{m}.weight")),
                &param(store, &format!("ssl_head.m{m}.bias"))[0],
            )
        })
        .collect();
    OracleChain {
        anchor: z,
        embeddings,
        next_inputs,
        logits,
    }
}

/// AUROC by comparing every positive with every negative.
pub fn auroc_pairwise(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut twice_wins, mut pairs) = (0u128, 0u128);
    for i in 0..scores.len() {
        if !positive[i] {
            continue;
        }
        for j in 0..scores.len() {
            if positive[j] {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                twice_wins += 2;
            } else if scores[i] == scores[j] {
                twice_wins += 1;
            }
        }
    }
    (pairs > 0).then(|| twice_wins as f64 / (2 * pairs) as f64)
}

/// Average precision by sweeping every distinct score as a threshold, high to low.
pub fn auprc_sweep(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let total_pos = positive.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return None;
    }
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_tp = 0;
    for &th in &thresholds {
        let mut tp = 0;
        let mut k = 0;
        for (s, &p) in scores.iter().zip(positive) {
            if *s >= th {
                k += 1;
                if p {
                    tp += 1;
                }
            }
        }
        if tp > prev_tp {
            ap += ((tp - prev_tp) as f64 / total_pos as f64) * (tp as f64 / k as f64);
        }
        prev_tp = tp;
    }
    Some(ap)
}

/// `counts[truth][first index of the row maximum]`.
pub fn confusion_counts(scores: &Matrix, truths: &[usize], d_c: usize) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0; d_c]; d_c];
    for (row, &y) in scores.iter().zip(truths) {
        let mut best = 0;
        for c in 1..d_c {
            if row[c] > row[best] {
                best = c;
            }
        }
        counts[y][best] += 1;
    }
    counts
}

/// `(tp, fp, fn, tn)` with "predicted positive" meaning `score >= threshold`.
pub fn threshold_counts(scores: &[f64], positive: &[bool], threshold: f64) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (&s, &p) in scores.iter().zip(positive) {
        let predicted = s >= threshold;
        if predicted && p {
            c.0 += 1;
        } else if predicted {
            c.1 += 1;
        } else if p {
            c.2 += 1;
        } else {
            c.3 += 1;
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pe_matches_closed_form() {
        let p = pe(2.0, 4, 100.0);
        assert_eq!(p[0], (2.0 * 100f64.powf(-0.5)).sin());
        assert_eq!(p[3], (2.0 * 100f64.powf(-1.0)).cos());
    }

    #[test]
    fn metric_oracles_hand_cases() {
        assert!((auprc_sweep(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(auroc_pairwise(&[0.9, 0.8, 0.7], &[true, false, true]), Some(0.5));
        assert_eq!(auroc_pairwise(&[0.1], &[true]), None);
        assert_eq!(threshold_counts(&[0.9, 0.1, 0.6], &[true, true, false], 0.5), (1, 1, 1, 0));
        assert_eq!(confusion_counts(&vec![vec![0.5, 0.5]], &[1], 2), vec![vec![0, 0], vec![1, 0]]);
    }
}
