//! Strictly-causal cross-attention between two timelines.
//!
//! Queries are the encodings of the query timestamps. Keys and values are
//! linear maps of the timestamped data plus the encodings of their own
//! timestamps. A key contributes to a query only if its timestamp is
//! strictly earlier than the query's; a query with no such key produces a
//! zero row and is marked uncovered.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::time_encoding::{check_sorted, encode_timeline, PeConfig};

/// Trainable maps of one attention block, as plain tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    /// `d_in × d_k`
    pub w_key: Tensor,
    /// `d_in × d_o`
    pub w_value: Tensor,
    /// optional `d_k × d_k` map applied to the query encodings
    pub w_query: Option<Tensor>,
}

/// The same maps registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w_key: Var,
    pub w_value: Var,
    pub w_query: Option<Var>,
}

/// Encodings used for keys/queries (`d_k`) and for values (`d_o`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionEncoding {
    pub key: PeConfig,
    pub value: PeConfig,
}

impl AttentionEncoding {
    pub fn new(d_k: usize, d_o: usize, lambda: f64) -> Result<Self> {
        Ok(AttentionEncoding {
            key: PeConfig::new(d_k, lambda)?,
            value: PeConfig::new(d_o, lambda)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// `L_q × d_o`
    pub values: Tensor,
    /// `L_q × L_kv`; covered rows sum to one, uncovered rows are zero.
    pub weights: Tensor,
    /// Whether each query has at least one strictly earlier key.
    pub coverage: Vec<bool>,
}

/// Tape-level result of [`attend`].
#[derive(Debug, Clone)]
pub struct Attended {
    pub values: Var,
    pub weights: Var,
    pub coverage: Vec<bool>,
}

/// `allowed[q][k] = key_times[k] < query_times[q]`, row-major.
pub fn causal_mask(query_times: &[f64], key_times: &[f64]) -> (Vec<bool>, Vec<bool>) {
    let mut allowed = Vec::with_capacity(query_times.len() * key_times.len());
    let mut coverage = Vec::with_capacity(query_times.len());
    for &tq in query_times {
        let mut any = false;
        for &tk in key_times {
            let ok = tk < tq;
            any |= ok;
            allowed.push(ok);
        }
        coverage.push(any);
    }
    (allowed, coverage)
}

/// Differentiable causal cross-attention.
///
/// `key_data` is `L_kv × d_in`; both timelines must be non-decreasing.
pub fn attend(
    tape: &mut Tape,
    query_times: &[f64],
    key_times: &[f64],
    key_data: Var,
    params: &AttentionVars,
    enc: &AttentionEncoding,
) -> Result<Attended> {
    check_sorted(query_times, "query timeline")?;
    check_sorted(key_times, "key timeline")?;
    let data_shape = tape.shape(key_data).to_vec();
    if data_shape.len() != 2 || data_shape[0] != key_times.len() {
        return Err(Error::Invalid(format!(
            "key data shape {data_shape:?} does not match {} key timestamps",
            key_times.len()
        )));
    }
    let d_k = enc.key.dim;
    let d_o = enc.value.dim;
    if tape.shape(params.w_key) != [data_shape[1], d_k] {
        return Err(Error::Invalid(format!(
            "key map is {:?}, expected [{}, {d_k}]",
            tape.shape(params.w_key),
            data_shape[1]
        )));
    }
    if tape.shape(params.w_value) != [data_shape[1], d_o] {
        return Err(Error::Invalid(format!(
            "value map is {:?}, expected [{}, {d_o}]",
            tape.shape(params.w_value),
            data_shape[1]
        )));
    }

    let key_pe = tape.constant(encode_timeline(key_times, &enc.key)?);
    let value_pe = tape.constant(encode_timeline(key_times, &enc.value)?);
    let mut queries = tape.constant(encode_timeline(query_times, &enc.key)?);
    if let Some(wq) = params.w_query {
        queries = tape.matmul(queries, wq)?;
    }

    let projected_keys = tape.matmul(key_data, params.w_key)?;
    let keys = tape.add(projected_keys, key_pe)?;
    let projected_values = tape.matmul(key_data, params.w_value)?;
    let values = tape.add(projected_values, value_pe)?;

    let raw_scores = tape.matmul_nt(queries, keys)?;
    let scores = tape.scale(raw_scores, 1.0 / (d_k as f64).sqrt())?;
    let (allowed, coverage) = causal_mask(query_times, key_times);
    let weights = tape.masked_softmax(scores, &allowed)?;
    let out = tape.matmul(weights, values)?;
    Ok(Attended {
        values: out,
        weights,
        coverage,
    })
}

/// Causal cross-attention on plain tensors.
pub fn causal_cross_attention(
    query_times: &[f64],
    key_times: &[f64],
    key_data: &Tensor,
    params: &AttentionWeights,
    enc: &AttentionEncoding,
) -> Result<AttentionOutput> {
    if !key_data.all_finite() {
        return Err(Error::Invalid("key data contains non-finite values".into()));
    }
    let mut tape = Tape::new();
    let data = tape.constant(key_data.clone());
    let vars = AttentionVars {
        w_key: tape.constant(params.w_key.clone()),
        w_value: tape.constant(params.w_value.clone()),
        w_query: params.w_query.as_ref().map(|w| tape.constant(w.clone())),
    };
    let out = attend(&mut tape, query_times, key_times, data, &vars, enc)?;
    Ok(AttentionOutput {
        values: tape.value(out.values).clone(),
        weights: tape.value(out.weights).clone(),
        coverage: out.coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(d_k: usize, d_o: usize) -> AttentionEncoding {
        AttentionEncoding::new(d_k, d_o, 100.0).unwrap()
    }

    fn weights(d_in: usize, d_k: usize, d_o: usize, seed: u64) -> AttentionWeights {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        AttentionWeights {
            w_key: Tensor::matrix(d_in, d_k, (0..d_in * d_k).map(|_| next()).collect()).unwrap(),
            w_value: Tensor::matrix(d_in, d_o, (0..d_in * d_o).map(|_| next()).collect()).unwrap(),
            w_query: None,
        }
    }

    #[test]
    fn single_past_key_gets_full_weight() {
        let w = weights(2, 4, 4, 1);
        let data = Tensor::matrix(1, 2, vec![3.0, -7.0]).unwrap();
        let out = causal_cross_attention(&[1.0], &[0.0], &data, &w, &enc(4, 4)).unwrap();
        assert_eq!(out.weights.data(), &[1.0]);
        assert_eq!(out.coverage, vec![true]);
    }

    #[test]
    fn identical_keys_share_weight_equally() {
        let w = weights(2, 4, 4, 2);
        let data = Tensor::matrix(2, 2, vec![0.3, 0.4, 0.3, 0.4]).unwrap();
        let out = causal_cross_attention(&[2.0], &[1.0, 1.0], &data, &w, &enc(4, 4)).unwrap();
        assert_eq!(out.weights.data(), &[0.5, 0.5]);
    }

    #[test]
    fn key_at_query_time_is_masked() {
        let w = weights(1, 4, 2, 3);
        let data = Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap();
        let out = causal_cross_attention(&[1.0, 1.5], &[0.5, 1.0], &data, &w, &enc(4, 2)).unwrap();
        assert_eq!(out.weights.row(0), &[1.0, 0.0]);
        assert!(out.weights.row(1).iter().all(|&v| v > 0.0));
    }

    #[test]
    fn uncovered_queries_output_zero() {
        let w = weights(1, 4, 4, 4);
        let data = Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap();
        let out = causal_cross_attention(&[0.0, 0.5, 3.0], &[0.5, 1.0], &data, &w, &enc(4, 4)).unwrap();
        assert_eq!(out.coverage, vec![false, false, true]);
        assert!(out.values.row(0).iter().chain(out.values.row(1)).all(|&v| v == 0.0));
        assert!(out.weights.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_key_set() {
        let w = weights(3, 4, 2, 5);
        let data = Tensor::zeros(&[0, 3]);
        let out = causal_cross_attention(&[1.0, 2.0], &[], &data, &w, &enc(4, 2)).unwrap();
        assert_eq!(out.values, Tensor::zeros(&[2, 2]));
        assert_eq!(out.weights.shape(), &[2, 0]);
        assert_eq!(out.coverage, vec![false, false]);
    }

    #[test]
    fn different_key_and_value_widths() {
        let w = weights(2, 4, 6, 6);
        let data = Tensor::matrix(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let out = causal_cross_attention(&[5.0], &[1.0, 2.0, 3.0], &data, &w, &enc(4, 6)).unwrap();
        assert_eq!(out.values.shape(), &[1, 6]);
    }

    #[test]
    fn errors() {
        let w = weights(2, 4, 4, 7);
        let data = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        let e = enc(4, 4);
        assert!(causal_cross_attention(&[1.0], &[2.0, 1.0], &data, &w, &e).is_err());
        assert!(causal_cross_attention(&[2.0, 1.0], &[0.0, 1.0], &data, &w, &e).is_err());
        assert!(causal_cross_attention(&[1.0], &[0.0], &data, &w, &e).is_err());
        let nan = Tensor::matrix(2, 2, vec![0.0, f64::NAN, 0.0, 0.0]).unwrap();
        assert!(causal_cross_attention(&[1.0], &[0.0, 0.5], &nan, &w, &e).is_err());
    }
}
